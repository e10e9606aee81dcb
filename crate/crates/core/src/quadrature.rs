//! Globally adaptive 15-point Gauss–Kronrod quadrature.

use crate::error::{Error, Result};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Integrates `f` over `[a, b]` to `max(abs_tol, rel_tol * |I|)`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> Result<f64> {
    const MAX_SEGMENTS: usize = 5000;
    let (v, e) = gk15(&mut f, a, b);
    if !v.is_finite() {
        return Err(Error::QuadratureFailure(format!("non-finite integrand on [{a}, {b}]")));
    }
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value: v, error: e });
    let mut total = v;
    let mut total_err = e;
    while total_err > abs_tol.max(rel_tol * total.abs()) {
        if heap.len() >= MAX_SEGMENTS {
            return Err(Error::QuadratureFailure(format!(
                "tolerance not reached: estimate {total}, error {total_err}"
            )));
        }
        let seg = heap.pop().expect("non-empty");
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // interval cannot be split further in floating point
            heap.push(seg);
            break;
        }
        let (v1, e1) = gk15(&mut f, seg.a, mid);
        let (v2, e2) = gk15(&mut f, mid, seg.b);
        if !(v1.is_finite() && v2.is_finite()) {
            return Err(Error::QuadratureFailure("non-finite integrand".into()));
        }
        total += v1 + v2 - seg.value;
        total_err += e1 + e2 - seg.error;
        heap.push(Segment { a: seg.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: seg.b, value: v2, error: e2 });
    }
    // re-sum to shed accumulated cancellation from the running updates
    Ok(heap.iter().map(|s| s.value).sum())
}

/// Returns `log ∫ exp(log_f(v)) dv` over the real line for a unimodal-ish,
/// rapidly decaying log-integrand. The effective support is located by a
/// coarse scan over `[-80, 400]`.
pub fn log_integrate_exp<F: FnMut(f64) -> f64>(mut log_f: F, rel_tol: f64) -> Result<f64> {
    let step = 0.25;
    let (lo, hi) = (-80.0, 400.0);
    let n = ((hi - lo) / step) as usize;
    let mut best = f64::NEG_INFINITY;
    let mut best_v = 0.0;
    let grid: Vec<(f64, f64)> = (0..=n)
        .map(|k| {
            let v = lo + k as f64 * step;
            let l = log_f(v);
            if l > best {
                best = l;
                best_v = v;
            }
            (v, l)
        })
        .collect();
    if !best.is_finite() {
        return Err(Error::QuadratureFailure("integrand vanishes on the scan grid".into()));
    }
    let cutoff = best - 60.0;
    let first = grid.iter().position(|&(_, l)| l > cutoff).unwrap_or(0);
    let last = grid.iter().rposition(|&(_, l)| l > cutoff).unwrap_or(n);
    let a = grid[first.saturating_sub(2)].0;
    let b = grid[(last + 2).min(n)].0;
    if first <= 1 || last + 2 >= n {
        return Err(Error::QuadratureFailure(format!(
            "integrand mass reaches the scan boundary (mode near v = {best_v})"
        )));
    }
    // split at the mode so the peak is resolved from both sides
    let shifted = |v: f64| (log_f(v) - best).exp();
    let mut shifted = shifted;
    let left = integrate(&mut shifted, a, best_v, rel_tol, 0.0)?;
    let right = integrate(&mut shifted, best_v, b, rel_tol, 0.0)?;
    Ok(best + (left + right).ln())
}
