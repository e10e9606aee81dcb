//! Small numerical and sampling helpers shared by the samplers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};

pub use statrs::function::gamma::ln_gamma;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// log Φ(z), accurate far into the lower tail.
pub fn log_ndtr(z: f64) -> f64 {
    if z > 6.0 {
        // Φ(z) = 1 − Q(z), Q tiny
        -0.5 * erfc(z / SQRT_2)
    } else if z > -20.0 {
        (0.5 * erfc(-z / SQRT_2)).ln()
    } else {
        // asymptotic Mills-ratio expansion
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        -0.5 * z2 - (-z).ln() - 0.5 * LN_2PI + series.ln()
    }
}

/// Upper tail Q(z) = 1 − Φ(z).
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// Φ(z).
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Inverse of the upper tail: returns z with Q(z) = p.
pub fn normal_isf(p: f64) -> f64 {
    SQRT_2 * erfc_inv(2.0 * p)
}

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Skew-normal log density of `loc + psi * eta + sqrt(sigma2) * eps` with
/// `eta` standard half-normal: scale `sqrt(sigma2 + psi^2)`, slant `psi / sigma`.
pub fn skew_normal_logpdf(y: f64, loc: f64, psi: f64, sigma2: f64) -> f64 {
    let omega2 = sigma2 + psi * psi;
    let omega = omega2.sqrt();
    let z = (y - loc) / omega;
    let slant = psi / sigma2.sqrt();
    std::f64::consts::LN_2 - 0.5 * (LN_2PI + omega2.ln()) - 0.5 * z * z + log_ndtr(slant * z)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Draws an index with probability proportional to `exp(log_weights)`,
/// normalizing with a max shift.
pub fn sample_log_weights<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> usize {
    let m = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    debug_assert!(m.is_finite(), "all weights vanish: {log_weights:?}");
    let mut total = 0.0;
    let w: Vec<f64> = log_weights
        .iter()
        .map(|&l| {
            let e = (l - m).exp();
            total += e;
            e
        })
        .collect();
    let mut target = rng.gen::<f64>() * total;
    for (j, &wj) in w.iter().enumerate() {
        if target < wj {
            return j;
        }
        target -= wj;
    }
    // rounding: fall back to the last positive weight
    w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Standard normal truncated to `[lower, ∞)`.
///
/// Inverse-CDF on the upper tail for `lower <= 5`, exponential-proposal
/// rejection (optimal rate) beyond.
pub fn std_normal_lower_truncated<R: Rng + ?Sized>(lower: f64, rng: &mut R) -> f64 {
    if lower <= 5.0 {
        let tail = normal_sf(lower);
        loop {
            let u: f64 = rng.gen();
            let p = tail * (1.0 - u); // in (0, tail]
            let z = normal_isf(p);
            if z.is_finite() {
                return z.max(lower);
            }
        }
    } else {
        let rate = 0.5 * (lower + (lower * lower + 4.0).sqrt());
        loop {
            let e: f64 = Exp1.sample(rng);
            let z = lower + e / rate;
            let accept = (-(z - rate).powi(2) / 2.0).exp();
            if rng.gen::<f64>() <= accept {
                return z;
            }
        }
    }
}

/// N(mean, var) truncated to `[lower, ∞)`.
pub fn truncated_normal_lower<R: Rng + ?Sized>(mean: f64, var: f64, lower: f64, rng: &mut R) -> f64 {
    let sd = var.sqrt();
    let z = std_normal_lower_truncated((lower - mean) / sd, rng);
    (mean + sd * z).max(lower)
}

/// Mean of N(mean, var) truncated to `[lower, ∞)`.
pub fn truncated_normal_lower_mean(mean: f64, var: f64, lower: f64) -> f64 {
    let sd = var.sqrt();
    let a = (lower - mean) / sd;
    // inverse Mills ratio in log space
    let log_phi = -0.5 * a * a - 0.5 * LN_2PI;
    let log_q = log_ndtr(-a);
    mean + sd * (log_phi - log_q).exp()
}

/// Inverse-gamma draw with shape `a` and scale `b` (mean `b / (a - 1)`).
pub fn inverse_gamma<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let g: f64 = Gamma::new(a, 1.0).expect("positive shape").sample(rng);
    b / g
}

/// Draws from N(mean, cov) given the lower Cholesky factor of `cov`.
pub fn mvn_from_chol<R: Rng + ?Sized>(mean: &DVector<f64>, chol_lower: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| std_normal(rng));
    mean + chol_lower * z
}

/// Draws from N(P⁻¹ b, scale · P⁻¹) given precision `P` and vector `b`,
/// using only Cholesky solves. Returns `None` when `P` is not positive definite.
pub fn mvn_from_precision<R: Rng + ?Sized>(
    precision: &DMatrix<f64>,
    rhs: &DVector<f64>,
    scale: f64,
    rng: &mut R,
) -> Option<DVector<f64>> {
    let chol = precision.clone().cholesky()?;
    let mean = chol.solve(rhs);
    let z = DVector::from_fn(rhs.len(), |_, _| std_normal(rng));
    // x = mean + sqrt(scale) L^{-T} z has covariance scale (L L^T)^{-1}
    let lt = chol.l().transpose();
    let w = lt.solve_upper_triangular(&z)?;
    Some(mean + w * scale.sqrt())
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
