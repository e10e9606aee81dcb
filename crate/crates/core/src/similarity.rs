//! Cluster compactness and the similarity functions built on it.
//!
//! Compactness of a block is the total mixed distance from its members to
//! their order-one Fréchet mean. The distance splits additively into a
//! Mahalanobis part and a normalized Hamming part, so the Fréchet mean splits
//! too: a geometric median of the (whitened) continuous rows and a
//! column-wise majority vote of the binary rows.

use crate::covariates::{euclidean, CovariateRow, MixedCovariateMatrix};
use crate::error::{Error, Result};
use rand::seq::index::sample as sample_indices;
use rand::Rng;

pub const MEDIAN_TOL: f64 = 1e-9;
pub const MEDIAN_MAX_ITER: usize = 10_000;
const COINCIDENT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityFamily {
    /// `exp(-t^α)`
    GA,
    /// `exp(-α log(1+t))`
    GB,
    /// `exp(-t log(1+t))`
    GC,
    /// constant 1: no covariate information in the prior
    One,
}

impl std::str::FromStr for SimilarityFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ga" | "g_a" | "a" => Ok(Self::GA),
            "gb" | "g_b" | "b" => Ok(Self::GB),
            "gc" | "g_c" | "c" => Ok(Self::GC),
            "one" | "1" | "none" => Ok(Self::One),
            other => Err(Error::config("similarity.family", format!("unknown family `{other}`"))),
        }
    }
}

impl std::fmt::Display for SimilarityFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::GA => "gA",
            Self::GB => "gB",
            Self::GC => "gC",
            Self::One => "one",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityConfig {
    pub family: SimilarityFamily,
    /// temperature applied to compactness, `t = λ D`
    pub lambda: f64,
    /// power for `GA` and `GB`
    pub alpha: f64,
}

impl SimilarityConfig {
    pub fn new(family: SimilarityFamily, lambda: f64, alpha: f64) -> Result<Self> {
        let cfg = SimilarityConfig { family, lambda, alpha };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn one() -> Self {
        SimilarityConfig {
            family: SimilarityFamily::One,
            lambda: 1.0,
            alpha: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.family == SimilarityFamily::One {
            return Ok(());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("similarity.lambda", "must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("similarity.alpha", "must be positive"));
        }
        Ok(())
    }

    pub fn is_constant(&self) -> bool {
        self.family == SimilarityFamily::One
    }
}

/// `log g(D)`. Always `<= 0`, zero at `D = 0`.
pub fn log_similarity(d: f64, cfg: &SimilarityConfig) -> f64 {
    let t = cfg.lambda * d;
    match cfg.family {
        SimilarityFamily::One => 0.0,
        SimilarityFamily::GA => -t.powf(cfg.alpha),
        SimilarityFamily::GB => -cfg.alpha * t.ln_1p(),
        SimilarityFamily::GC => -t * t.ln_1p(),
    }
}

/// `g(D)` in `(0, 1]`.
pub fn similarity(d: f64, cfg: &SimilarityConfig) -> f64 {
    log_similarity(d, cfg).exp()
}

/// Centroid and compactness of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterGeometry {
    pub centroid_c: Vec<f64>,
    pub centroid_b: Vec<u8>,
    pub d_total: f64,
}

/// Sufficient summary of a block for compactness updates: the whitened
/// geometric median, binary column counts and the compactness itself.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockCompactness {
    pub size: usize,
    pub center: Vec<f64>,
    pub ones: Vec<usize>,
    pub d_total: f64,
}

impl BlockCompactness {
    pub fn empty(x: &MixedCovariateMatrix) -> Self {
        BlockCompactness {
            size: 0,
            center: vec![0.0; x.n_continuous()],
            ones: vec![0; x.n_binary()],
            d_total: 0.0,
        }
    }

    /// Compactness of `members` plus the optional `extra` item. `warm` seeds
    /// the geometric-median iteration.
    pub fn compute(
        x: &MixedCovariateMatrix,
        members: &[usize],
        extra: Option<usize>,
        warm: Option<&[f64]>,
    ) -> Result<Self> {
        let size = members.len() + extra.is_some() as usize;
        if size == 0 {
            return Ok(Self::empty(x));
        }
        let mut ones = vec![0usize; x.n_binary()];
        for &i in members.iter().chain(extra.iter()) {
            for (c, &b) in x.binary_row(i).iter().enumerate() {
                ones[c] += b as usize;
            }
        }
        let mismatches: usize = ones.iter().map(|&o| if 2 * o > size { size - o } else { o }).sum();
        let (wc, wb) = x.weights();
        let binary_part = if x.n_binary() > 0 {
            wb * mismatches as f64 / x.n_binary() as f64
        } else {
            0.0
        };
        let (center, sum_c) = if x.n_continuous() == 0 || size == 1 {
            let c = match (members.first(), extra) {
                (Some(&i), _) | (None, Some(i)) => x.whitened_row(i).to_vec(),
                (None, None) => unreachable!(),
            };
            (c, 0.0)
        } else {
            let points: Vec<&[f64]> = members.iter().chain(extra.iter()).map(|&i| x.whitened_row(i)).collect();
            geometric_median(&points, warm, MEDIAN_TOL, MEDIAN_MAX_ITER)?
        };
        Ok(BlockCompactness {
            size,
            center,
            ones,
            d_total: wc * sum_c + binary_part,
        })
    }
}

/// Geometric median of `points` (Euclidean). Returns the median and the sum
/// of distances to it.
///
/// Newton iteration with backtracking on the convex distance sum, falling
/// back to the Weiszfeld step (with the Vardi–Zhang modification at data
/// points) whenever Newton fails to descend. Near a data point that point is
/// tested for optimality directly, which settles medians sitting on data
/// points exactly. Stops once a step is shorter than `tol`.
pub fn geometric_median(points: &[&[f64]], warm: Option<&[f64]>, tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64)> {
    let n = points.len();
    if n == 0 {
        return Err(Error::EmptySet);
    }
    let dim = points[0].len();
    if n == 1 || dim == 0 {
        return Ok((points[0].to_vec(), 0.0));
    }
    if dim == 1 {
        let mut v: Vec<f64> = points.iter().map(|p| p[0]).collect();
        v.sort_by(f64::total_cmp);
        let med = v[(n - 1) / 2];
        let s = v.iter().map(|x| (x - med).abs()).sum();
        return Ok((vec![med], s));
    }
    let objective = |y: &[f64]| points.iter().map(|p| euclidean(p, y)).sum::<f64>();
    let mut y: Vec<f64> = match warm {
        Some(w) if w.len() == dim && w.iter().all(|v| v.is_finite()) => w.to_vec(),
        _ => {
            let mut m = vec![0.0; dim];
            for p in points {
                for (a, b) in m.iter_mut().zip(p.iter()) {
                    *a += b;
                }
            }
            m.iter_mut().for_each(|a| *a /= n as f64);
            m
        }
    };
    let mut dists = vec![0.0; n];
    let mut grad = vec![0.0; dim];
    let mut weiszfeld = vec![0.0; dim];
    let mut hess = vec![0.0; dim * dim];
    let mut diff = vec![0.0; dim];
    let mut step = vec![0.0; dim];
    let mut trial = vec![0.0; dim];
    let mut trial_dists = vec![0.0; n];
    let mut last_checked = usize::MAX;
    let mut last_snapped = usize::MAX;
    // distances (and their sum) at `y` carried over from an accepted line search
    let mut cached: Option<f64> = None;
    // a Newton step this short leaves an error of order `tol` behind it
    let newton_final = tol.sqrt();
    for _ in 0..max_iter {
        let mut f = match cached.take() {
            Some(f) => f,
            None => {
                for (d, p) in dists.iter_mut().zip(points) {
                    *d = euclidean(p, &y);
                }
                dists.iter().sum()
            }
        };
        let mut k = 0;
        for i in 1..n {
            if dists[i] < dists[k] {
                k = i;
            }
        }
        if dists[k] < 1e-2 * f / n as f64 && k != last_checked {
            last_checked = k;
            if let Some(s) = data_point_optimal(points, k, &mut grad) {
                return Ok((points[k].to_vec(), s));
            }
        }
        if dists[k] >= COINCIDENT && dists[k] < 1e-7 * f / n as f64 && k != last_snapped {
            last_snapped = k;
            // the objective is not smooth here and the point is not optimal:
            // snap onto it so the modified Weiszfeld step moves off cleanly
            y.copy_from_slice(points[k]);
            f = 0.0;
            for (i, p) in points.iter().enumerate() {
                dists[i] = euclidean(p, &y);
                f += dists[i];
            }
        }
        // gradient (descent direction sign: grad = Σ (p − y)/d), upper
        // triangle of the Hessian and the Weiszfeld map over non-coincident points
        grad.fill(0.0);
        weiszfeld.fill(0.0);
        hess.fill(0.0);
        let mut wsum = 0.0;
        let mut coincident = 0usize;
        for (p, &d) in points.iter().zip(&dists) {
            if d < COINCIDENT {
                coincident += 1;
                continue;
            }
            let w = 1.0 / d;
            let w3 = w * w * w;
            wsum += w;
            for (((df, g), wz), (&pa, &ya)) in diff.iter_mut().zip(grad.iter_mut()).zip(weiszfeld.iter_mut()).zip(p.iter().zip(&y)) {
                *df = pa - ya;
                *g += *df * w;
                *wz += w * pa;
            }
            for (a, row) in hess.chunks_exact_mut(dim).enumerate() {
                let da = w3 * diff[a];
                row[a] += w;
                for (h, &db) in row[a..].iter_mut().zip(&diff[a..]) {
                    *h -= da * db;
                }
            }
        }
        if wsum == 0.0 {
            return Ok((y, 0.0));
        }
        weiszfeld.iter_mut().for_each(|a| *a /= wsum);
        let pull = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if coincident > 0 {
            let eta = coincident as f64;
            if pull <= eta {
                return Ok((y, f));
            }
            let mix = eta / pull;
            for c in 0..dim {
                weiszfeld[c] = (1.0 - mix) * weiszfeld[c] + mix * y[c];
            }
        }
        if coincident == 0 && pull <= 1e-13 * n as f64 {
            // stationary: covers flat valleys of collinear data
            return Ok((y, f));
        }
        let mut next: Option<(f64, f64)> = None;
        if coincident == 0 {
            let ridge = 1e-12 * (0..dim).map(|a| hess[a * dim + a]).sum::<f64>();
            for a in 0..dim {
                hess[a * dim + a] += ridge;
            }
            step.copy_from_slice(&grad);
            if cholesky_solve_upper(&mut hess, dim, &mut step) {
                let step_len = step.iter().map(|v| v * v).sum::<f64>().sqrt();
                if step_len < newton_final {
                    // f(y + s) = f(y) − ½ gᵀs up to third order
                    let descent: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
                    for c in 0..dim {
                        y[c] += step[c];
                    }
                    return Ok((y, f - 0.5 * descent));
                }
                let mut t = 1.0;
                for _ in 0..30 {
                    for c in 0..dim {
                        trial[c] = y[c] + t * step[c];
                    }
                    for (d, p) in trial_dists.iter_mut().zip(points) {
                        *d = euclidean(p, &trial);
                    }
                    let ft: f64 = trial_dists.iter().sum();
                    if ft <= f * (1.0 + 4.0 * f64::EPSILON) {
                        next = Some((ft, t * step_len));
                        break;
                    }
                    t *= 0.5;
                }
            }
        }
        let moved = match next {
            Some((ft, len)) => {
                std::mem::swap(&mut y, &mut trial);
                std::mem::swap(&mut dists, &mut trial_dists);
                cached = Some(ft);
                len
            }
            None => {
                let len = euclidean(&weiszfeld, &y);
                std::mem::swap(&mut y, &mut weiszfeld);
                len
            }
        };
        if moved < tol {
            let s = cached.unwrap_or_else(|| objective(&y));
            return Ok((y, s));
        }
    }
    Err(Error::NonConvergence { iterations: max_iter })
}

/// Solves `H x = b` in place for symmetric positive definite `H` given by its
/// upper triangle (row-major, `dim × dim`). `h` is overwritten by the factor.
/// Returns false when `H` is not numerically positive definite.
fn cholesky_solve_upper(h: &mut [f64], dim: usize, b: &mut [f64]) -> bool {
    // H = Rᵀ R with R upper triangular, stored in the upper triangle of `h`
    for i in 0..dim {
        let mut d = h[i * dim + i];
        for k in 0..i {
            d -= h[k * dim + i] * h[k * dim + i];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        h[i * dim + i] = d;
        for j in i + 1..dim {
            let mut v = h[i * dim + j];
            for k in 0..i {
                v -= h[k * dim + i] * h[k * dim + j];
            }
            h[i * dim + j] = v / d;
        }
    }
    for i in 0..dim {
        let mut v = b[i];
        for k in 0..i {
            v -= h[k * dim + i] * b[k];
        }
        b[i] = v / h[i * dim + i];
    }
    for i in (0..dim).rev() {
        let mut v = b[i];
        for k in i + 1..dim {
            v -= h[i * dim + k] * b[k];
        }
        b[i] = v / h[i * dim + i];
    }
    true
}

/// Returns the distance sum at `points[k]` if that point is a geometric
/// median: the pull of the other points has norm at most the multiplicity.
fn data_point_optimal(points: &[&[f64]], k: usize, grad: &mut [f64]) -> Option<f64> {
    let xk = points[k];
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut mult = 0usize;
    let mut sum = 0.0;
    for p in points {
        let d = euclidean(p, xk);
        if d < COINCIDENT {
            mult += 1;
            continue;
        }
        sum += d;
        for c in 0..grad.len() {
            grad[c] += (p[c] - xk[c]) / d;
        }
    }
    let r = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    (r <= mult as f64).then_some(sum)
}

/// Order-one Fréchet mean of a set of rows under `ctx`'s metric: geometric
/// median of the continuous parts and majority vote (ties to 0) of the
/// binary parts.
pub fn frechet_centroid(rows: &[CovariateRow<'_>], ctx: &MixedCovariateMatrix) -> Result<(Vec<f64>, Vec<u8>)> {
    if rows.is_empty() {
        return Err(Error::EmptySet);
    }
    let whitened = rows.iter().map(|r| ctx.whiten(r.continuous)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = whitened.iter().map(Vec::as_slice).collect();
    let (center_w, _) = geometric_median(&refs, None, MEDIAN_TOL, MEDIAN_MAX_ITER)?;
    let m_b = ctx.n_binary();
    let mut ones = vec![0usize; m_b];
    for r in rows {
        if r.binary.len() != m_b {
            return Err(Error::DimensionMismatch {
                expected: m_b,
                found: r.binary.len(),
            });
        }
        for (c, &b) in r.binary.iter().enumerate() {
            ones[c] += b as usize;
        }
    }
    let centroid_b = ones.iter().map(|&o| (2 * o > rows.len()) as u8).collect();
    Ok((unwhiten(ctx, &center_w)?, centroid_b))
}

fn unwhiten(ctx: &MixedCovariateMatrix, w: &[f64]) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Ok(Vec::new());
    }
    // whitened = Lᵀ raw, with Lᵀ upper triangular
    let chol = ctx
        .metric()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("metric not positive definite".into()))?;
    let lt = chol.l().transpose();
    let v = nalgebra::DVector::from_column_slice(w);
    let raw = lt
        .solve_upper_triangular(&v)
        .ok_or_else(|| Error::NumericalFailure("singular whitener".into()))?;
    Ok(raw.iter().copied().collect())
}

/// Centroid and compactness `D = Σ d(x_i, c)` of a block of items.
pub fn compactness(block: &[usize], x: &MixedCovariateMatrix) -> Result<ClusterGeometry> {
    if block.is_empty() {
        return Err(Error::EmptySet);
    }
    let summary = BlockCompactness::compute(x, block, None, None)?;
    let centroid_b = summary.ones.iter().map(|&o| (2 * o > block.len()) as u8).collect();
    Ok(ClusterGeometry {
        centroid_c: unwhiten(x, &summary.center)?,
        centroid_b,
        d_total: summary.d_total,
    })
}

/// `log g(D_{A ∪ {i}}) − log g(D_A)`; zero for an empty block.
pub fn log_similarity_ratio(block: &[usize], new_item: usize, x: &MixedCovariateMatrix, cfg: &SimilarityConfig) -> Result<f64> {
    if cfg.is_constant() || block.is_empty() {
        return Ok(0.0);
    }
    let before = BlockCompactness::compute(x, block, None, None)?;
    let after = BlockCompactness::compute(x, block, Some(new_item), Some(&before.center))?;
    Ok(log_similarity(after.d_total, cfg) - log_similarity(before.d_total, cfg))
}

/// Outcome of the λ heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaCalibration {
    pub lambda: f64,
    /// average compactness increment from adding one item
    pub eps_hat: f64,
    pub records: usize,
}

/// Monte Carlo λ heuristic: average the compactness increment from adding a
/// random outside item to a random block, over block sizes `2..n-1` and
/// `n_mc` sweeps, then set `λ = eps_star / ε̂`.
pub fn calibrate_lambda<R: Rng + ?Sized>(x: &MixedCovariateMatrix, eps_star: f64, n_mc: usize, rng: &mut R) -> Result<LambdaCalibration> {
    let n = x.n_items();
    if n < 3 {
        return Err(Error::SizeMismatch { expected: 3, found: n });
    }
    if !(eps_star > 0.0) {
        return Err(Error::config("similarity.eps_star", "must be positive"));
    }
    if n_mc == 0 {
        return Err(Error::config("similarity.n_mc", "must be at least 1"));
    }
    let mut total = 0.0;
    let mut records = 0usize;
    for _ in 0..n_mc {
        for size in 2..n {
            let picked = sample_indices(rng, n, size + 1).into_vec();
            let (block, extra) = (&picked[..size], picked[size]);
            let before = BlockCompactness::compute(x, block, None, None)?;
            let after = BlockCompactness::compute(x, block, Some(extra), Some(&before.center))?;
            total += after.d_total - before.d_total;
            records += 1;
        }
    }
    let eps_hat = total / records as f64;
    if eps_hat <= 1e-12 {
        return Err(Error::DegenerateCovariates);
    }
    Ok(LambdaCalibration {
        lambda: eps_star / eps_hat,
        eps_hat,
        records,
    })
}
