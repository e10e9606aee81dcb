//! Collapsed Gibbs sampler for Gaussian linear regression kernels with a
//! normal–inverse-gamma base measure.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::allocation::{apply_removal, predictive_log_probs, reorder, Allocation, Removal};
use crate::cohesion::{default_proposal_sd, u_mode, NggParams, USampler};
use crate::covariates::MixedCovariateMatrix;
use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::similarity::SimilarityConfig;
use crate::stats::{inverse_gamma, ln_gamma, mvn_from_chol, mvn_from_precision, normal_logpdf, sample_log_weights, std_normal, LN_2PI};
use crate::trace::{initial_partition, Draw, SamplerConfig, TraceStore};

/// `N_p(β; μ₀, σ² B₀) × IG(σ²; a₀, b₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjPriorConfig {
    mu0: DVector<f64>,
    cov0: DMatrix<f64>,
    a0: f64,
    b0: f64,
    prec0: DMatrix<f64>,
    prec0_mu0: DVector<f64>,
    quad0: f64,
    logdet_prec0: f64,
}

impl ConjPriorConfig {
    pub fn new(mu0: DVector<f64>, cov0: DMatrix<f64>, a0: f64, b0: f64) -> Result<Self> {
        let p = mu0.len();
        if cov0.shape() != (p, p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: cov0.nrows(),
            });
        }
        if !(a0 > 0.0) {
            return Err(Error::config("prior.a0", "must be positive"));
        }
        if !(b0 > 0.0) {
            return Err(Error::config("prior.b0", "must be positive"));
        }
        if (&cov0 - cov0.transpose()).amax() > 1e-10 * cov0.amax().max(1.0) {
            return Err(Error::config("prior.B0", "must be symmetric"));
        }
        let chol = cov0
            .clone()
            .cholesky()
            .ok_or_else(|| Error::config("prior.B0", "must be positive definite"))?;
        let prec0 = chol.inverse();
        let prec0 = (&prec0 + prec0.transpose()) * 0.5;
        let prec0_mu0 = &prec0 * &mu0;
        let quad0 = mu0.dot(&prec0_mu0);
        let logdet_prec0 = -2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(ConjPriorConfig {
            mu0,
            cov0,
            a0,
            b0,
            prec0,
            prec0_mu0,
            quad0,
            logdet_prec0,
        })
    }

    /// `μ₀ = mu0 · 1`, `B₀ = scale · I`.
    pub fn isotropic(p: usize, mu0: f64, scale: f64, a0: f64, b0: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::config("prior.B0_scale", "must be positive"));
        }
        Self::new(DVector::from_element(p, mu0), DMatrix::identity(p, p) * scale, a0, b0)
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }
    pub fn mu0(&self) -> &DVector<f64> {
        &self.mu0
    }
    pub fn cov0(&self) -> &DMatrix<f64> {
        &self.cov0
    }
    pub fn a0(&self) -> f64 {
        self.a0
    }
    pub fn b0(&self) -> f64 {
        self.b0
    }
}

/// Per-block sufficient statistics of the regression.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub n: usize,
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub yty: f64,
}

impl SufficientStats {
    pub fn empty(p: usize) -> Self {
        SufficientStats {
            n: 0,
            xtx: DMatrix::zeros(p, p),
            xty: DVector::zeros(p),
            yty: 0.0,
        }
    }

    pub fn from_items(design: &DMatrix<f64>, y: &[f64], items: &[usize]) -> Self {
        let mut s = Self::empty(design.ncols());
        let mut row = vec![0.0; design.ncols()];
        for &i in items {
            copy_row(design, i, &mut row);
            s.add(&row, y[i]);
        }
        s
    }

    pub fn add(&mut self, x: &[f64], y: f64) {
        self.update(x, y, 1.0);
        self.n += 1;
    }

    pub fn remove(&mut self, x: &[f64], y: f64) {
        self.update(x, y, -1.0);
        self.n -= 1;
    }

    fn update(&mut self, x: &[f64], y: f64, sign: f64) {
        let p = x.len();
        for a in 0..p {
            self.xty[a] += sign * y * x[a];
            for b in 0..p {
                self.xtx[(a, b)] += sign * x[a] * x[b];
            }
        }
        self.yty += sign * y * y;
    }
}

fn copy_row(m: &DMatrix<f64>, i: usize, out: &mut [f64]) {
    for (c, o) in out.iter_mut().enumerate() {
        *o = m[(i, c)];
    }
}

/// Posterior hyperparameters `(B_j⁻¹, μ_j, a_j, b_j)` of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct NigPosterior {
    pub precision: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub a: f64,
    pub b: f64,
}

pub fn posterior(stats: &SufficientStats, prior: &ConjPriorConfig) -> Result<NigPosterior> {
    let precision = &prior.prec0 + &stats.xtx;
    let rhs = &prior.prec0_mu0 + &stats.xty;
    let chol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("posterior precision not positive definite".into()))?;
    let mean = chol.solve(&rhs);
    let z = chol
        .l()
        .solve_lower_triangular(&rhs)
        .ok_or_else(|| Error::NumericalFailure("singular Cholesky factor".into()))?;
    let b = prior.b0 + 0.5 * (stats.yty + prior.quad0 - z.norm_squared());
    if !(b > 0.0) {
        return Err(Error::NumericalFailure(format!("non-positive posterior scale b_j = {b}")));
    }
    Ok(NigPosterior {
        precision,
        mean,
        a: prior.a0 + 0.5 * stats.n as f64,
        b,
    })
}

/// Scratch space for marginal evaluations without allocation.
#[derive(Debug, Clone)]
struct Workspace {
    a: Vec<f64>,
    r: Vec<f64>,
}

impl Workspace {
    fn new(p: usize) -> Self {
        Workspace {
            a: vec![0.0; p * p],
            r: vec![0.0; p],
        }
    }
}

/// `log m(y*_j)` of a block, optionally with one extra observation.
fn log_marginal_ws(stats: &SufficientStats, extra: Option<(&[f64], f64)>, prior: &ConjPriorConfig, ws: &mut Workspace) -> Result<f64> {
    let p = prior.dim();
    let (mut n, mut yty) = (stats.n, stats.yty);
    for a in 0..p {
        ws.r[a] = prior.prec0_mu0[a] + stats.xty[a];
        for b in 0..=a {
            ws.a[a * p + b] = prior.prec0[(a, b)] + stats.xtx[(a, b)];
        }
    }
    if let Some((x, y)) = extra {
        n += 1;
        yty += y * y;
        for a in 0..p {
            ws.r[a] += y * x[a];
            for b in 0..=a {
                ws.a[a * p + b] += x[a] * x[b];
            }
        }
    }
    if n == 0 {
        return Ok(0.0);
    }
    // in-place lower Cholesky, then forward substitution of r
    let mut logdet = 0.0;
    for j in 0..p {
        let mut d = ws.a[j * p + j];
        for k in 0..j {
            d -= ws.a[j * p + k] * ws.a[j * p + k];
        }
        if !(d > 0.0) {
            return Err(Error::NumericalFailure("posterior precision not positive definite".into()));
        }
        let l = d.sqrt();
        ws.a[j * p + j] = l;
        logdet += 2.0 * l.ln();
        for i in j + 1..p {
            let mut s = ws.a[i * p + j];
            for k in 0..j {
                s -= ws.a[i * p + k] * ws.a[j * p + k];
            }
            ws.a[i * p + j] = s / l;
        }
    }
    let mut quad = 0.0;
    for i in 0..p {
        let mut s = ws.r[i];
        for k in 0..i {
            s -= ws.a[i * p + k] * ws.r[k];
        }
        ws.r[i] = s / ws.a[i * p + i];
        quad += ws.r[i] * ws.r[i];
    }
    let b = prior.b0 + 0.5 * (yty + prior.quad0 - quad);
    if !(b > 0.0) {
        return Err(Error::NumericalFailure(format!("non-positive posterior scale b_j = {b}")));
    }
    let nf = n as f64;
    let a = prior.a0 + 0.5 * nf;
    Ok(-0.5 * nf * LN_2PI + 0.5 * (prior.logdet_prec0 - logdet) + prior.a0 * prior.b0.ln() - a * b.ln() + ln_gamma(a)
        - ln_gamma(prior.a0))
}

/// Log marginal likelihood of a block under the NIG prior; `0` for an
/// empty block.
pub fn log_marginal(stats: &SufficientStats, prior: &ConjPriorConfig) -> Result<f64> {
    if stats.xtx.nrows() != prior.dim() {
        return Err(Error::DimensionMismatch {
            expected: prior.dim(),
            found: stats.xtx.nrows(),
        });
    }
    log_marginal_ws(stats, None, prior, &mut Workspace::new(prior.dim()))
}

/// Regression coefficients and residual variance of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjClusterParams {
    pub beta: Vec<f64>,
    pub sigma2: f64,
}

/// One exact draw from the NIG full conditional of a block.
pub fn update_cluster_params<R: Rng + ?Sized>(stats: &SufficientStats, prior: &ConjPriorConfig, rng: &mut R) -> Result<ConjClusterParams> {
    let post = posterior(stats, prior)?;
    let sigma2 = inverse_gamma(post.a, post.b, rng);
    let rhs = &post.precision * &post.mean;
    let beta = mvn_from_precision(&post.precision, &rhs, sigma2, rng)
        .ok_or_else(|| Error::NumericalFailure("posterior precision not positive definite".into()))?;
    Ok(ConjClusterParams {
        beta: beta.iter().copied().collect(),
        sigma2,
    })
}

/// Responses, regression design and similarity covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub y: Vec<f64>,
    /// n × p design, intercept column included when wanted
    pub design: DMatrix<f64>,
    pub covariates: MixedCovariateMatrix,
}

impl RegressionData {
    pub fn new(y: Vec<f64>, design: DMatrix<f64>, covariates: MixedCovariateMatrix) -> Result<Self> {
        let n = y.len();
        for found in [design.nrows(), covariates.n_items()] {
            if found != n {
                return Err(Error::SizeMismatch { expected: n, found });
            }
        }
        Ok(RegressionData { y, design, covariates })
    }

    pub fn n_items(&self) -> usize {
        self.y.len()
    }

    pub fn subset(&self, items: &[usize]) -> RegressionData {
        RegressionData {
            y: items.iter().map(|&i| self.y[i]).collect(),
            design: self.design.select_rows(items),
            covariates: self.covariates.subset(items),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateConfig {
    pub ngg: NggParams,
    pub similarity: SimilarityConfig,
    pub prior: ConjPriorConfig,
    pub sampler: SamplerConfig,
}

impl ConjugateConfig {
    pub fn validate(&self, data: &RegressionData) -> Result<()> {
        self.ngg.validate()?;
        self.similarity.validate()?;
        self.sampler.validate()?;
        if self.prior.dim() != data.design.ncols() {
            return Err(Error::config(
                "prior.mu0",
                format!("prior has dimension {} but the design has {} columns", self.prior.dim(), data.design.ncols()),
            ));
        }
        Ok(())
    }
}

/// Live state of one conjugate chain.
#[derive(Debug, Clone)]
pub struct ConjugateChain<'a> {
    data: &'a RegressionData,
    config: &'a ConjugateConfig,
    alloc: Allocation,
    stats: Vec<SufficientStats>,
    log_m: Vec<f64>,
    params: Vec<ConjClusterParams>,
    u: f64,
    u_sampler: USampler,
    ws: Workspace,
    row: Vec<f64>,
    weights: Vec<f64>,
    cand_log_m: Vec<f64>,
    empty: SufficientStats,
}

impl<'a> ConjugateChain<'a> {
    pub fn new<R: Rng + ?Sized>(data: &'a RegressionData, config: &'a ConjugateConfig, rng: &mut R) -> Result<Self> {
        config.validate(data)?;
        let start = initial_partition(config.sampler.init, data.n_items(), Some(&data.covariates), rng)?;
        let u = u_mode(data.n_items(), start.n_blocks(), &config.ngg).max(1e-3);
        Self::from_partition(data, config, &start, u, rng)
    }

    /// Chain positioned at `partition` and `u`, with block parameters drawn
    /// from their conditionals.
    pub fn from_partition<R: Rng + ?Sized>(
        data: &'a RegressionData,
        config: &'a ConjugateConfig,
        partition: &Partition,
        u: f64,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate(data)?;
        if partition.n_items() != data.n_items() {
            return Err(Error::SizeMismatch {
                expected: data.n_items(),
                found: partition.n_items(),
            });
        }
        if !(u > 0.0) {
            return Err(Error::config("u", "must be positive"));
        }
        let x = covariates_for(data, config);
        let alloc = Allocation::new(partition, x, &config.similarity)?;
        let stats: Vec<SufficientStats> = partition
            .blocks()
            .iter()
            .map(|b| SufficientStats::from_items(&data.design, &data.y, b))
            .collect();
        let log_m = stats.iter().map(|s| log_marginal(s, &config.prior)).collect::<Result<Vec<_>>>()?;
        let params = stats
            .iter()
            .map(|s| update_cluster_params(s, &config.prior, rng))
            .collect::<Result<Vec<_>>>()?;
        let sd = config.sampler.u_proposal_sd.unwrap_or_else(|| default_proposal_sd(u));
        let p = config.prior.dim();
        Ok(ConjugateChain {
            data,
            config,
            alloc,
            stats,
            log_m,
            params,
            u,
            u_sampler: USampler::with_kernel(config.sampler.u_kernel, sd),
            ws: Workspace::new(p),
            row: vec![0.0; p],
            weights: Vec::new(),
            cand_log_m: Vec::new(),
            empty: SufficientStats::empty(p),
        })
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn n_blocks(&self) -> usize {
        self.alloc.n_blocks()
    }

    pub fn partition(&self) -> Partition {
        self.alloc.to_partition()
    }

    pub fn stats(&self) -> &[SufficientStats] {
        &self.stats
    }

    pub fn params(&self) -> &[ConjClusterParams] {
        &self.params
    }

    pub fn u_sampler(&self) -> &USampler {
        &self.u_sampler
    }

    pub fn set_adapting(&mut self, adapting: bool) {
        self.u_sampler.adapting = adapting;
    }

    /// MH update of `u` given the partition.
    pub fn update_u<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let (u, _) = self.u_sampler.step(self.u, self.data.n_items(), self.alloc.n_blocks(), &self.config.ngg, rng);
        self.u = u;
    }

    /// Removes item `i` and reallocates it with probability proportional to
    /// marginal-likelihood ratio × cohesion ratio × similarity ratio.
    pub fn reassign_item<R: Rng + ?Sized>(&mut self, i: usize, rng: &mut R) -> Result<()> {
        let x = covariates_for(self.data, self.config);
        let y = self.data.y[i];
        copy_row(&self.data.design, i, &mut self.row);
        let j = self.alloc.label(i);
        self.stats[j].remove(&self.row, y);
        let removal = self.alloc.remove(i, x)?;
        match removal {
            Removal::Shrunk(j) => {
                self.log_m[j] = log_marginal_ws(&self.stats[j], None, &self.config.prior, &mut self.ws)?;
            }
            Removal::Emptied { .. } => {
                apply_removal(&mut self.stats, removal);
                apply_removal(&mut self.log_m, removal);
                apply_removal(&mut self.params, removal);
            }
        }
        self.alloc
            .log_prior_weights(i, self.u, &self.config.ngg, &self.config.similarity, x, &mut self.weights)?;
        let k = self.alloc.n_blocks();
        self.cand_log_m.clear();
        for j in 0..k {
            let lm = log_marginal_ws(&self.stats[j], Some((&self.row, y)), &self.config.prior, &mut self.ws)?;
            self.cand_log_m.push(lm);
            self.weights[j] += lm - self.log_m[j];
        }
        let lm = log_marginal_ws(&self.empty, Some((&self.row, y)), &self.config.prior, &mut self.ws)?;
        self.cand_log_m.push(lm);
        self.weights[k] += lm;
        let choice = sample_log_weights(&self.weights, rng);
        self.alloc.insert(i, choice, x)?;
        if choice == k {
            let mut s = SufficientStats::empty(self.row.len());
            s.add(&self.row, y);
            self.stats.push(s);
            self.log_m.push(self.cand_log_m[k]);
            // redrawn in the parameter step of this sweep
            self.params.push(ConjClusterParams {
                beta: self.config.prior.mu0.iter().copied().collect(),
                sigma2: self.config.prior.b0,
            });
        } else {
            self.stats[choice].add(&self.row, y);
            self.log_m[choice] = self.cand_log_m[choice];
        }
        Ok(())
    }

    /// Draws every block's parameters from its full conditional.
    pub fn update_params<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        for j in 0..self.stats.len() {
            self.params[j] = update_cluster_params(&self.stats[j], &self.config.prior, rng)?;
        }
        Ok(())
    }

    /// One sweep: `u`, every item, block parameters, canonical relabeling.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.update_u(rng);
        for i in 0..self.data.n_items() {
            self.reassign_item(i, rng)?;
        }
        self.update_params(rng)?;
        let order = self.alloc.canonicalize();
        reorder(&mut self.stats, &order);
        reorder(&mut self.log_m, &order);
        reorder(&mut self.params, &order);
        Ok(())
    }

    /// `log N(y_i; x_iᵀβ_{s_i}, σ²_{s_i})` for every item.
    pub fn log_lik(&self) -> Vec<f64> {
        (0..self.data.n_items())
            .map(|i| {
                let th = &self.params[self.alloc.label(i)];
                let mean: f64 = (0..th.beta.len()).map(|c| self.data.design[(i, c)] * th.beta[c]).sum();
                normal_logpdf(self.data.y[i], mean, th.sigma2)
            })
            .collect()
    }

    pub fn draw(&self, iteration: usize) -> Draw<ConjClusterParams> {
        Draw {
            iteration,
            partition: self.partition(),
            u: self.u,
            params: self.params.clone(),
            log_lik: self.log_lik(),
            extra: (),
        }
    }
}

fn covariates_for<'a>(data: &'a RegressionData, config: &ConjugateConfig) -> Option<&'a MixedCovariateMatrix> {
    (!config.similarity.is_constant()).then_some(&data.covariates)
}

/// Runs one chain: `n_iter` sweeps, the first `n_burnin` discarded (the `u`
/// proposal adapts during burn-in only).
pub fn run_chain_conjugate<R: Rng + ?Sized>(data: &RegressionData, config: &ConjugateConfig, rng: &mut R) -> Result<TraceStore<ConjClusterParams>> {
    config.validate(data)?;
    let mut trace = TraceStore::default();
    if config.sampler.n_iter == 0 {
        return Ok(trace);
    }
    let mut chain = ConjugateChain::new(data, config, rng)?;
    for it in 0..config.sampler.n_iter {
        if it == config.sampler.n_burnin {
            chain.set_adapting(false);
        }
        chain.sweep(rng)?;
        if it >= config.sampler.n_burnin {
            trace.draws.push(chain.draw(it));
        }
    }
    trace.u_acceptance = chain.u_sampler().acceptance_rate();
    Ok(trace)
}

/// One draw of block parameters from the base measure.
pub fn draw_from_prior<R: Rng + ?Sized>(prior: &ConjPriorConfig, rng: &mut R) -> ConjClusterParams {
    let sigma2 = inverse_gamma(prior.a0, prior.b0, rng);
    let chol = (&prior.cov0 * sigma2).cholesky().expect("validated covariance").l();
    ConjClusterParams {
        beta: mvn_from_chol(&prior.mu0, &chol, rng).iter().copied().collect(),
        sigma2,
    }
}

/// Posterior predictive output for new items.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjPrediction {
    /// `draws[h]` holds one response draw per retained iteration for item `h`
    pub draws: Vec<Vec<f64>>,
    /// predictive means, averaged over iterations with the block chosen
    /// analytically rather than sampled
    pub mean: Vec<f64>,
}

/// Predicts responses of new items treated as missing data: per retained
/// iteration the item joins a block by the prior allocation weights on the
/// augmented covariates, then draws from that block's regression.
pub fn predict_conjugate<R: Rng + ?Sized>(
    trace: &TraceStore<ConjClusterParams>,
    data: &RegressionData,
    config: &ConjugateConfig,
    design_new: &DMatrix<f64>,
    covariates_new: &[(Vec<f64>, Vec<u8>)],
    rng: &mut R,
) -> Result<ConjPrediction> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let h = design_new.nrows();
    if covariates_new.len() != h {
        return Err(Error::SizeMismatch {
            expected: h,
            found: covariates_new.len(),
        });
    }
    if design_new.ncols() != config.prior.dim() {
        return Err(Error::DimensionMismatch {
            expected: config.prior.dim(),
            found: design_new.ncols(),
        });
    }
    let n = data.n_items();
    let x_aug = data.covariates.with_extra_rows(covariates_new)?;
    let rows: Vec<usize> = (n..n + h).collect();
    let mut draws = vec![Vec::with_capacity(trace.len()); h];
    let mut mean = vec![0.0; h];
    let prior_mean: Vec<f64> = (0..h)
        .map(|r| (0..design_new.ncols()).map(|c| design_new[(r, c)] * config.prior.mu0[c]).sum())
        .collect();
    for d in &trace.draws {
        let probs = predictive_log_probs(&d.partition, d.u, &config.ngg, &config.similarity, Some(&x_aug), &rows)?;
        for (r, lp) in probs.iter().enumerate() {
            let fit = |th: &ConjClusterParams| -> f64 { (0..th.beta.len()).map(|c| design_new[(r, c)] * th.beta[c]).sum() };
            let k = d.params.len();
            mean[r] += d.params.iter().zip(lp).map(|(th, l)| l.exp() * fit(th)).sum::<f64>() + lp[k].exp() * prior_mean[r];
            let j = sample_log_weights(lp, rng);
            let th = if j < k { d.params[j].clone() } else { draw_from_prior(&config.prior, rng) };
            draws[r].push(fit(&th) + th.sigma2.sqrt() * std_normal(rng));
        }
    }
    for m in &mut mean {
        *m /= trace.len() as f64;
    }
    Ok(ConjPrediction { draws, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::MetricChoice;
    use crate::stats::mean_and_se;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prior1() -> ConjPriorConfig {
        ConjPriorConfig::new(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, 2.0), 3.0, 2.0).unwrap()
    }

    #[test]
    fn empty_block_marginal_is_zero() {
        assert_eq!(log_marginal(&SufficientStats::empty(1), &prior1()).unwrap(), 0.0);
    }

    #[test]
    fn x_zero_reduces_to_student_t() {
        // with x = 0 the mean drops out: y | σ² ~ N(0, σ²), σ² ~ IG(a, b)
        // ⇒ y ~ t_{2a}(0, b/a)
        let prior = prior1();
        let mut s = SufficientStats::empty(1);
        s.add(&[0.0], 1.7);
        let (a, b) = (3.0f64, 2.0f64);
        let nu = 2.0 * a;
        let scale2 = b / a;
        let t = ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * std::f64::consts::PI * scale2).ln()
            - (nu + 1.0) / 2.0 * (1.0 + 1.7f64.powi(2) / (nu * scale2)).ln();
        assert_relative_eq!(log_marginal(&s, &prior).unwrap(), t, max_relative = 1e-12);
    }

    #[test]
    fn workspace_path_matches_nalgebra_posterior() {
        let prior = ConjPriorConfig::new(
            DVector::from_vec(vec![0.5, -1.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            2.5,
            1.5,
        )
        .unwrap();
        let mut s = SufficientStats::empty(2);
        for (x, y) in [([1.0, 0.2], 0.4), ([1.0, -1.0], 2.0), ([1.0, 3.0], -1.0)] {
            s.add(&x, y);
        }
        let post = posterior(&s, &prior).unwrap();
        let chol = post.precision.clone().cholesky().unwrap();
        let logdet_prec = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let expected = -1.5 * LN_2PI + 0.5 * (prior.logdet_prec0 - logdet_prec) + prior.a0 * prior.b0.ln() - post.a * post.b.ln()
            + ln_gamma(post.a)
            - ln_gamma(prior.a0);
        assert_relative_eq!(log_marginal(&s, &prior).unwrap(), expected, max_relative = 1e-12);
        // b_j through explicit inverses
        let bj = prior.b0 + 0.5 * (s.yty + prior.quad0 - post.mean.dot(&(&post.precision * &post.mean)));
        assert_relative_eq!(post.b, bj, max_relative = 1e-12);
    }

    #[test]
    fn incremental_stats_match_scratch() {
        let design = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, 1.0, -0.2, 1.0, 3.0, 1.0, 1.1]);
        let y = [0.3, 1.0, -2.0, 0.7];
        let mut s = SufficientStats::from_items(&design, &y, &[0, 1, 2]);
        s.remove(&[1.0, -0.2], 1.0);
        s.add(&[1.0, 1.1], 0.7);
        let fresh = SufficientStats::from_items(&design, &y, &[0, 2, 3]);
        assert_eq!(s.n, fresh.n);
        assert!((s.xtx - fresh.xtx).amax() < 1e-12);
        assert!((s.xty - fresh.xty).amax() < 1e-12);
        assert_relative_eq!(s.yty, fresh.yty, max_relative = 1e-12);
    }

    #[test]
    fn flat_prior_mean_is_sample_mean() {
        let prior = ConjPriorConfig::new(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, 1e8), 2.0, 1.0).unwrap();
        let y = [1.0, 2.5, 3.1, 0.2];
        let design = DMatrix::from_element(4, 1, 1.0);
        let s = SufficientStats::from_items(&design, &y, &[0, 1, 2, 3]);
        let post = posterior(&s, &prior).unwrap();
        assert!((post.mean[0] - y.iter().sum::<f64>() / 4.0).abs() < 1e-3);
    }

    #[test]
    fn nig_draw_moments() {
        let prior = ConjPriorConfig::new(DVector::from_vec(vec![0.0, 1.0]), DMatrix::identity(2, 2) * 3.0, 3.0, 2.0).unwrap();
        let design = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let s = SufficientStats::from_items(&design, &[0.5, 1.5, 2.0], &[0, 1, 2]);
        let post = posterior(&s, &prior).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws: Vec<ConjClusterParams> = (0..100_000).map(|_| update_cluster_params(&s, &prior, &mut rng).unwrap()).collect();
        let (m_s, se_s) = mean_and_se(&draws.iter().map(|d| d.sigma2).collect::<Vec<_>>());
        assert!((m_s - post.b / (post.a - 1.0)).abs() < 3.0 * se_s);
        for c in 0..2 {
            let (m, se) = mean_and_se(&draws.iter().map(|d| d.beta[c]).collect::<Vec<_>>());
            assert!((m - post.mean[c]).abs() < 3.0 * se, "β[{c}] {m} vs {}", post.mean[c]);
        }
    }

    fn separated(n: usize, rng: &mut ChaCha8Rng) -> RegressionData {
        let y: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 100.0 } else { -100.0 } + 0.01 * rng.gen::<f64>()).collect();
        let cov = MixedCovariateMatrix::new(DMatrix::from_fn(n, 1, |_, _| rng.gen::<f64>()), vec![], MetricChoice::Empirical).unwrap();
        RegressionData::new(y, DMatrix::from_element(n, 1, 1.0), cov).unwrap()
    }

    fn config(n_iter: usize, n_burnin: usize) -> ConjugateConfig {
        ConjugateConfig {
            ngg: NggParams::new(1.0, 0.2).unwrap(),
            similarity: SimilarityConfig::one(),
            prior: ConjPriorConfig::isotropic(1, 0.0, 1e4, 2.0, 0.01).unwrap(),
            sampler: SamplerConfig {
                n_iter,
                n_burnin,
                ..Default::default()
            },
        }
    }

    #[test]
    fn recovers_two_separated_groups() {
        let mut hits = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = separated(20, &mut rng);
            let cfg = config(100, 99);
            let trace = run_chain_conjugate(&data, &cfg, &mut rng).unwrap();
            let truth = Partition::from_labels(&(0..20).map(|i| i % 2).collect::<Vec<_>>());
            hits += (trace.draws[0].partition == truth) as usize;
        }
        assert_eq!(hits, 20);
    }

    #[test]
    fn bookkeeping_and_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = separated(15, &mut rng);
        let mut cfg = config(30, 12);
        cfg.similarity = SimilarityConfig::new(crate::similarity::SimilarityFamily::GC, 1.0, 1.0).unwrap();
        let trace = run_chain_conjugate(&data, &cfg, &mut rng).unwrap();
        assert_eq!(trace.len(), 18);
        for d in &trace.draws {
            assert_eq!(d.params.len(), d.partition.n_blocks());
        }
        let empty = run_chain_conjugate(&data, &config(0, 0), &mut rng).unwrap();
        assert!(empty.is_empty());
        // cached statistics equal recomputation after sweeps
        let mut chain = ConjugateChain::new(&data, &cfg, &mut rng).unwrap();
        for _ in 0..5 {
            chain.sweep(&mut rng).unwrap();
        }
        for (j, block) in chain.partition().blocks().iter().enumerate() {
            let fresh = SufficientStats::from_items(&data.design, &data.y, block);
            assert_eq!(fresh.n, chain.stats()[j].n);
            assert!((&fresh.xtx - &chain.stats()[j].xtx).amax() <= 1e-8 * fresh.xtx.amax());
            assert_relative_eq!(fresh.yty, chain.stats()[j].yty, max_relative = 1e-8);
        }
    }
}
