//! Gibbs sampler for log gap-times of recurrent events: skew-normal kernel
//! by half-normal augmentation, administrative censoring of the last gap,
//! fixed-time and occasion-specific regression, and partition updates with a
//! re-used pool of auxiliary clusters.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::allocation::{apply_removal, predictive_log_probs, reorder, Allocation};
use crate::cohesion::{default_proposal_sd, u_mode, NggParams, USampler};
use crate::covariates::MixedCovariateMatrix;
use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::similarity::SimilarityConfig;
use crate::stats::{
    inverse_gamma, mvn_from_precision, normal_logpdf, sample_log_weights, skew_normal_logpdf, std_normal, std_normal_lower_truncated,
    truncated_normal_lower,
};
use crate::trace::{initial_partition, Draw, SamplerConfig, TraceStore};

/// `√(2/π)`, the mean of the standard half-normal.
pub const HALF_NORMAL_MEAN: f64 = 0.797_884_560_802_865_4;

/// One subject's trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    /// observed log gap-times `y_1..y_m`
    pub y: Vec<f64>,
    /// log of the time between the last event and the censoring time
    pub censor_bound: f64,
    /// fixed-time covariates (length p₁)
    pub x_fixed: Vec<f64>,
    /// occasion covariates for `t = 1..m+1` (each of length p₂)
    pub x_time: Vec<Vec<f64>>,
}

impl Subject {
    pub fn n_observed(&self) -> usize {
        self.y.len()
    }
}

/// `log(τ − Σ_t exp(y_t))`, or `None` when `τ` does not exceed the last event.
pub fn censor_bound(log_gaps: &[f64], tau: f64) -> Option<f64> {
    let elapsed: f64 = log_gaps.iter().map(|y| y.exp()).sum();
    (tau > elapsed).then(|| (tau - elapsed).ln())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentDataset {
    subjects: Vec<Subject>,
    /// static covariates entering the partition prior
    covariates: MixedCovariateMatrix,
    p1: usize,
    p2: usize,
    horizon: usize,
}

impl RecurrentDataset {
    pub fn new(subjects: Vec<Subject>, covariates: MixedCovariateMatrix) -> Result<Self> {
        let n = subjects.len();
        if n == 0 {
            return Err(Error::EmptySet);
        }
        if covariates.n_items() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                found: covariates.n_items(),
            });
        }
        let p1 = subjects[0].x_fixed.len();
        let p2 = subjects[0].x_time.first().map_or(0, Vec::len);
        for s in &subjects {
            if s.y.is_empty() {
                return Err(Error::Spec(format!("subject {} has no observed gap", s.id)));
            }
            if !s.censor_bound.is_finite() {
                return Err(Error::Spec(format!("subject {} has a non-finite censoring bound", s.id)));
            }
            if s.y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Spec(format!("subject {} has a non-finite log gap", s.id)));
            }
            if s.x_fixed.len() != p1 {
                return Err(Error::DimensionMismatch {
                    expected: p1,
                    found: s.x_fixed.len(),
                });
            }
            if s.x_time.len() != s.y.len() + 1 {
                return Err(Error::SizeMismatch {
                    expected: s.y.len() + 1,
                    found: s.x_time.len(),
                });
            }
            if let Some(r) = s.x_time.iter().find(|r| r.len() != p2) {
                return Err(Error::DimensionMismatch {
                    expected: p2,
                    found: r.len(),
                });
            }
        }
        let horizon = subjects.iter().map(|s| s.y.len() + 1).max().expect("non-empty");
        Ok(RecurrentDataset {
            subjects,
            covariates,
            p1,
            p2,
            horizon,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }
    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }
    pub fn subject(&self, i: usize) -> &Subject {
        &self.subjects[i]
    }
    pub fn covariates(&self) -> &MixedCovariateMatrix {
        &self.covariates
    }
    pub fn p1(&self) -> usize {
        self.p1
    }
    pub fn p2(&self) -> usize {
        self.p2
    }
    /// `J = max_i (m_i + 1)`
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Subjects `items` in that order; the similarity metric is kept.
    pub fn subset(&self, items: &[usize]) -> Result<RecurrentDataset> {
        RecurrentDataset::new(items.iter().map(|&i| self.subjects[i].clone()).collect(), self.covariates.subset(items))
    }
}

/// `N₂((α, ψ); (α₀, ψ₀), σ² diag(κ₀, κ₁)) × IG(σ²; a, b)` for the blocks,
/// `β₀ ~ N(0, Σ₀)`, `β_t ~ N(0, diag ξ²)`, `ξ²_m ~ IG(ν₀, γ₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecPriorConfig {
    pub alpha0: f64,
    pub psi0: f64,
    pub kappa0: f64,
    pub kappa1: f64,
    pub a: f64,
    pub b: f64,
    pub sigma0: DMatrix<f64>,
    pub nu0: f64,
    pub gamma0: f64,
    /// auxiliary clusters offered to each subject
    pub r: usize,
    /// use `a + n_j/2` (subjects) instead of `a + m_j/2` (observations)
    /// as the shape of the σ² update
    pub shape_from_subjects: bool,
}

impl RecPriorConfig {
    pub fn standard(p1: usize) -> Self {
        RecPriorConfig {
            alpha0: 0.0,
            psi0: 0.0,
            kappa0: 10.0,
            kappa1: 10.0,
            a: 2.0,
            b: 1.0,
            sigma0: DMatrix::identity(p1, p1),
            nu0: 2.0,
            gamma0: 1.0,
            r: 5,
            shape_from_subjects: false,
        }
    }

    pub fn validate(&self, p1: usize) -> Result<()> {
        for (key, v) in [
            ("rec.kappa0", self.kappa0),
            ("rec.kappa1", self.kappa1),
            ("rec.a", self.a),
            ("rec.b", self.b),
            ("rec.nu0", self.nu0),
            ("rec.gamma0", self.gamma0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !(self.alpha0.is_finite() && self.psi0.is_finite()) {
            return Err(Error::config("rec.alpha0", "must be finite"));
        }
        if self.r == 0 {
            return Err(Error::config("rec.R", "must be at least 1"));
        }
        if self.sigma0.shape() != (p1, p1) {
            return Err(Error::config("rec.Sigma0_scale", format!("Sigma0 must be {p1}×{p1}")));
        }
        if p1 > 0 && self.sigma0.clone().cholesky().is_none() {
            return Err(Error::config("rec.Sigma0_scale", "Sigma0 must be positive definite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecClusterParams {
    pub alpha_c: f64,
    pub psi: f64,
    pub sigma2: f64,
}

/// Regression coefficients shared by all blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionState {
    pub beta0: Vec<f64>,
    /// `beta_t[t]` for occasions `t = 1..J` (0-based)
    pub beta_t: Vec<Vec<f64>>,
    pub xi2: Vec<f64>,
}

impl RegressionState {
    pub fn zeros(p1: usize, p2: usize, horizon: usize) -> Self {
        RegressionState {
            beta0: vec![0.0; p1],
            beta_t: vec![vec![0.0; p2]; horizon],
            xi2: vec![1.0; p2],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentConfig {
    pub ngg: NggParams,
    pub similarity: SimilarityConfig,
    pub prior: RecPriorConfig,
    pub sampler: SamplerConfig,
}

impl RecurrentConfig {
    pub fn validate(&self, data: &RecurrentDataset) -> Result<()> {
        self.ngg.validate()?;
        self.similarity.validate()?;
        self.sampler.validate()?;
        self.prior.validate(data.p1())
    }
}

/// Full latent state apart from the `u` proposal bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub partition: Partition,
    pub params: Vec<RecClusterParams>,
    pub regression: RegressionState,
    /// `eta[i][t]` for `t = 0..=m_i`
    pub eta: Vec<Vec<f64>>,
    /// imputed last (censored) log gap per subject
    pub censored: Vec<f64>,
    pub u: f64,
}

/// Per-draw quantities beyond the partition and block parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RecExtra {
    pub regression: RegressionState,
    pub censored: Vec<f64>,
}

pub fn draw_from_prior<R: Rng + ?Sized>(prior: &RecPriorConfig, rng: &mut R) -> RecClusterParams {
    let sigma2 = inverse_gamma(prior.a, prior.b, rng);
    let s = sigma2.sqrt();
    RecClusterParams {
        alpha_c: prior.alpha0 + s * prior.kappa0.sqrt() * std_normal(rng),
        psi: prior.psi0 + s * prior.kappa1.sqrt() * std_normal(rng),
        sigma2,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
pub struct RecurrentChain<'a> {
    data: &'a RecurrentDataset,
    config: &'a RecurrentConfig,
    alloc: Allocation,
    params: Vec<RecClusterParams>,
    reg: RegressionState,
    eta: Vec<Vec<f64>>,
    censored: Vec<f64>,
    u: f64,
    u_sampler: USampler,
    pool: Vec<RecClusterParams>,
    weights: Vec<f64>,
    sigma0_inv: DMatrix<f64>,
}

impl<'a> RecurrentChain<'a> {
    /// Initial state: partition per `sampler.init`, zero regression,
    /// half-normal latents, censored gaps at `max(bound, mean observed)`,
    /// block parameters drawn from their full conditionals.
    pub fn new<R: Rng + ?Sized>(data: &'a RecurrentDataset, config: &'a RecurrentConfig, rng: &mut R) -> Result<Self> {
        config.validate(data)?;
        let n = data.n_subjects();
        let partition = initial_partition(config.sampler.init, n, Some(data.covariates()), rng)?;
        let mut reg = RegressionState::zeros(data.p1(), data.p2(), data.horizon());
        if config.prior.nu0 > 1.0 {
            reg.xi2.iter_mut().for_each(|v| *v = config.prior.gamma0 / (config.prior.nu0 - 1.0));
        }
        let eta = data
            .subjects()
            .iter()
            .map(|s| (0..=s.n_observed()).map(|_| std_normal_lower_truncated(0.0, rng)).collect())
            .collect();
        let censored = data
            .subjects()
            .iter()
            .map(|s| s.censor_bound.max(s.y.iter().sum::<f64>() / s.y.len() as f64))
            .collect();
        let k = partition.n_blocks();
        let u = u_mode(n, k, &config.ngg).max(1e-3);
        let placeholder = RecClusterParams {
            alpha_c: config.prior.alpha0,
            psi: config.prior.psi0,
            sigma2: 1.0,
        };
        let state = RecurrentState {
            partition,
            params: vec![placeholder; k],
            regression: reg,
            eta,
            censored,
            u,
        };
        let mut chain = Self::from_state(data, config, state)?;
        chain.update_cluster_params(rng)?;
        Ok(chain)
    }

    /// Chain positioned at an explicit state.
    pub fn from_state(data: &'a RecurrentDataset, config: &'a RecurrentConfig, state: RecurrentState) -> Result<Self> {
        config.validate(data)?;
        let n = data.n_subjects();
        if state.partition.n_items() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                found: state.partition.n_items(),
            });
        }
        if state.params.len() != state.partition.n_blocks() {
            return Err(Error::SizeMismatch {
                expected: state.partition.n_blocks(),
                found: state.params.len(),
            });
        }
        if state.eta.len() != n || state.censored.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                found: state.eta.len().min(state.censored.len()),
            });
        }
        for (s, e) in data.subjects().iter().zip(&state.eta) {
            if e.len() != s.n_observed() + 1 {
                return Err(Error::SizeMismatch {
                    expected: s.n_observed() + 1,
                    found: e.len(),
                });
            }
        }
        let reg = &state.regression;
        if reg.beta0.len() != data.p1() || reg.xi2.len() != data.p2() || reg.beta_t.len() != data.horizon() {
            return Err(Error::DimensionMismatch {
                expected: data.horizon(),
                found: reg.beta_t.len(),
            });
        }
        if !(state.u > 0.0) {
            return Err(Error::config("u", "must be positive"));
        }
        let x = covariates_for(data, config);
        let alloc = Allocation::new(&state.partition, x, &config.similarity)?;
        let sigma0_inv = if data.p1() > 0 {
            config.prior.sigma0.clone().try_inverse().expect("validated")
        } else {
            DMatrix::zeros(0, 0)
        };
        let sd = config.sampler.u_proposal_sd.unwrap_or_else(|| default_proposal_sd(state.u));
        Ok(RecurrentChain {
            data,
            config,
            alloc,
            params: state.params,
            reg: state.regression,
            eta: state.eta,
            censored: state.censored,
            u: state.u,
            u_sampler: USampler::with_kernel(config.sampler.u_kernel, sd),
            pool: Vec::new(),
            weights: Vec::new(),
            sigma0_inv,
        })
    }

    pub fn state(&self) -> RecurrentState {
        RecurrentState {
            partition: self.alloc.to_partition(),
            params: self.params.clone(),
            regression: self.reg.clone(),
            eta: self.eta.clone(),
            censored: self.censored.clone(),
            u: self.u,
        }
    }

    pub fn partition(&self) -> Partition {
        self.alloc.to_partition()
    }
    pub fn params(&self) -> &[RecClusterParams] {
        &self.params
    }
    pub fn regression(&self) -> &RegressionState {
        &self.reg
    }
    pub fn eta(&self) -> &[Vec<f64>] {
        &self.eta
    }
    pub fn censored(&self) -> &[f64] {
        &self.censored
    }
    pub fn u(&self) -> f64 {
        self.u
    }
    pub fn u_sampler(&self) -> &USampler {
        &self.u_sampler
    }
    pub fn set_adapting(&mut self, adapting: bool) {
        self.u_sampler.adapting = adapting;
    }

    /// Response of subject `i` at 0-based occasion `t`; `t = m_i` is the
    /// imputed censored gap.
    fn response(&self, i: usize, t: usize) -> f64 {
        let s = &self.data.subjects[i];
        if t < s.n_observed() {
            s.y[t]
        } else {
            self.censored[i]
        }
    }

    fn fixed_part(&self, i: usize) -> f64 {
        dot(&self.reg.beta0, &self.data.subjects[i].x_fixed)
    }

    fn time_part(&self, i: usize, t: usize) -> f64 {
        dot(&self.reg.beta_t[t], &self.data.subjects[i].x_time[t])
    }

    /// `Σ_t log N(y_it; α + β₀ᵀx_i + β_tᵀx_it + ψη_it, σ²)` over all `m_i + 1` occasions.
    fn log_lik_given(&self, i: usize, th: &RecClusterParams) -> f64 {
        let fixed = self.fixed_part(i);
        (0..=self.data.subjects[i].n_observed())
            .map(|t| {
                let mean = th.alpha_c + fixed + self.time_part(i, t) + th.psi * self.eta[i][t];
                normal_logpdf(self.response(i, t), mean, th.sigma2)
            })
            .sum()
    }

    /// Latent half-normal variables from their truncated-normal conditionals.
    pub fn update_eta<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for i in 0..self.data.n_subjects() {
            let th = self.params[self.alloc.label(i)];
            let fixed = self.fixed_part(i);
            let denom = th.sigma2 + th.psi * th.psi;
            let var = th.sigma2 / denom;
            for t in 0..=self.data.subjects[i].n_observed() {
                let r = self.response(i, t) - th.alpha_c - fixed - self.time_part(i, t);
                self.eta[i][t] = truncated_normal_lower(th.psi * r / denom, var, 0.0, rng);
            }
        }
    }

    /// Censored last gaps from normals truncated below at the censoring bound.
    pub fn impute_censored<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for i in 0..self.data.n_subjects() {
            let th = self.params[self.alloc.label(i)];
            let t = self.data.subjects[i].n_observed();
            let mean = th.alpha_c + self.fixed_part(i) + self.time_part(i, t) + th.psi * self.eta[i][t];
            self.censored[i] = truncated_normal_lower(mean, th.sigma2, self.data.subjects[i].censor_bound, rng);
        }
    }

    /// Fixed-time coefficients from their Gaussian conditional.
    pub fn update_beta0<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let p1 = self.data.p1();
        if p1 == 0 {
            return Ok(());
        }
        let mut prec = self.sigma0_inv.clone();
        let mut rhs = DVector::zeros(p1);
        for i in 0..self.data.n_subjects() {
            let th = self.params[self.alloc.label(i)];
            let s = &self.data.subjects[i];
            let occasions = s.n_observed() + 1;
            let mut resid = 0.0;
            for t in 0..occasions {
                resid += self.response(i, t) - th.alpha_c - self.time_part(i, t) - th.psi * self.eta[i][t];
            }
            for a in 0..p1 {
                rhs[a] += resid * s.x_fixed[a] / th.sigma2;
                for b in 0..p1 {
                    prec[(a, b)] += occasions as f64 * s.x_fixed[a] * s.x_fixed[b] / th.sigma2;
                }
            }
        }
        let draw = mvn_from_precision(&prec, &rhs, 1.0, rng)
            .ok_or_else(|| Error::NumericalFailure("beta0 precision not positive definite".into()))?;
        self.reg.beta0 = draw.iter().copied().collect();
        Ok(())
    }

    /// Occasion-specific coefficients; occasions nobody reaches draw from the prior.
    pub fn update_beta_t<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let p2 = self.data.p2();
        if p2 == 0 {
            return Ok(());
        }
        let mut prec: Vec<DMatrix<f64>> = (0..self.data.horizon())
            .map(|_| DMatrix::from_diagonal(&DVector::from_iterator(p2, self.reg.xi2.iter().map(|v| 1.0 / v))))
            .collect();
        let mut rhs = vec![DVector::<f64>::zeros(p2); self.data.horizon()];
        for i in 0..self.data.n_subjects() {
            let th = self.params[self.alloc.label(i)];
            let s = &self.data.subjects[i];
            let fixed = self.fixed_part(i);
            for t in 0..=s.n_observed() {
                let r = self.response(i, t) - th.alpha_c - fixed - th.psi * self.eta[i][t];
                let x = &s.x_time[t];
                for a in 0..p2 {
                    rhs[t][a] += r * x[a] / th.sigma2;
                    for b in 0..p2 {
                        prec[t][(a, b)] += x[a] * x[b] / th.sigma2;
                    }
                }
            }
        }
        for t in 0..self.data.horizon() {
            let draw = mvn_from_precision(&prec[t], &rhs[t], 1.0, rng)
                .ok_or_else(|| Error::NumericalFailure("beta_t precision not positive definite".into()))?;
            self.reg.beta_t[t] = draw.iter().copied().collect();
        }
        Ok(())
    }

    /// Prior variances of the occasion coefficients.
    pub fn update_xi2<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let shape = self.config.prior.nu0 + self.data.horizon() as f64 / 2.0;
        for m in 0..self.data.p2() {
            let ss: f64 = self.reg.beta_t.iter().map(|b| b[m] * b[m]).sum();
            self.reg.xi2[m] = inverse_gamma(shape, self.config.prior.gamma0 + 0.5 * ss, rng);
        }
    }

    /// Exact normal–inverse-gamma draw of `(α_j, ψ_j, σ²_j)` per block,
    /// regressing the residual responses on `(1, η)`.
    pub fn update_cluster_params<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let pr = &self.config.prior;
        let prior_prec = [1.0 / pr.kappa0, 1.0 / pr.kappa1];
        for j in 0..self.alloc.n_blocks() {
            let mut k_inv = [[prior_prec[0], 0.0], [0.0, prior_prec[1]]];
            let mut rhs = [prior_prec[0] * pr.alpha0, prior_prec[1] * pr.psi0];
            let mut yy = 0.0;
            let mut m_j = 0usize;
            for &i in self.alloc.members(j) {
                let fixed = self.fixed_part(i);
                for t in 0..=self.data.subjects[i].n_observed() {
                    let yhat = self.response(i, t) - self.time_part(i, t) - fixed;
                    let e = self.eta[i][t];
                    k_inv[0][0] += 1.0;
                    k_inv[0][1] += e;
                    k_inv[1][1] += e * e;
                    rhs[0] += yhat;
                    rhs[1] += yhat * e;
                    yy += yhat * yhat;
                    m_j += 1;
                }
            }
            k_inv[1][0] = k_inv[0][1];
            let det = k_inv[0][0] * k_inv[1][1] - k_inv[0][1] * k_inv[0][1];
            if !(det > 0.0) {
                return Err(Error::NumericalFailure("cluster precision not positive definite".into()));
            }
            let mean = [
                (k_inv[1][1] * rhs[0] - k_inv[0][1] * rhs[1]) / det,
                (k_inv[0][0] * rhs[1] - k_inv[0][1] * rhs[0]) / det,
            ];
            let quad0 = prior_prec[0] * pr.alpha0 * pr.alpha0 + prior_prec[1] * pr.psi0 * pr.psi0;
            let b = pr.b + 0.5 * (yy + quad0 - (mean[0] * rhs[0] + mean[1] * rhs[1]));
            if !(b > 0.0) {
                return Err(Error::NumericalFailure(format!("non-positive posterior scale {b}")));
            }
            let count = if pr.shape_from_subjects { self.alloc.size(j) } else { m_j };
            let a = pr.a + 0.5 * count as f64;
            let sigma2 = inverse_gamma(a, b, rng);
            let prec = DMatrix::from_row_slice(2, 2, &[k_inv[0][0], k_inv[0][1], k_inv[1][0], k_inv[1][1]]);
            let draw = mvn_from_precision(&prec, &DVector::from_row_slice(&rhs), sigma2, rng)
                .ok_or_else(|| Error::NumericalFailure("cluster precision not positive definite".into()))?;
            self.params[j] = RecClusterParams {
                alpha_c: draw[0],
                psi: draw[1],
                sigma2,
            };
        }
        Ok(())
    }

    /// Replaces the whole auxiliary pool with fresh base-measure draws.
    pub fn refresh_pool<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let r = self.config.prior.r;
        self.pool.clear();
        self.pool.extend((0..r).map(|_| draw_from_prior(&self.config.prior, rng)));
    }

    /// Reallocates subject `i` among the existing blocks and the `R`
    /// auxiliary clusters. An emptied block's parameters replace a uniformly
    /// chosen auxiliary; a consumed auxiliary is replaced by a fresh draw.
    pub fn reassign_subject<R: Rng + ?Sized>(&mut self, i: usize, rng: &mut R) -> Result<()> {
        if self.pool.len() != self.config.prior.r {
            self.refresh_pool(rng);
        }
        let x = covariates_for(self.data, self.config);
        let removal = self.alloc.remove(i, x)?;
        if let Some(th) = apply_removal(&mut self.params, removal) {
            let slot = rng.gen_range(0..self.pool.len());
            self.pool[slot] = th;
        }
        self.alloc
            .log_prior_weights(i, self.u, &self.config.ngg, &self.config.similarity, x, &mut self.weights)?;
        let k = self.alloc.n_blocks();
        let new_block = self.weights.pop().expect("new-block weight") - (self.pool.len() as f64).ln();
        for j in 0..k {
            self.weights[j] += self.log_lik_given(i, &self.params[j]);
        }
        for r in 0..self.pool.len() {
            let w = new_block + self.log_lik_given(i, &self.pool[r]);
            self.weights.push(w);
        }
        let choice = sample_log_weights(&self.weights, rng);
        if choice < k {
            self.alloc.insert(i, choice, x)?;
        } else {
            let r = choice - k;
            self.alloc.insert(i, k, x)?;
            self.params.push(self.pool[r]);
            self.pool[r] = draw_from_prior(&self.config.prior, rng);
        }
        Ok(())
    }

    pub fn update_u<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let (u, _) = self.u_sampler.step(self.u, self.data.n_subjects(), self.alloc.n_blocks(), &self.config.ngg, rng);
        self.u = u;
    }

    /// One sweep in the order: latents, censored gaps, `β₀`, `β_t`, `ξ²`,
    /// block parameters, allocations, `u`; then canonical relabeling.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.update_eta(rng);
        self.impute_censored(rng);
        self.update_beta0(rng)?;
        self.update_beta_t(rng)?;
        self.update_xi2(rng);
        self.update_cluster_params(rng)?;
        self.refresh_pool(rng);
        for i in 0..self.data.n_subjects() {
            self.reassign_subject(i, rng)?;
        }
        self.update_u(rng);
        let order = self.alloc.canonicalize();
        reorder(&mut self.params, &order);
        Ok(())
    }

    /// Per-subject log density of the observed gaps with the latent
    /// variables integrated out (skew-normal terms).
    pub fn log_lik(&self) -> Vec<f64> {
        (0..self.data.n_subjects())
            .map(|i| {
                let th = self.params[self.alloc.label(i)];
                let fixed = self.fixed_part(i);
                (0..self.data.subjects[i].n_observed())
                    .map(|t| skew_normal_logpdf(self.data.subjects[i].y[t], th.alpha_c + fixed + self.time_part(i, t), th.psi, th.sigma2))
                    .sum()
            })
            .collect()
    }

    pub fn draw(&self, iteration: usize) -> Draw<RecClusterParams, RecExtra> {
        Draw {
            iteration,
            partition: self.partition(),
            u: self.u,
            params: self.params.clone(),
            log_lik: self.log_lik(),
            extra: RecExtra {
                regression: self.reg.clone(),
                censored: self.censored.clone(),
            },
        }
    }
}

fn covariates_for<'a>(data: &'a RecurrentDataset, config: &RecurrentConfig) -> Option<&'a MixedCovariateMatrix> {
    (!config.similarity.is_constant()).then_some(data.covariates())
}

pub type RecurrentTrace = TraceStore<RecClusterParams, RecExtra>;

/// Runs one chain: `n_iter` sweeps, the first `n_burnin` discarded.
pub fn run_chain_recurrent<R: Rng + ?Sized>(data: &RecurrentDataset, config: &RecurrentConfig, rng: &mut R) -> Result<RecurrentTrace> {
    config.validate(data)?;
    let mut trace = TraceStore::default();
    if config.sampler.n_iter == 0 {
        return Ok(trace);
    }
    let mut chain = RecurrentChain::new(data, config, rng)?;
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

/// Covariates of a subject not in the fitted sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NewSubject {
    pub x_fixed: Vec<f64>,
    /// occasion covariates for each predicted gap
    pub x_time: Vec<Vec<f64>>,
    /// static covariates `(continuous, binary)` for the partition prior
    pub covariates: (Vec<f64>, Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecPrediction {
    /// `draws[h][g][t]`: log gap `t` of new subject `h` at iteration `g`
    pub draws: Vec<Vec<Vec<f64>>>,
    /// predictive mean of each log gap, block choice and latent integrated out
    pub mean: Vec<Vec<f64>>,
}

/// Predictive log gap-times of new subjects treated as missing data.
pub fn predict_new_subject<R: Rng + ?Sized>(
    trace: &RecurrentTrace,
    data: &RecurrentDataset,
    config: &RecurrentConfig,
    new: &[NewSubject],
    rng: &mut R,
) -> Result<RecPrediction> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    for s in new {
        if s.x_fixed.len() != data.p1() {
            return Err(Error::DimensionMismatch {
                expected: data.p1(),
                found: s.x_fixed.len(),
            });
        }
        if let Some(r) = s.x_time.iter().find(|r| r.len() != data.p2()) {
            return Err(Error::DimensionMismatch {
                expected: data.p2(),
                found: r.len(),
            });
        }
    }
    let n = data.n_subjects();
    let rows: Vec<(Vec<f64>, Vec<u8>)> = new.iter().map(|s| s.covariates.clone()).collect();
    let x_aug = data.covariates().with_extra_rows(&rows)?;
    let idx: Vec<usize> = (n..n + new.len()).collect();
    let mut draws: Vec<Vec<Vec<f64>>> = new.iter().map(|_| Vec::with_capacity(trace.len())).collect();
    let mut mean: Vec<Vec<f64>> = new.iter().map(|s| vec![0.0; s.x_time.len()]).collect();
    let prior_loc = config.prior.alpha0 + config.prior.psi0 * HALF_NORMAL_MEAN;
    for d in &trace.draws {
        let probs = predictive_log_probs(&d.partition, d.u, &config.ngg, &config.similarity, Some(&x_aug), &idx)?;
        let reg = &d.extra.regression;
        for (h, s) in new.iter().enumerate() {
            let k = d.params.len();
            let lp = &probs[h];
            let block_loc: f64 = d.params.iter().zip(lp).map(|(th, l)| l.exp() * (th.alpha_c + th.psi * HALF_NORMAL_MEAN)).sum::<f64>()
                + lp[k].exp() * prior_loc;
            let j = sample_log_weights(lp, rng);
            let th = if j < k { d.params[j] } else { draw_from_prior(&config.prior, rng) };
            let fixed = dot(&reg.beta0, &s.x_fixed);
            let mut path = Vec::with_capacity(s.x_time.len());
            for (t, xt) in s.x_time.iter().enumerate() {
                let (time_mean, bt) = match reg.beta_t.get(t) {
                    Some(b) => (dot(b, xt), b.clone()),
                    // beyond the fitted horizon: β_t from its prior
                    None => (0.0, reg.xi2.iter().map(|v| v.sqrt() * std_normal(rng)).collect()),
                };
                mean[h][t] += block_loc + fixed + time_mean;
                let eta = std_normal_lower_truncated(0.0, rng);
                path.push(th.alpha_c + fixed + dot(&bt, xt) + th.psi * eta + th.sigma2.sqrt() * std_normal(rng));
            }
            draws[h].push(path);
        }
    }
    for m in mean.iter_mut().flatten() {
        *m /= trace.len() as f64;
    }
    Ok(RecPrediction { draws, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::MetricChoice;
    use crate::stats::{mean_and_se, truncated_normal_lower_mean};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, rng: &mut ChaCha8Rng) -> RecurrentDataset {
        let subjects = (0..n)
            .map(|i| {
                let alpha = if i % 2 == 0 { 10.0 } else { -10.0 };
                let m = 2 + i % 3;
                Subject {
                    id: format!("s{i}"),
                    y: (0..m).map(|_| alpha + 0.3 * std_normal(rng)).collect(),
                    censor_bound: alpha - 1.0,
                    x_fixed: vec![rng.gen::<f64>() - 0.5],
                    x_time: (0..=m).map(|t| vec![0.1 * t as f64]).collect(),
                }
            })
            .collect();
        let cov = MixedCovariateMatrix::new(DMatrix::from_fn(n, 1, |_, _| rng.gen::<f64>()), vec![], MetricChoice::Empirical).unwrap();
        RecurrentDataset::new(subjects, cov).unwrap()
    }

    fn config(n_iter: usize, n_burnin: usize) -> RecurrentConfig {
        RecurrentConfig {
            ngg: NggParams::new(0.5, 0.2).unwrap(),
            similarity: SimilarityConfig::one(),
            prior: RecPriorConfig {
                kappa0: 1000.0,
                ..RecPriorConfig::standard(1)
            },
            sampler: SamplerConfig {
                n_iter,
                n_burnin,
                ..Default::default()
            },
        }
    }

    #[test]
    fn censor_bound_formula() {
        let b = censor_bound(&[100f64.ln(), 121f64.ln()], 400.0).unwrap();
        assert_relative_eq!(b, 179f64.ln(), max_relative = 1e-14);
        assert!(censor_bound(&[100f64.ln(), 121f64.ln()], 200.0).is_none());
    }

    #[test]
    fn dataset_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = toy(4, &mut rng);
        let mut bad = d.subjects().to_vec();
        bad[1].x_time.pop();
        assert!(RecurrentDataset::new(bad, d.covariates().clone()).is_err());
        assert_eq!(d.horizon(), 5);
    }

    #[test]
    fn recovers_two_groups() {
        let mut hits = 0;
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = toy(16, &mut rng);
            let cfg = config(200, 199);
            let trace = run_chain_recurrent(&data, &cfg, &mut rng).unwrap();
            let truth = Partition::from_labels(&(0..16).map(|i| i % 2).collect::<Vec<_>>());
            hits += (trace.draws[0].partition == truth) as usize;
            assert!(trace.draws[0]
                .extra
                .censored
                .iter()
                .zip(data.subjects())
                .all(|(c, s)| *c >= s.censor_bound));
        }
        assert_eq!(hits, 10);
    }

    #[test]
    fn eta_conditional_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = toy(6, &mut rng);
        let cfg = config(1, 0);
        let mut chain = RecurrentChain::new(&data, &cfg, &mut rng).unwrap();
        chain.params.iter_mut().for_each(|p| {
            p.psi = 1.0;
            p.sigma2 = 1.0
        });
        let th = chain.params[chain.alloc.label(0)];
        let r = data.subject(0).y[0] - th.alpha_c - chain.fixed_part(0) - chain.time_part(0, 0);
        let expected = truncated_normal_lower_mean(r / 2.0, 0.5, 0.0);
        let draws: Vec<f64> = (0..50_000)
            .map(|_| {
                chain.update_eta(&mut rng);
                chain.eta[0][0]
            })
            .collect();
        let (m, se) = mean_and_se(&draws);
        assert!((m - expected).abs() < 3.0 * se, "{m} vs {expected}");
    }

    #[test]
    fn bookkeeping() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = toy(10, &mut rng);
        let trace = run_chain_recurrent(&data, &config(25, 5), &mut rng).unwrap();
        assert_eq!(trace.len(), 20);
        for d in &trace.draws {
            assert_eq!(d.params.len(), d.partition.n_blocks());
            assert_eq!(d.extra.regression.beta_t.len(), data.horizon());
        }
        let new = NewSubject {
            x_fixed: vec![0.0],
            x_time: vec![vec![0.0]; 7],
            covariates: (vec![0.5], vec![]),
        };
        let pred = predict_new_subject(&trace, &data, &config(25, 5), &[new], &mut rng).unwrap();
        assert_eq!(pred.draws[0].len(), 20);
        assert_eq!(pred.draws[0][0].len(), 7);
    }
}
