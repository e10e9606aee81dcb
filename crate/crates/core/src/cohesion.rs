//! Normalized generalized gamma (NGG) cohesions and the auxiliary variable `u`.

use crate::error::{Error, Result};
use crate::stats::{ln_gamma, log_ndtr, std_normal, std_normal_lower_truncated};
use rand::Rng;

/// Total mass κ and discount σ of the NGG process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NggParams {
    pub kappa: f64,
    pub sigma: f64,
}

impl NggParams {
    pub fn new(kappa: f64, sigma: f64) -> Result<Self> {
        let p = NggParams { kappa, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::config("ngg.kappa", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.sigma) {
            return Err(Error::config("ngg.sigma", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// `Ψ(u) = (κ/σ)((1+u)^σ − 1)`, or `κ log(1+u)` when σ = 0.
    pub fn psi(&self, u: f64) -> f64 {
        let l = u.ln_1p();
        if self.sigma == 0.0 {
            self.kappa * l
        } else {
            self.kappa * (self.sigma * l).exp_m1() / self.sigma
        }
    }
}

/// `log c(u, n_j) = log κ + log Γ(n_j − σ) − log Γ(1 − σ) − (n_j − σ) log(1+u)`.
pub fn log_cohesion(u: f64, nj: usize, params: &NggParams) -> f64 {
    debug_assert!(nj >= 1);
    let s = params.sigma;
    let nj = nj as f64;
    params.kappa.ln() + ln_gamma(nj - s) - ln_gamma(1.0 - s) - (nj - s) * u.ln_1p()
}

/// Log weight of joining a block of current size `nj`:
/// `log c(u, n_j+1) − log c(u, n_j)` for `nj > 0`, and `log c(u, 1)` for a
/// new block (`nj == 0`), so both live on the same scale.
pub fn log_cohesion_ratio(u: f64, nj: usize, params: &NggParams) -> f64 {
    if nj > 0 {
        (nj as f64 - params.sigma).ln() - u.ln_1p()
    } else {
        params.kappa.ln() + (params.sigma - 1.0) * u.ln_1p()
    }
}

/// Unnormalized log full conditional of `u` given `k` blocks over `n` items:
/// `(n−1) log u − (n − σk) log(1+u) − Ψ(u)`.
pub fn log_u_density_unnorm(u: f64, n: usize, k: usize, params: &NggParams) -> f64 {
    if u <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let n = n as f64;
    let k = k as f64;
    let head = if n > 1.0 { (n - 1.0) * u.ln() } else { 0.0 };
    head - (n - params.sigma * k) * u.ln_1p() - params.psi(u)
}

/// Mode of the `u` full conditional (0 when `n == 1`).
pub fn u_mode(n: usize, k: usize, params: &NggParams) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    // derivative in v = log u: (n−1) − (n−σk) u/(1+u) − κ u (1+u)^{σ−1},
    // strictly decreasing in v
    let (nf, kf) = (n as f64, k as f64);
    let deriv = |v: f64| {
        let u = v.exp();
        let w = u / (1.0 + u);
        (nf - 1.0) - (nf - params.sigma * kf) * w - params.kappa * u * ((params.sigma - 1.0) * u.ln_1p()).exp()
    };
    let (mut lo, mut hi) = (-50.0f64, 50.0f64);
    while deriv(hi) > 0.0 && hi < 5000.0 {
        hi *= 2.0;
    }
    while deriv(lo) < 0.0 && lo > -5000.0 {
        lo *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if deriv(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// Transition kernel used for `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UKernel {
    /// Gaussian random walk on `u` truncated to `(0, ∞)`
    #[default]
    TruncatedNormal,
    /// Gaussian random walk on `log u`
    LogNormal,
    /// one step of each, in that order
    Both,
}

impl std::str::FromStr for UKernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "truncated-normal" => Ok(UKernel::TruncatedNormal),
            "log-normal" => Ok(UKernel::LogNormal),
            "both" => Ok(UKernel::Both),
            other => Err(Error::config(
                "sampler.u_kernel",
                format!("unknown kernel `{other}` (truncated-normal, log-normal, both)"),
            )),
        }
    }
}

impl std::fmt::Display for UKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UKernel::TruncatedNormal => "truncated-normal",
            UKernel::LogNormal => "log-normal",
            UKernel::Both => "both",
        })
    }
}

#[derive(Debug, Clone)]
struct Adaptive {
    scale: f64,
    steps: u64,
    accepted: u64,
}

impl Adaptive {
    fn new(scale: f64) -> Self {
        Adaptive { scale, steps: 0, accepted: 0 }
    }

    fn record(&mut self, accepted: bool, adapting: bool) {
        self.steps += 1;
        self.accepted += accepted as u64;
        if adapting {
            let gain = (self.steps as f64 + 10.0).powf(-0.6).max(0.01);
            let a = if accepted { 1.0 } else { 0.0 };
            self.scale *= (gain * (a - TARGET_ACCEPTANCE)).exp();
        }
    }
}

const TARGET_ACCEPTANCE: f64 = 0.44;

/// Metropolis–Hastings updates of `u`. Proposal scales adapt towards 0.44
/// acceptance while `adapting` is set and are frozen afterwards.
#[derive(Debug, Clone)]
pub struct USampler {
    pub kernel: UKernel,
    pub adapting: bool,
    linear: Adaptive,
    log: Adaptive,
}

impl USampler {
    pub fn new(proposal_sd: f64) -> Self {
        Self::with_kernel(UKernel::TruncatedNormal, proposal_sd)
    }

    pub fn with_kernel(kernel: UKernel, proposal_sd: f64) -> Self {
        USampler {
            kernel,
            adapting: true,
            linear: Adaptive::new(proposal_sd),
            log: Adaptive::new(1.0),
        }
    }

    pub fn proposal_sd(&self) -> f64 {
        self.linear.scale
    }

    pub fn log_proposal_sd(&self) -> f64 {
        self.log.scale
    }

    /// Acceptance rate over all steps so far.
    pub fn acceptance_rate(&self) -> f64 {
        let steps = self.linear.steps + self.log.steps;
        if steps == 0 {
            0.0
        } else {
            (self.linear.accepted + self.log.accepted) as f64 / steps as f64
        }
    }

    /// One update. Returns the new `u` and whether any proposal was accepted.
    pub fn step<R: Rng + ?Sized>(&mut self, u: f64, n: usize, k: usize, params: &NggParams, rng: &mut R) -> (f64, bool) {
        let mut u = u;
        let mut any = false;
        if matches!(self.kernel, UKernel::TruncatedNormal | UKernel::Both) {
            let (next, acc) = mh_step_u(u, self.linear.scale, n, k, params, rng);
            self.linear.record(acc, self.adapting);
            if self.adapting {
                self.linear.scale = self.linear.scale.clamp(1e-8 * (1.0 + next), 1e3 * (1.0 + next));
            }
            u = next;
            any |= acc;
        }
        if matches!(self.kernel, UKernel::LogNormal | UKernel::Both) {
            let (next, acc) = mh_step_log_u(u, self.log.scale, n, k, params, rng);
            self.log.record(acc, self.adapting);
            if self.adapting {
                self.log.scale = self.log.scale.clamp(1e-4, 50.0);
            }
            u = next;
            any |= acc;
        }
        (u, any)
    }
}

/// One random-walk step on `log u` (Jacobian included).
pub fn mh_step_log_u<R: Rng + ?Sized>(u: f64, sd: f64, n: usize, k: usize, params: &NggParams, rng: &mut R) -> (f64, bool) {
    let v = u.ln();
    let proposal = (v + sd * std_normal(rng)).exp();
    if !(proposal > 0.0 && proposal.is_finite()) {
        return (u, false);
    }
    let log_ratio = log_u_density_unnorm(proposal, n, k, params) + proposal.ln() - log_u_density_unnorm(u, n, k, params) - v;
    if log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio {
        (proposal, true)
    } else {
        (u, false)
    }
}

/// Initial proposal scale: half the mode (at least 0.1).
pub fn default_proposal_sd(u0: f64) -> f64 {
    (0.5 * u0).max(0.1)
}

/// One truncated-Gaussian MH step targeting [`log_u_density_unnorm`].
pub fn mh_step_u<R: Rng + ?Sized>(u: f64, sd: f64, n: usize, k: usize, params: &NggParams, rng: &mut R) -> (f64, bool) {
    // u' ~ N(u, sd²) restricted to (0, ∞)
    let z = std_normal_lower_truncated(-u / sd, rng);
    let proposal = u + sd * z;
    if proposal <= 0.0 {
        return (u, false);
    }
    // q(u'|u) ∝ φ(·)/Φ(u/sd); the Gaussian kernel is symmetric so only the
    // normalizers survive in the ratio
    let log_ratio = log_u_density_unnorm(proposal, n, k, params) - log_u_density_unnorm(u, n, k, params)
        + log_ndtr(u / sd)
        - log_ndtr(proposal / sd);
    if log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio {
        (proposal, true)
    } else {
        (u, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cohesion_examples() {
        let p = NggParams::new(0.7, 0.3).unwrap();
        let u = 2.5;
        assert_relative_eq!(log_cohesion(u, 1, &p), 0.7f64.ln() + (0.3 - 1.0) * 3.5f64.ln(), max_relative = 1e-14);
        let dp = NggParams::new(1.0, 0.0).unwrap();
        assert_relative_eq!(log_cohesion(0.0, 4, &dp), 6f64.ln(), max_relative = 1e-14);
        // κ Γ(1.85)/Γ(0.85) 2^{-1.85}: Γ(1.85) = 0.94561236149..., Γ(0.85) = 1.11248373...
        let p = NggParams::new(0.5, 0.15).unwrap();
        let reference = (0.5 * 0.945_611_176_5 / 1.112_484_7 * 2f64.powf(-1.85)).ln();
        assert_relative_eq!(log_cohesion(1.0, 2, &p), reference, max_relative = 1e-6);
    }

    #[test]
    fn ratio_examples_and_consistency() {
        let dp = NggParams::new(1.0, 0.0).unwrap();
        assert_relative_eq!(log_cohesion_ratio(0.0, 3, &dp), 3f64.ln());
        let p = NggParams::new(0.5, 0.15).unwrap();
        assert_relative_eq!(log_cohesion_ratio(0.0, 0, &p), 0.5f64.ln());
        for &(u, nj) in &[(0.1, 1), (3.0, 5), (40.0, 17)] {
            let direct = log_cohesion(u, nj + 1, &p) - log_cohesion(u, nj, &p);
            assert_relative_eq!(log_cohesion_ratio(u, nj, &p), direct, max_relative = 1e-12);
        }
        // new block weight equals c(u, 1)
        assert_relative_eq!(log_cohesion_ratio(2.0, 0, &p), log_cohesion(2.0, 1, &p), max_relative = 1e-14);
    }

    #[test]
    fn u_density_examples() {
        let dp = NggParams::new(1.0, 0.0).unwrap();
        assert_relative_eq!(log_u_density_unnorm(1.0, 3, 2, &dp), -4.0 * 2f64.ln(), max_relative = 1e-14);
        let p = NggParams::new(0.5, 0.15).unwrap();
        assert!(log_u_density_unnorm(1e-300, 1, 1, &p).abs() < 1e-12);
        assert_eq!(log_u_density_unnorm(0.0, 3, 1, &p), f64::NEG_INFINITY);
    }

    #[test]
    fn psi_small_sigma_approaches_dp() {
        let a = NggParams::new(1.3, 1e-9).unwrap();
        let b = NggParams::new(1.3, 0.0).unwrap();
        assert_relative_eq!(a.psi(7.0), b.psi(7.0), max_relative = 1e-7);
    }

    #[test]
    fn invalid_params() {
        assert!(NggParams::new(0.0, 0.1).is_err());
        assert!(NggParams::new(1.0, 1.0).is_err());
        assert!(NggParams::new(1.0, -0.1).is_err());
    }
}
