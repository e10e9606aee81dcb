//! The covariate-dependent partition prior: exact small-n masses by
//! quadrature over `u`, and simulation by a Gibbs run without likelihood.

use std::collections::HashMap;

use rand::Rng;

use crate::allocation::Allocation;
use crate::cohesion::{default_proposal_sd, log_cohesion, u_mode, NggParams, UKernel, USampler};
use crate::covariates::MixedCovariateMatrix;
use crate::error::{Error, Result};
use crate::partition::{enumerate_partitions, Partition};
use crate::quadrature::log_integrate_exp;
use crate::similarity::{compactness, log_similarity, SimilarityConfig};
use crate::stats::{ln_gamma, sample_log_weights};

/// Relative tolerance of the `u` quadrature.
pub const EPPF_REL_TOL: f64 = 1e-10;

/// Largest `n` accepted by [`brute_force_eppf`].
pub const BRUTE_FORCE_MAX_N: usize = 8;

/// `log ∫ D(u, n) Π_j c(u, n_j) du` for block sizes `sizes`, integrated over
/// `v = log u`.
pub fn log_eppf(sizes: &[usize], params: &NggParams) -> Result<f64> {
    let n: usize = sizes.iter().sum();
    if n == 0 || sizes.contains(&0) {
        return Err(Error::EmptyBlock { label: 0 });
    }
    let nf = n as f64;
    let lg_n = ln_gamma(nf);
    log_integrate_exp(
        |v| {
            let u = v.exp();
            let mut l = nf * v - lg_n - params.psi(u);
            for &s in sizes {
                l += log_cohesion(u, s, params);
            }
            l
        },
        EPPF_REL_TOL,
    )
}

/// Probability of every set partition of `n ≤ 8` items under the NGG eppf.
/// Partitions with the same block-size multiset share one quadrature.
pub fn brute_force_eppf(n: usize, params: &NggParams) -> Result<Vec<(Partition, f64)>> {
    if n == 0 || n > BRUTE_FORCE_MAX_N {
        return Err(Error::SizeMismatch {
            expected: BRUTE_FORCE_MAX_N,
            found: n,
        });
    }
    let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();
    enumerate_partitions(n)
        .into_iter()
        .map(|p| {
            let mut key = p.sizes().to_vec();
            key.sort_unstable();
            let lp = match cache.get(&key) {
                Some(&v) => v,
                None => {
                    let v = log_eppf(&key, params)?;
                    cache.insert(key, v);
                    v
                }
            };
            Ok((p, lp.exp()))
        })
        .collect()
}

/// Unnormalized log prior mass `log ∫ D Π c(u, n_j) g(x*_j) du` of one
/// partition. Summed over all partitions this is at most one.
pub fn log_ppmx_mass(partition: &Partition, params: &NggParams, sim: &SimilarityConfig, x: &MixedCovariateMatrix) -> Result<f64> {
    let mut l = log_eppf(partition.sizes(), params)?;
    if !sim.is_constant() {
        for block in partition.blocks() {
            l += log_similarity(compactness(&block, x)?.d_total, sim);
        }
    }
    Ok(l)
}

/// Gibbs sampler on `(ρ, u)` under the prior alone.
#[derive(Debug, Clone)]
pub struct PriorGibbs<'a> {
    params: NggParams,
    sim: SimilarityConfig,
    x: Option<&'a MixedCovariateMatrix>,
    alloc: Allocation,
    u: f64,
    u_sampler: USampler,
    weights: Vec<f64>,
}

impl<'a> PriorGibbs<'a> {
    /// Starts from all singletons with `u` at its conditional mode. `x` is
    /// required unless `sim` is constant.
    pub fn new(n: usize, params: NggParams, sim: SimilarityConfig, x: Option<&'a MixedCovariateMatrix>) -> Result<Self> {
        params.validate()?;
        sim.validate()?;
        if n == 0 {
            return Err(Error::SizeMismatch { expected: 1, found: 0 });
        }
        if let Some(x) = x {
            if x.n_items() != n {
                return Err(Error::SizeMismatch {
                    expected: n,
                    found: x.n_items(),
                });
            }
        } else if !sim.is_constant() {
            return Err(Error::config("similarity.family", "covariates are required for a non-constant similarity"));
        }
        let start = Partition::singletons(n);
        let alloc = Allocation::new(&start, x, &sim)?;
        let u = u_mode(n, n, &params).max(1e-3);
        Ok(PriorGibbs {
            params,
            sim,
            x,
            alloc,
            u,
            u_sampler: USampler::new(default_proposal_sd(u)),
            weights: Vec::new(),
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

    pub fn set_u_kernel(&mut self, kernel: UKernel) {
        self.u_sampler.kernel = kernel;
    }

    /// Stops adapting the `u` proposal scale.
    pub fn freeze_proposal(&mut self) {
        self.u_sampler.adapting = false;
    }

    /// One sweep: `u`, then every item in turn.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let n = self.alloc.n_items();
        let (u, _) = self.u_sampler.step(self.u, n, self.alloc.n_blocks(), &self.params, rng);
        self.u = u;
        for i in 0..n {
            self.alloc.remove(i, self.x)?;
            self.alloc
                .log_prior_weights(i, self.u, &self.params, &self.sim, self.x, &mut self.weights)?;
            let j = sample_log_weights(&self.weights, rng);
            self.alloc.insert(i, j, self.x)?;
        }
        Ok(())
    }
}

/// One approximate draw from the prior: the state after `n_sweeps` sweeps
/// from all singletons.
pub fn sample_prior_partition<R: Rng + ?Sized>(
    n: usize,
    params: &NggParams,
    sim: &SimilarityConfig,
    x: Option<&MixedCovariateMatrix>,
    n_sweeps: usize,
    rng: &mut R,
) -> Result<Partition> {
    let mut g = PriorGibbs::new(n, *params, *sim, x)?;
    for _ in 0..n_sweeps {
        g.sweep(rng)?;
    }
    Ok(g.partition())
}

/// Block counts of `n_draws` prior partitions taken every `thin` sweeps of
/// one chain after `burn_in` sweeps (the `u` scale adapts during burn-in).
pub fn prior_block_counts<R: Rng + ?Sized>(
    n: usize,
    params: &NggParams,
    n_draws: usize,
    thin: usize,
    burn_in: usize,
    kernel: UKernel,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut g = PriorGibbs::new(n, *params, SimilarityConfig::one(), None)?;
    g.set_u_kernel(kernel);
    for _ in 0..burn_in {
        g.sweep(rng)?;
    }
    g.freeze_proposal();
    let mut out = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        for _ in 0..thin.max(1) {
            g.sweep(rng)?;
        }
        out.push(g.n_blocks());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dirichlet_limit_n3() {
        let p = NggParams::new(1.0, 1e-8).unwrap();
        let probs = brute_force_eppf(3, &p).unwrap();
        for (part, pr) in &probs {
            let expected = match part.n_blocks() {
                1 => 1.0 / 3.0,
                _ => 1.0 / 6.0,
            };
            assert_relative_eq!(*pr, expected, max_relative = 1e-6);
        }
    }

    #[test]
    fn exact_dp_branch_matches_closed_form() {
        // κ^k Π (n_j − 1)! Γ(κ)/Γ(κ + n)
        let kappa = 0.7;
        let p = NggParams::new(kappa, 0.0).unwrap();
        for sizes in [vec![2usize, 1, 3], vec![4], vec![1, 1, 1, 1]] {
            let n: usize = sizes.iter().sum();
            let mut l = ln_gamma(kappa) - ln_gamma(kappa + n as f64);
            for &s in &sizes {
                l += kappa.ln() + ln_gamma(s as f64);
            }
            assert_relative_eq!(log_eppf(&sizes, &p).unwrap(), l, max_relative = 1e-9);
        }
    }

    #[test]
    fn sums_to_one() {
        for &(k, s) in &[(1.0, 0.0), (1.0, 0.3), (0.5, 0.15), (0.001, 0.2)] {
            let p = NggParams::new(k, s).unwrap();
            for n in [1, 4, 6] {
                let total: f64 = brute_force_eppf(n, &p).unwrap().iter().map(|(_, q)| q).sum();
                assert!((total - 1.0).abs() < 1e-8, "κ={k} σ={s} n={n}: {total}");
            }
        }
    }

    #[test]
    fn size_limits() {
        let p = NggParams::new(1.0, 0.1).unwrap();
        assert!(brute_force_eppf(9, &p).is_err());
        assert!(brute_force_eppf(0, &p).is_err());
    }

    #[test]
    fn single_item_prior() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(2);
        let p = NggParams::new(0.4, 0.3).unwrap();
        let part = sample_prior_partition(1, &p, &SimilarityConfig::one(), None, 20, &mut rng).unwrap();
        assert_eq!(part.n_blocks(), 1);
    }
}
