//! Sampler settings shared by both models, initial partitions, and the
//! store of retained draws.

use rand::Rng;

use crate::cohesion::UKernel;
use crate::covariates::MixedCovariateMatrix;
use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::stats::sample_log_weights;

/// How the chain's partition is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitStrategy {
    #[default]
    Singletons,
    OneBlock,
    /// k-means on the (whitened continuous, binary) covariates with `K` centers
    KMeans(usize),
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "singletons" => Ok(InitStrategy::Singletons),
            "one_block" => Ok(InitStrategy::OneBlock),
            _ => match s.strip_prefix("kmeans:").map(str::parse::<usize>) {
                Some(Ok(k)) if k >= 1 => Ok(InitStrategy::KMeans(k)),
                _ => Err(Error::config("sampler.init", format!("expected singletons, one_block or kmeans:K, got `{s}`"))),
            },
        }
    }
}

impl std::fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitStrategy::Singletons => f.write_str("singletons"),
            InitStrategy::OneBlock => f.write_str("one_block"),
            InitStrategy::KMeans(k) => write!(f, "kmeans:{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// total sweeps, burn-in included
    pub n_iter: usize,
    pub n_burnin: usize,
    pub init: InitStrategy,
    pub u_kernel: UKernel,
    /// initial scale of the `u` proposal; derived from the starting state when absent
    pub u_proposal_sd: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_iter: 2000,
            n_burnin: 1000,
            init: InitStrategy::Singletons,
            u_kernel: UKernel::TruncatedNormal,
            u_proposal_sd: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_burnin > self.n_iter {
            return Err(Error::config("sampler.n_burnin", "must not exceed sampler.n_iter"));
        }
        if let Some(sd) = self.u_proposal_sd {
            if !(sd > 0.0 && sd.is_finite()) {
                return Err(Error::config("sampler.u_proposal_sd", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Starting partition for `n` items.
pub fn initial_partition<R: Rng + ?Sized>(
    init: InitStrategy,
    n: usize,
    x: Option<&MixedCovariateMatrix>,
    rng: &mut R,
) -> Result<Partition> {
    match init {
        InitStrategy::Singletons => Ok(Partition::singletons(n)),
        InitStrategy::OneBlock => Ok(Partition::one_block(n)),
        InitStrategy::KMeans(k) => {
            let x = x.ok_or_else(|| Error::config("sampler.init", "kmeans needs covariates"))?;
            Ok(kmeans(&feature_rows(x), k.min(n), rng))
        }
    }
}

fn feature_rows(x: &MixedCovariateMatrix) -> Vec<Vec<f64>> {
    (0..x.n_items())
        .map(|i| {
            let mut r = x.whitened_row(i).to_vec();
            r.extend(x.binary_row(i).iter().map(|&b| b as f64));
            r
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd iterations from a k-means++ seeding. Empty clusters are dropped.
fn kmeans<R: Rng + ?Sized>(rows: &[Vec<f64>], k: usize, rng: &mut R) -> Partition {
    let n = rows.len();
    let mut centers = vec![rows[rng.gen_range(0..n)].clone()];
    while centers.len() < k {
        let w: Vec<f64> = rows
            .iter()
            .map(|r| centers.iter().map(|c| sq_dist(r, c)).fold(f64::INFINITY, f64::min).ln())
            .collect();
        if w.iter().all(|v| *v == f64::NEG_INFINITY) {
            break;
        }
        centers.push(rows[sample_log_weights(&w, rng)].clone());
    }
    let mut labels = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, r) in rows.iter().enumerate() {
            let best = (0..centers.len())
                .min_by(|&a, &b| sq_dist(r, &centers[a]).total_cmp(&sq_dist(r, &centers[b])))
                .expect("at least one center");
            changed |= labels[i] != best;
            labels[i] = best;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = rows.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
            if members.is_empty() {
                continue;
            }
            for (d, v) in center.iter_mut().enumerate() {
                *v = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    Partition::from_labels(&labels)
}

/// One retained iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw<P, E = ()> {
    pub iteration: usize,
    pub partition: Partition,
    pub u: f64,
    /// one entry per block, in canonical block order
    pub params: Vec<P>,
    /// per-item log density of the observed response(s) given the draw
    pub log_lik: Vec<f64>,
    pub extra: E,
}

/// Retained draws of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStore<P, E = ()> {
    pub draws: Vec<Draw<P, E>>,
    /// overall acceptance rate of the `u` updates
    pub u_acceptance: f64,
}

impl<P, E> Default for TraceStore<P, E> {
    fn default() -> Self {
        TraceStore {
            draws: Vec::new(),
            u_acceptance: 0.0,
        }
    }
}

impl<P, E> TraceStore<P, E> {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn partitions(&self) -> Vec<Partition> {
        self.draws.iter().map(|d| d.partition.clone()).collect()
    }

    pub fn log_lik_matrix(&self) -> Vec<Vec<f64>> {
        self.draws.iter().map(|d| d.log_lik.clone()).collect()
    }

    pub fn block_counts(&self) -> Vec<usize> {
        self.draws.iter().map(|d| d.partition.n_blocks()).collect()
    }
}
