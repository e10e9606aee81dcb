//! End-to-end benchmark protocols: the three-group misclassification study
//! and the subsampling rMSE harness over covariate cells.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cohesion::NggParams;
use crate::conjugate::{predict_conjugate, run_chain_conjugate, ConjPriorConfig, ConjugateConfig};
use crate::error::{Error, Result};
use crate::io::config::RunConfig;
use crate::io::data::RegressionTable;
use crate::io::output::chain_rng;
use crate::simulate::simulate_appendix_e;
use crate::similarity::{SimilarityConfig, SimilarityFamily};
use crate::summaries::{estimate_partition_vi, misclassification_rate, similarity_matrix};
use crate::trace::SamplerConfig;

/// Settings of the three-group study for one similarity family: κ = 0.3,
/// σ = 0.2, λ = 0.5 (α = 1), `β | σ² ~ N₅(0, σ²/0.01 · I)`, `σ² ~ IG(2, 1)`.
pub fn appendix_e_config(family: SimilarityFamily, sampler: SamplerConfig) -> ConjugateConfig {
    ConjugateConfig {
        ngg: NggParams { kappa: 0.3, sigma: 0.2 },
        similarity: SimilarityConfig {
            family,
            lambda: 0.5,
            alpha: 1.0,
        },
        prior: ConjPriorConfig::isotropic(5, 0.0, 100.0, 2.0, 1.0).expect("valid prior"),
        sampler,
    }
}

/// 10⁴ burn-in sweeps followed by 5·10³ retained ones.
pub fn appendix_e_sampler() -> SamplerConfig {
    SamplerConfig {
        n_iter: 15_000,
        n_burnin: 10_000,
        ..SamplerConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppendixEResult {
    pub family: SimilarityFamily,
    pub seed: u64,
    pub misclassification: f64,
    pub estimated_blocks: usize,
    pub mean_blocks: f64,
    pub u_acceptance: f64,
}

/// Simulates the data of `seed` and fits one family. All families share the
/// data of a seed; the chain runs on stream 1 of the seed.
pub fn run_appendix_e(seed: u64, family: SimilarityFamily, sampler: SamplerConfig) -> Result<AppendixEResult> {
    let sim = simulate_appendix_e(&mut ChaCha8Rng::seed_from_u64(seed));
    let config = appendix_e_config(family, sampler);
    let trace = run_chain_conjugate(&sim.data, &config, &mut chain_rng(seed, 1))?;
    let partitions = trace.partitions();
    let psm = similarity_matrix(&partitions)?;
    let (estimate, _) = estimate_partition_vi(&partitions, &psm)?;
    let counts = trace.block_counts();
    Ok(AppendixEResult {
        family,
        seed,
        misclassification: misclassification_rate(&estimate, &sim.truth)?,
        estimated_blocks: estimate.n_blocks(),
        mean_blocks: counts.iter().sum::<usize>() as f64 / counts.len().max(1) as f64,
        u_acceptance: trace.u_acceptance,
    })
}

/// Root MSE of the posterior predictive mean in one covariate cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellError {
    pub continuous: Vec<f64>,
    pub binary: Vec<u8>,
    /// mean response of the cell in the full data
    pub reference: f64,
    pub rmse: f64,
}

fn distinct_cells(table: &RegressionTable) -> Vec<usize> {
    let mut seen: Vec<usize> = Vec::new();
    for i in 0..table.n_items() {
        if !seen.iter().any(|&j| table.continuous[j] == table.continuous[i] && table.binary[j] == table.binary[i]) {
            seen.push(i);
        }
    }
    seen
}

/// Draws `config.subsamples` subsets of `config.subsample_size` rows, fits
/// each with an empirical-Bayes base measure (`μ₀ = (ȳ, 0, …)`,
/// `B₀ = prior.B0_scale · I`, `b₀ = s²_y (a₀ − 1)` so the prior mean of σ²
/// is the sample variance), and compares the predictive mean of every
/// distinct covariate cell with the cell mean of the full data.
pub fn appendix_f_harness<R: Rng + ?Sized>(table: &RegressionTable, config: &RunConfig, rng: &mut R) -> Result<Vec<CellError>> {
    let n = table.n_items();
    let size = config.subsample_size;
    if size < 3 || size > n {
        return Err(Error::config("benchmark.subsample_size", format!("must lie in 3..={n}")));
    }
    if config.subsamples == 0 {
        return Err(Error::config("benchmark.subsamples", "must be at least 1"));
    }
    if !(config.a0 > 1.0) {
        return Err(Error::config("prior.a0", "must exceed 1 for the empirical-Bayes base measure"));
    }
    let cells = distinct_cells(table);
    let reference: Vec<f64> = cells
        .iter()
        .map(|&c| {
            let ys: Vec<f64> = (0..n)
                .filter(|&i| table.continuous[i] == table.continuous[c] && table.binary[i] == table.binary[c])
                .map(|i| table.y[i])
                .collect();
            ys.iter().sum::<f64>() / ys.len() as f64
        })
        .collect();
    let p = 1 + table.continuous_names.len() + table.binary_names.len();
    let design_new = DMatrix::from_row_slice(cells.len(), p, &cells.iter().flat_map(|&c| table.design_row(c)).collect::<Vec<_>>());
    let cov_new: Vec<(Vec<f64>, Vec<u8>)> = cells.iter().map(|&c| (table.continuous[c].clone(), table.binary[c].clone())).collect();
    let mut sse = vec![0.0; cells.len()];
    for _ in 0..config.subsamples {
        let mut picked = sample_indices(rng, n, size).into_vec();
        picked.sort_unstable();
        let sub = RegressionTable {
            continuous_names: table.continuous_names.clone(),
            binary_names: table.binary_names.clone(),
            y: picked.iter().map(|&i| table.y[i]).collect(),
            continuous: picked.iter().map(|&i| table.continuous[i].clone()).collect(),
            binary: picked.iter().map(|&i| table.binary[i].clone()).collect(),
        };
        let data = sub.to_data(config.metric)?;
        let ybar = sub.y.iter().sum::<f64>() / size as f64;
        let s2 = sub.y.iter().map(|y| (y - ybar).powi(2)).sum::<f64>() / (size - 1) as f64;
        let mut mu0 = DVector::zeros(p);
        mu0[0] = ybar;
        let prior = ConjPriorConfig::new(mu0, DMatrix::identity(p, p) * config.b0_scale, config.a0, s2 * (config.a0 - 1.0))?;
        let fit_config = ConjugateConfig {
            ngg: config.ngg,
            similarity: config.similarity(&data.covariates, rng)?,
            prior,
            sampler: config.sampler.clone(),
        };
        let trace = run_chain_conjugate(&data, &fit_config, rng)?;
        let pred = predict_conjugate(&trace, &data, &fit_config, &design_new, &cov_new, rng)?;
        for (e, (m, r)) in sse.iter_mut().zip(pred.mean.iter().zip(&reference)) {
            *e += (m - r).powi(2);
        }
    }
    Ok(cells
        .iter()
        .zip(reference)
        .zip(sse)
        .map(|((&c, reference), e)| CellError {
            continuous: table.continuous[c].clone(),
            binary: table.binary[c].clone(),
            reference,
            rmse: (e / config.subsamples as f64).sqrt(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::config::FlatConfig;

    #[test]
    fn harness_on_a_small_grid() {
        // two cells with well separated means
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 60;
        let table = RegressionTable {
            continuous_names: vec![],
            binary_names: vec!["g".into()],
            y: (0..n).map(|i| if i % 2 == 0 { 0.0 } else { 10.0 } + 0.1 * rng.gen::<f64>()).collect(),
            continuous: vec![vec![]; n],
            binary: (0..n).map(|i| vec![(i % 2) as u8]).collect(),
        };
        let flat = FlatConfig::parse(
            "sampler.n_iter = 60\nsampler.n_burnin = 20\nbenchmark.subsamples = 3\nbenchmark.subsample_size = 30\nsimilarity.family = gC\nsimilarity.metric = identity",
        )
        .unwrap();
        let cfg = RunConfig::from_flat(&flat).unwrap();
        let cells = appendix_f_harness(&table, &cfg, &mut rng).unwrap();
        assert_eq!(cells.len(), 2);
        assert!((cells[1].reference - 10.05).abs() < 0.05);
        assert!(cells.iter().all(|c| c.rmse < 1.0), "{cells:?}");
    }
}
