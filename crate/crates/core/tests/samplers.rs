use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ppmx::cohesion::UKernel;
use ppmx::conjugate::{ConjPriorConfig, ConjugateChain, ConjugateConfig, RegressionData};
use ppmx::prior::PriorGibbs;
use ppmx::recurrent::{RecPriorConfig, RecurrentChain, RecurrentConfig, RecurrentDataset, Subject};
use ppmx::simulate::{simulate_recurrent_synthetic, RecurrentSimSpec};
use ppmx::summaries::similarity_matrix;
use ppmx::trace::SamplerConfig;
use ppmx::{MetricChoice, MixedCovariateMatrix, NggParams, Partition, SimilarityConfig, SimilarityFamily};

/// Non-adaptive `u` moves on the log scale; `u` spans orders of magnitude
/// under these priors.
fn fixed_scale_sampler() -> SamplerConfig {
    SamplerConfig {
        u_kernel: UKernel::LogNormal,
        ..SamplerConfig::default()
    }
}

/// Mean and batch-means standard error of an autocorrelated series.
fn batch_mean(xs: &[f64]) -> (f64, f64) {
    let batches = 50;
    let len = xs.len() / batches;
    let means: Vec<f64> = xs.chunks_exact(len).map(|c| c.iter().sum::<f64>() / len as f64).collect();
    let m = means.iter().sum::<f64>() / means.len() as f64;
    let v = means.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
    (m, (v / means.len() as f64).sqrt())
}

fn total_variation(a: &[usize], b: &[usize]) -> f64 {
    let top = a.iter().chain(b).copied().max().unwrap_or(0);
    let freq = |xs: &[usize]| {
        let mut f = vec![0.0; top + 1];
        xs.iter().for_each(|&k| f[k] += 1.0 / xs.len() as f64);
        f
    };
    let (fa, fb) = (freq(a), freq(b));
    0.5 * fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn one_dim_covariates(values: &[f64]) -> MixedCovariateMatrix {
    MixedCovariateMatrix::new(DMatrix::from_column_slice(values.len(), 1, values), vec![vec![]; values.len()], MetricChoice::Identity).unwrap()
}

#[test]
fn transition_kernel_preserves_the_prior() {
    let n = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let x = one_dim_covariates(&xs);
    let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
    let config = ConjugateConfig {
        ngg: NggParams::new(1.0, 0.25).unwrap(),
        similarity: SimilarityConfig::new(SimilarityFamily::GC, 0.5, 1.0).unwrap(),
        prior: ConjPriorConfig::isotropic(2, 0.0, 1.0, 3.0, 2.0).unwrap(),
        sampler: fixed_scale_sampler(),
    };

    // alternate the kernel with fresh data given the parameters
    let mut partition = Partition::singletons(n);
    let mut u = 1.0;
    let mut params = (0..n).map(|_| ppmx::conjugate::draw_from_prior(&config.prior, &mut rng)).collect::<Vec<_>>();
    let mut joint = Vec::new();
    for it in 0..21_000 {
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let th = &params[partition.label(i)];
                th.beta[0] + th.beta[1] * xs[i] + th.sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let data = RegressionData::new(y, design.clone(), x.clone()).unwrap();
        let mut chain = ConjugateChain::from_partition(&data, &config, &partition, u, &mut rng).unwrap();
        chain.set_adapting(false);
        chain.sweep(&mut rng).unwrap();
        partition = chain.partition();
        u = chain.u();
        params = chain.params().to_vec();
        if it >= 1_000 {
            joint.push(partition.n_blocks() as f64);
        }
    }

    let mut prior = PriorGibbs::new(n, config.ngg, config.similarity, Some(&x)).unwrap();
    for _ in 0..2_000 {
        prior.sweep(&mut rng).unwrap();
    }
    prior.freeze_proposal();
    let direct: Vec<f64> = (0..20_000)
        .map(|_| {
            prior.sweep(&mut rng).unwrap();
            prior.n_blocks() as f64
        })
        .collect();

    for power in [1, 2] {
        let a: Vec<f64> = joint.iter().map(|k| k.powi(power)).collect();
        let b: Vec<f64> = direct.iter().map(|k| k.powi(power)).collect();
        let ((ma, sa), (mb, sb)) = (batch_mean(&a), batch_mean(&b));
        assert!((ma - mb).abs() < 3.0 * (sa * sa + sb * sb).sqrt(), "moment {power}: {ma} ± {sa} vs {mb} ± {sb}");
    }
}

fn two_group_regression(n: usize, rng: &mut ChaCha8Rng) -> RegressionData {
    let xs: Vec<f64> = (0..n).map(|i| (i % 2) as f64 * 2.0 + 0.3 * rng.gen::<f64>()).collect();
    let y: Vec<f64> = xs.iter().map(|x| if *x > 1.0 { 3.0 } else { 0.0 } + 0.7 * rng.sample::<f64, _>(StandardNormal)).collect();
    RegressionData::new(y, DMatrix::from_element(n, 1, 1.0), one_dim_covariates(&xs)).unwrap()
}

#[test]
fn reassignment_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let data = two_group_regression(30, &mut rng);
    let config = ConjugateConfig {
        ngg: NggParams::new(1.0, 0.2).unwrap(),
        similarity: SimilarityConfig::new(SimilarityFamily::GC, 0.5, 1.0).unwrap(),
        prior: ConjPriorConfig::isotropic(1, 0.0, 10.0, 2.0, 1.0).unwrap(),
        sampler: fixed_scale_sampler(),
    };
    let sweeps = 40_000;
    let mut fixed = ConjugateChain::new(&data, &config, &mut rng).unwrap();
    fixed.set_adapting(false);
    let mut k_fixed = Vec::with_capacity(sweeps);
    for it in 0..sweeps + 500 {
        fixed.sweep(&mut rng).unwrap();
        if it >= 500 {
            k_fixed.push(fixed.n_blocks());
        }
    }
    let mut random = ConjugateChain::new(&data, &config, &mut rng).unwrap();
    random.set_adapting(false);
    let mut order: Vec<usize> = (0..30).collect();
    let mut k_random = Vec::with_capacity(sweeps);
    for it in 0..sweeps + 500 {
        random.update_u(&mut rng);
        order.shuffle(&mut rng);
        for &i in &order {
            random.reassign_item(i, &mut rng).unwrap();
        }
        random.update_params(&mut rng).unwrap();
        if it >= 500 {
            k_random.push(random.n_blocks());
        }
    }
    let tv = total_variation(&k_fixed, &k_random);
    assert!(tv < 0.03, "TV {tv}");
}

fn recurrent_config(prior: RecPriorConfig) -> RecurrentConfig {
    RecurrentConfig {
        ngg: NggParams::new(1.0, 0.2).unwrap(),
        similarity: SimilarityConfig::new(SimilarityFamily::GC, 0.5, 1.0).unwrap(),
        prior,
        sampler: fixed_scale_sampler(),
    }
}

fn recurrent_block_counts(data: &RecurrentDataset, config: &RecurrentConfig, sweeps: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<Partition>) {
    let mut chain = RecurrentChain::new(data, config, rng).unwrap();
    chain.set_adapting(false);
    for _ in 0..500 {
        chain.sweep(rng).unwrap();
    }
    let mut ks = Vec::with_capacity(sweeps);
    let mut parts = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        chain.sweep(rng).unwrap();
        let p = chain.partition();
        ks.push(p.n_blocks());
        parts.push(p);
    }
    (ks, parts)
}

#[test]
fn recurrent_model_reduces_to_conjugate_regression() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let conj_data = two_group_regression(30, &mut rng);
    // one observed gap, a censoring bound too low to matter, no regressors
    let subjects: Vec<Subject> = conj_data
        .y
        .iter()
        .enumerate()
        .map(|(i, &y)| Subject {
            id: format!("s{i}"),
            y: vec![y],
            censor_bound: -60.0,
            x_fixed: vec![],
            x_time: vec![vec![]; 2],
        })
        .collect();
    let rec_data = RecurrentDataset::new(subjects, conj_data.covariates.clone()).unwrap();
    let rec_config = recurrent_config(RecPriorConfig {
        alpha0: 0.0,
        psi0: 0.0,
        kappa0: 10.0,
        kappa1: 1e-12,
        a: 2.0,
        b: 1.0,
        ..RecPriorConfig::standard(0)
    });
    let conj_config = ConjugateConfig {
        ngg: rec_config.ngg,
        similarity: rec_config.similarity,
        prior: ConjPriorConfig::isotropic(1, 0.0, 10.0, 2.0, 1.0).unwrap(),
        sampler: fixed_scale_sampler(),
    };
    let sweeps = 40_000;
    let (k_rec, _) = recurrent_block_counts(&rec_data, &rec_config, sweeps, &mut rng);
    let mut chain = ConjugateChain::new(&conj_data, &conj_config, &mut rng).unwrap();
    chain.set_adapting(false);
    let mut k_conj = Vec::with_capacity(sweeps);
    for it in 0..sweeps + 500 {
        chain.sweep(&mut rng).unwrap();
        if it >= 500 {
            k_conj.push(chain.n_blocks());
        }
    }
    let tv = total_variation(&k_rec, &k_conj);
    assert!(tv < 0.03, "TV {tv}");
}

#[test]
fn subject_order_does_not_matter() {
    let mut spec = RecurrentSimSpec::default_three_groups();
    spec.clusters.iter_mut().for_each(|c| c.size = 10);
    let sim = simulate_recurrent_synthetic(&spec, &mut ChaCha8Rng::seed_from_u64(24)).unwrap();
    let n = sim.data.n_subjects();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(25));
    let permuted = sim.data.subset(&perm).unwrap();
    let config = recurrent_config(RecPriorConfig {
        alpha0: 4.6,
        ..RecPriorConfig::standard(sim.data.p1())
    });
    let sweeps = 60_000;
    let (k_a, parts_a) = recurrent_block_counts(&sim.data, &config, sweeps, &mut ChaCha8Rng::seed_from_u64(26));
    let (k_b, parts_b) = recurrent_block_counts(&permuted, &config, sweeps, &mut ChaCha8Rng::seed_from_u64(27));
    let tv = total_variation(&k_a, &k_b);
    assert!(tv < 0.03, "TV {tv}");
    let psm_a = similarity_matrix(&parts_a).unwrap();
    let psm_b = similarity_matrix(&parts_b).unwrap();
    let mut worst: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            worst = worst.max((psm_a.get(perm[a], perm[b]) - psm_b.get(a, b)).abs());
        }
    }
    assert!(worst < 0.1, "largest co-clustering difference {worst}");
}
