use std::collections::HashMap;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ppmx::covariates::CovariateRow;
use ppmx::io::{read_regression_table, write_regression_csv, RegressionTable};
use ppmx::partition::enumerate_partitions;
use ppmx::prior::{brute_force_eppf, log_ppmx_mass};
use ppmx::similarity::{compactness, log_similarity, similarity};
use ppmx::summaries::{expected_vi, lpml, misclassification_rate, vi_distance};
use ppmx::{MetricChoice, MixedCovariateMatrix, NggParams, Partition, SimilarityConfig, SimilarityFamily};

fn family() -> impl Strategy<Value = SimilarityFamily> {
    prop_oneof![Just(SimilarityFamily::GA), Just(SimilarityFamily::GB), Just(SimilarityFamily::GC)]
}

proptest! {
    #[test]
    fn partition_reserializes_canonically(raw in prop::collection::vec(0usize..6, 1..25)) {
        let p = Partition::from_labels(&raw);
        let blocks = p.blocks();
        prop_assert!(blocks.windows(2).all(|w| w[0][0] < w[1][0]));
        prop_assert_eq!(&Partition::from_blocks(&blocks, raw.len()).unwrap(), &p);
        prop_assert_eq!(&Partition::parse_allocation_string(&p.to_allocation_string()).unwrap(), &p);
        prop_assert_eq!(p.sizes().iter().sum::<usize>(), raw.len());
        for i in 0..raw.len() {
            for j in 0..raw.len() {
                prop_assert_eq!(p.same_block(i, j), raw[i] == raw[j]);
            }
        }
    }

    #[test]
    fn similarity_is_bounded_and_non_increasing(
        mut d in prop::collection::vec(0.0f64..200.0, 2..40),
        family in family(),
        lambda in 0.01f64..5.0,
        alpha in 0.1f64..3.0,
    ) {
        let cfg = SimilarityConfig::new(family, lambda, alpha).unwrap();
        d.sort_by(f64::total_cmp);
        let logs: Vec<f64> = d.iter().map(|&v| log_similarity(v, &cfg)).collect();
        for (&l, &v) in logs.iter().zip(&d) {
            prop_assert!(l.is_finite() && l <= 0.0);
            let g = similarity(v, &cfg);
            prop_assert!(g <= 1.0);
            if l > -700.0 {
                prop_assert!(g > 0.0);
            }
        }
        prop_assert!(logs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn lpml_ignores_iteration_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ll: Vec<Vec<f64>> = (0..30).map(|_| (0..6).map(|_| rng.gen_range(-8.0..0.0)).collect()).collect();
        let a = lpml(&ll).unwrap();
        ll.shuffle(&mut rng);
        let b = lpml(&ll).unwrap();
        prop_assert!((a.lpml - b.lpml).abs() <= 1e-10 * a.lpml.abs().max(1.0));
    }

    #[test]
    fn misclassification_of_relabelled_copy_is_zero(
        raw in prop::collection::vec(0usize..5, 2..30),
        other in prop::collection::vec(0usize..5, 30),
    ) {
        let p = Partition::from_labels(&raw);
        let relabelled = Partition::from_labels(&raw.iter().map(|l| 4 - l).collect::<Vec<_>>());
        prop_assert_eq!(misclassification_rate(&p, &relabelled).unwrap(), 0.0);
        let q = Partition::from_labels(&other[..raw.len()]);
        let q_relabelled = Partition::from_labels(&other[..raw.len()].iter().map(|l| (l + 2) % 5).collect::<Vec<_>>());
        let r = misclassification_rate(&p, &q).unwrap();
        prop_assert_eq!(r, misclassification_rate(&relabelled, &q_relabelled).unwrap());
    }

    #[test]
    fn regression_file_round_trip(
        rows in prop::collection::vec((any::<f64>(), prop::collection::vec(-1e12f64..1e12, 2), prop::collection::vec(0u8..2, 1)), 1..20),
    ) {
        let rows: Vec<_> = rows.into_iter().filter(|r| r.0.is_finite()).collect();
        prop_assume!(!rows.is_empty());
        let table = RegressionTable {
            continuous_names: vec!["a".into(), "b".into()],
            binary_names: vec!["flag".into()],
            y: rows.iter().map(|r| r.0).collect(),
            continuous: rows.iter().map(|r| r.1.clone()).collect(),
            binary: rows.iter().map(|r| r.2.clone()).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_regression_csv(&path, &table).unwrap();
        prop_assert_eq!(read_regression_table(&path).unwrap(), table);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn vi_is_a_metric(
        a in prop::collection::vec(0usize..5, 20),
        b in prop::collection::vec(0usize..5, 20),
        c in prop::collection::vec(0usize..5, 20),
    ) {
        let (a, b, c) = (Partition::from_labels(&a), Partition::from_labels(&b), Partition::from_labels(&c));
        let ab = vi_distance(&a, &b).unwrap();
        let ba = vi_distance(&b, &a).unwrap();
        let bc = vi_distance(&b, &c).unwrap();
        let ac = vi_distance(&a, &c).unwrap();
        prop_assert!(ab >= -1e-12);
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(vi_distance(&a, &a).unwrap().abs() < 1e-12);
        prop_assert_eq!(ab.abs() < 1e-12, a == b);
        prop_assert!(ac <= ab + bc + 1e-12);
    }
}

#[test]
fn vi_estimate_beats_every_dendrogram_cut() {
    use ppmx::summaries::{complete_linkage, dendrogram_cuts, estimate_partition_vi, similarity_matrix};
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws: Vec<Partition> = (0..200)
        .map(|_| Partition::from_labels(&(0..15).map(|i| if rng.gen_bool(0.8) { i / 5 } else { rng.gen_range(0..4) }).collect::<Vec<_>>()))
        .collect();
    let psm = similarity_matrix(&draws).unwrap();
    let (estimate, loss) = estimate_partition_vi(&draws, &psm).unwrap();
    assert!((expected_vi(&estimate, &draws).unwrap() - loss).abs() < 1e-12);
    for cut in dendrogram_cuts(15, &complete_linkage(&psm.0.map(|p| 1.0 - p))) {
        assert!(loss <= expected_vi(&cut, &draws).unwrap() + 1e-12);
    }
}

#[test]
fn centroid_is_optimal_on_a_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..60 {
        let n = rng.gen_range(1..=5);
        let dims = 1 + case % 2;
        let cont: Vec<f64> = (0..n * dims).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = MixedCovariateMatrix::new(DMatrix::from_row_slice(n, dims, &cont), vec![vec![]; n], MetricChoice::Identity).unwrap();
        let items: Vec<usize> = (0..n).collect();
        let geom = compactness(&items, &x).unwrap();
        let objective = |c: &[f64]| -> f64 {
            items
                .iter()
                .map(|&i| {
                    let row = x.continuous_row(i);
                    x.distance(CovariateRow { continuous: c, binary: &[] }, CovariateRow { continuous: &row, binary: &[] }).unwrap()
                })
                .sum()
        };
        assert!((objective(&geom.centroid_c) - geom.d_total).abs() < 1e-9);
        let steps = if dims == 1 { 4000 } else { 300 };
        let h = 4.0 / steps as f64;
        let mut grid_min = f64::INFINITY;
        if dims == 1 {
            for a in 0..=steps {
                grid_min = grid_min.min(objective(&[-2.0 + a as f64 * h]));
            }
        } else {
            for a in 0..=steps {
                for b in 0..=steps {
                    grid_min = grid_min.min(objective(&[-2.0 + a as f64 * h, -2.0 + b as f64 * h]));
                }
            }
        }
        assert!(geom.d_total <= grid_min + 1e-6, "case {case}: {} vs grid {grid_min}", geom.d_total);
    }
}

#[test]
fn eppf_depends_only_on_block_sizes() {
    for (kappa, sigma) in [(1.0, 0.0), (0.4, 0.25), (2.0, 0.7)] {
        let probs = brute_force_eppf(6, &NggParams::new(kappa, sigma).unwrap()).unwrap();
        let mut by_shape: HashMap<Vec<usize>, f64> = HashMap::new();
        for (p, pr) in &probs {
            let mut shape = p.sizes().to_vec();
            shape.sort_unstable();
            let first = *by_shape.entry(shape).or_insert(*pr);
            assert!((first - pr).abs() <= 1e-12 * first.max(1e-300), "{p:?}");
        }
    }
}

/// Sums 5-item probabilities over where item 4 sits.
fn marginalize_last(probs: &[(Partition, f64)]) -> HashMap<String, f64> {
    let mut out = HashMap::new();
    for (p, pr) in probs {
        *out.entry(p.restrict(&[0, 1, 2, 3]).to_allocation_string()).or_insert(0.0) += pr;
    }
    out
}

#[test]
fn marginal_invariance_holds_only_without_covariates() {
    let params = NggParams::new(0.8, 0.3).unwrap();
    let five = marginalize_last(&brute_force_eppf(5, &params).unwrap());
    for (p, pr) in brute_force_eppf(4, &params).unwrap() {
        assert!((five[&p.to_allocation_string()] - pr).abs() < 1e-6);
    }

    let cont = [0.0, 0.1, 0.2, 3.0, 3.1];
    let x5 = MixedCovariateMatrix::new(DMatrix::from_column_slice(5, 1, &cont), vec![vec![]; 5], MetricChoice::Identity).unwrap();
    let x4 = MixedCovariateMatrix::new(DMatrix::from_column_slice(4, 1, &cont[..4]), vec![vec![]; 4], MetricChoice::Identity).unwrap();
    let sim = SimilarityConfig::new(SimilarityFamily::GC, 1.0, 1.0).unwrap();
    let normalized = |n: usize, x: &MixedCovariateMatrix| {
        let mass: Vec<(Partition, f64)> = enumerate_partitions(n)
            .into_iter()
            .map(|p| {
                let m = log_ppmx_mass(&p, &params, &sim, x).unwrap().exp();
                (p, m)
            })
            .collect();
        let total: f64 = mass.iter().map(|m| m.1).sum();
        mass.into_iter().map(|(p, m)| (p, m / total)).collect::<Vec<_>>()
    };
    let five = marginalize_last(&normalized(5, &x5));
    let gap = normalized(4, &x4)
        .iter()
        .map(|(p, pr)| (five[&p.to_allocation_string()] - pr).abs())
        .fold(0.0, f64::max);
    assert!(gap > 1e-3, "covariate-dependent prior unexpectedly marginally invariant ({gap})");
}

#[test]
fn total_prior_mass_is_at_most_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let partitions = enumerate_partitions(5);
    for _ in 0..20 {
        let cont: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let bin: Vec<Vec<u8>> = (0..5).map(|_| vec![rng.gen_bool(0.5) as u8]).collect();
        let x = MixedCovariateMatrix::new(DMatrix::from_row_slice(5, 2, &cont), bin, MetricChoice::Empirical).unwrap();
        let params = NggParams::new(rng.gen_range(0.1..3.0), rng.gen_range(0.0..0.9)).unwrap();
        for family in [SimilarityFamily::GA, SimilarityFamily::GB, SimilarityFamily::GC, SimilarityFamily::One] {
            let sim = SimilarityConfig::new(family, rng.gen_range(0.05..2.0), rng.gen_range(0.5..2.0)).unwrap();
            let total: f64 = partitions.iter().map(|p| log_ppmx_mass(p, &params, &sim, &x).unwrap().exp()).sum();
            assert!(total <= 1.0 + 1e-8, "{total}");
            if family == SimilarityFamily::One {
                assert!((total - 1.0).abs() < 1e-8);
            }
        }
    }
}
