//! Posterior summaries: co-clustering matrix, variation-of-information point
//! estimate over complete-linkage cuts, LPML, misclassification and
//! cross-validated prediction error.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};

use crate::conjugate::{predict_conjugate, run_chain_conjugate, ConjugateConfig, RegressionData};
use crate::covariates::MixedCovariateMatrix;
use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::recurrent::{predict_new_subject, run_chain_recurrent, NewSubject, RecurrentConfig, RecurrentDataset};
use crate::stats::log_sum_exp;

/// Fraction of draws placing each pair of items together.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSimilarityMatrix(pub DMatrix<f64>);

impl PosteriorSimilarityMatrix {
    pub fn n_items(&self) -> usize {
        self.0.nrows()
    }
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }
}

pub fn similarity_matrix(partitions: &[Partition]) -> Result<PosteriorSimilarityMatrix> {
    let first = partitions.first().ok_or(Error::EmptyTrace)?;
    let n = first.n_items();
    let mut counts = vec![0u32; n * n];
    for p in partitions {
        if p.n_items() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                found: p.n_items(),
            });
        }
        for block in p.blocks() {
            for (a, &i) in block.iter().enumerate() {
                for &j in &block[a..] {
                    counts[i * n + j] += 1;
                }
            }
        }
    }
    let g = partitions.len() as f64;
    Ok(PosteriorSimilarityMatrix(DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        counts[a * n + b] as f64 / g
    })))
}

fn entropy_term(count: usize, n: f64) -> f64 {
    if count == 0 {
        0.0
    } else {
        let c = count as f64;
        c / n * (c / n).ln()
    }
}

/// Reusable contingency table for repeated VI evaluations.
#[derive(Debug, Default)]
struct ViScratch {
    table: Vec<usize>,
}

impl ViScratch {
    fn vi(&mut self, a: &Partition, b: &Partition) -> f64 {
        let n = a.n_items() as f64;
        let (ka, kb) = (a.n_blocks(), b.n_blocks());
        self.table.clear();
        self.table.resize(ka * kb, 0);
        for (&la, &lb) in a.labels().iter().zip(b.labels()) {
            self.table[la * kb + lb] += 1;
        }
        let ha: f64 = -a.sizes().iter().map(|&c| entropy_term(c, n)).sum::<f64>();
        let hb: f64 = -b.sizes().iter().map(|&c| entropy_term(c, n)).sum::<f64>();
        let hab: f64 = -self.table.iter().map(|&c| entropy_term(c, n)).sum::<f64>();
        // VI = 2 H(A,B) − H(A) − H(B)
        (2.0 * hab - ha - hb).max(0.0)
    }
}

/// Variation of information in nats.
pub fn vi_distance(p1: &Partition, p2: &Partition) -> Result<f64> {
    if p1.n_items() != p2.n_items() {
        return Err(Error::SizeMismatch {
            expected: p1.n_items(),
            found: p2.n_items(),
        });
    }
    Ok(ViScratch::default().vi(p1, p2))
}

/// Trace average of the VI between `candidate` and each draw.
pub fn expected_vi(candidate: &Partition, partitions: &[Partition]) -> Result<f64> {
    if partitions.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut scratch = ViScratch::default();
    let mut total = 0.0;
    for p in partitions {
        if p.n_items() != candidate.n_items() {
            return Err(Error::SizeMismatch {
                expected: candidate.n_items(),
                found: p.n_items(),
            });
        }
        total += scratch.vi(candidate, p);
    }
    Ok(total / partitions.len() as f64)
}

/// Approximation of the expected VI from the similarity matrix alone,
/// moving expectations inside the logarithms. Cheap screening value.
pub fn vi_lower_bound(candidate: &Partition, psm: &PosteriorSimilarityMatrix) -> f64 {
    let n = candidate.n_items();
    let mut total = 0.0;
    for i in 0..n {
        let ci = candidate.sizes()[candidate.label(i)] as f64;
        let mut row = 0.0;
        let mut joint = 0.0;
        for j in 0..n {
            let p = psm.get(i, j);
            row += p;
            if candidate.same_block(i, j) {
                joint += p;
            }
        }
        total += ci.log2() + row.log2() - 2.0 * joint.log2();
    }
    total / n as f64 * std::f64::consts::LN_2
}

/// One agglomeration: clusters `a` and `b` merged at `height`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
}

/// Complete-linkage merges of a symmetric dissimilarity matrix, sorted by
/// height (nearest-neighbour chain). Leaves are `0..n`; each merge is
/// reported by a representative leaf of each side.
pub fn complete_linkage(dissim: &DMatrix<f64>) -> Vec<Merge> {
    let n = dissim.nrows();
    let mut d = dissim.clone();
    let mut active = vec![true; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();
    let mut remaining = n;
    while remaining > 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("active cluster"));
        }
        loop {
            let x = *chain.last().expect("non-empty chain");
            let prev = if chain.len() >= 2 { Some(chain[chain.len() - 2]) } else { None };
            // nearest neighbour of x, preferring the chain predecessor on ties
            let mut best = prev;
            let mut best_d = prev.map_or(f64::INFINITY, |p| d[(x, p)]);
            for y in 0..n {
                if y != x && active[y] && d[(x, y)] < best_d {
                    best = Some(y);
                    best_d = d[(x, y)];
                }
            }
            let y = best.expect("another active cluster");
            if Some(y) == prev {
                chain.pop();
                chain.pop();
                merges.push(Merge { a: x, b: y, height: best_d });
                // Lance–Williams update for complete linkage into slot y
                active[x] = false;
                for z in 0..n {
                    if active[z] && z != y {
                        let v = d[(x, z)].max(d[(y, z)]);
                        d[(y, z)] = v;
                        d[(z, y)] = v;
                    }
                }
                remaining -= 1;
                break;
            }
            chain.push(y);
        }
    }
    merges.sort_by(|a, b| a.height.total_cmp(&b.height));
    merges
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// The `n` partitions obtained by cutting the dendrogram at every level,
/// from all singletons to one block.
pub fn dendrogram_cuts(n: usize, merges: &[Merge]) -> Vec<Partition> {
    let mut parent: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n);
    let labels = |parent: &mut Vec<usize>| -> Partition {
        let l: Vec<usize> = (0..n).map(|i| find(parent, i)).collect();
        Partition::from_labels(&l)
    };
    out.push(labels(&mut parent));
    for m in merges {
        let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
        parent[ra] = rb;
        out.push(labels(&mut parent));
    }
    out
}

/// Point estimate minimizing the trace-average VI among the complete-linkage
/// cuts of `1 − psm`. Returns the estimate and its expected loss.
pub fn estimate_partition_vi(partitions: &[Partition], psm: &PosteriorSimilarityMatrix) -> Result<(Partition, f64)> {
    if partitions.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let n = psm.n_items();
    let dissim = psm.0.map(|p| 1.0 - p);
    let cuts = dendrogram_cuts(n, &complete_linkage(&dissim));
    let mut best: Option<(Partition, f64)> = None;
    for c in cuts {
        let loss = expected_vi(&c, partitions)?;
        if best.as_ref().map_or(true, |(_, b)| loss < *b) {
            best = Some((c, loss));
        }
    }
    Ok(best.expect("at least one cut"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lpml {
    pub lpml: f64,
    pub log_cpo: Vec<f64>,
    /// items whose CPO is zero or undefined
    pub non_finite: Vec<usize>,
}

/// Harmonic-mean CPO per item from `log_lik[g][i]`, and their log sum.
pub fn lpml(log_lik: &[Vec<f64>]) -> Result<Lpml> {
    let g = log_lik.len();
    let n = log_lik.first().ok_or(Error::EmptyTrace)?.len();
    let mut neg = vec![0.0; g];
    let mut log_cpo = Vec::with_capacity(n);
    let mut non_finite = Vec::new();
    for i in 0..n {
        for (k, row) in log_lik.iter().enumerate() {
            if row.len() != n {
                return Err(Error::SizeMismatch { expected: n, found: row.len() });
            }
            neg[k] = -row[i];
        }
        let v = (g as f64).ln() - log_sum_exp(&neg);
        if !v.is_finite() {
            non_finite.push(i);
        }
        log_cpo.push(v);
    }
    Ok(Lpml {
        lpml: log_cpo.iter().sum(),
        log_cpo,
        non_finite,
    })
}

/// Minimum-cost assignment of rows to columns of a square cost matrix
/// (Kuhn–Munkres with potentials). Returns the column of each row.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Fraction of items outside the best one-to-one matching of true blocks to
/// estimated blocks.
pub fn misclassification_rate(estimate: &Partition, truth: &Partition) -> Result<f64> {
    let n = truth.n_items();
    if estimate.n_items() != n {
        return Err(Error::SizeMismatch {
            expected: n,
            found: estimate.n_items(),
        });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let size = truth.n_blocks().max(estimate.n_blocks());
    let mut counts = DMatrix::<f64>::zeros(size, size);
    for (&t, &e) in truth.labels().iter().zip(estimate.labels()) {
        counts[(t, e)] += 1.0;
    }
    let assignment = hungarian(&counts.map(|c| -c));
    let matched: f64 = assignment.iter().enumerate().map(|(r, &c)| counts[(r, c)]).sum();
    Ok(1.0 - matched / n as f64)
}

/// How the units are split in each cross-validation round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub n_splits: usize,
    pub train_fraction: f64,
}

/// A model that can be fitted on some units and predict the responses of others.
pub trait HoldoutPredictor {
    fn n_units(&self) -> usize;
    /// `(prediction, observed)` for every held-out response
    fn fit_predict(&self, train: &[usize], test: &[usize], rng: &mut dyn RngCore) -> Result<Vec<(f64, f64)>>;
}

/// Root mean squared prediction error pooled over random train/test splits.
pub fn rmse_cv<P: HoldoutPredictor + ?Sized, R: Rng + ?Sized>(model: &P, split: SplitSpec, rng: &mut R) -> Result<f64> {
    let n = model.n_units();
    if split.n_splits == 0 {
        return Err(Error::config("cv.n_splits", "must be at least 1"));
    }
    if !(split.train_fraction > 0.0 && split.train_fraction < 1.0) {
        return Err(Error::config("cv.train_fraction", "must lie in (0, 1)"));
    }
    let n_train = ((n as f64) * split.train_fraction).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::config("cv.train_fraction", "leaves an empty training or test set"));
    }
    let mut sse = 0.0;
    let mut count = 0usize;
    let mut idx: Vec<usize> = (0..n).collect();
    for _ in 0..split.n_splits {
        idx.shuffle(rng);
        let (train, test) = idx.split_at(n_train);
        let mut train = train.to_vec();
        let mut test = test.to_vec();
        train.sort_unstable();
        test.sort_unstable();
        let mut sub = rand_chacha::ChaCha8Rng::from_rng(&mut *rng).map_err(|e| Error::NumericalFailure(e.to_string()))?;
        for (pred, obs) in model.fit_predict(&train, &test, &mut sub)? {
            sse += (pred - obs).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptySet);
    }
    Ok((sse / count as f64).sqrt())
}


/// Cross-validation of the conjugate regression model; predictions are
/// posterior predictive means.
#[derive(Debug, Clone)]
pub struct ConjugateCv<'a> {
    pub data: &'a RegressionData,
    pub config: &'a ConjugateConfig,
}

impl HoldoutPredictor for ConjugateCv<'_> {
    fn n_units(&self) -> usize {
        self.data.n_items()
    }

    fn fit_predict(&self, train: &[usize], test: &[usize], rng: &mut dyn RngCore) -> Result<Vec<(f64, f64)>> {
        let fit = self.data.subset(train);
        let trace = run_chain_conjugate(&fit, self.config, rng)?;
        let design = self.data.design.select_rows(test);
        let cov: Vec<(Vec<f64>, Vec<u8>)> = test
            .iter()
            .map(|&i| (self.data.covariates.continuous_row(i), self.data.covariates.binary_row(i).to_vec()))
            .collect();
        let pred = predict_conjugate(&trace, &fit, self.config, &design, &cov, rng)?;
        Ok(pred.mean.into_iter().zip(test.iter().map(|&i| self.data.y[i])).collect())
    }
}

/// Cross-validation of the recurrent-event model over held-out subjects;
/// every observed log gap of a held-out subject is predicted.
#[derive(Debug, Clone)]
pub struct RecurrentCv<'a> {
    pub data: &'a RecurrentDataset,
    pub config: &'a RecurrentConfig,
}

impl HoldoutPredictor for RecurrentCv<'_> {
    fn n_units(&self) -> usize {
        self.data.n_subjects()
    }

    fn fit_predict(&self, train: &[usize], test: &[usize], rng: &mut dyn RngCore) -> Result<Vec<(f64, f64)>> {
        let fit = self.data.subset(train)?;
        let trace = run_chain_recurrent(&fit, self.config, rng)?;
        let cov = self.data.covariates();
        let new: Vec<NewSubject> = test
            .iter()
            .map(|&i| {
                let s = self.data.subject(i);
                NewSubject {
                    x_fixed: s.x_fixed.clone(),
                    x_time: s.x_time[..s.n_observed()].to_vec(),
                    covariates: (cov.continuous_row(i), cov.binary_row(i).to_vec()),
                }
            })
            .collect();
        let pred = predict_new_subject(&trace, &fit, self.config, &new, rng)?;
        let mut out = Vec::new();
        for (h, &i) in test.iter().enumerate() {
            out.extend(pred.mean[h].iter().copied().zip(self.data.subject(i).y.iter().copied()));
        }
        Ok(out)
    }
}

/// Covariate summary of one estimated cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub size: usize,
    pub continuous_mean: Vec<f64>,
    pub binary_frequency: Vec<f64>,
}

pub fn cluster_summaries(partition: &Partition, x: &MixedCovariateMatrix) -> Result<Vec<ClusterSummary>> {
    if partition.n_items() != x.n_items() {
        return Err(Error::SizeMismatch {
            expected: x.n_items(),
            found: partition.n_items(),
        });
    }
    Ok(partition
        .blocks()
        .iter()
        .map(|block| {
            let s = block.len() as f64;
            ClusterSummary {
                size: block.len(),
                continuous_mean: (0..x.n_continuous())
                    .map(|c| block.iter().map(|&i| x.continuous()[(i, c)]).sum::<f64>() / s)
                    .collect(),
                binary_frequency: (0..x.n_binary())
                    .map(|c| block.iter().map(|&i| x.binary_row(i)[c] as f64).sum::<f64>() / s)
                    .collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::enumerate_partitions;
    use approx::assert_relative_eq;
    use rand_chacha::ChaCha8Rng;

    fn p(l: &[usize]) -> Partition {
        Partition::from_labels(l)
    }

    #[test]
    fn psm_examples() {
        let psm = similarity_matrix(&[p(&[0, 0, 1]), p(&[0, 1, 2])]).unwrap();
        assert_eq!(psm.get(0, 1), 0.5);
        assert_eq!(psm.get(1, 0), 0.5);
        assert_eq!(psm.get(2, 2), 1.0);
        assert_eq!(psm.get(0, 2), 0.0);
        assert_eq!(similarity_matrix(&[]), Err(Error::EmptyTrace));
    }

    #[test]
    fn vi_examples() {
        assert_relative_eq!(vi_distance(&Partition::singletons(4), &Partition::one_block(4)).unwrap(), 4f64.ln(), epsilon = 1e-12);
        assert_eq!(vi_distance(&p(&[0, 1, 1]), &p(&[5, 2, 2])).unwrap(), 0.0);
        assert!(vi_distance(&p(&[0]), &p(&[0, 0])).is_err());
    }

    #[test]
    fn vi_matches_entropy_formula() {
        // H(A) + H(B) − 2 I(A, B) computed from mutual information directly
        let a = p(&[0, 0, 1, 1, 2, 2, 2]);
        let b = p(&[0, 1, 1, 1, 0, 2, 2]);
        let n = 7.0;
        let h = |q: &Partition| -q.sizes().iter().map(|&c| c as f64 / n * (c as f64 / n).ln()).sum::<f64>();
        let mut mi = 0.0;
        for x in 0..a.n_blocks() {
            for y in 0..b.n_blocks() {
                let c = (0..7).filter(|&i| a.label(i) == x && b.label(i) == y).count() as f64;
                if c > 0.0 {
                    mi += c / n * (c * n / (a.sizes()[x] as f64 * b.sizes()[y] as f64)).ln();
                }
            }
        }
        assert_relative_eq!(vi_distance(&a, &b).unwrap(), h(&a) + h(&b) - 2.0 * mi, epsilon = 1e-12);
    }

    #[test]
    fn linkage_and_cuts() {
        let pts: [f64; 6] = [0.0, 0.1, 0.25, 5.0, 5.2, 11.0];
        let d = DMatrix::from_fn(6, 6, |i, j| (pts[i] - pts[j]).abs());
        let merges = complete_linkage(&d);
        let heights: Vec<f64> = merges.iter().map(|m| m.height).collect();
        assert_eq!(merges.len(), 5);
        for (a, b) in heights.iter().zip([0.1, 0.2, 0.25, 5.2, 11.0]) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
        let cuts = dendrogram_cuts(6, &merges);
        assert_eq!(cuts[0], Partition::singletons(6));
        assert_eq!(cuts[3], p(&[0, 0, 0, 1, 1, 2]));
        assert_eq!(cuts[5], Partition::one_block(6));
    }

    #[test]
    fn estimate_from_indicator_psm() {
        let truth = p(&[0, 0, 1, 1, 1, 0]);
        let psm = similarity_matrix(&[truth.clone()]).unwrap();
        let (est, loss) = estimate_partition_vi(&[truth.clone()], &psm).unwrap();
        assert_eq!(est, truth);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn lpml_examples() {
        let one = lpml(&[vec![-1.0, -2.0]]).unwrap();
        assert_relative_eq!(one.lpml, -3.0, epsilon = 1e-12);
        let two = lpml(&[vec![0.0], vec![-(3f64.ln())]]).unwrap();
        assert_relative_eq!(two.log_cpo[0], 0.5f64.ln(), epsilon = 1e-12);
        let bad = lpml(&[vec![f64::NEG_INFINITY, 0.0]]).unwrap();
        assert_eq!(bad.non_finite, vec![0]);
        assert_eq!(lpml(&[]), Err(Error::EmptyTrace));
    }

    fn brute_force_matching(est: &Partition, truth: &Partition) -> f64 {
        // every injection of true blocks into (estimate blocks ∪ unmatched)
        let ke = est.n_blocks();
        let kt = truth.n_blocks();
        let n = truth.n_items();
        let mut best = 0usize;
        let mut assign = vec![0usize; kt];
        fn rec(t: usize, kt: usize, ke: usize, assign: &mut Vec<usize>, used: &mut Vec<bool>, est: &Partition, truth: &Partition, best: &mut usize) {
            if t == kt {
                let m = (0..truth.n_items())
                    .filter(|&i| {
                        let a = assign[truth.label(i)];
                        a < ke && est.label(i) == a
                    })
                    .count();
                *best = (*best).max(m);
                return;
            }
            for c in 0..=ke {
                if c < ke && used[c] {
                    continue;
                }
                assign[t] = c;
                if c < ke {
                    used[c] = true;
                }
                rec(t + 1, kt, ke, assign, used, est, truth, best);
                if c < ke {
                    used[c] = false;
                }
            }
        }
        rec(0, kt, ke, &mut assign, &mut vec![false; ke], est, truth, &mut best);
        1.0 - best as f64 / n as f64
    }

    #[test]
    fn misclassification_matches_brute_force() {
        let parts = enumerate_partitions(7);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..400 {
            let a = parts.choose(&mut rng).unwrap();
            let b = parts.choose(&mut rng).unwrap();
            if a.n_blocks() > 4 || b.n_blocks() > 4 {
                continue;
            }
            assert_relative_eq!(misclassification_rate(a, b).unwrap(), brute_force_matching(a, b), epsilon = 1e-12);
        }
        let truth = Partition::from_labels(&(0..200).map(|i| i / 70).collect::<Vec<_>>());
        let mut moved = truth.labels().to_vec();
        moved[0] = 1;
        assert_relative_eq!(misclassification_rate(&p(&moved), &truth).unwrap(), 0.005, epsilon = 1e-12);
    }

    struct Stub {
        y: Vec<f64>,
        perfect: bool,
    }

    impl HoldoutPredictor for Stub {
        fn n_units(&self) -> usize {
            self.y.len()
        }
        fn fit_predict(&self, train: &[usize], test: &[usize], _: &mut dyn RngCore) -> Result<Vec<(f64, f64)>> {
            let m = train.iter().map(|&i| self.y[i]).sum::<f64>() / train.len() as f64;
            Ok(test.iter().map(|&i| (if self.perfect { self.y[i] } else { m }, self.y[i])).collect())
        }
    }

    #[test]
    fn rmse_stubs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let split = SplitSpec {
            n_splits: 3,
            train_fraction: 0.9,
        };
        let perfect = rmse_cv(&Stub { y: y.clone(), perfect: true }, split, &mut rng).unwrap();
        assert_eq!(perfect, 0.0);
        let constant = rmse_cv(&Stub { y: y.clone(), perfect: false }, split, &mut rng).unwrap();
        let m = y.iter().sum::<f64>() / 40.0;
        let sd = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 40.0).sqrt();
        assert!((constant - sd).abs() < 0.25 * sd);
    }
}
