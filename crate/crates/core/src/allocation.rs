//! Mutable block structure used by the samplers: members per block, the
//! compactness cache, and the prior allocation weights of one item.

use crate::cohesion::{log_cohesion_ratio, NggParams};
use crate::covariates::MixedCovariateMatrix;
use crate::error::Result;
use crate::partition::Partition;
use crate::similarity::{log_similarity, BlockCompactness, SimilarityConfig};

const UNASSIGNED: usize = usize::MAX;

/// Result of taking an item out of its block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Removal {
    /// the block keeps other members
    Shrunk(usize),
    /// the block became empty and was dropped; the last block was moved
    /// into slot `block` (when `moved_from != block`)
    Emptied { block: usize, moved_from: usize },
}

#[derive(Debug, Clone)]
pub struct Allocation {
    labels: Vec<usize>,
    members: Vec<Vec<usize>>,
    /// present only when the similarity is not constant
    geometry: Option<Vec<BlockCompactness>>,
    candidates: Vec<Option<BlockCompactness>>,
    /// compactness of the last removed item's block before the removal
    departed: Option<(usize, usize, BlockCompactness)>,
}

impl Allocation {
    /// Builds the state for `partition`. Compactness is tracked only when
    /// `x` is given and `sim` is not constant.
    pub fn new(partition: &Partition, x: Option<&MixedCovariateMatrix>, sim: &SimilarityConfig) -> Result<Self> {
        let members = partition.blocks();
        let geometry = match x {
            Some(x) if !sim.is_constant() => Some(
                members
                    .iter()
                    .map(|m| BlockCompactness::compute(x, m, None, None))
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => None,
        };
        Ok(Allocation {
            labels: partition.labels().to_vec(),
            members,
            geometry,
            candidates: Vec::new(),
            departed: None,
        })
    }

    pub fn n_items(&self) -> usize {
        self.labels.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.members.len()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn members(&self, j: usize) -> &[usize] {
        &self.members[j]
    }

    pub fn size(&self, j: usize) -> usize {
        self.members[j].len()
    }

    pub fn compactness(&self, j: usize) -> Option<&BlockCompactness> {
        self.geometry.as_ref().map(|g| &g[j])
    }

    /// Takes item `i` out of its block.
    pub fn remove(&mut self, i: usize, x: Option<&MixedCovariateMatrix>) -> Result<Removal> {
        let j = self.labels[i];
        debug_assert_ne!(j, UNASSIGNED);
        self.departed = None;
        self.labels[i] = UNASSIGNED;
        let block = &mut self.members[j];
        let pos = block.iter().position(|&m| m == i).expect("item listed in its block");
        block.swap_remove(pos);
        if block.is_empty() {
            let last = self.members.len() - 1;
            self.members.swap_remove(j);
            if let Some(g) = self.geometry.as_mut() {
                g.swap_remove(j);
            }
            if j != last {
                for &m in &self.members[j] {
                    self.labels[m] = j;
                }
            }
            return Ok(Removal::Emptied { block: j, moved_from: last });
        }
        if let (Some(g), Some(x)) = (self.geometry.as_mut(), x) {
            let fresh = BlockCompactness::compute(x, &self.members[j], None, Some(&g[j].center))?;
            self.departed = Some((i, j, std::mem::replace(&mut g[j], fresh)));
        }
        Ok(Removal::Shrunk(j))
    }

    /// Log prior weights of placing the unassigned item `i` into each
    /// existing block and (last entry) a new block: cohesion ratio plus
    /// similarity ratio. `x` may carry extra rows beyond the allocated items.
    pub fn log_prior_weights(
        &mut self,
        i: usize,
        u: f64,
        ngg: &NggParams,
        sim: &SimilarityConfig,
        x: Option<&MixedCovariateMatrix>,
        out: &mut Vec<f64>,
    ) -> Result<()> {
        let k = self.members.len();
        out.clear();
        self.candidates.clear();
        for j in 0..k {
            let mut w = log_cohesion_ratio(u, self.members[j].len(), ngg);
            if let (Some(g), Some(x)) = (self.geometry.as_ref(), x) {
                let cand = match &self.departed {
                    Some((item, block, old)) if *item == i && *block == j => old.clone(),
                    _ => BlockCompactness::compute(x, &self.members[j], Some(i), Some(&g[j].center))?,
                };
                w += log_similarity(cand.d_total, sim) - log_similarity(g[j].d_total, sim);
                self.candidates.push(Some(cand));
            }
            out.push(w);
        }
        // a singleton has zero compactness, g(0) = 1
        out.push(log_cohesion_ratio(u, 0, ngg));
        Ok(())
    }

    /// Places the unassigned item `i` in block `j`; `j == n_blocks()` opens a
    /// new block. Reuses the compactness computed by the last call to
    /// [`Allocation::log_prior_weights`] for this item.
    pub fn insert(&mut self, i: usize, j: usize, x: Option<&MixedCovariateMatrix>) -> Result<()> {
        debug_assert_eq!(self.labels[i], UNASSIGNED);
        let k = self.members.len();
        self.labels[i] = j;
        if j == k {
            self.members.push(vec![i]);
            if let (Some(g), Some(x)) = (self.geometry.as_mut(), x) {
                g.push(BlockCompactness::compute(x, &[i], None, None)?);
            }
        } else {
            self.members[j].push(i);
            if let (Some(g), Some(x)) = (self.geometry.as_mut(), x) {
                g[j] = match self.candidates.get_mut(j).and_then(Option::take) {
                    Some(c) => c,
                    None => {
                        let warm = std::mem::take(&mut g[j].center);
                        BlockCompactness::compute(x, &self.members[j], None, Some(&warm))?
                    }
                };
            }
        }
        self.candidates.clear();
        self.departed = None;
        Ok(())
    }

    pub fn to_partition(&self) -> Partition {
        Partition::from_labels(&self.labels)
    }

    /// Reorders blocks by smallest member. Returns `order` with new block
    /// `b` being old block `order[b]`.
    pub fn canonicalize(&mut self) -> Vec<usize> {
        self.departed = None;
        let mut order: Vec<usize> = (0..self.members.len()).collect();
        let mins: Vec<usize> = self.members.iter().map(|m| *m.iter().min().expect("non-empty")).collect();
        order.sort_by_key(|&j| mins[j]);
        self.members = order.iter().map(|&j| std::mem::take(&mut self.members[j])).collect();
        if let Some(g) = self.geometry.as_mut() {
            let mut old = std::mem::take(g);
            *g = order.iter().map(|&j| std::mem::replace(&mut old[j], BlockCompactness::default())).collect();
        }
        for (b, m) in self.members.iter().enumerate() {
            for &i in m {
                self.labels[i] = b;
            }
        }
        order
    }
}

/// Applies a block reordering from [`Allocation::canonicalize`] to a
/// per-block vector.
pub fn reorder<T>(values: &mut Vec<T>, order: &[usize]) {
    let mut old: Vec<Option<T>> = values.drain(..).map(Some).collect();
    values.extend(order.iter().map(|&j| old[j].take().expect("permutation")));
}

/// Mirrors a [`Removal`] on a per-block vector.
pub fn apply_removal<T>(values: &mut Vec<T>, removal: Removal) -> Option<T> {
    match removal {
        Removal::Shrunk(_) => None,
        Removal::Emptied { block, .. } => Some(values.swap_remove(block)),
    }
}

/// Normalized log allocation probabilities of new items given one
/// partition of the first `partition.n_items()` rows of `x`: entry `[h][j]`
/// is for new row `new_rows[h]` joining block `j`, the last entry a new
/// block. Only the prior enters; the new items' responses are unknown.
pub fn predictive_log_probs(
    partition: &Partition,
    u: f64,
    ngg: &NggParams,
    sim: &SimilarityConfig,
    x: Option<&MixedCovariateMatrix>,
    new_rows: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let x = x.filter(|_| !sim.is_constant());
    let mut alloc = Allocation::new(partition, x, sim)?;
    let mut w = Vec::new();
    new_rows
        .iter()
        .map(|&r| {
            alloc.log_prior_weights(r, u, ngg, sim, x, &mut w)?;
            let z = crate::stats::log_sum_exp(&w);
            Ok(w.iter().map(|v| v - z).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::MetricChoice;
    use crate::similarity::{SimilarityFamily, compactness};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, rng: &mut ChaCha8Rng) -> MixedCovariateMatrix {
        let cont = DMatrix::from_fn(n, 2, |_, _| rng.gen::<f64>() * 4.0);
        let bin = (0..n).map(|_| vec![rng.gen_range(0..2u8)]).collect();
        MixedCovariateMatrix::new(cont, bin, MetricChoice::Empirical).unwrap()
    }

    #[test]
    fn cache_matches_recomputation_after_moves() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = data(25, &mut rng);
        let sim = SimilarityConfig::new(SimilarityFamily::GC, 0.7, 1.0).unwrap();
        let ngg = NggParams::new(1.0, 0.2).unwrap();
        let mut alloc = Allocation::new(&Partition::singletons(25), Some(&x), &sim).unwrap();
        let mut w = Vec::new();
        for _ in 0..300 {
            let i = rng.gen_range(0..25);
            alloc.remove(i, Some(&x)).unwrap();
            alloc.log_prior_weights(i, 1.5, &ngg, &sim, Some(&x), &mut w).unwrap();
            let j = rng.gen_range(0..w.len());
            alloc.insert(i, j, Some(&x)).unwrap();
        }
        alloc.canonicalize();
        let p = alloc.to_partition();
        for (j, block) in p.blocks().iter().enumerate() {
            assert_eq!(alloc.members(j).iter().min(), block.iter().min());
            let fresh = compactness(block, &x).unwrap().d_total;
            assert_relative_eq!(alloc.compactness(j).unwrap().d_total, fresh, epsilon = 1e-7, max_relative = 1e-7);
        }
    }

    #[test]
    fn crp_weights_without_similarity() {
        let ngg = NggParams::new(0.8, 0.0).unwrap();
        let p = Partition::from_labels(&[0, 0, 0, 1, 2]);
        let mut alloc = Allocation::new(&p, None, &SimilarityConfig::one()).unwrap();
        assert_eq!(alloc.remove(4, None).unwrap(), Removal::Emptied { block: 2, moved_from: 2 });
        let mut w = Vec::new();
        alloc.log_prior_weights(4, 0.0, &ngg, &SimilarityConfig::one(), None, &mut w).unwrap();
        let expected = [3f64.ln(), 0.0, 0.8f64.ln()];
        for (a, b) in w.iter().zip(expected) {
            assert_relative_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn emptied_block_moves_last_into_slot() {
        let p = Partition::from_labels(&[0, 1, 2, 2]);
        let mut alloc = Allocation::new(&p, None, &SimilarityConfig::one()).unwrap();
        let r = alloc.remove(0, None).unwrap();
        assert_eq!(r, Removal::Emptied { block: 0, moved_from: 2 });
        assert_eq!(alloc.label(2), 0);
        assert_eq!(alloc.label(1), 1);
        let mut v = vec!['a', 'b', 'c'];
        assert_eq!(apply_removal(&mut v, r), Some('a'));
        assert_eq!(v, vec!['c', 'b']);
        alloc.insert(0, 2, None).unwrap();
        v.push('z');
        let order = alloc.canonicalize();
        reorder(&mut v, &order);
        assert_eq!(order, vec![2, 1, 0]);
        assert_eq!(v, vec!['z', 'b', 'c']);
        assert_eq!(alloc.to_partition().labels(), &[0, 1, 2, 2]);
    }
}
