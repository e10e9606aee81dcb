//! Set partitions of `0..n` stored as block labels.
//!
//! Labels are always contiguous in `0..k`. The canonical labeling orders
//! blocks by their smallest member, so two equal partitions compare equal
//! regardless of how they were produced.

use crate::error::{Error, Result};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    labels: Vec<usize>,
    sizes: Vec<usize>,
}

/// Checks the partition invariants for a set of `n` items.
pub fn validate(labels: &[usize], n: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::SizeMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    let max = match labels.iter().max() {
        Some(&m) => m,
        None => return Ok(()),
    };
    let mut seen = vec![false; max + 1];
    for &l in labels {
        seen[l] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::NonContiguousLabels { missing, max });
    }
    Ok(())
}

impl Partition {
    /// Builds a partition from arbitrary labels and relabels it canonically.
    /// Labels need not be contiguous.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let mut out = Vec::with_capacity(labels.len());
        let mut sizes = Vec::new();
        for &l in labels {
            let next = map.len();
            let c = *map.entry(l).or_insert(next);
            if c == sizes.len() {
                sizes.push(0);
            }
            sizes[c] += 1;
            out.push(c);
        }
        Partition { labels: out, sizes }
    }

    /// Validates labels for `n` items, then canonicalizes them.
    pub fn try_new(labels: &[usize], n: usize) -> Result<Self> {
        validate(labels, n)?;
        Ok(Self::from_labels(labels))
    }

    pub fn singletons(n: usize) -> Self {
        Partition {
            labels: (0..n).collect(),
            sizes: vec![1; n],
        }
    }

    pub fn one_block(n: usize) -> Self {
        Partition {
            labels: vec![0; n],
            sizes: if n == 0 { vec![] } else { vec![n] },
        }
    }

    pub fn from_blocks(blocks: &[Vec<usize>], n: usize) -> Result<Self> {
        let mut labels = vec![usize::MAX; n];
        for (b, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(Error::EmptyBlock { label: b });
            }
            for &i in block {
                if i >= n || labels[i] != usize::MAX {
                    return Err(Error::SizeMismatch {
                        expected: n,
                        found: i,
                    });
                }
                labels[i] = b;
            }
        }
        if labels.contains(&usize::MAX) {
            return Err(Error::SizeMismatch {
                expected: n,
                found: blocks.iter().map(Vec::len).sum(),
            });
        }
        Ok(Self::from_labels(&labels))
    }

    pub fn n_items(&self) -> usize {
        self.labels.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Member lists, ordered by smallest member.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut blocks: Vec<Vec<usize>> = self.sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
        for (i, &l) in self.labels.iter().enumerate() {
            blocks[l].push(i);
        }
        blocks
    }

    pub fn same_block(&self, i: usize, j: usize) -> bool {
        self.labels[i] == self.labels[j]
    }

    /// Partition of the items in `keep` (in that order), relabeled canonically.
    pub fn restrict(&self, keep: &[usize]) -> Partition {
        let labels: Vec<usize> = keep.iter().map(|&i| self.labels[i]).collect();
        Partition::from_labels(&labels)
    }

    /// Allocation string, labels joined by `-`.
    pub fn to_allocation_string(&self) -> String {
        let parts: Vec<String> = self.labels.iter().map(|l| l.to_string()).collect();
        parts.join("-")
    }

    pub fn parse_allocation_string(s: &str) -> Result<Partition> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(Partition::from_labels(&[]));
        }
        let labels = s
            .split('-')
            .map(|t| {
                t.trim().parse::<usize>().map_err(|e| Error::Parse {
                    row: 0,
                    column: "allocations".into(),
                    message: format!("bad label `{t}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Partition::try_new(&labels, labels.len())
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let blocks = self.blocks();
        write!(f, "{{")?;
        for (b, block) in blocks.iter().enumerate() {
            if b > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{block:?}")?;
        }
        write!(f, "}}")
    }
}

/// Enumerates every set partition of `n` items as canonical label vectors
/// (restricted growth strings). Bell(n) entries.
pub fn enumerate_partitions(n: usize) -> Vec<Partition> {
    let mut out = Vec::new();
    if n == 0 {
        out.push(Partition::from_labels(&[]));
        return out;
    }
    let mut labels = vec![0usize; n];
    fn rec(pos: usize, max: usize, labels: &mut Vec<usize>, out: &mut Vec<Partition>) {
        if pos == labels.len() {
            out.push(Partition::from_labels(labels));
            return;
        }
        for l in 0..=max + 1 {
            labels[pos] = l;
            rec(pos + 1, max.max(l), labels, out);
        }
    }
    rec(1, 0, &mut labels, &mut out);
    out
}
