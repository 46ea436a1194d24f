//! Clustering evaluation: accuracy under the best cluster-to-class
//! matching, normalized mutual information and adjusted Rand index.

use std::collections::BTreeMap;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;

use crate::error::{Error, Result};

/// Cross-tabulation of two labelings. Labels are compacted to `0..C` in
/// ascending order of their original value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
    row_sums: Vec<u64>,
    col_sums: Vec<u64>,
    total: u64,
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    for &l in labels {
        let next = ids.len();
        ids.entry(l).or_insert(next);
    }
    // Re-number by sorted value so the table does not depend on order of
    // first appearance.
    for (rank, v) in ids.values_mut().enumerate() {
        *v = rank;
    }
    (labels.iter().map(|l| ids[l]).collect(), ids.len())
}

impl ContingencyTable {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::contract(format!(
                "label lengths differ: {} predicted, {} true",
                pred.len(),
                truth.len()
            )));
        }
        if pred.is_empty() {
            return Err(Error::contract("no labels to compare"));
        }
        let (p, rows) = compact(pred);
        let (t, cols) = compact(truth);
        let mut counts = vec![vec![0u64; cols]; rows];
        for (&i, &j) in p.iter().zip(&t) {
            counts[i][j] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..cols).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(Self {
            counts,
            row_sums,
            col_sums,
            total: pred.len() as u64,
        })
    }

    pub fn count(&self, pred: usize, truth: usize) -> u64 {
        self.counts[pred][truth]
    }

    pub fn pred_sizes(&self) -> &[u64] {
        &self.row_sums
    }

    pub fn truth_sizes(&self) -> &[u64] {
        &self.col_sums
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Largest total count of a one-to-one cluster-to-class matching.
    pub fn best_matching(&self) -> u64 {
        let size = self.row_sums.len().max(self.col_sums.len());
        let weights = Matrix::from_fn(size, size, |(i, j)| {
            self.counts.get(i).and_then(|r| r.get(j)).map_or(0, |&c| c as i64)
        });
        let (total, _) = kuhn_munkres(&weights);
        total as u64
    }

    /// Both labelings induce the same partition.
    pub fn identical_partitions(&self) -> bool {
        self.row_sums.len() == self.col_sums.len()
            && self.counts.iter().all(|r| r.iter().filter(|&&c| c > 0).count() == 1)
            && (0..self.col_sums.len()).all(|j| self.counts.iter().filter(|r| r[j] > 0).count() == 1)
    }
}

/// Fraction of points correctly labeled under the optimal matching of
/// predicted clusters to true classes.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    Ok(table.best_matching() as f64 / table.total() as f64)
}

fn entropy(sizes: &[u64], n: f64) -> f64 {
    sizes
        .iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let p = s as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the arithmetic mean of the two
/// entropies.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    let n = table.total() as f64;
    let hp = entropy(table.pred_sizes(), n);
    let ht = entropy(table.truth_sizes(), n);
    let denom = 0.5 * (hp + ht);
    if denom <= 0.0 {
        return Ok(if table.identical_partitions() { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let c = c as f64;
            let outer = table.row_sums[i] as f64 * table.col_sums[j] as f64;
            mi += c / n * (c * n / outer).ln();
        }
    }
    Ok((mi.max(0.0) / denom).min(1.0))
}

fn pairs(k: u64) -> f64 {
    k as f64 * (k.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index by pair counting.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    let index: f64 = table.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let a: f64 = table.pred_sizes().iter().map(|&s| pairs(s)).sum();
    let b: f64 = table.truth_sizes().iter().map(|&s| pairs(s)).sum();
    let all = pairs(table.total());
    let expected = if all > 0.0 { a * b / all } else { 0.0 };
    let max = 0.5 * (a + b);
    let denom = max - expected;
    if denom == 0.0 {
        return Ok(if table.identical_partitions() { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denom)
}

/// The three scores reported for a clustering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterMetrics {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

impl ClusterMetrics {
    pub fn evaluate(pred: &[usize], truth: &[usize]) -> Result<Self> {
        Ok(Self {
            acc: accuracy(pred, truth)?,
            nmi: nmi(pred, truth)?,
            ari: ari(pred, truth)?,
        })
    }
}
