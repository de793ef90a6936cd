use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Counts of (predicted cluster, true class) pairs over compacted label sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    /// Distinct predicted labels, ascending; row order of `counts`.
    pub predicted: Vec<usize>,
    /// Distinct true labels, ascending; column order of `counts`.
    pub truth: Vec<usize>,
    pub counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn new(predicted: &[usize], truth: &[usize]) -> Result<Self> {
        if predicted.is_empty() || predicted.len() != truth.len() {
            return Err(Error::InvalidInput(format!(
                "need equal-length non-empty label vectors, got {} and {}",
                predicted.len(),
                truth.len()
            )));
        }
        let distinct = |v: &[usize]| {
            let mut d = v.to_vec();
            d.sort_unstable();
            d.dedup();
            d
        };
        let (p, t) = (distinct(predicted), distinct(truth));
        let mut counts = vec![vec![0u64; t.len()]; p.len()];
        for (a, b) in predicted.iter().zip(truth) {
            let i = p.binary_search(a).expect("present");
            let j = t.binary_search(b).expect("present");
            counts[i][j] += 1;
        }
        Ok(ContingencyTable {
            predicted: p,
            truth: t,
            counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Optimal one-to-one mapping predicted label -> true label, and the
    /// number of samples it matches. Unmatched predicted labels are absent.
    pub fn best_mapping(&self) -> (Vec<(usize, usize)>, u64) {
        let n = self.predicted.len().max(self.truth.len());
        let mut w = vec![vec![0i64; n]; n];
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                w[i][j] = c as i64;
            }
        }
        let assign = assignment_max(&w);
        let mut pairs = Vec::new();
        let mut matched = 0;
        for (i, &j) in assign.iter().enumerate() {
            if i < self.predicted.len() && j < self.truth.len() {
                pairs.push((self.predicted[i], self.truth[j]));
                matched += self.counts[i][j];
            }
        }
        (pairs, matched)
    }
}

/// Maximum-weight perfect matching on a square matrix (O(n^3) shortest
/// augmenting paths on the negated weights). Returns the column of each row.
pub fn assignment_max(weights: &[Vec<i64>]) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based potentials; column 0 is the virtual start
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
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
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    row_to_col
}

/// Clustering accuracy: the fraction of samples matched under the best
/// one-to-one mapping of predicted clusters onto true classes.
pub fn hungarian_acc(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(predicted, truth)?;
    let (_, matched) = table.best_mapping();
    Ok(matched as f64 / table.total() as f64)
}
