use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_rows, sq_dist};
use crate::urf::SimilarityMatrix;
use crate::{Error, Result};

/// Baseline similarity measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum AltSimilarity {
    /// max(0, cosine).
    Cosine,
    /// Gaussian kernel with the median pairwise distance as bandwidth.
    L2,
    /// 1 for mutual k-nearest neighbours, else 0.
    Knn { k: usize },
    /// 1 when the top-k magnitude dimensions form the same index set.
    Rank { k: usize },
}

fn pairwise_dist(features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..features.len())
        .into_par_iter()
        .map(|i| {
            features
                .iter()
                .map(|x| sq_dist(&features[i], x).sqrt())
                .collect()
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn top_k(x: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    // stable sort: equal magnitudes keep the lower index first
    idx.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()));
    let mut top = idx[..k].to_vec();
    top.sort_unstable();
    top
}

/// Builds a symmetric, unit-diagonal similarity matrix with one of the
/// baseline measures. Identical vectors always score 1.
pub fn alt_similarity(features: &[Vec<f64>], method: AltSimilarity) -> Result<SimilarityMatrix> {
    let f = check_rows(features, 2)?;
    let m = features.len();
    let same = |i: usize, j: usize| features[i] == features[j];
    Ok(match method {
        AltSimilarity::Cosine => {
            let norms: Vec<f64> = features
                .iter()
                .map(|x| sq_dist(x, &vec![0.0; f]).sqrt())
                .collect();
            SimilarityMatrix::symmetric_from_fn(m, |i, j| {
                if same(i, j) {
                    return 1.0;
                }
                let d = norms[i] * norms[j];
                if d == 0.0 {
                    return 0.0;
                }
                let dot: f64 = features[i]
                    .iter()
                    .zip(&features[j])
                    .map(|(a, b)| a * b)
                    .sum();
                (dot / d).clamp(0.0, 1.0)
            })
        }
        AltSimilarity::L2 => {
            let d = pairwise_dist(features);
            let upper: Vec<f64> = (0..m).flat_map(|i| d[i][i + 1..].to_vec()).collect();
            let sigma = median(upper);
            SimilarityMatrix::symmetric_from_fn(m, |i, j| {
                if sigma == 0.0 {
                    if d[i][j] == 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    (-(d[i][j] * d[i][j]) / (sigma * sigma)).exp()
                }
            })
        }
        AltSimilarity::Knn { k } => {
            if k == 0 || k >= m {
                return Err(Error::Config(format!(
                    "kNN similarity needs 1 <= k < M = {m}, got {k}"
                )));
            }
            let d = pairwise_dist(features);
            let neigh: Vec<Vec<bool>> = (0..m)
                .map(|i| {
                    let mut order: Vec<usize> = (0..m).filter(|&j| j != i).collect();
                    order.sort_by(|&a, &b| d[i][a].total_cmp(&d[i][b]));
                    let mut mask = vec![false; m];
                    for &j in &order[..k] {
                        mask[j] = true;
                    }
                    mask
                })
                .collect();
            SimilarityMatrix::symmetric_from_fn(m, |i, j| {
                if same(i, j) || (neigh[i][j] && neigh[j][i]) {
                    1.0
                } else {
                    0.0
                }
            })
        }
        AltSimilarity::Rank { k } => {
            if k == 0 || k > f {
                return Err(Error::Config(format!(
                    "rank similarity needs 1 <= k <= F = {f}, got {k}"
                )));
            }
            let tops: Vec<Vec<usize>> = features.iter().map(|x| top_k(x, k)).collect();
            SimilarityMatrix::symmetric_from_fn(m, |i, j| {
                if same(i, j) || tops[i] == tops[j] {
                    1.0
                } else {
                    0.0
                }
            })
        }
    })
}
