use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_rows, kmeans, sq_dist};
use crate::{Error, Result};

/// Mean silhouette with Euclidean distance. Samples in singleton clusters
/// score 0.
pub fn silhouette_score(features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_rows(features, 2)?;
    if labels.len() != features.len() {
        return Err(Error::InvalidInput(format!(
            "{} labels for {} samples",
            labels.len(),
            features.len()
        )));
    }
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::InvalidInput(
            "silhouette is undefined for a single cluster".into(),
        ));
    }
    let slot = |l: usize| ids.binary_search(&l).expect("present");
    let sizes = labels.iter().fold(vec![0usize; ids.len()], |mut acc, &l| {
        acc[slot(l)] += 1;
        acc
    });
    let scores: Vec<f64> = (0..features.len())
        .into_par_iter()
        .map(|i| {
            let own = slot(labels[i]);
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; ids.len()];
            for (j, x) in features.iter().enumerate() {
                if j != i {
                    sums[slot(labels[j])] += sq_dist(&features[i], x).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..ids.len())
                .filter(|&k| k != own)
                .map(|k| sums[k] / sizes[k] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QEstimate {
    pub q: usize,
    /// (Q, silhouette) for every candidate.
    pub scores: Vec<(usize, f64)>,
}

pub const ESTIMATE_Q_RESTARTS: usize = 10;

/// Picks the cluster count in `[q_min, q_max]` whose k-means partition has
/// the highest silhouette; the smallest Q wins ties.
pub fn estimate_q(
    features: &[Vec<f64>],
    q_min: usize,
    q_max: usize,
    seed: u64,
) -> Result<QEstimate> {
    if q_min < 2 || q_min > q_max || q_max >= features.len() {
        return Err(Error::Config(format!(
            "need 2 <= q_min <= q_max < M, got [{q_min}, {q_max}] with M = {}",
            features.len()
        )));
    }
    let scores = (q_min..=q_max)
        .map(|q| {
            let km = kmeans(features, q, seed, ESTIMATE_Q_RESTARTS)?;
            let s = if km.labels.iter().all(|&l| l == km.labels[0]) {
                // every point identical: no separation at all
                -1.0
            } else {
                silhouette_score(features, &km.labels)?
            };
            Ok((q, s))
        })
        .collect::<Result<Vec<_>>>()?;
    let best = scores
        .iter()
        .fold(scores[0], |best, &c| if c.1 > best.1 { c } else { best });
    Ok(QEstimate { q: best.0, scores })
}
