//! Clustering metrics, the k-means baseline, cluster-count estimation and
//! the alternative similarity measures used for comparison.

mod hungarian;
mod kmeans;
mod silhouette;
mod similarity;

pub use hungarian::{assignment_max, hungarian_acc, ContingencyTable};
pub use kmeans::{kmeans, KMeansResult};
pub use silhouette::{estimate_q, silhouette_score, QEstimate};
pub use similarity::{alt_similarity, AltSimilarity};

use crate::{Error, Result};

pub(crate) fn check_rows(features: &[Vec<f64>], min: usize) -> Result<usize> {
    if features.len() < min {
        return Err(Error::InvalidInput(format!(
            "need at least {min} samples, got {}",
            features.len()
        )));
    }
    let f = features[0].len();
    if features.iter().any(|r| r.len() != f) {
        return Err(Error::Shape("feature rows differ in length".into()));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("features must be finite".into()));
    }
    Ok(f)
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
