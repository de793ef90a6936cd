use rand::seq::index::sample;
use rayon::prelude::*;

use super::{check_rows, sq_dist};
use crate::rng::rng_from;
use crate::{Error, Result};

const MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares.
    pub inertia: f64,
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn lloyd(features: &[Vec<f64>], q: usize, seed: u64, restart: u64) -> KMeansResult {
    let m = features.len();
    let mut rng = rng_from(seed, &[restart]);
    let mut centroids: Vec<Vec<f64>> = sample(&mut rng, m, q)
        .into_iter()
        .map(|i| features[i].clone())
        .collect();
    let mut labels = vec![usize::MAX; m];
    for _ in 0..MAX_ITER {
        let mut changed = false;
        for (x, l) in features.iter().zip(labels.iter_mut()) {
            let (k, _) = nearest(x, &centroids);
            if *l != k {
                *l = k;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let f = features[0].len();
        let mut sums = vec![vec![0.0; f]; q];
        let mut counts = vec![0usize; q];
        for (x, &l) in features.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(x) {
                *s += v;
            }
        }
        for k in 0..q {
            // an emptied cluster keeps its previous centroid
            if counts[k] > 0 {
                centroids[k] = sums[k].iter().map(|s| s / counts[k] as f64).collect();
            }
        }
    }
    let inertia = features
        .iter()
        .zip(&labels)
        .map(|(x, &l)| sq_dist(x, &centroids[l]))
        .sum();
    KMeansResult {
        labels,
        centroids,
        inertia,
    }
}

/// Lloyd's algorithm from `restarts` seeded random-sample initialisations;
/// the run with the lowest inertia wins (earliest on ties).
pub fn kmeans(features: &[Vec<f64>], q: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    check_rows(features, 1)?;
    if q < 2 {
        return Err(Error::Config(format!("k-means needs Q >= 2, got {q}")));
    }
    if q > features.len() {
        return Err(Error::InvalidInput(format!(
            "Q = {q} exceeds the {} samples",
            features.len()
        )));
    }
    let runs: Vec<KMeansResult> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| lloyd(features, q, seed, r))
        .collect();
    Ok(runs
        .into_iter()
        .reduce(|best, r| if r.inertia < best.inertia { r } else { best })
        .expect("at least one restart"))
}
