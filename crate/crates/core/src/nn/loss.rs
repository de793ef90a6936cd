//! Training objectives, each returning the loss and its gradient with respect
//! to the head outputs (probabilities).

use crate::urf::SimilarityMatrix;
use crate::{Error, Result};

const CCE_FLOOR: f64 = 1e-30;
const PAIR_CLAMP: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-9;

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Contract(format!(
            "{what} row is not a probability distribution (sum {sum})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CceOutput {
    pub loss: f64,
    pub grad: Vec<Vec<f64>>,
    /// Number of samples whose true-class probability hit the floor.
    pub clamped: usize,
}

/// Mean over the batch of `-ln p[target]`.
pub fn categorical_cross_entropy(probs: &[Vec<f64>], targets: &[usize]) -> Result<CceOutput> {
    if probs.is_empty() || probs.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "cross entropy needs matching non-empty batches, got {} predictions and {} targets",
            probs.len(),
            targets.len()
        )));
    }
    let m = probs.len() as f64;
    let mut loss = 0.0;
    let mut clamped = 0;
    let mut grad = Vec::with_capacity(probs.len());
    for (row, &y) in probs.iter().zip(targets) {
        check_distribution(row, "cross entropy")?;
        if y >= row.len() {
            return Err(Error::InvalidInput(format!(
                "target class {y} outside {} outputs",
                row.len()
            )));
        }
        let mut g = vec![0.0; row.len()];
        let p = row[y];
        if p < CCE_FLOOR {
            clamped += 1;
            loss -= CCE_FLOOR.ln();
        } else {
            loss -= p.ln();
            g[y] = -1.0 / (m * p);
        }
        grad.push(g);
    }
    if clamped > 0 {
        log::warn!("cross entropy: {clamped} true-class probabilities clamped to {CCE_FLOOR}");
    }
    Ok(CceOutput {
        loss: loss / m,
        grad,
        clamped,
    })
}

#[derive(Debug, Clone)]
pub struct PairwiseOutput {
    pub loss: f64,
    pub grad: Vec<Vec<f64>>,
    /// Ordered pairs whose inner product was clamped.
    pub clamped: usize,
}

/// Binary cross entropy between `S_ij` and `p_ij = probs_i . probs_j`,
/// averaged over all `W^2` ordered pairs including `i = j`.
pub fn pairwise_cluster_loss(s: &SimilarityMatrix, probs: &[Vec<f64>]) -> Result<PairwiseOutput> {
    let w = probs.len();
    if w == 0 || s.n() != w {
        return Err(Error::Shape(format!(
            "similarity matrix of order {} for a batch of {w}",
            s.n()
        )));
    }
    let asym = s.max_asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::Contract(format!(
            "similarity matrix is asymmetric by {asym:e}"
        )));
    }
    let q = probs[0].len();
    for row in probs {
        if row.len() != q {
            return Err(Error::Shape(format!(
                "cluster probabilities have ragged rows ({} vs {q})",
                row.len()
            )));
        }
        check_distribution(row, "cluster probability")?;
    }
    let scale = 1.0 / (w * w) as f64;
    let mut loss = 0.0;
    let mut clamped = 0;
    // d[i][j] = dL/dp_ij
    let mut d = vec![0.0; w * w];
    for i in 0..w {
        for j in 0..w {
            let raw: f64 = probs[i].iter().zip(&probs[j]).map(|(a, b)| a * b).sum();
            let t = s.get(i, j);
            let p = raw.clamp(PAIR_CLAMP, 1.0 - PAIR_CLAMP);
            loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
            if p != raw {
                clamped += 1;
            } else {
                d[i * w + j] = -scale * (t / p - (1.0 - t) / (1.0 - p));
            }
        }
    }
    let mut grad = vec![vec![0.0; q]; w];
    for i in 0..w {
        for j in 0..w {
            let c = d[i * w + j] + d[j * w + i];
            if c != 0.0 {
                for (g, &pj) in grad[i].iter_mut().zip(&probs[j]) {
                    *g += c * pj;
                }
            }
        }
    }
    Ok(PairwiseOutput {
        loss: loss * scale,
        grad,
        clamped,
    })
}

#[derive(Debug, Clone)]
pub struct ConsistencyOutput {
    pub loss: f64,
    pub grad_clean: Vec<Vec<f64>>,
    pub grad_augmented: Vec<Vec<f64>>,
}

/// Mean over samples of the squared distance between the head outputs for a
/// scenario and its augmented copy. Apply once per head and add the results.
pub fn consistency_loss(clean: &[Vec<f64>], augmented: &[Vec<f64>]) -> Result<ConsistencyOutput> {
    if clean.is_empty() || clean.len() != augmented.len() {
        return Err(Error::Shape(format!(
            "consistency needs matching non-empty batches, got {} and {}",
            clean.len(),
            augmented.len()
        )));
    }
    let m = clean.len() as f64;
    let mut loss = 0.0;
    let mut gc = Vec::with_capacity(clean.len());
    let mut ga = Vec::with_capacity(clean.len());
    for (a, b) in clean.iter().zip(augmented) {
        if a.len() != b.len() {
            return Err(Error::Shape(format!(
                "consistency outputs differ in width ({} vs {})",
                a.len(),
                b.len()
            )));
        }
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        loss += diff.iter().map(|d| d * d).sum::<f64>();
        gc.push(diff.iter().map(|d| 2.0 * d / m).collect());
        ga.push(diff.iter().map(|d| -2.0 * d / m).collect());
    }
    Ok(ConsistencyOutput {
        loss: loss / m,
        grad_clean: gc,
        grad_augmented: ga,
    })
}

/// `lambda * exp(-5 (1 - beta/T)^2)`, with `beta` clamped to `[0, T]`.
pub fn ramp_up_weight(beta: f64, ramp_length: f64, lambda: f64) -> f64 {
    if ramp_length <= 0.0 {
        return lambda;
    }
    let r = beta.clamp(0.0, ramp_length) / ramp_length;
    lambda * (-5.0 * (1.0 - r) * (1.0 - r)).exp()
}
