use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forest::Forest;
use super::tree::Tree;
use super::SimilarityMatrix;
use crate::{Error, Result};

/// Terminal path indices of one sample, one digit string per tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfapVector {
    pub ids: Vec<String>,
}

fn check_point(forest: &Forest, x: &[f64]) -> Result<()> {
    if x.len() != forest.n_features {
        return Err(Error::Shape(format!(
            "forest expects {} features, got {}",
            forest.n_features,
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "cannot encode a non-finite feature vector".into(),
        ));
    }
    Ok(())
}

pub fn rfap_encode(forest: &Forest, x: &[f64]) -> Result<RfapVector> {
    check_point(forest, x)?;
    Ok(RfapVector {
        ids: forest
            .trees
            .iter()
            .map(|t| t.nodes[t.terminal(x)].id.clone())
            .collect(),
    })
}

fn tree_agreement(a: &[u8], b: &[u8]) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    // 1 - mismatches/L, written as matches/L
    let matches = a.iter().zip(b).filter(|(x, y)| x == y).count();
    matches as f64 / a.len() as f64
}

/// One minus the mean, over trees, of the fraction of digit positions at
/// which the two terminal indices differ. Single-node trees count as full
/// agreement.
pub fn rfap_similarity(a: &RfapVector, b: &RfapVector) -> Result<f64> {
    if a.ids.len() != b.ids.len() || a.ids.is_empty() {
        return Err(Error::Contract(format!(
            "RFAP vectors of {} and {} trees",
            a.ids.len(),
            b.ids.len()
        )));
    }
    let mut total = 0.0;
    for (x, y) in a.ids.iter().zip(&b.ids) {
        if x.len() != y.len() {
            return Err(Error::Contract(format!(
                "terminal indices {x:?} and {y:?} differ in length"
            )));
        }
        total += tree_agreement(x.as_bytes(), y.as_bytes());
    }
    Ok(total / a.ids.len() as f64)
}

/// Pairwise RFAP similarity of a batch.
pub fn similarity_matrix(forest: &Forest, features: &[Vec<f64>]) -> Result<SimilarityMatrix> {
    let w = features.len();
    if w < 2 {
        return Err(Error::InvalidInput(format!(
            "similarity matrix needs at least 2 samples, got {w}"
        )));
    }
    let codes = features
        .par_iter()
        .map(|x| rfap_encode(forest, x))
        .collect::<Result<Vec<_>>>()?;
    let b = forest.n_trees() as f64;
    let upper: Vec<Vec<f64>> = (0..w)
        .into_par_iter()
        .map(|i| {
            (i + 1..w)
                .map(|j| {
                    codes[i]
                        .ids
                        .iter()
                        .zip(&codes[j].ids)
                        .map(|(x, y)| tree_agreement(x.as_bytes(), y.as_bytes()))
                        .sum::<f64>()
                        / b
                })
                .collect()
        })
        .collect();
    Ok(SimilarityMatrix::symmetric_from_fn(w, |i, j| {
        upper[i][j - i - 1]
    }))
}

/// Breiman proximity: fraction of trees in which two samples share a
/// terminal node.
pub fn breiman_proximity(forest: &Forest, features: &[Vec<f64>]) -> Result<SimilarityMatrix> {
    for x in features {
        check_point(forest, x)?;
    }
    let leaves: Vec<Vec<usize>> = features
        .par_iter()
        .map(|x| forest.trees.iter().map(|t| t.terminal(x)).collect())
        .collect();
    let b = forest.n_trees() as f64;
    Ok(SimilarityMatrix::symmetric_from_fn(
        features.len(),
        |i, j| {
            leaves[i]
                .iter()
                .zip(&leaves[j])
                .filter(|(a, c)| a == c)
                .count() as f64
                / b
        },
    ))
}

/// Independent check of the digit comparison: walks both root-to-terminal
/// paths through the tree's child links and compares the branch taken at
/// every level 2..=d_b (left, right, or none once a path has ended). The
/// stored ids are not consulted.
pub fn path_similarity_oracle(tree: &Tree, a: &[f64], b: &[f64]) -> f64 {
    let levels = tree.max_depth.saturating_sub(1);
    if levels == 0 {
        return 1.0;
    }
    let branches = |x: &[f64]| -> Vec<u8> {
        let path = tree.path(x);
        let mut out = vec![0u8; levels];
        for pair in path.windows(2) {
            let parent = &tree.nodes[pair[0]];
            let level = parent.depth; // child's depth minus one
            out[level - 1] = if parent.left == Some(pair[1]) { 1 } else { 2 };
        }
        out
    };
    let (pa, pb) = (branches(a), branches(b));
    let same = pa.iter().zip(&pb).filter(|(x, y)| x == y).count();
    same as f64 / levels as f64
}
