use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{index_tree, Tree};
use crate::rng::{derive_seed, rng_from, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrfParams {
    /// Number of trees B.
    pub n_trees: usize,
    /// Depth cap (root = 1); `None` grows until nodes are pure or unsplittable.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features tried per split; `None` means ceil(sqrt(F)).
    pub mtry: Option<usize>,
    pub seed: u64,
}

impl Default for UrfParams {
    fn default() -> Self {
        UrfParams {
            n_trees: 100,
            max_depth: None,
            min_leaf: 1,
            mtry: None,
            seed: 0,
        }
    }
}

impl UrfParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("a forest needs at least one tree".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("min_leaf must be at least 1".into()));
        }
        if self.max_depth == Some(0) || self.mtry == Some(0) {
            return Err(Error::Config("max_depth and mtry must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    /// Feature dimension F the forest was trained on.
    pub n_features: usize,
    pub tree_seeds: Vec<u64>,
    /// Set when every feature was constant and all trees are single nodes.
    pub trivial: bool,
}

impl Forest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn check_features(features: &[Vec<f64>]) -> Result<usize> {
    let f = features.first().map_or(0, Vec::len);
    if features.iter().any(|r| r.len() != f) {
        return Err(Error::Shape("feature rows differ in length".into()));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("features must be finite".into()));
    }
    Ok(f)
}

/// Contrast sample for unsupervised forests: each column is resampled with
/// replacement from its own empirical marginal, independently of the others.
pub fn synthesize_contrast(features: &[Vec<f64>], seed: u64) -> Result<Vec<Vec<f64>>> {
    let f = check_features(features)?;
    let m = features.len();
    if m < 2 {
        return Err(Error::InvalidInput(format!(
            "contrast synthesis needs at least 2 samples, got {m}"
        )));
    }
    let mut out = vec![vec![0.0; f]; m];
    for j in 0..f {
        let mut rng = rng_from(seed, &[j as u64]);
        for row in out.iter_mut() {
            row[j] = features[rng.random_range(0..m)][j];
        }
    }
    Ok(out)
}

struct Pool<'a> {
    x: Vec<&'a [f64]>,
    /// 0 = real, 1 = synthetic.
    y: Vec<u8>,
}

struct Grower<'a> {
    pool: &'a Pool<'a>,
    n_features: usize,
    mtry: usize,
    min_leaf: usize,
    max_depth: usize,
}

fn gini(n0: usize, n1: usize) -> f64 {
    let n = (n0 + n1) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = n0 as f64 / n;
    2.0 * p * (1.0 - p)
}

impl Grower<'_> {
    /// Best split of `idx` on `feature`: (gain, threshold).
    fn best_on(
        &self,
        idx: &[usize],
        feature: usize,
        scratch: &mut Vec<(f64, u8)>,
    ) -> Option<(f64, f64)> {
        scratch.clear();
        scratch.extend(
            idx.iter()
                .map(|&i| (self.pool.x[i][feature], self.pool.y[i])),
        );
        scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = scratch.len();
        let total1 = scratch.iter().filter(|s| s.1 == 1).count();
        let parent = gini(n - total1, total1);
        let mut best: Option<(f64, f64)> = None;
        let mut left1 = 0;
        for k in 1..n {
            left1 += scratch[k - 1].1 as usize;
            if scratch[k].0 == scratch[k - 1].0 || k < self.min_leaf || n - k < self.min_leaf {
                continue;
            }
            let (l1, r1) = (left1, total1 - left1);
            let wl = k as f64 / n as f64;
            let child = wl * gini(k - l1, l1) + (1.0 - wl) * gini(n - k - r1, r1);
            let gain = parent - child;
            if best.is_none_or(|(g, _)| gain > g) {
                let mid = 0.5 * (scratch[k - 1].0 + scratch[k].0);
                // guard against the midpoint rounding onto the upper value
                let thr = if mid > scratch[k - 1].0 {
                    mid
                } else {
                    scratch[k].0
                };
                best = Some((gain, thr));
            }
        }
        best
    }

    fn grow(&self, tree: &mut Tree, node: usize, idx: Vec<usize>, depth: usize, rng: &mut Rng) {
        let n1 = idx.iter().filter(|&&i| self.pool.y[i] == 1).count();
        let pure = n1 == 0 || n1 == idx.len();
        if pure || depth >= self.max_depth || idx.len() < 2 * self.min_leaf {
            return;
        }
        let mut order: Vec<usize> = (0..self.n_features).collect();
        order.shuffle(rng);
        let mut scratch = Vec::with_capacity(idx.len());
        let mut best: Option<(f64, usize, f64)> = None;
        for (tried, &f) in order.iter().enumerate() {
            // keep drawing past mtry only while nothing splittable was found
            if tried >= self.mtry && best.is_some() {
                break;
            }
            if let Some((gain, thr)) = self.best_on(&idx, f, &mut scratch) {
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, thr));
                }
            }
        }
        let Some((_, f, thr)) = best else {
            return;
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.pool.x[i][f] < thr);
        let (l, r) = tree.split(node, f, thr).expect("node is terminal");
        self.grow(tree, l, left, depth + 1, rng);
        self.grow(tree, r, right, depth + 1, rng);
    }
}

/// Trains an unsupervised random forest: each tree separates a bootstrap of
/// the real rows (class 0) and a marginal-resampled contrast set (class 1)
/// with Gini splits, then gets its nodes indexed.
pub fn train_urf(features: &[Vec<f64>], params: &UrfParams) -> Result<Forest> {
    params.validate()?;
    let f = check_features(features)?;
    let synthetic = synthesize_contrast(features, derive_seed(params.seed, &[u64::MAX]))?;
    let pool = Pool {
        x: features
            .iter()
            .chain(&synthetic)
            .map(Vec::as_slice)
            .collect(),
        y: std::iter::repeat_n(0u8, features.len())
            .chain(std::iter::repeat_n(1u8, synthetic.len()))
            .collect(),
    };
    let mtry = params
        .mtry
        .unwrap_or_else(|| (f as f64).sqrt().ceil() as usize)
        .clamp(1, f.max(1));
    let grower = Grower {
        pool: &pool,
        n_features: f,
        mtry,
        min_leaf: params.min_leaf,
        max_depth: params.max_depth.unwrap_or(usize::MAX),
    };
    let tree_seeds: Vec<u64> = (0..params.n_trees)
        .map(|b| derive_seed(params.seed, &[b as u64]))
        .collect();
    let n = pool.y.len();
    let trees: Vec<Tree> = tree_seeds
        .par_iter()
        .map(|&s| {
            let mut rng = rng_from(s, &[]);
            let boot: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut tree = Tree::new();
            grower.grow(&mut tree, 0, boot, 1, &mut rng);
            index_tree(&mut tree);
            tree
        })
        .collect();
    let trivial = trees.iter().all(|t| t.n_nodes() == 1);
    if trivial {
        log::warn!("all features constant: forest consists of single-node trees");
    }
    Ok(Forest {
        trees,
        n_features: f,
        tree_seeds,
        trivial,
    })
}
