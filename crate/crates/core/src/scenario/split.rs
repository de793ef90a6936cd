use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{LabeledScenario, ScenarioDataset, ScenarioTensor};
use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Self {
        SplitRatios { train, val, test }
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

/// Largest-remainder apportionment of `n` items.
fn apportion(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let raw = ratios.map(|r| r * n as f64);
    let mut counts = raw.map(|r| r.floor() as usize);
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        (raw[b] - raw[b].floor())
            .partial_cmp(&(raw[a] - raw[a].floor()))
            .unwrap()
            .then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        if ratios[k] > 0.0 {
            counts[k] += 1;
            rest -= 1;
        }
    }
    counts
}

enum Item<'a> {
    Labeled(&'a LabeledScenario),
    Unlabeled(&'a ScenarioTensor, Option<usize>),
}

/// Stratified train/val/test split; strata are catalogue classes.
///
/// Datasets without ground truth for unlabelled tensors treat them as one
/// stratum.
pub fn split_dataset(
    dataset: &ScenarioDataset,
    ratios: SplitRatios,
    seed: u64,
) -> Result<[ScenarioDataset; 3]> {
    let r = ratios.as_array();
    if r.iter().any(|&x| !x.is_finite() || x < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be non-negative and sum to 1, got {r:?}"
        )));
    }
    let parts = r.iter().filter(|&&x| x > 0.0).count();

    // stratum key: Some(class) or None for unknown truth
    let mut strata: std::collections::BTreeMap<Option<usize>, Vec<Item>> = Default::default();
    for s in &dataset.labeled {
        let class = dataset.labeled_classes[s.label()];
        strata
            .entry(Some(class))
            .or_default()
            .push(Item::Labeled(s));
    }
    for (n, t) in dataset.unlabeled.iter().enumerate() {
        let class = dataset.unlabeled_truth.as_ref().map(|tr| tr[n]);
        strata
            .entry(class)
            .or_default()
            .push(Item::Unlabeled(t, class));
    }

    let empty = || ScenarioDataset {
        grid: dataset.grid,
        class_names: dataset.class_names.clone(),
        labeled_classes: dataset.labeled_classes.clone(),
        labeled: vec![],
        unlabeled: vec![],
        unlabeled_truth: dataset.unlabeled_truth.as_ref().map(|_| vec![]),
    };
    let mut out = [empty(), empty(), empty()];
    for (key, mut items) in strata {
        if items.len() < parts {
            return Err(Error::Stratification(format!(
                "class {key:?} has {} samples, fewer than {parts} split parts",
                items.len()
            )));
        }
        let mut rng = rng_from(seed, &[key.map_or(u64::MAX, |k| k as u64)]);
        items.shuffle(&mut rng);
        let counts = apportion(items.len(), r);
        let mut it = items.into_iter();
        for (part, &count) in out.iter_mut().zip(counts.iter()) {
            for item in it.by_ref().take(count) {
                match item {
                    Item::Labeled(s) => part.labeled.push(s.clone()),
                    Item::Unlabeled(t, class) => {
                        part.unlabeled.push(t.clone());
                        if let (Some(truth), Some(c)) = (part.unlabeled_truth.as_mut(), class) {
                            truth.push(c);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_synthetic, GeneratorConfig, GridConfig, ManeuverClass};
    use proptest::prelude::*;

    fn dataset(n: usize) -> ScenarioDataset {
        let cfg = GeneratorConfig {
            seed: 8,
            n_per_class: n,
            grid: GridConfig::desk(),
            classes: ManeuverClass::ALL.to_vec(),
        };
        generate_synthetic(&cfg).unwrap()
    }

    fn ids(d: &ScenarioDataset) -> Vec<u64> {
        d.labeled
            .iter()
            .map(|s| s.tensor.id)
            .chain(d.unlabeled.iter().map(|t| t.id))
            .collect()
    }

    #[test]
    fn seventy_samples_split_49_7_14() {
        let [a, b, c] = split_dataset(&dataset(10), SplitRatios::new(0.7, 0.1, 0.2), 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (49, 7, 14));
    }

    #[test]
    fn all_in_train() {
        let d = dataset(2);
        let [a, b, c] = split_dataset(&d, SplitRatios::new(1.0, 0.0, 0.0), 1).unwrap();
        assert_eq!(a.len(), d.len());
        assert!(b.is_empty() && c.is_empty());
    }

    #[test]
    fn tiny_class_fails_stratification() {
        let d = dataset(2);
        assert!(matches!(
            split_dataset(&d, SplitRatios::new(0.7, 0.1, 0.2), 1),
            Err(Error::Stratification(_))
        ));
        assert!(matches!(
            split_dataset(&d, SplitRatios::new(0.7, 0.1, 0.1), 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn labelled_samples_split_too() {
        let d = dataset(10)
            .with_label_split(&[0, 1, 2, 3], &[4, 5, 6])
            .unwrap();
        let [a, b, c] = split_dataset(&d, SplitRatios::new(0.7, 0.1, 0.2), 4).unwrap();
        assert_eq!(a.labeled.len(), 28);
        assert_eq!(b.labeled.len() + c.labeled.len(), 12);
        assert_eq!(a.unlabeled.len(), a.unlabeled_truth.as_ref().unwrap().len());
    }

    #[test]
    fn apportion_handles_inexact_products() {
        assert_eq!(apportion(30, [0.7, 0.1, 0.2]), [21, 3, 6]);
        assert_eq!(apportion(3, [0.5, 0.5, 0.0]), [2, 1, 0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn split_is_a_partition(seed in 0u64..10_000, t in 0.3f64..0.8, v in 0.05f64..0.15) {
            let d = dataset(5);
            let ratios = SplitRatios::new(t, v, 1.0 - t - v);
            let parts = split_dataset(&d, ratios, seed).unwrap();
            let mut got: Vec<u64> = parts.iter().flat_map(ids).collect();
            got.sort_unstable();
            let mut want = ids(&d);
            want.sort_unstable();
            prop_assert_eq!(got, want);
            let again = split_dataset(&d, ratios, seed).unwrap();
            prop_assert_eq!(ids(&again[0]), ids(&parts[0]));
        }
    }
}
