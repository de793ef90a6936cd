//! Occupancy-grid scenario tensors: construction, ingestion, shuffling,
//! augmentation, splitting and persistence.

mod augment;
mod grid;
mod highd;
mod io;
mod permutation;
mod split;
mod synth;

use std::cell::Cell;

use serde::{Deserialize, Serialize};

pub use augment::{augment, augment_unclipped, AugmentParams};
pub use grid::{
    build_grid_frame, GridConfig, OccupancyGrid, Rect, SceneFrame, Visibility, FREE, OCCUPIED,
    UNKNOWN,
};
pub use highd::{ingest_highd, IngestReport, Trigger};
pub use io::{load_dataset, save_dataset, DatasetManifest, SampleRecord};
pub use permutation::{shuffle_temporal, PermutationLabel, PRETEXT_CLASSES};
pub use split::{split_dataset, SplitRatios};
pub use synth::{
    generate_synthetic, synthesize_scene, GeneratorConfig, ManeuverClass, SyntheticScene, Track,
};

use crate::error::{Error, Result};

/// `N_ts` occupancy grids stacked oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTensor {
    pub id: u64,
    pub frames: Vec<OccupancyGrid>,
    /// Source frame index held at each position; identity for real data.
    pub frame_order: Vec<usize>,
}

impl ScenarioTensor {
    pub fn new(id: u64, frames: Vec<OccupancyGrid>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::InvalidInput(
                "scenario tensor needs at least one frame".into(),
            ));
        };
        let (rows, cols) = (first.rows, first.cols);
        if frames
            .iter()
            .any(|f| f.rows != rows || f.cols != cols || f.values.len() != rows * cols)
        {
            return Err(Error::Shape(
                "all frames of a tensor must share (I, J)".into(),
            ));
        }
        let frame_order = (0..frames.len()).collect();
        Ok(ScenarioTensor {
            id,
            frames,
            frame_order,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn rows(&self) -> usize {
        self.frames[0].rows
    }

    pub fn cols(&self) -> usize {
        self.frames[0].cols
    }

    pub fn matches(&self, grid: &GridConfig) -> bool {
        self.n_frames() == grid.n_timesteps && self.rows() == grid.rows && self.cols() == grid.cols
    }

    /// All cells, frames outermost then rows then columns.
    pub fn values(&self) -> impl Iterator<Item = f32> + '_ {
        self.frames.iter().flat_map(|f| f.values.iter().copied())
    }

    pub fn is_three_valued(&self) -> bool {
        self.frames.iter().all(OccupancyGrid::is_three_valued)
    }
}

thread_local! {
    static LABEL_READS: Cell<u64> = const { Cell::new(0) };
}

/// Number of times [`LabeledScenario::label`] was called on this thread.
pub fn label_reads() -> u64 {
    LABEL_READS.with(Cell::get)
}

/// A tensor with its class label `y` in `0..K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScenario {
    pub tensor: ScenarioTensor,
    label: usize,
}

impl LabeledScenario {
    pub fn new(tensor: ScenarioTensor, label: usize) -> Self {
        LabeledScenario { tensor, label }
    }

    /// Reads are counted so tests can audit that label-free stages never
    /// touch ground truth.
    pub fn label(&self) -> usize {
        LABEL_READS.with(|c| c.set(c.get() + 1));
        self.label
    }
}

/// Labelled and unlabelled scenarios over a shared class catalogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDataset {
    pub grid: GridConfig,
    /// Full catalogue of class names; class ids index into this list.
    pub class_names: Vec<String>,
    /// Catalogue ids of the labelled classes; label `k` means `labeled_classes[k]`.
    pub labeled_classes: Vec<usize>,
    pub labeled: Vec<LabeledScenario>,
    pub unlabeled: Vec<ScenarioTensor>,
    /// Catalogue id of each unlabelled tensor, for evaluation only.
    pub unlabeled_truth: Option<Vec<usize>>,
}

impl ScenarioDataset {
    /// Number of labelled classes `K`.
    pub fn k(&self) -> usize {
        self.labeled_classes.len()
    }

    /// Number of distinct ground-truth classes among unlabelled tensors.
    pub fn q_truth(&self) -> Option<usize> {
        self.unlabeled_truth.as_ref().map(|t| {
            let mut c = t.clone();
            c.sort_unstable();
            c.dedup();
            c.len()
        })
    }

    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every tensor, labelled first, without touching labels.
    pub fn all_tensors(&self) -> Vec<ScenarioTensor> {
        self.labeled
            .iter()
            .map(|s| s.tensor.clone())
            .chain(self.unlabeled.iter().cloned())
            .collect()
    }

    /// Catalogue class of every sample (labelled first) when known.
    pub(crate) fn sample_classes(&self) -> Option<Vec<usize>> {
        let truth = self.unlabeled_truth.as_ref()?;
        let mut out: Vec<usize> = self
            .labeled
            .iter()
            .map(|s| self.labeled_classes[s.label])
            .collect();
        out.extend(truth.iter().copied());
        Some(out)
    }

    /// Rebuilds the labelled/unlabelled partition by catalogue class.
    ///
    /// Samples of classes in neither list are dropped. Requires ground truth
    /// for every sample.
    pub fn with_label_split(&self, labeled: &[usize], unlabeled: &[usize]) -> Result<Self> {
        if let Some(c) = labeled.iter().find(|c| unlabeled.contains(c)) {
            return Err(Error::Config(format!(
                "class {} is both labelled and unlabelled",
                self.class_names.get(*c).map_or("?", String::as_str)
            )));
        }
        if let Some(c) = labeled
            .iter()
            .chain(unlabeled)
            .find(|&&c| c >= self.class_names.len())
        {
            return Err(Error::Config(format!(
                "class id {c} is not in the catalogue"
            )));
        }
        let classes = self.sample_classes().ok_or_else(|| {
            Error::Config("label split needs ground truth for every sample".into())
        })?;
        let mut out = ScenarioDataset {
            grid: self.grid,
            class_names: self.class_names.clone(),
            labeled_classes: labeled.to_vec(),
            labeled: vec![],
            unlabeled: vec![],
            unlabeled_truth: Some(vec![]),
        };
        let tensors = self
            .labeled
            .iter()
            .map(|s| &s.tensor)
            .chain(self.unlabeled.iter());
        for (tensor, class) in tensors.zip(classes) {
            if let Some(k) = labeled.iter().position(|&c| c == class) {
                out.labeled.push(LabeledScenario::new(tensor.clone(), k));
            } else if unlabeled.contains(&class) {
                out.unlabeled.push(tensor.clone());
                out.unlabeled_truth.as_mut().unwrap().push(class);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset() -> ScenarioDataset {
        let cfg = GeneratorConfig {
            seed: 5,
            n_per_class: 3,
            grid: GridConfig::desk(),
            classes: ManeuverClass::ALL.to_vec(),
        };
        generate_synthetic(&cfg).unwrap()
    }

    #[test]
    fn label_split_partitions_by_class() {
        let ds = tiny_dataset();
        let split = ds.with_label_split(&[0, 1, 2, 3], &[4, 5, 6]).unwrap();
        assert_eq!(split.k(), 4);
        assert_eq!(split.labeled.len(), 12);
        assert_eq!(split.unlabeled.len(), 9);
        assert_eq!(split.q_truth(), Some(3));
        let truth = split.unlabeled_truth.as_ref().unwrap();
        assert!(truth.iter().all(|c| [4, 5, 6].contains(c)));
        assert!(split.labeled.iter().all(|s| s.label() < 4));
    }

    #[test]
    fn overlapping_split_is_rejected() {
        let ds = tiny_dataset();
        assert!(matches!(
            ds.with_label_split(&[0, 1], &[1, 2]),
            Err(Error::Config(_))
        ));
        assert!(ds.with_label_split(&[0, 9], &[1]).is_err());
    }

    #[test]
    fn mismatched_frames_are_rejected() {
        let a = OccupancyGrid::filled(2, 3, 0.0);
        let b = OccupancyGrid::filled(3, 2, 0.0);
        assert!(matches!(
            ScenarioTensor::new(0, vec![a, b]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn label_reads_are_counted() {
        let t = ScenarioTensor::new(0, vec![OccupancyGrid::filled(1, 1, 0.0)]).unwrap();
        let s = LabeledScenario::new(t, 2);
        let before = label_reads();
        assert_eq!(s.label(), 2);
        assert_eq!(label_reads(), before + 1);
    }
}
