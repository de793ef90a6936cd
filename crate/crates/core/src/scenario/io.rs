//! Dataset persistence: a little-endian `f32` blob (tensor by tensor, frames
//! outermost, rows, then columns) next to a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GridConfig, LabeledScenario, OccupancyGrid, ScenarioDataset, ScenarioTensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: u64,
    /// Present for labelled samples, `0..K`.
    pub label: Option<usize>,
    /// Catalogue class if known.
    pub class: Option<usize>,
    pub frame_order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub blob: String,
    pub grid: GridConfig,
    pub class_names: Vec<String>,
    pub labeled_classes: Vec<usize>,
    pub k: usize,
    pub q_truth: Option<usize>,
    pub labeled: Vec<SampleRecord>,
    pub unlabeled: Vec<SampleRecord>,
}

const FORMAT: &str = "rfap-dataset-v1";

fn blob_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

/// Writes `<path>` (JSON manifest) and `<path>.bin` with the same stem.
pub fn save_dataset(dataset: &ScenarioDataset, manifest_path: &Path) -> Result<DatasetManifest> {
    let blob = blob_path(manifest_path);
    let mut bytes = Vec::with_capacity(dataset.len() * dataset.grid.cells_per_tensor() * 4);
    let mut record = |t: &ScenarioTensor, label: Option<usize>, class: Option<usize>| {
        for v in t.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        SampleRecord {
            id: t.id,
            label,
            class,
            frame_order: t.frame_order.clone(),
        }
    };
    let labeled = dataset
        .labeled
        .iter()
        .map(|s| {
            let label = s.label();
            record(&s.tensor, Some(label), Some(dataset.labeled_classes[label]))
        })
        .collect();
    let unlabeled = dataset
        .unlabeled
        .iter()
        .enumerate()
        .map(|(n, t)| record(t, None, dataset.unlabeled_truth.as_ref().map(|tr| tr[n])))
        .collect();
    let manifest = DatasetManifest {
        format: FORMAT.into(),
        blob: blob
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        grid: dataset.grid,
        class_names: dataset.class_names.clone(),
        labeled_classes: dataset.labeled_classes.clone(),
        k: dataset.k(),
        q_truth: dataset.q_truth(),
        labeled,
        unlabeled,
    };
    fs::write(&blob, &bytes).map_err(|e| Error::io(&blob, e))?;
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(manifest_path, json).map_err(|e| Error::io(manifest_path, e))?;
    Ok(manifest)
}

pub fn load_dataset(manifest_path: &Path) -> Result<ScenarioDataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let schema = |msg: String| Error::Schema {
        path: manifest_path.to_path_buf(),
        msg,
    };
    if manifest.format != FORMAT {
        return Err(schema(format!("unknown format {:?}", manifest.format)));
    }
    manifest.grid.validate()?;
    let blob = manifest_path
        .parent()
        .unwrap_or(Path::new("."))
        .join(&manifest.blob);
    let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    let grid = manifest.grid;
    let per_tensor = grid.cells_per_tensor() * 4;
    let n = manifest.labeled.len() + manifest.unlabeled.len();
    if bytes.len() != n * per_tensor {
        return Err(schema(format!(
            "blob holds {} bytes, expected {} for {n} tensors",
            bytes.len(),
            n * per_tensor
        )));
    }
    let mut chunks = bytes.chunks_exact(per_tensor);
    let mut decode = |rec: &SampleRecord| -> Result<ScenarioTensor> {
        let chunk = chunks.next().expect("length checked above");
        let values: Vec<f32> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let frames = values
            .chunks_exact(grid.cells_per_frame())
            .map(|f| OccupancyGrid {
                rows: grid.rows,
                cols: grid.cols,
                values: f.to_vec(),
            })
            .collect();
        let mut t = ScenarioTensor::new(rec.id, frames)?;
        if rec.frame_order.len() != t.n_frames() {
            return Err(Error::Schema {
                path: manifest_path.to_path_buf(),
                msg: format!("sample {} has a bad frame_order", rec.id),
            });
        }
        t.frame_order = rec.frame_order.clone();
        Ok(t)
    };
    let mut labeled = Vec::with_capacity(manifest.labeled.len());
    for rec in &manifest.labeled {
        let label = rec
            .label
            .filter(|&l| l < manifest.labeled_classes.len())
            .ok_or_else(|| schema(format!("labelled sample {} lacks a valid label", rec.id)))?;
        labeled.push(LabeledScenario::new(decode(rec)?, label));
    }
    let mut unlabeled = Vec::with_capacity(manifest.unlabeled.len());
    for rec in &manifest.unlabeled {
        unlabeled.push(decode(rec)?);
    }
    let truth: Option<Vec<usize>> = manifest.unlabeled.iter().map(|r| r.class).collect();
    Ok(ScenarioDataset {
        grid,
        class_names: manifest.class_names,
        labeled_classes: manifest.labeled_classes,
        labeled,
        unlabeled,
        unlabeled_truth: truth,
    })
}
