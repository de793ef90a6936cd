//! Network checkpoints: a JSON manifest plus a little-endian `f64` blob holding
//! every parameter in manifest order (backbone layers, then `head_l`, then
//! `head_u`; weights before biases within a layer).

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::network::{Layer, LayerSpec, Network};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "rfap-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerEntry {
    spec: LayerSpec,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    weights: usize,
    biases: usize,
}

impl LayerEntry {
    fn of(l: &Layer) -> Self {
        LayerEntry {
            spec: l.spec,
            input_shape: l.input_shape.clone(),
            output_shape: l.output_shape.clone(),
            weights: l.weight.len(),
            biases: l.bias.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    blob: String,
    input_shape: Vec<usize>,
    backbone: Vec<LayerEntry>,
    head_l: Option<LayerEntry>,
    head_u: Option<LayerEntry>,
    init_seed: u64,
    heads_created: u64,
    epoch: usize,
    rng_state: u64,
}

/// A network plus the training position it was saved at.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub epoch: usize,
    /// Seed of the stream the next epoch draws from.
    pub rng_state: u64,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let net = &ckpt.network;
    let blob = blob_path(path);
    let layers: Vec<&Layer> = net
        .backbone()
        .iter()
        .chain(net.head_l())
        .chain(net.head_u())
        .collect();
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        blob: blob
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        input_shape: net.input_shape().to_vec(),
        backbone: net.backbone().iter().map(LayerEntry::of).collect(),
        head_l: net.head_l().map(LayerEntry::of),
        head_u: net.head_u().map(LayerEntry::of),
        init_seed: net.seed(),
        heads_created: net.heads_created(),
        epoch: ckpt.epoch,
        rng_state: ckpt.rng_state,
    };
    let mut bytes = Vec::with_capacity(8 * net.n_params());
    for l in layers {
        for v in l.weight.iter().chain(&l.bias) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(&blob, &bytes).map_err(|e| Error::io(&blob, e))?;
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let schema = |msg: String| Error::Schema {
        path: path.to_path_buf(),
        msg,
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| schema(e.to_string()))?;
    if m.format != CHECKPOINT_FORMAT {
        return Err(schema(format!("unknown format {:?}", m.format)));
    }
    let blob = path.with_file_name(&m.blob);
    let bytes = std::fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    if bytes.len() % 8 != 0 {
        return Err(schema(format!(
            "blob length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));

    let mut restore = |e: &LayerEntry| -> Result<Layer> {
        let mut l = Layer::build(e.spec, &e.input_shape).map_err(|err| schema(err.to_string()))?;
        if l.output_shape != e.output_shape
            || l.weight.len() != e.weights
            || l.bias.len() != e.biases
        {
            return Err(schema(format!(
                "layer {:?} does not match its recorded shapes",
                e.spec.kind
            )));
        }
        for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
            *v = values
                .next()
                .ok_or_else(|| schema("parameter blob too short".into()))?;
        }
        Ok(l)
    };
    let backbone = m
        .backbone
        .iter()
        .map(&mut restore)
        .collect::<Result<Vec<_>>>()?;
    let head_l = m.head_l.as_ref().map(&mut restore).transpose()?;
    let head_u = m.head_u.as_ref().map(&mut restore).transpose()?;
    if values.next().is_some() {
        return Err(schema("parameter blob too long".into()));
    }
    let mut shape = m.input_shape.clone();
    for l in &backbone {
        if l.input_shape != shape {
            return Err(schema("backbone layer shapes do not chain".into()));
        }
        shape = l.output_shape.clone();
    }
    Ok(Checkpoint {
        network: Network::from_parts(
            m.input_shape,
            backbone,
            head_l,
            head_u,
            m.init_seed,
            m.heads_created,
        ),
        epoch: m.epoch,
        rng_state: m.rng_state,
    })
}
