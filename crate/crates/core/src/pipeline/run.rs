use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::{
    extract_features, new_network, step1_pretrain, step2_finetune, step3_cluster, ClusterRun,
    FinetuneReport, PipelineConfig, PretextReport, QChoice,
};
use crate::eval::{estimate_q, hungarian_acc, kmeans, QEstimate};
use crate::nn::Network;
use crate::rng::derive_seed;
use crate::scenario::{ScenarioDataset, ScenarioTensor};
use crate::{Error, Result};

/// Everything one pipeline run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub pretext: Option<PretextReport>,
    pub finetune: Option<FinetuneReport>,
    pub q_estimate: Option<QEstimate>,
    pub cluster: ClusterRun,
    /// Clustering accuracy on the unlabelled training tensors, when truth is known.
    pub acc: Option<f64>,
}

/// Clustering accuracy of k-means on flattened raw tensors.
pub fn raw_kmeans_acc(
    unlabeled: &[ScenarioTensor],
    truth: &[usize],
    q: usize,
    seed: u64,
) -> Result<f64> {
    let rows: Vec<Vec<f64>> = unlabeled
        .iter()
        .map(|t| t.values().map(f64::from).collect())
        .collect();
    let km = kmeans(&rows, q, seed, 10)?;
    hungarian_acc(&km.labels, truth)
}

/// The fixed Q, or the silhouette estimate on the current features of
/// `unlabeled` (the search range is capped below the sample count).
pub fn resolve_q(net: &Network, unlabeled: &[ScenarioTensor], config: &PipelineConfig) -> Result<(usize, Option<QEstimate>)> {
    match config.q {
        QChoice::Fixed(q) => Ok((q, None)),
        QChoice::Estimate { min, max } => {
            let feats = extract_features(net, unlabeled)?;
            let max = max.min(feats.len().saturating_sub(1));
            let est = estimate_q(&feats, min, max, derive_seed(config.seed, &[0x5151]))?;
            log::info!("estimated Q = {} from {:?}", est.q, est.scores);
            Ok((est.q, Some(est)))
        }
    }
}

/// Runs steps I to III on `train`. `held_out` supplies pretext and
/// classification validation data. A step-I result computed elsewhere can be
/// passed in to share it between variants of the same seed.
pub fn run_pipeline(
    train: &ScenarioDataset,
    held_out: &ScenarioDataset,
    config: &PipelineConfig,
    pretrained: Option<(Network, PretextReport)>,
) -> Result<PipelineOutcome> {
    config.validate()?;
    if train.unlabeled.len() < 2 {
        return Err(Error::InvalidInput(
            "the training split needs unlabelled tensors".into(),
        ));
    }
    let (net, pretext) = if config.use_ssl {
        let (net, report) = match pretrained {
            Some(p) => p,
            None => step1_pretrain(&train.all_tensors(), &held_out.all_tensors(), config)?,
        };
        (net, Some(report))
    } else {
        (new_network(&train.unlabeled[0], config)?, None)
    };

    let k = train.k();
    let with_labels = config.use_labeled && k > 0 && !train.labeled.is_empty();
    let (net, finetune) = if with_labels {
        let (net, r) = step2_finetune(
            net,
            &train.labeled,
            &held_out.labeled,
            k,
            config.use_ssl,
            config,
        )?;
        (net, Some(r))
    } else {
        (net, None)
    };

    let (q, q_estimate) = resolve_q(&net, &train.unlabeled, config)?;

    let cluster = step3_cluster(
        net,
        if with_labels { &train.labeled } else { &[] },
        &train.unlabeled,
        k,
        q,
        config.use_ssl,
        config,
        train.unlabeled_truth.as_deref(),
    )?;
    let acc = train
        .unlabeled_truth
        .as_deref()
        .map(|t| hungarian_acc(&cluster.assignment.clusters, t))
        .transpose()?;
    Ok(PipelineOutcome {
        pretext,
        finetune,
        q_estimate,
        cluster,
        acc,
    })
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}
