//! The three training steps: temporal-order pre-training, supervised
//! fine-tuning of the classification head, and iterative clustering with a
//! fresh unsupervised forest every epoch.

mod cluster;
mod config;
mod pretrain;
mod run;

pub use cluster::{
    assign_clusters, calibrate_top_fraction, step3_cluster, ClusterAssignment, ClusterRun, EpochLog,
};
pub use config::{Calibration, LossToggles, PipelineConfig, QChoice, SimilarityMethod};
pub use pretrain::{
    classification_accuracy, extract_features, pretext_accuracy, pretext_schedule, step1_pretrain,
    step2_finetune, FinetuneReport, PretextReport,
};
pub use run::{raw_kmeans_acc, resolve_q, run_pipeline, write_jsonl, PipelineOutcome};

use crate::nn::{default_backbone, Network, Tensor};
use crate::scenario::ScenarioTensor;
use crate::Result;

pub(crate) fn tensors(batch: &[&ScenarioTensor]) -> Vec<Tensor> {
    batch.iter().map(|s| Tensor::from_scenario(s)).collect()
}

/// Fresh backbone for scenarios shaped like `sample`.
pub fn new_network(sample: &ScenarioTensor, config: &PipelineConfig) -> Result<Network> {
    let shape = [1, sample.n_frames(), sample.rows(), sample.cols()];
    let specs = default_backbone(&shape, config.features)?;
    Network::new(
        &shape,
        &specs,
        crate::rng::derive_seed(config.seed, &[0x4e4e]),
    )
}
