use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{new_network, tensors, PipelineConfig};
use crate::nn::{
    categorical_cross_entropy, sgd_step, FreezeSelector, HeadSelect, Network, OutputGrads,
    SgdConfig, SgdState, Tensor,
};
use crate::rng::rng_from;
use crate::scenario::{
    shuffle_temporal, LabeledScenario, PermutationLabel, ScenarioTensor, PRETEXT_CLASSES,
};
use crate::{Error, Result};

const STEP1: u64 = 1;
const STEP2: u64 = 2;

/// Features `h` for each tensor, in input order.
pub fn extract_features(net: &Network, data: &[ScenarioTensor]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(64) {
        let xs: Vec<Tensor> = chunk.iter().map(Tensor::from_scenario).collect();
        out.extend(net.forward(&xs, HeadSelect::NONE)?.features);
    }
    Ok(out)
}

/// Index of the largest entry; the first one wins ties.
pub(crate) fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (k, &v)| {
            if v > best.1 {
                (k, v)
            } else {
                best
            }
        })
        .0
}

/// Sample order and pretext permutation for one step-I epoch.
pub fn pretext_schedule(n: usize, seed: u64, epoch: usize) -> Vec<(usize, PermutationLabel)> {
    let mut rng = rng_from(seed, &[STEP1, epoch as u64]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
        .into_iter()
        .map(|i| {
            let c = rng.random_range(1..=PRETEXT_CLASSES);
            (i, PermutationLabel::from_index(c).expect("index in range"))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretextReport {
    pub epochs: usize,
    pub final_loss: f64,
    /// Held-out accuracy over every (sample, permutation) pair.
    pub held_out_accuracy: f64,
    pub held_out_samples: usize,
    pub loss_history: Vec<f64>,
}

/// 24-way accuracy of the attached `head_l` over every permutation of every
/// tensor.
pub fn pretext_accuracy(net: &Network, data: &[ScenarioTensor]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for s in data {
        let mut xs = Vec::with_capacity(PRETEXT_CLASSES);
        for c in 1..=PRETEXT_CLASSES {
            let p = PermutationLabel::from_index(c)?;
            xs.push(Tensor::from_scenario(&shuffle_temporal(s, &p)?));
        }
        let out = net.forward(&xs, HeadSelect::L)?;
        for (c, probs) in out.head_l.expect("head selected").iter().enumerate() {
            hits += usize::from(argmax(probs) == c);
            total += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

fn train_batch(
    net: &mut Network,
    xs: &[Tensor],
    targets: &[usize],
    sgd: &SgdConfig,
    state: &mut SgdState,
) -> Result<f64> {
    let (out, trace) = net.forward_train(xs, HeadSelect::L)?;
    let cce = categorical_cross_entropy(out.head_l.as_ref().expect("head selected"), targets)?;
    let grads = net.backward(
        &trace,
        &OutputGrads {
            head_l: Some(cce.grad),
            ..Default::default()
        },
    )?;
    sgd_step(net, &grads, sgd, state)?;
    Ok(cce.loss)
}

/// Step I: trains a fresh backbone plus a 24-way head to recognise which
/// temporal permutation was applied. Only raw tensors are taken, so ground
/// truth cannot be consulted. The pretext head is removed before returning.
pub fn step1_pretrain(
    data: &[ScenarioTensor],
    held_out: &[ScenarioTensor],
    config: &PipelineConfig,
) -> Result<(Network, PretextReport)> {
    config.validate()?;
    let first = data
        .first()
        .ok_or_else(|| Error::InvalidInput("step I needs training tensors".into()))?;
    if first.n_frames() != 4 {
        return Err(Error::Unsupported(format!(
            "the temporal-order task needs 4 frames, got {}",
            first.n_frames()
        )));
    }
    let sgd = &config.pretrain;
    let mut net = new_network(first, config)?;
    net.attach_head_l(PRETEXT_CLASSES)?;
    let mut state = SgdState::new();
    let mut history = Vec::with_capacity(sgd.epochs);
    for epoch in 0..sgd.epochs {
        let schedule = pretext_schedule(data.len(), config.seed ^ sgd.seed, epoch);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in schedule.chunks(sgd.batch_size) {
            let xs = chunk
                .iter()
                .map(|(i, p)| Ok(Tensor::from_scenario(&shuffle_temporal(&data[*i], p)?)))
                .collect::<Result<Vec<_>>>()?;
            let targets: Vec<usize> = chunk.iter().map(|(_, p)| p.class()).collect();
            sum += train_batch(&mut net, &xs, &targets, sgd, &mut state)?;
            batches += 1;
        }
        let mean = sum / batches.max(1) as f64;
        log::info!("step I epoch {epoch}: loss {mean:.4}");
        history.push(mean);
    }
    let held_out_accuracy = pretext_accuracy(&net, held_out)?;
    net.detach_head_l();
    Ok((
        net,
        PretextReport {
            epochs: sgd.epochs,
            final_loss: history.last().copied().unwrap_or(f64::NAN),
            held_out_accuracy,
            held_out_samples: held_out.len(),
            loss_history: history,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub epochs: usize,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

/// Accuracy of `head_l` on labelled data, reading only its first `k`
/// outputs (the labelled classes once the head has been extended).
pub fn classification_accuracy(net: &Network, data: &[LabeledScenario], k: usize) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for chunk in data.chunks(64) {
        let xs: Vec<&ScenarioTensor> = chunk.iter().map(|s| &s.tensor).collect();
        let out = net.forward(&tensors(&xs), HeadSelect::L)?;
        for (s, p) in chunk.iter().zip(out.head_l.expect("head selected")) {
            hits += usize::from(argmax(&p[..k.min(p.len())]) == s.label());
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Step II: attaches a fresh K-way head and trains it (with the unfrozen part
/// of the backbone) on labelled data. After step I the first conv block is
/// frozen; a randomly initialised backbone trains in full.
pub fn step2_finetune(
    mut net: Network,
    train: &[LabeledScenario],
    val: &[LabeledScenario],
    k: usize,
    pretrained: bool,
    config: &PipelineConfig,
) -> Result<(Network, FinetuneReport)> {
    config.validate()?;
    if k == 0 || train.is_empty() {
        return Err(Error::InvalidInput(
            "step II needs labelled classes and data".into(),
        ));
    }
    if let Some(bad) = train.iter().chain(val).find(|s| s.label() >= k) {
        return Err(Error::InvalidInput(format!(
            "label {} outside the {k} labelled classes",
            bad.label()
        )));
    }
    let sgd = &config.finetune;
    net.detach_head_l();
    net.attach_head_l(k)?;
    net.set_frozen(if pretrained {
        FreezeSelector::Prefix(config.freeze_prefix)
    } else {
        FreezeSelector::None
    })?;
    let mut state = SgdState::new();
    let mut last = f64::NAN;
    for epoch in 0..sgd.epochs {
        let mut rng = rng_from(config.seed ^ sgd.seed, &[STEP2, epoch as u64]);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(sgd.batch_size) {
            let xs: Vec<&ScenarioTensor> = chunk.iter().map(|&i| &train[i].tensor).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| train[i].label()).collect();
            sum += train_batch(&mut net, &tensors(&xs), &targets, sgd, &mut state)?;
            batches += 1;
        }
        last = sum / batches.max(1) as f64;
        log::info!("step II epoch {epoch}: loss {last:.4}");
    }
    let train_accuracy = classification_accuracy(&net, train, k)?;
    let val_accuracy = if val.is_empty() {
        None
    } else {
        Some(classification_accuracy(&net, val, k)?)
    };
    Ok((
        net,
        FinetuneReport {
            epochs: sgd.epochs,
            final_loss: last,
            train_accuracy,
            val_accuracy,
        },
    ))
}
