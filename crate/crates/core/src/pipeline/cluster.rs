use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::pretrain::argmax;
use super::{tensors, PipelineConfig};
use crate::eval::{alt_similarity, hungarian_acc};
use crate::nn::{
    categorical_cross_entropy, consistency_loss, pairwise_cluster_loss, ramp_up_weight, sgd_step,
    FreezeSelector, HeadSelect, Network, OutputGrads, SgdState, Tensor,
};
use crate::rng::{derive_seed, rng_from};
use crate::scenario::{augment, AugmentParams, LabeledScenario, ScenarioTensor};
use crate::urf::{
    breiman_proximity, similarity_matrix, train_urf, Forest, SimilarityMatrix, UrfParams,
};
use crate::{Error, Result};

use super::extract_features;
use super::{Calibration, SimilarityMethod};

const STEP3: u64 = 3;

/// Cluster of every unlabelled sample (0-based) with the clustering-head
/// probabilities it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub epoch: usize,
    pub ids: Vec<u64>,
    pub clusters: Vec<usize>,
    pub probs: Vec<Vec<f64>>,
}

impl ClusterAssignment {
    pub fn occupied(&self) -> usize {
        let mut c = self.clusters.clone();
        c.sort_unstable();
        c.dedup();
        c.len()
    }
}

/// Argmax of the clustering head for every tensor (first index on ties).
pub fn assign_clusters(
    net: &Network,
    data: &[ScenarioTensor],
    epoch: usize,
) -> Result<ClusterAssignment> {
    let mut probs = Vec::with_capacity(data.len());
    for chunk in data.chunks(64) {
        let xs: Vec<Tensor> = chunk.iter().map(Tensor::from_scenario).collect();
        probs.extend(
            net.forward(&xs, HeadSelect::U)?
                .head_u
                .expect("head selected"),
        );
    }
    Ok(ClusterAssignment {
        epoch,
        ids: data.iter().map(|s| s.id).collect(),
        clusters: probs.iter().map(|p| argmax(p)).collect(),
        probs,
    })
}

/// One line of the step-III training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub loss_cat: f64,
    pub loss_cluster: f64,
    pub loss_cons: f64,
    pub omega: f64,
    pub labeled_accuracy: Option<f64>,
    pub acc: Option<f64>,
    pub occupied_clusters: usize,
    /// The epoch's forest had only single-node trees.
    pub degenerate_forest: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRun {
    pub network: Network,
    pub history: Vec<EpochLog>,
    pub assignment: ClusterAssignment,
    pub q: usize,
}

enum SimSource {
    Forest(Forest),
    Direct,
}

fn batch_similarity(
    source: &SimSource,
    method: SimilarityMethod,
    feats: &[Vec<f64>],
    config: &PipelineConfig,
) -> Result<SimilarityMatrix> {
    if feats.len() < 2 {
        return Ok(SimilarityMatrix::from_fn(feats.len(), |_, _| 1.0));
    }
    match (source, method) {
        (SimSource::Forest(f), SimilarityMethod::Rfap) => similarity_matrix(f, feats),
        (SimSource::Forest(f), SimilarityMethod::Breiman) => breiman_proximity(f, feats),
        _ => {
            let mut alt = config.alt_similarity().expect("non-forest method");
            if let crate::eval::AltSimilarity::Knn { k } = &mut alt {
                *k = (*k).min(feats.len() - 1);
            }
            if let crate::eval::AltSimilarity::Rank { k } = &mut alt {
                *k = (*k).min(feats[0].len());
            }
            alt_similarity(feats, alt)
        }
    }
}

/// Binarises `s` so the top `1/q` of off-diagonal pairs become 1.
pub fn calibrate_top_fraction(s: &SimilarityMatrix, q: usize) -> SimilarityMatrix {
    let n = s.n();
    let mut vals: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| s.get(i, j))
        .collect();
    if vals.is_empty() {
        return s.clone();
    }
    vals.sort_by(|a, b| b.total_cmp(a));
    let keep = vals.len().div_ceil(q).max(1);
    let cut = vals[keep - 1];
    SimilarityMatrix::symmetric_from_fn(n, |i, j| if s.get(i, j) >= cut { 1.0 } else { 0.0 })
}

/// Step III: alternates a fresh unsupervised forest over the current
/// unlabelled features with mini-batch descent on
/// `L_cat + L_cluster + omega(beta) L_cons`.
///
/// Each batch holds labelled samples, unlabelled samples and an augmented
/// copy of both. The classification head is extended by Q outputs and
/// learns the pseudo-label `K + argmax(alpha_u)` for unlabelled samples.
/// Without labelled data (`labeled` empty or `use_labeled` off) the
/// categorical term and the classification head are dropped.
#[allow(clippy::too_many_arguments)]
pub fn step3_cluster(
    mut net: Network,
    labeled: &[LabeledScenario],
    unlabeled: &[ScenarioTensor],
    k: usize,
    q: usize,
    pretrained: bool,
    config: &PipelineConfig,
    truth: Option<&[usize]>,
) -> Result<ClusterRun> {
    config.validate()?;
    if q < 2 {
        return Err(Error::Config(format!("Q must be at least 2, got {q}")));
    }
    if unlabeled.len() < 2 {
        return Err(Error::InvalidInput(
            "step III needs at least 2 unlabelled tensors".into(),
        ));
    }
    let with_labels = config.use_labeled && !labeled.is_empty();
    let use_cat = with_labels && config.losses.categorical;
    let sgd = &config.cluster;
    net.set_frozen(if pretrained {
        FreezeSelector::Prefix(config.freeze_prefix)
    } else {
        FreezeSelector::None
    })?;
    net.attach_head_u(q)?;
    if with_labels {
        if net.head_l_units() != k {
            return Err(Error::Contract(format!(
                "classification head has {} outputs, expected K = {k}",
                net.head_l_units()
            )));
        }
        net.extend_head_l(q)?;
    } else {
        net.detach_head_l();
    }
    let heads = if with_labels {
        HeadSelect::BOTH
    } else {
        HeadSelect::U
    };
    let n_lab = if with_labels {
        ((sgd.batch_size as f64 * config.labeled_fraction).round() as usize)
            .clamp(1, sgd.batch_size - 1)
    } else {
        0
    };
    let n_unl = sgd.batch_size - n_lab;

    let mut state = SgdState::new();
    let mut history = Vec::with_capacity(sgd.epochs);
    let base = config.seed ^ sgd.seed;
    for epoch in 0..sgd.epochs {
        let omega = ramp_up_weight(epoch as f64, config.ramp_length, config.ramp_lambda);
        let source = if config.similarity.uses_forest() {
            let feats = extract_features(&net, unlabeled)?;
            let params = UrfParams {
                seed: derive_seed(config.urf.seed ^ base, &[STEP3, epoch as u64]),
                ..config.urf.clone()
            };
            SimSource::Forest(train_urf(&feats, &params)?)
        } else {
            SimSource::Direct
        };
        let degenerate = matches!(&source, SimSource::Forest(f) if f.trivial);
        if degenerate {
            log::warn!("step III epoch {epoch}: forest is degenerate");
        }

        let mut rng = rng_from(base, &[STEP3, epoch as u64]);
        let mut u_order: Vec<usize> = (0..unlabeled.len()).collect();
        u_order.shuffle(&mut rng);
        let mut l_order: Vec<usize> = (0..labeled.len()).collect();
        l_order.shuffle(&mut rng);
        let mut l_cursor = 0;

        let (mut s_tot, mut s_cat, mut s_clu, mut s_con) = (0.0, 0.0, 0.0, 0.0);
        let (mut lab_hits, mut lab_seen) = (0usize, 0usize);
        let mut n_batches = 0;
        for (b, u_chunk) in u_order.chunks(n_unl).enumerate() {
            let mut lab_idx = Vec::with_capacity(n_lab);
            for _ in 0..n_lab {
                if l_cursor == l_order.len() {
                    l_order.shuffle(&mut rng);
                    l_cursor = 0;
                }
                lab_idx.push(l_order[l_cursor]);
                l_cursor += 1;
            }
            let clean: Vec<&ScenarioTensor> = lab_idx
                .iter()
                .map(|&i| &labeled[i].tensor)
                .chain(u_chunk.iter().map(|&i| &unlabeled[i]))
                .collect();
            let aug_params = AugmentParams {
                seed: derive_seed(base, &[STEP3, epoch as u64, b as u64]),
                ..config.augment
            };
            let augmented: Vec<ScenarioTensor> =
                clean.iter().map(|s| augment(s, &aug_params)).collect();
            let mut xs = tensors(&clean);
            xs.extend(augmented.iter().map(Tensor::from_scenario));
            let m = clean.len();
            let nl = lab_idx.len();

            let (out, trace) = net.forward_train(&xs, heads)?;
            let pu = out.head_u.as_ref().expect("clustering head selected");
            let mut gu = vec![vec![0.0; q]; xs.len()];
            let mut gl = out
                .head_l
                .as_ref()
                .map(|l| vec![vec![0.0; l[0].len()]; xs.len()]);
            let mut loss_cat = 0.0;
            let mut loss_clu = 0.0;
            let mut loss_con = 0.0;

            if use_cat {
                let pl = out.head_l.as_ref().expect("classification head selected");
                let targets: Vec<usize> = lab_idx
                    .iter()
                    .map(|&i| labeled[i].label())
                    .chain((nl..m).map(|j| k + argmax(&pu[j])))
                    .collect();
                for (j, &t) in targets[..nl].iter().enumerate() {
                    lab_hits += usize::from(argmax(&pl[j][..k]) == t);
                    lab_seen += 1;
                }
                let cce = categorical_cross_entropy(&pl[..m], &targets)?;
                loss_cat = cce.loss;
                let g = gl.as_mut().expect("head present");
                for (j, row) in cce.grad.into_iter().enumerate() {
                    g[j] = row;
                }
            }
            if config.losses.cluster && m - nl >= 2 {
                let mut s =
                    batch_similarity(&source, config.similarity, &out.features[nl..m], config)?;
                if config.calibration == Calibration::TopFraction {
                    s = calibrate_top_fraction(&s, q);
                }
                let pair = pairwise_cluster_loss(&s, &pu[nl..m])?;
                loss_clu = pair.loss;
                for (j, row) in pair.grad.into_iter().enumerate() {
                    for (a, v) in gu[nl + j].iter_mut().zip(row) {
                        *a += v;
                    }
                }
            }
            if config.losses.consistency {
                let add = |probs: &[Vec<f64>], grads: &mut [Vec<f64>]| -> Result<f64> {
                    let c = consistency_loss(&probs[..m], &probs[m..])?;
                    for j in 0..m {
                        for (a, v) in grads[j].iter_mut().zip(&c.grad_clean[j]) {
                            *a += omega * v;
                        }
                        for (a, v) in grads[m + j].iter_mut().zip(&c.grad_augmented[j]) {
                            *a += omega * v;
                        }
                    }
                    Ok(c.loss)
                };
                loss_con += add(pu, &mut gu)?;
                if let (Some(pl), Some(g)) = (out.head_l.as_ref(), gl.as_mut()) {
                    loss_con += add(pl, g)?;
                }
            }
            let total = loss_cat + loss_clu + omega * loss_con;
            if !total.is_finite() {
                return Err(Error::Numeric(format!(
                    "step III loss became non-finite at epoch {epoch}, batch {b}"
                )));
            }
            let grads = net.backward(
                &trace,
                &OutputGrads {
                    features: None,
                    head_l: gl,
                    head_u: Some(gu),
                },
            )?;
            sgd_step(&mut net, &grads, sgd, &mut state)?;
            s_tot += total;
            s_cat += loss_cat;
            s_clu += loss_clu;
            s_con += loss_con;
            n_batches += 1;
        }
        let nb = n_batches.max(1) as f64;
        let assignment = assign_clusters(&net, unlabeled, epoch)?;
        let acc = truth
            .map(|t| hungarian_acc(&assignment.clusters, t))
            .transpose()?;
        let entry = EpochLog {
            epoch,
            loss: s_tot / nb,
            loss_cat: s_cat / nb,
            loss_cluster: s_clu / nb,
            loss_cons: s_con / nb,
            omega,
            labeled_accuracy: (lab_seen > 0).then(|| lab_hits as f64 / lab_seen as f64),
            acc,
            occupied_clusters: assignment.occupied(),
            degenerate_forest: degenerate,
        };
        log::info!(
            "step III epoch {epoch}: loss {:.4} (cat {:.4}, cluster {:.4}, cons {:.4}) acc {:?}",
            entry.loss,
            entry.loss_cat,
            entry.loss_cluster,
            entry.loss_cons,
            entry.acc
        );
        history.push(entry);
    }
    let assignment = assign_clusters(&net, unlabeled, sgd.epochs)?;
    Ok(ClusterRun {
        network: net,
        history,
        assignment,
        q,
    })
}
