use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use rfap_core::eval::{estimate_q, hungarian_acc, kmeans};
use rfap_core::nn::{load_checkpoint, save_checkpoint, Checkpoint, Network};
use rfap_core::pipeline::{
    extract_features, new_network, raw_kmeans_acc, resolve_q, step1_pretrain, step2_finetune,
    step3_cluster, write_jsonl, ClusterRun, SimilarityMethod,
};
use rfap_core::rng::derive_seed;
use rfap_core::scenario::{
    generate_synthetic, ingest_highd, load_dataset, save_dataset, split_dataset, GeneratorConfig,
    GridConfig, ManeuverClass, ScenarioDataset, SplitRatios,
};
use serde::Serialize;

use crate::artifact::Recorder;
use crate::config::{ConfigError, ExperimentConfig, GridPreset, Source};

const SPLIT_STREAM: u64 = 0x5350;

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Ctx {
    fn recorder(&self, command: &'static str) -> Recorder {
        Recorder::new(command, self.cfg.hash(), self.cfg.seed)
    }

    fn data_dir(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(|| self.out.join("data"))
    }

    fn load_split(&self) -> Result<(ScenarioDataset, ScenarioDataset)> {
        let dir = self.data_dir();
        let train = load_dataset(&dir.join("train.json"))?;
        let test = load_dataset(&dir.join("test.json"))?;
        if train.unlabeled.is_empty() {
            return Err(rfap_core::Error::InvalidInput(format!(
                "{} holds no unlabelled tensors",
                dir.display()
            ))
            .into());
        }
        Ok((train, test))
    }

    /// Network step III (and estimate-q) start from under the ablation flags.
    fn clustering_start(&self, sample: &ScenarioDataset) -> Result<Network> {
        let p = &self.cfg.pipeline;
        let default = if p.use_labeled {
            Some(self.out.join("finetune/network.json"))
        } else if p.use_ssl {
            Some(self.out.join("pretrain/network.json"))
        } else {
            None
        };
        match self.checkpoint.clone().or(default) {
            Some(path) => Ok(load_checkpoint(&path)?.network),
            None => Ok(new_network(&sample.unlabeled[0], p)?),
        }
    }
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn grid(preset: GridPreset) -> GridConfig {
    match preset {
        GridPreset::Desk => GridConfig::desk(),
        GridPreset::Highd => GridConfig::highd(),
    }
}

fn class_ids(names: &[String], catalogue: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            catalogue
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| config_error(format!("class {n:?} is not in the dataset catalogue")))
        })
        .collect()
}

fn save_split(rec: &Recorder, dir: &Path, name: &str, ds: &ScenarioDataset) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{name}.json"));
    save_dataset(ds, &path)?;
    rec.stamp(&path)?;
    rec.stamp(&path.with_extension("bin"))
}

fn save_network(rec: &Recorder, path: &Path, net: Network, epoch: usize, rng_state: u64) -> Result<()> {
    std::fs::create_dir_all(path.parent().expect("artifact paths have a directory"))?;
    save_checkpoint(
        &Checkpoint {
            network: net,
            epoch,
            rng_state,
        },
        path,
    )?;
    rec.stamp(path)?;
    rec.stamp(&path.with_extension("bin"))
}

fn build_dataset(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<ScenarioDataset> {
    match cfg.source {
        Source::Synthetic => {
            let ds = generate_synthetic(&GeneratorConfig {
                seed: cfg.seed,
                n_per_class: cfg.n_per_class,
                grid: grid(cfg.grid),
                classes: ManeuverClass::ALL.to_vec(),
            })?;
            let l = class_ids(&cfg.labeled, &ds.class_names)?;
            let u = class_ids(&cfg.unlabeled, &ds.class_names)?;
            Ok(ds.with_label_split(&l, &u)?)
        }
        Source::Highd => {
            let (Some(tracks), Some(meta)) = (&cfg.highd.tracks, &cfg.highd.meta) else {
                return Err(config_error("source = highd needs highd.tracks and highd.meta"));
            };
            let (ds, report) = ingest_highd(tracks, meta, &grid(cfg.grid), cfg.highd.thw_threshold)?;
            log::info!(
                "ingested {} scenarios from {} tracks ({} skipped for short history)",
                report.triggers.len(),
                report.tracks,
                report.skipped_insufficient_history
            );
            rec.note("triggers", report.triggers.len());
            rec.note("skipped_insufficient_history", report.skipped_insufficient_history);
            Ok(ds)
        }
        Source::Load => {
            let path = cfg
                .load_path
                .as_ref()
                .ok_or_else(|| config_error("source = load needs load_path"))?;
            let ds = load_dataset(path)?;
            if ds.class_names.is_empty() || ds.unlabeled_truth.is_none() {
                return Ok(ds);
            }
            let l = class_ids(&cfg.labeled, &ds.class_names)?;
            let u = class_ids(&cfg.unlabeled, &ds.class_names)?;
            Ok(ds.with_label_split(&l, &u)?)
        }
    }
}

pub fn gen_data(ctx: &Ctx, command: &'static str) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut rec = ctx.recorder(command);
    let full = build_dataset(cfg, &mut rec)?;
    let ratios = SplitRatios::new(1.0 - cfg.test_fraction, 0.0, cfg.test_fraction);
    let [train, _, test] = split_dataset(&full, ratios, derive_seed(cfg.seed, &[SPLIT_STREAM]))?;
    rec.note("train_samples", train.len());
    rec.note("test_samples", test.len());
    let dir = ctx.out.join("data");
    save_split(&rec, &dir, "train", &train)?;
    save_split(&rec, &dir, "test", &test)?;
    log::info!("wrote {} training and {} test samples", train.len(), test.len());
    Ok(())
}

pub fn pretrain(ctx: &Ctx) -> Result<()> {
    let p = &ctx.cfg.pipeline;
    if !p.use_ssl {
        return Err(config_error("pretrain has nothing to do under --no-ssl"));
    }
    let (train, test) = ctx.load_split()?;
    let (net, report) = step1_pretrain(&train.all_tensors(), &test.all_tensors(), p)?;
    log::info!("pretext accuracy on held-out data: {:.3}", report.held_out_accuracy);
    let rec = ctx.recorder("pretrain");
    let dir = ctx.out.join("pretrain");
    let state = derive_seed(p.seed ^ p.pretrain.seed, &[1, report.epochs as u64]);
    save_network(&rec, &dir.join("network.json"), net, report.epochs, state)?;
    rec.write_json(&dir.join("report.json"), &report)
}

pub fn finetune(ctx: &Ctx) -> Result<()> {
    let p = &ctx.cfg.pipeline;
    if !p.use_labeled {
        return Err(config_error("finetune has nothing to do under --no-labeled"));
    }
    let (train, test) = ctx.load_split()?;
    if train.labeled.is_empty() {
        return Err(rfap_core::Error::InvalidInput("the training split has no labelled samples".into()).into());
    }
    let net = if p.use_ssl {
        let path = ctx
            .checkpoint
            .clone()
            .unwrap_or_else(|| ctx.out.join("pretrain/network.json"));
        load_checkpoint(&path)?.network
    } else {
        new_network(&train.labeled[0].tensor, p)?
    };
    let (net, report) = step2_finetune(net, &train.labeled, &test.labeled, train.k(), p.use_ssl, p)?;
    log::info!("fine-tuning accuracy: train {:.3}, held-out {:?}", report.train_accuracy, report.val_accuracy);
    let rec = ctx.recorder("finetune");
    let dir = ctx.out.join("finetune");
    let state = derive_seed(p.seed ^ p.finetune.seed, &[2, report.epochs as u64]);
    save_network(&rec, &dir.join("network.json"), net, report.epochs, state)?;
    rec.write_json(&dir.join("report.json"), &report)
}

#[derive(Serialize)]
struct ClusterSummary<'a> {
    similarity: &'a str,
    calibration: rfap_core::pipeline::Calibration,
    q: usize,
    q_estimate: Option<rfap_core::eval::QEstimate>,
    epochs: usize,
    occupied_clusters: usize,
    final_acc: Option<f64>,
}

fn run_step3(ctx: &Ctx, train: &ScenarioDataset, net: Network, similarity: SimilarityMethod) -> Result<(ClusterRun, Option<rfap_core::eval::QEstimate>)> {
    let mut p = ctx.cfg.pipeline.clone();
    p.similarity = similarity;
    let (q, est) = resolve_q(&net, &train.unlabeled, &p)?;
    let labeled = if p.use_labeled { &train.labeled[..] } else { &[] };
    let run = step3_cluster(
        net,
        labeled,
        &train.unlabeled,
        train.k(),
        q,
        p.use_ssl,
        &p,
        train.unlabeled_truth.as_deref(),
    )?;
    Ok((run, est))
}

pub fn cluster(ctx: &Ctx) -> Result<()> {
    let p = &ctx.cfg.pipeline;
    let (train, _) = ctx.load_split()?;
    let net = ctx.clustering_start(&train)?;
    let (run, est) = run_step3(ctx, &train, net, p.similarity)?;

    let mut rec = ctx.recorder("cluster");
    rec.note("similarity", p.similarity.name());
    rec.note("q", run.q);
    let dir = ctx.out.join("cluster");
    std::fs::create_dir_all(&dir)?;
    let log_path = dir.join("log.jsonl");
    write_jsonl(&log_path, &run.history)?;
    rec.stamp(&log_path)?;

    let a = &run.assignment;
    let mut csv = String::from("id,cluster");
    for k in 1..=run.q {
        write!(csv, ",p{k}")?;
    }
    csv.push('\n');
    for ((id, c), probs) in a.ids.iter().zip(&a.clusters).zip(&a.probs) {
        write!(csv, "{id},{}", c + 1)?;
        for v in probs {
            write!(csv, ",{v}")?;
        }
        csv.push('\n');
    }
    rec.write(&dir.join("assignments.csv"), csv.as_bytes())?;

    let summary = ClusterSummary {
        similarity: p.similarity.name(),
        calibration: p.calibration,
        q: run.q,
        q_estimate: est,
        epochs: run.history.len(),
        occupied_clusters: a.occupied(),
        final_acc: run.history.last().and_then(|h| h.acc),
    };
    rec.write_json(&dir.join("summary.json"), &summary)?;
    save_network(&rec, &dir.join("network.json"), run.network, run.history.len(), 0)
}

/// Cluster ids (0-based) read from an assignment CSV, in file order.
fn read_assignments(path: &Path) -> Result<(Vec<u64>, Vec<usize>, usize)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| anyhow!("{} is empty", path.display()))?;
    let q = header.split(',').count().saturating_sub(2);
    let mut ids = Vec::new();
    let mut clusters = Vec::new();
    for (n, line) in lines.enumerate() {
        let bad = || {
            rfap_core::Error::Parse {
                path: path.to_path_buf(),
                line: n as u64 + 2,
                msg: format!("expected id,cluster,... got {line:?}"),
            }
        };
        let mut f = line.split(',');
        let id: u64 = f.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let c: usize = f.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if c == 0 || c > q {
            return Err(bad().into());
        }
        ids.push(id);
        clusters.push(c - 1);
    }
    Ok((ids, clusters, q))
}

#[derive(Debug, Serialize)]
pub struct Metrics {
    pub acc: Option<f64>,
    pub kmeans_raw_acc: Option<f64>,
    pub q: usize,
    pub q_truth: Option<usize>,
    pub n_unlabeled: usize,
    pub occupied_clusters: usize,
}

pub fn evaluate(ctx: &Ctx, assignments: Option<PathBuf>) -> Result<Metrics> {
    let (train, _) = ctx.load_split()?;
    let path = assignments.unwrap_or_else(|| ctx.out.join("cluster/assignments.csv"));
    let (ids, clusters, q) = read_assignments(&path)?;
    let expected: Vec<u64> = train.unlabeled.iter().map(|t| t.id).collect();
    if ids != expected {
        return Err(rfap_core::Error::InvalidInput(format!(
            "{} does not list the unlabelled training samples in order",
            path.display()
        ))
        .into());
    }
    let truth = train.unlabeled_truth.as_deref();
    let acc = truth.map(|t| hungarian_acc(&clusters, t)).transpose()?;
    let kmeans_raw_acc = match truth {
        Some(t) if q >= 2 => Some(raw_kmeans_acc(&train.unlabeled, t, q, derive_seed(ctx.cfg.seed, &[0x4b4d]))?),
        _ => None,
    };
    let mut occupied = clusters.clone();
    occupied.sort_unstable();
    occupied.dedup();
    let metrics = Metrics {
        acc,
        kmeans_raw_acc,
        q,
        q_truth: train.q_truth(),
        n_unlabeled: ids.len(),
        occupied_clusters: occupied.len(),
    };
    let mut rec = ctx.recorder("evaluate");
    rec.note("similarity", ctx.cfg.pipeline.similarity.name());
    rec.write_json(&ctx.out.join("evaluate/metrics.json"), &metrics)?;
    Ok(metrics)
}

pub fn estimate(ctx: &Ctx) -> Result<()> {
    let (train, _) = ctx.load_split()?;
    let net = ctx.clustering_start(&train)?;
    let feats = extract_features(&net, &train.unlabeled)?;
    let e = &ctx.cfg.eval;
    let q_max = e.q_max.min(feats.len().saturating_sub(1));
    let est = estimate_q(&feats, e.q_min, q_max, derive_seed(ctx.cfg.seed, &[0x5151]))?;
    #[derive(Serialize)]
    struct Out {
        q: usize,
        q_truth: Option<usize>,
        scores: Vec<(usize, f64)>,
    }
    log::info!("estimated Q = {}", est.q);
    ctx.recorder("estimate-q").write_json(
        &ctx.out.join("estimate-q/estimate.json"),
        &Out {
            q: est.q,
            q_truth: train.q_truth(),
            scores: est.scores,
        },
    )
}

pub fn compare(ctx: &Ctx) -> Result<Vec<(String, Option<f64>)>> {
    let (train, _) = ctx.load_split()?;
    let start = ctx.clustering_start(&train)?;
    let mut rows = Vec::new();
    for name in &ctx.cfg.eval.methods {
        let m = SimilarityMethod::from_name(name).ok_or_else(|| config_error(format!("unknown similarity {name:?}")))?;
        let (run, _) = run_step3(ctx, &train, start.clone(), m)?;
        let acc = match train.unlabeled_truth.as_deref() {
            Some(t) => Some(hungarian_acc(&run.assignment.clusters, t)?),
            None => None,
        };
        log::info!("similarity {name}: ACC {acc:?}");
        rows.push((name.clone(), acc));
    }
    let rec = ctx.recorder("compare-similarities");
    let dir = ctx.out.join("compare");
    rec.write(&dir.join("similarities.csv"), table_csv(&rows).as_bytes())?;
    rec.write_json(&dir.join("similarities.json"), &rows)?;
    Ok(rows)
}

fn table_csv(rows: &[(String, Option<f64>)]) -> String {
    let mut s = String::from("method,acc\n");
    for (m, acc) in rows {
        match acc {
            Some(a) => writeln!(s, "{m},{a}").expect("writing to a String"),
            None => writeln!(s, "{m},").expect("writing to a String"),
        }
    }
    s
}

/// k-means ACC on the features the clustering step starts from.
fn kmeans_on_features(ctx: &Ctx, train: &ScenarioDataset, q: usize) -> Result<Option<f64>> {
    let Some(truth) = train.unlabeled_truth.as_deref() else {
        return Ok(None);
    };
    let net = ctx.clustering_start(train)?;
    let feats = extract_features(&net, &train.unlabeled)?;
    let km = kmeans(&feats, q, derive_seed(ctx.cfg.seed, &[0x4b46]), ctx.cfg.eval.kmeans_restarts)?;
    Ok(Some(hungarian_acc(&km.labels, truth)?))
}

pub fn reproduce(ctx: &Ctx) -> Result<()> {
    let p = &ctx.cfg.pipeline;
    gen_data(ctx, "reproduce")?;
    if p.use_ssl {
        pretrain(ctx)?;
    }
    if p.use_labeled {
        finetune(ctx)?;
    }
    let (train, _) = ctx.load_split()?;
    cluster(ctx)?;
    let metrics = evaluate(ctx, None)?;
    let features_acc = kmeans_on_features(ctx, &train, metrics.q)?;

    let mut variant = String::from("proposed");
    if !p.use_ssl {
        variant.push_str("-no-ssl");
    }
    if !p.use_labeled {
        variant.push_str("-no-labeled");
    }
    let rows = vec![
        ("kmeans-raw".to_string(), metrics.kmeans_raw_acc),
        ("kmeans-features".to_string(), features_acc),
        (format!("{variant}-{}", p.similarity.name()), metrics.acc),
    ];
    let rec = ctx.recorder("reproduce");
    rec.write(&ctx.out.join("summary.csv"), table_csv(&rows).as_bytes())?;
    rec.write_json(&ctx.out.join("summary.json"), &rows)?;
    println!("{}", table_csv(&rows).trim_end());
    Ok(())
}
