use rfap_core::nn::{HeadSelect, ParamRef, Slot, Tensor};
use rfap_core::pipeline::*;
use rfap_core::scenario::*;
use rfap_core::urf::SimilarityMatrix;
use rfap_core::Error;

fn dataset(n_per_class: usize, seed: u64) -> ScenarioDataset {
    let ds = generate_synthetic(&GeneratorConfig {
        seed,
        n_per_class,
        grid: GridConfig::desk(),
        classes: ManeuverClass::ALL.to_vec(),
    })
    .unwrap();
    ds.with_label_split(&[0, 1, 2, 3], &[4, 5, 6]).unwrap()
}

fn quick_config() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.features = 16;
    c.pretrain.epochs = 2;
    c.finetune.epochs = 2;
    c.cluster.epochs = 3;
    c.ramp_length = 3.0;
    c.urf.n_trees = 10;
    c
}

fn backbone_bits(net: &rfap_core::nn::Network, upto: usize) -> Vec<u64> {
    net.backbone()[..upto]
        .iter()
        .flat_map(|l| l.weight.iter().chain(&l.bias))
        .map(|v| v.to_bits())
        .collect()
}

#[test]
fn step1_never_reads_labels() {
    let ds = dataset(3, 1);
    let before = label_reads();
    let (net, report) = step1_pretrain(&ds.all_tensors(), &ds.unlabeled[..2], &quick_config()).unwrap();
    assert_eq!(label_reads(), before);
    assert!(net.head_l().is_none(), "pretext head must be discarded");
    assert_eq!(report.loss_history.len(), 2);
    assert!(report.loss_history.iter().all(|l| l.is_finite()));
}

#[test]
fn step1_requires_four_frames() {
    let grid = GridConfig {
        n_timesteps: 3,
        ..GridConfig::desk()
    };
    let ds = generate_synthetic(&GeneratorConfig {
        seed: 1,
        n_per_class: 1,
        grid,
        classes: vec![ManeuverClass::Following],
    })
    .unwrap();
    assert!(matches!(
        step1_pretrain(&ds.unlabeled, &[], &quick_config()),
        Err(Error::Unsupported(_))
    ));
}

#[test]
fn pretext_labels_are_uniform() {
    // chi-square over 24 classes, 23 degrees of freedom; 49.73 is the 0.1% tail
    let n = 4800;
    for epoch in 0..3 {
        let schedule = pretext_schedule(n, 11, epoch);
        let mut counts = [0usize; PRETEXT_CLASSES];
        for (_, p) in &schedule {
            counts[p.class()] += 1;
        }
        let expected = n as f64 / 24.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 49.73, "epoch {epoch}: chi2 {chi2}");
        let mut seen: Vec<usize> = schedule.iter().map(|(i, _)| *i).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }
    assert_ne!(pretext_schedule(50, 11, 0), pretext_schedule(50, 11, 1));
}

#[test]
fn extract_features_properties() {
    let ds = dataset(2, 2);
    let net = new_network(&ds.unlabeled[0], &quick_config()).unwrap();
    let mut data = ds.unlabeled.clone();
    data.push(ds.unlabeled[0].clone());
    let f = extract_features(&net, &data).unwrap();
    assert_eq!(f.len(), data.len());
    assert_eq!(f[0].len(), 16);
    assert_eq!(f[0], *f.last().unwrap());
    let single = net
        .forward(&[Tensor::from_scenario(&data[3])], HeadSelect::NONE)
        .unwrap();
    assert_eq!(single.features[0], f[3]);

    let wrong = ScenarioTensor::new(0, vec![OccupancyGrid::filled(8, 8, 0.0); 4]).unwrap();
    assert!(extract_features(&net, &[wrong]).is_err());
}

#[test]
fn assign_clusters_tie_and_one_hot() {
    let ds = dataset(2, 3);
    let mut net = new_network(&ds.unlabeled[0], &quick_config()).unwrap();
    net.attach_head_u(3).unwrap();
    let head = net.head_u().unwrap();
    let (nw, nb) = (head.weight.len(), head.bias.len());
    for index in 0..nw {
        net.set_param(ParamRef { slot: Slot::HeadU, bias: false, index }, 0.0).unwrap();
    }
    for index in 0..nb {
        net.set_param(ParamRef { slot: Slot::HeadU, bias: true, index }, 0.0).unwrap();
    }
    let uniform = assign_clusters(&net, &ds.unlabeled, 0).unwrap();
    assert!(uniform.clusters.iter().all(|&c| c == 0));
    assert!(uniform.probs.iter().flatten().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));

    net.set_param(ParamRef { slot: Slot::HeadU, bias: true, index: 2 }, 50.0).unwrap();
    let hot = assign_clusters(&net, &ds.unlabeled, 4).unwrap();
    assert!(hot.clusters.iter().all(|&c| c == 2));
    assert_eq!(hot.epoch, 4);
    assert_eq!(hot.ids, ds.unlabeled.iter().map(|t| t.id).collect::<Vec<_>>());
}

#[test]
fn assign_clusters_follows_input_order() {
    let ds = dataset(2, 4);
    let mut net = new_network(&ds.unlabeled[0], &quick_config()).unwrap();
    net.attach_head_u(3).unwrap();
    let a = assign_clusters(&net, &ds.unlabeled, 0).unwrap();
    let mut rev = ds.unlabeled.clone();
    rev.reverse();
    let b = assign_clusters(&net, &rev, 0).unwrap();
    let mut back = b.clusters.clone();
    back.reverse();
    assert_eq!(a.clusters, back);
    for (c, p) in a.clusters.iter().zip(&a.probs) {
        let max = p.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(p.iter().position(|&v| v == max), Some(*c));
    }
}

#[test]
fn top_fraction_calibration() {
    let s = SimilarityMatrix::symmetric_from_fn(4, |i, j| match (i, j) {
        (0, 1) => 0.9,
        (2, 3) => 0.8,
        (0, 2) => 0.7,
        _ => 0.1,
    });
    // 6 pairs, Q = 3 keeps the top 2
    let c = calibrate_top_fraction(&s, 3);
    assert_eq!(c.get(0, 1), 1.0);
    assert_eq!(c.get(3, 2), 1.0);
    assert_eq!(c.get(0, 2), 0.0);
    assert_eq!(c.get(1, 3), 0.0);
    assert_eq!(c.get(2, 2), 1.0);
    // ties at the cut-off all count as similar
    let flat = SimilarityMatrix::symmetric_from_fn(3, |_, _| 0.5);
    assert!(calibrate_top_fraction(&flat, 2).data().iter().all(|&v| v == 1.0));
}

#[test]
fn step2_attaches_k_way_head_and_keeps_prefix() {
    let ds = dataset(4, 5);
    let cfg = quick_config();
    let net = new_network(&ds.unlabeled[0], &cfg).unwrap();
    let frozen = backbone_bits(&net, cfg.freeze_prefix);
    let tail = backbone_bits(&net, net.backbone().len());
    let (net, report) = step2_finetune(net, &ds.labeled, &[], 4, true, &cfg).unwrap();
    assert_eq!(net.head_l_units(), 4);
    assert_eq!(backbone_bits(&net, cfg.freeze_prefix), frozen);
    assert_ne!(backbone_bits(&net, net.backbone().len()), tail);
    assert!(report.val_accuracy.is_none());
    assert!((0.0..=1.0).contains(&report.train_accuracy));
}

#[test]
fn step3_rejects_small_q() {
    let ds = dataset(2, 6);
    let cfg = quick_config();
    let net = new_network(&ds.unlabeled[0], &cfg).unwrap();
    assert!(matches!(
        step3_cluster(net, &[], &ds.unlabeled, 0, 1, false, &cfg, None),
        Err(Error::Config(_))
    ));
}

#[test]
fn step3_extends_head_and_logs_schedule() {
    let ds = dataset(4, 7);
    let cfg = quick_config();
    let net = new_network(&ds.unlabeled[0], &cfg).unwrap();
    let (net, _) = step2_finetune(net, &ds.labeled, &[], 4, true, &cfg).unwrap();
    let frozen = backbone_bits(&net, cfg.freeze_prefix);
    let truth = ds.unlabeled_truth.clone().unwrap();
    let run = step3_cluster(net, &ds.labeled, &ds.unlabeled, 4, 3, true, &cfg, Some(&truth)).unwrap();
    assert_eq!(run.network.head_l_units(), 7);
    assert_eq!(run.network.head_u_units(), 3);
    assert_eq!(backbone_bits(&run.network, cfg.freeze_prefix), frozen);
    assert_eq!(run.history.len(), 3);
    let first = &run.history[0];
    assert!((first.omega - 5.0 * (-5.0f64).exp()).abs() < 1e-12);
    assert!(run.history.iter().all(|h| h.acc.is_some_and(|a| (0.0..=1.0).contains(&a))));
    assert!(run.history.iter().all(|h| h.labeled_accuracy.is_some()));
    assert_eq!(run.assignment.clusters.len(), ds.unlabeled.len());
    assert!(run.assignment.clusters.iter().all(|&c| c < 3));
}

#[test]
fn categorical_loss_alone_keeps_labelled_accuracy() {
    let ds = dataset(20, 8);
    let mut cfg = quick_config();
    cfg.features = 32;
    cfg.pretrain.epochs = 4;
    cfg.finetune.epochs = 30;
    cfg.cluster.epochs = 10;
    cfg.ramp_length = 10.0;
    cfg.losses = LossToggles {
        categorical: true,
        cluster: false,
        consistency: false,
    };
    let (net, _) = step1_pretrain(&ds.all_tensors(), &[], &cfg).unwrap();
    let (net, report) = step2_finetune(net, &ds.labeled, &[], 4, true, &cfg).unwrap();
    assert!(report.train_accuracy > 0.9, "{report:?}");
    let run = step3_cluster(net, &ds.labeled, &ds.unlabeled, 4, 3, true, &cfg, None).unwrap();
    let after = classification_accuracy(&run.network, &ds.labeled, 4).unwrap();
    assert!(
        after >= report.train_accuracy - 0.05,
        "labelled accuracy fell from {} to {after}",
        report.train_accuracy
    );
    assert!(run.history.iter().all(|h| h.loss_cluster == 0.0 && h.loss_cons == 0.0));
}

#[test]
fn step3_total_loss_falls_early() {
    let ds = dataset(20, 9);
    let mut cfg = quick_config();
    cfg.pretrain.epochs = 3;
    cfg.finetune.epochs = 4;
    cfg.cluster.epochs = 5;
    cfg.ramp_length = 50.0;
    let (train, held) = (ds.clone(), ds.clone());
    let out = run_pipeline(&train, &held, &cfg, None).unwrap();
    let h = &out.cluster.history;
    assert!(h[4].loss < h[0].loss, "{:?}", h.iter().map(|e| e.loss).collect::<Vec<_>>());
}

#[test]
fn pipeline_is_deterministic_and_ablations_run() {
    let ds = dataset(4, 10);
    let cfg = quick_config();
    let a = run_pipeline(&ds, &ds, &cfg, None).unwrap();
    let b = run_pipeline(&ds, &ds, &cfg, None).unwrap();
    assert_eq!(a.cluster.assignment, b.cluster.assignment);
    assert_eq!(a.cluster.history, b.cluster.history);
    assert!(a.acc.is_some());

    let no_ssl = PipelineConfig {
        use_ssl: false,
        ..cfg.clone()
    };
    let r = run_pipeline(&ds, &ds, &no_ssl, None).unwrap();
    assert!(r.pretext.is_none() && r.finetune.is_some());

    let no_lab = PipelineConfig {
        use_labeled: false,
        ..cfg.clone()
    };
    let r = run_pipeline(&ds, &ds, &no_lab, None).unwrap();
    assert!(r.finetune.is_none());
    assert!(r.cluster.network.head_l().is_none());
    assert!(r.cluster.history.iter().all(|h| h.labeled_accuracy.is_none() && h.loss_cat == 0.0));

    let cosine = PipelineConfig {
        similarity: SimilarityMethod::Cosine,
        ..cfg.clone()
    };
    let r = run_pipeline(&ds, &ds, &cosine, None).unwrap();
    assert!(r.cluster.history.iter().all(|h| !h.degenerate_forest));
}

#[test]
fn estimated_q_is_used() {
    let ds = dataset(4, 12);
    let cfg = PipelineConfig {
        q: QChoice::Estimate { min: 2, max: 4 },
        ..quick_config()
    };
    let out = run_pipeline(&ds, &ds, &cfg, None).unwrap();
    let est = out.q_estimate.unwrap();
    assert_eq!(est.scores.len(), 3);
    assert_eq!(out.cluster.q, est.q);
    assert_eq!(out.cluster.network.head_u_units(), est.q);
}

#[test]
fn config_validation() {
    let ok = PipelineConfig::default();
    assert!(ok.validate().is_ok());
    assert_eq!(ok.ramp_length, 50.0);
    for bad in [
        PipelineConfig { ramp_length: 0.0, ..ok.clone() },
        PipelineConfig { q: QChoice::Fixed(1), ..ok.clone() },
        PipelineConfig { q: QChoice::Estimate { min: 4, max: 3 }, ..ok.clone() },
        PipelineConfig { labeled_fraction: 1.0, ..ok.clone() },
        PipelineConfig { features: 0, ..ok.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
    assert_eq!(SimilarityMethod::from_name("knn"), Some(SimilarityMethod::Knn));
    assert!(SimilarityMethod::from_name("euclid").is_none());
    let json = serde_json::to_string(&ok).unwrap();
    let back: PipelineConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, ok);
}

#[test]
fn jsonl_writer_emits_one_line_per_item() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("log.jsonl");
    write_jsonl(&p, &[1, 2, 3]).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), "1\n2\n3\n");
}
