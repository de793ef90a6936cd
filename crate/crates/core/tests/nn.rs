use rand::Rng as _;
use rfap_core::nn::*;
use rfap_core::rng::rng_from;
use rfap_core::urf::SimilarityMatrix;

fn random_input(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = rng_from(seed, &[]);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .unwrap()
}

/// Small net exercising every layer kind.
fn small_net(seed: u64) -> Network {
    let specs = vec![
        LayerSpec::conv3d(3, Dims3::new(2, 2, 2)),
        LayerSpec::relu(),
        LayerSpec::maxpool3d(Dims3::new(1, 2, 2)),
        LayerSpec::conv3d(4, Dims3::new(2, 2, 2)),
        LayerSpec::relu(),
        LayerSpec::flatten(),
        LayerSpec::dense(10),
        LayerSpec::relu(),
    ];
    let mut net = Network::new(&[1, 4, 7, 9], &specs, seed).unwrap();
    net.attach_head_l(5).unwrap();
    net.attach_head_u(3).unwrap();
    net
}

/// [`small_net`] with every parameter redrawn from U(-0.6, 0.6). The default
/// init leaves activations so small that most derivatives sit below the
/// finite-difference noise floor.
fn lively_net(seed: u64) -> Network {
    let mut net = small_net(seed);
    let mut rng = rng_from(seed, &[99]);
    for p in net.trainable_params() {
        net.set_param(p, rng.random_range(-0.6..0.6)).unwrap();
    }
    net
}

fn batch(n: usize, seed: u64) -> Vec<Tensor> {
    (0..n)
        .map(|k| random_input(&[1, 4, 7, 9], seed * 100 + k as u64))
        .collect()
}

fn similarity(n: usize, seed: u64) -> SimilarityMatrix {
    let mut rng = rng_from(seed, &[7]);
    SimilarityMatrix::symmetric_from_fn(n, |_, _| rng.random_range(0.05..0.95))
}

/// Classification + clustering + weighted consistency over a batch whose
/// second half is the augmented copy of the first half.
fn composite<'a>(
    s: &'a SimilarityMatrix,
    targets: &[usize],
    omega: f64,
) -> impl Fn(&Outputs) -> rfap_core::Result<(f64, OutputGrads)> + 'a {
    let targets = targets.to_vec();
    move |out: &Outputs| {
        let l = out.head_l.as_ref().unwrap();
        let u = out.head_u.as_ref().unwrap();
        let m = l.len() / 2;
        let cce = categorical_cross_entropy(&l[..m], &targets)?;
        let pair = pairwise_cluster_loss(s, &u[..m])?;
        let cl = consistency_loss(&l[..m], &l[m..])?;
        let cu = consistency_loss(&u[..m], &u[m..])?;
        let loss = cce.loss + pair.loss + omega * (cl.loss + cu.loss);
        let mut gl = vec![vec![0.0; l[0].len()]; l.len()];
        let mut gu = vec![vec![0.0; u[0].len()]; u.len()];
        for i in 0..m {
            for k in 0..gl[i].len() {
                gl[i][k] = cce.grad[i][k] + omega * cl.grad_clean[i][k];
                gl[m + i][k] = omega * cl.grad_augmented[i][k];
            }
            for k in 0..gu[i].len() {
                gu[i][k] = pair.grad[i][k] + omega * cu.grad_clean[i][k];
                gu[m + i][k] = omega * cu.grad_augmented[i][k];
            }
        }
        Ok((
            loss,
            OutputGrads {
                features: None,
                head_l: Some(gl),
                head_u: Some(gu),
            },
        ))
    }
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let net = lively_net(1);
    let clean = batch(3, 2);
    let mut all = clean.clone();
    for (k, x) in clean.iter().enumerate() {
        let mut y = x.clone();
        let mut rng = rng_from(9, &[k as u64]);
        for v in y.data_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
        all.push(y);
    }
    let s = similarity(3, 3);
    let objective = composite(&s, &[0, 3, 4], 0.7);
    let report = gradient_check(&net, &all, HeadSelect::BOTH, objective, 1e-4, 250, 5).unwrap();
    assert!(report.checked >= 200, "{report:?}");
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn each_loss_alone_passes_gradient_check() {
    let net = lively_net(4);
    let xs = batch(4, 5);
    let targets = [1usize, 0, 4, 2];
    let cce = |out: &Outputs| {
        let c = categorical_cross_entropy(out.head_l.as_ref().unwrap(), &targets)?;
        Ok((
            c.loss,
            OutputGrads {
                head_l: Some(c.grad),
                ..Default::default()
            },
        ))
    };
    let r = gradient_check(&net, &xs, HeadSelect::L, cce, 1e-4, 200, 1).unwrap();
    assert!(r.checked >= 200 && r.max_rel_error < 1e-6, "{r:?}");

    let s = similarity(4, 8);
    let pair = |out: &Outputs| {
        let p = pairwise_cluster_loss(&s, out.head_u.as_ref().unwrap())?;
        Ok((
            p.loss,
            OutputGrads {
                head_u: Some(p.grad),
                ..Default::default()
            },
        ))
    };
    let r = gradient_check(&net, &xs, HeadSelect::U, pair, 1e-4, 200, 2).unwrap();
    assert!(r.checked >= 200 && r.max_rel_error < 1e-6, "{r:?}");

    let cons = |out: &Outputs| {
        let u = out.head_u.as_ref().unwrap();
        let c = consistency_loss(&u[..2], &u[2..])?;
        let mut g = c.grad_clean.clone();
        g.extend(c.grad_augmented.clone());
        Ok((
            c.loss,
            OutputGrads {
                head_u: Some(g),
                ..Default::default()
            },
        ))
    };
    let r = gradient_check(&net, &xs, HeadSelect::U, cons, 1e-4, 200, 3).unwrap();
    assert!(r.checked >= 200 && r.max_rel_error < 1e-6, "{r:?}");
}

#[test]
fn feature_gradients_and_strided_softmax_backbone() {
    // softmax inside the backbone and a strided conv, driven through features
    let specs = vec![
        LayerSpec {
            kind: LayerKind::Conv3d {
                out_channels: 2,
                kernel: Dims3::new(1, 2, 3),
                stride: Dims3::new(1, 2, 2),
            },
            trainable: true,
        },
        LayerSpec::flatten(),
        LayerSpec::dense(6),
        LayerSpec::softmax(),
    ];
    let net = Network::new(&[1, 2, 5, 7], &specs, 3).unwrap();
    let xs: Vec<Tensor> = (0..3)
        .map(|k| random_input(&[1, 2, 5, 7], 40 + k))
        .collect();
    let obj = |out: &Outputs| {
        let mut loss = 0.0;
        let mut g = Vec::new();
        for (i, h) in out.features.iter().enumerate() {
            let w: Vec<f64> = (0..h.len())
                .map(|k| ((i + 2 * k) % 5) as f64 - 2.0)
                .collect();
            loss += h.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            g.push(w);
        }
        Ok((
            loss,
            OutputGrads {
                features: Some(g),
                ..Default::default()
            },
        ))
    };
    let r = gradient_check(&net, &xs, HeadSelect::NONE, obj, 1e-5, 200, 4).unwrap();
    assert!(r.checked >= 50 && r.max_rel_error < 1e-6, "{r:?}");
}

#[test]
fn gradient_check_rejects_bad_step() {
    let net = small_net(1);
    let xs = batch(2, 1);
    let obj = |_: &Outputs| Ok((0.0, OutputGrads::default()));
    assert!(gradient_check(&net, &xs, HeadSelect::NONE, obj, 1e-2, 10, 0).is_err());
}

#[test]
fn frozen_parameters_have_no_gradient_and_stay_bit_identical() {
    let mut net = small_net(2);
    net.set_frozen(FreezeSelector::Prefix(3)).unwrap();
    let xs = batch(4, 3);
    let before: Vec<Vec<f64>> = net.backbone()[..3]
        .iter()
        .map(|l| l.weight.clone())
        .collect();
    let before_bias = net.backbone()[0].bias.clone();
    let cfg = SgdConfig::default();
    let mut state = SgdState::new();
    for step in 0..10 {
        let (out, trace) = net.forward_train(&xs, HeadSelect::L).unwrap();
        let c =
            categorical_cross_entropy(out.head_l.as_ref().unwrap(), &[0, 1, 2, step % 5]).unwrap();
        let g = net
            .backward(
                &trace,
                &OutputGrads {
                    head_l: Some(c.grad),
                    ..Default::default()
                },
            )
            .unwrap();
        assert!(g.backbone[0].is_none());
        assert!(g.backbone[3].is_some());
        let p = ParamRef {
            slot: Slot::Backbone(0),
            bias: false,
            index: 0,
        };
        assert_eq!(g.value(p), 0.0);
        sgd_step(&mut net, &g, &cfg, &mut state).unwrap();
    }
    let after: Vec<Vec<f64>> = net.backbone()[..3]
        .iter()
        .map(|l| l.weight.clone())
        .collect();
    assert_eq!(before, after);
    assert_eq!(before_bias, net.backbone()[0].bias);
    assert!(!net
        .trainable_params()
        .iter()
        .any(|p| p.slot == Slot::Backbone(0)));
}

fn train_steps(net: &mut Network, steps: usize) {
    let xs = batch(4, 3);
    let cfg = SgdConfig::default();
    let mut state = SgdState::new();
    for _ in 0..steps {
        let (out, trace) = net.forward_train(&xs, HeadSelect::L).unwrap();
        let c = categorical_cross_entropy(out.head_l.as_ref().unwrap(), &[0, 1, 2, 3]).unwrap();
        let g = net
            .backward(
                &trace,
                &OutputGrads {
                    head_l: Some(c.grad),
                    ..Default::default()
                },
            )
            .unwrap();
        sgd_step(net, &g, &cfg, &mut state).unwrap();
    }
}

#[test]
fn freeze_all_backbone_updates_only_heads() {
    let mut net = small_net(3);
    net.set_frozen(FreezeSelector::AllBackbone).unwrap();
    let start = net.clone();
    train_steps(&mut net, 3);
    assert_eq!(start.backbone(), net.backbone());
    assert_ne!(start.head_l(), net.head_l());

    let mut net = start.clone();
    net.set_frozen(FreezeSelector::None).unwrap();
    train_steps(&mut net, 3);
    for (a, b) in start.backbone().iter().zip(net.backbone()) {
        if a.spec.has_params() {
            assert_ne!(a.weight, b.weight);
        }
    }
    assert!(net.clone().set_frozen(FreezeSelector::Prefix(99)).is_err());
}

#[test]
fn duplicate_batch_has_single_sample_gradient() {
    let net = small_net(5);
    let x = batch(1, 9);
    let grad_of = |xs: &[Tensor]| {
        let (out, trace) = net.forward_train(xs, HeadSelect::L).unwrap();
        let t = vec![2; xs.len()];
        let c = categorical_cross_entropy(out.head_l.as_ref().unwrap(), &t).unwrap();
        net.backward(
            &trace,
            &OutputGrads {
                head_l: Some(c.grad),
                ..Default::default()
            },
        )
        .unwrap()
    };
    let one = grad_of(&x);
    let two = grad_of(&[x[0].clone(), x[0].clone()]);
    for p in net.trainable_params() {
        assert!((one.value(p) - two.value(p)).abs() <= 1e-12 * (1.0 + one.value(p).abs()));
    }
}

#[test]
fn forward_is_deterministic_and_batch_independent() {
    let net = small_net(6);
    let zero = Tensor::zeros(vec![1, 4, 7, 9]).unwrap();
    let out = net
        .forward(&[zero.clone(), zero.clone()], HeadSelect::BOTH)
        .unwrap();
    assert!(out.features.iter().flatten().all(|v| v.is_finite()));
    assert_eq!(out.features[0], out.features[1]);
    assert_eq!(
        out.head_u.as_ref().unwrap()[0],
        out.head_u.as_ref().unwrap()[1]
    );
    let xs = batch(3, 4);
    let all = net.forward(&xs, HeadSelect::BOTH).unwrap();
    let single = net.forward(&xs[1..2], HeadSelect::BOTH).unwrap();
    assert_eq!(all.features[1], single.features[0]);
    assert_eq!(
        all.head_l.as_ref().unwrap()[1],
        single.head_l.as_ref().unwrap()[0]
    );
    for p in all.head_l.unwrap() {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn forward_rejects_wrong_shape_and_missing_head() {
    let mut net = small_net(6);
    let bad = Tensor::zeros(vec![1, 4, 7, 8]).unwrap();
    let err = net.forward(&[bad], HeadSelect::NONE).unwrap_err();
    assert!(matches!(err, rfap_core::Error::Shape(_)));
    net.detach_head_l();
    assert!(net.forward(&batch(1, 1), HeadSelect::L).is_err());
}

#[test]
fn sgd_examples() {
    let specs = vec![LayerSpec::flatten(), LayerSpec::dense(1)];
    let mut net = Network::new(&[1], &specs, 0).unwrap();
    let p = ParamRef {
        slot: Slot::Backbone(1),
        bias: false,
        index: 0,
    };
    net.set_param(p, 2.0).unwrap();
    let grads = |g: f64| Gradients {
        backbone: vec![
            None,
            Some(ParamGrad {
                weight: vec![g],
                bias: vec![0.0],
            }),
        ],
        head_l: None,
        head_u: None,
    };
    let plain = SgdConfig {
        learning_rate: 0.1,
        momentum: 0.0,
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut st = SgdState::new();
    sgd_step(&mut net, &grads(0.0), &plain, &mut st).unwrap();
    assert_eq!(net.param(p), Some(2.0));
    sgd_step(&mut net, &grads(1.0), &plain, &mut st).unwrap();
    assert!((net.param(p).unwrap() - 1.9).abs() < 1e-15);

    // momentum recursion: second update is lr * (1.9 g + decay terms)
    let cfg = SgdConfig {
        learning_rate: 0.1,
        momentum: 0.9,
        weight_decay: 0.01,
        ..Default::default()
    };
    let mut st = SgdState::new();
    let g = 0.5;
    let p0 = 1.0;
    net.set_param(p, p0).unwrap();
    sgd_step(&mut net, &grads(g), &cfg, &mut st).unwrap();
    let v1 = g + 0.01 * p0;
    let p1 = p0 - 0.1 * v1;
    assert!((net.param(p).unwrap() - p1).abs() < 1e-15);
    sgd_step(&mut net, &grads(g), &cfg, &mut st).unwrap();
    let v2 = 0.9 * v1 + g + 0.01 * p1;
    assert!((v2 - (1.9 * g + 0.9 * 0.01 * p0 + 0.01 * p1)).abs() < 1e-15);
    assert!((net.param(p).unwrap() - (p1 - 0.1 * v2)).abs() < 1e-15);

    let mut bad = grads(f64::NAN);
    assert!(matches!(
        sgd_step(&mut net, &bad, &cfg, &mut st),
        Err(rfap_core::Error::Numeric(_))
    ));
    bad.backbone[1] = None;
    assert!(sgd_step(&mut net, &bad, &cfg, &mut st).is_err());
}

#[test]
fn sgd_config_validation() {
    assert!(SgdConfig::default().validate().is_ok());
    for bad in [
        SgdConfig {
            learning_rate: 0.0,
            ..Default::default()
        },
        SgdConfig {
            momentum: 1.0,
            ..Default::default()
        },
        SgdConfig {
            batch_size: 1,
            ..Default::default()
        },
    ] {
        assert!(bad.validate().is_err());
    }
}

#[test]
fn extend_head_keeps_existing_rows() {
    let mut net = small_net(8);
    let before = net.head_l().unwrap().clone();
    net.extend_head_l(3).unwrap();
    let after = net.head_l().unwrap();
    assert_eq!(after.bias.len(), 8);
    assert_eq!(&after.weight[..before.weight.len()], &before.weight[..]);
    let out = net.forward(&batch(1, 1), HeadSelect::L).unwrap();
    assert_eq!(out.head_l.unwrap()[0].len(), 8);
}

#[test]
fn checkpoint_round_trip() {
    let mut net = small_net(9);
    net.set_frozen(FreezeSelector::Prefix(3)).unwrap();
    let ck = Checkpoint {
        network: net,
        epoch: 7,
        rng_state: 1234,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    save_checkpoint(&ck, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ck);
    let blob = std::fs::read(dir.path().join("net.bin")).unwrap();
    assert_eq!(blob.len(), 8 * ck.network.n_params());
    let first = f64::from_le_bytes(blob[..8].try_into().unwrap());
    assert_eq!(first, ck.network.backbone()[0].weight[0]);

    std::fs::write(dir.path().join("net.bin"), &blob[..blob.len() - 8]).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(rfap_core::Error::Schema { .. })
    ));
}

#[test]
fn init_is_seeded_uniform_with_zero_bias() {
    let a = small_net(11);
    assert_eq!(a, small_net(11));
    assert_ne!(a, small_net(12));
    for l in a.backbone().iter().filter(|l| l.spec.has_params()) {
        let bound = 1.0 / (l.fan_in() as f64).sqrt();
        assert!(l.weight.iter().all(|w| w.abs() <= bound));
        assert!(l.bias.iter().all(|&b| b == 0.0));
    }
}

#[test]
fn default_backbone_fits_both_grids() {
    for (shape, feat) in [([1, 4, 16, 64], 720), ([1, 4, 30, 200], 16 * 6 * 49)] {
        let specs = default_backbone(&shape, 64).unwrap();
        let net = Network::new(&shape, &specs, 0).unwrap();
        assert_eq!(net.backbone()[6].output_shape, vec![feat], "{shape:?}");
        assert_eq!(net.feature_dim(), 64);
    }
}
