use gazeadapt::checkpoint::Checkpoint;
use gazeadapt::data::{evaluate, generate_domain, DatasetHandle, SyntheticDomainSpec};
use gazeadapt::engine::{
    ablation_matrix, adapt, parse_loss_log, pretrain, select_top, supervised_grads, Ablation,
    AdaptConfig, AdaptOptions, ParamProbe, PretrainConfig, RunStatus, Variant,
};
use gazeadapt::ensemble::init_group;
use gazeadapt::losses::DeviationLoss;
use gazeadapt::nn::Architecture;
use gazeadapt::optim::Adam;
use gazeadapt::{DomainTag, Error};

fn small(spec: SyntheticDomainSpec) -> SyntheticDomainSpec {
    SyntheticDomainSpec {
        height: 12,
        width: 20,
        ..spec
    }
}

fn source(n: usize, seed: u64) -> DatasetHandle {
    generate_domain(&small(SyntheticDomainSpec::benchmark_source(n, seed)), DomainTag::Source).unwrap()
}

fn target(n: usize, seed: u64) -> DatasetHandle {
    generate_domain(&small(SyntheticDomainSpec::benchmark_target(n, seed)), DomainTag::Target).unwrap()
}

fn arch() -> Architecture {
    Architecture::tiny_conv(1, 12, 20)
}

fn checkpoints(h: usize) -> Vec<Checkpoint> {
    (0..h as u64)
        .map(|s| Checkpoint::from_model(format!("m{s}"), arch().build(s + 10).as_ref(), s + 10))
        .collect()
}

fn config(h: usize, n: usize, ablation: &str) -> AdaptConfig {
    AdaptConfig {
        h,
        n,
        ablation: Ablation::parse(ablation).unwrap(),
        ..AdaptConfig::default()
    }
}

#[test]
fn zero_weights_reduce_to_supervised_step() {
    let src = source(8, 1);
    let tgt = target(20, 2).hidden();
    let ckpts = checkpoints(3);
    let mut cfg = config(3, 1, "sg");
    cfg.lambda1 = 0.0;
    cfg.lambda2 = 0.0;
    cfg.source_subset = 8;
    cfg.batch_size_source = 8;
    let state = init_group(&ckpts, &arch(), cfg.alpha).unwrap();
    let out = adapt(state, &src, &tgt, &cfg, &AdaptOptions::default()).unwrap();

    let batch = src.batch(&(0..8).collect::<Vec<_>>()).unwrap();
    for (k, c) in ckpts.iter().enumerate() {
        let mut model = c.instantiate().unwrap();
        let (_, grads) = supervised_grads(model.as_ref(), &batch).unwrap();
        let mut adam = Adam::new(model.params(), cfg.adam());
        adam.step(model.params_mut(), &grads).unwrap();
        let before = &c.params;
        let engine = out.state.online()[k].params();
        for ((name, a), ((_, b), (_, p))) in engine
            .iter()
            .zip(model.params().iter().zip(before.iter()))
        {
            for ((x, y), z) in a.data().iter().zip(b.data()).zip(p.data()) {
                let (dx, dy) = ((x - z) as f64, (y - z) as f64);
                assert!(
                    (dx - dy).abs() <= 1e-3 * dy.abs() + 1e-8,
                    "{name}: engine step {dx} vs supervised step {dy}"
                );
            }
        }
    }
}

#[test]
fn empty_ablation_leaves_parameters_unchanged() {
    let ckpts = checkpoints(2);
    let mut cfg = config(2, 5, "none");
    cfg.lambda1 = 0.0;
    cfg.lambda2 = 0.0;
    let state = init_group(&ckpts, &arch(), cfg.alpha).unwrap();
    let out = adapt(state, &source(10, 1), &target(10, 2).hidden(), &cfg, &AdaptOptions::default()).unwrap();
    for (m, c) in out.state.online().iter().zip(&ckpts) {
        assert_eq!(m.params(), &c.params);
    }
    assert_eq!(out.manifest.iterations, 5);
}

#[test]
fn logged_total_follows_combination() {
    let dir = tempfile::tempdir().unwrap();
    let ckpts = checkpoints(3);
    let cfg = config(3, 25, "2oma+js+sg");
    let state = init_group(&ckpts, &arch(), cfg.alpha).unwrap();
    let opts = AdaptOptions {
        out_dir: Some(dir.path()),
        ..Default::default()
    };
    let out = adapt(state, &source(40, 1), &target(30, 2).hidden(), &cfg, &opts).unwrap();
    let text = std::fs::read_to_string(dir.path().join("losses.csv")).unwrap();
    let rows = parse_loss_log(&text).unwrap();
    assert_eq!(rows.len(), 25);
    assert_eq!(rows, out.manifest.losses);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.iter, i + 1);
        let expect = cfg.lambda1 * r.js + r.sg + cfg.lambda2 * (r.og + r.og_m);
        assert!((r.total - expect).abs() <= 1e-6, "row {i}: {r:?}");
        assert!(r.sg > 0.0 && r.og > 0.0);
    }
    assert!(rows.iter().any(|r| r.js > 0.0));
}

#[test]
fn disabled_terms_log_zero() {
    let ckpts = checkpoints(2);
    let cfg = config(2, 3, "oma");
    let state = init_group(&ckpts, &arch(), cfg.alpha).unwrap();
    let out = adapt(state, &source(10, 1), &target(10, 2).hidden(), &cfg, &AdaptOptions::default()).unwrap();
    for r in &out.manifest.losses {
        assert_eq!((r.js, r.sg), (0.0, 0.0));
        assert!(r.og > 0.0);
    }
}

#[test]
fn momentum_matches_closed_form_ema() {
    let ckpts = checkpoints(3);
    let mut cfg = config(3, 40, "2oma+js+sg");
    cfg.alpha = 0.9;
    cfg.lr_adapt = 1e-3;
    let probe = ParamProbe {
        member: 1,
        tensor: "head2.bias".into(),
        index: 0,
    };
    let e0 = ckpts[1].params.get("head2.bias").unwrap().data()[0] as f64;
    let state = init_group(&ckpts, &arch(), cfg.alpha).unwrap();
    let opts = AdaptOptions {
        probe: Some(probe),
        ..Default::default()
    };
    let out = adapt(state, &source(30, 1), &target(30, 2).hidden(), &cfg, &opts).unwrap();
    assert_eq!(out.probe_trace.len(), 40);
    let n = out.probe_trace.len() as i32;
    let a = cfg.alpha;
    let mut expect = a.powi(n) * e0;
    for (t, &theta) in out.probe_trace.iter().enumerate() {
        expect += (1.0 - a) * a.powi(n - 1 - t as i32) * theta as f64;
    }
    let got = out.state.momentum()[1].params().get("head2.bias").unwrap().data()[0] as f64;
    assert!((got - expect).abs() <= 1e-5 * expect.abs().max(1e-3), "{got} vs {expect}");
    assert!((got - e0).abs() > 1e-6, "probe did not move");
    assert_eq!(out.state.iteration(), 41);
}

#[test]
fn budget_and_label_tripwire() {
    let ckpts = checkpoints(3);
    let mut cfg = config(3, 30, "2oma+js+sg");
    cfg.target_budget = 4;
    let tgt = target(50, 2).hidden();
    let state = init_group(&ckpts, &arch(), cfg.alpha).unwrap();
    let out = adapt(state, &source(20, 1), &tgt, &cfg, &AdaptOptions::default()).unwrap();
    assert!(tgt.access_count() <= 4);
    assert_eq!(tgt.label_access_count(), 0);
    assert_eq!(out.manifest.target_images_read, tgt.access_count());
    assert_eq!(out.manifest.target_indices.len(), 4);
}

#[test]
fn source_content_is_irrelevant_without_sg() {
    let ckpts = checkpoints(2);
    let cfg = config(2, 10, "2oma+js");
    let tgt = target(20, 2).hidden();
    let run = |src: &DatasetHandle| {
        let state = init_group(&ckpts, &arch(), cfg.alpha).unwrap();
        adapt(state, src, &tgt, &cfg, &AdaptOptions::default()).unwrap()
    };
    let a = run(&source(20, 1));
    let b = run(&source(20, 99));
    for (x, y) in a.state.online().iter().zip(b.state.online()) {
        assert_eq!(x.params(), y.params());
    }
    let cfg_sg = config(2, 10, "2oma+js+sg");
    let with = |src: &DatasetHandle| {
        let state = init_group(&ckpts, &arch(), cfg_sg.alpha).unwrap();
        adapt(state, src, &tgt, &cfg_sg, &AdaptOptions::default()).unwrap()
    };
    assert_ne!(
        with(&source(20, 1)).state.online()[0].params(),
        with(&source(20, 99)).state.online()[0].params()
    );
}

#[test]
fn zero_iterations_is_identity() {
    let ckpts = checkpoints(2);
    let cfg = config(2, 0, "2oma+js+sg");
    let state = init_group(&ckpts, &arch(), cfg.alpha).unwrap();
    let out = adapt(state, &source(4, 1), &target(4, 2).hidden(), &cfg, &AdaptOptions::default()).unwrap();
    assert_eq!(out.manifest.iterations, 0);
    assert!(out.manifest.losses.is_empty());
    assert_eq!(out.state.iteration(), 1);
    for (k, c) in ckpts.iter().enumerate() {
        assert_eq!(out.state.online()[k].params(), &c.params);
        assert_eq!(out.state.momentum()[k].params(), &c.params);
    }
}

#[test]
fn visible_target_labels_are_rejected() {
    let ckpts = checkpoints(2);
    let cfg = config(2, 1, "2oma+js+sg");
    let state = init_group(&ckpts, &arch(), cfg.alpha).unwrap();
    let err = adapt(state, &source(4, 1), &target(4, 2), &cfg, &AdaptOptions::default()).unwrap_err();
    assert!(matches!(err, Error::ContractViolation(_)), "{err}");
}

#[test]
fn divergence_flushes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let ckpts = checkpoints(2);
    let mut cfg = config(2, 50, "2oma+js+sg");
    cfg.lr_adapt = 1e30;
    let state = init_group(&ckpts, &arch(), cfg.alpha).unwrap();
    let opts = AdaptOptions {
        out_dir: Some(dir.path()),
        ..Default::default()
    };
    let err = adapt(state, &source(8, 1), &target(8, 2).hidden(), &cfg, &opts).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
    let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    let m: gazeadapt::engine::RunManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(m.status, RunStatus::Diverged);
}

#[test]
fn adaptation_is_deterministic() {
    let ckpts = checkpoints(3);
    let cfg = config(3, 15, "2oma+js+sg");
    let run = || {
        let state = init_group(&ckpts, &arch(), cfg.alpha).unwrap();
        adapt(state, &source(20, 1), &target(20, 2).hidden(), &cfg, &AdaptOptions::default()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.manifest.losses, b.manifest.losses);
    for (x, y) in a.state.online().iter().zip(b.state.online()) {
        assert_eq!(x.params(), y.params());
    }
}

#[test]
fn pretraining_contract() {
    let train = source(200, 3);
    let val = source(60, 4);
    let cfg = PretrainConfig {
        n_models: 3,
        steps: 200,
        batch_size: 16,
        lr: 1e-3,
        seed: 5,
    };
    let ckpts = pretrain(&train, &val, &arch(), &cfg).unwrap();
    assert_eq!(ckpts.len(), 3);
    for i in 0..3 {
        for j in i + 1..3 {
            assert_ne!(ckpts[i].params, ckpts[j].params);
        }
        let untrained = arch().build(ckpts[i].seed);
        let before = evaluate(untrained.as_ref(), &val).unwrap().mean;
        assert!(ckpts[i].source_val_error.unwrap() < before);
    }
    let again = pretrain(&train, &val, &arch(), &cfg).unwrap();
    assert_eq!(again, ckpts);

    let top = select_top(&ckpts, 2).unwrap();
    assert!(top[0].source_val_error <= top[1].source_val_error);
    assert!(matches!(select_top(&ckpts, 4), Err(Error::Config(_))));
    assert!(matches!(
        pretrain(&train.hidden(), &val, &arch(), &cfg),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn ablation_grid_contract() {
    let ckpts = checkpoints(2);
    let eval = target(30, 7);
    let base = config(2, 5, "2oma+js+sg");
    let variant = |name: &str, og: DeviationLoss| Variant {
        name: name.into(),
        config: AdaptConfig {
            og_variant: og,
            ..base.clone()
        },
        checkpoints: ckpts.clone(),
    };
    let grid = vec![
        variant("og", DeviationLoss::Og),
        variant("l1", DeviationLoss::L1),
        variant("l2", DeviationLoss::L2),
        variant("og_again", DeviationLoss::Og),
    ];
    let rows = ablation_matrix(&grid, &arch(), &source(20, 1), &target(20, 2), &eval, &[1, 2]).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0].errors, rows[3].errors);
    assert!(rows.iter().all(|r| r.std.is_some()));

    let mut other = grid[..2].to_vec();
    other[1].checkpoints = checkpoints(3)[1..].to_vec();
    assert!(matches!(
        ablation_matrix(&other, &arch(), &source(20, 1), &target(20, 2), &eval, &[1]),
        Err(Error::InvalidArgument(_))
    ));
}
