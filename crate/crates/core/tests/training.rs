use std::sync::Arc;

use wdgda::data::{generate_phantom, Mask, PatchSampler, PhantomSpec, Volume};
use wdgda::losses::LossReport;
use wdgda::networks::checkpoint;
use wdgda::networks::{Domain, Group, NetConfig};
use wdgda::tensor::Tensor;
use wdgda::training::{
    batch_stream, run_experiment, train_adaptation, train_segmentation, Adam, AdamConfig, IterationLog, SegSource,
    TrainConfig, TrainState, Updated,
};
use wdgda::Error;

fn tiny() -> TrainConfig {
    TrainConfig {
        net: NetConfig {
            patch: [5, 8, 8],
            width: 2,
            content_channels: 4,
            style_dim: 4,
            style_hidden: 8,
            growth: 2,
            dense_layers: 2,
            seg_transition: 4,
            init_std: 0.1,
            ..NetConfig::default()
        },
        learning_rate: 1e-3,
        seg_learning_rate: 1e-3,
        volume_dims: [10, 16, 16],
        cases: 4,
        folds: 2,
        adapt_iterations: 3,
        seg_iterations: 4,
        seed: 17,
        ..TrainConfig::default()
    }
}

fn cases(cfg: &TrainConfig, domain: Domain, labels: bool) -> Vec<(Volume, Option<Mask>)> {
    (0..2)
        .map(|i| {
            let (v, m) = generate_phantom(&PhantomSpec::new(domain, 50 + i).with_dims(cfg.volume_dims)).unwrap();
            (v, labels.then_some(m))
        })
        .collect()
}

fn sampler(cfg: &TrainConfig, domain: Domain, labels: bool) -> Arc<PatchSampler> {
    Arc::new(PatchSampler::new(cases(cfg, domain, labels), cfg.net.patch, cfg.augment).unwrap())
}

/// Runs iterations `start..start + n` on `state` and returns the log.
fn adapt(cfg: &TrainConfig, state: &mut TrainState, start: u64, n: u64) -> Vec<IterationLog> {
    let mut sx = batch_stream(cfg, sampler(cfg, Domain::X, false), 1, start, n);
    let mut sy = batch_stream(cfg, sampler(cfg, Domain::Y, false), 2, start, n);
    let mut logs = Vec::new();
    train_adaptation(cfg, state, &mut *sx, &mut *sy, n, &mut |l| {
        logs.push(l.clone());
        Ok(())
    })
    .unwrap();
    logs
}

fn rows(logs: &[IterationLog]) -> Vec<String> {
    logs.iter().map(IterationLog::csv_row).collect()
}

#[test]
fn adam_matches_a_scalar_reference_over_two_steps() {
    let cfg = AdamConfig::new(1e-4);
    let mut opt = Adam::new(cfg);
    let name = "p".to_string();
    let mut p = Tensor::parameter(vec![0.0], &[1], Default::default()).unwrap();
    let gs = [0.5, -0.3];
    let (mut m, mut v, mut want) = (0.0f64, 0.0f64, 0.0f64);
    for (t, g) in gs.iter().enumerate() {
        let t = t as i32 + 1;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let mh = m / (1.0 - cfg.beta1.powi(t));
        let vh = v / (1.0 - cfg.beta2.powi(t));
        want -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        p = opt.step(&[(name.clone(), p)], &[Tensor::new(vec![*g], &[1]).unwrap()]).unwrap().remove(0);
        assert!((p.data()[0] - want).abs() < 1e-12);
        if t == 1 {
            assert!((p.data()[0] + 9.9999998e-5).abs() < 1e-12);
        }
    }
}

#[test]
fn adam_leaves_parameters_alone_on_zero_gradient() {
    let mut opt = Adam::new(AdamConfig::new(0.1));
    let p = Tensor::parameter(vec![1.5, -2.0], &[2], Default::default()).unwrap();
    let out = opt.step(&[("p".into(), p.clone())], &[Tensor::zeros(&[2])]).unwrap();
    assert!(out[0].bit_eq(&p));
    let nan = Tensor::new(vec![f64::NAN, 0.0], &[2]).unwrap();
    let err = opt.step(&[("layer.weight".into(), p)], &[nan]).unwrap_err();
    assert!(err.to_string().contains("layer.weight"));
}

#[test]
fn schedule_counts_follow_the_period() {
    for (period, n) in [(1usize, 4u64), (2, 7), (3, 10), (5, 5)] {
        let cfg = TrainConfig {
            content_disc_period: period,
            ..tiny()
        };
        let mut state = TrainState::new(&cfg).unwrap();
        let logs = adapt(&cfg, &mut state, 0, n);
        let disc = logs.iter().filter(|l| l.updated == Updated::ContentDisc).count() as u64;
        assert_eq!(disc, n.div_ceil(period as u64), "period {period}");
        for l in &logs {
            assert_eq!(l.updated == Updated::ContentDisc, l.step % period as u64 == 0);
        }
    }
}

#[test]
fn each_phase_touches_only_its_groups() {
    let cfg = tiny();
    let mut state = TrainState::new(&cfg).unwrap();
    for i in 0..4u64 {
        let before = state.bundle.clone();
        let log = adapt(&cfg, &mut state, i, 1).remove(0);
        let changed: Vec<Group> = Group::ALL
            .into_iter()
            .filter(|&g| !before.group_bit_eq(&state.bundle, g))
            .collect();
        if log.updated == Updated::ContentDisc {
            assert_eq!(changed, vec![Group::ContentDisc]);
        } else {
            let mut want: Vec<Group> = Group::GENERATORS.into_iter().chain(Group::CRITICS).collect();
            want.sort();
            assert_eq!(changed, want);
        }
    }
}

#[test]
fn zero_learning_rate_keeps_everything_constant() {
    let cfg = TrainConfig {
        learning_rate: 0.0,
        repeat_batch: true,
        ..tiny()
    };
    let mut state = TrainState::new(&cfg).unwrap();
    let start = state.bundle.clone();
    let logs = adapt(&cfg, &mut state, 0, 7);
    assert!(Group::ALL.iter().all(|&g| start.group_bit_eq(&state.bundle, g)));
    let totals: Vec<u64> = logs.iter().map(|l| l.report.total.to_bits()).collect();
    assert!(totals.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn logged_total_reconciles_with_its_terms() {
    let cfg = tiny();
    let mut state = TrainState::new(&cfg).unwrap();
    for l in adapt(&cfg, &mut state, 0, 5) {
        let r: &LossReport = &l.report;
        assert!((r.weighted_total(&cfg.weights) - r.total).abs() < 1e-9);
        assert!(l.csv_row().ends_with(l.updated.as_str()));
    }
}

#[test]
fn fixed_seed_runs_are_bit_identical() {
    let cfg = tiny();
    let mut a = TrainState::new(&cfg).unwrap();
    let mut b = TrainState::new(&cfg).unwrap();
    assert_eq!(rows(&adapt(&cfg, &mut a, 0, 6)), rows(&adapt(&cfg, &mut b, 0, 6)));
    assert!(Group::ALL.iter().all(|&g| a.bundle.group_bit_eq(&b.bundle, g)));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.wdgc");

    let mut full = TrainState::new(&cfg).unwrap();
    let whole = rows(&adapt(&cfg, &mut full, 0, 14));

    let mut first = TrainState::new(&cfg).unwrap();
    adapt(&cfg, &mut first, 0, 4);
    first.save(&path).unwrap();
    let mut resumed = TrainState::load(&cfg, &path).unwrap();
    assert_eq!(resumed.iteration, 4);
    let tail = rows(&adapt(&cfg, &mut resumed, 4, 10));
    assert_eq!(tail, whole[4..]);
    assert!(Group::ALL.iter().all(|&g| full.bundle.group_bit_eq(&resumed.bundle, g)));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let cfg = tiny();
    let mut state = TrainState::new(&cfg).unwrap();
    adapt(&cfg, &mut state, 0, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.wdgc");
    state.save(&path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    let orig = state.to_entries();
    assert_eq!(back.len(), orig.len());
    for (name, t) in &orig {
        assert!(back[name].bit_eq(t), "{name}");
    }
}

#[test]
fn missing_parameter_is_reported_by_name() {
    let cfg = tiny();
    let state = TrainState::new(&cfg).unwrap();
    let mut entries = state.to_entries();
    entries.remove("dec_Y/out.weight").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("partial.wdgc");
    checkpoint::save(&path, &entries).unwrap();
    match TrainState::load(&cfg, &path) {
        Err(Error::CheckpointMissing(names)) => assert_eq!(names, vec!["dec_Y/out.weight".to_string()]),
        other => panic!("expected a missing-parameter error, got {other:?}"),
    }
}

#[test]
fn stream_exhaustion_stops_cleanly() {
    let cfg = tiny();
    let mut state = TrainState::new(&cfg).unwrap();
    let mut sx = batch_stream(&cfg, sampler(&cfg, Domain::X, false), 1, 0, 2);
    let mut sy = batch_stream(&cfg, sampler(&cfg, Domain::Y, false), 2, 0, 5);
    let mut n = 0;
    train_adaptation(&cfg, &mut state, &mut *sx, &mut *sy, 5, &mut |_| {
        n += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(n, 2);
    assert_eq!(state.iteration, 2);
}

#[test]
fn segmentation_freezes_encoders_and_zero_steps_change_nothing() {
    let cfg = tiny();
    let mut state = TrainState::new(&cfg).unwrap();
    let before = state.bundle.clone();
    let mut s = batch_stream(&cfg, sampler(&cfg, Domain::X, true), 3, 0, 3);
    let mut src = [SegSource {
        domain: Domain::X,
        stream: &mut *s,
    }];
    train_segmentation(&mut state, &mut src, 0, false, &mut |_| Ok(())).unwrap();
    assert!(Group::ALL.iter().all(|&g| before.group_bit_eq(&state.bundle, g)));

    let mut losses = Vec::new();
    train_segmentation(&mut state, &mut src, 3, false, &mut |l| {
        losses.push(l.loss);
        Ok(())
    })
    .unwrap();
    assert_eq!(losses.len(), 3);
    for g in Group::ALL {
        assert_eq!(before.group_bit_eq(&state.bundle, g), g != Group::SegHead, "{g}");
    }
}

#[test]
fn segmentation_rejects_unlabeled_batches() {
    let cfg = tiny();
    let mut state = TrainState::new(&cfg).unwrap();
    let mut s = batch_stream(&cfg, sampler(&cfg, Domain::X, false), 3, 0, 1);
    let mut src = [SegSource {
        domain: Domain::X,
        stream: &mut *s,
    }];
    assert!(train_segmentation(&mut state, &mut src, 1, false, &mut |_| Ok(())).is_err());
}

#[test]
fn experiment_reports_are_reproducible() {
    let cfg = tiny();
    let a = run_experiment(&cfg, &mut |_| {}).unwrap();
    let b = run_experiment(&cfg, &mut |_| {}).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.folds.iter().filter(|r| r.split == "target").count(), cfg.folds);
    let (mean, std) = a.dice("target");
    assert!((0.0..=1.0).contains(&mean) && std >= 0.0);
    assert!(a.to_csv().contains("\nmean,target,"));
}

#[test]
fn config_validation_rejects_bad_values() {
    for (k, v) in [("learning_rate", "-1"), ("content_disc_period", "0"), ("batch_size", "0")] {
        let mut cfg = tiny();
        cfg.set(k, v).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{k}");
    }
    assert!(matches!(tiny().set("nope", "1"), Err(Error::Config(_))));
}
