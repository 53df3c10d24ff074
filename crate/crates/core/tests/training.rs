mod common;

use gazetrack::data::{synth_generate, FrameSample, SynthConfig};
use gazetrack::evaluation::{evaluate, EvalOptions};
use gazetrack::model::{ArchitectureConfig, ModelConfig, StudentConfig};
use gazetrack::optim::sgd_step;
use gazetrack::params::Bindings;
use gazetrack::training::{
    distill, euclidean_loss, fine_tune, orthogonal_init, trace_csv, train, DistillConfig, FineTuneRegistry,
    TrainConfig,
};
use gazetrack::{Error, Graph, ModelParams, Orientation, Tensor};

fn desk() -> ModelConfig {
    ModelConfig::ITracker(ArchitectureConfig::desk())
}

fn student() -> ModelConfig {
    ModelConfig::Student(StudentConfig::desk())
}

fn short(iterations: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        iterations,
        lr_drop_iteration: iterations * 3 / 4,
        seed,
        ..TrainConfig::desk()
    }
}

#[test]
fn euclidean_loss_examples() {
    let p = Tensor::new(&[1, 2], vec![3.0, 4.0]).unwrap();
    assert_eq!(euclidean_loss(&p, &Tensor::zeros(&[1, 2])).unwrap(), 12.5);
    let q = Tensor::from_fn(&[5, 2], |i| i as f32 * 0.3 - 1.0);
    assert_eq!(euclidean_loss(&q, &q).unwrap(), 0.0);
    assert!(euclidean_loss(&q, &p).is_err());
}

#[test]
fn paper_schedule_defaults() {
    let c = TrainConfig::paper();
    assert_eq!((c.iterations, c.batch_size, c.lr_drop_iteration), (150_000, 256, 75_000));
    assert_eq!((c.lr_initial, c.lr_after_drop), (0.001, 0.0001));
    assert_eq!((c.momentum, c.weight_decay), (0.9, 0.0005));
    assert_eq!(c.lr_at(74_999), 0.001);
    assert_eq!(c.lr_at(75_000), 0.0001);
    let d = TrainConfig::desk();
    assert_eq!(d.lr_at(d.lr_drop_iteration - 1), d.lr_initial);
    assert_eq!(d.lr_at(d.lr_drop_iteration), d.lr_after_drop);
    let bad = TrainConfig { lr_drop_iteration: 10, iterations: 5, ..d };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}

#[test]
fn binding_ignores_stale_parameter_gradients() {
    let (_, frames) = common::corpus(1, 0, 2, 2, 3, |_| {});
    let mc = desk();
    let clean = mc.build(1).unwrap();
    let mut stale = clean.clone();
    for (_, t) in stale.iter_mut() {
        let junk = vec![5.0; t.numel()];
        t.accumulate_grad(&junk);
    }
    let grads = |p: &ModelParams| {
        let mut g = Graph::new();
        let mut b = Bindings::new();
        let batch = mc.batch(&common::refs(&frames)).unwrap();
        let out = mc.forward_graph(p, &mut g, &batch, &mut b).unwrap();
        let t = g.constant(batch.targets);
        let loss = g.euclidean_loss(out.pred, t).unwrap();
        g.backward(loss).unwrap();
        b.iter().map(|(_, v)| g.grad(v).unwrap().to_vec()).collect::<Vec<_>>()
    };
    assert_eq!(grads(&clean), grads(&stale));
}

#[test]
fn weight_decay_shrinks_parameters_geometrically() {
    let (lr, wd) = (0.1f32, 0.05f32);
    let mut p = ModelParams::new();
    p.insert("w", Tensor::from_fn(&[6], |i| i as f32 - 2.5).with_requires_grad()).unwrap();
    let start = p.get("w").unwrap().data().to_vec();
    let zero_grad = |p: &mut ModelParams| {
        p.zero_grads();
        p.get_mut("w").unwrap().accumulate_grad(&[0.0; 6]);
    };
    for step in 1..=20 {
        zero_grad(&mut p);
        sgd_step(&mut p, lr, 0.0, wd).unwrap();
        let f = (1.0 - lr as f64 * wd as f64).powi(step);
        for (v, s) in p.get("w").unwrap().data().iter().zip(&start) {
            assert!((*v as f64 - *s as f64 * f).abs() < 1e-5);
        }
    }

    // With momentum the same decay follows the two-term recurrence
    // x' = x − lr·v', v' = m·v + wd·x.
    let m = 0.9f64;
    let mut q = ModelParams::new();
    q.insert("w", Tensor::full(&[1], 2.0).with_requires_grad()).unwrap();
    let (mut x, mut v) = (2.0f64, 0.0f64);
    for _ in 0..50 {
        q.zero_grads();
        q.get_mut("w").unwrap().accumulate_grad(&[0.0]);
        sgd_step(&mut q, lr, m as f32, wd).unwrap();
        v = m * v + wd as f64 * x;
        x -= lr as f64 * v;
        assert!((q.get("w").unwrap().data()[0] as f64 - x).abs() < 1e-5);
    }
    assert!(x.abs() < 2.0);
}

#[test]
fn traces_are_bit_deterministic() {
    let (_, frames) = common::corpus(3, 0, 14, 2, 5, |_| {});
    let run = |augment: bool| {
        let cfg = TrainConfig { augment_train: augment, trace_every: 1, ..short(30, 9) };
        let o = train(&desk(), desk().build(9).unwrap(), &frames, &cfg).unwrap();
        (o.trace, o.params.checksum())
    };
    let (a, ca) = run(false);
    let (b, cb) = run(false);
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    assert_eq!(a.len(), 30);
    assert_eq!(a[21].lr, 0.001);
    assert_eq!(a[22].lr, 0.0001);
    let csv = trace_csv(&a);
    assert!(csv.starts_with("step,lr,loss\n0,0.001,"));
    assert_eq!(csv.lines().count(), 31);
    let (c, _) = run(true);
    assert_eq!(c, run(true).0);
    assert_ne!(c, a);
}

#[test]
fn nan_loss_aborts_naming_the_step() {
    let (_, frames) = common::corpus(1, 0, 3, 2, 5, |_| {});
    let mut p = desk().build(1).unwrap();
    p.get_mut("fc2.bias").unwrap().data_mut()[0] = f32::NAN;
    match train(&desk(), p, &frames, &short(4, 1)) {
        Err(Error::NonFinite { step, .. }) => assert_eq!(step, 0),
        other => panic!("expected a non-finite error, got {other:?}"),
    }
    let e = train(&desk(), desk().build(1).unwrap(), &[], &short(4, 1)).unwrap_err();
    assert!(matches!(e, Error::Contract(_)));
}

#[test]
fn desk_training_cuts_the_loss_below_a_quarter() {
    let (_, frames) = common::corpus(20, 0, 20, 5, 2, |_| {});
    assert_eq!(frames.len(), 2000);
    let cfg = TrainConfig { seed: 2, ..TrainConfig::desk() };
    let out = train(&desk(), desk().build(2).unwrap(), &frames, &cfg).unwrap();
    let first = out.trace[0].loss;
    let tail: Vec<f32> = out.trace.iter().rev().take(10).map(|r| r.loss).collect();
    let end = tail.iter().sum::<f32>() / tail.len() as f32;
    assert!(end < 0.25 * first, "final loss {end} vs initial {first}");
}

#[test]
fn zero_iteration_fine_tune_is_identity() {
    let (_, frames) = common::corpus(1, 0, 3, 2, 5, |_| {});
    let p = desk().build(3).unwrap();
    let cfg = TrainConfig { iterations: 0, lr_drop_iteration: 0, ..TrainConfig::desk() };
    let out = fine_tune(&desk(), p.clone(), &frames, &cfg).unwrap();
    assert_eq!(out.params.checksum(), p.checksum());
    assert!(out.trace.is_empty());
}

fn device_corpus(device: &str, n: u32, first: u32, seed: u64) -> Vec<FrameSample> {
    let mut cfg = SynthConfig::desk();
    cfg.n_subjects = n;
    cfg.first_subject = first;
    cfg.dots_per_session = 20;
    cfg.frames_per_dot = 3;
    let dev = common::devices().get(device).unwrap().clone();
    synth_generate(&cfg, &dev, Orientation::Portrait, seed).unwrap().1
}

#[test]
fn fine_tune_rejects_mixed_devices_and_registry_falls_back() {
    let mut mixed = device_corpus("synthPhone", 1, 0, 1);
    mixed.extend(device_corpus("synthTablet", 1, 1, 1));
    let e = fine_tune(&desk(), desk().build(0).unwrap(), &mixed, &short(2, 0)).unwrap_err();
    assert!(matches!(e, Error::Contract(_)), "{e}");

    let generic = desk().build(0).unwrap();
    let tuned = desk().build(1).unwrap();
    let mut reg = FineTuneRegistry::new(generic.clone());
    reg.register("synthTablet", Orientation::Portrait, tuned.clone());
    assert_eq!(reg.lookup("synthTablet", Orientation::Portrait).checksum(), tuned.checksum());
    assert_eq!(reg.lookup("synthTablet", Orientation::LandscapeLeft).checksum(), generic.checksum());
    assert_eq!(reg.lookup("synthPhone", Orientation::Portrait).checksum(), generic.checksum());
}

#[test]
fn per_device_fine_tuning_does_not_hurt_that_device() {
    let devices = common::devices();
    let mut errors = Vec::new();
    for seed in [1u64, 2, 3] {
        let mut train_set = device_corpus("synthPhone", 8, 0, seed);
        let tablet = device_corpus("synthTablet", 8, 100, seed);
        train_set.extend(tablet.iter().cloned());
        let val = device_corpus("synthTablet", 3, 200, seed);
        let cfg = short(800, seed);
        let generic = train(&desk(), desk().build(seed).unwrap(), &train_set, &cfg).unwrap().params;
        let tuned = fine_tune(&desk(), generic.clone(), &tablet, &TrainConfig { iterations: 300, lr_drop_iteration: 0, ..cfg })
            .unwrap()
            .params;
        let score = |p: &ModelParams| {
            evaluate(&desk(), p, &common::refs(&val), &devices, &EvalOptions::default()).unwrap().overall.error_cm
        };
        errors.push((score(&generic), score(&tuned)));
    }
    let before = common::median(errors.iter().map(|e| e.0).collect());
    let after = common::median(errors.iter().map(|e| e.1).collect());
    assert!(after <= before * 1.02, "tuned {after} vs generic {before} ({errors:?})");
}

#[test]
fn distillation_without_teacher_terms_is_plain_training() {
    let (_, frames) = common::corpus(2, 0, 14, 2, 6, |_| {});
    let teacher = desk().build(4).unwrap();
    let before = teacher.checksum();
    let cfg = short(25, 4);
    let plain = train(&student(), student().build(4).unwrap(), &frames, &cfg).unwrap();
    let weights = DistillConfig { alpha: 1.0, beta: 0.0, gamma: 0.0 };
    let d = distill(&student(), student().build(4).unwrap(), &desk(), &teacher, &frames, &weights, &cfg).unwrap();
    assert_eq!(plain.trace, d.trace);
    assert_eq!(plain.params.checksum(), d.student.checksum());
    assert_eq!(d.projection.dims(), &[desk().feature_width(), student().feature_width()]);

    let full = distill(&student(), student().build(4).unwrap(), &desk(), &teacher, &frames, &DistillConfig::default(), &cfg)
        .unwrap();
    assert_eq!(teacher.checksum(), before);
    assert_ne!(full.trace, plain.trace);
    assert!(!full.student.contains(gazetrack::training::PROJECTION));
    assert!(matches!(DistillConfig { alpha: 0.0, beta: 0.0, gamma: 0.0 }.validate(), Err(Error::Config(_))));
}

#[test]
fn perfect_teacher_makes_the_prediction_term_a_copy_of_ground_truth() {
    // One dot: a zero network whose fc2 bias equals the target predicts it exactly.
    let (_, frames) = common::corpus(1, 0, 1, 6, 6, |_| {});
    let mut teacher = desk().build(0).unwrap();
    for (_, t) in teacher.iter_mut() {
        t.data_mut().fill(0.0);
    }
    teacher.get_mut("fc2.bias").unwrap().data_mut().copy_from_slice(&frames[0].target_cm_f32());
    let cfg = short(12, 8);
    let run = |alpha, beta| {
        let w = DistillConfig { alpha, beta, gamma: 0.0 };
        distill(&student(), student().build(8).unwrap(), &desk(), &teacher, &frames, &w, &cfg).unwrap()
    };
    let (a, b) = (run(1.0, 0.0), run(0.0, 1.0));
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.student.checksum(), b.student.checksum());
    let (c, d) = (run(2.0, 0.0), run(1.0, 1.0));
    assert_eq!(c.trace[0].loss, d.trace[0].loss);
}

#[test]
fn orthogonal_projection_has_orthonormal_columns() {
    let w = orthogonal_init(32, 16, 3);
    for a in 0..16 {
        for b in 0..16 {
            let dot: f32 = (0..32).map(|r| w.data()[r * 16 + a] * w.data()[r * 16 + b]).sum();
            let want = if a == b { 1.0 } else { 0.0 };
            assert!((dot - want).abs() < 1e-4);
        }
    }
}
