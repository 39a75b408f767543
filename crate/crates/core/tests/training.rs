use std::collections::BTreeMap;

use ddcd::data::{synthetic_pairs, BiTemporalSample, SyntheticSpec, TileMode, TileSpec};
use ddcd::metrics::ConfusionCounts;
use ddcd::nn::ParamStore;
use ddcd::predict::predict_scene;
use ddcd::train::{clip_grad_norm, evaluate_with, train_loop, Checkpoint, RunConfig, Sgd, TrainConfig, Trainer};
use ddcd::{BinaryMask, Error, ModelConfig, Tensor};

fn tiny_run(epochs: usize) -> RunConfig {
    RunConfig {
        model: ModelConfig {
            widths: [8, 16, 32, 64],
            decoder_width: 16,
            ..ModelConfig::desk()
        },
        train: TrainConfig {
            epochs,
            batch_size: 2,
            seed: 21,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    }
}

fn pairs(n: usize, size: usize) -> Vec<BiTemporalSample<f32>> {
    let spec = SyntheticSpec {
        size,
        side: (4, 12),
        ..SyntheticSpec::default()
    };
    synthetic_pairs(n, &spec, 4).unwrap()
}

fn one_param(v: f64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.insert_param("p", Tensor::scalar(v));
    s
}

fn grad(v: f64) -> BTreeMap<String, Tensor<f64>> {
    BTreeMap::from([("p".to_string(), Tensor::scalar(v))])
}

#[test]
fn plain_sgd_step_on_quadratic() {
    // L = p², ∇ = 2p
    let mut store = one_param(3.0);
    Sgd::new().step(&mut store, &grad(6.0), 0.1, 0.0, 0.0).unwrap();
    assert_eq!(store.param("p").unwrap().data()[0], 3.0 - 0.1 * 6.0);
}

#[test]
fn weight_decay_is_added_to_gradient_and_momentum_accumulates() {
    let (p, g, wd, lr, mu) = (2.0, 0.5, 0.01, 0.1, 0.9);
    let mut decayed = one_param(p);
    Sgd::new().step(&mut decayed, &grad(g), lr, 0.0, wd).unwrap();
    let mut folded = one_param(p);
    Sgd::new().step(&mut folded, &grad(g + wd * p), lr, 0.0, 0.0).unwrap();
    assert_eq!(decayed, folded);

    let mut store = one_param(1.0);
    let mut opt = Sgd::new();
    opt.step(&mut store, &grad(1.0), lr, mu, 0.0).unwrap();
    opt.step(&mut store, &grad(2.0), lr, mu, 0.0).unwrap();
    let v2 = mu * 1.0 + 2.0;
    assert_eq!(store.param("p").unwrap().data()[0], 1.0 - lr * 1.0 - lr * v2);
    assert!(matches!(
        Sgd::new().step(&mut one_param(0.0), &BTreeMap::from([("q".into(), Tensor::scalar(1.0))]), lr, mu, 0.0),
        Err(Error::Config(_))
    ));
}

#[test]
fn gradient_clipping_caps_global_norm() {
    let mut g = BTreeMap::from([
        ("a".to_string(), Tensor::new([2], vec![3.0f64, 0.0]).unwrap()),
        ("b".to_string(), Tensor::new([1], vec![4.0]).unwrap()),
    ]);
    assert_eq!(clip_grad_norm(&mut g, 10.0), 5.0);
    assert_eq!(g["b"].data()[0], 4.0);
    clip_grad_norm(&mut g, 1.0);
    let norm: f64 = g.values().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-5);
}

#[test]
fn zero_epochs_returns_initial_state() {
    let run = tiny_run(0);
    let out = train_loop::<f32>(&run, &[], &[]).unwrap();
    assert!(out.last.meta.history.epochs.is_empty());
    assert!(out.best.is_none());
    assert_eq!(out.last.params, Trainer::<f32>::new(run).unwrap().params().clone());
}

#[test]
fn same_seed_same_losses() {
    let data = pairs(4, 32);
    let a = train_loop(&tiny_run(3), &data, &[]).unwrap();
    let b = train_loop(&tiny_run(3), &data, &[]).unwrap();
    assert_eq!(a.last.meta.history.step_losses().len(), 6);
    assert_eq!(a.last.meta.history, b.last.meta.history);
    assert_eq!(a.last.params, b.last.params);
    let mut other = tiny_run(3);
    other.train.seed = 22;
    let c = train_loop(&other, &data, &[]).unwrap();
    assert_ne!(a.last.meta.history.step_losses(), c.last.meta.history.step_losses());
}

#[test]
fn checkpoint_roundtrip_and_integrity() {
    let data = pairs(2, 32);
    let out = train_loop(&tiny_run(1), &data, &[]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    out.last.save(&path).unwrap();
    let back = Checkpoint::<f32>::load(&path).unwrap();
    assert_eq!(back, out.last);
    for ((_, a), (_, b)) in back.params.params().zip(out.last.params.params()) {
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }

    let bytes = std::fs::read(&path).unwrap();
    for cut in [10, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes[..cut]), Err(Error::Integrity(_))));
    }
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 3] ^= 0x40;
    assert!(matches!(Checkpoint::<f32>::from_bytes(&flipped), Err(Error::Integrity(_))));
    assert!(matches!(Checkpoint::<f64>::from_bytes(&bytes), Err(Error::Integrity(_))));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = pairs(4, 32);
    let mut straight = Trainer::<f32>::new(tiny_run(3)).unwrap();
    straight.fit(&data, &[]).unwrap();

    let mut first = Trainer::<f32>::new(tiny_run(3)).unwrap();
    first.run_epoch(&data, &[]).unwrap();
    first.run_epoch(&data, &[]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    first.checkpoint().save(&path).unwrap();
    let mut resumed = Trainer::resume(Checkpoint::<f32>::load(&path).unwrap()).unwrap();
    assert_eq!(resumed.epoch(), 2);
    let rec = resumed.run_epoch(&data, &[]).unwrap();
    assert_eq!(rec, straight.history().epochs[2]);
    assert_eq!(resumed.params(), straight.params());
}

#[test]
fn validation_tracks_best_checkpoint() {
    let data = pairs(4, 32);
    let mut t = Trainer::<f32>::new(tiny_run(2)).unwrap();
    t.fit(&data, &data[..2]).unwrap();
    let f1s: Vec<f64> = t.history().epochs.iter().map(|e| e.val.as_ref().unwrap().f1).collect();
    let best = t.best().unwrap();
    let top = f1s.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(best.meta.best_f1, Some(top));
    assert_eq!(t.history().epoch_csv().lines().count(), 3);
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let data = pairs(2, 32);
    let mut ck = Trainer::<f32>::new(tiny_run(1)).unwrap().checkpoint();
    let bias = ck.params.param_mut("decoder.classifier.bias").unwrap();
    *bias = Tensor::full(bias.shape().to_vec(), f32::NAN);
    let mut t = Trainer::resume(ck).unwrap();
    match t.run_epoch(&data, &[]) {
        Err(Error::Diverged { epoch, batch, total, .. }) => {
            assert_eq!((epoch, batch), (0, 0));
            assert!(total.is_nan());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn evaluation_with_stub_predictors() {
    let data = pairs(3, 32);
    let oracle = evaluate_with(&data, 2, |b| Ok(b.iter().map(|s| s.mask.clone()).collect())).unwrap();
    let s = &oracle.scores;
    assert_eq!((s.f1, s.precision, s.recall, s.iou, s.oa), (1.0, 1.0, 1.0, 1.0, 1.0));
    let blind = evaluate_with(&data, 2, |b| Ok(b.iter().map(|_| BinaryMask::zeros(32, 32)).collect())).unwrap();
    assert_eq!(blind.scores.recall, 0.0);
    assert_eq!(blind.counts.tp, 0);
    assert!(evaluate_with::<f32>(&[], 2, |_| Ok(vec![])).is_err());

    let model = Trainer::<f32>::new(tiny_run(0)).unwrap().model();
    assert_eq!(model.evaluate(&data, 2).unwrap(), model.evaluate(&data, 3).unwrap());
    let total: ConfusionCounts = [oracle.counts, blind.counts].into_iter().sum();
    assert_eq!(total.total(), 2 * 3 * 32 * 32);
}

#[test]
fn scene_prediction_stitches_and_crops() {
    let model = Trainer::<f32>::new(tiny_run(0)).unwrap().model();
    let spec = TileSpec::new(64, TileMode::Pad).unwrap();
    let big = &pairs(1, 128)[0];
    let m = predict_scene(&model, &big.t1, &big.t2, &spec, 3).unwrap();
    assert_eq!((m.height(), m.width()), (128, 128));

    let crop = |t: &Tensor<f32>, n: usize| {
        Tensor::from_fn([3, n, n], |i| {
            let (c, r, x) = (i / (n * n), (i / n) % n, i % n);
            t.data()[c * 128 * 128 + r * 128 + x]
        })
    };
    let (a, b) = (crop(&big.t1, 100), crop(&big.t2, 100));
    let m1 = predict_scene(&model, &a, &b, &spec, 4).unwrap();
    assert_eq!((m1.height(), m1.width()), (100, 100));
    assert_eq!(m1, predict_scene(&model, &a, &b, &spec, 1).unwrap());

    // a scene that is exactly one tile equals the direct forward pass
    let small = &pairs(1, 64)[0];
    let direct = model.predict(&[small]).unwrap().remove(0);
    assert_eq!(predict_scene(&model, &small.t1, &small.t2, &spec, 1).unwrap(), direct);
    let odd = TileSpec::new(48, TileMode::Pad).unwrap();
    assert!(predict_scene(&model, &small.t1, &small.t2, &odd, 1).is_err());
}
