//! One line per acceptance criterion. Run with `--nocapture` to see the table.
//!
//! All criteria run inside a single test so their timings are not skewed by
//! the harness running them concurrently.

#![allow(clippy::needless_range_loop, clippy::type_complexity)]

mod common;

use std::time::{Duration, Instant};

use ddcd::autograd::{Tape, Var};
use ddcd::data::{split_dataset, synthetic_pairs, tile_pair, untile_image, untile_mask, BiTemporalSample, SplitSpec, SyntheticSpec, TileGrid, TileMode, TileSpec};
use ddcd::gradcheck::{check_gradients, GradCheckOptions};
use ddcd::loss::{dice_loss, dice_loss_value, focal_loss, focal_loss_value, total_loss, LossConfig, PixelLabels};
use ddcd::metrics::{compute_scores, ConfusionCounts};
use ddcd::model::param_count;
use ddcd::nn::{Binding, Mode, ParamStore};
use ddcd::render::{render_change_map, RenderPalette};
use ddcd::spectral::{dct2_reference, fem_frequency_vector, BasisCache, Fem, FrequencyIndexSet};
use ddcd::train::{Checkpoint, RunConfig, TrainConfig, Trainer};
use ddcd::{BinaryMask, ModelConfig, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

type Verdict = Result<String, String>;

struct Row {
    name: &'static str,
    verdict: Verdict,
    elapsed: Duration,
}

fn run(name: &'static str, f: impl FnOnce() -> Verdict) -> Row {
    let start = Instant::now();
    let verdict = f();
    let row = Row {
        name,
        verdict,
        elapsed: start.elapsed(),
    };
    let (tag, msg) = match &row.verdict {
        Ok(m) => ("PASS", m),
        Err(m) => ("FAIL", m),
    };
    println!("{tag}  {:<22} {:>8.2}s  {msg}", row.name, row.elapsed.as_secs_f64());
    row
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(
        elapsed.as_secs_f64() < limit_s,
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()),
    )
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn dct_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = common::rng(100);
    let cache = BasisCache::new();
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = [1usize, 2, 4][case % 3];
        let c = n * rng.random_range(1..=16 / n);
        let lo = if n == 1 { 1 } else { 2 };
        let h = rng.random_range(lo..=16);
        // base grid equal to the map extent leaves indices unscaled
        let mut cells: Vec<(usize, usize)> = (0..h).flat_map(|u| (0..h).map(move |v| (u, v))).collect();
        cells.shuffle(&mut rng);
        let idx = FrequencyIndexSet::new(h, h, cells[..n].to_vec()).map_err(|e| e.to_string())?;
        let x = Tensor::<f64>::randn([c, h, h], 1.0, &mut rng);
        let f = fem_frequency_vector(&x, &idx, &cache).map_err(|e| e.to_string())?.values;
        let per = c / n;
        for ch in 0..c {
            let (u, v) = idx.indices()[ch / per];
            let spectrum = dct2_reference(&x.data()[ch * h * h..(ch + 1) * h * h], h, h).map_err(|e| e.to_string())?;
            worst = worst.max(rel(f[ch], spectrum[u * h + v]));
        }
    }
    ensure(worst <= 1e-6, format!("max rel err {worst:.2e}"))?;
    within(start.elapsed(), 5.0)?;
    Ok(format!("100 inputs, max rel err {worst:.2e}"))
}

fn gap_degeneracy() -> Verdict {
    let mut rng = common::rng(101);
    let cache = BasisCache::new();
    let idx = FrequencyIndexSet::new(7, 7, vec![(0, 0)]).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (c, h, w) = (rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=16));
        let x = Tensor::<f64>::randn([c, h, w], 1.0, &mut rng);
        let f = fem_frequency_vector(&x, &idx, &cache).map_err(|e| e.to_string())?.values;
        for ch in 0..c {
            let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
            let mean = plane.iter().sum::<f64>() / (h * w) as f64;
            worst = worst.max(rel(f[ch], (h * w) as f64 * mean));
        }
    }
    ensure(worst <= 1e-6, format!("max rel err {worst:.2e}"))?;
    Ok(format!("50 inputs, max rel err {worst:.2e}"))
}

/// Gradient check of `f(data, params)` with the named desk parameters as extra inputs.
fn probe_component(
    store: &ParamStore<f64>,
    data: Vec<Tensor<f64>>,
    names: &[&str],
    f: impl Fn(&mut Tape<f64>, &mut Binding<f64>, &[Var]) -> ddcd::Result<Var>,
    seed: u64,
) -> Result<(usize, f64), String> {
    let k = data.len();
    let mut inputs = data;
    for n in names {
        inputs.push(store.param(n).ok_or(format!("no parameter {n}"))?.clone());
    }
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    let empty = ParamStore::new();
    let report = check_gradients(
        &inputs,
        |tape, vars| {
            let mut bind = Binding::new(&empty, Mode::Train, false);
            for (n, &v) in names.iter().zip(&vars[k..]) {
                bind.preset(*n, v);
            }
            let y = f(tape, &mut bind, &vars[..k])?;
            if tape.value(y).len() == 1 {
                Ok(y)
            } else {
                Ok(common::project(tape, y, seed + 1))
            }
        },
        opts,
    )
    .map_err(|e| e.to_string())?;
    Ok((report.probes.len(), report.max_rel_error()))
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let (net, store) = common::desk64();
    let cache = BasisCache::new();
    let labels = |seed: u64| {
        let mut rng = common::rng(seed);
        PixelLabels::new(Tensor::from_fn([2, 4, 4], |_| rng.random_range(0..2) as f64)).unwrap()
    };
    let cfg = LossConfig::default();
    let mut fem_store = ParamStore::new();
    fem_store.insert_param("fem.gate.weight", common::randn(&[8, 8], 7).scale(0.3));
    fem_store.insert_param("fem.gate.bias", common::randn(&[8], 8).scale(0.3));
    let fem = Fem::new("fem", 8, FrequencyIndexSet::default_order(4, 7, 7).unwrap()).unwrap();

    let y_focal = labels(30);
    let y_dice = labels(31);
    let y_total = labels(32);
    let mut rng = common::rng(33);
    let probs = Tensor::from_fn([2, 4, 4], |_| rng.random_range(0.05..0.95));
    let w_map = Tensor::from_fn([2, 1, 8, 8], |_| rng.random_range(0.05..0.95));

    let components: Vec<(&str, Result<(usize, f64), String>)> = vec![
        (
            "fem",
            probe_component(&fem_store, vec![common::randn(&[2, 8, 5, 5], 1)], &["fem.gate.weight", "fem.gate.bias"],
                |t, b, x| fem.forward(t, b, x[0], &cache), 10),
        ),
        (
            "srm_coarse",
            probe_component(&store, vec![common::randn(&[2, 16, 4, 4], 2), common::randn(&[2, 16, 4, 4], 3)],
                &["srm1.psi.dw.weight", "srm1.psi.pw.weight", "srm1.psi.bn.weight", "srm1.psi.bn.bias"],
                |t, b, x| net.srm_coarse(t, b, 1, x[0], x[1]), 11),
        ),
        (
            "srm_weight",
            probe_component(&store, vec![common::randn(&[2, 16, 6, 6], 4)], &["srm1.phi.weight", "srm1.phi.bias"],
                |t, b, x| net.srm_weight(t, b, 1, x[0]), 12),
        ),
        (
            "srm_refine",
            probe_component(&store, vec![w_map, common::randn(&[2, 128, 2, 2], 5), common::randn(&[2, 64, 4, 4], 6)],
                &["srm2.gate_proj.weight", "srm2.next_proj.weight"],
                |t, b, x| net.srm_refine(t, b, 2, x[0], x[1], x[2]), 13),
        ),
        (
            "decoder",
            probe_component(&store,
                vec![common::randn(&[2, 16, 8, 8], 20), common::randn(&[2, 32, 4, 4], 21), common::randn(&[2, 64, 2, 2], 22), common::randn(&[2, 128, 1, 1], 23)],
                &["decoder.fuse.conv.weight", "decoder.fuse.bn.weight", "decoder.fuse.bn.bias", "decoder.classifier.weight", "decoder.classifier.bias"],
                |t, b, x| net.decode(t, b, x, 32, 32), 14),
        ),
        (
            "focal",
            probe_component(&store, vec![probs], &[], |t, _, x| focal_loss(t, x[0], &y_focal, &cfg), 15),
        ),
        (
            "dice",
            probe_component(&store, vec![common::randn(&[2, 2, 4, 4], 24)], &[], |t, _, x| dice_loss(t, x[0], &y_dice, &cfg), 16),
        ),
        (
            "total",
            probe_component(&store, vec![common::randn(&[2, 2, 4, 4], 25)], &[], |t, _, x| Ok(total_loss(t, x[0], &y_total, &cfg)?.total), 17),
        ),
    ];
    let mut parts = Vec::new();
    let mut worst = 0.0f64;
    for (name, r) in components {
        let (probes, err) = r.map_err(|e| format!("{name}: {e}"))?;
        ensure(probes >= 20, format!("{name}: only {probes} probes"))?;
        ensure(err <= 1e-4, format!("{name}: rel err {err:.2e}"))?;
        worst = worst.max(err);
        parts.push(format!("{name} {probes}"));
    }
    within(start.elapsed(), 60.0)?;
    Ok(format!("max rel err {worst:.2e}; probes: {}", parts.join(", ")))
}

fn loss_identities() -> Verdict {
    let mut rng = common::rng(102);
    let probs = Tensor::from_fn([2, 8, 8], |_| rng.random_range(0.01..0.99));
    let y = PixelLabels::new(Tensor::from_fn([2, 8, 8], |_| rng.random_range(0..2) as f64)).map_err(|e| e.to_string())?;
    let ce_cfg = LossConfig {
        alpha: 1.0,
        gamma: 0.0,
        ..LossConfig::default()
    };
    let focal = focal_loss_value(&probs, &y, &ce_cfg).map_err(|e| e.to_string())?;
    let ce = probs
        .data()
        .iter()
        .zip(y.tensor().data())
        .map(|(&p, &t)| -(t * p.ln() + (1.0 - t) * (1.0 - p).ln()))
        .sum::<f64>()
        / probs.len() as f64;
    ensure((focal - ce).abs() <= 1e-12, format!("focal(γ=0, α=1) - CE = {:.2e}", focal - ce))?;

    let one = PixelLabels::new(Tensor::full([1, 1, 1], 1.0)).unwrap();
    let f: f64 = focal_loss_value(&Tensor::full([1, 1, 1], 0.5), &one, &LossConfig::default()).unwrap();
    ensure((f - 0.0346574).abs() <= 1e-6, format!("focal(0.5) = {f}"))?;

    let ones = PixelLabels::new(Tensor::full([1, 64, 64], 1.0)).unwrap();
    let d: f64 = dice_loss_value(&Tensor::zeros([1, 2, 64, 64]), &ones, &LossConfig::default()).unwrap();
    ensure((d - 1.0 / 3.0).abs() <= 1e-3, format!("dice = {d}"))?;
    Ok(format!("CE gap {:.1e}, focal(0.5) {f:.7}, dice {d:.6}", (focal - ce).abs()))
}

fn metrics_oracle() -> Verdict {
    let mut rng = common::rng(103);
    let mut worst_identity = 0.0f64;
    for _ in 0..50 {
        let (h, w) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let density = rng.random_range(0.0..1.0);
        let mut draw = || BinaryMask::new(h, w, (0..h * w).map(|_| rng.random_bool(density)).collect()).unwrap();
        let (pred, gt) = (draw(), draw());
        let mut t = [0u64; 4];
        for r in 0..h {
            for c in 0..w {
                t[match (pred.get(r, c), gt.get(r, c)) {
                    (true, true) => 0,
                    (true, false) => 1,
                    (false, true) => 2,
                    (false, false) => 3,
                }] += 1;
            }
        }
        let counts = ddcd::metrics::confusion_counts(&pred, &gt).map_err(|e| e.to_string())?;
        ensure(counts == ConfusionCounts { tp: t[0], fp: t[1], fn_: t[2], tn: t[3] }, format!("counts {counts:?} vs {t:?}"))?;
        let s = compute_scores(&counts).map_err(|e| e.to_string())?;
        let [tp, fp, fn_, tn] = t.map(|v| v as f64);
        let ratio = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
        let expect = [
            ratio(2.0 * tp, 2.0 * tp + fp + fn_),
            ratio(tp, tp + fp),
            ratio(tp, tp + fn_),
            ratio(tp, tp + fp + fn_),
            (tp + tn) / (tp + fp + fn_ + tn),
        ];
        ensure([s.f1, s.precision, s.recall, s.iou, s.oa] == expect, format!("scores {s:?} vs {expect:?}"))?;
        worst_identity = worst_identity.max((s.iou - s.f1 / (2.0 - s.f1)).abs());
    }
    // exact in rationals; the float residual is accumulated rounding only
    ensure(worst_identity <= 1e-15, format!("IoU identity residual {worst_identity:.2e}"))?;
    Ok(format!("50 pairs exact, IoU identity residual {worst_identity:.1e}"))
}

fn tiling_arithmetic() -> Verdict {
    let spec = TileSpec::new(256, TileMode::Pad).map_err(|e| e.to_string())?;
    let tiles = TileGrid::new(32507, 15354, &spec).map_err(|e| e.to_string())?.count();
    ensure(tiles == 7620, format!("{tiles} tiles"))?;
    let s = split_dataset(tiles, &SplitSpec { ratios: [0.8, 0.1, 0.1], seed: 0 }).map_err(|e| e.to_string())?;
    let sizes = (s.train.len(), s.val.len(), s.test.len());
    ensure(sizes == (6096, 762, 762), format!("split {sizes:?}"))?;

    let mut rng = common::rng(104);
    let (h, w) = (301, 257);
    let img = Tensor::<f32>::uniform([3, h, w], 0.0, 1.0, &mut rng);
    let mask = BinaryMask::new(h, w, (0..h * w).map(|_| rng.random_bool(0.3)).collect()).unwrap();
    let sample = BiTemporalSample::new(img.clone(), img.scale(0.5), mask.clone()).map_err(|e| e.to_string())?;
    let small = TileSpec::new(64, TileMode::Pad).unwrap();
    let grid = TileGrid::new(h, w, &small).unwrap();
    let parts = tile_pair(&sample, &small).map_err(|e| e.to_string())?;
    let t1: Vec<_> = parts.iter().map(|p| p.t1.clone()).collect();
    let t2: Vec<_> = parts.iter().map(|p| p.t2.clone()).collect();
    let ms: Vec<_> = parts.iter().map(|p| p.mask.clone()).collect();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure(bits(&untile_image(&t1, &grid).unwrap()) == bits(&img), "t1 reconstruction differs")?;
    ensure(bits(&untile_image(&t2, &grid).unwrap()) == bits(&sample.t2), "t2 reconstruction differs")?;
    ensure(untile_mask(&ms, &grid).unwrap() == mask, "mask reconstruction differs")?;
    Ok(format!("{tiles} tiles, split {sizes:?}, {}x{} roundtrip bit-exact", h, w))
}

fn probe_data() -> Vec<BiTemporalSample<f32>> {
    synthetic_pairs(8, &SyntheticSpec::default(), 7).unwrap()
}

fn probe_run(model: ModelConfig, steps: usize) -> RunConfig {
    RunConfig {
        model,
        train: TrainConfig {
            epochs: steps,
            augment: false,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

/// Trains on the probe pairs and returns `(train F1, step losses)`.
fn overfit(model: ModelConfig, steps: usize) -> Result<(f64, Vec<f64>), String> {
    let data = probe_data();
    let mut t = Trainer::<f32>::new(probe_run(model, steps)).map_err(|e| e.to_string())?;
    t.fit(&data, &[]).map_err(|e| e.to_string())?;
    let f1 = t.model().evaluate(&data, 8).map_err(|e| e.to_string())?.scores.f1;
    Ok((f1, t.history().step_losses()))
}

fn overfit_probe() -> Verdict {
    let start = Instant::now();
    let (f1, losses) = overfit(ModelConfig::desk(), 300)?;
    ensure(losses.len() >= 200, format!("{} steps", losses.len()))?;
    ensure(losses.iter().all(|l| l.is_finite()), "non-finite loss")?;
    let (head, tail) = (median(&losses[..50]), median(&losses[losses.len() - 50..]));
    ensure(tail <= head, format!("loss median rose {head:.4} -> {tail:.4}"))?;
    ensure(f1 >= 0.95, format!("train F1 {f1:.4}"))?;
    within(start.elapsed(), 300.0)?;
    Ok(format!("{} steps, train F1 {f1:.4}, loss median {head:.3} -> {tail:.3}", losses.len()))
}

fn ablation() -> Verdict {
    let mut table = vec![format!("{:>4} {:>10} {:>10} {:>8} {:>8}", "n", "params", "last loss", "F1", "secs")];
    for n in [4, 8, 16, 32] {
        let start = Instant::now();
        let model = ModelConfig {
            widths: [32, 64, 128, 256],
            ..ModelConfig::desk()
        }
        .with_components(n);
        let params = param_count(&model).map_err(|e| e.to_string())?;
        let (f1, losses) = overfit(model, 200)?;
        let last = *losses.last().ok_or("no steps")?;
        ensure(last.is_finite(), format!("n={n}: non-finite loss"))?;
        table.push(format!("{n:>4} {params:>10} {last:>10.4} {f1:>8.4} {:>8.1}", start.elapsed().as_secs_f64()));
    }
    for line in &table {
        println!("      {line}");
    }
    Ok("n in {4, 8, 16, 32}, 200 steps each; no ordering asserted".into())
}

fn parameter_budget() -> Verdict {
    let count = param_count(&ModelConfig::default()).map_err(|e| e.to_string())?;
    let (lo, hi) = (12.67e6 * 0.8, 12.67e6 * 1.2);
    ensure((lo..=hi).contains(&(count as f64)), format!("{count} outside [{lo}, {hi}]"))?;
    Ok(format!("{count} parameters ({:.2}M)", count as f64 / 1e6))
}

fn determinism() -> Verdict {
    let data = probe_data();
    let run = RunConfig {
        model: ModelConfig::desk(),
        train: TrainConfig {
            epochs: 5,
            batch_size: 2,
            seed: 9,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    };
    let losses = || -> Result<Vec<u64>, String> {
        let mut t = Trainer::<f32>::new(run.clone()).map_err(|e| e.to_string())?;
        t.fit(&data, &[]).map_err(|e| e.to_string())?;
        Ok(t.history().step_losses().iter().map(|l| l.to_bits()).collect())
    };
    let (a, b) = (losses()?, losses()?);
    ensure(a.len() == 20, format!("{} steps", a.len()))?;
    ensure(a == b, "loss sequences differ")?;

    let mut straight = Trainer::<f32>::new(run.clone()).map_err(|e| e.to_string())?;
    for _ in 0..3 {
        straight.run_epoch(&data, &[]).map_err(|e| e.to_string())?;
    }
    let mut first = Trainer::<f32>::new(run.clone()).map_err(|e| e.to_string())?;
    for _ in 0..2 {
        first.run_epoch(&data, &[]).map_err(|e| e.to_string())?;
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("mid.ckpt");
    first.checkpoint().save(&path).map_err(|e| e.to_string())?;
    let ckpt = Checkpoint::<f32>::load(&path).map_err(|e| e.to_string())?;
    let mut resumed = Trainer::resume(ckpt).map_err(|e| e.to_string())?;
    let next = resumed.run_epoch(&data, &[]).map_err(|e| e.to_string())?;
    let expect = &straight.history().epochs[2];
    ensure(next.train_loss.to_bits() == expect.train_loss.to_bits(), format!("resumed loss {} vs {}", next.train_loss, expect.train_loss))?;
    ensure(resumed.params() == straight.params(), "resumed parameters differ")?;
    Ok(format!("20 steps bit-identical twice; resumed epoch loss {:.6} matches", next.train_loss))
}

fn rendering() -> Verdict {
    let palette = RenderPalette::default();
    let color = |pred: bool, gt: bool| match (pred, gt) {
        (true, true) => [255, 255, 255],
        (false, false) => [0, 0, 0],
        (true, false) => [255, 0, 0],
        (false, true) => [0, 255, 0],
    };
    let mask = |bits: usize| BinaryMask::new(2, 2, (0..4).map(|k| bits >> k & 1 == 1).collect()).unwrap();
    for p in 0..16 {
        for g in 0..16 {
            let (pm, gm) = (mask(p), mask(g));
            let img = render_change_map(&pm, &gm, &palette).map_err(|e| e.to_string())?;
            for k in 0..4 {
                let (r, c) = (k / 2, k % 2);
                let got = img.get_pixel(c as u32, r as u32).0;
                let want = color(pm.get(r, c), gm.get(r, c));
                ensure(got == want, format!("pred {p:04b} gt {g:04b} pixel {k}: {got:?} vs {want:?}"))?;
            }
        }
    }
    Ok("256 mask pairs, TP white, TN black, FP red, FN green".into())
}

#[test]
fn acceptance() {
    let rows = [
        run("dct_oracle", dct_oracle),
        run("gap_degeneracy", gap_degeneracy),
        run("gradient_suite", gradient_suite),
        run("loss_identities", loss_identities),
        run("metrics_oracle", metrics_oracle),
        run("tiling_arithmetic", tiling_arithmetic),
        run("overfit_probe", overfit_probe),
        run("frequency_ablation", ablation),
        run("parameter_budget", parameter_budget),
        run("determinism", determinism),
        run("rendering", rendering),
    ];
    let failed: Vec<_> = rows.iter().filter(|r| r.verdict.is_err()).map(|r| r.name).collect();
    println!("{} of {} criteria pass", rows.len() - failed.len(), rows.len());
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
