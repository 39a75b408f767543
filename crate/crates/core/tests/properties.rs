mod common;

use ddcd::autograd::Tape;
use ddcd::data::{split_dataset, tile_pair, untile_image, untile_mask, BiTemporalSample, Dihedral, SplitSpec, TileGrid, TileMode, TileSpec};
use ddcd::loss::{dice_loss_value, focal_loss_value, LossConfig, PixelLabels};
use ddcd::metrics::{compute_scores, confusion_counts, ConfusionCounts};
use ddcd::nn::{Binding, Mode};
use ddcd::spectral::{fem_frequency_vector, BasisCache, FrequencyIndexSet};
use ddcd::train::{lr_at, TrainConfig};
use ddcd::{BinaryMask, Tensor};
use proptest::prelude::*;

fn mask_strategy(h: usize, w: usize) -> impl Strategy<Value = BinaryMask> {
    prop::collection::vec(any::<bool>(), h * w).prop_map(move |d| BinaryMask::new(h, w, d).unwrap())
}

fn ramp(ch: usize, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn([ch, h, w], |i| i as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permuting_parts_permutes_frequency_blocks(
        n in prop::sample::select(vec![1usize, 2, 4]),
        per in 1usize..4,
        hw in 2usize..10,
        seed in any::<u64>(),
        perm_seed in any::<u64>(),
    ) {
        let c = n * per;
        let idx = FrequencyIndexSet::default_order(n, 7, 7).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut common::rng(perm_seed));
        let x = common::randn(&[c, hw, hw], seed);
        // block k of the permuted input is block perm[k] of x
        let plane = hw * hw;
        let xp = Tensor::from_fn([c, hw, hw], |i| {
            let (ch, off) = (i / plane, i % plane);
            let (k, within) = (ch / per, ch % per);
            x.data()[(perm[k] * per + within) * plane + off]
        });
        let cache = BasisCache::new();
        let f = fem_frequency_vector(&x, &idx, &cache).unwrap().values;
        let fp = fem_frequency_vector(&xp, &idx.permuted(&perm).unwrap(), &cache).unwrap().values;
        for k in 0..n {
            for j in 0..per {
                prop_assert!((fp[k * per + j] - f[perm[k] * per + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dice_stays_in_unit_interval(
        logits in prop::collection::vec(-20.0f64..20.0, 2 * 2 * 16),
        labels in prop::collection::vec(0u8..2, 2 * 16),
    ) {
        let l = Tensor::new([2, 2, 4, 4], logits).unwrap();
        let y = PixelLabels::new(Tensor::new([2, 4, 4], labels.iter().map(|&v| v as f64).collect()).unwrap()).unwrap();
        let d = dice_loss_value(&l, &y, &LossConfig::default()).unwrap();
        prop_assert!((0.0..1.0).contains(&d), "dice {d}");
    }

    #[test]
    fn focal_decreases_as_true_class_probability_rises(
        a in 1e-6f64..(1.0 - 1e-6),
        b in 1e-6f64..(1.0 - 1e-6),
        changed in any::<bool>(),
    ) {
        prop_assume!((a - b).abs() > 1e-9);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let y = PixelLabels::new(Tensor::new([1, 1, 1], vec![changed as u8 as f64]).unwrap()).unwrap();
        let cfg = LossConfig::default();
        // p̂ is p on changed pixels and 1 - p elsewhere
        let at = |p_hat: f64| {
            let p = if changed { p_hat } else { 1.0 - p_hat };
            focal_loss_value(&Tensor::new([1, 1, 1], vec![p]).unwrap(), &y, &cfg).unwrap()
        };
        prop_assert!(at(lo) >= at(hi));
        prop_assert!(at(hi) >= 0.0);
    }

    #[test]
    fn split_is_a_disjoint_cover(n in 1usize..400, seed in any::<u64>()) {
        let s = split_dataset(n, &SplitSpec { ratios: [0.8, 0.1, 0.1], seed }).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(s.val.len(), (0.1 * n as f64 + 1e-9).floor() as usize);
    }

    #[test]
    fn dihedral_group_closure(i in 0usize..8, j in 0usize..8, h in 1usize..7) {
        let (a, b) = (Dihedral::from_index(i), Dihedral::from_index(j));
        let img = ramp(2, h, h);
        let composed = a.then(b);
        prop_assert!(Dihedral::all().contains(&composed));
        prop_assert_eq!(b.apply_image(&a.apply_image(&img)), composed.apply_image(&img));
    }

    #[test]
    fn transforms_move_images_and_mask_together(i in 0usize..8, h in 1usize..9, w in 1usize..9, m in mask_strategy(8, 8)) {
        let g = Dihedral::from_index(i);
        let g = if h == w { g } else { g.flip_only() };
        let mask = BinaryMask::new(h, w, m.data()[..h * w].to_vec()).unwrap();
        // each pixel's mask bit is encoded in the parity of its image value
        let tag = Tensor::from_fn([3, h, w], |k| (k * 2 + mask.data()[k % (h * w)] as usize) as f64);
        let s = BiTemporalSample::new(tag.clone(), tag.scale(3.0), mask).unwrap();
        let t = g.apply(&s);
        prop_assert_eq!(&t.t2, &t.t1.scale(3.0));
        let plane = t.mask.height() * t.mask.width();
        for (k, &v) in t.t1.data().iter().enumerate() {
            prop_assert_eq!(t.mask.data()[k % plane], (v as usize) % 2 == 1);
        }
    }

    #[test]
    fn accumulation_ignores_order(
        masks in prop::collection::vec((mask_strategy(5, 6), mask_strategy(5, 6)), 1..8),
        seed in any::<u64>(),
    ) {
        let forward: ConfusionCounts = masks.iter().map(|(p, g)| confusion_counts(p, g).unwrap()).sum();
        let mut order: Vec<usize> = (0..masks.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut common::rng(seed));
        let mut shuffled = ConfusionCounts::default();
        for k in order {
            shuffled.accumulate(&masks[k].0, &masks[k].1).unwrap();
        }
        prop_assert_eq!(forward, shuffled);
        prop_assert_eq!(forward.total(), 30 * masks.len() as u64);
    }

    #[test]
    fn iou_follows_from_f1(tp in 0u64..10_000, fp in 0u64..10_000, fn_ in 0u64..10_000, tn in 0u64..10_000) {
        let c = ConfusionCounts { tp, fp, fn_, tn };
        prop_assume!(c.total() > 0);
        let s = compute_scores(&c).unwrap();
        prop_assert!((s.iou - s.f1 / (2.0 - s.f1)).abs() < 1e-12);
        for v in [s.f1, s.precision, s.recall, s.iou, s.oa] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn spatial_weight_is_open_unit_interval(scale in 1usize..4, seed in any::<u64>(), amp in 0.1f64..3.0) {
        let (net, store) = common::desk64();
        let c = net.config().widths[scale - 1];
        let mut tape = Tape::new();
        let mut bind = Binding::new(&store, Mode::Eval, false);
        let zc = tape.constant(common::randn(&[1, c, 4, 4], seed).scale(amp));
        let w = net.srm_weight(&mut tape, &mut bind, scale, zc).unwrap();
        prop_assert_eq!(tape.value(w).shape(), &[1, 1, 4, 4]);
        prop_assert!(tape.value(w).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn tiling_reconstructs_under_padding(h in 1usize..70, w in 1usize..70, tile in 1usize..40, m in mask_strategy(70, 70)) {
        let img = ramp(3, h, w);
        let mask = BinaryMask::new(h, w, m.data()[..h * w].to_vec()).unwrap();
        let s = BiTemporalSample::new(img.clone(), img.scale(2.0), mask.clone()).unwrap();
        let spec = TileSpec::new(tile, TileMode::Pad).unwrap();
        let grid = TileGrid::new(h, w, &spec).unwrap();
        let tiles = tile_pair(&s, &spec).unwrap();
        prop_assert_eq!(tiles.len(), h.div_ceil(tile) * w.div_ceil(tile));
        let t1: Vec<_> = tiles.iter().map(|t| t.t1.clone()).collect();
        let ms: Vec<_> = tiles.iter().map(|t| t.mask.clone()).collect();
        prop_assert_eq!(untile_image(&t1, &grid).unwrap(), img);
        prop_assert_eq!(untile_mask(&ms, &grid).unwrap(), mask);
    }

    #[test]
    fn learning_rate_never_increases(epochs in 1usize..300, e in 0usize..300) {
        let cfg = TrainConfig { epochs, ..TrainConfig::default() };
        prop_assert!(lr_at(e + 1, &cfg) <= lr_at(e, &cfg));
        prop_assert!(lr_at(e, &cfg) > 0.0);
    }
}
