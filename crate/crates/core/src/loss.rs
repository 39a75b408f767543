//! Focal + dice objective for the imbalanced changed/unchanged split.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub dice_smooth: f64,
    pub reduction: Reduction,
    /// Weight changed pixels by `alpha` and unchanged by `1 - alpha`
    /// instead of applying `alpha` uniformly.
    pub class_balanced_alpha: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            gamma: 2.0,
            dice_smooth: 1.0,
            reduction: Reduction::Mean,
            class_balanced_alpha: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma {} is negative", self.gamma)));
        }
        if !(self.dice_smooth > 0.0) {
            return Err(Error::Config(format!("dice_smooth {} must be positive", self.dice_smooth)));
        }
        Ok(())
    }
}

/// Binary per-pixel targets `[N, H, W]`, 1 = changed.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelLabels<T>(Tensor<T>);

impl<T: Scalar> PixelLabels<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        if t.shape().len() != 3 {
            return Err(Error::shape(format!("labels must be [N, H, W], got {:?}", t.shape())));
        }
        if t.data().iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(Error::Validation("labels must be 0 or 1".into()));
        }
        Ok(Self(t))
    }

    pub fn from_masks(masks: &[&BinaryMask]) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::Empty("no masks to stack".into()))?;
        let (h, w) = (first.height(), first.width());
        let mut data = Vec::with_capacity(masks.len() * h * w);
        for m in masks {
            if (m.height(), m.width()) != (h, w) {
                return Err(Error::shape("masks in one batch must share an extent"));
            }
            data.extend(m.data().iter().map(|&b| if b { T::one() } else { T::zero() }));
        }
        Ok(Self(Tensor::new([masks.len(), h, w], data)?))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }
}

/// Changed-class softmax probability of two-class logits: `[N, 2, H, W] -> [N, H, W]`.
pub fn foreground_probability<T: Scalar>(tape: &mut Tape<T>, logits: Var) -> Result<Var> {
    let (n, c, h, w) = tape.value(logits).dims4()?;
    if c != 2 {
        return Err(Error::shape(format!("expected 2-class logits, got {c} channels")));
    }
    let hw = h * w;
    let lv = tape.value(logits).data();
    let mut out = Tensor::zeros([n, h, w]);
    for b in 0..n {
        let (l0, l1) = (&lv[2 * b * hw..(2 * b + 1) * hw], &lv[(2 * b + 1) * hw..(2 * b + 2) * hw]);
        for (o, (&a, &z)) in out.data_mut()[b * hw..(b + 1) * hw].iter_mut().zip(l0.iter().zip(l1)) {
            *o = crate::autograd::sigmoid(z - a);
        }
    }
    Ok(tape.push_op(
        out,
        &[logits],
        Box::new(move |ctx| {
            let mut gl = Tensor::zeros([n, 2, h, w]);
            let (g, q) = (ctx.grad.data(), ctx.output.data());
            for b in 0..n {
                for p in 0..hw {
                    let i = b * hw + p;
                    let d = g[i] * q[i] * (T::one() - q[i]);
                    gl.data_mut()[2 * b * hw + p] = -d;
                    gl.data_mut()[(2 * b + 1) * hw + p] = d;
                }
            }
            vec![Some(gl)]
        }),
    ))
}

fn check_labels<T: Scalar>(tape: &Tape<T>, probs: Var, labels: &PixelLabels<T>) -> Result<()> {
    if tape.value(probs).shape() != labels.tensor().shape() {
        return Err(Error::shape(format!(
            "probabilities {:?} vs labels {:?}",
            tape.value(probs).shape(),
            labels.tensor().shape()
        )));
    }
    Ok(())
}

/// `-a (1 - p̂)^γ log p̂` with `p̂ = p` on changed pixels and `1 - p` elsewhere.
pub fn focal_loss<T: Scalar>(
    tape: &mut Tape<T>,
    probs: Var,
    labels: &PixelLabels<T>,
    cfg: &LossConfig,
) -> Result<Var> {
    cfg.validate()?;
    check_labels(tape, probs, labels)?;
    let eps = T::lit(PROB_CLAMP);
    let hi = T::one() - eps;
    let gamma = T::lit(cfg.gamma);
    let alpha = T::lit(cfg.alpha);
    let balanced = cfg.class_balanced_alpha;
    let weight = move |y: T| {
        if balanced && y == T::zero() {
            T::one() - alpha
        } else {
            alpha
        }
    };
    let count = tape.value(probs).len();
    let norm = match cfg.reduction {
        Reduction::Mean => T::one() / T::lit(count.max(1) as f64),
        Reduction::Sum => T::one(),
    };
    let y = labels.tensor().clone();
    let total: T = tape
        .value(probs)
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &yv)| {
            let pc = p.max(eps).min(hi);
            let ph = if yv == T::one() { pc } else { T::one() - pc };
            -weight(yv) * (T::one() - ph).powf(gamma) * ph.ln()
        })
        .sum();
    Ok(tape.push_op(
        Tensor::scalar(total * norm),
        &[probs],
        Box::new(move |ctx| {
            let g = ctx.grad.data()[0] * norm;
            let gp = ctx.inputs[0].zip_map(&y, |p, yv| {
                if p < eps || p > hi {
                    return T::zero();
                }
                let ph = if yv == T::one() { p } else { T::one() - p };
                let q = T::one() - ph;
                let modulating = if gamma == T::zero() {
                    T::zero()
                } else {
                    gamma * q.powf(gamma - T::one()) * ph.ln()
                };
                let d_ph = weight(yv) * (modulating - q.powf(gamma) / ph);
                let sign = if yv == T::one() { T::one() } else { -T::one() };
                g * d_ph * sign
            });
            vec![Some(gp)]
        }),
    ))
}

/// `1 - (2 Σ E q + ε) / (Σ E + Σ q + ε)` per sample, reduced over the batch.
pub fn dice_from_probs<T: Scalar>(
    tape: &mut Tape<T>,
    probs: Var,
    labels: &PixelLabels<T>,
    cfg: &LossConfig,
) -> Result<Var> {
    cfg.validate()?;
    check_labels(tape, probs, labels)?;
    let shape = tape.value(probs).shape().to_vec();
    let (n, hw) = (shape[0], shape[1] * shape[2]);
    let eps = T::lit(cfg.dice_smooth);
    let norm = match cfg.reduction {
        Reduction::Mean => T::one() / T::lit(n.max(1) as f64),
        Reduction::Sum => T::one(),
    };
    let y = labels.tensor().clone();
    let q = tape.value(probs).data();
    let mut terms = Vec::with_capacity(n);
    let mut total = T::zero();
    for b in 0..n {
        let (qs, ys) = (&q[b * hw..(b + 1) * hw], &y.data()[b * hw..(b + 1) * hw]);
        let inter: T = qs.iter().zip(ys).map(|(&a, &e)| a * e).sum();
        let denom = ys.iter().copied().sum::<T>() + qs.iter().copied().sum::<T>() + eps;
        let num = T::lit(2.0) * inter + eps;
        total += T::one() - num / denom;
        terms.push((num, denom));
    }
    Ok(tape.push_op(
        Tensor::scalar(total * norm),
        &[probs],
        Box::new(move |ctx| {
            let g = ctx.grad.data()[0] * norm;
            let mut gq = Tensor::zeros(shape.clone());
            for (b, &(num, denom)) in terms.iter().enumerate() {
                let ys = &y.data()[b * hw..(b + 1) * hw];
                let dst = &mut gq.data_mut()[b * hw..(b + 1) * hw];
                for (d, &e) in dst.iter_mut().zip(ys) {
                    *d = -g * (T::lit(2.0) * e * denom - num) / (denom * denom);
                }
            }
            vec![Some(gq)]
        }),
    ))
}

/// Dice loss on the changed-class softmax channel of `[N, 2, H, W]` logits.
pub fn dice_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &PixelLabels<T>,
    cfg: &LossConfig,
) -> Result<Var> {
    let q = foreground_probability(tape, logits)?;
    dice_from_probs(tape, q, labels, cfg)
}

/// The three scalars of one objective evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub focal: Var,
    pub dice: Var,
    pub total: Var,
}

/// Unweighted sum of focal and dice terms, both on softmax probabilities.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &PixelLabels<T>,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    let q = foreground_probability(tape, logits)?;
    let focal = focal_loss(tape, q, labels, cfg)?;
    let dice = dice_from_probs(tape, q, labels, cfg)?;
    let total = tape.add(focal, dice)?;
    Ok(LossTerms { focal, dice, total })
}

/// Focal loss value of plain probabilities (no gradient).
pub fn focal_loss_value<T: Scalar>(probs: &Tensor<T>, labels: &PixelLabels<T>, cfg: &LossConfig) -> Result<T> {
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone());
    let l = focal_loss(&mut tape, p, labels, cfg)?;
    Ok(tape.value(l).data()[0])
}

/// Dice loss value of plain logits (no gradient).
pub fn dice_loss_value<T: Scalar>(logits: &Tensor<T>, labels: &PixelLabels<T>, cfg: &LossConfig) -> Result<T> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let d = dice_loss(&mut tape, l, labels, cfg)?;
    Ok(tape.value(d).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(shape: [usize; 3], data: Vec<f64>) -> PixelLabels<f64> {
        PixelLabels::new(Tensor::new(shape, data).unwrap()).unwrap()
    }

    #[test]
    fn focal_single_pixel_value() {
        let p = Tensor::new([1, 1, 1], vec![0.5]).unwrap();
        let v = focal_loss_value(&p, &labels([1, 1, 1], vec![1.0]), &LossConfig::default()).unwrap();
        // 0.2 · 0.5² · ln 2
        assert!((v - 0.0346574).abs() < 1e-6, "{v}");
    }

    #[test]
    fn focal_vanishes_at_certainty() {
        let p = Tensor::new([1, 1, 2], vec![1.0, 0.0]).unwrap();
        let v = focal_loss_value(&p, &labels([1, 1, 2], vec![1.0, 0.0]), &LossConfig::default()).unwrap();
        // clamped at 1e-7 so only ~1e-22 remains
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn focal_with_unit_alpha_and_zero_gamma_is_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 64;
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.3) as u8)).collect();
        let cfg = LossConfig {
            alpha: 1.0,
            gamma: 0.0,
            ..LossConfig::default()
        };
        let got = focal_loss_value(&Tensor::new([1, 8, 8], p.clone()).unwrap(), &labels([1, 8, 8], y.clone()), &cfg).unwrap();
        let ce: f64 = p
            .iter()
            .zip(&y)
            .map(|(&p, &y)| if y == 1.0 { -p.ln() } else { -(1.0 - p).ln() })
            .sum::<f64>()
            / n as f64;
        assert!((got - ce).abs() < 1e-12);
    }

    #[test]
    fn dice_uniform_half_against_full_mask() {
        let n = 10_000;
        let logits = Tensor::<f64>::zeros([1, 2, 100, 100]);
        let cfg = LossConfig {
            dice_smooth: 1e-6,
            ..LossConfig::default()
        };
        let v = dice_loss_value(&logits, &labels([1, 100, 100], vec![1.0; n]), &cfg).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-3, "{v}");
    }

    #[test]
    fn dice_saturated_and_empty_limits() {
        let y = vec![1.0, 0.0, 1.0, 0.0];
        let mut l = vec![0.0; 8];
        for (p, &e) in y.iter().enumerate() {
            l[p] = if e == 1.0 { -10.0 } else { 10.0 };
            l[4 + p] = -l[p];
        }
        let logits = Tensor::new([1, 2, 2, 2], l).unwrap();
        let v = dice_loss_value(&logits, &labels([1, 2, 2], y), &LossConfig::default()).unwrap();
        assert!(v <= 1e-3, "{v}");

        let mut l = vec![10.0; 8];
        l[4..].iter_mut().for_each(|v| *v = -10.0);
        let logits = Tensor::new([1, 2, 2, 2], l).unwrap();
        let v = dice_loss_value(&logits, &labels([1, 2, 2], vec![0.0; 4]), &LossConfig::default()).unwrap();
        assert!(v < 1e-3, "{v}");
    }

    #[test]
    fn total_is_sum_of_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits = Tensor::<f64>::randn([2, 2, 4, 4], 1.0, &mut rng);
        let y: Vec<f64> = (0..32).map(|i| f64::from((i % 3 == 0) as u8)).collect();
        let lab = labels([2, 4, 4], y);
        let cfg = LossConfig::default();
        let mut tape = Tape::new();
        let l = tape.constant(logits.clone());
        let terms = total_loss(&mut tape, l, &lab, &cfg).unwrap();
        let total = tape.value(terms.total).data()[0];
        let dice = dice_loss_value(&logits, &lab, &cfg).unwrap();
        let mut t2 = Tape::new();
        let l2 = t2.constant(logits);
        let q = foreground_probability(&mut t2, l2).unwrap();
        let qv = t2.value(q).clone();
        let focal = focal_loss_value(&qv, &lab, &cfg).unwrap();
        assert!((total - (focal + dice)).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_and_bad_config_are_errors() {
        let p = Tensor::<f64>::full([1, 2, 2], 0.5);
        assert!(focal_loss_value(&p, &labels([1, 1, 4], vec![0.0; 4]), &LossConfig::default()).is_err());
        let bad = LossConfig {
            alpha: 0.0,
            ..LossConfig::default()
        };
        assert!(focal_loss_value(&p, &labels([1, 2, 2], vec![0.0; 4]), &bad).is_err());
        assert!(PixelLabels::new(Tensor::<f64>::full([1, 1, 1], 0.5)).is_err());
    }
}
