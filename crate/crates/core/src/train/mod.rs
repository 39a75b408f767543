//! Momentum SGD with multi-step decay, evaluation and checkpoints.

mod checkpoint;
mod config;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::{lr_at, RunConfig, TrainConfig};

use crate::autograd::Tape;
use crate::data::{augment_with, BiTemporalSample};
use crate::error::{Error, Result};
use crate::loss::{total_loss, PixelLabels};
use crate::mask::BinaryMask;
use crate::metrics::{compute_scores, ConfusionCounts, ScoreReport};
use crate::model::Network;
use crate::nn::{Binding, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Loss components of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub batch: usize,
    pub lr: f64,
    pub focal: f64,
    pub dice: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean total loss over the epoch's batches.
    pub train_loss: f64,
    pub val: Option<ScoreReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

impl History {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_loss,F1,Pre,Rec,IoU,OA";

    /// One row per epoch; validation columns are empty without a validation split.
    pub fn epoch_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let val = e.val.as_ref().map(ScoreReport::csv_row).unwrap_or_else(|| ",,,,".into());
            s.push_str(&format!("{},{},{},{}\n", e.epoch, e.lr, e.train_loss, val));
        }
        s
    }

    pub fn step_losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.total).collect()
    }
}

/// Classical momentum SGD with weight decay folded into the gradient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sgd<T> {
    buffers: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new() -> Self {
        Self {
            buffers: BTreeMap::new(),
        }
    }

    pub fn from_buffers(buffers: BTreeMap<String, Tensor<T>>) -> Self {
        Self { buffers }
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.buffers
    }

    /// `g += wd·p; v = μ·v + g; p -= lr·v` for every parameter with a gradient.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &BTreeMap<String, Tensor<T>>,
        lr: T,
        momentum: T,
        weight_decay: T,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = store
                .param_mut(name)
                .ok_or_else(|| Error::Config(format!("gradient for unknown parameter {name}")))?;
            if p.shape() != g.shape() {
                return Err(Error::shape(format!("gradient of {name} has shape {:?}", g.shape())));
            }
            let d = p.zip_map(g, |p, g| g + weight_decay * p);
            let v = match self.buffers.remove(name) {
                Some(v) => v.zip_map(&d, |v, d| momentum * v + d),
                None => d,
            };
            for (p, &v) in p.data_mut().iter_mut().zip(v.data()) {
                *p -= lr * v;
            }
            self.buffers.insert(name.clone(), v);
        }
        Ok(())
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm<T: Scalar>(grads: &mut BTreeMap<String, Tensor<T>>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data())
        .map(|&v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::lit(max_norm / (norm + 1e-6));
        for g in grads.values_mut() {
            *g = g.scale(s);
        }
    }
    norm
}

/// `[N, 3, H, W]` batch of the first (`second = false`) or second date.
pub fn stack_images<T: Scalar>(samples: &[&BiTemporalSample<T>], second: bool, normalize: bool) -> Result<Tensor<T>> {
    let imgs: Vec<&Tensor<T>> = samples.iter().map(|s| if second { &s.t2 } else { &s.t1 }).collect();
    let t = Tensor::stack(&imgs)?;
    Ok(if normalize {
        let half = T::lit(0.5);
        t.map(|x| (x - half) / half)
    } else {
        t
    })
}

/// Changed where the changed-class logit is strictly larger.
pub fn argmax_masks<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<BinaryMask>> {
    let (n, c, h, w) = logits.dims4()?;
    if c != 2 {
        return Err(Error::shape(format!("expected 2-class logits, got {c}")));
    }
    let hw = h * w;
    let d = logits.data();
    (0..n)
        .map(|b| {
            let (l0, l1) = (&d[2 * b * hw..(2 * b + 1) * hw], &d[(2 * b + 1) * hw..(2 * b + 2) * hw]);
            BinaryMask::new(h, w, l0.iter().zip(l1).map(|(a, z)| z > a).collect())
        })
        .collect()
}

/// Confusion tallies and scores over a set of predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub counts: ConfusionCounts,
    pub scores: ScoreReport,
}

/// Evaluates an arbitrary batch predictor.
pub fn evaluate_with<T: Scalar>(
    samples: &[BiTemporalSample<T>],
    batch_size: usize,
    mut predict: impl FnMut(&[&BiTemporalSample<T>]) -> Result<Vec<BinaryMask>>,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation split has no samples".into()));
    }
    let mut counts = ConfusionCounts::default();
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<_> = chunk.iter().collect();
        let preds = predict(&refs)?;
        if preds.len() != chunk.len() {
            return Err(Error::CountMismatch {
                expected: chunk.len(),
                found: preds.len(),
            });
        }
        for (p, s) in preds.iter().zip(chunk) {
            counts.accumulate(p, &s.mask)?;
        }
    }
    let scores = compute_scores(&counts)?;
    Ok(Evaluation { counts, scores })
}

/// A network with fixed parameters, run with running batch-norm statistics.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub net: Arc<Network<T>>,
    pub params: ParamStore<T>,
    pub normalize: bool,
}

impl<T: Scalar> Model<T> {
    pub fn logits(&self, t1: &Tensor<T>, t2: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let mut bind = Binding::eval(&self.params);
        let a = tape.constant(t1.clone());
        let b = tape.constant(t2.clone());
        let l = self.net.forward(&mut tape, &mut bind, a, b)?;
        Ok(tape.value(l).clone())
    }

    pub fn predict(&self, samples: &[&BiTemporalSample<T>]) -> Result<Vec<BinaryMask>> {
        let t1 = stack_images(samples, false, self.normalize)?;
        let t2 = stack_images(samples, true, self.normalize)?;
        argmax_masks(&self.logits(&t1, &t2)?)
    }

    pub fn evaluate(&self, samples: &[BiTemporalSample<T>], batch_size: usize) -> Result<Evaluation> {
        evaluate_with(samples, batch_size, |b| self.predict(b))
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn into_model(self) -> Result<Model<T>> {
        let net = self.network()?;
        Ok(Model {
            net: Arc::new(net),
            normalize: self.meta.train.normalize,
            params: self.params,
        })
    }
}

/// Mutable state of a training run.
pub struct Trainer<T> {
    run: RunConfig,
    net: Arc<Network<T>>,
    params: ParamStore<T>,
    sgd: Sgd<T>,
    epoch: usize,
    history: History,
    best_f1: Option<f64>,
    best: Option<Checkpoint<T>>,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh parameters drawn from `run.train.seed`.
    pub fn new(run: RunConfig) -> Result<Self> {
        run.validate()?;
        let net = Arc::new(Network::new(run.model.clone())?);
        let params = net.init_params(run.train.seed);
        Ok(Self {
            run,
            net,
            params,
            sgd: Sgd::new(),
            epoch: 0,
            history: History::default(),
            best_f1: None,
            best: None,
        })
    }

    /// Continues a run from its last epoch boundary.
    pub fn resume(ckpt: Checkpoint<T>) -> Result<Self> {
        let net = Arc::new(ckpt.network()?);
        let run = RunConfig {
            model: ckpt.meta.model.clone(),
            loss: ckpt.meta.loss.clone(),
            train: ckpt.meta.train.clone(),
        };
        run.validate()?;
        Ok(Self {
            run,
            net,
            epoch: ckpt.meta.epoch,
            history: ckpt.meta.history,
            best_f1: ckpt.meta.best_f1,
            best: None,
            sgd: Sgd::from_buffers(ckpt.momentum),
            params: ckpt.params,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.run
    }

    /// Changes the total epoch budget, e.g. to extend a resumed run.
    pub fn set_epochs(&mut self, epochs: usize) -> Result<()> {
        let mut train = self.run.train.clone();
        train.epochs = epochs;
        train.validate()?;
        self.run.train = train;
        Ok(())
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn model(&self) -> Model<T> {
        Model {
            net: self.net.clone(),
            params: self.params.clone(),
            normalize: self.run.train.normalize,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            meta: CheckpointMeta {
                model: self.run.model.clone(),
                loss: self.run.loss.clone(),
                train: self.run.train.clone(),
                frequency_indices: self.net.indices().to_text(),
                epoch: self.epoch,
                history: self.history.clone(),
                best_f1: self.best_f1,
            },
            params: self.params.clone(),
            momentum: self.sgd.buffers().clone(),
        }
    }

    /// Checkpoint with the highest validation F1 reached since this trainer was built.
    pub fn best(&self) -> Option<&Checkpoint<T>> {
        self.best.as_ref()
    }

    /// One forward/backward/update on `batch`.
    pub fn step(&mut self, batch: &[&BiTemporalSample<T>], lr: f64, batch_index: usize) -> Result<StepRecord> {
        let tc = &self.run.train;
        let t1 = stack_images(batch, false, tc.normalize)?;
        let t2 = stack_images(batch, true, tc.normalize)?;
        let masks: Vec<&BinaryMask> = batch.iter().map(|s| &s.mask).collect();
        let labels = PixelLabels::from_masks(&masks)?;

        let mut tape = Tape::new();
        let mut bind = Binding::train(&self.params);
        let a = tape.constant(t1);
        let b = tape.constant(t2);
        let logits = self.net.forward(&mut tape, &mut bind, a, b)?;
        let terms = total_loss(&mut tape, logits, &labels, &self.run.loss)?;
        let value = |v| tape.value(v).data()[0].as_f64();
        let rec = StepRecord {
            epoch: self.epoch,
            batch: batch_index,
            lr,
            focal: value(terms.focal),
            dice: value(terms.dice),
            total: value(terms.total),
        };
        if !rec.total.is_finite() {
            return Err(Error::Diverged {
                epoch: rec.epoch,
                batch: rec.batch,
                focal: rec.focal,
                dice: rec.dice,
                total: rec.total,
            });
        }
        let mut grads = tape.backward(terms.total)?;
        let mut named = BTreeMap::new();
        for (name, _) in self.params.params() {
            if let Some(g) = bind.var_of(name).and_then(|v| grads.take(v)) {
                named.insert(name.clone(), g);
            }
        }
        let updates = bind.take_updates();
        drop(bind);
        if let Some(max) = tc.max_grad_norm {
            clip_grad_norm(&mut named, max);
        }
        self.sgd.step(
            &mut self.params,
            &named,
            T::lit(lr),
            T::lit(tc.momentum),
            T::lit(tc.weight_decay),
        )?;
        self.params.apply_stat_updates(&updates, T::lit(tc.bn_momentum))?;
        Ok(rec)
    }

    /// Runs the next epoch: seeded shuffle and augmentation, updates, optional validation.
    pub fn run_epoch(&mut self, train: &[BiTemporalSample<T>], val: &[BiTemporalSample<T>]) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::Empty("training split has no samples".into()));
        }
        let tc = self.run.train.clone();
        let lr = lr_at(self.epoch, &tc);
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        rng.set_stream(self.epoch as u64 + 1);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let prepared: Vec<BiTemporalSample<T>> = order
            .iter()
            .map(|&i| {
                if tc.augment {
                    augment_with(&train[i], &mut rng).0
                } else {
                    train[i].clone()
                }
            })
            .collect();
        let mut losses = Vec::new();
        for (bi, chunk) in prepared.chunks(tc.batch_size).enumerate() {
            let refs: Vec<_> = chunk.iter().collect();
            let rec = self.step(&refs, lr, bi)?;
            log::debug!("epoch {} batch {bi}: total {:.6}", rec.epoch, rec.total);
            losses.push(rec.total);
            self.history.steps.push(rec);
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        self.epoch += 1;
        let val_scores = if val.is_empty() {
            None
        } else {
            Some(self.model().evaluate(val, tc.batch_size)?.scores)
        };
        let rec = EpochRecord {
            epoch: self.epoch - 1,
            lr,
            train_loss,
            val: val_scores.clone(),
        };
        self.history.epochs.push(rec.clone());
        if let Some(s) = val_scores {
            if self.best_f1.is_none_or(|b| s.f1 > b) {
                self.best_f1 = Some(s.f1);
                self.best = Some(self.checkpoint());
            }
            log::info!("epoch {} lr {lr} loss {train_loss:.6} val F1 {:.4}", rec.epoch, 100.0 * s.f1);
        } else {
            log::info!("epoch {} lr {lr} loss {train_loss:.6}", rec.epoch);
        }
        Ok(rec)
    }

    /// Runs the remaining epochs of the configured budget.
    pub fn fit(&mut self, train: &[BiTemporalSample<T>], val: &[BiTemporalSample<T>]) -> Result<()> {
        while self.epoch < self.run.train.epochs {
            self.run_epoch(train, val)?;
        }
        Ok(())
    }
}

/// Result of a complete run.
#[derive(Debug)]
pub struct TrainOutcome<T> {
    pub last: Checkpoint<T>,
    /// Highest validation F1; `None` without a validation split.
    pub best: Option<Checkpoint<T>>,
}

pub fn train_loop<T: Scalar>(
    run: &RunConfig,
    train: &[BiTemporalSample<T>],
    val: &[BiTemporalSample<T>],
) -> Result<TrainOutcome<T>> {
    let mut t = Trainer::new(run.clone())?;
    if run.train.epochs > 0 && train.is_empty() {
        return Err(Error::Empty("training split has no samples".into()));
    }
    t.fit(train, val)?;
    Ok(TrainOutcome {
        last: t.checkpoint(),
        best: t.best().cloned(),
    })
}
