//! Confusion tallies and the five change-detection scores.

use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Pixel tallies with changed as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(self, other: Self) -> Self {
        self + other
    }

    /// Adds one prediction/ground-truth pair to the tallies.
    pub fn accumulate(&mut self, pred: &BinaryMask, gt: &BinaryMask) -> Result<()> {
        *self += confusion_counts(pred, gt)?;
        Ok(())
    }
}

impl Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Tallies of a single pair.
pub fn confusion_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Returns `acc` with the pair's tallies added.
pub fn confusion_accumulate(
    pred: &BinaryMask,
    gt: &BinaryMask,
    acc: ConfusionCounts,
) -> Result<ConfusionCounts> {
    Ok(acc + confusion_counts(pred, gt)?)
}

/// Scores in `[0, 1]`. Fields named in `undefined` hit a 0/0 and were set to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
    pub oa: f64,
    pub undefined: Vec<String>,
}

pub const CSV_HEADER: &str = "F1,Pre,Rec,IoU,OA";

impl ScoreReport {
    /// `F1,Pre,Rec,IoU,OA` in percent, four decimals.
    pub fn csv_row(&self) -> String {
        format!(
            "{:.4},{:.4},{:.4},{:.4},{:.4}",
            100.0 * self.f1,
            100.0 * self.precision,
            100.0 * self.recall,
            100.0 * self.iou,
            100.0 * self.oa
        )
    }
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in [
            ("F1", self.f1),
            ("Pre", self.precision),
            ("Rec", self.recall),
            ("IoU", self.iou),
            ("OA", self.oa),
        ] {
            writeln!(f, "{k}: {:.4}", 100.0 * v)?;
        }
        if !self.undefined.is_empty() {
            writeln!(f, "undefined (0/0, reported as 0): {}", self.undefined.join(", "))?;
        }
        Ok(())
    }
}

fn ratio(num: u64, den: u64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_scores(acc: &ConfusionCounts) -> Result<ScoreReport> {
    let n = acc.total();
    if n == 0 {
        return Err(Error::Empty("confusion counts are all zero".into()));
    }
    let mut undefined = Vec::new();
    let precision = ratio(acc.tp, acc.tp + acc.fp, "Pre", &mut undefined);
    let recall = ratio(acc.tp, acc.tp + acc.fn_, "Rec", &mut undefined);
    // 2tp / (2tp + fp + fn) equals the harmonic mean and stays exact.
    let f1 = ratio(2 * acc.tp, 2 * acc.tp + acc.fp + acc.fn_, "F1", &mut undefined);
    let iou = ratio(acc.tp, acc.tp + acc.fp + acc.fn_, "IoU", &mut undefined);
    let oa = (acc.tp + acc.tn) as f64 / n as f64;
    Ok(ScoreReport {
        f1,
        precision,
        recall,
        iou,
        oa,
        undefined,
    })
}
