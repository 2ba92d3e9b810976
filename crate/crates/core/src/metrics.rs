//! Overlap and pixel-accuracy metrics for binary segmentation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Confusion counts of a binarized prediction against a binary target.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn count<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, threshold: f64) -> Result<Self> {
        if pred.shape() != target.shape() {
            return Err(Error::shape(
                "metrics",
                format!("prediction {:?} vs target {:?}", pred.shape(), target.shape()),
            ));
        }
        let th = T::lit(threshold);
        let half = T::lit(0.5);
        let mut c = Confusion::default();
        for (&p, &t) in pred.data().iter().zip(target.data()) {
            match (p >= th, t >= half) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn dice(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / den as f64
        }
    }

    pub fn iou(&self) -> f64 {
        let den = self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            self.tp as f64 / den as f64
        }
    }

    /// Mean of foreground and background accuracy over the classes present
    /// in the target.
    pub fn mpa(&self) -> f64 {
        let mut acc = Vec::with_capacity(2);
        if self.tp + self.fn_ > 0 {
            acc.push(self.tp as f64 / (self.tp + self.fn_) as f64);
        }
        if self.tn + self.fp > 0 {
            acc.push(self.tn as f64 / (self.tn + self.fp) as f64);
        }
        if acc.is_empty() {
            1.0
        } else {
            acc.iter().sum::<f64>() / acc.len() as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dice: f64,
    pub miou: f64,
    pub mae: f64,
    pub mpa: f64,
}

impl MetricReport {
    pub const COLUMNS: [&'static str; 4] = ["Dice", "mIoU", "MAE", "MPA"];

    pub fn values(&self) -> [f64; 4] {
        [self.dice, self.miou, self.mae, self.mpa]
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Dice {:.4}  mIoU {:.4}  MAE {:.4}  MPA {:.4}",
            self.dice, self.miou, self.mae, self.mpa
        )
    }
}

/// Scores one probability map against its binary target.
pub fn metrics<T: Real>(prob: &Tensor<T>, target: &Tensor<T>, threshold: f64) -> Result<MetricReport> {
    let c = Confusion::count(prob, target, threshold)?;
    let err: Vec<f64> = prob.data().iter().zip(target.data()).map(|(&p, &t)| (p - t).abs().to_f64()).collect();
    let n = prob.len().max(1) as f64;
    Ok(MetricReport {
        dice: c.dice(),
        miou: c.iou(),
        mae: compensated_sum(&err) / n,
        mpa: c.mpa(),
    })
}

/// Mean of per-image reports. Each column is sorted before compensated
/// summation, so the result does not depend on input order.
pub fn aggregate(reports: &[MetricReport]) -> MetricReport {
    if reports.is_empty() {
        return MetricReport::default();
    }
    let column = |k: usize| {
        let mut v: Vec<f64> = reports.iter().map(|r| r.values()[k]).collect();
        v.sort_by(f64::total_cmp);
        compensated_sum(&v) / v.len() as f64
    };
    MetricReport {
        dice: column(0),
        miou: column(1),
        mae: column(2),
        mpa: column(3),
    }
}

/// Neumaier summation.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
