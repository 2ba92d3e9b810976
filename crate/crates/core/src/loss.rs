//! Boundary-weighted BCE + IoU segmentation loss with deep supervision
//! over the four mask scales.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Side of the box filter used to find mask boundaries (odd).
    pub kernel_size: usize,
    /// Extra weight given to pixels whose neighbourhood disagrees with them.
    pub gain: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kernel_size: 15,
            gain: 5.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!("loss kernel size {} must be odd", self.kernel_size)));
        }
        if !(self.gain >= 0.0 && self.gain.is_finite()) {
            return Err(Error::Config(format!("loss gain {} must be finite and non-negative", self.gain)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BranchLoss {
    pub iou: f64,
    pub bce: f64,
    /// `iou + bce`.
    pub total: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub branches: [BranchLoss; 4],
    pub total: f64,
}

impl LossReport {
    pub fn from_branches(branches: [BranchLoss; 4]) -> Self {
        let total = branches.iter().map(|b| b.total).sum();
        LossReport { branches, total }
    }

    /// Element-wise mean of several reports (batch averaging).
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mut branches = [BranchLoss::default(); 4];
        for (i, b) in branches.iter_mut().enumerate() {
            b.iou = reports.iter().map(|r| r.branches[i].iou).sum::<f64>() / n;
            b.bce = reports.iter().map(|r| r.branches[i].bce).sum::<f64>() / n;
            b.total = reports.iter().map(|r| r.branches[i].total).sum::<f64>() / n;
        }
        LossReport::from_branches(branches)
    }
}

fn check_binary<T: Real>(mask: &Tensor<T>) -> Result<()> {
    if let Some(v) = mask.data().iter().find(|v| **v != T::zero() && **v != T::one()) {
        return Err(Error::Data(format!("target mask is not binary (found {v})")));
    }
    Ok(())
}

/// Box mean over a `k×k` window centred on each pixel, averaging only the
/// in-bounds pixels, so a constant map is returned unchanged.
pub fn box_mean<T: Real>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    let r = k / 2;
    let d = x.data();
    let mut out = vec![T::zero(); d.len()];
    let stride = w + 1;
    let mut integral = vec![0.0f64; (h + 1) * stride];
    for ch in 0..c {
        let plane = &d[ch * h * w..(ch + 1) * h * w];
        for i in 0..h {
            let mut row = 0.0;
            for j in 0..w {
                row += plane[i * w + j].to_f64();
                integral[(i + 1) * stride + j + 1] = integral[i * stride + j + 1] + row;
            }
        }
        for i in 0..h {
            let (i0, i1) = (i.saturating_sub(r), (i + r + 1).min(h));
            for j in 0..w {
                let (j0, j1) = (j.saturating_sub(r), (j + r + 1).min(w));
                let s = integral[i1 * stride + j1] - integral[i0 * stride + j1] - integral[i1 * stride + j0]
                    + integral[i0 * stride + j0];
                let n = ((i1 - i0) * (j1 - j0)) as f64;
                out[ch * h * w + i * w + j] = T::lit(s / n);
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// `w = 1 + gain·|box_mean(G) − G|`.
pub fn boundary_weights<T: Real>(target: &Tensor<T>, cfg: &LossConfig) -> Result<Tensor<T>> {
    cfg.validate()?;
    if cfg.gain == 0.0 {
        return Ok(Tensor::ones(target.shape()));
    }
    let pooled = box_mean(target, cfg.kernel_size)?;
    let gain = T::lit(cfg.gain);
    pooled.zip_map(target, |p, t| T::one() + gain * (p - t).abs())
}

/// Builds `(ℓ_IOU, ℓ_BCE)` for one logit map against a constant target of
/// the same shape. Both outputs are scalar graph nodes.
pub fn weighted_bce_iou<T: Real>(
    g: &mut Graph<T>,
    logits: Var,
    target: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<(Var, Var)> {
    if g.shape(logits) != target.shape() {
        return Err(Error::shape(
            "weighted_bce_iou",
            format!("logits {:?} vs target {:?}", g.shape(logits), target.shape()),
        ));
    }
    check_binary(target)?;
    let weights = boundary_weights(target, cfg)?;
    let w_sum = weights.sum();
    let wg_sum = weights.zip_map(target, |w, t| w * t)?.sum();
    let w = g.constant(weights.clone());
    let t = g.constant(target.clone());

    let bce = g.bce_logits(logits, t)?;
    let bce = g.mul(bce, w)?;
    let bce = g.sum(bce)?;
    let bce = g.scale(bce, T::one() / w_sum)?;

    let p = g.sigmoid(logits)?;
    let wp = g.mul(p, w)?;
    let wp_sum = g.sum(wp)?;
    let inter = g.mul(wp, t)?;
    let inter = g.sum(inter)?;
    // union = Σw·p + Σw·G − Σw·p·G
    let union = g.sub(wp_sum, inter)?;
    let union = g.shift(union, wg_sum)?;
    let ratio = g.div(inter, union)?;
    let iou = g.one_minus(ratio)?;
    Ok((iou, bce))
}

/// Deep-supervised total: every mask is resized to the target size and
/// scored; returns the scalar total node and the per-branch breakdown.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    target: &Tensor<T>,
    masks: &[Var; 4],
    cfg: &LossConfig,
) -> Result<(Var, LossReport)> {
    let (_, h, w) = target.chw()?;
    let mut branches = [BranchLoss::default(); 4];
    let mut total = None;
    for (i, &m) in masks.iter().enumerate() {
        let up = nn::resize_bilinear(g, m, h, w)?;
        let (iou, bce) = weighted_bce_iou(g, up, target, cfg)?;
        let l = g.add(iou, bce)?;
        branches[i] = BranchLoss {
            iou: g.value(iou).item().to_f64(),
            bce: g.value(bce).item().to_f64(),
            total: g.value(l).item().to_f64(),
        };
        total = Some(match total {
            None => l,
            Some(acc) => g.add(acc, l)?,
        });
    }
    let total = total.expect("four masks");
    Ok((total, LossReport::from_branches(branches)))
}

/// Evaluates the total loss of four logit tensors without keeping a graph.
pub fn total_loss_value<T: Real>(target: &Tensor<T>, masks: &[Tensor<T>; 4], cfg: &LossConfig) -> Result<LossReport> {
    let mut g = Graph::new();
    let vars = [
        g.constant(masks[0].clone()),
        g.constant(masks[1].clone()),
        g.constant(masks[2].clone()),
        g.constant(masks[3].clone()),
    ];
    Ok(total_loss(&mut g, target, &vars, cfg)?.1)
}
