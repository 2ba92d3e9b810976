//! Axial context relation encoder: axial self-attention followed by
//! foreground/background masking with the previous mask and a fusion
//! convolution that emits refined mask logits.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{self, ConvSpec};
use crate::params::{ParamSpec, ParamVars};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcreConfig {
    pub channels: usize,
}

const PROJECTIONS: [&str; 4] = ["q", "k", "v", "o"];

impl AcreConfig {
    pub fn attention_specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let proj = ConvSpec::pointwise(self.channels, self.channels).without_bias();
        ["h", "w"]
            .iter()
            .flat_map(|axis| {
                PROJECTIONS
                    .iter()
                    .flat_map(move |p| proj.params(&format!("{prefix}.{axis}.{p}"), 1.0))
            })
            .collect()
    }

    pub fn param_specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let c = self.channels;
        let mut specs = self.attention_specs(&format!("{prefix}.attn"));
        specs.extend(ConvSpec::same3(c, c).params(&format!("{prefix}.fore"), nn::RELU_GAIN));
        specs.extend(ConvSpec::same3(c, c).params(&format!("{prefix}.back"), nn::RELU_GAIN));
        specs.extend(ConvSpec::same3(2 * c, 1).params(&format!("{prefix}.fuse"), 1.0));
        specs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    Height,
    Width,
}

fn project<T: Real>(g: &mut Graph<T>, x: Var, c: usize, params: &ParamVars, name: &str) -> Result<Var> {
    let spec = ConvSpec::pointwise(c, c).without_bias();
    nn::conv2d(g, x, &spec, params, name)
}

/// Single-head self-attention along one spatial axis with a residual
/// connection; lines along the other axis are independent.
fn axial_pass<T: Real>(g: &mut Graph<T>, x: Var, axis: Axis, params: &ParamVars, prefix: &str) -> Result<Var> {
    let c = g.shape(x)[0];
    let q = project(g, x, c, params, &format!("{prefix}.q"))?;
    let k = project(g, x, c, params, &format!("{prefix}.k"))?;
    let v = project(g, x, c, params, &format!("{prefix}.v"))?;
    // tokens: (lines, positions, C); keys transposed to (lines, C, positions)
    let (tokens, keys, back) = match axis {
        Axis::Height => ([2, 1, 0], [2, 0, 1], [2, 1, 0]),
        Axis::Width => ([1, 2, 0], [1, 0, 2], [2, 0, 1]),
    };
    let qt = g.permute(q, &tokens)?;
    let kt = g.permute(k, &keys)?;
    let vt = g.permute(v, &tokens)?;
    let scores = g.bmm(qt, kt)?;
    let scores = g.scale(scores, T::one() / T::lit(c as f64).sqrt())?;
    let attn = g.softmax(scores)?;
    let mixed = g.bmm(attn, vt)?;
    let mixed = g.permute(mixed, &back)?;
    let out = project(g, mixed, c, params, &format!("{prefix}.o"))?;
    g.add(x, out)
}

/// Attention along H (per column), then along W (per row).
pub fn axial_attention<T: Real>(g: &mut Graph<T>, x: Var, params: &ParamVars, prefix: &str) -> Result<Var> {
    if g.shape(x).len() != 3 {
        return Err(Error::shape("axial_attention", format!("expected (C,H,W), got {:?}", g.shape(x))));
    }
    let y = axial_pass(g, x, Axis::Height, params, &format!("{prefix}.h"))?;
    axial_pass(g, y, Axis::Width, params, &format!("{prefix}.w"))
}

/// Only the height pass; columns are processed independently.
pub fn height_attention<T: Real>(g: &mut Graph<T>, x: Var, params: &ParamVars, prefix: &str) -> Result<Var> {
    axial_pass(g, x, Axis::Height, params, &format!("{prefix}.h"))
}

/// `(C,H,W)` features and `(1,h,w)` previous mask logits to `(1,H,W)`
/// refined mask logits. The previous mask is resized to `(H,W)` on logits,
/// then squashed; `F_fore = phi_fore(F'' * m)`, `F_back = phi_back(F'' * (1-m))`.
pub fn acre_block<T: Real>(
    g: &mut Graph<T>,
    features: Var,
    prev_mask: Var,
    cfg: &AcreConfig,
    params: &ParamVars,
    prefix: &str,
) -> Result<Var> {
    let (c, h, w) = match g.shape(features)[..] {
        [c, h, w] => (c, h, w),
        ref s => return Err(Error::shape("acre_block", format!("features must be (C,H,W), got {s:?}"))),
    };
    if c != cfg.channels {
        return Err(Error::shape("acre_block", format!("expected {} channels, got {c}", cfg.channels)));
    }
    if g.shape(prev_mask).first() != Some(&1) || g.shape(prev_mask).len() != 3 {
        return Err(Error::shape("acre_block", format!("mask must be (1,h,w), got {:?}", g.shape(prev_mask))));
    }
    let attended = axial_attention(g, features, params, &format!("{prefix}.attn"))?;
    let mask = nn::resize_bilinear(g, prev_mask, h, w)?;
    let mask = g.sigmoid(mask)?;
    let fore_gate = g.repeat_channels(mask, c)?;
    let back_gate = g.one_minus(fore_gate)?;
    let fore = g.mul(attended, fore_gate)?;
    let fore = nn::conv2d_relu(g, fore, &ConvSpec::same3(c, c), params, &format!("{prefix}.fore"))?;
    let back = g.mul(attended, back_gate)?;
    let back = nn::conv2d_relu(g, back, &ConvSpec::same3(c, c), params, &format!("{prefix}.back"))?;
    let joined = nn::concat_channels(g, &[fore, back])?;
    nn::conv2d(g, joined, &ConvSpec::same3(2 * c, 1), params, &format!("{prefix}.fuse"))
}

/// Stand-in used when the encoder is ablated: a 3x3 convolution straight
/// to one logit channel.
pub fn plain_refine<T: Real>(g: &mut Graph<T>, features: Var, channels: usize, params: &ParamVars, prefix: &str) -> Result<Var> {
    nn::conv2d(g, features, &ConvSpec::same3(channels, 1), params, prefix)
}

pub fn plain_refine_specs(channels: usize, prefix: &str) -> Vec<ParamSpec> {
    ConvSpec::same3(channels, 1).params(prefix, 1.0)
}
