//! Differentiable building blocks: convolution, axis-wise FC mixing,
//! activations, resampling and channel concat/split.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{InitKind, ParamSpec, ParamVars};
use crate::tensor::Real;

/// He-style gain for weights feeding a ReLU.
pub const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// 3x3, stride 1, size-preserving.
    pub fn same3(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
            has_bias: true,
        }
    }

    /// 3x3, stride 2: halves the spatial extent.
    pub fn down3(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            stride: 2,
            ..Self::same3(in_channels, out_channels)
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kernel: 1,
            padding: 0,
            ..Self::same3(in_channels, out_channels)
        }
    }

    pub fn without_bias(self) -> Self {
        ConvSpec {
            has_bias: false,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.kernel, 1 | 3) {
            return Err(Error::Config(format!("kernel {} not in {{1,3}}", self.kernel)));
        }
        if self.kernel == 3 && self.stride == 1 && self.padding != 1 {
            return Err(Error::Config("3x3 stride-1 convolutions must pad by 1".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.stride == 0 {
            return Err(Error::Config(format!("degenerate conv spec {self:?}")));
        }
        Ok(())
    }

    pub fn output_extent(&self, extent: usize) -> Option<usize> {
        crate::kernels::ConvGeom::out_extent(extent, self.kernel, self.stride, self.padding)
    }

    /// Parameter declarations under `prefix` (`.weight`, `.bias`).
    pub fn params(&self, prefix: &str, gain: f64) -> Vec<ParamSpec> {
        let mut v = vec![ParamSpec::new(
            format!("{prefix}.weight"),
            &[self.out_channels, self.in_channels, self.kernel, self.kernel],
            InitKind::FanInNormal { gain },
        )];
        if self.has_bias {
            v.push(ParamSpec::new(format!("{prefix}.bias"), &[self.out_channels], InitKind::Zeros));
        }
        v
    }
}

pub fn conv2d<T: Real>(g: &mut Graph<T>, x: Var, spec: &ConvSpec, params: &ParamVars, prefix: &str) -> Result<Var> {
    spec.validate()?;
    let c = g.shape(x)[0];
    if c != spec.in_channels {
        return Err(Error::shape(
            "conv2d",
            format!("`{prefix}` expects {} input channels, got {c}", spec.in_channels),
        ));
    }
    let w = params.get(&format!("{prefix}.weight"))?;
    let b = if spec.has_bias {
        Some(params.get(&format!("{prefix}.bias"))?)
    } else {
        None
    };
    g.conv2d(x, w, b, spec.stride, spec.padding)
}

pub fn conv2d_relu<T: Real>(g: &mut Graph<T>, x: Var, spec: &ConvSpec, params: &ParamVars, prefix: &str) -> Result<Var> {
    let y = conv2d(g, x, spec, params, prefix)?;
    g.relu(y)
}

/// FC mixing along `axis` (0 or 1) of an `(A,B,C)` tensor with square
/// weight `prefix.weight` and bias `prefix.bias`.
pub fn fc_axis<T: Real>(g: &mut Graph<T>, x: Var, axis: usize, params: &ParamVars, prefix: &str) -> Result<Var> {
    let w = params.get(&format!("{prefix}.weight"))?;
    let b = params.get(&format!("{prefix}.bias"))?;
    g.fc_axis(x, axis, w, Some(b))
}

pub fn fc_params(prefix: &str, n: usize, init: InitKind) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{prefix}.weight"), &[n, n], init),
        ParamSpec::new(format!("{prefix}.bias"), &[n], InitKind::Zeros),
    ]
}

pub fn relu<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    g.relu(x)
}

pub fn sigmoid<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    g.sigmoid(x)
}

/// Half-pixel (align-corners = false) bilinear resampling of a feature map.
pub fn resize_bilinear<T: Real>(g: &mut Graph<T>, x: Var, h: usize, w: usize) -> Result<Var> {
    let s = g.shape(x);
    if s.len() == 3 && s[1] == h && s[2] == w {
        return Ok(x);
    }
    g.resize(x, h, w)
}

pub fn concat_channels<T: Real>(g: &mut Graph<T>, xs: &[Var]) -> Result<Var> {
    g.concat(xs)
}

/// Splits channels `[0, at)` and `[at, C)`.
pub fn split_channels<T: Real>(g: &mut Graph<T>, x: Var, at: usize) -> Result<(Var, Var)> {
    let c = g.shape(x)[0];
    if at == 0 || at >= c {
        return Err(Error::shape("split_channels", format!("split index {at} outside 1..{c}")));
    }
    Ok((g.slice_channels(x, 0, at)?, g.slice_channels(x, at, c - at)?))
}
