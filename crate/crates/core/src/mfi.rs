//! Multi-scale feature interaction: global/local token-mixing MLPs, the
//! cascade that chains them over shrinking grid factors, and the
//! two-branch block with multiplicative cross gating.
//!
//! Mixing weights are shared across channels and across the non-mixed
//! axis, so channels are never mixed before the final fusion convolution.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{self, ConvSpec};
use crate::params::{InitKind, ParamSpec, ParamVars};
use crate::partition::{block_var, grid_var, unblock_var, ungrid_var};
use crate::tensor::Real;

/// `(g_k, b_k)` pairs with `g_k * b_k == side` and strictly decreasing `g`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CascadeSchedule {
    side: usize,
    stages: Vec<(usize, usize)>,
}

impl CascadeSchedule {
    pub fn new(side: usize, stages: Vec<(usize, usize)>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Config("cascade schedule needs at least one stage".into()));
        }
        for &(g, b) in &stages {
            if g * b != side {
                return Err(Error::Config(format!("stage (g={g}, b={b}) violates g*b == {side}")));
            }
        }
        if stages.windows(2).any(|w| w[1].0 >= w[0].0) {
            return Err(Error::Config(format!("grid factors must strictly decrease: {stages:?}")));
        }
        Ok(CascadeSchedule { side, stages })
    }

    /// `K = min(3, log2(S) - 1)` stages (at least one) with `g_k = S / 2^k`,
    /// `b_k = 2^k`. For `S = 16` this is `g = {8,4,2}`, `b = {2,4,8}`.
    pub fn adaptive(side: usize) -> Result<Self> {
        if side < 2 {
            return Err(Error::Config(format!("feature side {side} too small for mixing")));
        }
        let log2 = side.trailing_zeros() as usize;
        if log2 == 0 {
            return Self::new(side, vec![(side, 1)]);
        }
        let k = log2.saturating_sub(1).clamp(1, 3);
        Self::new(side, (1..=k).map(|i| (side >> i, 1 << i)).collect())
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn stages(&self) -> &[(usize, usize)] {
        &self.stages
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }
}

/// How global/local MLPs and cascades are wired inside a branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connection {
    /// Global then local inside each cascade, cascades chained.
    #[default]
    Series,
    /// Global and local in parallel inside each cascade (MFI-PP).
    ParallelMlp,
    /// Cascades in parallel on the branch input, each internally series (MFI-CP).
    ParallelCascade,
}

impl Connection {
    pub fn name(self) -> &'static str {
        match self {
            Connection::Series => "series",
            Connection::ParallelMlp => "pp",
            Connection::ParallelCascade => "cp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "series" => Ok(Connection::Series),
            "pp" | "mfi-pp" => Ok(Connection::ParallelMlp),
            "cp" | "mfi-cp" => Ok(Connection::ParallelCascade),
            other => Err(Error::Config(format!("unknown connection variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MfiConfig {
    pub channels: usize,
    pub schedule: CascadeSchedule,
    pub connection: Connection,
    pub use_global: bool,
    pub use_local: bool,
}

impl MfiConfig {
    pub fn new(channels: usize, side: usize) -> Result<Self> {
        Ok(MfiConfig {
            channels,
            schedule: CascadeSchedule::adaptive(side)?,
            connection: Connection::Series,
            use_global: true,
            use_local: true,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels < 2 || !self.channels.is_multiple_of(2) {
            return Err(Error::Config(format!("MFI needs an even channel count, got {}", self.channels)));
        }
        Ok(())
    }

    /// Mixing weights start as (scaled) identity so every branch passes its
    /// input through unchanged at initialization: parallel mixers and
    /// parallel cascades are scaled down by the number of summed paths.
    pub fn param_specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let scaled = |k: usize| {
            if k == 1 {
                InitKind::Identity
            } else {
                InitKind::ScaledIdentity(1.0 / k as f64)
            }
        };
        let k = self.schedule.len();
        // Within a series cascade only the first mixer carries the factor.
        let (global_init, local_init) = match (self.connection, self.use_global, self.use_local) {
            (Connection::ParallelMlp, true, true) => (scaled(2), scaled(2)),
            (Connection::ParallelCascade, true, _) => (scaled(k), InitKind::Identity),
            (Connection::ParallelCascade, false, _) => (InitKind::Identity, scaled(k)),
            _ => (InitKind::Identity, InitKind::Identity),
        };
        let mut specs = Vec::new();
        for branch in ["up", "bottom"] {
            for (k, &(g, b)) in self.schedule.stages().iter().enumerate() {
                let stage = format!("{prefix}.{branch}.stage{k}");
                if self.use_global {
                    specs.extend(nn::fc_params(&format!("{stage}.global"), g * g, global_init));
                }
                if self.use_local {
                    specs.extend(nn::fc_params(&format!("{stage}.local"), b * b, local_init));
                }
            }
        }
        specs.extend(self.fusion().params(&format!("{prefix}.fuse"), nn::RELU_GAIN));
        specs
    }

    fn fusion(&self) -> ConvSpec {
        ConvSpec::pointwise(self.channels, self.channels)
    }
}

fn spatial<T: Real>(g: &Graph<T>, x: Var) -> Result<(usize, usize)> {
    match g.shape(x)[..] {
        [_, h, w] => Ok((h, w)),
        ref s => Err(Error::shape("mfi", format!("expected (C,H,W), got {s:?}"))),
    }
}

/// FC across the `g*g` grid patches at each within-patch position.
pub fn global_mlp<T: Real>(g: &mut Graph<T>, x: Var, factor: usize, params: &ParamVars, prefix: &str) -> Result<Var> {
    let (h, w) = spatial(g, x)?;
    let t = grid_var(g, x, factor)?;
    let t = nn::fc_axis(g, t, 0, params, prefix)?;
    ungrid_var(g, t, factor, h, w)
}

/// FC across the `b*b` positions inside each block.
pub fn local_mlp<T: Real>(g: &mut Graph<T>, x: Var, size: usize, params: &ParamVars, prefix: &str) -> Result<Var> {
    let (h, w) = spatial(g, x)?;
    let t = block_var(g, x, size)?;
    let t = nn::fc_axis(g, t, 1, params, prefix)?;
    unblock_var(g, t, size, h, w)
}

/// One cascade stage: global then local, each followed by ReLU (or both in
/// parallel for [`Connection::ParallelMlp`]).
pub fn cascade_mlp<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    (gf, bs): (usize, usize),
    cfg: &MfiConfig,
    params: &ParamVars,
    prefix: &str,
) -> Result<Var> {
    let global = |g: &mut Graph<T>, x: Var| -> Result<Var> {
        let y = global_mlp(g, x, gf, params, &format!("{prefix}.global"))?;
        g.relu(y)
    };
    let local = |g: &mut Graph<T>, x: Var| -> Result<Var> {
        let y = local_mlp(g, x, bs, params, &format!("{prefix}.local"))?;
        g.relu(y)
    };
    match (cfg.connection, cfg.use_global, cfg.use_local) {
        (_, false, false) => Ok(x),
        (_, true, false) => global(g, x),
        (_, false, true) => local(g, x),
        (Connection::ParallelMlp, true, true) => {
            let a = global(g, x)?;
            let b = local(g, x)?;
            g.add(a, b)
        }
        (_, true, true) => {
            let y = global(g, x)?;
            local(g, y)
        }
    }
}

fn branch<T: Real>(g: &mut Graph<T>, x: Var, cfg: &MfiConfig, params: &ParamVars, prefix: &str) -> Result<Var> {
    let stages = cfg.schedule.stages();
    match cfg.connection {
        Connection::ParallelCascade => {
            let mut acc: Option<Var> = None;
            for (k, &stage) in stages.iter().enumerate() {
                let y = cascade_mlp(g, x, stage, cfg, params, &format!("{prefix}.stage{k}"))?;
                acc = Some(match acc {
                    Some(a) => g.add(a, y)?,
                    None => y,
                });
            }
            Ok(acc.expect("schedule is non-empty"))
        }
        _ => stages.iter().enumerate().try_fold(x, |y, (k, &stage)| {
            cascade_mlp(g, y, stage, cfg, params, &format!("{prefix}.stage{k}"))
        }),
    }
}

/// Split, cascade each half, then cross-gate:
/// `F''_bottom = F_bottom + P`, `F''_up = F_up + P + F''_bottom` with
/// `P = cascade(F_up) * cascade(F_bottom)` elementwise.
/// Returns `(F''_up, F''_bottom)`.
pub fn mfi_pre_fusion<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    cfg: &MfiConfig,
    params: &ParamVars,
    prefix: &str,
) -> Result<(Var, Var)> {
    cfg.validate()?;
    let s = g.shape(x).to_vec();
    if s.len() != 3 || s[0] != cfg.channels || s[1] != cfg.schedule.side() || s[2] != cfg.schedule.side() {
        return Err(Error::shape(
            "mfi_block",
            format!(
                "input {s:?} does not match {} channels at side {}",
                cfg.channels,
                cfg.schedule.side()
            ),
        ));
    }
    let (up, bottom) = nn::split_channels(g, x, cfg.channels / 2)?;
    let up_mixed = branch(g, up, cfg, params, &format!("{prefix}.up"))?;
    let bottom_mixed = branch(g, bottom, cfg, params, &format!("{prefix}.bottom"))?;
    let gate = g.mul(bottom_mixed, up_mixed)?;
    let bottom_out = g.add(bottom, gate)?;
    let up_out = g.add(up, gate)?;
    let up_out = g.add(up_out, bottom_out)?;
    Ok((up_out, bottom_out))
}

/// Full MFI block: `(C,S,S) -> (C,S,S)`.
pub fn mfi_block<T: Real>(g: &mut Graph<T>, x: Var, cfg: &MfiConfig, params: &ParamVars, prefix: &str) -> Result<Var> {
    let (up, bottom) = mfi_pre_fusion(g, x, cfg, params, prefix)?;
    let joined = nn::concat_channels(g, &[up, bottom])?;
    nn::conv2d_relu(g, joined, &cfg.fusion(), params, &format!("{prefix}.fuse"))
}
