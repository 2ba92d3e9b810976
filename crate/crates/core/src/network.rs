//! Full model: five-stage encoder, partial decoder producing the coarse
//! mask `M0`, three refinement branches (MFI -> ACRE -> mask merge) over
//! the three deepest stages, and the final upsampled probability map.
//!
//! Branch `i` consumes encoder stage `6 - i` (deepest first), so the mask
//! chain runs at 1/32, 1/16, 1/8 and 1/4 of the input resolution.

use std::fmt;

use crate::acre::{self, AcreConfig};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::mfi::{self, Connection, MfiConfig};
use crate::nn::{self, ConvSpec};
use crate::params::{ParamSpec, ParamStore, ParamVars};
use crate::tensor::{Real, Tensor};

pub const STAGES: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Square input side; divisible by 32 and at least 64.
    pub image_size: usize,
    pub in_channels: usize,
    pub widths: [usize; STAGES],
    pub decoder_channels: usize,
    pub use_mfi: bool,
    pub use_acre: bool,
    pub use_global: bool,
    pub use_local: bool,
    pub connection: Connection,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 128,
            in_channels: 3,
            widths: [8, 16, 32, 64, 128],
            decoder_channels: 16,
            use_mfi: true,
            use_acre: true,
            use_global: true,
            use_local: true,
            connection: Connection::Series,
        }
    }
}

/// Named configuration toggles from the component ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    Full,
    WithoutMfi,
    WithoutLocal,
    WithoutGlobal,
    WithoutAcre,
    MfiPp,
    MfiCp,
    /// Both MFI and ACRE removed.
    Stripped,
}

impl Setting {
    pub const ALL: [Setting; 8] = [
        Setting::Full,
        Setting::WithoutMfi,
        Setting::WithoutLocal,
        Setting::WithoutGlobal,
        Setting::WithoutAcre,
        Setting::MfiPp,
        Setting::MfiCp,
        Setting::Stripped,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Setting::Full => "full",
            Setting::WithoutMfi => "w/o-MFI",
            Setting::WithoutLocal => "w/o-Local",
            Setting::WithoutGlobal => "w/o-Global",
            Setting::WithoutAcre => "w/o-ACRE",
            Setting::MfiPp => "MFI-PP",
            Setting::MfiCp => "MFI-CP",
            Setting::Stripped => "w/o-MFI+ACRE",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Setting::ALL
            .into_iter()
            .find(|set| set.name().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::Config(format!("unknown setting `{s}`")))
    }

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        match self {
            Setting::Full => {}
            Setting::WithoutMfi => c.use_mfi = false,
            Setting::WithoutLocal => c.use_local = false,
            Setting::WithoutGlobal => c.use_global = false,
            Setting::WithoutAcre => c.use_acre = false,
            Setting::MfiPp => c.connection = Connection::ParallelMlp,
            Setting::MfiCp => c.connection = Connection::ParallelCascade,
            Setting::Stripped => {
                c.use_mfi = false;
                c.use_acre = false;
            }
        }
        c
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 64 || !self.image_size.is_multiple_of(32) {
            return Err(Error::Config(format!(
                "image size {} must be a multiple of 32 and at least 64",
                self.image_size
            )));
        }
        if self.in_channels == 0 || self.decoder_channels == 0 || self.widths.contains(&0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.use_mfi {
            for i in 1..=3 {
                let c = self.branch_channels(i);
                if !c.is_multiple_of(2) {
                    return Err(Error::Config(format!("branch {i} width {c} must be even for MFI")));
                }
            }
        }
        Ok(())
    }

    /// Channels of branch feature `F_i`, `i` in `1..=3`.
    pub fn branch_channels(&self, i: usize) -> usize {
        self.widths[STAGES - i]
    }

    /// Side length of `F_i` (and of `M_{i-1}`).
    pub fn branch_side(&self, i: usize) -> usize {
        self.image_size >> (STAGES + 1 - i)
    }

    /// Side length of mask `M_i`, `i` in `0..=3`.
    pub fn mask_side(&self, i: usize) -> usize {
        (self.image_size >> STAGES) << i
    }

    pub fn mfi_config(&self, i: usize) -> Result<MfiConfig> {
        let mut cfg = MfiConfig::new(self.branch_channels(i), self.branch_side(i))?;
        cfg.connection = self.connection;
        cfg.use_global = self.use_global;
        cfg.use_local = self.use_local;
        Ok(cfg)
    }

    fn encoder_convs(&self, stage: usize) -> (ConvSpec, ConvSpec) {
        let cin = if stage == 0 { self.in_channels } else { self.widths[stage - 1] };
        let c = self.widths[stage];
        (ConvSpec::down3(cin, c), ConvSpec::same3(c, c))
    }

    fn decoder_convs(&self) -> DecoderConvs {
        let d = self.decoder_channels;
        DecoderConvs {
            reduce: [1, 2, 3].map(|i| ConvSpec::pointwise(self.branch_channels(i), d)),
            fuse: ConvSpec::same3(3 * d, 1),
            down: ConvSpec::down3(1, 1),
        }
    }

    /// Every learnable tensor, in declaration order.
    pub fn param_specs(&self) -> Result<Vec<ParamSpec>> {
        self.validate()?;
        let mut specs = Vec::new();
        for s in 0..STAGES {
            let (down, conv) = self.encoder_convs(s);
            specs.extend(down.params(&format!("enc.s{}.down", s + 1), nn::RELU_GAIN));
            specs.extend(conv.params(&format!("enc.s{}.conv", s + 1), nn::RELU_GAIN));
        }
        let dec = self.decoder_convs();
        for (i, r) in dec.reduce.iter().enumerate() {
            specs.extend(r.params(&format!("pd.reduce{}", i + 1), nn::RELU_GAIN));
        }
        specs.extend(dec.fuse.params("pd.fuse", 1.0));
        specs.extend(dec.down.params("pd.down1", 1.0));
        specs.extend(dec.down.params("pd.down2", 1.0));
        for i in 1..=3 {
            let c = self.branch_channels(i);
            if self.use_mfi {
                specs.extend(self.mfi_config(i)?.param_specs(&format!("br{i}.mfi")));
            }
            if self.use_acre {
                specs.extend(AcreConfig { channels: c }.param_specs(&format!("br{i}.acre")));
            } else {
                specs.extend(acre::plain_refine_specs(c, &format!("br{i}.plain")));
            }
            specs.extend(ConvSpec::same3(2, 1).params(&format!("br{i}.merge"), 1.0));
        }
        Ok(specs)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self
            .param_specs()?
            .iter()
            .map(|s| s.shape.iter().product::<usize>())
            .sum())
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        ParamStore::initialize(&self.param_specs()?, seed)
    }
}

struct DecoderConvs {
    reduce: [ConvSpec; 3],
    fuse: ConvSpec,
    down: ConvSpec,
}

/// Outputs of the five encoder stages, shallowest first.
#[derive(Debug, Clone, Copy)]
pub struct Features {
    pub stages: [Var; STAGES],
}

impl Features {
    /// Branch feature `F_i`: `F1` is the deepest stage.
    pub fn branch(&self, i: usize) -> Var {
        self.stages[STAGES - i]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    /// Mask logits `M0..M3` at their native scales.
    pub masks: [Var; 4],
    /// Refined masks `M'0..M'2` produced inside the branches.
    pub refined: [Var; 3],
    /// `sigmoid(M3)` upsampled to the input size.
    pub prob: Var,
}

pub fn encode<T: Real>(g: &mut Graph<T>, image: Var, cfg: &ModelConfig, params: &ParamVars) -> Result<Features> {
    cfg.validate()?;
    let s = g.shape(image).to_vec();
    if s != [cfg.in_channels, cfg.image_size, cfg.image_size] {
        return Err(Error::shape(
            "encode",
            format!(
                "image {s:?} does not match configured ({}, {}, {})",
                cfg.in_channels, cfg.image_size, cfg.image_size
            ),
        ));
    }
    let mut x = image;
    let mut stages = [image; STAGES];
    for (st, slot) in stages.iter_mut().enumerate() {
        let (down, conv) = cfg.encoder_convs(st);
        x = nn::conv2d_relu(g, x, &down, params, &format!("enc.s{}.down", st + 1))?;
        x = nn::conv2d_relu(g, x, &conv, params, &format!("enc.s{}.conv", st + 1))?;
        *slot = x;
    }
    Ok(Features { stages })
}

/// Aggregates `F1..F3` into the coarse mask `M0` at 1/32 scale:
/// channel-matched features are upsampled and multiplied into the next
/// shallower stage, the three paths are concatenated at 1/8, fused to one
/// channel and brought down to 1/32 with two stride-2 convolutions.
pub fn partial_decode<T: Real>(
    g: &mut Graph<T>,
    f1: Var,
    f2: Var,
    f3: Var,
    cfg: &ModelConfig,
    params: &ParamVars,
) -> Result<Var> {
    let dec = cfg.decoder_convs();
    let a1 = nn::conv2d_relu(g, f1, &dec.reduce[0], params, "pd.reduce1")?;
    let a2 = nn::conv2d_relu(g, f2, &dec.reduce[1], params, "pd.reduce2")?;
    let a3 = nn::conv2d_relu(g, f3, &dec.reduce[2], params, "pd.reduce3")?;
    let (s2, s3) = (g.shape(a2)[1], g.shape(a3)[1]);
    let up1 = nn::resize_bilinear(g, a1, s2, s2)?;
    let x2 = g.mul(up1, a2)?;
    let up2 = nn::resize_bilinear(g, x2, s3, s3)?;
    let x3 = g.mul(up2, a3)?;
    let up1_far = nn::resize_bilinear(g, a1, s3, s3)?;
    let joined = nn::concat_channels(g, &[up1_far, up2, x3])?;
    let m = nn::conv2d(g, joined, &dec.fuse, params, "pd.fuse")?;
    let m = nn::conv2d(g, m, &dec.down, params, "pd.down1")?;
    nn::conv2d(g, m, &dec.down, params, "pd.down2")
}

/// One refinement branch: returns `(M'_{i-1}, M_i)`.
pub fn branch_step<T: Real>(
    g: &mut Graph<T>,
    i: usize,
    feature: Var,
    prev_mask: Var,
    cfg: &ModelConfig,
    params: &ParamVars,
) -> Result<(Var, Var)> {
    let c = cfg.branch_channels(i);
    let (h, w) = (g.shape(feature)[1], g.shape(feature)[2]);
    let prev = nn::resize_bilinear(g, prev_mask, h, w)?;
    let mixed = if cfg.use_mfi {
        mfi::mfi_block(g, feature, &cfg.mfi_config(i)?, params, &format!("br{i}.mfi"))?
    } else {
        feature
    };
    let refined = if cfg.use_acre {
        acre::acre_block(g, mixed, prev, &AcreConfig { channels: c }, params, &format!("br{i}.acre"))?
    } else {
        acre::plain_refine(g, mixed, c, params, &format!("br{i}.plain"))?
    };
    let joined = nn::concat_channels(g, &[refined, prev])?;
    let merged = nn::conv2d(g, joined, &ConvSpec::same3(2, 1), params, &format!("br{i}.merge"))?;
    let next = nn::resize_bilinear(g, merged, 2 * h, 2 * w)?;
    Ok((refined, next))
}

pub fn forward_full<T: Real>(g: &mut Graph<T>, image: Var, cfg: &ModelConfig, params: &ParamVars) -> Result<Outputs> {
    let feats = encode(g, image, cfg, params)?;
    let m0 = partial_decode(g, feats.branch(1), feats.branch(2), feats.branch(3), cfg, params)?;
    let mut masks = [m0; 4];
    let mut refined = [m0; 3];
    for i in 1..=3 {
        let (r, next) = branch_step(g, i, feats.branch(i), masks[i - 1], cfg, params)?;
        refined[i - 1] = r;
        masks[i] = next;
    }
    let prob = g.sigmoid(masks[3])?;
    let prob = nn::resize_bilinear(g, prob, cfg.image_size, cfg.image_size)?;
    Ok(Outputs { masks, refined, prob })
}

/// Inference helper: probability map `(1,H,W)` for one image.
pub fn predict<T: Real>(cfg: &ModelConfig, params: &ParamStore<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let mut vars = ParamVars::default();
    for (name, t) in params.iter() {
        vars.insert(name.clone(), g.input(name, t.clone())?);
    }
    let x = g.input("image", image.clone())?;
    let out = forward_full(&mut g, x, cfg, &vars)?;
    Ok(g.value(out.prob).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_helpers() {
        let cfg = ModelConfig::default();
        assert_eq!((0..4).map(|i| cfg.mask_side(i)).collect::<Vec<_>>(), vec![4, 8, 16, 32]);
        assert_eq!((1..=3).map(|i| cfg.branch_side(i)).collect::<Vec<_>>(), vec![4, 8, 16]);
        assert_eq!((1..=3).map(|i| cfg.branch_channels(i)).collect::<Vec<_>>(), vec![128, 64, 32]);
    }

    #[test]
    fn settings_round_trip_names() {
        for s in Setting::ALL {
            assert_eq!(Setting::parse(s.name()).unwrap(), s);
        }
        assert!(Setting::parse("w/o-everything").is_err());
    }

    #[test]
    fn invalid_sizes_rejected() {
        let mut cfg = ModelConfig { image_size: 96 + 16, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
        cfg.image_size = 32;
        assert!(cfg.validate().is_err());
        cfg.image_size = 64;
        cfg.widths = [2, 2, 3, 4, 4];
        assert!(cfg.validate().is_err());
        cfg.use_mfi = false;
        cfg.validate().unwrap();
    }
}
