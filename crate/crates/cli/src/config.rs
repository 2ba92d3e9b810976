//! Flat `key = value` run configuration with dotted sections
//! (`model.*`, `data.*`, `train.*`, `output.*`).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cmmlp_core::data::AugmentConfig;
use cmmlp_core::loss::LossConfig;
use cmmlp_core::network::{ModelConfig, STAGES};
use cmmlp_core::train::{OptimizerKind, TrainConfig};
use cmmlp_core::Connection;

pub const RESOLVED_NAME: &str = "config.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub init_seed: u64,

    pub data_root: Option<PathBuf>,
    pub split: (u32, u32, u32),
    pub split_seed: u64,

    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: String,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lookahead_k: usize,
    pub lookahead_alpha: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub deterministic: bool,
    pub checkpoint_every: usize,
    pub eval_every: usize,
    pub augment: bool,
    pub augment_cfg: AugmentConfig,
    pub loss: LossConfig,

    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let (beta1, beta2, adam_eps) = match OptimizerKind::adam() {
            OptimizerKind::Adam { beta1, beta2, eps } => (beta1, beta2, eps),
            OptimizerKind::Sgd { .. } => unreachable!(),
        };
        RunConfig {
            model: ModelConfig::default(),
            init_seed: 0,
            data_root: None,
            split: (7, 1, 2),
            split_seed: 0,
            epochs: t.epochs,
            batch_size: t.batch_size,
            optimizer: t.optimizer.name().to_string(),
            lr: t.lr,
            momentum: 0.9,
            beta1,
            beta2,
            adam_eps,
            lookahead_k: t.lookahead_k,
            lookahead_alpha: t.lookahead_alpha,
            clip_norm: t.clip_norm,
            seed: t.seed,
            deterministic: t.deterministic,
            checkpoint_every: t.checkpoint_every,
            eval_every: t.eval_every,
            augment: t.augment.is_some(),
            augment_cfg: AugmentConfig::default(),
            loss: t.loss,
            output_dir: None,
        }
    }
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, got `{v}`")),
    }
}

fn parse_num<N: std::str::FromStr>(v: &str) -> Result<N, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}` as a number"))
}

fn parse_list<N: std::str::FromStr>(v: &str) -> Result<Vec<N>, String> {
    v.split(',').map(|s| parse_num(s.trim())).collect()
}

fn opt_path(v: &str) -> Option<PathBuf> {
    if v.is_empty() {
        None
    } else {
        Some(PathBuf::from(v))
    }
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Sets one key. Unknown keys and malformed values are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        let m = &mut self.model;
        match key {
            "model.image_size" => m.image_size = parse_num(v)?,
            "model.in_channels" => m.in_channels = parse_num(v)?,
            "model.widths" => {
                let w: Vec<usize> = parse_list(v)?;
                m.widths = w
                    .try_into()
                    .map_err(|w: Vec<usize>| format!("expected {STAGES} widths, got {}", w.len()))?;
            }
            "model.decoder_channels" => m.decoder_channels = parse_num(v)?,
            "model.use_mfi" => m.use_mfi = parse_bool(v)?,
            "model.use_acre" => m.use_acre = parse_bool(v)?,
            "model.use_global" => m.use_global = parse_bool(v)?,
            "model.use_local" => m.use_local = parse_bool(v)?,
            "model.connection" => m.connection = Connection::parse(v).map_err(|e| e.to_string())?,
            "model.init_seed" => self.init_seed = parse_num(v)?,
            "data.root" => self.data_root = opt_path(v),
            "data.split" => {
                let r: Vec<u32> = parse_list(v)?;
                match r[..] {
                    [a, b, c] if a > 0 => self.split = (a, b, c),
                    _ => return Err(format!("data.split needs three ratios with a positive first entry, got `{v}`")),
                }
            }
            "data.split_seed" => self.split_seed = parse_num(v)?,
            "train.epochs" => self.epochs = parse_num(v)?,
            "train.batch_size" => self.batch_size = parse_num(v)?,
            "train.optimizer" => match v {
                "adam" | "sgd" => self.optimizer = v.to_string(),
                _ => return Err(format!("optimizer must be `adam` or `sgd`, got `{v}`")),
            },
            "train.lr" => self.lr = parse_num(v)?,
            "train.momentum" => self.momentum = parse_num(v)?,
            "train.beta1" => self.beta1 = parse_num(v)?,
            "train.beta2" => self.beta2 = parse_num(v)?,
            "train.adam_eps" => self.adam_eps = parse_num(v)?,
            "train.lookahead_k" => self.lookahead_k = parse_num(v)?,
            "train.lookahead_alpha" => self.lookahead_alpha = parse_num(v)?,
            "train.clip_norm" => {
                self.clip_norm = if v == "off" { None } else { Some(parse_num(v)?) };
            }
            "train.seed" => self.seed = parse_num(v)?,
            "train.deterministic" => self.deterministic = parse_bool(v)?,
            "train.checkpoint_every" => self.checkpoint_every = parse_num(v)?,
            "train.eval_every" => self.eval_every = parse_num(v)?,
            "train.augment" => self.augment = parse_bool(v)?,
            "train.augment.flip_p" => self.augment_cfg.flip_p = parse_num(v)?,
            "train.augment.rotation_deg" => self.augment_cfg.rotation_deg = parse_num(v)?,
            "train.augment.translate" => self.augment_cfg.translate = parse_num(v)?,
            "train.augment.scale_min" => self.augment_cfg.scale.0 = parse_num(v)?,
            "train.augment.scale_max" => self.augment_cfg.scale.1 = parse_num(v)?,
            "train.loss.kernel_size" => self.loss.kernel_size = parse_num(v)?,
            "train.loss.gain" => self.loss.gain = parse_num(v)?,
            "output.dir" => self.output_dir = opt_path(v),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let join = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("model.image_size", m.image_size.to_string()),
            ("model.in_channels", m.in_channels.to_string()),
            ("model.widths", join(&m.widths)),
            ("model.decoder_channels", m.decoder_channels.to_string()),
            ("model.use_mfi", m.use_mfi.to_string()),
            ("model.use_acre", m.use_acre.to_string()),
            ("model.use_global", m.use_global.to_string()),
            ("model.use_local", m.use_local.to_string()),
            ("model.connection", m.connection.name().to_string()),
            ("model.init_seed", self.init_seed.to_string()),
            ("data.root", show_path(&self.data_root)),
            ("data.split", format!("{},{},{}", self.split.0, self.split.1, self.split.2)),
            ("data.split_seed", self.split_seed.to_string()),
            ("train.epochs", self.epochs.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.optimizer", self.optimizer.clone()),
            ("train.lr", self.lr.to_string()),
            ("train.momentum", self.momentum.to_string()),
            ("train.beta1", self.beta1.to_string()),
            ("train.beta2", self.beta2.to_string()),
            ("train.adam_eps", self.adam_eps.to_string()),
            ("train.lookahead_k", self.lookahead_k.to_string()),
            ("train.lookahead_alpha", self.lookahead_alpha.to_string()),
            ("train.clip_norm", self.clip_norm.map_or("off".to_string(), |c| c.to_string())),
            ("train.seed", self.seed.to_string()),
            ("train.deterministic", self.deterministic.to_string()),
            ("train.checkpoint_every", self.checkpoint_every.to_string()),
            ("train.eval_every", self.eval_every.to_string()),
            ("train.augment", self.augment.to_string()),
            ("train.augment.flip_p", self.augment_cfg.flip_p.to_string()),
            ("train.augment.rotation_deg", self.augment_cfg.rotation_deg.to_string()),
            ("train.augment.translate", self.augment_cfg.translate.to_string()),
            ("train.augment.scale_min", self.augment_cfg.scale.0.to_string()),
            ("train.augment.scale_max", self.augment_cfg.scale.1.to_string()),
            ("train.loss.kernel_size", self.loss.kernel_size.to_string()),
            ("train.loss.gain", self.loss.gain.to_string()),
            ("output.dir", show_path(&self.output_dir)),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut section = "";
        for (k, v) in self.entries() {
            let head = k.split('.').next().unwrap_or("");
            if head != section {
                if !section.is_empty() {
                    s.push('\n');
                }
                section = head;
            }
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Parses config text on top of the defaults. Duplicate keys within one
    /// text are rejected.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(format!("line {}: duplicate key `{k}`", n + 1));
            }
            self.set(k, v).map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), String> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| format!("override `{o}` is not `key=value`"))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn optimizer_kind(&self) -> OptimizerKind {
        match self.optimizer.as_str() {
            "sgd" => OptimizerKind::Sgd { momentum: self.momentum },
            _ => OptimizerKind::Adam {
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer_kind(),
            lr: self.lr,
            lookahead_k: self.lookahead_k,
            lookahead_alpha: self.lookahead_alpha,
            clip_norm: self.clip_norm,
            seed: self.seed,
            deterministic: self.deterministic,
            checkpoint_every: self.checkpoint_every,
            eval_every: self.eval_every,
            augment: self.augment.then_some(self.augment_cfg),
            loss: self.loss,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| e.to_string())?;
        self.train_config().validate().map_err(|e| e.to_string())
    }
}
