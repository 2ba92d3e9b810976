//! Optimizers, the LookAhead wrapper, single training steps and the
//! epoch loop with best-checkpoint tracking.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::{self, AugmentConfig, Sample};
use crate::error::{Error, Result};
use crate::loss::{self, LossConfig, LossReport};
use crate::metrics::{self, MetricReport};
use crate::network::{self, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

pub type Grads<T> = BTreeMap<String, Tensor<T>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd { .. } => "sgd",
            OptimizerKind::Adam { .. } => "adam",
        }
    }
}

/// Inner (fast-weight) optimizer with per-parameter state.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub lr: f64,
    steps: u64,
    first: BTreeMap<String, Tensor<T>>,
    second: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            steps: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>) -> Result<()> {
        self.steps += 1;
        let lr = T::lit(self.lr);
        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::MissingParam(format!("no gradient for `{name}`")))?;
            if g.shape() != p.shape() {
                return Err(Error::shape("optimizer", format!("`{name}` gradient {:?} vs {:?}", g.shape(), p.shape())));
            }
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            match self.kind {
                OptimizerKind::Sgd { momentum } => {
                    let mu = T::lit(momentum);
                    for ((w, v), &gi) in p.data_mut().iter_mut().zip(m.data_mut()).zip(g.data()) {
                        *v = mu * *v + gi;
                        *w -= lr * *v;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let s = self
                        .second
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(p.shape()));
                    let (b1, b2, e) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
                    let c1 = T::lit(1.0 - beta1.powi(self.steps as i32));
                    let c2 = T::lit(1.0 - beta2.powi(self.steps as i32));
                    let one = T::one();
                    for (((w, mi), si), &gi) in p.data_mut().iter_mut().zip(m.data_mut()).zip(s.data_mut()).zip(g.data()) {
                        *mi = b1 * *mi + (one - b1) * gi;
                        *si = b2 * *si + (one - b2) * gi * gi;
                        let mhat = *mi / c1;
                        let vhat = *si / c2;
                        *w -= lr * mhat / (vhat.sqrt() + e);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Slow weights pulled toward the fast weights every `k` steps.
#[derive(Debug, Clone)]
pub struct Lookahead<T> {
    pub k: usize,
    pub alpha: f64,
    pub slow: ParamStore<T>,
    counter: usize,
}

impl<T: Real> Lookahead<T> {
    pub fn new(k: usize, alpha: f64, initial: &ParamStore<T>) -> Result<Self> {
        if k == 0 || !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("lookahead needs k >= 1 and alpha in (0,1], got k={k}, alpha={alpha}")));
        }
        Ok(Lookahead {
            k,
            alpha,
            slow: initial.clone(),
            counter: 0,
        })
    }

    /// Call after each inner step. Returns whether a synchronization ran.
    pub fn after_step(&mut self, fast: &mut ParamStore<T>) -> bool {
        self.counter += 1;
        if !self.counter.is_multiple_of(self.k) {
            return false;
        }
        if self.alpha == 1.0 {
            // slow + 1·(fast − slow) is not always bitwise fast in floating point.
            self.slow = fast.clone();
            return true;
        }
        let a = T::lit(self.alpha);
        for (name, s) in self.slow.iter_mut() {
            let f = fast.get_mut(name).expect("fast and slow share names");
            for (sv, fv) in s.data_mut().iter_mut().zip(f.data_mut()) {
                *sv += a * (*fv - *sv);
                *fv = *sv;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub lookahead_k: usize,
    pub lookahead_alpha: f64,
    /// Global-norm gradient clipping threshold; `None` disables it.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub deterministic: bool,
    /// Save a checkpoint every this many epochs (0: only the best/final).
    pub checkpoint_every: usize,
    /// Evaluate the validation set every this many epochs.
    pub eval_every: usize,
    pub augment: Option<AugmentConfig>,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 8,
            optimizer: OptimizerKind::adam(),
            lr: 3e-3,
            lookahead_k: 5,
            lookahead_alpha: 0.5,
            clip_norm: Some(5.0),
            seed: 0,
            deterministic: false,
            checkpoint_every: 0,
            eval_every: 1,
            augment: None,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        if self.lookahead_k == 0 || !(self.lookahead_alpha > 0.0 && self.lookahead_alpha <= 1.0) {
            return Err(Error::Config(format!(
                "lookahead needs k >= 1 and alpha in (0,1], got k={}, alpha={}",
                self.lookahead_k, self.lookahead_alpha
            )));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("clip norm {c} must be positive")));
            }
        }
        self.loss.validate()
    }
}

/// Loss and parameter gradients of one sample.
pub fn sample_gradients<T: Real>(
    model: &ModelConfig,
    params: &ParamStore<T>,
    sample: &Sample,
    loss_cfg: &LossConfig,
) -> Result<(LossReport, Grads<T>)> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g)?;
    let x = g.input("image", sample.image.cast())?;
    let out = network::forward_full(&mut g, x, model, &vars)?;
    let (total, report) = loss::total_loss(&mut g, &sample.mask.cast(), &out.masks, loss_cfg)?;
    if !g.value(total).is_finite() {
        let culprit = g
            .first_non_finite()
            .map(|(i, op)| format!("node #{i} ({op})"))
            .unwrap_or_else(|| "unknown node".into());
        return Err(Error::NonFinite(format!(
            "loss on sample `{}` is not finite; first non-finite tensor: {culprit}",
            sample.id
        )));
    }
    let grads = g.backward(total)?;
    if let Some((name, _)) = grads.iter().find(|(_, t)| !t.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient of `{name}` is not finite on sample `{}`",
            sample.id
        )));
    }
    Ok((report, grads))
}

/// Global L2 norm over every gradient tensor.
pub fn global_norm<T: Real>(grads: &Grads<T>) -> f64 {
    grads
        .values()
        .flat_map(|t| t.data().iter())
        .map(|v| {
            let v = Real::to_f64(*v);
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

pub fn clip_global_norm<T: Real>(grads: &mut Grads<T>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let k = T::lit(max_norm / norm);
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

/// Fast weights, their optimizer, and the LookAhead slow copy.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model: ModelConfig,
    pub config: TrainConfig,
    pub fast: ParamStore<T>,
    pub optimizer: Optimizer<T>,
    pub lookahead: Lookahead<T>,
    pub steps: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: ModelConfig, config: TrainConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        params.validate(&model.param_specs()?)?;
        let lookahead = Lookahead::new(config.lookahead_k, config.lookahead_alpha, &params)?;
        Ok(Trainer {
            optimizer: Optimizer::new(config.optimizer, config.lr),
            lookahead,
            fast: params,
            model,
            config,
            steps: 0,
        })
    }

    /// Weights to evaluate and checkpoint.
    pub fn weights(&self) -> &ParamStore<T> {
        &self.lookahead.slow
    }

    /// One update on `batch`: per-sample forward/backward (possibly in
    /// parallel), gradients averaged in batch order, clipped, applied.
    pub fn step(&mut self, batch: &[Sample]) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::Data("empty training batch".into()));
        }
        if let Err(name) = self.fast.all_finite() {
            return Err(Error::NonFinite(format!("parameter `{name}` is not finite before step {}", self.steps + 1)));
        }
        let (model, fast, loss_cfg) = (&self.model, &self.fast, &self.config.loss);
        let per_sample: Vec<Result<(LossReport, Grads<T>)>> = if self.config.deterministic {
            batch.iter().map(|s| sample_gradients(model, fast, s, loss_cfg)).collect()
        } else {
            batch.par_iter().map(|s| sample_gradients(model, fast, s, loss_cfg)).collect()
        };
        let mut reports = Vec::with_capacity(batch.len());
        let mut sum: Option<Grads<T>> = None;
        for r in per_sample {
            let (report, grads) = r?;
            reports.push(report);
            match &mut sum {
                None => sum = Some(grads),
                Some(acc) => {
                    for (name, g) in grads {
                        let a = acc.get_mut(&name).expect("same parameter set per sample");
                        a.data_mut().iter_mut().zip(g.data()).for_each(|(x, &y)| *x += y);
                    }
                }
            }
        }
        let mut grads = sum.expect("non-empty batch");
        let inv = T::one() / T::lit(batch.len() as f64);
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        if let Some(c) = self.config.clip_norm {
            clip_global_norm(&mut grads, c);
        }
        self.optimizer.step(&mut self.fast, &grads)?;
        self.lookahead.after_step(&mut self.fast);
        self.steps += 1;
        Ok(LossReport::mean(&reports))
    }
}

/// Probability map of every sample, scored against its mask.
pub fn evaluate<T: Real>(model: &ModelConfig, params: &ParamStore<T>, samples: &[Sample]) -> Result<(MetricReport, Vec<MetricReport>)> {
    let per: Vec<MetricReport> = samples
        .par_iter()
        .map(|s| {
            let prob = network::predict(model, params, &s.image.cast::<T>())?;
            metrics::metrics(&prob, &s.mask.cast::<T>(), 0.5)
        })
        .collect::<Result<_>>()?;
    Ok((metrics::aggregate(&per), per))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub loss: LossReport,
    pub val: Option<MetricReport>,
}

#[derive(Debug, Clone)]
pub struct FitResult<T> {
    pub best: ParamStore<T>,
    pub best_epoch: usize,
    pub last: ParamStore<T>,
    pub history: Vec<EpochRecord>,
}

/// Epoch loop. Each epoch shuffles the training set with a seed derived
/// from `(seed, epoch)`. The retained weights are those with the best
/// validation Dice; without a validation set the final weights are kept.
/// `on_epoch` sees every record and the current weights.
pub fn fit<T: Real>(
    model: &ModelConfig,
    config: &TrainConfig,
    init: ParamStore<T>,
    train: &[Sample],
    val: &[Sample],
    on_epoch: &mut dyn FnMut(&EpochRecord, &ParamStore<T>) -> Result<()>,
) -> Result<FitResult<T>> {
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut trainer = Trainer::new(model.clone(), config.clone(), init)?;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParamStore<T>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        let mut reports = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|&i| match &config.augment {
                    Some(aug) => {
                        let seed = config.seed ^ ((trainer.steps as u64) << 20) ^ i as u64;
                        data::augment(&train[i], aug, seed)
                    }
                    None => train[i].clone(),
                })
                .collect();
            reports.push(trainer.step(&batch)?);
        }
        let due = config.eval_every > 0 && (epoch % config.eval_every == 0 || epoch == config.epochs);
        let val_report = if !val.is_empty() && due {
            Some(evaluate(model, trainer.weights(), val)?.0)
        } else {
            None
        };
        if let Some(v) = &val_report {
            if best.as_ref().is_none_or(|(d, _, _)| v.dice > *d) {
                best = Some((v.dice, epoch, trainer.weights().clone()));
            }
        }
        let record = EpochRecord {
            epoch,
            steps: trainer.steps,
            loss: LossReport::mean(&reports),
            val: val_report,
        };
        on_epoch(&record, trainer.weights())?;
        history.push(record);
    }
    let last = trainer.weights().clone();
    let (best, best_epoch) = match best {
        Some((_, e, p)) => (p, e),
        None => (last.clone(), config.epochs),
    };
    Ok(FitResult {
        best,
        best_epoch,
        last,
        history,
    })
}
