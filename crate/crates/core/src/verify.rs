//! Finite-difference gradient verification suites over every primitive op,
//! every composite block and the full network, shared by the `gradcheck`
//! command and the test suites. All checks run in `f64`. Primitives use the
//! two-point stencil; composites use the four-point stencil because deep
//! graphs accumulate enough roundoff to swamp small two-point estimates.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acre::{self, AcreConfig};
use crate::autodiff::{gradcheck, gradcheck_widened, Bindings, Graph, GradcheckOptions, Stencil, Var};
use crate::error::{Error, Result};
use crate::loss::{self, LossConfig};
use crate::mfi::{self, Connection, MfiConfig};
use crate::network::{self, ModelConfig};
use crate::params::{ParamSpec, ParamStore, ParamVars};
use crate::partition;
use crate::tensor::{Real, Tensor};

pub const PRIMITIVE_TOLERANCE: f64 = 1e-5;
pub const COMPOSITE_TOLERANCE: f64 = 1e-4;
/// Elements probed per leaf in composite checks.
const COMPOSITE_SAMPLES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Primitive,
    Block,
    Full,
}

impl Scope {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "primitive" => Ok(Scope::Primitive),
            "block" => Ok(Scope::Block),
            "full" => Ok(Scope::Full),
            other => Err(Error::Config(format!("unknown gradcheck scope `{other}` (primitive|block|full)"))),
        }
    }

    pub fn default_tolerance(self) -> f64 {
        match self {
            Scope::Primitive => PRIMITIVE_TOLERANCE,
            _ => COMPOSITE_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    pub max_rel_err: f64,
    /// Leaf holding the largest error.
    pub worst_leaf: String,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values in `±[0.1, 1)`, kept away from ReLU kinks at zero.
pub fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Randomizes every parameter (including identity-initialized mixing
/// weights and zero biases) so checks do not sit on special points.
pub fn random_params(specs: &[ParamSpec], seed: u64, scale: f64) -> Result<ParamStore<f64>> {
    let mut store = ParamStore::initialize(specs, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, t) in store.iter_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-scale..scale);
        }
    }
    Ok(store)
}

fn check<T: Real>(name: &str, g: &mut Graph<T>, out: Var, tolerance: f64, max_elements: Option<usize>, stencil: Stencil) -> Result<CaseResult> {
    let bindings = g.bindings();
    let leaves: Vec<String> = g.backward(out)?.into_keys().collect();
    let mut result = CaseResult {
        name: name.to_string(),
        max_rel_err: 0.0,
        worst_leaf: String::new(),
        checked: 0,
        skipped_kinks: 0,
        tolerance,
        pass: true,
    };
    for (i, leaf) in leaves.iter().enumerate() {
        let opts = GradcheckOptions {
            tolerance,
            max_elements,
            seed: i as u64,
            stencil,
            ..Default::default()
        };
        let r = gradcheck(g, out, &bindings, leaf, &opts)?;
        result.checked += r.checked;
        result.skipped_kinks += r.skipped_kinks;
        result.pass &= r.pass;
        if r.max_rel_err > result.max_rel_err || result.worst_leaf.is_empty() {
            result.max_rel_err = result.max_rel_err.max(r.max_rel_err);
            result.worst_leaf = r.leaf;
        }
    }
    Ok(result)
}

/// `Σ y ⊙ R` for a fixed random `R` with `|R| >= 0.1`, so every output
/// element carries a distinct cotangent of usable size.
fn contract<T: Real>(g: &mut Graph<T>, y: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let r = away_from_zero(g.shape(y), rng).cast();
    let r = g.constant(r);
    let p = g.mul(y, r)?;
    g.sum(p)
}

type Build<T> = fn(&mut Graph<T>, &[usize], &mut ChaCha8Rng) -> Result<Var>;

fn leaf<T: Real>(g: &mut Graph<T>, name: &str, t: Tensor<f64>) -> Result<Var> {
    g.param(name, t.cast())
}

fn primitive_builds<T: Real>() -> Vec<(&'static str, Build<T>)> {
    vec![
        ("add", |g, s, r| {
            let a = leaf(g, "a", uniform(s, -1.0, 1.0, r))?;
            let b = leaf(g, "b", uniform(s, -1.0, 1.0, r))?;
            g.add(a, b)
        }),
        ("sub", |g, s, r| {
            let a = leaf(g, "a", uniform(s, -1.0, 1.0, r))?;
            let b = leaf(g, "b", uniform(s, -1.0, 1.0, r))?;
            g.sub(a, b)
        }),
        ("mul", |g, s, r| {
            let a = leaf(g, "a", uniform(s, -1.0, 1.0, r))?;
            let b = leaf(g, "b", uniform(s, -1.0, 1.0, r))?;
            g.mul(a, b)
        }),
        ("div", |g, s, r| {
            let a = leaf(g, "a", uniform(s, -1.0, 1.0, r))?;
            let b = leaf(g, "b", uniform(s, 0.5, 2.0, r))?;
            g.div(a, b)
        }),
        ("scale", |g, s, r| {
            let a = leaf(g, "a", uniform(s, -1.0, 1.0, r))?;
            g.scale(a, T::lit(-1.7))
        }),
        ("shift", |g, s, r| {
            let a = leaf(g, "a", uniform(s, -1.0, 1.0, r))?;
            g.shift(a, T::lit(0.3))
        }),
        ("relu", |g, s, r| {
            let a = leaf(g, "a", away_from_zero(s, r))?;
            g.relu(a)
        }),
        ("sigmoid", |g, s, r| {
            let a = leaf(g, "a", uniform(s, -2.0, 2.0, r))?;
            g.sigmoid(a)
        }),
        ("sum", |g, s, r| {
            let a = leaf(g, "a", uniform(s, -1.0, 1.0, r))?;
            let y = g.sum(a)?;
            g.scale(y, T::lit(0.5))
        }),
        ("mean", |g, s, r| {
            let a = leaf(g, "a", uniform(s, -1.0, 1.0, r))?;
            g.mean(a)
        }),
        ("softmax", |g, s, r| {
            let a = leaf(g, "a", uniform(s, -2.0, 2.0, r))?;
            g.softmax(a)
        }),
        ("batch_matmul", |g, s, r| {
            let (b, m, k) = (s[0], s[1], s[2]);
            let a = leaf(g, "a", uniform(&[b, m, k], -1.0, 1.0, r))?;
            let c = leaf(g, "b", uniform(&[b, k, m + 1], -1.0, 1.0, r))?;
            g.bmm(a, c)
        }),
        ("conv3x3", |g, s, r| {
            let x = leaf(g, "x", uniform(s, -1.0, 1.0, r))?;
            let w = leaf(g, "w", uniform(&[2, s[0], 3, 3], -0.5, 0.5, r))?;
            let b = leaf(g, "b", uniform(&[2], -0.5, 0.5, r))?;
            g.conv2d(x, w, Some(b), 1, 1)
        }),
        ("conv3x3_stride2", |g, s, r| {
            let x = leaf(g, "x", uniform(s, -1.0, 1.0, r))?;
            let w = leaf(g, "w", uniform(&[3, s[0], 3, 3], -0.5, 0.5, r))?;
            let b = leaf(g, "b", uniform(&[3], -0.5, 0.5, r))?;
            g.conv2d(x, w, Some(b), 2, 1)
        }),
        ("conv1x1", |g, s, r| {
            let x = leaf(g, "x", uniform(s, -1.0, 1.0, r))?;
            let w = leaf(g, "w", uniform(&[2, s[0], 1, 1], -0.5, 0.5, r))?;
            g.conv2d(x, w, None, 1, 0)
        }),
        ("fc_axis0", |g, s, r| {
            let x = leaf(g, "x", uniform(s, -1.0, 1.0, r))?;
            let w = leaf(g, "w", uniform(&[s[0], s[0]], -1.0, 1.0, r))?;
            let b = leaf(g, "b", uniform(&[s[0]], -1.0, 1.0, r))?;
            g.fc_axis(x, 0, w, Some(b))
        }),
        ("fc_axis1", |g, s, r| {
            let x = leaf(g, "x", uniform(s, -1.0, 1.0, r))?;
            let w = leaf(g, "w", uniform(&[s[1], s[1]], -1.0, 1.0, r))?;
            let b = leaf(g, "b", uniform(&[s[1]], -1.0, 1.0, r))?;
            g.fc_axis(x, 1, w, Some(b))
        }),
        ("resize_up", |g, s, r| {
            let x = leaf(g, "x", uniform(s, -1.0, 1.0, r))?;
            g.resize(x, 2 * s[1], 2 * s[2])
        }),
        ("resize_down", |g, s, r| {
            let x = leaf(g, "x", uniform(s, -1.0, 1.0, r))?;
            g.resize(x, s[1] / 2, (s[2] / 2).max(1))
        }),
        ("concat", |g, s, r| {
            let a = leaf(g, "a", uniform(s, -1.0, 1.0, r))?;
            let b = leaf(g, "b", uniform(&[1, s[1], s[2]], -1.0, 1.0, r))?;
            g.concat(&[a, b, a])
        }),
        ("slice_channels", |g, s, r| {
            let a = leaf(g, "a", uniform(s, -1.0, 1.0, r))?;
            g.slice_channels(a, 1, s[0] - 1)
        }),
        ("grid_gather", |g, s, r| {
            let x = leaf(g, "x", uniform(s, -1.0, 1.0, r))?;
            partition::grid_var(g, x, 2)
        }),
        ("block_gather", |g, s, r| {
            let x = leaf(g, "x", uniform(s, -1.0, 1.0, r))?;
            partition::block_var(g, x, 2)
        }),
        ("gather_repeated", |g, s, r| {
            let x = leaf(g, "x", uniform(s, -1.0, 1.0, r))?;
            let n: usize = s.iter().product();
            let index: Arc<[usize]> = (0..n).map(|i| (i * 7) % n).chain(0..3).collect();
            g.gather(x, index, vec![n + 3])
        }),
        ("permute", |g, s, r| {
            let x = leaf(g, "x", uniform(s, -1.0, 1.0, r))?;
            g.permute(x, &[2, 0, 1])
        }),
        ("reshape", |g, s, r| {
            let x = leaf(g, "x", uniform(s, -1.0, 1.0, r))?;
            g.reshape(x, &[s[0] * s[1], s[2]])
        }),
        ("repeat_channels", |g, s, r| {
            let x = leaf(g, "x", uniform(&[1, s[1], s[2]], -1.0, 1.0, r))?;
            g.repeat_channels(x, 3)
        }),
        ("bce_logits", |g, s, r| {
            let x = leaf(g, "x", uniform(s, -3.0, 3.0, r))?;
            let t = Tensor::from_fn(s, |_| if r.gen_bool(0.5) { 1.0 } else { 0.0 });
            let t = g.constant(t.cast());
            g.bce_logits(x, t)
        }),
    ]
}

/// Three `(C,H,W)` shapes with even spatial extents.
pub const PRIMITIVE_SHAPES: [[usize; 3]; 3] = [[2, 2, 2], [3, 4, 6], [2, 8, 4]];

pub fn primitive_suite(tolerance: f64) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for (name, build) in primitive_builds::<f64>() {
        for (k, shape) in PRIMITIVE_SHAPES.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + k as u64);
            let mut g = Graph::new();
            let y = build(&mut g, shape, &mut rng)?;
            let loss = if g.value(y).is_scalar() { y } else { contract(&mut g, y, &mut rng)? };
            let label = format!("{name} {}x{}x{}", shape[0], shape[1], shape[2]);
            out.push(check(&label, &mut g, loss, tolerance, None, Stencil::TwoPoint)?);
        }
    }
    Ok(out)
}

/// The primitive cases with gradients computed in training precision
/// (`f32`), checked against central differences of the same cases in `f64`.
pub fn primitive_suite_training(tolerance: f64) -> Result<Vec<CaseResult>> {
    let narrow_builds = primitive_builds::<f32>();
    let wide_builds = primitive_builds::<f64>();
    let mut out = Vec::new();
    for ((name, narrow_build), (_, wide_build)) in narrow_builds.into_iter().zip(wide_builds) {
        for (k, shape) in PRIMITIVE_SHAPES.iter().enumerate() {
            let seed = 1000 + k as u64;
            let mut g = Graph::<f32>::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = narrow_build(&mut g, shape, &mut rng)?;
            let loss = if g.value(y).is_scalar() { y } else { contract(&mut g, y, &mut rng)? };
            let mut wide = Graph::<f64>::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let wy = wide_build(&mut wide, shape, &mut rng)?;
            let wide_loss = if wide.value(wy).is_scalar() { wy } else { contract(&mut wide, wy, &mut rng)? };
            // Same leaf values in both precisions.
            let shared: Bindings<f64> = g.bindings().into_iter().map(|(k, v)| (k, v.cast())).collect();
            wide.forward(&shared)?;

            let label = format!("{name} {}x{}x{}", shape[0], shape[1], shape[2]);
            let mut result = CaseResult {
                name: label,
                max_rel_err: 0.0,
                worst_leaf: String::new(),
                checked: 0,
                skipped_kinks: 0,
                tolerance,
                pass: true,
            };
            for leaf in g.backward(loss)?.into_keys() {
                let opts = GradcheckOptions::with_tolerance(tolerance);
                let r = gradcheck_widened(&mut g, loss, &mut wide, wide_loss, &leaf, &opts)?;
                result.checked += r.checked;
                result.skipped_kinks += r.skipped_kinks;
                result.pass &= r.pass;
                if r.max_rel_err > result.max_rel_err || result.worst_leaf.is_empty() {
                    result.max_rel_err = result.max_rel_err.max(r.max_rel_err);
                    result.worst_leaf = r.leaf;
                }
            }
            out.push(result);
        }
    }
    Ok(out)
}

fn block_case(
    name: &str,
    specs: Vec<ParamSpec>,
    seed: u64,
    tolerance: f64,
    body: impl FnOnce(&mut Graph<f64>, &ParamVars, &mut ChaCha8Rng) -> Result<Var>,
) -> Result<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = random_params(&specs, seed, 0.2)?;
    let mut g = Graph::new();
    let vars = params.bind(&mut g)?;
    let y = body(&mut g, &vars, &mut rng)?;
    let loss = if g.value(y).is_scalar() { y } else { contract(&mut g, y, &mut rng)? };
    check(name, &mut g, loss, tolerance, Some(COMPOSITE_SAMPLES), Stencil::FourPoint)
}

pub fn block_suite(tolerance: f64) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    let (c, side) = (4, 8);

    out.push(block_case(
        "global_mlp",
        crate::nn::fc_params("gm", 16, crate::params::InitKind::Identity),
        1,
        tolerance,
        |g, p, r| {
            let x = g.param("x", uniform(&[2, side, side], -1.0, 1.0, r))?;
            mfi::global_mlp(g, x, 4, p, "gm")
        },
    )?);
    out.push(block_case(
        "local_mlp",
        crate::nn::fc_params("lm", 4, crate::params::InitKind::Identity),
        2,
        tolerance,
        |g, p, r| {
            let x = g.param("x", uniform(&[2, side, side], -1.0, 1.0, r))?;
            mfi::local_mlp(g, x, 2, p, "lm")
        },
    )?);

    let cfg = MfiConfig::new(c, side)?;
    let stage = cfg.schedule.stages()[0];
    let mut cascade_specs = crate::nn::fc_params("cm.global", stage.0 * stage.0, crate::params::InitKind::Identity);
    cascade_specs.extend(crate::nn::fc_params("cm.local", stage.1 * stage.1, crate::params::InitKind::Identity));
    out.push(block_case("cascade_mlp", cascade_specs, 3, tolerance, |g, p, r| {
        let x = g.param("x", uniform(&[2, side, side], -1.0, 1.0, r))?;
        mfi::cascade_mlp(g, x, stage, &cfg, p, "cm")
    })?);

    for (k, conn) in [Connection::Series, Connection::ParallelMlp, Connection::ParallelCascade].into_iter().enumerate() {
        let mut cfg = MfiConfig::new(c, side)?;
        cfg.connection = conn;
        let specs = cfg.param_specs("mfi");
        out.push(block_case(&format!("mfi_block {}", conn.name()), specs, 10 + k as u64, tolerance, |g, p, r| {
            let x = g.param("x", uniform(&[c, side, side], -1.0, 1.0, r))?;
            mfi::mfi_block(g, x, &cfg, p, "mfi")
        })?);
    }

    let acfg = AcreConfig { channels: c };
    out.push(block_case("axial_attention", acfg.attention_specs("attn"), 20, tolerance, |g, p, r| {
        let x = g.param("x", uniform(&[c, 4, 6], -1.0, 1.0, r))?;
        acre::axial_attention(g, x, p, "attn")
    })?);
    out.push(block_case("acre_block", acfg.param_specs("acre"), 21, tolerance, |g, p, r| {
        let x = g.param("x", uniform(&[c, 6, 6], -1.0, 1.0, r))?;
        let m = g.param("m", uniform(&[1, 3, 3], -2.0, 2.0, r))?;
        acre::acre_block(g, x, m, &acfg, p, "acre")
    })?);

    let model = tiny_model(64);
    let pd_specs: Vec<ParamSpec> = model
        .param_specs()?
        .into_iter()
        .filter(|s| s.name.starts_with("pd."))
        .collect();
    out.push(block_case("partial_decode", pd_specs, 30, tolerance, |g, p, r| {
        let f1 = g.param("f1", uniform(&[model.branch_channels(1), 2, 2], -1.0, 1.0, r))?;
        let f2 = g.param("f2", uniform(&[model.branch_channels(2), 4, 4], -1.0, 1.0, r))?;
        let f3 = g.param("f3", uniform(&[model.branch_channels(3), 8, 8], -1.0, 1.0, r))?;
        network::partial_decode(g, f1, f2, f3, &model, p)
    })?);

    out.push(block_case("weighted_bce_iou", Vec::new(), 40, tolerance, |g, _, r| {
        let target = random_mask(16, r);
        let m = g.param("m", uniform(&[1, 16, 16], -3.0, 3.0, r))?;
        let (iou, bce) = loss::weighted_bce_iou(g, m, &target, &LossConfig::default())?;
        g.add(iou, bce)
    })?);
    out.push(block_case("total_loss", Vec::new(), 41, tolerance, |g, _, r| {
        let target = random_mask(16, r);
        let masks = [
            g.param("m0", uniform(&[1, 2, 2], -3.0, 3.0, r))?,
            g.param("m1", uniform(&[1, 4, 4], -3.0, 3.0, r))?,
            g.param("m2", uniform(&[1, 8, 8], -3.0, 3.0, r))?,
            g.param("m3", uniform(&[1, 16, 16], -3.0, 3.0, r))?,
        ];
        Ok(loss::total_loss(g, &target, &masks, &LossConfig::default())?.0)
    })?);
    Ok(out)
}

/// Blocky random binary mask with foreground and background present.
pub fn random_mask(side: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let (cy, cx) = (rng.gen_range(0.3..0.7) * side as f64, rng.gen_range(0.3..0.7) * side as f64);
    let rad = rng.gen_range(0.2..0.35) * side as f64;
    Tensor::from_fn(&[1, side, side], |i| {
        let (y, x) = ((i / side) as f64 + 0.5, (i % side) as f64 + 0.5);
        if (y - cy).hypot(x - cx) <= rad {
            1.0
        } else {
            0.0
        }
    })
}

/// Smallest widths the assembly accepts with every block enabled.
pub fn tiny_model(size: usize) -> ModelConfig {
    ModelConfig {
        image_size: size,
        widths: [2, 2, 4, 4, 4],
        decoder_channels: 2,
        ..ModelConfig::default()
    }
}

pub fn full_suite(tolerance: f64) -> Result<Vec<CaseResult>> {
    let model = tiny_model(64);
    let specs = model.param_specs()?;
    let mut out = Vec::new();
    out.push(block_case("forward_full 64x64", specs, 50, tolerance, |g, p, r| {
        let x = g.param("image", uniform(&[3, 64, 64], 0.0, 1.0, r))?;
        let outs = network::forward_full(g, x, &model, p)?;
        let target = random_mask(64, r);
        let (total, _) = loss::total_loss(g, &target, &outs.masks, &LossConfig::default())?;
        let final_term = contract(g, outs.prob, r)?;
        g.add(total, final_term)
    })?);
    Ok(out)
}

pub fn run(scope: Scope, tolerance: Option<f64>) -> Result<Vec<CaseResult>> {
    let tol = tolerance.unwrap_or(scope.default_tolerance());
    match scope {
        Scope::Primitive => primitive_suite(tol),
        Scope::Block => block_suite(tol),
        Scope::Full => full_suite(tol),
    }
}
