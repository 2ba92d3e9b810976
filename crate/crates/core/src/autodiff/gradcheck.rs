//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Bindings, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Finite-difference formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h` with `h = eps^(1/3) * max(1, |x|)`.
    #[default]
    TwoPoint,
    /// `(8[f(x+h) - f(x-h)] - [f(x+2h) - f(x-2h)]) / 12h` with
    /// `h ~ eps^(1/5) * max(1, |x|)`; far less roundoff on deep graphs.
    FourPoint,
}

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Denominator floor: `|a-n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Check a seeded random subset when a leaf has more elements.
    pub max_elements: Option<usize>,
    pub seed: u64,
    pub stencil: Stencil,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            tolerance: 1e-6,
            floor: 1e-5,
            max_elements: None,
            seed: 0,
            stencil: Stencil::TwoPoint,
        }
    }
}

impl GradcheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        GradcheckOptions {
            tolerance,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub leaf: String,
    pub max_rel_err: f64,
    /// Flat index of the worst element.
    pub worst: Option<usize>,
    pub checked: usize,
    /// Elements whose perturbation crossed a ReLU kink; their one-sided
    /// slopes disagree by construction, so they are not compared.
    pub skipped_kinks: usize,
    /// The graph contains a non-differentiable op; nothing was compared.
    pub excluded: bool,
    pub pass: bool,
}

fn excluded(leaf: &str) -> GradcheckReport {
    GradcheckReport {
        leaf: leaf.to_string(),
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        skipped_kinks: 0,
        excluded: true,
        pass: true,
    }
}

fn select_elements(n: usize, opts: &GradcheckOptions) -> Vec<usize> {
    match opts.max_elements {
        Some(m) if m < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut v = sample(&mut rng, n, m).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..n).collect(),
    }
}

fn analytic_gradient<T: Real>(graph: &mut Graph<T>, output: Var, bindings: &Bindings<T>, leaf: &str) -> Result<Tensor<T>> {
    graph.forward(bindings)?;
    graph
        .backward(output)?
        .remove(leaf)
        .ok_or_else(|| Error::Config(format!("leaf `{leaf}` does not require gradients")))
}

/// Central-difference derivative of `output` with respect to each listed
/// element of `leaf`. `None` marks elements whose probes crossed a ReLU
/// kink. The graph is left evaluated at `bindings` on return.
pub fn central_differences<T: Real>(
    graph: &mut Graph<T>,
    output: Var,
    bindings: &Bindings<T>,
    leaf: &str,
    elements: &[usize],
    stencil: Stencil,
) -> Result<Vec<Option<f64>>> {
    let base = bindings
        .get(leaf)
        .ok_or_else(|| Error::MissingBinding { leaf: leaf.to_string() })?
        .clone();
    graph.forward(bindings)?;
    let reference_kinks = graph.kink_pattern();
    let four = stencil == Stencil::FourPoint;
    let step_scale = T::epsilon().to_f64().powf(if four { 0.2 } else { 1.0 / 3.0 });
    let mut probe = bindings.clone();
    let mut out = Vec::with_capacity(elements.len());
    for &i in elements {
        let x = base.data()[i];
        let magnitude = x.to_f64().abs().max(1.0);
        let h = if four {
            // Power of two, so the probe points are exact in most cases.
            T::lit((step_scale * magnitude).log2().round().exp2())
        } else {
            T::lit(step_scale * magnitude)
        };
        let mut evaluate = |v: T| -> Result<(f64, bool)> {
            probe.get_mut(leaf).expect("probe holds leaf").data_mut()[i] = v;
            graph.forward(&probe)?;
            let same = graph.kink_pattern() == reference_kinks;
            Ok((graph.value(output).item().to_f64(), same))
        };
        let (f1p, s1) = evaluate(x + h)?;
        let (f1m, s2) = evaluate(x - h)?;
        // Use the step actually representable in T.
        let d1 = ((x + h) - (x - h)).to_f64() / 2.0;
        let mut smooth = s1 && s2;
        let mut numeric = (f1p - f1m) / (2.0 * d1);
        if four {
            let two = h + h;
            let (f2p, s3) = evaluate(x + two)?;
            let (f2m, s4) = evaluate(x - two)?;
            smooth &= s3 && s4;
            let d2 = ((x + two) - (x - two)).to_f64() / 4.0;
            if d1 == d2 {
                numeric = (8.0 * (f1p - f1m) - (f2p - f2m)) / (12.0 * d1);
            }
        }
        probe.get_mut(leaf).expect("probe holds leaf").data_mut()[i] = x;
        out.push(smooth.then_some(numeric));
    }
    graph.forward(bindings)?;
    Ok(out)
}

fn compare(leaf: &str, analytic: &[f64], numeric: &[Option<f64>], elements: &[usize], opts: &GradcheckOptions) -> GradcheckReport {
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    let mut skipped = 0;
    for (&i, n) in elements.iter().zip(numeric) {
        let Some(n) = *n else {
            skipped += 1;
            continue;
        };
        let a = analytic[i];
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(opts.floor);
        checked += 1;
        if rel > max_rel || worst.is_none() {
            max_rel = max_rel.max(rel);
            worst = Some(i);
        }
    }
    GradcheckReport {
        leaf: leaf.to_string(),
        max_rel_err: max_rel,
        worst,
        checked,
        skipped_kinks: skipped,
        excluded: false,
        pass: max_rel.is_finite() && max_rel < opts.tolerance,
    }
}

/// Compares `backward` against central differences for one leaf.
///
/// The step follows [`Stencil`] and the graph's precision; run in `f64`
/// for meaningful tolerances. The graph is left evaluated at `bindings` on
/// return.
pub fn gradcheck<T: Real>(
    graph: &mut Graph<T>,
    output: Var,
    bindings: &Bindings<T>,
    leaf: &str,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    graph.forward(bindings)?;
    if !graph.is_differentiable(output) {
        return Ok(excluded(leaf));
    }
    let analytic = analytic_gradient(graph, output, bindings, leaf)?;
    let elements = select_elements(analytic.len(), opts);
    let numeric = central_differences(graph, output, bindings, leaf, &elements, opts.stencil)?;
    let analytic: Vec<f64> = analytic.data().iter().map(|&v| Real::to_f64(v)).collect();
    Ok(compare(leaf, &analytic, &numeric, &elements, opts))
}

/// Checks the gradient computed by `graph` in precision `T` against central
/// differences of `wide`, the same computation recorded in `f64` over the
/// same leaf values. Separates the accuracy of a low-precision backward
/// pass from finite-difference roundoff in that precision.
pub fn gradcheck_widened<T: Real>(
    graph: &mut Graph<T>,
    output: Var,
    wide: &mut Graph<f64>,
    wide_output: Var,
    leaf: &str,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    let bindings = graph.bindings();
    let wide_bindings = wide.bindings();
    graph.forward(&bindings)?;
    if !graph.is_differentiable(output) {
        return Ok(excluded(leaf));
    }
    let analytic = analytic_gradient(graph, output, &bindings, leaf)?;
    let wide_leaf = wide_bindings
        .get(leaf)
        .ok_or_else(|| Error::MissingBinding { leaf: leaf.to_string() })?;
    if wide_leaf.shape() != analytic.shape() {
        return Err(Error::BindingShape {
            leaf: leaf.to_string(),
            expected: analytic.shape().to_vec(),
            got: wide_leaf.shape().to_vec(),
        });
    }
    let elements = select_elements(analytic.len(), opts);
    let numeric = central_differences(wide, wide_output, &wide_bindings, leaf, &elements, opts.stencil)?;
    let analytic: Vec<f64> = analytic.data().iter().map(|&v| Real::to_f64(v)).collect();
    Ok(compare(leaf, &analytic, &numeric, &elements, opts))
}

/// Runs [`gradcheck`] for every gradient-requiring leaf of `graph`.
pub fn gradcheck_all<T: Real>(
    graph: &mut Graph<T>,
    output: Var,
    opts: &GradcheckOptions,
) -> Result<Vec<GradcheckReport>> {
    let bindings = graph.bindings();
    let names: Vec<String> = graph.backward(output)?.into_keys().collect();
    names
        .iter()
        .map(|name| gradcheck(graph, output, &bindings, name, opts))
        .collect()
}
