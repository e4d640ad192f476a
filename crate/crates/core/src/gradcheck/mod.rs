//! Central finite-difference gradient checking.
//!
//! Every check runs in `f64`. For a sampled coordinate `θ_i` the numeric derivative is
//! `(L(θ + εe_i) − L(θ − εe_i)) / 2ε` and the relative error against the analytic value
//! `a_i` is `|a_i − n_i| / max(|a_i|, |n_i|, floor)`. The floor keeps coordinates whose
//! true derivative is essentially zero from producing meaningless ratios.
//!
//! The default step is small (1e-6) because ReLU networks have kinks; a larger step
//! straddles them at a noticeable fraction of coordinates.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::nn::{Graph, LayerParams, Mode};
use crate::rng::Rng;
use crate::tensor::Tensor;
use std::fmt;

pub mod suite;
pub use suite::run_suite;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Per-coordinate relative tolerance.
    pub rel_tol: f64,
    /// Fraction of sampled coordinates that must be within `rel_tol`.
    pub pass_fraction: f64,
    /// Hard bound on the worst coordinate.
    pub worst_tol: f64,
    pub floor: f64,
    /// Coordinates sampled per input tensor (all of them when the tensor is smaller).
    pub coords_per_input: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-6,
            rel_tol: 1e-4,
            pass_fraction: 0.95,
            worst_tol: 1e-2,
            floor: 1e-6,
            coords_per_input: 24,
            seed: 0x9d_c0de,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub within_tol: usize,
    pub worst_rel: f64,
    /// `(input label, coordinate, analytic, numeric)` of the worst coordinate.
    pub worst_at: Option<(String, usize, f64, f64)>,
    pub pass_fraction: f64,
    pub worst_tol: f64,
}

impl GradCheckReport {
    pub fn fraction_within(&self) -> f64 {
        if self.checked == 0 {
            return 1.0;
        }
        self.within_tol as f64 / self.checked as f64
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.fraction_within() >= self.pass_fraction && self.worst_rel <= self.worst_tol
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<5} {:<32} coords={:<5} within={:>6.2}% worst={:.2e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.checked,
            100.0 * self.fraction_within(),
            self.worst_rel
        )?;
        if let Some((label, i, a, n)) = &self.worst_at {
            write!(f, " at {label}[{i}] (analytic {a:.6e}, numeric {n:.6e})")?;
        }
        Ok(())
    }
}

fn sample_coords(len: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    if len <= k {
        return (0..len).collect();
    }
    let mut all: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut all);
    all.truncate(k);
    all.sort_unstable();
    all
}

/// Compares `analytic` against central differences of `eval`.
///
/// `eval(input, coord, delta)` must return the loss with that one coordinate shifted by
/// `delta` and everything else at its base value.
fn compare(
    name: &str,
    labels: &[String],
    analytic: &[Vec<f64>],
    mut eval: impl FnMut(usize, usize, f64) -> Result<f64>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut rng = Rng::new(cfg.seed);
    let mut report = GradCheckReport {
        name: name.to_string(),
        checked: 0,
        within_tol: 0,
        worst_rel: 0.0,
        worst_at: None,
        pass_fraction: cfg.pass_fraction,
        worst_tol: cfg.worst_tol,
    };
    for (input, grad) in analytic.iter().enumerate() {
        for coord in sample_coords(grad.len(), cfg.coords_per_input, &mut rng) {
            let plus = eval(input, coord, cfg.eps)?;
            let minus = eval(input, coord, -cfg.eps)?;
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = grad[coord];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            report.checked += 1;
            if rel <= cfg.rel_tol {
                report.within_tol += 1;
            }
            if report.worst_at.is_none() || rel > report.worst_rel {
                report.worst_rel = rel;
                report.worst_at = Some((labels[input].clone(), coord, a, numeric));
            }
        }
    }
    Ok(report)
}

/// Checks a function of plain tensors: `f` receives one variable per input.
pub fn check_fn<F>(name: &str, inputs: &[Tensor<f64>], f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let run = |values: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.variable(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok((tape, vars, loss))
    };
    let (mut tape, vars, loss) = run(inputs)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    let labels: Vec<String> = (0..inputs.len()).map(|i| format!("input{i}")).collect();
    let mut shifted = inputs.to_vec();
    compare(
        name,
        &labels,
        &analytic,
        |input, coord, delta| {
            let base = inputs[input].data()[coord];
            shifted[input].data_mut()[coord] = base + delta;
            let out = run(&shifted).and_then(|(tape, _, loss)| tape.value(loss).item());
            shifted[input].data_mut()[coord] = base;
            out
        },
        cfg,
    )
}

/// Checks the gradient of a model-level loss with respect to every trainable
/// parameter in `params`.
///
/// `f` builds the loss on a fresh graph; it is re-run with a fresh copy of the
/// parameters and a fresh dropout stream for every evaluation, so stochastic layers
/// see the same masks each time.
pub fn check_params<F>(
    name: &str,
    params: &LayerParams<f64>,
    mode: Mode,
    f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let dropout_seed = cfg.seed ^ 0xd20f;
    let mut work = params.clone();
    work.clear_grads();
    {
        let mut g = Graph::new(&mut work, mode, Rng::new(dropout_seed));
        let loss = f(&mut g)?;
        g.backward(loss)?;
    }
    let analytic: Vec<Vec<f64>> = params
        .trainable_names()
        .iter()
        .map(|n| {
            let t = work.get(n).expect("same parameter set");
            t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();
    let names = params.trainable_names();
    compare(
        name,
        &names,
        &analytic,
        |input, coord, delta| {
            let mut p = params.clone();
            p.get_mut(&names[input]).expect("known name").data_mut()[coord] += delta;
            let mut g = Graph::new(&mut p, mode, Rng::new(dropout_seed));
            let loss = f(&mut g)?;
            g.tape().value(loss).item()
        },
        cfg,
    )
}
