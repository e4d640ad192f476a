use crate::autodiff::{Tape, Var};
use crate::error::{config_err, dim_err, input_err, Result};
use crate::nn::{Graph, ParamKind};
use crate::tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

/// Inverse-frequency class weights `w_c = N / (K · n_c)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(k: usize) -> Self {
        ClassWeights { w: vec![1.0; k] }
    }

    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        if counts.is_empty() {
            return Err(config_err!("class weights need at least one class"));
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(config_err!(
                "class {c} has no training samples; drop it from the manifest or merge it with another class"
            ));
        }
        let total: usize = counts.iter().sum();
        let k = counts.len();
        Ok(ClassWeights { w: counts.iter().map(|&n| total as f64 / (k * n) as f64).collect() })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Weighted mean of per-sample cross-entropy:
/// `Σ w_{y_i} · (−log softmax(z_i)[y_i]) / Σ w_{y_i}`.
pub fn weighted_cross_entropy<S: Scalar>(
    tape: &mut Tape<S>,
    logits: Var,
    targets: &[usize],
    weights: &ClassWeights,
) -> Result<Var> {
    let s = tape.shape(logits).to_vec();
    if s.len() != 2 || s[0] != targets.len() {
        return Err(dim_err!("cross-entropy expects [{}, K] logits, got {s:?}", targets.len()));
    }
    if s[1] != weights.len() {
        return Err(dim_err!("{} class weights for {} logit columns", weights.len(), s[1]));
    }
    if let Some((i, &t)) = targets.iter().enumerate().find(|(_, &t)| t >= s[1]) {
        return Err(input_err!("target {t} at index {i} is outside [0, {})", s[1]));
    }
    let per = targets.iter().map(|&t| weights.w[t]).collect::<Vec<_>>();
    let total: f64 = per.iter().sum();
    let coef = per.iter().map(|w| S::from_f64_lossy(-w / total)).collect();
    let logp = tape.log_softmax(logits, 1)?;
    let picked = tape.gather(logp, targets)?;
    let scaled = tape.mul_const(picked, coef)?;
    Ok(tape.sum(scaled))
}

/// Which fully-connected weight matrices the L2 term covers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L2Scope {
    /// Classifier head only (paths under `head.`).
    #[default]
    Head,
    /// Every linear weight, including the transformer projections and MLPs.
    AllLinear,
}

impl L2Scope {
    pub fn covers(self, path: &str, kind: ParamKind) -> bool {
        kind == ParamKind::LinearWeight && (self == L2Scope::AllLinear || path.starts_with("head."))
    }
}

/// `coeff · Σ‖W‖²` over the linear weights selected by `scope`, or `None` when
/// nothing is selected or `coeff` is zero.
pub fn l2_penalty<S: Scalar>(g: &mut Graph<'_, S>, scope: L2Scope, coeff: f64) -> Result<Option<Var>> {
    if coeff < 0.0 {
        return Err(config_err!("L2 coefficient must be non-negative, got {coeff}"));
    }
    if coeff == 0.0 {
        return Ok(None);
    }
    let paths: Vec<String> = g
        .params()
        .iter()
        .filter(|(p, _, k)| scope.covers(p, *k))
        .map(|(p, _, _)| p.to_string())
        .collect();
    let mut total: Option<Var> = None;
    for p in paths {
        let w = g.param(&p)?;
        let t = g.tape_mut();
        let sq = t.mul(w, w)?;
        let s = t.sum(sq);
        total = Some(match total {
            Some(acc) => t.add(acc, s)?,
            None => s,
        });
    }
    Ok(total.map(|t| g.tape_mut().scale(t, S::from_f64_lossy(coeff))))
}

/// Plain-value L2 term for reporting.
pub fn l2_value<S: Scalar>(params: &crate::nn::LayerParams<S>, scope: L2Scope, coeff: f64) -> f64 {
    coeff
        * params
            .iter()
            .filter(|(p, _, k)| scope.covers(p, *k))
            .map(|(_, t, _)| t.data().iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>())
            .sum::<f64>()
}

/// Per-sample loss without the tape, for evaluation passes.
pub fn cross_entropy_value<S: Scalar>(logits: &Tensor<S>, targets: &[usize], weights: &ClassWeights) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.constant(logits.clone());
    let l = weighted_cross_entropy(&mut tape, z, targets, weights)?;
    Ok(tape.value(l).item()?.to_f64_lossy())
}
