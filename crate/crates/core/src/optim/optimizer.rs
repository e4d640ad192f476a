use crate::error::{config_err, Error, Result};
use crate::nn::LayerParams;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { kind: OptimizerKind::Adam, lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config_err!("Adam betas must lie in [0, 1)"));
        }
        if self.eps <= 0.0 {
            return Err(config_err!("Adam eps must be positive"));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Optimizer> {
        self.validate()?;
        Ok(match self.kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(self.lr, self.beta1, self.beta2, self.eps)),
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd { lr: self.lr }),
        })
    }
}

/// Fails with the first parameter path holding a non-finite gradient.
fn check_grads(params: &LayerParams<f32>) -> Result<()> {
    for (path, t, kind) in params.iter() {
        if !kind.trainable() {
            continue;
        }
        if let Some(g) = t.grad() {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {path}[{i}] is {}; step aborted", g[i])));
            }
        }
    }
    Ok(())
}

/// Bias-corrected Adam. Parameters without a gradient are left alone.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: BTreeMap<String, Vec<f32>>,
    pub v: BTreeMap<String, Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step(&mut self, params: &mut LayerParams<f32>) -> Result<()> {
        check_grads(params)?;
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (path, t, kind) in params.iter_mut() {
            if !kind.trainable() {
                continue;
            }
            let n = t.len();
            let Some(g) = t.grad().map(<[f32]>::to_vec) else { continue };
            let m = self.m.entry(path.to_string()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(path.to_string()).or_insert_with(|| vec![0.0; n]);
            // Arithmetic in f64, moments stored as f32.
            for (((p, &g), m), v) in t.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g as f64;
                let mn = b1 * *m as f64 + (1.0 - b1) * g;
                let vn = b2 * *v as f64 + (1.0 - b2) * g * g;
                *m = mn as f32;
                *v = vn as f32;
                let update = self.lr * (mn / c1) / ((vn / c2).sqrt() + self.eps);
                *p = (*p as f64 - update) as f32;
            }
        }
        params.zero_grads();
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step(&mut self, params: &mut LayerParams<f32>) -> Result<()> {
        check_grads(params)?;
        let lr = self.lr as f32;
        for (_, t, kind) in params.iter_mut() {
            if !kind.trainable() {
                continue;
            }
            let Some(g) = t.grad().map(<[f32]>::to_vec) else { continue };
            t.data_mut().iter_mut().zip(&g).for_each(|(p, g)| *p -= lr * g);
        }
        params.zero_grads();
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Adam(Adam),
    Sgd(Sgd),
}

impl Optimizer {
    /// Applies one update and zeroes the gradients. On a non-finite gradient nothing
    /// is changed and the offending parameter path is reported.
    pub fn step(&mut self, params: &mut LayerParams<f32>) -> Result<()> {
        match self {
            Optimizer::Adam(a) => a.step(params),
            Optimizer::Sgd(s) => s.step(params),
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Adam(a) => a.lr,
            Optimizer::Sgd(s) => s.lr,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        match self {
            Optimizer::Adam(a) => a.lr = lr,
            Optimizer::Sgd(s) => s.lr = lr,
        }
    }

    /// Moments as named tensors plus the step count, for checkpointing.
    pub fn export_state(&self) -> (BTreeMap<String, Tensor<f32>>, u64) {
        let mut out = BTreeMap::new();
        if let Optimizer::Adam(a) = self {
            for (prefix, map) in [("adam.m.", &a.m), ("adam.v.", &a.v)] {
                for (path, vals) in map {
                    let t = Tensor::new(vec![vals.len()], vals.clone()).expect("non-empty moment");
                    out.insert(format!("{prefix}{path}"), t);
                }
            }
            return (out, a.t);
        }
        (out, 0)
    }

    pub fn import_state(&mut self, state: &BTreeMap<String, Tensor<f32>>, t: u64) {
        if let Optimizer::Adam(a) = self {
            a.t = t;
            a.m.clear();
            a.v.clear();
            for (name, tensor) in state {
                if let Some(path) = name.strip_prefix("adam.m.") {
                    a.m.insert(path.to_string(), tensor.data().to_vec());
                } else if let Some(path) = name.strip_prefix("adam.v.") {
                    a.v.insert(path.to_string(), tensor.data().to_vec());
                }
            }
        }
    }
}
