//! Parameterized building blocks: linear, convolution, normalization.

use super::{init, Graph, LayerParams, ParamKind};
use crate::autodiff::{NormStats, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

fn join(prefix: &str, name: &str) -> String {
    format!("{prefix}.{name}")
}

/// Fully connected layer `y = x·W + b` with `W: [in, out]`, applied over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub prefix: String,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(prefix: impl Into<String>, in_features: usize, out_features: usize) -> Self {
        Linear { prefix: prefix.into(), in_features, out_features }
    }

    pub fn weight_path(&self) -> String {
        join(&self.prefix, "weight")
    }

    pub fn bias_path(&self) -> String {
        join(&self.prefix, "bias")
    }

    pub fn init<S: Scalar>(&self, params: &mut LayerParams<S>, rng: &mut Rng) -> Result<()> {
        let w = init::xavier_uniform(vec![self.in_features, self.out_features], self.in_features, self.out_features, rng);
        params.insert(self.weight_path(), w, ParamKind::LinearWeight)?;
        params.insert(self.bias_path(), Tensor::zeros(vec![self.out_features]), ParamKind::Bias)
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.last() != Some(&self.in_features) {
            return Err(Error::Dimension(format!(
                "{}: expected last dim {}, got shape {shape:?}",
                self.prefix, self.in_features
            )));
        }
        let rows = shape.iter().product::<usize>() / self.in_features;
        let w = g.param(&self.weight_path())?;
        let b = g.param(&self.bias_path())?;
        let t = g.tape_mut();
        let flat = if shape.len() == 2 { x } else { t.reshape(x, vec![rows, self.in_features])? };
        let y = t.matmul(flat, w)?;
        let y = t.add_broadcast(y, b)?;
        if shape.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.out_features;
        t.reshape(y, out_shape)
    }
}

/// 2-D convolution layer (cross-correlation, zero padding).
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub prefix: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl Conv2d {
    pub fn new(prefix: impl Into<String>, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Conv2d { prefix: prefix.into(), in_channels, out_channels, kernel, stride, padding, bias: false }
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = true;
        self
    }

    pub fn weight_path(&self) -> String {
        join(&self.prefix, "weight")
    }

    pub fn init<S: Scalar>(&self, params: &mut LayerParams<S>, rng: &mut Rng) -> Result<()> {
        let fan_in = self.in_channels * self.kernel * self.kernel;
        let shape = vec![self.out_channels, self.in_channels, self.kernel, self.kernel];
        params.insert(self.weight_path(), init::he_normal(shape, fan_in, rng), ParamKind::ConvWeight)?;
        if self.bias {
            params.insert(join(&self.prefix, "bias"), Tensor::zeros(vec![self.out_channels]), ParamKind::Bias)?;
        }
        Ok(())
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let w = g.param(&self.weight_path())?;
        let b = if self.bias { Some(g.param(&join(&self.prefix, "bias"))?) } else { None };
        g.tape_mut().conv2d(x, w, b, self.stride, self.padding)
    }
}

/// Batch normalization over the channel axis with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub prefix: String,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new(prefix: impl Into<String>, channels: usize) -> Self {
        BatchNorm2d { prefix: prefix.into(), channels, momentum: 0.1, eps: 1e-5 }
    }

    pub fn init<S: Scalar>(&self, params: &mut LayerParams<S>) -> Result<()> {
        let c = self.channels;
        params.insert(join(&self.prefix, "weight"), Tensor::ones(vec![c]), ParamKind::NormScale)?;
        params.insert(join(&self.prefix, "bias"), Tensor::zeros(vec![c]), ParamKind::NormShift)?;
        params.insert(join(&self.prefix, "running_mean"), Tensor::zeros(vec![c]), ParamKind::RunningStat)?;
        params.insert(join(&self.prefix, "running_var"), Tensor::ones(vec![c]), ParamKind::RunningStat)
    }

    /// Train mode normalizes by batch statistics and folds them into the running
    /// estimates (`momentum` weight on the new batch, unbiased variance); eval mode
    /// normalizes by the running estimates.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let gamma = g.param(&join(&self.prefix, "weight"))?;
        let beta = g.param(&join(&self.prefix, "bias"))?;
        let mean_path = join(&self.prefix, "running_mean");
        let var_path = join(&self.prefix, "running_var");
        if !g.training() {
            let mean = g.params().require(&mean_path)?.data().to_vec();
            let var = g.params().require(&var_path)?.data().to_vec();
            let stats = NormStats::Running { mean: &mean, var: &var };
            return Ok(g.tape_mut().batch_norm(x, gamma, beta, stats, self.eps)?.0);
        }
        let shape = g.shape(x).to_vec();
        if shape[0] < 2 {
            return Err(Error::Contract(format!(
                "{}: train-mode batch norm needs a batch of at least 2, got {}",
                self.prefix, shape[0]
            )));
        }
        let count: usize = shape[0] * shape[2..].iter().product::<usize>();
        let (y, stats) = g.tape_mut().batch_norm(x, gamma, beta, NormStats::Batch, self.eps)?;
        let (bm, bv) = stats.expect("batch statistics requested");
        let m = S::from_f64_lossy(self.momentum);
        let unbias = S::from_f64_lossy(count as f64 / (count as f64 - 1.0));
        let params = g.params_mut();
        for (rm, &b) in params.get_mut(&mean_path).unwrap().data_mut().iter_mut().zip(&bm) {
            *rm = (S::one() - m) * *rm + m * b;
        }
        for (rv, &b) in params.get_mut(&var_path).unwrap().data_mut().iter_mut().zip(&bv) {
            *rv = (S::one() - m) * *rv + m * b * unbias;
        }
        Ok(y)
    }
}

/// Layer normalization over the last axis.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub prefix: String,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(prefix: impl Into<String>, dim: usize) -> Self {
        LayerNorm { prefix: prefix.into(), dim, eps: 1e-5 }
    }

    pub fn init<S: Scalar>(&self, params: &mut LayerParams<S>) -> Result<()> {
        params.insert(join(&self.prefix, "weight"), Tensor::ones(vec![self.dim]), ParamKind::NormScale)?;
        params.insert(join(&self.prefix, "bias"), Tensor::zeros(vec![self.dim]), ParamKind::NormShift)
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let gamma = g.param(&join(&self.prefix, "weight"))?;
        let beta = g.param(&join(&self.prefix, "bias"))?;
        g.tape_mut().layer_norm(x, gamma, beta, self.eps)
    }
}
