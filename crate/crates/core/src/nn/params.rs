use crate::error::{config_err, Error, Result};
use crate::tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Role of a stored tensor; drives initialization, L2 filtering and the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ConvWeight,
    LinearWeight,
    Bias,
    NormScale,
    NormShift,
    Embedding,
    /// Batch-norm running statistics: saved with the model, never trained.
    RunningStat,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        self != ParamKind::RunningStat
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::ConvWeight => "conv_weight",
            ParamKind::LinearWeight => "linear_weight",
            ParamKind::Bias => "bias",
            ParamKind::NormScale => "norm_scale",
            ParamKind::NormShift => "norm_shift",
            ParamKind::Embedding => "embedding",
            ParamKind::RunningStat => "running_stat",
        }
    }

    pub fn parse(s: &str) -> Option<ParamKind> {
        Some(match s {
            "conv_weight" => ParamKind::ConvWeight,
            "linear_weight" => ParamKind::LinearWeight,
            "bias" => ParamKind::Bias,
            "norm_scale" => ParamKind::NormScale,
            "norm_shift" => ParamKind::NormShift,
            "embedding" => ParamKind::Embedding,
            "running_stat" => ParamKind::RunningStat,
            _ => return None,
        })
    }
}

/// Train/eval switch for stochastic and batch-dependent layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
struct Entry<S: Scalar> {
    tensor: Tensor<S>,
    kind: ParamKind,
}

/// Named parameter set, keyed by dotted path such as `cnn.stage1.block0.conv1.weight`.
///
/// Paths iterate in sorted order, which is also the checkpoint order.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<S: Scalar = f32> {
    entries: BTreeMap<String, Entry<S>>,
}

impl<S: Scalar> Default for LayerParams<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> LayerParams<S> {
    pub fn new() -> Self {
        LayerParams { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor<S>, kind: ParamKind) -> Result<()> {
        let path = path.into();
        if self.entries.contains_key(&path) {
            return Err(config_err!("duplicate parameter path {path}"));
        }
        let tensor = tensor.with_requires_grad(kind.trainable());
        self.entries.insert(path, Entry { tensor, kind });
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&Tensor<S>> {
        self.entries.get(path).map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor<S>> {
        self.entries.get_mut(path).map(|e| &mut e.tensor)
    }

    pub fn require(&self, path: &str) -> Result<&Tensor<S>> {
        self.get(path).ok_or_else(|| config_err!("missing parameter {path}"))
    }

    pub fn kind(&self, path: &str) -> Option<ParamKind> {
        self.entries.get(path).map(|e| e.kind)
    }

    /// Replaces the values of an existing entry, keeping its kind. Shapes must agree.
    pub fn set(&mut self, path: &str, tensor: Tensor<S>) -> Result<()> {
        let entry = self.entries.get_mut(path).ok_or_else(|| config_err!("missing parameter {path}"))?;
        if entry.tensor.shape() != tensor.shape() {
            return Err(Error::Dimension(format!(
                "parameter {path} has shape {:?}, got {:?}",
                entry.tensor.shape(),
                tensor.shape()
            )));
        }
        entry.tensor = tensor.with_requires_grad(entry.kind.trainable());
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>, ParamKind)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.tensor, e.kind))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>, ParamKind)> {
        self.entries.iter_mut().map(|(k, e)| (k.as_str(), &mut e.tensor, e.kind))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, e)| e.kind.trainable())
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries.values().filter(|e| e.kind.trainable()).map(|e| e.tensor.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.tensor.zero_grad();
        }
    }

    pub fn clear_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.tensor.clear_grad();
        }
    }

    pub fn cast<T: Scalar>(&self) -> LayerParams<T> {
        LayerParams {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| (k.clone(), Entry { tensor: e.tensor.cast(), kind: e.kind }))
                .collect(),
        }
    }

    /// Sets every entry under `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (k, e) in self.entries.iter_mut() {
            if k.starts_with(prefix) {
                e.tensor.data_mut().iter_mut().for_each(|v| *v = S::zero());
            }
        }
    }

    /// True when both sets hold the same paths, kinds and bitwise-equal values.
    pub fn bitwise_eq(&self, other: &LayerParams<S>) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.kind == b.kind
                    && a.tensor.shape() == b.tensor.shape()
                    && a.tensor
                        .data()
                        .iter()
                        .zip(b.tensor.data())
                        .all(|(x, y)| x.to_f64_lossy().to_bits() == y.to_f64_lossy().to_bits())
            })
    }
}
