use super::{LayerParams, Mode};
use crate::autodiff::{Tape, Var};
use crate::error::{config_err, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};
use std::collections::HashMap;

/// One forward pass: a tape, the parameter set it reads, the mode and the dropout
/// stream.
///
/// Parameters are bound lazily: the first [`Graph::param`] call for a path records a
/// leaf holding a copy of the stored tensor. [`Graph::backward`] adds the resulting
/// gradients back into the parameter set.
pub struct Graph<'p, S: Scalar = f32> {
    tape: Tape<S>,
    params: &'p mut LayerParams<S>,
    bound: HashMap<String, Var>,
    mode: Mode,
    rng: Rng,
}

impl<'p, S: Scalar> Graph<'p, S> {
    pub fn new(params: &'p mut LayerParams<S>, mode: Mode, rng: Rng) -> Self {
        Graph { tape: Tape::new(), params, bound: HashMap::new(), mode, rng }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn tape(&self) -> &Tape<S> {
        &self.tape
    }

    pub fn tape_mut(&mut self) -> &mut Tape<S> {
        &mut self.tape
    }

    pub fn params(&self) -> &LayerParams<S> {
        self.params
    }

    pub fn params_mut(&mut self) -> &mut LayerParams<S> {
        self.params
    }

    pub fn rng_mut(&mut self) -> &mut Rng {
        &mut self.rng
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        self.tape.value(v)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.tape.shape(v)
    }

    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.tape.constant(t)
    }

    pub fn param(&mut self, path: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(path) {
            return Ok(v);
        }
        let t = self
            .params
            .get(path)
            .ok_or_else(|| config_err!("model has no parameter {path}"))?;
        let mut leaf = t.clone();
        leaf.clear_grad();
        let v = self.tape.leaf(leaf);
        self.bound.insert(path.to_string(), v);
        Ok(v)
    }

    /// Inverted dropout driven by the graph's stream; identity in eval mode.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        let training = self.training();
        self.tape.dropout(x, p, training, &mut self.rng)
    }

    /// Backpropagates `loss` and accumulates gradients into the parameter set.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.tape.backward(loss)?;
        for (path, &v) in &self.bound {
            if let Some(g) = self.tape.grad(v) {
                if let Some(t) = self.params.get_mut(path) {
                    t.accumulate_grad(g)?;
                }
            }
        }
        Ok(())
    }
}
