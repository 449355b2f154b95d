//! Named parameter storage and per-forward-pass binding onto a tape.

use std::cell::RefCell;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Matrix, Result, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix, trainable: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    /// Glorot-style uniform init in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound));
        self.add(name, value, true)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)), true)
    }

    pub fn add_normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        trainable: bool,
        rng: &mut R,
    ) -> ParamId {
        let value = if std > 0.0 {
            let dist = Normal::new(0.0, std).expect("positive std");
            Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
        } else {
            Array2::zeros((rows, cols))
        };
        self.add(name, value, trainable)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Per-parameter gradients aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub grads: Vec<Option<Matrix>>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads[id.0].as_ref()
    }

    /// Adds `other * weight` into `self`.
    pub fn add_scaled(&mut self, other: &ParamGrads, weight: f64) {
        for (acc, g) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(g) = g {
                match acc {
                    Some(a) => a.scaled_add(weight, g),
                    None => *acc = Some(g * weight),
                }
            }
        }
    }
}

/// Binds parameters onto one tape, lazily and at most once each.
pub struct ForwardCtx<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    track_grad: bool,
    bound: RefCell<Vec<Option<Tensor>>>,
}

impl<'a> ForwardCtx<'a> {
    /// `track_grad = false` binds every parameter as a constant.
    pub fn new(store: &'a ParamStore, track_grad: bool) -> Self {
        Self {
            tape: Tape::new(),
            store,
            track_grad,
            bound: RefCell::new(vec![None; store.len()]),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&self, id: ParamId) -> Result<Tensor> {
        if let Some(t) = self.bound.borrow()[id.0] {
            return Ok(t);
        }
        let p = self.store.get(id);
        let t = self.tape.leaf(p.value.clone(), self.track_grad && p.trainable)?;
        self.bound.borrow_mut()[id.0] = Some(t);
        Ok(t)
    }

    /// Runs backward from `loss` and maps leaf gradients back to parameters.
    pub fn backward(self, loss: &Tensor) -> Result<ParamGrads> {
        let bound = self.bound.into_inner();
        let mut grads: Gradients = self.tape.backward(loss)?;
        Ok(ParamGrads {
            grads: bound
                .iter()
                .map(|t| t.as_ref().and_then(|t| grads.take(t)))
                .collect(),
        })
    }
}
