//! Named parameter storage, deterministic initialization, and graph sessions.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Error, Result};
use crate::graph::{Graph, Mode, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Parameters keyed by dotted path names, iterated in name order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Param<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(config_err!("parameter {} registered twice", name));
        }
        self.params
            .insert(name.to_string(), Param { value, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| config_err!("unknown parameter {}", name))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| config_err!("unknown parameter {}", name))
    }

    /// Replaces a value, keeping the registered shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self.value_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter {} has shape {:?}, got {:?}",
                name,
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|k| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of scalars in parameters whose name starts with `prefix`.
    pub fn count(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, p)| p.value.len())
            .sum()
    }

    pub fn count_trainable(&self) -> usize {
        self.params
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn count_frozen(&self) -> usize {
        self.params
            .values()
            .filter(|p| !p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for (k, p) in self.params.iter_mut() {
            if k.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    /// Moves every entry of `other` into `self`.
    pub fn merge(&mut self, other: ParamStore<T>) -> Result<()> {
        for (k, p) in other.params {
            self.insert(&k, p.value, p.trainable)?;
        }
        Ok(())
    }

    /// Copies of the entries under `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            trainable: p.trainable,
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Seeded initializer. Values are drawn in `f64` and cast, so every
/// precision sees the same initial weights.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Uniform in `±√(1/fan_in)`.
    pub fn uniform<T: Scalar>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let a = (1.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::c(self.rng.gen_range(-a..=a))).collect();
        Tensor::from_parts_unchecked(shape.to_vec(), data)
    }
}

/// A [`Graph`] bound to a parameter store. Parameters become graph leaves on
/// first use; in [`Mode::Train`] only trainable ones receive gradients.
pub struct Session<'s, T: Scalar> {
    graph: Graph<T>,
    store: &'s ParamStore<T>,
    bound: RefCell<HashMap<String, Var>>,
    order: RefCell<Vec<String>>,
    rng: RefCell<Option<ChaCha8Rng>>,
}

impl<T: Scalar> Deref for Session<'_, T> {
    type Target = Graph<T>;

    fn deref(&self) -> &Graph<T> {
        &self.graph
    }
}

impl<'s, T: Scalar> Session<'s, T> {
    pub fn new(store: &'s ParamStore<T>, mode: Mode) -> Self {
        Self {
            graph: Graph::new(mode),
            store,
            bound: RefCell::new(HashMap::new()),
            order: RefCell::new(Vec::new()),
            rng: RefCell::new(None),
        }
    }

    /// Enables stochastic ops (code sampling) driven by `seed`.
    pub fn with_rng(self, seed: u64) -> Self {
        *self.rng.borrow_mut() = Some(ChaCha8Rng::seed_from_u64(seed));
        self
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    /// Uniform draw in `[0, 1)`, or `None` when no generator is attached.
    pub fn uniform(&self) -> Option<f64> {
        self.rng.borrow_mut().as_mut().map(|r| r.gen::<f64>())
    }

    pub fn param(&self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.borrow().get(name) {
            return Ok(v);
        }
        let p = self
            .store
            .get(name)
            .ok_or_else(|| config_err!("parameter {} is not registered", name))?;
        let v = if self.graph.is_dry() {
            self.graph.leaf_shape(p.value.shape())
        } else {
            self.graph.leaf(p.value.clone(), p.trainable)
        };
        self.bound.borrow_mut().insert(name.to_string(), v);
        self.order.borrow_mut().push(name.to_string());
        Ok(v)
    }

    /// Names of the parameters used so far, in first-use order.
    pub fn used_params(&self) -> Vec<String> {
        self.order.borrow().clone()
    }

    /// Backpropagates `loss` and returns a gradient for every used parameter.
    /// Frozen and unreached parameters get zero tensors.
    pub fn param_grads(&self, loss: Var) -> Result<BTreeMap<String, Tensor<T>>> {
        let mut g = self.graph.backward(loss)?;
        let bound = self.bound.borrow();
        let mut out = BTreeMap::new();
        for (name, &v) in bound.iter() {
            let shape = self.store.value(name)?.shape().to_vec();
            let grad = g.take(v).unwrap_or_else(|| Tensor::zeros(&shape));
            out.insert(name.clone(), grad);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_precision_independent() {
        let a: Tensor<f32> = Init::new(7).uniform(&[4, 3], 3);
        let b: Tensor<f64> = Init::new(7).uniform(&[4, 3], 3);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*x, *y as f32);
        }
        let lim = (1.0f64 / 3.0).sqrt();
        assert!(b.data().iter().all(|v| v.abs() <= lim));
    }

    #[test]
    fn frozen_params_get_zero_grads() {
        let mut s = ParamStore::<f64>::new();
        s.insert("a", Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap(), true)
            .unwrap();
        s.insert("b", Tensor::from_f64(&[2], &[3.0, 4.0]).unwrap(), false)
            .unwrap();
        let sess = Session::new(&s, Mode::Train);
        let a = sess.param("a").unwrap();
        let b = sess.param("b").unwrap();
        let y = sess.mul(a, b).unwrap();
        let l = sess.sum_all(y);
        let g = sess.param_grads(l).unwrap();
        assert_eq!(g["a"].data(), &[3.0, 4.0]);
        assert_eq!(g["b"].data(), &[0.0, 0.0]);
    }
}
