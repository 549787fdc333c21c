//! Named parameter storage and the Adam step.
//!
//! Parameters live outside any graph; each training step binds the ones it
//! uses as leaves (see [`GraphParams`]) and applies gradients back by name.
//! Weight decay is decoupled: applied directly to the parameter before the
//! moment update, so it never contaminates the moment estimates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, NodeId};
use super::{Tensor, TensorError};

/// One trainable tensor. `lr_scale` multiplies the global learning rate,
/// letting e.g. the conditioner embedding train slower than the rest.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub lr_scale: f64,
}

/// Insertion-ordered collection of named parameters. Iteration order is
/// the registration order, which keeps optimizer updates deterministic.
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<(), TensorError> {
        self.add_scaled(name, value, 1.0)
    }

    pub fn add_scaled(
        &mut self,
        name: impl Into<String>,
        value: Tensor,
        lr_scale: f64,
    ) -> Result<(), TensorError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::DuplicateParam { param: name });
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, value, lr_scale });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index.get(name).copied().map(move |i| &mut self.params[i])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    /// Total number of scalar values across all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Snapshot of all parameter tensors, keyed by name.
    pub fn to_map(&self) -> BTreeMap<String, Tensor> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    /// Overwrite parameter values from a checkpoint map. Every stored
    /// parameter must be present with a matching shape.
    pub fn load_map(&mut self, map: &BTreeMap<String, Tensor>) -> Result<(), TensorError> {
        for p in &mut self.params {
            let t = map.get(&p.name).ok_or_else(|| {
                TensorError::Checkpoint(format!("missing parameter '{}'", p.name))
            })?;
            if t.shape() != p.value.shape() {
                return Err(TensorError::Checkpoint(format!(
                    "parameter '{}' has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}

/// Map from parameter name to the graph leaf carrying its value in the
/// current step. Rebuilt for every graph; parameters that are not bound
/// are left untouched by [`adam_step`].
#[derive(Default)]
pub struct GraphParams {
    ids: BTreeMap<String, NodeId>,
}

impl GraphParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// Create (or reuse) the leaf for `name`, seeded from the store value.
    pub fn bind(
        &mut self,
        g: &mut Graph,
        store: &ParamStore,
        name: &str,
    ) -> Result<NodeId, TensorError> {
        if let Some(&id) = self.ids.get(name) {
            return Ok(id);
        }
        let p = store
            .get(name)
            .ok_or_else(|| TensorError::Checkpoint(format!("unknown parameter '{name}'")))?;
        let id = g.leaf(p.value.clone(), true);
        self.ids.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<NodeId> {
        self.ids.get(name).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.ids.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Moments {
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Per-parameter first/second moment estimates, keyed by name. Parameters
/// acquire state lazily the first step they participate in.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AdamState {
    moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Apply one Adam update to every parameter bound in `bound`, reading
/// gradients from `grads`. Rejects non-finite gradients by name before
/// touching any state.
pub fn adam_step(
    store: &mut ParamStore,
    bound: &GraphParams,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), TensorError> {
    // validate first so a poisoned step leaves parameters untouched
    for p in &store.params {
        let Some(id) = bound.id(&p.name) else { continue };
        let g = grads.get(id).ok_or_else(|| {
            TensorError::Checkpoint(format!("no gradient for bound parameter '{}'", p.name))
        })?;
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteGrad { param: p.name.clone() });
        }
    }

    for p in &mut store.params {
        let Some(id) = bound.id(&p.name) else { continue };
        let g = grads.get(id).expect("validated above");
        let mom = state.moments.entry(p.name.clone()).or_insert_with(|| Moments {
            t: 0,
            m: vec![0.0; p.value.numel()],
            v: vec![0.0; p.value.numel()],
        });
        mom.t += 1;
        let eff_lr = cfg.lr * p.lr_scale;
        let bc1 = 1.0 - cfg.beta1.powi(mom.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(mom.t as i32);
        let data = p.value.data_mut();
        let gd = g.data();
        for i in 0..data.len() {
            data[i] -= eff_lr * cfg.weight_decay * data[i];
            mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * gd[i];
            mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
            let mhat = mom.m[i] / bc1;
            let vhat = mom.v[i] / bc2;
            data[i] -= eff_lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_param_name_rejected() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(vec![2])).unwrap();
        assert!(matches!(
            store.add("w", Tensor::zeros(vec![2])),
            Err(TensorError::DuplicateParam { .. })
        ));
    }

    #[test]
    fn adam_moves_param_against_gradient() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::new(vec![2], vec![1.0, -1.0]).unwrap()).unwrap();

        let mut g = Graph::new();
        let mut bound = GraphParams::new();
        let w = bound.bind(&mut g, &store, "w").unwrap();
        let loss = g.dot(w, &[1.0, -1.0]).unwrap(); // dL/dw = [1, -1]
        let grads = g.backward(loss).unwrap();

        let mut state = AdamState::new();
        let cfg = AdamConfig { lr: 0.1, weight_decay: 0.0, ..AdamConfig::default() };
        adam_step(&mut store, &bound, &grads, &mut state, &cfg).unwrap();
        let w = store.get("w").unwrap();
        // first step moves each weight by ~lr opposite the gradient sign
        assert!(w.value.data()[0] < 1.0);
        assert!(w.value.data()[1] > -1.0);
    }

    #[test]
    fn unbound_param_is_untouched() {
        let mut store = ParamStore::new();
        store.add("used", Tensor::new(vec![1], vec![1.0]).unwrap()).unwrap();
        store.add("frozen", Tensor::new(vec![1], vec![1.0]).unwrap()).unwrap();

        let mut g = Graph::new();
        let mut bound = GraphParams::new();
        let u = bound.bind(&mut g, &store, "used").unwrap();
        let loss = g.dot(u, &[1.0]).unwrap();
        let grads = g.backward(loss).unwrap();

        let mut state = AdamState::new();
        adam_step(&mut store, &bound, &grads, &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(store.get("frozen").unwrap().value.data(), &[1.0]);
        assert_ne!(store.get("used").unwrap().value.data(), &[1.0]);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::new(vec![1], vec![2.0]).unwrap()).unwrap();

        let mut g = Graph::new();
        let mut bound = GraphParams::new();
        let w = bound.bind(&mut g, &store, "w").unwrap();
        let loss = g.dot(w, &[f64::INFINITY]).unwrap();
        let grads = g.backward(loss).unwrap();

        let mut state = AdamState::new();
        let err = adam_step(&mut store, &bound, &grads, &mut state, &AdamConfig::default());
        match err {
            Err(TensorError::NonFiniteGrad { param }) => assert_eq!(param, "w"),
            other => panic!("expected NonFiniteGrad, got {other:?}"),
        }
        // parameter untouched by the failed step
        assert_eq!(store.get("w").unwrap().value.data(), &[2.0]);
    }
}
