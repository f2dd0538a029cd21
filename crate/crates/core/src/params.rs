//! Named parameter storage and the AdamW optimizer.

use ndarray::Array2;
use rand::Rng;
use std::collections::HashMap;
use std::sync::Arc;

use crate::tensor::ParamGrads;

/// Flat store of named parameter matrices. Values are behind `Arc` so tapes
/// can hold cheap read-only references while training mutates via
/// copy-on-write (the old graph is dropped before the update, so the write
/// is in place in practice).
#[derive(Default, Clone)]
pub struct ParamStore {
    values: Vec<Arc<Array2<f64>>>,
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, name: &str, value: Array2<f64>) -> usize {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let id = self.values.len();
        self.values.push(Arc::new(value));
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, pid: usize) -> &Array2<f64> {
        &self.values[pid]
    }

    pub fn arc(&self, pid: usize) -> Arc<Array2<f64>> {
        Arc::clone(&self.values[pid])
    }

    pub fn name(&self, pid: usize) -> &str {
        &self.names[pid]
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn set(&mut self, pid: usize, value: Array2<f64>) {
        assert_eq!(self.values[pid].dim(), value.dim(), "shape change for {}", self.names[pid]);
        self.values[pid] = Arc::new(value);
    }

    pub fn set_entry(&mut self, pid: usize, at: (usize, usize), v: f64) {
        Arc::make_mut(&mut self.values[pid])[at] = v;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter().map(|v| &**v))
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Copy every parameter under `src_prefix` into the matching name under
    /// `dst_prefix`. Returns how many were copied.
    pub fn copy_prefix(&mut self, src_prefix: &str, dst_prefix: &str) -> usize {
        let pairs: Vec<(usize, usize)> = self
            .names
            .iter()
            .enumerate()
            .filter_map(|(sid, name)| {
                let rest = name.strip_prefix(src_prefix)?;
                let dst = format!("{dst_prefix}{rest}");
                self.index.get(&dst).map(|&did| (sid, did))
            })
            .collect();
        for &(sid, did) in &pairs {
            assert_eq!(self.values[sid].dim(), self.values[did].dim());
            self.values[did] = Arc::clone(&self.values[sid]);
        }
        pairs.len()
    }
}

/// Weight initializers. All draw from the provided RNG so runs are
/// reproducible given a seed.
pub mod init {
    use super::*;
    use rand_distr::{Distribution, Normal};

    pub fn normal<R: Rng>(rng: &mut R, shape: (usize, usize), std: f64) -> Array2<f64> {
        let dist = Normal::new(0.0, std).expect("std must be finite");
        Array2::from_shape_fn(shape, |_| dist.sample(rng))
    }

    pub fn zeros(shape: (usize, usize)) -> Array2<f64> {
        Array2::zeros(shape)
    }

    pub fn ones(shape: (usize, usize)) -> Array2<f64> {
        Array2::from_elem(shape, 1.0)
    }
}

/// AdamW with decoupled weight decay.
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let m = (0..store.len()).map(|p| Array2::zeros(store.value(p).raw_dim())).collect();
        let v = (0..store.len()).map(|p| Array2::zeros(store.value(p).raw_dim())).collect();
        AdamW { beta1, beta2, eps, weight_decay, m, v, t: 0 }
    }

    /// Apply one update with the given learning rate. Parameters without a
    /// gradient this step are left untouched (no decay either).
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for pid in 0..store.len() {
            let Some(g) = grads.get(pid) else { continue };
            let m = &mut self.m[pid];
            let v = &mut self.v[pid];
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let mut value = store.arc(pid);
            {
                let value = Arc::make_mut(&mut value);
                if self.weight_decay != 0.0 {
                    value.mapv_inplace(|x| x - lr * self.weight_decay * x);
                }
                ndarray::Zip::from(&mut *value).and(&*m).and(&*v).for_each(|x, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *x -= lr * mhat / (vhat.sqrt() + self.eps);
                });
            }
            store.set(pid, Arc::try_unwrap(value).unwrap_or_else(|a| (*a).clone()));
        }
    }
}

/// Clip gradients to a maximum global L2 norm. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale_all(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use ndarray::array;

    #[test]
    fn adamw_reduces_quadratic() {
        let mut store = ParamStore::new();
        let pid = store.register("x", array![[5.0, -3.0]]);
        let mut opt = AdamW::new(&store, 0.9, 0.999, 1e-8, 0.0);
        for _ in 0..800 {
            let mut tape = Tape::new();
            let x = tape.param(&store, pid);
            let sq = tape.mul(x, x);
            let loss = tape.sum_all(sq);
            let grads = tape.backward(loss, store.len());
            opt.step(&mut store, &grads, 0.05);
        }
        let v = store.value(pid);
        assert!(v[(0, 0)].abs() < 1e-2 && v[(0, 1)].abs() < 1e-2, "did not converge: {v:?}");
    }

    #[test]
    fn clip_caps_global_norm() {
        let mut store = ParamStore::new();
        let pid = store.register("x", array![[3.0, 4.0]]);
        let mut tape = Tape::new();
        let x = tape.param(&store, pid);
        let sq = tape.mul(x, x);
        let loss = tape.sum_all(sq);
        let mut grads = tape.backward(loss, store.len());
        // grad = 2x = [6, 8], norm 10
        let pre = clip_global_norm(&mut grads, 1.0);
        assert!((pre - 10.0).abs() < 1e-12);
        assert!((grads.global_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn copy_prefix_transfers_values() {
        let mut store = ParamStore::new();
        store.register("a.w", array![[1.0]]);
        store.register("b.w", array![[0.0]]);
        let n = store.copy_prefix("a.", "b.");
        assert_eq!(n, 1);
        assert_eq!(store.value(store.id_of("b.w").unwrap())[(0, 0)], 1.0);
    }
}
