use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            weight_decay: 0.01,
        }
    }
}

/// Moment estimates for a registered subset of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    registered: Vec<ParamId>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    /// Fresh zero state over `registered` parameters of `store`.
    pub fn new(store: &ParamStore, registered: Vec<ParamId>, cfg: AdamConfig) -> Self {
        let m: Vec<Tensor> = registered
            .iter()
            .map(|id| Tensor::zeros(store.get(*id).shape()))
            .collect();
        Self {
            cfg,
            v: m.clone(),
            m,
            registered,
            step: 0,
        }
    }

    /// State covering every parameter of `store`.
    pub fn for_all(store: &ParamStore, cfg: AdamConfig) -> Self {
        Self::new(store, store.ids().collect(), cfg)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn registered(&self) -> &[ParamId] {
        &self.registered
    }

    pub fn moments(&self, i: usize) -> (&Tensor, &Tensor) {
        (&self.m[i], &self.v[i])
    }

    /// Restores moments and step count (checkpoint load).
    pub fn restore(&mut self, m: Vec<Tensor>, v: Vec<Tensor>, step: u64) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::format("optimizer state", "moment count mismatch"));
        }
        for ((old, new), nv) in self.m.iter().zip(&m).zip(&v) {
            if old.shape() != new.shape() || old.shape() != nv.shape() {
                return Err(Error::dim("optimizer state", old.shape(), new.shape()));
            }
        }
        self.m = m;
        self.v = v;
        self.step = step;
        Ok(())
    }

    /// Decoupled weight decay `p ← p − lr·wd·p`, then the bias-corrected Adam
    /// update. Every registered parameter must have a gradient.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64) -> Result<()> {
        for &id in &self.registered {
            let g = grads.get(id).ok_or_else(|| {
                Error::contract(format!("missing gradient for parameter {}", store.name(id)))
            })?;
            if g.shape() != store.get(id).shape() {
                return Err(Error::dim("adam_step", store.get(id).shape(), g.shape()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, &id) in self.registered.iter().enumerate() {
            let g = grads.get(id).expect("checked above").data();
            let p = store.get_mut(id).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                p[j] -= lr * weight_decay * p[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// SHA-256 over step count and every moment buffer, bit-exact.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.step.to_le_bytes());
        for t in self.m.iter().chain(&self.v) {
            for x in t.data() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamGroup;

    fn one_param(value: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", ParamGroup::Context, Tensor::vector(vec![value]));
        (s, id)
    }

    #[test]
    fn first_step_is_normalized_gradient() {
        let (mut store, id) = one_param(1.5);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut st = AdamState::for_all(&store, cfg);
        let mut grads = ParamGrads::zeros_like(&store);
        grads.set(id, Tensor::vector(vec![-0.3]));
        let lr = 1e-2;
        st.apply(&mut store, &grads, lr).unwrap();
        // m̂ = g, v̂ = g² after one step
        let expected = 1.5 - lr * -0.3 / (0.3 + 1e-6);
        assert!((store.get(id).data()[0] - expected).abs() < 1e-15);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let (mut store, id) = one_param(0.7);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut st = AdamState::for_all(&store, cfg);
        let grads = ParamGrads::zeros_like(&store);
        for _ in 0..3 {
            st.apply(&mut store, &grads, 0.1).unwrap();
        }
        assert_eq!(store.get(id).data()[0], 0.7);
    }

    #[test]
    fn decoupled_weight_decay_shrinks_parameters() {
        let (mut store, id) = one_param(2.0);
        let mut st = AdamState::for_all(&store, AdamConfig::default());
        let zeros = ParamGrads::zeros_like(&store);
        st.apply(&mut store, &zeros, 0.5).unwrap();
        assert!((store.get(id).data()[0] - 2.0 * (1.0 - 0.5 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn two_steps_reduce_a_quadratic() {
        // f(p) = (p - 3)^2
        let (mut store, id) = one_param(0.0);
        let mut st = AdamState::for_all(&store, AdamConfig::default());
        let f = |p: f64| (p - 3.0).powi(2);
        let start = f(0.0);
        let mut prev = start;
        for _ in 0..2 {
            let p = store.get(id).data()[0];
            let mut g = ParamGrads::zeros_like(&store);
            g.set(id, Tensor::vector(vec![2.0 * (p - 3.0)]));
            st.apply(&mut store, &g, 0.1).unwrap();
            let now = f(store.get(id).data()[0]);
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn missing_gradient_names_the_parameter() {
        let (mut store, _) = one_param(1.0);
        let mut st = AdamState::for_all(&store, AdamConfig::default());
        let err = st.apply(&mut store, &ParamGrads::empty(1), 0.1).unwrap_err();
        assert!(err.to_string().contains("parameter p"), "{err}");
    }

    #[test]
    fn registration_order_does_not_change_the_update() {
        let mut store = ParamStore::new();
        let a = store.add("a", ParamGroup::Context, Tensor::vector(vec![1.0, -2.0]));
        let b = store.add("b", ParamGroup::Encoder, Tensor::vector(vec![0.5]));
        let mut grads = ParamGrads::zeros_like(&store);
        grads.set(a, Tensor::vector(vec![0.1, 0.4]));
        grads.set(b, Tensor::vector(vec![-1.0]));
        let mut s1 = store.clone();
        let mut s2 = store.clone();
        let mut o1 = AdamState::new(&store, vec![a, b], AdamConfig::default());
        let mut o2 = AdamState::new(&store, vec![b, a], AdamConfig::default());
        for _ in 0..3 {
            o1.apply(&mut s1, &grads, 0.01).unwrap();
            o2.apply(&mut s2, &grads, 0.01).unwrap();
        }
        assert_eq!(s1, s2);
    }
}
