//! Adam with warmup / inverse-square-root decay and global-norm clipping.

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

/// Linear warmup to `peak` over `warmup` steps, then `peak * sqrt(warmup / step)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub peak: f64,
    pub warmup: u64,
}

impl Schedule {
    /// Learning rate of the 1-based optimizer `step`.
    pub fn at(&self, step: u64) -> f64 {
        let step = step.max(1) as f64;
        if self.warmup == 0 {
            return self.peak;
        }
        let w = self.warmup as f64;
        self.peak * (step / w).min((w / step).sqrt())
    }
}

/// Scales every gradient so the global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<F: Real>(grads: &mut [Tensor<F>], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&x| {
            let x = x.to_f64().unwrap_or(f64::NAN);
            x * x
        })
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = F::c(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    t: u64,
}

impl<F: Real> Adam<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        let zeros = || store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update; `grads` is aligned with the store order.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[Tensor<F>], lr: f64) {
        self.t += 1;
        let (b1, b2) = (F::c(self.beta1), F::c(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = F::c(lr * c2.sqrt() / c1);
        let eps = F::c(self.eps * c2.sqrt());
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id);
            let (m, v, g) = (self.m[k].data_mut(), self.v[k].data_mut(), grads[k].data());
            for (((w, m), v), &g) in p.data_mut().iter_mut().zip(m).zip(v).zip(g) {
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                *w -= step * *m / (v.sqrt() + eps);
            }
        }
    }
}
