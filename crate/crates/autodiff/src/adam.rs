use crate::params::{ParamId, ParamKind, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments for every trainable tensor of one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    /// First moments, indexed by parameter id (`None` for buffers).
    pub m: Vec<Option<Tensor<T>>>,
    pub v: Vec<Option<Tensor<T>>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let moments = || -> Vec<Option<Tensor<T>>> {
            store
                .iter()
                .map(|(_, e)| (e.kind == ParamKind::Trainable).then(|| Tensor::zeros(e.tensor.shape())))
                .collect()
        };
        Self {
            m: moments(),
            v: moments(),
            step: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }

    /// One bias-corrected Adam update. Parameters absent from `grads` are left alone.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)], lr: f64) {
        assert!(lr > 0.0, "learning rate must be positive");
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::cast(self.beta1), T::cast(self.beta2));
        let c1 = T::cast(1.0 - self.beta1.powi(t));
        let c2 = T::cast(1.0 - self.beta2.powi(t));
        let lr = T::cast(lr);
        let eps = T::cast(self.eps);
        for (id, g) in grads {
            let i = id.index();
            let (Some(m), Some(v)) = (self.m[i].as_mut(), self.v[i].as_mut()) else {
                continue;
            };
            let p = store.get_mut(*id);
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((w, &gi), (mi, vi)) in iter {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
