use bevrep_autodiff::{Real, Tensor};
use serde::{Deserialize, Serialize};

use super::encoder::LATENT_DIM;

pub const STD_FLOOR: f64 = 1e-6;

/// Per-dimension z-score statistics of a set of latent vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentStats {
    /// Fits mean and (population) standard deviation over the rows of an N×64 tensor.
    pub fn fit<T: Real>(latents: &Tensor<T>) -> Self {
        let (n, d) = (latents.shape()[0], latents.shape()[1]);
        assert!(n > 0, "cannot fit latent statistics on an empty set");
        assert_eq!(d, LATENT_DIM);
        let mut mean = vec![0.0; d];
        for row in latents.data().chunks(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v.as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for row in latents.data().chunks(d) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let e = v.as_f64() - m;
                *s += e * e;
            }
        }
        let std = var.iter().map(|s| (s / n as f64).sqrt().max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    pub fn normalize<T: Real>(&self, latents: &Tensor<T>) -> Tensor<T> {
        let d = self.mean.len();
        let mut out = latents.clone();
        for row in out.data_mut().chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = T::cast((v.as_f64() - m) / s);
            }
        }
        out
    }
}
