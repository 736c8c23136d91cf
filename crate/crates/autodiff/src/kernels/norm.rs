//! Per-channel batch normalization over N×C×H×W (or N×C) tensors.

use crate::real::Real;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Saved forward context needed by the backward pass.
#[derive(Debug, Clone)]
pub struct BnContext<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub train: bool,
}

/// Batch statistics of one forward pass in train mode.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased variance (divides by the element count).
    pub var: Vec<T>,
    pub count: usize,
}

fn channel_iter<T: Real>(data: &[T], n: usize, c: usize, hw: usize, ch: usize) -> impl Iterator<Item = T> + '_ {
    (0..n).flat_map(move |s| data[(s * c + ch) * hw..(s * c + ch + 1) * hw].iter().copied())
}

/// Normalizes with the given statistics, then applies `gamma`/`beta`.
fn normalize<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    inv_std: &[T],
) -> (Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    for s in 0..n {
        for ch in 0..c {
            let range = (s * c + ch) * hw..(s * c + ch + 1) * hw;
            let src = &x.data()[range.clone()];
            let xh = &mut xhat.data_mut()[range.clone()];
            for (d, &v) in xh.iter_mut().zip(src) {
                *d = (v - mean[ch]) * inv_std[ch];
            }
            let yy = &mut y.data_mut()[range.clone()];
            for (d, &v) in yy.iter_mut().zip(&xhat.data()[range]) {
                *d = gamma[ch] * v + beta[ch];
            }
        }
    }
    (y, xhat)
}

pub fn batch_stats<T: Real>(x: &Tensor<T>) -> BatchStats<T> {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let count = n * hw;
    let m = T::cast(count as f64);
    let mut mean = Vec::with_capacity(c);
    let mut var = Vec::with_capacity(c);
    for ch in 0..c {
        let mu = channel_iter(x.data(), n, c, hw, ch).fold(T::zero(), |a, v| a + v) / m;
        let sq = channel_iter(x.data(), n, c, hw, ch).fold(T::zero(), |a, v| a + (v - mu) * (v - mu)) / m;
        mean.push(mu);
        var.push(sq);
    }
    BatchStats { mean, var, count }
}

pub fn forward_train<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
) -> (Tensor<T>, BnContext<T>, BatchStats<T>) {
    let stats = batch_stats(x);
    let eps = T::cast(BN_EPS);
    let inv_std: Vec<T> = stats.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (y, xhat) = normalize(x, gamma, beta, &stats.mean, &inv_std);
    (
        y,
        BnContext {
            xhat,
            inv_std,
            train: true,
        },
        stats,
    )
}

pub fn forward_eval<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
) -> (Tensor<T>, BnContext<T>) {
    let eps = T::cast(BN_EPS);
    let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (y, xhat) = normalize(x, gamma, beta, running_mean, &inv_std);
    (
        y,
        BnContext {
            xhat,
            inv_std,
            train: false,
        },
    )
}

/// Exponential running-stat update; the variance uses the unbiased estimate.
pub fn update_running<T: Real>(stats: &BatchStats<T>, running_mean: &mut [T], running_var: &mut [T]) {
    let mom = T::cast(BN_MOMENTUM);
    let unbias = T::cast(stats.count as f64 / (stats.count as f64 - 1.0));
    for ch in 0..running_mean.len() {
        running_mean[ch] = (T::one() - mom) * running_mean[ch] + mom * stats.mean[ch];
        running_var[ch] = (T::one() - mom) * running_var[ch] + mom * stats.var[ch] * unbias;
    }
}

/// Returns (dx, dgamma, dbeta).
pub fn backward<T: Real>(dy: &Tensor<T>, gamma: &[T], ctx: &BnContext<T>) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let (n, c, h, w) = dy.dims4();
    let hw = h * w;
    let m = T::cast((n * hw) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        for s in 0..n {
            let range = (s * c + ch) * hw..(s * c + ch + 1) * hw;
            for (&g, &xh) in dy.data()[range.clone()].iter().zip(&ctx.xhat.data()[range]) {
                dbeta[ch] = dbeta[ch] + g;
                dgamma[ch] = dgamma[ch] + g * xh;
            }
        }
    }
    let mut dx = Tensor::zeros(dy.shape());
    for s in 0..n {
        for ch in 0..c {
            let range = (s * c + ch) * hw..(s * c + ch + 1) * hw;
            let scale = gamma[ch] * ctx.inv_std[ch];
            let dst = &mut dx.data_mut()[range.clone()];
            let src = &dy.data()[range.clone()];
            if ctx.train {
                let xh = &ctx.xhat.data()[range];
                for ((d, &g), &x) in dst.iter_mut().zip(src).zip(xh) {
                    *d = scale * (g - dbeta[ch] / m - x * dgamma[ch] / m);
                }
            } else {
                for (d, &g) in dst.iter_mut().zip(src) {
                    *d = scale * g;
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}
