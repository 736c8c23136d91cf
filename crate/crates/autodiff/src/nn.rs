//! Parameterized layers that register their tensors in a [`ParamStore`].

use crate::error::AutodiffError;
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::real::Real;
use crate::session::Session;
use crate::tape::Var;
use crate::tensor::Tensor;
use rand::Rng;

/// Kaiming-uniform bound for ReLU networks: `sqrt(6 / fan_in)`.
fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let bound = kaiming_bound(c_in * kernel * kernel);
        let w = Tensor::uniform(&[c_out, c_in, kernel, kernel], -bound, bound, rng);
        Self {
            weight: store.add(format!("{name}.weight"), w, ParamKind::Trainable),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]), ParamKind::Trainable),
            stride,
            padding,
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Var {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        s.tape.conv2d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub output_padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        output_padding: usize,
        rng: &mut R,
    ) -> Self {
        // each output pixel sees c_in * (kernel / stride)^2 inputs
        let fan_in = (c_in * kernel * kernel / (stride * stride)).max(1);
        let bound = kaiming_bound(fan_in);
        let w = Tensor::uniform(&[c_in, c_out, kernel, kernel], -bound, bound, rng);
        Self {
            weight: store.add(format!("{name}.weight"), w, ParamKind::Trainable),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]), ParamKind::Trainable),
            stride,
            output_padding,
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Var {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        s.tape.conv_transpose2d(x, w, b, self.stride, self.output_padding)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        f_in: usize,
        f_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = kaiming_bound(f_in);
        let w = Tensor::uniform(&[f_out, f_in], -bound, bound, rng);
        Self {
            weight: store.add(format!("{name}.weight"), w, ParamKind::Trainable),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[f_out]), ParamKind::Trainable),
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Var {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        s.tape.dense(x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels]), ParamKind::Trainable),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), ParamKind::Trainable),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[channels]), ParamKind::Buffer),
            running_var: store.add(format!("{name}.running_var"), Tensor::ones(&[channels]), ParamKind::Buffer),
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var, AutodiffError> {
        s.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var)
    }
}
