use bevrep_autodiff::nn::Dense;
use bevrep_autodiff::{Mode, ParamId, ParamStore, Real, Session, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::LATENT_DIM;
use crate::error::Result;

/// Applied steering command range; the head output is clipped to it at inference.
pub const STEER_LIMIT: f64 = 0.25;
/// Acceleration value of each class index.
pub const ACC_CLASS_VALUES: [f64; 3] = [-1.0, 0.5, 1.0];
pub const DROPOUT: f64 = 0.5;

const STEER_WIDTHS: [usize; 3] = [256, 64, 1];
const ACC_WIDTHS: [usize; 3] = [128, 64, 3];

/// Two fully connected heads on the normalized latent: steering regression
/// and a three-way acceleration classifier.
#[derive(Debug, Clone)]
pub struct PolicyNet<T> {
    pub store: ParamStore<T>,
    steer: [Dense; 3],
    acc: [Dense; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    /// Steering clipped to ±[`STEER_LIMIT`].
    pub steer: f64,
    pub acc_probs: [f64; 3],
}

impl PolicyOutput {
    pub fn acc_class(&self) -> usize {
        argmax(&self.acc_probs)
    }

    pub fn acc_value(&self) -> f64 {
        ACC_CLASS_VALUES[self.acc_class()]
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn stack<T: Real>(store: &mut ParamStore<T>, name: &str, widths: [usize; 3], rng: &mut ChaCha8Rng) -> [Dense; 3] {
    let mut f_in = LATENT_DIM;
    let mut layers = Vec::new();
    for (i, &w) in widths.iter().enumerate() {
        layers.push(Dense::new(store, &format!("{name}.fc{}", i + 1), f_in, w, rng));
        f_in = w;
    }
    layers.try_into().unwrap()
}

impl<T: Real> PolicyNet<T> {
    pub fn new(seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let steer = stack(&mut store, "steer", STEER_WIDTHS, &mut rng);
        let acc = stack(&mut store, "acc", ACC_WIDTHS, &mut rng);
        Self { store, steer, acc }
    }

    fn mlp(layers: &[Dense; 3], s: &mut Session<'_, T>, z: Var) -> Var {
        let mut h = z;
        for layer in &layers[..2] {
            h = layer.forward(s, h);
            h = s.tape.relu(h);
            h = s.dropout(h, DROPOUT);
        }
        layers[2].forward(s, h)
    }

    /// Returns the raw (unclipped) N×1 steering output and N×3 class probabilities.
    pub fn forward_in(&self, s: &mut Session<'_, T>, z_norm: Var) -> (Var, Var) {
        Self::heads(&self.steer, &self.acc, s, z_norm)
    }

    fn heads(steer: &[Dense; 3], acc: &[Dense; 3], s: &mut Session<'_, T>, z_norm: Var) -> (Var, Var) {
        let steer = Self::mlp(steer, s, z_norm);
        let logits = Self::mlp(acc, s, z_norm);
        let probs = s.tape.softmax(logits);
        (steer, probs)
    }

    /// Eval-mode predictions with the steering command clipped.
    pub fn predict(&mut self, z_norm: &Tensor<T>) -> Vec<PolicyOutput> {
        let mut s = Session::new(&mut self.store, Mode::Eval, 0);
        let z = s.input(z_norm.clone());
        let (steer, probs) = Self::heads(&self.steer, &self.acc, &mut s, z);
        let steer = s.value(steer).data().to_vec();
        let probs = s.value(probs).data().to_vec();
        steer
            .iter()
            .zip(probs.chunks(3))
            .map(|(st, p)| PolicyOutput {
                steer: st.as_f64().clamp(-STEER_LIMIT, STEER_LIMIT),
                acc_probs: [p[0].as_f64(), p[1].as_f64(), p[2].as_f64()],
            })
            .collect()
    }
}

/// Loss values of one policy pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyLosses {
    pub total: f64,
    pub steer: f64,
    pub acc: f64,
}

impl<T: Real> PolicyNet<T> {
    fn pass(
        &mut self,
        mode: Mode,
        seed: u64,
        z_norm: &Tensor<T>,
        steer_gt: &Tensor<T>,
        acc_gt: &[usize],
        scale: Option<f64>,
    ) -> Result<(PolicyLosses, Vec<(ParamId, Tensor<T>)>)> {
        let Self { store, steer, acc } = self;
        let mut s = Session::new(store, mode, seed);
        let z = s.input(z_norm.clone());
        let (st, probs) = Self::heads(steer, acc, &mut s, z);
        let (total, st_l, acc_l) = policy_loss(&mut s, st, probs, steer_gt, acc_gt)?;
        let get = |v: Var| s.value(v).data()[0].as_f64();
        let out = PolicyLosses { total: get(total), steer: get(st_l), acc: get(acc_l) };
        let grads = match scale {
            Some(k) => {
                let scaled = s.tape.scale(total, k);
                s.backward(scaled)?;
                s.grads()
            }
            None => Vec::new(),
        };
        Ok((out, grads))
    }

    /// Train-mode forward and backward pass; the loss is multiplied by
    /// `scale` before differentiation.
    pub fn loss_and_grads(
        &mut self,
        z_norm: &Tensor<T>,
        steer_gt: &Tensor<T>,
        acc_gt: &[usize],
        seed: u64,
        scale: f64,
    ) -> Result<(PolicyLosses, Vec<(ParamId, Tensor<T>)>)> {
        self.pass(Mode::Train, seed, z_norm, steer_gt, acc_gt, Some(scale))
    }

    /// Eval-mode loss on unclipped outputs.
    pub fn eval_loss(&mut self, z_norm: &Tensor<T>, steer_gt: &Tensor<T>, acc_gt: &[usize]) -> Result<PolicyLosses> {
        Ok(self.pass(Mode::Eval, 0, z_norm, steer_gt, acc_gt, None)?.0)
    }
}

/// Smooth-L1 on the unclipped steering output plus cross-entropy on the
/// acceleration class, unweighted.
pub fn policy_loss<T: Real>(
    s: &mut Session<'_, T>,
    steer: Var,
    acc_probs: Var,
    steer_gt: &Tensor<T>,
    acc_gt: &[usize],
) -> Result<(Var, Var, Var)> {
    let steer_term = s.tape.smooth_l1(steer, steer_gt);
    let acc_term = s.tape.cross_entropy(acc_probs, acc_gt);
    let total = s.tape.add(steer_term, acc_term);
    Ok((total, steer_term, acc_term))
}
