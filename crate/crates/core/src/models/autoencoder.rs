use bevrep_autodiff::{Mode, ParamId, ParamStore, Real, Session, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::decoder::{DecoderHead, HeadKind};
use super::encoder::{Encoder, EncoderTrace, LATENT_DIM};
use crate::error::{Error, Result};

pub const ENCODER_PREFIX: &str = "encoder";

/// One batch of encoder-decoder training data, all values in [0, 1].
#[derive(Debug, Clone)]
pub struct AeBatch<T> {
    /// N×3×64×64 input image (also the reconstruction target).
    pub image: Tensor<T>,
    /// N×1×64×64 soft mask of other agents' future footprints.
    pub pred: Tensor<T>,
    /// N×1×64×64 soft mask of the ego's future footprint.
    pub plan: Tensor<T>,
}

impl<T: Real> AeBatch<T> {
    pub fn len(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn target(&self, head: HeadKind) -> &Tensor<T> {
        match head {
            HeadKind::Recon => &self.image,
            HeadKind::Pred => &self.pred,
            HeadKind::Plan => &self.plan,
        }
    }
}

/// Loss nodes of one forward pass: one BCE term per enabled head plus their sum.
#[derive(Debug, Clone)]
pub struct HeadLosses {
    pub terms: Vec<(HeadKind, Var)>,
    pub total: Var,
}

/// Scalar loss values of one pass, per head in head order and in total.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLosses {
    pub per_head: Vec<(HeadKind, f64)>,
    pub total: f64,
}

impl StepLosses {
    fn read<T: Real>(s: &Session<'_, T>, l: &HeadLosses) -> Self {
        let get = |v: Var| s.value(v).data()[0].as_f64();
        Self { per_head: l.terms.iter().map(|&(k, v)| (k, get(v))).collect(), total: get(l.total) }
    }

    pub fn head(&self, kind: HeadKind) -> Option<f64> {
        self.per_head.iter().find(|(k, _)| *k == kind).map(|&(_, v)| v)
    }
}

/// Shared encoder with one or more decoder heads. With only the
/// reconstruction head this is the single-head baseline.
#[derive(Debug, Clone)]
pub struct EncoderDecoder<T> {
    pub store: ParamStore<T>,
    pub encoder: Encoder,
    pub heads: Vec<DecoderHead>,
}

impl<T: Real> EncoderDecoder<T> {
    /// Builds the network with Kaiming-uniform weights. The encoder is always
    /// initialized first from `seed`, so models that differ only in their heads
    /// start from identical encoder weights.
    pub fn new(heads: &[HeadKind], seed: u64) -> Result<Self> {
        let mut heads: Vec<HeadKind> = heads.to_vec();
        heads.sort();
        heads.dedup();
        if !heads.contains(&HeadKind::Recon) {
            return Err(Error::Config("the reconstruction head is always required".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(&mut store, ENCODER_PREFIX, &mut rng);
        let heads = heads
            .into_iter()
            .map(|k| {
                let mut head_rng = ChaCha8Rng::seed_from_u64(seed ^ (0xD1CE_u64 << (8 * k as u64)));
                DecoderHead::new(&mut store, k, &mut head_rng)
            })
            .collect();
        Ok(Self { store, encoder, heads })
    }

    pub fn head_kinds(&self) -> Vec<HeadKind> {
        self.heads.iter().map(|h| h.kind).collect()
    }

    /// Shape manifest restricted to the encoder tensors.
    pub fn encoder_manifest(&self) -> String {
        self.store.shape_manifest_with_prefix(&format!("{ENCODER_PREFIX}."))
    }

    pub fn encode_in(&self, s: &mut Session<'_, T>, image: Var) -> Result<EncoderTrace> {
        self.encoder.forward(s, image)
    }

    /// Runs the encoder and every head; returns the trace and per-head outputs.
    pub fn forward_in(&self, s: &mut Session<'_, T>, image: Var) -> Result<(EncoderTrace, Vec<(HeadKind, Var)>)> {
        run_heads(&self.encoder, &self.heads, s, image)
    }

    /// Unweighted sum of per-head Bernoulli NLL terms.
    pub fn losses_in(&self, s: &mut Session<'_, T>, batch: &AeBatch<T>) -> Result<HeadLosses> {
        losses(&self.encoder, &self.heads, s, batch, None)
    }

    /// Like [`Self::losses_in`] with one weight per enabled head (in head order)
    /// applied to the terms before summing.
    pub fn weighted_losses_in(&self, s: &mut Session<'_, T>, batch: &AeBatch<T>, weights: &[f64]) -> Result<HeadLosses> {
        if weights.len() != self.heads.len() {
            return Err(Error::Config(format!("{} weights for {} heads", weights.len(), self.heads.len())));
        }
        losses(&self.encoder, &self.heads, s, batch, Some(weights))
    }

    /// Forward and backward pass on one batch. The total loss is multiplied by
    /// `scale` before differentiation (for gradient accumulation over
    /// micro-batches); the reported values are unscaled.
    pub fn loss_and_grads(
        &mut self,
        batch: &AeBatch<T>,
        seed: u64,
        scale: f64,
    ) -> Result<(StepLosses, Vec<(ParamId, Tensor<T>)>)> {
        let Self { store, encoder, heads } = self;
        let mut s = Session::new(store, Mode::Train, seed);
        let l = losses(encoder, heads, &mut s, batch, None)?;
        let out = StepLosses::read(&s, &l);
        let scaled = s.tape.scale(l.total, scale);
        s.backward(scaled)?;
        Ok((out, s.grads()))
    }

    /// Eval-mode loss values on one batch; running statistics are untouched.
    pub fn eval_losses(&mut self, batch: &AeBatch<T>) -> Result<StepLosses> {
        let Self { store, encoder, heads } = self;
        let mut s = Session::new(store, Mode::Eval, 0);
        let l = losses(encoder, heads, &mut s, batch, None)?;
        Ok(StepLosses::read(&s, &l))
    }

    /// Latent vectors of `images` (N×3×64×64) in the given mode.
    pub fn encode(&mut self, images: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut s = Session::new(&mut self.store, mode, 0);
        let x = s.input(images.clone());
        let trace = self.encoder.forward(&mut s, x)?;
        let z = s.value(trace.latent).clone();
        debug_assert_eq!(z.shape()[1], LATENT_DIM);
        Ok(z)
    }

    /// Decoded images for every head, in eval mode.
    pub fn reconstruct(&mut self, images: &Tensor<T>) -> Result<Vec<(HeadKind, Tensor<T>)>> {
        let mut s = Session::new(&mut self.store, Mode::Eval, 0);
        let x = s.input(images.clone());
        let (_, outs) = run_heads(&self.encoder, &self.heads, &mut s, x)?;
        Ok(outs.into_iter().map(|(k, v)| (k, s.value(v).clone())).collect())
    }
}

fn losses<T: Real>(
    encoder: &Encoder,
    heads: &[DecoderHead],
    s: &mut Session<'_, T>,
    batch: &AeBatch<T>,
    weights: Option<&[f64]>,
) -> Result<HeadLosses> {
    let image = s.input(batch.image.clone());
    let (_, outs) = run_heads(encoder, heads, s, image)?;
    let mut terms = Vec::with_capacity(outs.len());
    for (kind, out) in outs {
        terms.push((kind, s.tape.bce(out, batch.target(kind))));
    }
    let mut weighted = Vec::with_capacity(terms.len());
    for (k, &(_, v)) in terms.iter().enumerate() {
        weighted.push(match weights {
            Some(w) => s.tape.scale(v, w[k]),
            None => v,
        });
    }
    let total = weighted[1..].iter().fold(weighted[0], |acc, &v| s.tape.add(acc, v));
    Ok(HeadLosses { terms, total })
}

fn run_heads<T: Real>(
    encoder: &Encoder,
    heads: &[DecoderHead],
    s: &mut Session<'_, T>,
    image: Var,
) -> Result<(EncoderTrace, Vec<(HeadKind, Var)>)> {
    let trace = encoder.forward(s, image)?;
    let mut outs = Vec::with_capacity(heads.len());
    for head in heads {
        outs.push((head.kind, head.forward(s, trace.latent)?));
    }
    Ok((trace, outs))
}
