use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::CollectConfig;
use crate::error::{Error, Result};
use crate::models::HeadKind;
use crate::raster::BevSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    EncoderDecoder,
    Policy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// Settings of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub phase: Phase,
    /// Enabled decoder heads; reconstruction is always among them.
    pub heads: Vec<HeadKind>,
    pub lr: f64,
    /// Logical batch size; clamped to the training-set size.
    pub batch_size: usize,
    /// Largest slice of a batch pushed through the tape at once. Gradients of
    /// the slices are accumulated, so only batch-norm statistics see the
    /// smaller size.
    pub micro_batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    /// Share of the training split used, in (0, 1].
    pub fraction: f64,
    pub precision: Precision,
    /// When set, wall-clock columns are written as zero so logs are byte-reproducible.
    pub deterministic: bool,
}

impl TrainConfig {
    pub fn encoder_decoder(heads: &[HeadKind]) -> Self {
        Self {
            phase: Phase::EncoderDecoder,
            heads: heads.to_vec(),
            lr: 5e-3,
            batch_size: 2048,
            micro_batch: 64,
            epochs: 50,
            seed: 0,
            dataset: None,
            fraction: 1.0,
            precision: Precision::F32,
            deterministic: false,
        }
    }

    pub fn policy() -> Self {
        Self {
            phase: Phase::Policy,
            heads: vec![HeadKind::Recon],
            lr: 5e-4,
            batch_size: 2048,
            micro_batch: 2048,
            epochs: 100,
            seed: 0,
            dataset: None,
            fraction: 1.0,
            precision: Precision::F32,
            deterministic: false,
        }
    }

    /// Batch size actually used for a training set of `n` samples.
    pub fn effective_batch(&self, n: usize) -> usize {
        self.batch_size.min(n).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.micro_batch == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.heads.is_empty() || !self.heads.contains(&HeadKind::Recon) {
            return bad(format!("heads {:?} must include recon", self.heads));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad(format!("fraction {} is outside (0, 1]", self.fraction));
        }
        Ok(())
    }
}

/// Everything the experiment commands need, loadable from one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub collect: CollectConfig,
    pub bev: BevSpec,
    /// Frames in the encoder-decoder dataset.
    pub ae_frames: usize,
    /// Raw frames collected for the policy dataset before balancing. Balancing
    /// keeps roughly one in six or seven, so the default yields about 8k samples.
    pub policy_raw_frames: usize,
    pub ae_seed: u64,
    /// The policy dataset comes from separate episodes with this seed.
    pub policy_seed: u64,
    pub ae: TrainConfig,
    pub policy: TrainConfig,
    /// Policy trainings per encoder.
    pub n_seeds: usize,
    /// Ablation head sets.
    pub head_sets: Vec<Vec<HeadKind>>,
    /// Dataset-size sweep fractions of the training split.
    pub fractions: Vec<f64>,
    /// Head sets compared in the sweep.
    pub sweep_models: Vec<Vec<HeadKind>>,
    /// Concurrent (config, seed) cells.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        use HeadKind::*;
        Self {
            collect: CollectConfig::default(),
            bev: BevSpec::default(),
            ae_frames: 20_000,
            policy_raw_frames: 52_000,
            ae_seed: 1,
            policy_seed: 2,
            ae: TrainConfig::encoder_decoder(&[Recon]),
            policy: TrainConfig::policy(),
            n_seeds: 5,
            head_sets: vec![vec![Recon], vec![Recon, Pred], vec![Recon, Plan], vec![Recon, Pred, Plan]],
            fractions: vec![1.0, 0.5, 0.25, 0.125, 0.0625],
            sweep_models: vec![vec![Recon], vec![Recon, Pred, Plan]],
            workers: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.bev.validate()?;
        self.collect.validate(&self.bev)?;
        self.ae.validate()?;
        self.policy.validate()?;
        if self.n_seeds == 0 || self.head_sets.is_empty() || self.workers == 0 {
            return Err(Error::Config("n_seeds, head_sets and workers must be nonempty".into()));
        }
        for f in &self.fractions {
            if !(*f > 0.0 && *f <= 1.0) {
                return Err(Error::Config(format!("fraction {f} is outside (0, 1]")));
            }
        }
        for h in self.head_sets.iter().chain(&self.sweep_models) {
            if !h.contains(&HeadKind::Recon) {
                return Err(Error::Config(format!("head set {h:?} lacks recon")));
            }
        }
        Ok(())
    }
}

/// Canonical label of a head set, e.g. `recon+pred`.
pub fn heads_label(heads: &[HeadKind]) -> String {
    let mut h = heads.to_vec();
    h.sort();
    h.dedup();
    h.iter().map(|k| k.name()).collect::<Vec<_>>().join("+")
}
