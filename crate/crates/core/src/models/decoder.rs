use bevrep_autodiff::nn::{BatchNorm, ConvTranspose2d, Dense};
use bevrep_autodiff::{ParamStore, Real, Session, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{FEATURE_LEN, FEATURE_SIDE, KERNEL, LATENT_DIM, STRIDE};
use crate::error::Result;

/// Which image a decoder head reconstructs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// The RGB input image.
    Recon,
    /// Binary mask of the other agents' next second of motion.
    Pred,
    /// Binary mask of the ego vehicle's next second of motion.
    Plan,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::Recon, HeadKind::Pred, HeadKind::Plan];

    pub fn out_channels(self) -> usize {
        match self {
            HeadKind::Recon => 3,
            HeadKind::Pred | HeadKind::Plan => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Recon => "recon",
            HeadKind::Pred => "pred",
            HeadKind::Plan => "plan",
        }
    }
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for HeadKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "recon" => Ok(HeadKind::Recon),
            "pred" => Ok(HeadKind::Pred),
            "plan" => Ok(HeadKind::Plan),
            other => Err(format!("unknown head {other:?} (expected recon, pred or plan)")),
        }
    }
}

/// Dense + BN + ReLU up to a 128×6×6 map, then three stride-2 transposed
/// convolutions (6 → 14 → 31 → 64) ending in a sigmoid.
#[derive(Debug, Clone)]
pub struct DecoderHead {
    pub kind: HeadKind,
    fc: Dense,
    fc_norm: BatchNorm,
    deconvs: [ConvTranspose2d; 3],
    norms: [BatchNorm; 2],
}

const DECONV_CHANNELS: [usize; 3] = [128, 64, 32];
/// Output padding per stage, chosen so the spatial sizes invert the encoder.
const OUTPUT_PADDING: [usize; 3] = [0, 1, 0];

impl DecoderHead {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, kind: HeadKind, rng: &mut R) -> Self {
        let prefix = kind.name();
        let fc = Dense::new(store, &format!("{prefix}.fc"), LATENT_DIM, FEATURE_LEN, rng);
        let fc_norm = BatchNorm::new(store, &format!("{prefix}.fc_bn"), FEATURE_LEN);
        let outs = [64, 32, kind.out_channels()];
        let mut deconvs = Vec::new();
        for i in 0..3 {
            deconvs.push(ConvTranspose2d::new(
                store,
                &format!("{prefix}.deconv{}", i + 1),
                DECONV_CHANNELS[i],
                outs[i],
                KERNEL,
                STRIDE,
                OUTPUT_PADDING[i],
                rng,
            ));
        }
        let norms = [
            BatchNorm::new(store, &format!("{prefix}.bn1"), 64),
            BatchNorm::new(store, &format!("{prefix}.bn2"), 32),
        ];
        Self {
            kind,
            fc,
            fc_norm,
            deconvs: deconvs.try_into().unwrap(),
            norms,
        }
    }

    /// Maps an N×64 latent to an N×C×64×64 image in (0, 1).
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, latent: Var) -> Result<Var> {
        let n = s.value(latent).shape()[0];
        let mut h = self.fc.forward(s, latent);
        h = self.fc_norm.forward(s, h)?;
        h = s.tape.relu(h);
        h = s.tape.reshape(h, &[n, 128, FEATURE_SIDE, FEATURE_SIDE]);
        for i in 0..2 {
            h = self.deconvs[i].forward(s, h);
            h = self.norms[i].forward(s, h)?;
            h = s.tape.relu(h);
        }
        h = self.deconvs[2].forward(s, h);
        Ok(s.tape.sigmoid(h))
    }
}
