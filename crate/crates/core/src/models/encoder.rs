use bevrep_autodiff::nn::{BatchNorm, Conv2d, Dense};
use bevrep_autodiff::{ParamStore, Real, Session, Var};
use rand::Rng;

use crate::error::{Error, Result};

pub const INPUT_CHANNELS: usize = 3;
pub const INPUT_SIZE: usize = 64;
pub const LATENT_DIM: usize = 64;
pub const CONV_CHANNELS: [usize; 3] = [32, 64, 128];
pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
/// Spatial side of the last feature map (64 → 31 → 14 → 6).
pub const FEATURE_SIDE: usize = 6;
pub const FEATURE_LEN: usize = 128 * FEATURE_SIDE * FEATURE_SIDE;

/// Three conv/BN/ReLU stages followed by a dense projection to the latent vector.
#[derive(Debug, Clone)]
pub struct Encoder {
    convs: [Conv2d; 3],
    norms: [BatchNorm; 3],
    fc: Dense,
}

/// Encoder output along with the post-activation feature maps of each stage.
#[derive(Debug, Clone, Copy)]
pub struct EncoderTrace {
    pub stages: [Var; 3],
    pub latent: Var,
}

impl Encoder {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, rng: &mut R) -> Self {
        let mut c_in = INPUT_CHANNELS;
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for (i, &c_out) in CONV_CHANNELS.iter().enumerate() {
            let name = format!("{prefix}.conv{}", i + 1);
            convs.push(Conv2d::new(store, &name, c_in, c_out, KERNEL, STRIDE, 0, rng));
            norms.push(BatchNorm::new(store, &format!("{prefix}.bn{}", i + 1), c_out));
            c_in = c_out;
        }
        let fc = Dense::new(store, &format!("{prefix}.fc"), FEATURE_LEN, LATENT_DIM, rng);
        Self {
            convs: convs.try_into().unwrap(),
            norms: norms.try_into().unwrap(),
            fc,
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, image: Var) -> Result<EncoderTrace> {
        let shape = s.value(image).shape().to_vec();
        if shape.len() != 4 || shape[1..] != [INPUT_CHANNELS, INPUT_SIZE, INPUT_SIZE] {
            return Err(Error::Config(format!(
                "encoder expects N×{INPUT_CHANNELS}×{INPUT_SIZE}×{INPUT_SIZE} input, got {shape:?}"
            )));
        }
        let n = shape[0];
        let mut h = image;
        let mut stages = [image; 3];
        for (i, (conv, bn)) in self.convs.iter().zip(&self.norms).enumerate() {
            h = conv.forward(s, h);
            h = bn.forward(s, h)?;
            h = s.tape.relu(h);
            stages[i] = h;
        }
        let flat = s.tape.reshape(h, &[n, FEATURE_LEN]);
        let latent = self.fc.forward(s, flat);
        Ok(EncoderTrace { stages, latent })
    }
}
