//! The encoder, decoder heads and policy network, plus latent normalization.

pub mod autoencoder;
pub mod decoder;
pub mod encoder;
pub mod latent;
pub mod policy;

pub use autoencoder::{AeBatch, EncoderDecoder, HeadLosses, StepLosses};
pub use decoder::{DecoderHead, HeadKind};
pub use encoder::{Encoder, EncoderTrace, LATENT_DIM};
pub use latent::LatentStats;
pub use policy::{policy_loss, PolicyLosses, PolicyNet, PolicyOutput, ACC_CLASS_VALUES, STEER_LIMIT};
