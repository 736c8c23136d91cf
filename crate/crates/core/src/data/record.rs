use serde::{Deserialize, Serialize};

use super::DataError;

/// Steering labels are clipped to this range.
pub const STEER_LABEL_LIMIT: f32 = 0.25;

/// Maps the autopilot's continuous acceleration to the three classes
/// (values −1, 0.5 and 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccThresholds {
    /// Below this (m/s²) the class is 0 (value −1).
    pub brake_below: f64,
    /// Above this (m/s²) the class is 2 (value 1).
    pub accel_above: f64,
}

impl Default for AccThresholds {
    fn default() -> Self {
        Self { brake_below: -0.3, accel_above: 0.75 }
    }
}

impl AccThresholds {
    pub fn class(&self, accel: f64) -> u8 {
        if accel < self.brake_below {
            0
        } else if accel > self.accel_above {
            2
        } else {
            1
        }
    }
}

/// One sample: the 256×256 input image, two future masks and the autopilot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub episode: u32,
    pub frame: u32,
    /// Normalized steering clipped to ±[`STEER_LABEL_LIMIT`].
    pub steer: f32,
    /// Raw autopilot acceleration, m/s².
    pub accel: f32,
    pub acc_class: u8,
    /// Interleaved RGB.
    pub image: Vec<u8>,
    /// Other agents' future footprints; empty when the dataset stores no masks.
    pub pred: Vec<u8>,
    /// Ego future footprint; empty when the dataset stores no masks.
    pub plan: Vec<u8>,
}

impl FrameRecord {
    pub const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 1;

    pub fn encode(&self, size: usize, with_masks: bool) -> Result<Vec<u8>, DataError> {
        let px = size * size;
        if self.image.len() != 3 * px || (with_masks && (self.pred.len() != px || self.plan.len() != px)) {
            return Err(DataError::Invalid(format!(
                "record {}/{} has wrong buffer sizes for a {size}×{size} image",
                self.episode, self.frame
            )));
        }
        if self.acc_class > 2 || !self.steer.is_finite() || self.steer.abs() > STEER_LABEL_LIMIT {
            return Err(DataError::Invalid(format!("record {}/{} has invalid labels", self.episode, self.frame)));
        }
        let mut out = Vec::with_capacity(super::format::record_len(size, with_masks));
        out.extend_from_slice(&self.episode.to_le_bytes());
        out.extend_from_slice(&self.frame.to_le_bytes());
        out.extend_from_slice(&self.steer.to_le_bytes());
        out.extend_from_slice(&self.accel.to_le_bytes());
        out.push(self.acc_class);
        out.extend_from_slice(&self.image);
        if with_masks {
            out.extend_from_slice(&self.pred);
            out.extend_from_slice(&self.plan);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn decode(buf: &[u8], size: usize, with_masks: bool, index: usize) -> Result<Self, DataError> {
        let body = &buf[..buf.len() - 4];
        let stored = u32::from_le_bytes(buf[buf.len() - 4..].try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(DataError::Checksum { index });
        }
        let u32_at = |o: usize| u32::from_le_bytes(body[o..o + 4].try_into().unwrap());
        let px = size * size;
        let img_start = Self::HEADER_LEN;
        let (pred, plan) = if with_masks {
            let p0 = img_start + 3 * px;
            (body[p0..p0 + px].to_vec(), body[p0 + px..p0 + 2 * px].to_vec())
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Self {
            episode: u32_at(0),
            frame: u32_at(4),
            steer: f32::from_bits(u32_at(8)),
            accel: f32::from_bits(u32_at(12)),
            acc_class: body[16],
            image: body[img_start..img_start + 3 * px].to_vec(),
            pred,
            plan,
        })
    }
}
