use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sim::DT;

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorTable {
    pub background: Rgb,
    pub drivable: Rgb,
    pub lane_line: Rgb,
    pub route_green: Rgb,
    pub route_red: Rgb,
    pub ego: Rgb,
    pub other: Rgb,
}

impl Default for ColorTable {
    fn default() -> Self {
        Self {
            background: [0, 0, 0],
            drivable: [80, 80, 80],
            lane_line: [255, 255, 255],
            route_green: [0, 255, 0],
            route_red: [255, 0, 0],
            ego: [0, 0, 255],
            other: [255, 255, 0],
        }
    }
}

/// Geometry and styling of the bird's-eye-view rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BevSpec {
    pub image_size: usize,
    /// Side of the square field of view, meters.
    pub fov: f64,
    /// Ego position from the left edge, meters.
    pub anchor_lateral: f64,
    /// Ego position from the bottom edge, meters.
    pub anchor_from_bottom: f64,
    pub history_len: usize,
    pub future_len: usize,
    pub colors: ColorTable,
    /// Intensity lost per step of pose age, in percent.
    pub fade_percent_per_step: u32,
    pub lane_line_px: f64,
    pub route_px: f64,
    /// Length of route drawn ahead of the ego, meters.
    pub route_lookahead: f64,
}

impl Default for BevSpec {
    fn default() -> Self {
        Self {
            image_size: 256,
            fov: 40.0,
            anchor_lateral: 20.0,
            anchor_from_bottom: 15.0,
            history_len: 10,
            future_len: 10,
            colors: ColorTable::default(),
            fade_percent_per_step: 7,
            lane_line_px: 1.0,
            route_px: 5.0,
            route_lookahead: 40.0,
        }
    }
}

impl BevSpec {
    pub fn meters_per_pixel(&self) -> f64 {
        self.fov / self.image_size as f64
    }

    /// Continuous pixel coordinates of the ego origin.
    pub fn anchor_px(&self) -> (f64, f64) {
        let mpp = self.meters_per_pixel();
        (self.anchor_lateral / mpp, self.image_size as f64 - self.anchor_from_bottom / mpp)
    }

    /// Multiplies a color channel by the fade factor of pose age `k`, rounding to nearest.
    pub fn fade(&self, c: u8, age: usize) -> u8 {
        let pct = 100u32.saturating_sub(self.fade_percent_per_step * age as u32);
        ((c as u32 * pct + 50) / 100) as u8
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return Err(Error::Config(format!("image size {} must be a positive multiple of 4", self.image_size)));
        }
        if !(self.fov > 0.0) {
            return Err(Error::Config("field of view must be positive".into()));
        }
        if self.history_len != 10 || self.future_len != 10 {
            return Err(Error::Config(format!(
                "history and future must each span 1 s at dt = {DT} s (10 steps), got {} and {}",
                self.history_len, self.future_len
            )));
        }
        if self.fade_percent_per_step as usize * self.history_len > 100 {
            return Err(Error::Config("fade would drive old poses below zero intensity".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("serializable");
    hex::encode(Sha256::digest(text.as_bytes()))
}
