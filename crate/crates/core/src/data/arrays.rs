//! In-memory training arrays. Images are kept as 4×4 block sums (u16), which
//! is exact and a quarter the size of the equivalent f64 values.

use bevrep_autodiff::{Real, Tensor};

use super::format::Dataset;
use super::DataError;
use crate::models::AeBatch;
use crate::raster::block_sums;

pub const FACTOR: usize = 4;
/// Largest block sum: 16 pixels at 255.
pub const BLOCK_MAX: f64 = (FACTOR * FACTOR * 255) as f64;

fn to_tensor<T: Real>(src: &[u16], plane: usize, rows: &[usize], channels: usize, side: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(rows.len() * plane);
    for &r in rows {
        data.extend(src[r * plane..(r + 1) * plane].iter().map(|&v| T::cast(v as f64 / BLOCK_MAX)));
    }
    Tensor::from_vec(&[rows.len(), channels, side, side], data).expect("consistent shape")
}

/// Downsampled images and masks of an encoder-decoder dataset.
#[derive(Debug, Clone)]
pub struct AeArrays {
    pub side: usize,
    pub images: Vec<u16>,
    pub pred: Vec<u16>,
    pub plan: Vec<u16>,
    /// Dataset index of each row.
    pub source: Vec<u32>,
}

impl AeArrays {
    pub fn load(ds: &mut Dataset, indices: &[u32]) -> Result<Self, DataError> {
        let m = ds.manifest();
        if !m.with_masks {
            return Err(DataError::Invalid(format!("{} stores no masks", ds.path().display())));
        }
        let size = m.image_size;
        let side = size / FACTOR;
        let mut out = Self {
            side,
            images: Vec::with_capacity(indices.len() * 3 * side * side),
            pred: Vec::with_capacity(indices.len() * side * side),
            plan: Vec::with_capacity(indices.len() * side * side),
            source: indices.to_vec(),
        };
        for &i in indices {
            let r = ds.read(i as usize)?;
            out.images.extend(block_sums(&r.image, size, 3, FACTOR));
            out.pred.extend(block_sums(&r.pred, size, 1, FACTOR));
            out.plan.extend(block_sums(&r.plan, size, 1, FACTOR));
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// Copy of the given rows.
    pub fn select(&self, rows: &[usize]) -> Self {
        let p = self.side * self.side;
        let take = |src: &[u16], w: usize| rows.iter().flat_map(|&r| src[r * w..(r + 1) * w].iter().copied()).collect();
        Self {
            side: self.side,
            images: take(&self.images, 3 * p),
            pred: take(&self.pred, p),
            plan: take(&self.plan, p),
            source: rows.iter().map(|&r| self.source[r]).collect(),
        }
    }

    pub fn batch<T: Real>(&self, rows: &[usize]) -> AeBatch<T> {
        let p = self.side * self.side;
        AeBatch {
            image: to_tensor(&self.images, 3 * p, rows, 3, self.side),
            pred: to_tensor(&self.pred, p, rows, 1, self.side),
            plan: to_tensor(&self.plan, p, rows, 1, self.side),
        }
    }

    pub fn images<T: Real>(&self, rows: &[usize]) -> Tensor<T> {
        to_tensor(&self.images, 3 * self.side * self.side, rows, 3, self.side)
    }
}

/// Downsampled images and labels of a policy dataset.
#[derive(Debug, Clone)]
pub struct PolicyArrays {
    pub side: usize,
    pub images: Vec<u16>,
    pub steer: Vec<f32>,
    pub acc_class: Vec<u8>,
    pub source: Vec<u32>,
}

impl PolicyArrays {
    pub fn load(ds: &mut Dataset, indices: &[u32]) -> Result<Self, DataError> {
        let size = ds.manifest().image_size;
        let side = size / FACTOR;
        let mut out = Self {
            side,
            images: Vec::with_capacity(indices.len() * 3 * side * side),
            steer: Vec::with_capacity(indices.len()),
            acc_class: Vec::with_capacity(indices.len()),
            source: indices.to_vec(),
        };
        for &i in indices {
            let r = ds.read(i as usize)?;
            out.images.extend(block_sums(&r.image, size, 3, FACTOR));
            out.steer.push(r.steer);
            out.acc_class.push(r.acc_class);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn images<T: Real>(&self, rows: &[usize]) -> Tensor<T> {
        to_tensor(&self.images, 3 * self.side * self.side, rows, 3, self.side)
    }
}
