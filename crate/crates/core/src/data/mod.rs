//! Dataset collection, labelling, balancing, splitting and storage.

pub mod arrays;
pub mod balance;
pub mod collect;
pub mod format;
pub mod record;
pub mod split;

use std::path::Path;

pub use arrays::{AeArrays, PolicyArrays};
pub use balance::{balance_indices, balance_policy_dataset, histogram, max_median_ratio, median_nonempty};
pub use collect::{collect, regenerate_record, CollectConfig, EGO_ID};
pub use format::{Dataset, DatasetKind, DatasetManifest, DatasetWriter, SplitAssignment};
pub use record::{AccThresholds, FrameRecord};
pub use split::{nested_subset, split_and_subset, Splits};

use crate::raster::png_io::{write_png, PngKind};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("not a dataset file (bad magic)")]
    BadMagic,
    #[error("dataset format version {found}, expected {expected}")]
    Version { found: u8, expected: u8 },
    #[error("incompatible dataset: {what} hash {found} does not match {expected}")]
    Incompatible { what: &'static str, found: String, expected: String },
    #[error("dataset truncated: {actual} bytes, manifest needs {expected}")]
    Truncated { expected: u64, actual: u64 },
    #[error("dataset truncated while reading the {0}")]
    TruncatedAt(&'static str),
    #[error("checksum mismatch in record {index}")]
    Checksum { index: usize },
    #[error("bad manifest: {0}")]
    Manifest(String),
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Writes the input image of record `index` and, when stored, its masks as
/// `<stem>_input.png`, `<stem>_pred.png` and `<stem>_plan.png` in `dir`.
pub fn export_png(ds: &mut Dataset, index: usize, dir: &Path, stem: &str) -> crate::error::Result<Vec<std::path::PathBuf>> {
    let r = ds.read(index)?;
    let size = ds.manifest().image_size;
    let mut written = vec![dir.join(format!("{stem}_input.png"))];
    write_png(&written[0], &r.image, size, size, PngKind::Rgb)?;
    if ds.manifest().with_masks {
        for (name, data) in [("pred", &r.pred), ("plan", &r.plan)] {
            let p = dir.join(format!("{stem}_{name}.png"));
            write_png(&p, data, size, size, PngKind::Gray)?;
            written.push(p);
        }
    }
    Ok(written)
}
