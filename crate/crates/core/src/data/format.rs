//! Dataset file: `"BVDS"`, a version byte, a length-prefixed JSON manifest,
//! then fixed-size little-endian records each ending in a CRC32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::collect::CollectConfig;
use super::record::FrameRecord;
use super::DataError;
use crate::raster::BevSpec;

pub const MAGIC: &[u8; 4] = b"BVDS";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    /// Unbalanced frames with prediction/planning masks, for encoder-decoder training.
    Ae,
    /// Balanced frames for policy imitation; masks are not stored.
    Policy,
}

/// Train/test assignment stored with the dataset so every experiment sees the same split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub train_frac: f64,
    pub train: Vec<u32>,
    pub test: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u8,
    pub kind: DatasetKind,
    pub bev_spec_hash: String,
    pub sim_config_hash: String,
    pub record_count: usize,
    pub image_size: usize,
    pub with_masks: bool,
    /// Byte offset of each record from the start of the record section.
    pub offsets: Vec<u64>,
    pub seed: u64,
    pub split: Option<SplitAssignment>,
    pub bev_spec: BevSpec,
    pub collect: CollectConfig,
    /// Free-form provenance, e.g. the source dataset of a balanced subset.
    #[serde(default)]
    pub notes: Vec<String>,
}

pub fn record_len(image_size: usize, with_masks: bool) -> usize {
    let px = image_size * image_size;
    FrameRecord::HEADER_LEN + px * 3 + if with_masks { 2 * px } else { 0 } + 4
}

impl DatasetManifest {
    pub fn new(
        kind: DatasetKind,
        count: usize,
        seed: u64,
        bev_spec: &BevSpec,
        collect: &CollectConfig,
        with_masks: bool,
    ) -> Self {
        let len = record_len(bev_spec.image_size, with_masks) as u64;
        Self {
            format_version: FORMAT_VERSION,
            kind,
            bev_spec_hash: bev_spec.hash(),
            sim_config_hash: collect.sim_hash(),
            record_count: count,
            image_size: bev_spec.image_size,
            with_masks,
            offsets: (0..count as u64).map(|i| i * len).collect(),
            seed,
            split: None,
            bev_spec: bev_spec.clone(),
            collect: collect.clone(),
            notes: Vec::new(),
        }
    }

    pub fn record_len(&self) -> usize {
        record_len(self.image_size, self.with_masks)
    }

    fn check(&self) -> Result<(), DataError> {
        if self.offsets.len() != self.record_count {
            return Err(DataError::Manifest(format!(
                "{} offsets for {} records",
                self.offsets.len(),
                self.record_count
            )));
        }
        if self.offsets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DataError::Manifest("record offsets are not strictly increasing".into()));
        }
        if self.bev_spec.hash() != self.bev_spec_hash {
            return Err(DataError::Manifest("stored BevSpec does not match its hash".into()));
        }
        Ok(())
    }
}

/// Writes a dataset whose record count is fixed up front.
pub struct DatasetWriter {
    out: BufWriter<File>,
    manifest: DatasetManifest,
    written: usize,
    path: PathBuf,
}

impl DatasetWriter {
    pub fn create(path: &Path, manifest: DatasetManifest) -> Result<Self, DataError> {
        manifest.check()?;
        let mut out = BufWriter::new(File::create(path)?);
        let text = serde_json::to_vec(&manifest).map_err(|e| DataError::Manifest(e.to_string()))?;
        out.write_all(MAGIC)?;
        out.write_all(&[FORMAT_VERSION])?;
        out.write_all(&(text.len() as u32).to_le_bytes())?;
        out.write_all(&text)?;
        Ok(Self { out, manifest, written: 0, path: path.to_path_buf() })
    }

    pub fn push(&mut self, rec: &FrameRecord) -> Result<(), DataError> {
        if self.written == self.manifest.record_count {
            return Err(DataError::Manifest(format!(
                "{}: more than the declared {} records",
                self.path.display(),
                self.manifest.record_count
            )));
        }
        let bytes = rec.encode(self.manifest.image_size, self.manifest.with_masks)?;
        self.out.write_all(&bytes)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<DatasetManifest, DataError> {
        if self.written != self.manifest.record_count {
            return Err(DataError::Manifest(format!(
                "{}: wrote {} of {} declared records",
                self.path.display(),
                self.written,
                self.manifest.record_count
            )));
        }
        self.out.flush()?;
        Ok(self.manifest)
    }
}

/// Random-access reader; records are fetched from disk on demand.
pub struct Dataset {
    file: BufReader<File>,
    manifest: DatasetManifest,
    data_start: u64,
    path: PathBuf,
}

impl std::fmt::Debug for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dataset").field("path", &self.path).field("records", &self.len()).finish()
    }
}

impl Dataset {
    pub fn open(path: &Path) -> Result<Self, DataError> {
        let mut file = BufReader::new(File::open(path)?);
        let actual = file.get_ref().metadata()?.len();
        let mut magic = [0u8; 4];
        read_exact(&mut file, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(DataError::BadMagic);
        }
        let mut v = [0u8; 1];
        read_exact(&mut file, &mut v, "version")?;
        if v[0] != FORMAT_VERSION {
            return Err(DataError::Version { found: v[0], expected: FORMAT_VERSION });
        }
        let mut n = [0u8; 4];
        read_exact(&mut file, &mut n, "manifest length")?;
        let n = u32::from_le_bytes(n) as usize;
        let mut text = vec![0u8; n];
        read_exact(&mut file, &mut text, "manifest")?;
        let manifest: DatasetManifest =
            serde_json::from_slice(&text).map_err(|e| DataError::Manifest(e.to_string()))?;
        manifest.check()?;
        let data_start = 9 + n as u64;
        let expected = data_start + manifest.offsets.last().map_or(0, |o| o + manifest.record_len() as u64);
        if actual < expected {
            return Err(DataError::Truncated { expected, actual });
        }
        Ok(Self { file, manifest, data_start, path: path.to_path_buf() })
    }

    /// Opens and verifies the dataset was rendered with `spec` and, when
    /// given, collected with the simulator configuration of hash `sim_hash`.
    pub fn open_compatible(path: &Path, spec: &BevSpec, sim_hash: Option<&str>) -> Result<Self, DataError> {
        let ds = Self::open(path)?;
        let want = spec.hash();
        if ds.manifest.bev_spec_hash != want {
            return Err(DataError::Incompatible {
                what: "BevSpec",
                found: ds.manifest.bev_spec_hash.clone(),
                expected: want,
            });
        }
        if let Some(h) = sim_hash {
            if ds.manifest.sim_config_hash != h {
                return Err(DataError::Incompatible {
                    what: "simulator config",
                    found: ds.manifest.sim_config_hash.clone(),
                    expected: h.to_string(),
                });
            }
        }
        Ok(ds)
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.manifest.record_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn read(&mut self, index: usize) -> Result<FrameRecord, DataError> {
        if index >= self.len() {
            return Err(DataError::Manifest(format!("record {index} out of range ({} records)", self.len())));
        }
        let len = self.manifest.record_len();
        let mut buf = vec![0u8; len];
        self.file.seek(SeekFrom::Start(self.data_start + self.manifest.offsets[index]))?;
        read_exact(&mut self.file, &mut buf, "record")?;
        FrameRecord::decode(&buf, self.manifest.image_size, self.manifest.with_masks, index)
    }

    /// Reads records in index order, calling `f` on each.
    pub fn for_each(&mut self, mut f: impl FnMut(usize, FrameRecord) -> Result<(), DataError>) -> Result<(), DataError> {
        for i in 0..self.len() {
            let r = self.read(i)?;
            f(i, r)?;
        }
        Ok(())
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &'static str) -> Result<(), DataError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => DataError::TruncatedAt(what),
        _ => DataError::Io(e),
    })
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_hash(path: &Path) -> Result<String, DataError> {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    let mut f = BufReader::new(File::open(path)?);
    std::io::copy(&mut f, &mut h)?;
    Ok(hex::encode(h.finalize()))
}
