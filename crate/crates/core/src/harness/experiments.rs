//! Head ablation and dataset-size sweep.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bevrep_autodiff::{Checkpoint, Real};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{heads_label, ExperimentConfig, Phase, TrainConfig};
use super::metrics::MetricsLog;
use super::train::{accuracy, policy_inputs, train_ae, train_policy, LatentSet};
use crate::data::format::file_hash;
use crate::data::{
    balance_policy_dataset, collect, nested_subset, AeArrays, Dataset, DatasetKind, DatasetManifest, PolicyArrays,
};
use crate::error::{Error, Result};
use crate::models::{EncoderDecoder, HeadKind, LatentStats, PolicyNet};

/// One logged training run inside a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Head-set label, e.g. `recon+pred+plan`.
    pub config: String,
    pub fraction: f64,
    pub seed: u64,
    pub phase: Phase,
    pub log: MetricsLog,
}

/// All logs of one experiment plus what is needed to summarize them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub experiment: String,
    pub ae_dataset_sha256: String,
    pub policy_dataset_sha256: String,
    /// Config whose final mean accuracy defines the convergence target.
    pub reference: (String, f64),
    pub runs: Vec<RunRecord>,
    /// Runs that failed and were left out.
    pub failures: Vec<String>,
}

impl Bundle {
    pub fn policy_runs(&self, config: &str, fraction: f64) -> Vec<&RunRecord> {
        self.runs
            .iter()
            .filter(|r| r.phase == Phase::Policy && r.config == config && r.fraction == fraction)
            .collect()
    }

    /// Distinct (config, fraction) cells in first-seen order.
    pub fn cells(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for r in &self.runs {
            if !out.iter().any(|(c, f)| *c == r.config && *f == r.fraction) {
                out.push((r.config.clone(), r.fraction));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Writes the encoder-decoder and the raw and balanced policy datasets into `dir`.
pub fn prepare_datasets(cfg: &ExperimentConfig, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let ae = dir.join("ae.bvds");
    let raw = dir.join("policy_raw.bvds");
    let policy = dir.join("policy.bvds");
    collect(&cfg.collect, &cfg.bev, cfg.ae_frames, cfg.ae_seed, DatasetKind::Ae, &ae)?;
    collect(&cfg.collect, &cfg.bev, cfg.policy_raw_frames, cfg.policy_seed, DatasetKind::Policy, &raw)?;
    let mut raw_ds = Dataset::open(&raw)?;
    balance_policy_dataset(
        &mut raw_ds,
        &policy,
        crate::data::balance::DEFAULT_BINS,
        crate::data::balance::DEFAULT_CAP_FACTOR,
        cfg.policy_seed,
    )?;
    Ok((ae, policy))
}

/// Both datasets loaded into memory, with their stored splits.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub ae_path: PathBuf,
    pub policy_path: PathBuf,
    pub ae_manifest: DatasetManifest,
    pub ae_train: AeArrays,
    pub ae_test: AeArrays,
    pub policy: PolicyArrays,
    pub policy_train: Vec<usize>,
    pub policy_test: Vec<usize>,
    pub ae_sha256: String,
    pub policy_sha256: String,
}

fn stored_split(m: &DatasetManifest, path: &Path) -> Result<(Vec<u32>, Vec<u32>)> {
    let s = m
        .split
        .as_ref()
        .ok_or_else(|| crate::data::DataError::Manifest(format!("{} has no stored split", path.display())))?;
    Ok((s.train.clone(), s.test.clone()))
}

impl ExperimentData {
    pub fn load(ae_path: &Path, policy_path: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        let sim = cfg.collect.sim_hash();
        let mut ae = Dataset::open_compatible(ae_path, &cfg.bev, Some(&sim))?;
        let mut pol = Dataset::open_compatible(policy_path, &cfg.bev, Some(&sim))?;
        if ae.manifest().kind != DatasetKind::Ae || pol.manifest().kind != DatasetKind::Policy {
            return Err(crate::data::DataError::Manifest("dataset kinds do not match their roles".into()).into());
        }
        let (tr, te) = stored_split(ae.manifest(), ae_path)?;
        let ae_train = AeArrays::load(&mut ae, &tr)?;
        let ae_test = AeArrays::load(&mut ae, &te)?;
        let (ptr, pte) = stored_split(pol.manifest(), policy_path)?;
        let all: Vec<u32> = (0..pol.len() as u32).collect();
        let policy = PolicyArrays::load(&mut pol, &all)?;
        Ok(Self {
            ae_path: ae_path.to_path_buf(),
            policy_path: policy_path.to_path_buf(),
            ae_manifest: ae.manifest().clone(),
            ae_train,
            ae_test,
            policy,
            policy_train: ptr.iter().map(|&i| i as usize).collect(),
            policy_test: pte.iter().map(|&i| i as usize).collect(),
            ae_sha256: file_hash(ae_path)?,
            policy_sha256: file_hash(policy_path)?,
        })
    }

    /// Rows of the encoder-decoder training split kept at `fraction`.
    pub fn ae_subset(&self, fraction: f64, seed: u64) -> Result<AeArrays> {
        if fraction == 1.0 {
            return Ok(self.ae_train.clone());
        }
        let keep = nested_subset(&self.ae_train.source, fraction, seed)?;
        let pos: BTreeMap<u32, usize> = self.ae_train.source.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let rows: Vec<usize> = keep.iter().map(|s| pos[s]).collect();
        Ok(self.ae_train.select(&rows))
    }

    /// Fails if either dataset file changed since it was loaded.
    pub fn verify_unchanged(&self) -> Result<()> {
        for (p, h) in [(&self.ae_path, &self.ae_sha256), (&self.policy_path, &self.policy_sha256)] {
            if &file_hash(p)? != h {
                return Err(crate::data::DataError::Manifest(format!("{} changed during the experiment", p.display())).into());
            }
        }
        Ok(())
    }
}

/// A trained encoder-decoder kept for reuse across experiments.
#[derive(Debug, Clone)]
pub struct CachedEncoder<T> {
    pub model: EncoderDecoder<T>,
    pub log: MetricsLog,
}

/// Encoders keyed by head set and data fraction, so the ablation and the
/// sweep train the shared cells once.
#[derive(Debug, Default)]
pub struct EncoderCache<T> {
    pub entries: BTreeMap<String, CachedEncoder<T>>,
}

impl<T> EncoderCache<T> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }
}

fn cell_key(heads: &[HeadKind], fraction: f64) -> String {
    format!("{}@{fraction}", heads_label(heads))
}

fn file_stem(heads: &[HeadKind], fraction: f64) -> String {
    format!("{}_f{}", heads_label(heads).replace('+', "-"), fraction)
}

/// Runtime context shared by the experiment drivers.
pub struct Runner<'a, T> {
    pub cfg: &'a ExperimentConfig,
    pub data: &'a ExperimentData,
    pub cache: EncoderCache<T>,
    /// Where checkpoints are written, if anywhere.
    pub out_dir: Option<PathBuf>,
    /// Progress lines go here (stderr by default).
    pub progress: Box<dyn FnMut(&str) + 'a>,
}

impl<'a, T: Real> Runner<'a, T> {
    pub fn new(cfg: &'a ExperimentConfig, data: &'a ExperimentData, out_dir: Option<PathBuf>) -> Self {
        Self { cfg, data, cache: EncoderCache::new(), out_dir, progress: Box::new(|m| eprintln!("{m}")) }
    }

    fn ae_config(&self, heads: &[HeadKind], fraction: f64) -> TrainConfig {
        TrainConfig { heads: heads.to_vec(), fraction, ..self.cfg.ae.clone() }
    }

    /// Trains (or fetches from the cache) the encoder-decoder of one cell.
    pub fn encoder(&mut self, heads: &[HeadKind], fraction: f64) -> Result<&mut CachedEncoder<T>> {
        let key = cell_key(heads, fraction);
        if !self.cache.entries.contains_key(&key) {
            let cfg = self.ae_config(heads, fraction);
            let train = self.data.ae_subset(fraction, self.cfg.ae.seed)?;
            (self.progress)(&format!("encoder {key}: {} training frames", train.len()));
            let run = train_ae::<T>(&cfg, &train, &self.data.ae_test, |_| true)?;
            if let Some(dir) = &self.out_dir {
                let dir = dir.join("encoders");
                std::fs::create_dir_all(&dir)?;
                let stem = file_stem(heads, fraction);
                Checkpoint::from_store(&run.model.store, None).save(dir.join(format!("{stem}.bvck")))?;
                run.best.save(dir.join(format!("{stem}_best.bvck")))?;
                std::fs::write(dir.join(format!("{stem}.csv")), run.log.to_csv())?;
            }
            self.cache.entries.insert(key.clone(), CachedEncoder { model: run.model, log: run.log });
        }
        Ok(self.cache.entries.get_mut(&key).expect("just inserted"))
    }

    /// Policy trainings of one cell, one per seed, run `workers` at a time.
    /// Failed seeds are reported and left out.
    fn policy_cell(&mut self, heads: &[HeadKind], fraction: f64, bundle: &mut Bundle) -> Result<()> {
        let label = heads_label(heads);
        let chunk = self.cfg.ae.micro_batch.max(64);
        let data = self.data;
        let ae_seed = self.cfg.ae.seed;
        let (stats, train, test) = {
            let enc = match self.encoder(heads, fraction) {
                Ok(e) => e,
                Err(e @ Error::Divergence { .. }) => {
                    let msg = format!("encoder {label}@{fraction} failed: {e}");
                    (self.progress)(&format!("warning: {msg}"));
                    bundle.failures.push(msg);
                    return Ok(());
                }
                Err(e) => return Err(e),
            };
            bundle.runs.push(RunRecord {
                config: label.clone(),
                fraction,
                seed: ae_seed,
                phase: Phase::EncoderDecoder,
                log: enc.log.clone(),
            });
            policy_inputs(&mut enc.model, &data.policy, &data.policy_train, &data.policy_test, chunk)?
        };
        let seeds: Vec<u64> = (0..self.cfg.n_seeds as u64).map(|s| self.cfg.policy.seed + s).collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let base = &self.cfg.policy;
        let results: Vec<(u64, Result<(PolicyNet<T>, MetricsLog)>)> = pool.install(|| {
            seeds
                .par_iter()
                .map(|&seed| {
                    let cfg = TrainConfig { seed, ..base.clone() };
                    (seed, train_policy::<T>(&cfg, &train, &test).map(|r| (r.net, r.log)))
                })
                .collect()
        });
        if let Some(dir) = &self.out_dir {
            let dir = dir.join("policies");
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join(format!("{}_stats.json", file_stem(heads, fraction))), serde_json::to_string(&stats)?)?;
        }
        for (seed, r) in results {
            match r {
                Ok((net, log)) => {
                    if let Some(dir) = &self.out_dir {
                        let p = dir.join("policies").join(format!("{}_s{seed}.bvck", file_stem(heads, fraction)));
                        Checkpoint::from_store(&net.store, None).save(p)?;
                    }
                    bundle.runs.push(RunRecord { config: label.clone(), fraction, seed, phase: Phase::Policy, log });
                }
                Err(e @ Error::Divergence { .. }) => {
                    let msg = format!("policy {label}@{fraction} seed {seed} failed: {e}");
                    (self.progress)(&format!("warning: {msg}"));
                    bundle.failures.push(msg);
                }
                Err(e) => return Err(e),
            }
        }
        (self.progress)(&format!("policy {label}@{fraction}: {} seeds done", self.cfg.n_seeds));
        Ok(())
    }

    fn bundle(&self, name: &str, reference: (String, f64)) -> Bundle {
        Bundle {
            experiment: name.into(),
            ae_dataset_sha256: self.data.ae_sha256.clone(),
            policy_dataset_sha256: self.data.policy_sha256.clone(),
            reference,
            runs: Vec::new(),
            failures: Vec::new(),
        }
    }

    /// One encoder-decoder per head set on the full training split, then
    /// `n_seeds` policies on each frozen encoder.
    pub fn run_head_ablation(&mut self) -> Result<Bundle> {
        let sets = self.cfg.head_sets.clone();
        let mut b = self.bundle("ablation", (heads_label(&sets[0]), 1.0));
        for heads in &sets {
            self.policy_cell(heads, 1.0, &mut b)?;
        }
        self.data.verify_unchanged()?;
        Ok(b)
    }

    /// Every sweep model at every fraction, each followed by `n_seeds` policies
    /// on the same policy dataset.
    pub fn run_datasize_sweep(&mut self) -> Result<Bundle> {
        let models = self.cfg.sweep_models.clone();
        let fractions = self.cfg.fractions.clone();
        let mut b = self.bundle("sweep", (heads_label(&models[0]), 1.0));
        for heads in &models {
            for &f in &fractions {
                self.policy_cell(heads, f, &mut b)?;
            }
        }
        self.data.verify_unchanged()?;
        Ok(b)
    }
}

/// Recomputes a policy's test accuracy from its saved checkpoints and the
/// stored test split.
pub fn recompute_accuracy<T: Real>(
    encoder_ckpt: &Path,
    heads: &[HeadKind],
    policy_ckpt: &Path,
    stats: &LatentStats,
    data: &ExperimentData,
    chunk: usize,
) -> Result<f64> {
    let mut enc = EncoderDecoder::<T>::new(heads, 0)?;
    Checkpoint::load(encoder_ckpt)?.load_into(&mut enc.store)?;
    let mut net = PolicyNet::<T>::new(0);
    Checkpoint::load(policy_ckpt)?.load_into(&mut net.store)?;
    let z = super::train::encode_rows(&mut enc, &data.policy, &data.policy_test, chunk)?;
    let set = LatentSet {
        z: stats.normalize(&z),
        steer: bevrep_autodiff::Tensor::zeros(&[data.policy_test.len(), 1]),
        acc: data.policy_test.iter().map(|&r| data.policy.acc_class[r] as usize).collect(),
    };
    Ok(accuracy(&mut net, &set))
}
