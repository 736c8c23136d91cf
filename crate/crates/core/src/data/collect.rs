//! Drives the simulator and turns each emitted frame into a labelled record.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::format::{DatasetKind, DatasetManifest, DatasetWriter};
use super::record::{AccThresholds, FrameRecord, STEER_LABEL_LIMIT};
use super::split::split_and_subset;
use super::DataError;
use crate::error::{Error, Result};
use crate::raster::{render_future_mask, render_input, BevSpec, EgoFrame};
use crate::raster::render::others;
use crate::sim::{autopilot_controls, init_world, step, LaneGraph, SimConfig, WorldState};

/// Ego is always the first spawned agent.
pub const EGO_ID: usize = 0;
/// Train share of every stored split.
pub const TRAIN_FRAC: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub sim: SimConfig,
    /// Simulated steps per episode.
    pub episode_steps: usize,
    /// Steps discarded at the start of an episode while traffic gets moving.
    pub warmup_steps: usize,
    /// Emit every `frame_stride`-th step.
    pub frame_stride: usize,
    pub acc: AccThresholds,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            episode_steps: 400,
            warmup_steps: 50,
            frame_stride: 5,
            acc: AccThresholds::default(),
        }
    }
}

impl CollectConfig {
    /// Hash of everything that shapes the simulated states and labels.
    pub fn sim_hash(&self) -> String {
        crate::raster::spec::hash_json(self)
    }

    /// Steps at which frames are emitted. The first and last second of an
    /// episode are never used, so every frame has a full history and future.
    pub fn frame_steps(&self, spec: &BevSpec) -> Vec<usize> {
        let lo = self.warmup_steps.max(spec.history_len);
        let hi = self.episode_steps.saturating_sub(spec.future_len);
        (lo..=hi).filter(|t| t % self.frame_stride == 0).collect()
    }

    pub fn validate(&self, spec: &BevSpec) -> Result<()> {
        let min = spec.history_len + spec.future_len + 1;
        if self.episode_steps < min {
            return Err(Error::Config(format!(
                "episode length {} is shorter than the {min} steps one frame needs",
                self.episode_steps
            )));
        }
        if self.frame_stride == 0 {
            return Err(Error::Config("frame_stride must be at least 1".into()));
        }
        if self.frame_steps(spec).is_empty() {
            return Err(Error::Config("warmup leaves no frames to emit in an episode".into()));
        }
        if self.acc.brake_below >= self.acc.accel_above {
            return Err(Error::Config("acceleration class thresholds must increase".into()));
        }
        Ok(())
    }
}

/// Seed of one episode, derived from the dataset seed.
pub fn episode_seed(seed: u64, episode: u32) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(episode as u64).rotate_left(17) ^ 0xB5E5
}

/// Full state trajectory of one episode.
pub fn simulate_episode(cfg: &CollectConfig, seed: u64, episode: u32, steps: usize) -> Result<(LaneGraph, Vec<WorldState>)> {
    let (graph, mut w) = init_world(&cfg.sim, episode_seed(seed, episode))?;
    let mut states = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let next = step(&w, &graph, &cfg.sim.autopilot);
        states.push(std::mem::replace(&mut w, next));
    }
    states.push(w);
    Ok((graph, states))
}

/// Renders the record for step `t` of an already simulated episode.
pub fn make_record(
    cfg: &CollectConfig,
    spec: &BevSpec,
    graph: &LaneGraph,
    states: &[WorldState],
    episode: u32,
    t: usize,
    with_masks: bool,
) -> Result<FrameRecord> {
    let history: Vec<&WorldState> = states[t - spec.history_len..=t].iter().collect();
    let now = &states[t];
    let image = render_input(&history, EGO_ID, graph, spec)?;
    let (pred, plan) = if with_masks {
        let future: Vec<&WorldState> = states[t + 1..=t + spec.future_len].iter().collect();
        let frame = EgoFrame::of_agent(now.ego(), spec);
        let pred = render_future_mask(&future, &others(now, EGO_ID), &frame, spec)?;
        let plan = render_future_mask(&future, &[EGO_ID], &frame, spec)?;
        (pred.data, plan.data)
    } else {
        (Vec::new(), Vec::new())
    };
    let ego_idx = now.agents.iter().position(|a| a.id == EGO_ID).expect("ego present");
    let c = autopilot_controls(now, graph, &cfg.sim.autopilot, ego_idx);
    let steer = (c.steer as f32).clamp(-STEER_LABEL_LIMIT, STEER_LABEL_LIMIT);
    Ok(FrameRecord {
        episode,
        frame: t as u32,
        steer,
        accel: c.accel as f32,
        acc_class: cfg.acc.class(c.accel),
        image: image.data,
        pred,
        plan,
    })
}

fn episode_records(
    cfg: &CollectConfig,
    spec: &BevSpec,
    seed: u64,
    episode: u32,
    take: usize,
    with_masks: bool,
) -> Result<Vec<FrameRecord>> {
    let steps = cfg.frame_steps(spec);
    let steps = &steps[..take.min(steps.len())];
    let last = steps.last().copied().unwrap_or(0) + spec.future_len;
    let (graph, states) = simulate_episode(cfg, seed, episode, last)?;
    steps.iter().map(|&t| make_record(cfg, spec, &graph, &states, episode, t, with_masks)).collect()
}

/// Collects `n_frames` records into `path` and returns the manifest.
/// Episodes run in parallel; records are written in (episode, frame) order,
/// so the file does not depend on the number of worker threads.
pub fn collect(
    cfg: &CollectConfig,
    spec: &BevSpec,
    n_frames: usize,
    seed: u64,
    kind: DatasetKind,
    path: &Path,
) -> Result<DatasetManifest> {
    if n_frames == 0 {
        return Err(Error::Config("n_frames must be at least 1".into()));
    }
    spec.validate()?;
    cfg.validate(spec)?;
    let with_masks = kind == DatasetKind::Ae;
    let per_episode = cfg.frame_steps(spec).len();
    let n_episodes = n_frames.div_ceil(per_episode);
    let mut manifest = DatasetManifest::new(kind, n_frames, seed, spec, cfg, with_masks);
    manifest.split = Some(split_and_subset(n_frames, TRAIN_FRAC, &[], seed)?.assignment());
    let mut writer = DatasetWriter::create(path, manifest)?;
    let chunk = rayon::current_num_threads().max(1) * 2;
    let mut episode = 0usize;
    while episode < n_episodes {
        let end = (episode + chunk).min(n_episodes);
        let batches: Vec<Result<Vec<FrameRecord>>> = (episode..end)
            .into_par_iter()
            .map(|e| {
                let take = (n_frames - e * per_episode).min(per_episode);
                episode_records(cfg, spec, seed, e as u32, take, with_masks)
            })
            .collect();
        for batch in batches {
            for rec in batch? {
                writer.push(&rec)?;
            }
        }
        episode = end;
    }
    Ok(writer.finish()?)
}

/// Re-simulates the episode behind a stored record and renders it again.
pub fn regenerate_record(manifest: &DatasetManifest, episode: u32, frame: u32) -> Result<FrameRecord> {
    let cfg = &manifest.collect;
    let spec = &manifest.bev_spec;
    let t = frame as usize;
    if !cfg.frame_steps(spec).contains(&t) {
        return Err(DataError::Invalid(format!("step {t} is not an emitted frame")).into());
    }
    let (graph, states) = simulate_episode(cfg, manifest.seed, episode, t + spec.future_len)?;
    make_record(cfg, spec, &graph, &states, episode, t, manifest.with_masks)
}
