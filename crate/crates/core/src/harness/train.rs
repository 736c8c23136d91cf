//! Training loops for the encoder-decoder and the policy.

use std::time::Instant;

use bevrep_autodiff::{AdamState, Checkpoint, Mode, ParamId, Real, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Phase, TrainConfig};
use super::metrics::{MetricsLog, MetricsRow};
use crate::data::{AeArrays, PolicyArrays};
use crate::error::{Error, Result};
use crate::models::{EncoderDecoder, HeadKind, LatentStats, PolicyNet, StepLosses};

/// A trained encoder-decoder with its log and best-test-loss checkpoint.
#[derive(Debug, Clone)]
pub struct AeRun<T> {
    pub model: EncoderDecoder<T>,
    pub log: MetricsLog,
    pub best: Checkpoint,
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct PolicyRun<T> {
    pub net: PolicyNet<T>,
    pub log: MetricsLog,
}

/// Normalized latents and labels of one split.
#[derive(Debug, Clone)]
pub struct LatentSet<T> {
    pub z: Tensor<T>,
    pub steer: Tensor<T>,
    pub acc: Vec<usize>,
}

impl<T: Real> LatentSet<T> {
    pub fn len(&self) -> usize {
        self.acc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.acc.is_empty()
    }
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ (0xE90C_u64 << 20) ^ epoch as u64));
    idx
}

/// Rows `rows` of a tensor whose first axis indexes samples.
pub fn gather_rows<T: Real>(t: &Tensor<T>, rows: &[usize]) -> Tensor<T> {
    let width: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        data.extend_from_slice(&t.data()[r * width..(r + 1) * width]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = rows.len();
    Tensor::from_vec(&shape, data).expect("row gather keeps the shape consistent")
}

fn add_grads<T: Real>(acc: &mut Option<Vec<(ParamId, Tensor<T>)>>, g: Vec<(ParamId, Tensor<T>)>) {
    match acc {
        None => *acc = Some(g),
        Some(a) => {
            for ((ia, ta), (ig, tg)) in a.iter_mut().zip(&g) {
                debug_assert_eq!(ia, ig);
                ta.add_assign(tg);
            }
        }
    }
}

fn wall(cfg: &TrainConfig, start: Instant) -> f64 {
    if cfg.deterministic {
        0.0
    } else {
        start.elapsed().as_secs_f64()
    }
}

/// Mean eval-mode losses of an encoder-decoder over `data`.
pub fn evaluate_ae<T: Real>(model: &mut EncoderDecoder<T>, data: &AeArrays, chunk: usize) -> Result<StepLosses> {
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut per_head: Vec<(HeadKind, f64)> = model.head_kinds().into_iter().map(|k| (k, 0.0)).collect();
    let mut total = 0.0;
    for c in rows.chunks(chunk.max(1)) {
        let l = model.eval_losses(&data.batch::<T>(c))?;
        let w = c.len() as f64 / rows.len() as f64;
        for (acc, (_, v)) in per_head.iter_mut().zip(&l.per_head) {
            acc.1 += w * v;
        }
        total += w * l.total;
    }
    Ok(StepLosses { per_head, total })
}

/// Trains an encoder-decoder on every row of `train`, evaluating on `test`
/// after each epoch. `keep_going` sees the log after every epoch and may stop
/// training early by returning false.
pub fn train_ae<T: Real>(
    cfg: &TrainConfig,
    train: &AeArrays,
    test: &AeArrays,
    mut keep_going: impl FnMut(&MetricsLog) -> bool,
) -> Result<AeRun<T>> {
    cfg.validate()?;
    if cfg.phase != Phase::EncoderDecoder {
        return Err(Error::Config("train_ae needs an encoder_decoder config".into()));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config("encoder-decoder training needs nonempty train and test sets".into()));
    }
    let mut model = EncoderDecoder::<T>::new(&cfg.heads, cfg.seed)?;
    let mut adam = AdamState::new(&model.store);
    let batch = cfg.effective_batch(train.len());
    let start = Instant::now();
    let mut log = MetricsLog::default();
    let mut best = (f64::INFINITY, Checkpoint::from_store(&model.store, None), 0);
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut sums = vec![0.0; model.heads.len()];
        let mut total = 0.0;
        for b in order.chunks(batch) {
            let mut grads = None;
            for m in b.chunks(cfg.micro_batch) {
                let w = m.len() as f64 / b.len() as f64;
                let (l, g) = model.loss_and_grads(&train.batch::<T>(m), step, w)?;
                if !l.total.is_finite() {
                    return Err(Error::Divergence { epoch, what: format!("encoder-decoder train loss {}", l.total) });
                }
                let share = m.len() as f64 / train.len() as f64;
                total += share * l.total;
                for (s, (_, v)) in sums.iter_mut().zip(&l.per_head) {
                    *s += share * v;
                }
                add_grads(&mut grads, g);
            }
            adam.step(&mut model.store, &grads.expect("nonempty batch"), cfg.lr);
            step += 1;
        }
        let ev = evaluate_ae(&mut model, test, cfg.micro_batch)?;
        if !ev.total.is_finite() {
            return Err(Error::Divergence { epoch, what: format!("encoder-decoder test loss {}", ev.total) });
        }
        let train_of = |k: HeadKind| model.heads.iter().position(|h| h.kind == k).map(|i| sums[i]);
        log.rows.push(MetricsRow {
            epoch,
            train_loss: total,
            train_recon: train_of(HeadKind::Recon),
            train_pred: train_of(HeadKind::Pred),
            train_plan: train_of(HeadKind::Plan),
            test_recon: ev.head(HeadKind::Recon),
            test_pred: ev.head(HeadKind::Pred),
            test_plan: ev.head(HeadKind::Plan),
            wall_s: wall(cfg, start),
            ..Default::default()
        });
        if ev.total < best.0 {
            best = (ev.total, Checkpoint::from_store(&model.store, None), epoch);
        }
        if !keep_going(&log) {
            break;
        }
    }
    Ok(AeRun { model, log, best: best.1, best_epoch: best.2 })
}

/// Eval-mode latents of the given rows, computed in chunks.
pub fn encode_rows<T: Real>(encoder: &mut EncoderDecoder<T>, data: &PolicyArrays, rows: &[usize], chunk: usize) -> Result<Tensor<T>> {
    let mut z = Vec::with_capacity(rows.len() * crate::models::LATENT_DIM);
    for c in rows.chunks(chunk.max(1)) {
        z.extend_from_slice(encoder.encode(&data.images::<T>(c), Mode::Eval)?.data());
    }
    Ok(Tensor::from_vec(&[rows.len(), crate::models::LATENT_DIM], z)?)
}

/// Encodes the policy data once with a frozen encoder, fits the latent
/// statistics on the training rows and normalizes both splits.
pub fn policy_inputs<T: Real>(
    encoder: &mut EncoderDecoder<T>,
    data: &PolicyArrays,
    train_rows: &[usize],
    test_rows: &[usize],
    chunk: usize,
) -> Result<(LatentStats, LatentSet<T>, LatentSet<T>)> {
    let z_train = encode_rows(encoder, data, train_rows, chunk)?;
    let z_test = encode_rows(encoder, data, test_rows, chunk)?;
    if !z_train.all_finite() || !z_test.all_finite() {
        return Err(Error::Divergence { epoch: 0, what: "non-finite latent vectors".into() });
    }
    let stats = LatentStats::fit(&z_train);
    let set = |z: &Tensor<T>, rows: &[usize]| LatentSet {
        z: stats.normalize(z),
        steer: Tensor::from_vec(&[rows.len(), 1], rows.iter().map(|&r| T::cast(data.steer[r] as f64)).collect())
            .expect("one label per row"),
        acc: rows.iter().map(|&r| data.acc_class[r] as usize).collect(),
    };
    let train = set(&z_train, train_rows);
    let test = set(&z_test, test_rows);
    Ok((stats, train, test))
}

/// Share of `set` whose predicted acceleration class matches the label.
pub fn accuracy<T: Real>(net: &mut PolicyNet<T>, set: &LatentSet<T>) -> f64 {
    let hits = net.predict(&set.z).iter().zip(&set.acc).filter(|(o, &c)| o.acc_class() == c).count();
    hits as f64 / set.len() as f64
}

pub fn train_policy<T: Real>(cfg: &TrainConfig, train: &LatentSet<T>, test: &LatentSet<T>) -> Result<PolicyRun<T>> {
    cfg.validate()?;
    if cfg.phase != Phase::Policy {
        return Err(Error::Config("train_policy needs a policy config".into()));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config("policy training needs nonempty train and test sets".into()));
    }
    let mut net = PolicyNet::<T>::new(cfg.seed);
    let mut adam = AdamState::new(&net.store);
    let batch = cfg.effective_batch(train.len());
    let start = Instant::now();
    let mut log = MetricsLog::default();
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut total = 0.0;
        for b in order.chunks(batch) {
            let mut grads = None;
            for m in b.chunks(cfg.micro_batch) {
                let w = m.len() as f64 / b.len() as f64;
                let acc: Vec<usize> = m.iter().map(|&r| train.acc[r]).collect();
                let (l, g) = net.loss_and_grads(
                    &gather_rows(&train.z, m),
                    &gather_rows(&train.steer, m),
                    &acc,
                    cfg.seed.wrapping_mul(0x1000_0000).wrapping_add(step),
                    w,
                )?;
                if !l.total.is_finite() {
                    return Err(Error::Divergence { epoch, what: format!("policy train loss {}", l.total) });
                }
                total += l.total * m.len() as f64 / train.len() as f64;
                add_grads(&mut grads, g);
            }
            adam.step(&mut net.store, &grads.expect("nonempty batch"), cfg.lr);
            step += 1;
        }
        let ev = net.eval_loss(&test.z, &test.steer, &test.acc)?;
        if !ev.total.is_finite() {
            return Err(Error::Divergence { epoch, what: format!("policy test loss {}", ev.total) });
        }
        log.rows.push(MetricsRow {
            epoch,
            train_loss: total,
            test_steer: Some(ev.steer),
            test_acc: Some(accuracy(&mut net, test)),
            wall_s: wall(cfg, start),
            ..Default::default()
        });
    }
    Ok(PolicyRun { net, log })
}
