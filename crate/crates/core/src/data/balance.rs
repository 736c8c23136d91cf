use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::format::{Dataset, DatasetManifest, DatasetWriter};
use super::record::STEER_LABEL_LIMIT;
use super::split::split_and_subset;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 21;
pub const DEFAULT_CAP_FACTOR: f64 = 2.0;

/// Bin of a steering label among `n_bins` uniform bins on [−0.25, 0.25].
pub fn steer_bin(steer: f32, n_bins: usize) -> usize {
    let lim = STEER_LABEL_LIMIT as f64;
    let u = (steer as f64 + lim) / (2.0 * lim);
    ((u * n_bins as f64).floor().max(0.0) as usize).min(n_bins - 1)
}

pub fn histogram(steers: &[f32], n_bins: usize) -> Vec<usize> {
    let mut h = vec![0; n_bins];
    for &s in steers {
        h[steer_bin(s, n_bins)] += 1;
    }
    h
}

/// Median of the nonzero counts; the mean of the two middle values for an even number of bins.
pub fn median_nonempty(hist: &[usize]) -> f64 {
    let mut v: Vec<usize> = hist.iter().copied().filter(|&c| c > 0).collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_unstable();
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m] as f64
    } else {
        (v[m - 1] + v[m]) as f64 / 2.0
    }
}

/// Ratio of the largest bin to the median nonempty bin.
pub fn max_median_ratio(hist: &[usize]) -> f64 {
    let med = median_nonempty(hist);
    if med == 0.0 {
        return 0.0;
    }
    *hist.iter().max().unwrap() as f64 / med
}

/// Indices kept after capping every bin at `cap_factor` × the median nonempty
/// bin count, in a seeded shuffled order.
pub fn balance_indices(steers: &[f32], n_bins: usize, cap_factor: f64, seed: u64) -> Result<Vec<usize>> {
    if steers.is_empty() {
        return Err(Error::Config("cannot balance an empty dataset".into()));
    }
    if n_bins == 0 || !(cap_factor >= 1.0) {
        return Err(Error::Config(format!("invalid balancing parameters: {n_bins} bins, cap factor {cap_factor}")));
    }
    let cap = (cap_factor * median_nonempty(&histogram(steers, n_bins))).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
    for (i, &s) in steers.iter().enumerate() {
        bins[steer_bin(s, n_bins)].push(i);
    }
    let mut kept = Vec::new();
    for mut b in bins {
        if b.len() > cap {
            b.shuffle(&mut rng);
            b.truncate(cap);
        }
        kept.extend(b);
    }
    kept.sort_unstable();
    kept.shuffle(&mut rng);
    Ok(kept)
}

/// Writes the balanced subset of `src` to `out` with a fresh 80/20 split.
pub fn balance_policy_dataset(
    src: &mut Dataset,
    out: &Path,
    n_bins: usize,
    cap_factor: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    let mut steers = Vec::with_capacity(src.len());
    src.for_each(|_, r| {
        steers.push(r.steer);
        Ok(())
    })?;
    let keep = balance_indices(&steers, n_bins, cap_factor, seed)?;
    let m = src.manifest();
    let mut manifest =
        DatasetManifest::new(m.kind, keep.len(), m.seed, &m.bev_spec, &m.collect, m.with_masks);
    manifest.split = Some(split_and_subset(keep.len(), super::collect::TRAIN_FRAC, &[], seed)?.assignment());
    manifest.notes = m.notes.clone();
    manifest.notes.push(format!(
        "balanced from {} ({} of {} records, {n_bins} bins, cap factor {cap_factor}, seed {seed})",
        src.path().display(),
        keep.len(),
        src.len()
    ));
    let mut w = DatasetWriter::create(out, manifest)?;
    for &i in &keep {
        w.push(&src.read(i)?)?;
    }
    Ok(w.finish()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_cover_the_label_range() {
        assert_eq!(steer_bin(-0.25, 21), 0);
        assert_eq!(steer_bin(0.25, 21), 20);
        assert_eq!(steer_bin(0.0, 21), 10);
        assert_eq!(median_nonempty(&[0, 3, 1, 0, 7]), 3.0);
        assert_eq!(median_nonempty(&[2, 4, 0]), 3.0);
    }
}
