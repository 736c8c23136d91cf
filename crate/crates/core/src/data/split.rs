use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::format::SplitAssignment;
use crate::error::{Error, Result};

/// Train/test split with nested training subsets.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub seed: u64,
    pub train_frac: f64,
    /// Sorted record indices.
    pub train: Vec<u32>,
    /// Sorted record indices.
    pub test: Vec<u32>,
    /// `(fraction, indices)` in the order requested; smaller fractions are prefixes of larger ones.
    pub subsets: Vec<(f64, Vec<u32>)>,
}

impl Splits {
    pub fn assignment(&self) -> SplitAssignment {
        SplitAssignment { seed: self.seed, train_frac: self.train_frac, train: self.train.clone(), test: self.test.clone() }
    }

    pub fn subset(&self, frac: f64) -> Option<&[u32]> {
        self.subsets.iter().find(|(f, _)| *f == frac).map(|(_, v)| v.as_slice())
    }
}

fn check_frac(f: f64, what: &str) -> Result<()> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::Config(format!("{what} {f} is outside (0, 1]")));
    }
    Ok(())
}

/// Number of records a fraction of `n` keeps: rounded, at least one.
pub fn subset_len(n: usize, frac: f64) -> usize {
    ((n as f64 * frac).round() as usize).clamp(1, n.max(1))
}

/// Random subset of `train` of size `subset_len(train.len(), frac)`. For a
/// fixed seed the subsets of different fractions are nested, since each is a
/// prefix of the same permutation. The result is sorted.
pub fn nested_subset(train: &[u32], frac: f64, seed: u64) -> Result<Vec<u32>> {
    check_frac(frac, "dataset fraction")?;
    if train.is_empty() {
        return Err(Error::Config("cannot subset an empty training split".into()));
    }
    let mut perm = train.to_vec();
    perm.sort_unstable();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5B5E_7000));
    let mut out = perm[..subset_len(train.len(), frac)].to_vec();
    out.sort_unstable();
    Ok(out)
}

/// Random train/test split of `n` records and nested subsets of the train part.
pub fn split_and_subset(n: usize, train_frac: f64, size_fracs: &[f64], seed: u64) -> Result<Splits> {
    check_frac(train_frac, "train fraction")?;
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 records to split, got {n}")));
    }
    let mut idx: Vec<u32> = (0..n as u32).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * train_frac).round() as usize).clamp(1, n - 1);
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    let subsets = size_fracs
        .iter()
        .map(|&f| Ok((f, nested_subset(&train, f, seed)?)))
        .collect::<Result<_>>()?;
    Ok(Splits { seed, train_frac, train, test, subsets })
}
