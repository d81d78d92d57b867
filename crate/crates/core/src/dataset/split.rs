use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
    pub valid: usize,
}

/// Train/test/validation index sets over a record list.
///
/// `density` is the share of *all* records that lands in train. The three
/// fractions partition a sampled pool of `density / train_frac` of the
/// records, so `2%:78%:20%` at density 0.02 uses every record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySplit {
    pub seed: u64,
    pub density: f64,
    pub train_frac: f64,
    pub test_frac: f64,
    pub valid_frac: f64,
    pub n_records: usize,
    pub counts: SplitCounts,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub valid: Vec<usize>,
}

pub fn make_splits(
    n_records: usize,
    density: f64,
    (train_frac, test_frac, valid_frac): (f64, f64, f64),
    seed: u64,
) -> Result<DensitySplit> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Config(format!("density must be in (0, 1], got {density}")));
    }
    let fracs = [train_frac, test_frac, valid_frac];
    if fracs.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("fractions {fracs:?} must be in [0, 1] and sum to 1")));
    }
    if train_frac <= 0.0 || density > train_frac + 1e-12 {
        return Err(Error::Config(format!(
            "density {density} needs a train fraction of at least that much (got {train_frac})"
        )));
    }
    let n = n_records as f64;
    let pool = ((n * density / train_frac).round() as usize).min(n_records);
    let train_n = ((n * density).round() as usize).min(pool);
    let valid_n = ((pool as f64 * valid_frac).round() as usize).min(pool - train_n);
    let test_n = pool - train_n - valid_n;

    let mut idx: Vec<usize> = (0..n_records).collect();
    Rng::new(seed).shuffle(&mut idx);
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    let train = sorted(&idx[..train_n]);
    let valid = sorted(&idx[train_n..train_n + valid_n]);
    let test = sorted(&idx[train_n + valid_n..pool]);
    Ok(DensitySplit {
        seed,
        density,
        train_frac,
        test_frac,
        valid_frac,
        n_records,
        counts: SplitCounts {
            train: train_n,
            test: test_n,
            valid: valid_n,
        },
        train,
        test,
        valid,
    })
}

impl DensitySplit {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: DensitySplit = serde_json::from_str(text)?;
        let max = s.train.iter().chain(&s.test).chain(&s.valid).copied().max();
        if max.is_some_and(|m| m >= s.n_records) {
            return Err(Error::Dimension("split manifest indexes past n_records".into()));
        }
        Ok(s)
    }

    pub fn select<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
        idx.iter().map(|&i| items[i].clone()).collect()
    }
}
