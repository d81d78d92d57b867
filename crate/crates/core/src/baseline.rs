//! Reference predictors: user-based Pearson collaborative filtering (UPCC)
//! and global / per-user / per-service means.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::QosRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpccConfig {
    pub top_k_neighbors: usize,
    /// Minimum number of co-rated services for a similarity to be defined.
    pub min_overlap: usize,
}

impl Default for UpccConfig {
    fn default() -> Self {
        Self {
            top_k_neighbors: 10,
            min_overlap: 2,
        }
    }
}

/// Per-user observed values keyed by service; duplicates are averaged.
fn user_rows(records: &[QosRecord]) -> (Vec<BTreeMap<usize, f64>>, f64) {
    let n_users = records.iter().map(|r| r.user_id + 1).max().unwrap_or(0);
    let mut acc: Vec<BTreeMap<usize, (f64, usize)>> = vec![BTreeMap::new(); n_users];
    for r in records {
        let e = acc[r.user_id].entry(r.service_id).or_insert((0.0, 0));
        e.0 += r.value;
        e.1 += 1;
    }
    let global = records.iter().map(|r| r.value).sum::<f64>() / records.len() as f64;
    let rows = acc
        .into_iter()
        .map(|m| m.into_iter().map(|(s, (sum, n))| (s, sum / n as f64)).collect())
        .collect();
    (rows, global)
}

/// Pearson correlation over co-rated services, using means over the
/// co-rated set. `None` when the overlap is too small or either side is
/// constant on it.
pub fn pearson(a: &BTreeMap<usize, f64>, b: &BTreeMap<usize, f64>, min_overlap: usize) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = a
        .iter()
        .filter_map(|(s, &x)| b.get(s).map(|&y| (x, y)))
        .collect();
    if pairs.len() < min_overlap.max(1) {
        return None;
    }
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let den = (saa * sbb).sqrt();
    if den > 0.0 {
        Some((sab / den).clamp(-1.0, 1.0))
    } else {
        None
    }
}

#[derive(Debug, Clone)]
pub struct Upcc {
    config: UpccConfig,
    rows: Vec<BTreeMap<usize, f64>>,
    user_means: Vec<Option<f64>>,
    global_mean: f64,
    /// Dense `n_users x n_users`; `None` where undefined.
    similarity: Vec<Vec<Option<f64>>>,
}

impl Upcc {
    pub fn fit(records: &[QosRecord], config: UpccConfig) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("UPCC training records"));
        }
        if config.top_k_neighbors == 0 {
            return Err(Error::Config("top_k_neighbors must be >= 1".into()));
        }
        let (rows, global_mean) = user_rows(records);
        let user_means = rows
            .iter()
            .map(|r| (!r.is_empty()).then(|| r.values().sum::<f64>() / r.len() as f64))
            .collect();
        let n = rows.len();
        let mut similarity = vec![vec![None; n]; n];
        for u in 0..n {
            for v in u + 1..n {
                let s = pearson(&rows[u], &rows[v], config.min_overlap);
                similarity[u][v] = s;
                similarity[v][u] = s;
            }
        }
        Ok(Self {
            config,
            rows,
            user_means,
            global_mean,
            similarity,
        })
    }

    pub fn similarity(&self, u: usize, v: usize) -> Option<f64> {
        self.similarity.get(u)?.get(v).copied().flatten()
    }

    pub fn user_mean(&self, u: usize) -> Option<f64> {
        self.user_means.get(u).copied().flatten()
    }

    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }

    /// Mean-offset weighted sum over the top-k positively correlated users
    /// who observed `service`; falls back to the user mean, then the
    /// global mean.
    pub fn predict(&self, user: usize, service: usize) -> f64 {
        let base = self.user_mean(user).unwrap_or(self.global_mean);
        let Some(sims) = self.similarity.get(user) else {
            return base;
        };
        let mut neigh: Vec<(usize, f64)> = sims
            .iter()
            .enumerate()
            .filter_map(|(v, s)| s.filter(|&s| s > 0.0).map(|s| (v, s)))
            .filter(|&(v, _)| self.rows[v].contains_key(&service))
            .collect();
        if neigh.is_empty() {
            return base;
        }
        // Highest similarity first, lower user id on ties.
        neigh.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        neigh.truncate(self.config.top_k_neighbors);
        let (mut num, mut den) = (0.0, 0.0);
        for (v, s) in neigh {
            let mean_v = self.user_means[v].expect("neighbour has observations");
            num += s * (self.rows[v][&service] - mean_v);
            den += s.abs();
        }
        base + num / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanLevel {
    Global,
    User,
    Service,
}

#[derive(Debug, Clone)]
pub struct MeanPredictor {
    level: MeanLevel,
    global: f64,
    means: Vec<Option<f64>>,
}

impl MeanPredictor {
    pub fn fit(records: &[QosRecord], level: MeanLevel) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("mean predictor training records"));
        }
        let global = records.iter().map(|r| r.value).sum::<f64>() / records.len() as f64;
        let key = |r: &QosRecord| match level {
            MeanLevel::Global => 0,
            MeanLevel::User => r.user_id,
            MeanLevel::Service => r.service_id,
        };
        let n = records.iter().map(|r| key(r) + 1).max().unwrap_or(0);
        let mut acc = vec![(0.0, 0usize); n];
        for r in records {
            acc[key(r)].0 += r.value;
            acc[key(r)].1 += 1;
        }
        let means = acc
            .into_iter()
            .map(|(s, c)| (c > 0).then(|| s / c as f64))
            .collect();
        Ok(Self { level, global, means })
    }

    pub fn predict(&self, user: usize, service: usize) -> f64 {
        let idx = match self.level {
            MeanLevel::Global => return self.global,
            MeanLevel::User => user,
            MeanLevel::Service => service,
        };
        self.means.get(idx).copied().flatten().unwrap_or(self.global)
    }
}
