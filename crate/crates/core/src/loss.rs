//! Training losses and evaluation metrics.
//!
//! Every loss returns `(value, d value / d yhat)` for a single pair. The
//! S-Huber loss is implemented exactly in its two-branch form, including the
//! jump at `|e| = varsigma` when `psi != 1`: the quadratic branch is strict
//! (`|e| < varsigma`) and the boundary point belongs to the linear branch.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SHuber,
    Huber,
    Mae,
    Mse,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "s_huber" | "shuber" => Ok(Self::SHuber),
            "huber" => Ok(Self::Huber),
            "mae" | "l1" => Ok(Self::Mae),
            "mse" | "l2" => Ok(Self::Mse),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Quadratic/linear threshold; also the Huber delta.
    pub varsigma: f64,
    /// Weight of the linear branch (S-Huber only).
    pub psi: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            kind: LossKind::SHuber,
            varsigma: 0.5,
            psi: 0.05,
        }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.varsigma > 0.0) || !(self.psi > 0.0) {
            return Err(Error::Config(format!(
                "loss needs varsigma > 0 and psi > 0 (got {}, {})",
                self.varsigma, self.psi
            )));
        }
        Ok(())
    }

    /// Loss and gradient for one pair.
    pub fn eval(&self, y: f64, yhat: f64) -> (f64, f64) {
        match self.kind {
            LossKind::SHuber => s_huber(y, yhat, self.varsigma, self.psi),
            LossKind::Huber => huber(y, yhat, self.varsigma),
            LossKind::Mae => mae_loss(y, yhat),
            LossKind::Mse => mse_loss(y, yhat),
        }
    }

    /// Mean loss over a batch and the per-prediction gradients of that mean.
    pub fn batch(&self, ys: &[f64], yhats: &[f64]) -> (f64, Vec<f64>) {
        let n = ys.len().max(1) as f64;
        let mut total = 0.0;
        let grads = ys
            .iter()
            .zip(yhats)
            .map(|(&y, &p)| {
                let (l, g) = self.eval(y, p);
                total += l;
                g / n
            })
            .collect();
        (total / n, grads)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `0.5 e^2` for `|e| < varsigma`, else `psi (varsigma |e| - 0.5 varsigma^2)`.
pub fn s_huber(y: f64, yhat: f64, varsigma: f64, psi: f64) -> (f64, f64) {
    let e = y - yhat;
    if e.abs() < varsigma {
        (0.5 * e * e, -e)
    } else {
        (
            psi * (varsigma * e.abs() - 0.5 * varsigma * varsigma),
            -psi * varsigma * sign(e),
        )
    }
}

/// Standard Huber with the halved quadratic branch.
pub fn huber(y: f64, yhat: f64, delta: f64) -> (f64, f64) {
    let e = y - yhat;
    if e.abs() <= delta {
        (0.5 * e * e, -e)
    } else {
        (delta * e.abs() - 0.5 * delta * delta, -delta * sign(e))
    }
}

pub fn mae_loss(y: f64, yhat: f64) -> (f64, f64) {
    let e = y - yhat;
    (e.abs(), -sign(e))
}

pub fn mse_loss(y: f64, yhat: f64) -> (f64, f64) {
    let e = y - yhat;
    (e * e, -2.0 * e)
}

/// Mean absolute error over `(actual, predicted)` pairs.
pub fn mae(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("mae"));
    }
    Ok(pairs.iter().map(|(r, p)| (r - p).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Root mean squared error over `(actual, predicted)` pairs.
pub fn rmse(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("rmse"));
    }
    let mse = pairs.iter().map(|(r, p)| (r - p) * (r - p)).sum::<f64>() / pairs.len() as f64;
    Ok(mse.sqrt())
}

/// One row of an evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub split: String,
    pub seed: u64,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

impl MetricReport {
    pub fn from_pairs(
        method: impl Into<String>,
        split: impl Into<String>,
        seed: u64,
        pairs: &[(f64, f64)],
    ) -> Result<Self> {
        Ok(Self {
            method: method.into(),
            split: split.into(),
            seed,
            mae: mae(pairs)?,
            rmse: rmse(pairs)?,
            n: pairs.len(),
        })
    }
}

pub const METRIC_CSV_HEADER: [&str; 6] = ["method", "split", "seed", "mae", "rmse", "n"];

/// Writes `method,split,seed,mae,rmse,n` rows.
pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRIC_CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.split.clone(),
            r.seed.to_string(),
            r.mae.to_string(),
            r.rmse.to_string(),
            r.n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<metrics>", e))?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricReport>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}
