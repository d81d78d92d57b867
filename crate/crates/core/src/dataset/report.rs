use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label distribution summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub n: usize,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub edges: Vec<f64>,
    /// `histogram[i]` counts values in `(edges[i-1], edges[i]]`; the last
    /// bucket holds everything above the final edge.
    pub histogram: Vec<usize>,
    /// Fraction of values strictly above each edge.
    pub tail_fraction: Vec<f64>,
}

pub fn distribution_report(values: &[f64], bucket_edges: &[f64]) -> Result<DistributionReport> {
    if values.is_empty() {
        return Err(Error::Empty("distribution_report"));
    }
    let mut edges = bucket_edges.to_vec();
    edges.sort_by(f64::total_cmp);
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let mut histogram = vec![0usize; edges.len() + 1];
    let mut above = vec![0usize; edges.len()];
    for &v in values {
        let bucket = edges.partition_point(|&e| e < v);
        histogram[bucket] += 1;
        for (count, &e) in above.iter_mut().zip(&edges) {
            if v > e {
                *count += 1;
            }
        }
    }
    Ok(DistributionReport {
        n,
        mean,
        variance,
        edges,
        histogram,
        tail_fraction: above.into_iter().map(|c| c as f64 / n as f64).collect(),
    })
}

impl std::fmt::Display for DistributionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "records: {}", self.n)?;
        writeln!(f, "mean: {:.4}  variance: {:.4}", self.mean, self.variance)?;
        for (e, t) in self.edges.iter().zip(&self.tail_fraction) {
            writeln!(f, "  <= {e:>6}: {:6.2}%   > {e}: {:6.2}%", 100.0 * (1.0 - t), 100.0 * t)?;
        }
        Ok(())
    }
}
