use rayon::prelude::*;

use super::RegionalLatentModel;
use crate::dataset::QosRecord;
use crate::error::{Error, Result};
use crate::util::{chunked_sum, log_sum_exp};

const CHUNK: usize = 2048;

/// Exponential density `lambda * exp(-lambda * t)`.
pub fn exp_pdf(t: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Numerical(format!("exponential rate must be positive, got {lambda}")));
    }
    if t < 0.0 {
        return Ok(0.0);
    }
    Ok(lambda * (-lambda * t).exp())
}

/// Rate of the state pair `(j, k)` for value `t`: the reciprocal of
/// `c_u[j] * c_s[k]`, further divided by `w` when `t >= eta`.
pub fn rate(model: &RegionalLatentModel, j: usize, k: usize, t: f64) -> f64 {
    1.0 / mean_of(model, j, k, t)
}

fn mean_of(model: &RegionalLatentModel, j: usize, k: usize, t: f64) -> f64 {
    let base = model.c_u[j] * model.c_s[k];
    if t < model.config.eta {
        base
    } else {
        base * model.w
    }
}

/// Prior weight of state pair `(j, k)` for the record's four regions.
pub fn mixture_weight(model: &RegionalLatentModel, r: &QosRecord, j: usize, k: usize) -> Result<f64> {
    model.check_codes(r)?;
    Ok(model.delta_u.get(j, r.user_as)
        * model.delta_s.get(k, r.service_as)
        * model.theta_u.get(j, r.user_city)
        * model.theta_s.get(k, r.service_city))
}

/// `log(tau_jk * Phi_jk)` for all `m * m` pairs, row-major in `(j, k)`.
fn log_terms(model: &RegionalLatentModel, r: &QosRecord, out: &mut [f64]) {
    let m = model.m();
    for j in 0..m {
        let pu = model.theta_u.get(j, r.user_city) * model.delta_u.get(j, r.user_as);
        for k in 0..m {
            let ps = model.theta_s.get(k, r.service_city) * model.delta_s.get(k, r.service_as);
            let mu = mean_of(model, j, k, r.value);
            out[j * m + k] = (pu * ps).ln() - mu.ln() - r.value / mu;
        }
    }
}

fn check_all(model: &RegionalLatentModel, records: &[QosRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Empty("latent model records"));
    }
    for r in records {
        model.check_codes(r)?;
        if !(r.value >= 0.0) || !r.value.is_finite() {
            return Err(Error::Numerical(format!("invalid QoS value {}", r.value)));
        }
    }
    Ok(())
}

/// Total log-likelihood `sum_i log sum_jk tau * Phi`, accumulated in fixed
/// chunks so the result is bitwise reproducible.
pub fn log_likelihood(model: &RegionalLatentModel, records: &[QosRecord]) -> Result<f64> {
    check_all(model, records)?;
    let m = model.m();
    let ll = chunked_sum(records, CHUNK, |chunk| {
        let mut buf = vec![0.0; m * m];
        chunk
            .iter()
            .map(|r| {
                log_terms(model, r, &mut buf);
                log_sum_exp(&buf)
            })
            .sum()
    });
    if !ll.is_finite() {
        return Err(Error::Numerical(format!("log-likelihood is {ll}")));
    }
    Ok(ll)
}

/// Posterior state-pair probabilities, one `m x m` block per record.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    m: usize,
    data: Vec<f64>,
}

impl Responsibilities {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.m * self.m)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row-major `m x m` block of record `i`.
    pub fn record(&self, i: usize) -> &[f64] {
        let b = self.m * self.m;
        &self.data[i * b..(i + 1) * b]
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.record(i)[j * self.m + k]
    }
}

pub fn e_step(model: &RegionalLatentModel, records: &[QosRecord]) -> Result<Responsibilities> {
    check_all(model, records)?;
    let m = model.m();
    let mut data = vec![0.0; records.len() * m * m];
    let ok: Vec<bool> = data
        .par_chunks_mut(m * m)
        .zip(records.par_iter())
        .map(|(block, r)| {
            log_terms(model, r, block);
            let lse = log_sum_exp(block);
            if !lse.is_finite() {
                return false;
            }
            block.iter_mut().for_each(|x| *x = (*x - lse).exp());
            true
        })
        .collect();
    if let Some(i) = ok.iter().position(|&o| !o) {
        return Err(Error::Numerical(format!(
            "record {i} has zero likelihood under every state pair"
        )));
    }
    Ok(Responsibilities { m, data })
}

/// Closed-form update of the four distribution matrices from expected
/// state counts. Columns with no mass are reset to uniform.
pub fn m_step(model: &mut RegionalLatentModel, records: &[QosRecord], resp: &Responsibilities) -> Result<()> {
    let m = model.m();
    if resp.m() != m || resp.len() != records.len() {
        return Err(Error::Shape(format!(
            "responsibilities for {} records with m={}, expected {} with m={m}",
            resp.len(),
            resp.m(),
            records.len()
        )));
    }
    let mut tu = vec![0.0; m * model.theta_u.cols()];
    let mut du = vec![0.0; m * model.delta_u.cols()];
    let mut ts = vec![0.0; m * model.theta_s.cols()];
    let mut ds = vec![0.0; m * model.delta_s.cols()];
    for (i, r) in records.iter().enumerate() {
        model.check_codes(r)?;
        let g = resp.record(i);
        for j in 0..m {
            let a: f64 = g[j * m..(j + 1) * m].iter().sum();
            tu[r.user_city * m + j] += a;
            du[r.user_as * m + j] += a;
        }
        for k in 0..m {
            let b: f64 = (0..m).map(|j| g[j * m + k]).sum();
            ts[r.service_city * m + k] += b;
            ds[r.service_as * m + k] += b;
        }
    }
    use super::StochasticMatrix as S;
    let rebuild = |counts: Vec<f64>, cols: usize| -> Result<S> {
        let mut mat = S::from_raw(m, cols, counts)?;
        mat.normalize_columns();
        Ok(mat)
    };
    model.theta_u = rebuild(tu, model.theta_u.cols())?;
    model.delta_u = rebuild(du, model.delta_u.cols())?;
    model.theta_s = rebuild(ts, model.theta_s.cols())?;
    model.delta_s = rebuild(ds, model.delta_s.cols())?;
    Ok(())
}
