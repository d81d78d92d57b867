//! Gradient step on the complexity factors `c_u`, `c_s` and penalty `w`.
//!
//! With responsibilities `G` fixed, the part of the expected complete-data
//! log-likelihood that depends on these parameters is
//! `Q = sum_i sum_jk G_ijk (-log mu_ijk - t_i / mu_ijk)` with
//! `mu_ijk = c_u[j] c_s[k] w^[t_i >= eta]`. `Q` only depends on the data
//! through per-branch sums of `G` and `G * t`, so a step precomputes those
//! once and then evaluates `Q` and its gradient in `O(m^2)`.
//!
//! The three parameter blocks differ in curvature by orders of magnitude
//! (`w` is large and only touched by tail records), so each block keeps its
//! own step size: it is halved until `Q` does not decrease (at most 20
//! times) and doubled after every accepted step. Because `Q` is cheap once
//! the statistics exist, a step runs block sweeps until `Q` stalls rather
//! than stopping after one update; otherwise `w` creeps from its initial
//! value far slower than EM converges.

use super::{Responsibilities, RegionalLatentModel};
use crate::dataset::QosRecord;
use crate::error::{Error, Result};

const MAX_HALVINGS: usize = 20;
const MAX_SWEEPS: usize = 200;
/// Sweeps stop once one improves `Q` by less than this, relative.
const SWEEP_TOL: f64 = 1e-12;

/// Per-branch sufficient statistics, indexed `[branch][j * m + k]`.
struct Stats {
    m: usize,
    g: [Vec<f64>; 2],
    gt: [Vec<f64>; 2],
}

impl Stats {
    fn new(model: &RegionalLatentModel, records: &[QosRecord], resp: &Responsibilities) -> Result<Self> {
        let m = model.m();
        if resp.m() != m || resp.len() != records.len() {
            return Err(Error::Shape("responsibilities do not match records".into()));
        }
        let mut s = Self {
            m,
            g: [vec![0.0; m * m], vec![0.0; m * m]],
            gt: [vec![0.0; m * m], vec![0.0; m * m]],
        };
        for (i, r) in records.iter().enumerate() {
            let b = usize::from(r.value >= model.config.eta);
            for (x, &g) in resp.record(i).iter().enumerate() {
                s.g[b][x] += g;
                s.gt[b][x] += g * r.value;
            }
        }
        Ok(s)
    }

    fn q(&self, c_u: &[f64], c_s: &[f64], w: f64) -> f64 {
        let m = self.m;
        let mut q = 0.0;
        for b in 0..2 {
            let wb = if b == 1 { w } else { 1.0 };
            for j in 0..m {
                for k in 0..m {
                    let x = j * m + k;
                    let mu = c_u[j] * c_s[k] * wb;
                    q -= self.g[b][x] * mu.ln() + self.gt[b][x] / mu;
                }
            }
        }
        q
    }

    /// `dQ/dc_u`, `dQ/dc_s`, `dQ/dw`.
    fn grad(&self, c_u: &[f64], c_s: &[f64], w: f64) -> (Vec<f64>, Vec<f64>, f64) {
        let m = self.m;
        let (mut gu, mut gs, mut gw) = (vec![0.0; m], vec![0.0; m], 0.0);
        for b in 0..2 {
            let wb = if b == 1 { w } else { 1.0 };
            for j in 0..m {
                for k in 0..m {
                    let x = j * m + k;
                    let mu = c_u[j] * c_s[k] * wb;
                    // d/dmu of (-g log mu - gt / mu), times mu.
                    let d = self.gt[b][x] / mu - self.g[b][x];
                    gu[j] += d / c_u[j];
                    gs[k] += d / c_s[k];
                    if b == 1 {
                        gw += d / w;
                    }
                }
            }
        }
        (gu, gs, gw)
    }
}

/// `Q` at the model's current parameters.
pub fn expected_log_density(
    model: &RegionalLatentModel,
    records: &[QosRecord],
    resp: &Responsibilities,
) -> Result<f64> {
    Ok(Stats::new(model, records, resp)?.q(&model.c_u, &model.c_s, model.w))
}

/// Analytic gradient of [`expected_log_density`].
pub fn q_gradient(
    model: &RegionalLatentModel,
    records: &[QosRecord],
    resp: &Responsibilities,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    Ok(Stats::new(model, records, resp)?.grad(&model.c_u, &model.c_s, model.w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdOutcome {
    pub q_before: f64,
    pub q_after: f64,
    /// Whether any `c_u`, `c_s`, `w` update was accepted.
    pub accepted: [bool; 3],
    pub sweeps: usize,
}

/// One ascent step per block; never decreases `Q`.
pub fn gd_step(
    model: &mut RegionalLatentModel,
    records: &[QosRecord],
    resp: &Responsibilities,
) -> Result<GdOutcome> {
    let stats = Stats::new(model, records, resp)?;
    let floor = model.config.param_floor;
    let q_before = stats.q(&model.c_u, &model.c_s, model.w);
    if !q_before.is_finite() {
        return Err(Error::Numerical(format!("expected log density is {q_before}")));
    }
    let mut q = q_before;
    let mut accepted = [false; 3];
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let start = q;
        for block in 0..3 {
            accepted[block] |= block_step(model, &stats, block, &mut q, floor)?;
        }
        if q - start <= SWEEP_TOL * q.abs() {
            break;
        }
    }
    Ok(GdOutcome {
        q_before,
        q_after: q,
        accepted,
        sweeps,
    })
}

/// One backtracking ascent step on block 0 (`c_u`), 1 (`c_s`) or 2 (`w`).
fn block_step(model: &mut RegionalLatentModel, stats: &Stats, block: usize, q: &mut f64, floor: f64) -> Result<bool> {
    let (gu, gs, gw) = stats.grad(&model.c_u, &model.c_s, model.w);
    let g: Vec<f64> = match block {
        0 => gu,
        1 => gs,
        _ => vec![gw],
    };
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite gradient of the complexity factors".into()));
    }
    if g.iter().all(|&x| x == 0.0) {
        return Ok(false);
    }
    let current: Vec<f64> = match block {
        0 => model.c_u.clone(),
        1 => model.c_s.clone(),
        _ => vec![model.w],
    };
    let mut step = model.gd_steps[block];
    for _ in 0..=MAX_HALVINGS {
        let cand: Vec<f64> = current.iter().zip(&g).map(|(p, d)| (p + step * d).max(floor)).collect();
        let q_new = match block {
            0 => stats.q(&cand, &model.c_s, model.w),
            1 => stats.q(&model.c_u, &cand, model.w),
            _ => stats.q(&model.c_u, &model.c_s, cand[0]),
        };
        if q_new.is_finite() && q_new >= *q {
            match block {
                0 => model.c_u = cand,
                1 => model.c_s = cand,
                _ => model.w = cand[0],
            }
            *q = q_new;
            model.gd_steps[block] = step * 2.0;
            return Ok(true);
        }
        step *= 0.5;
    }
    model.gd_steps[block] = step;
    Ok(false)
}
