use super::{GradStore, ParamStore, Rng};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    pub tolerance: f64,
    /// Coordinates sampled per parameter when it is larger than this (at least 64).
    pub max_coords: usize,
    /// Denominator floor for the relative error, so that near-zero
    /// gradients are compared in absolute terms.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tolerance: 1e-5,
            max_coords: 64,
            floor: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat coordinate of the worst mismatch.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
    pub passed: bool,
}

/// Compares `analytic` against central differences of `loss` around the
/// current parameter values. Parameters are restored before returning.
pub fn grad_check<F>(
    store: &mut ParamStore,
    analytic: &GradStore,
    mut loss: F,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut rng = Rng::new(cfg.seed);
    let max_coords = cfg.max_coords.max(64);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
        passed: true,
    };
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.value(id).len();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            let mut all: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut all);
            all.truncate(max_coords);
            all.sort_unstable();
            all
        };
        for c in coords {
            let orig = store.value(id).data()[c];
            store.get_mut(id).value.data_mut()[c] = orig + cfg.h;
            let plus = loss(store)?;
            store.get_mut(id).value.data_mut()[c] = orig - cfg.h;
            let minus = loss(store)?;
            store.get_mut(id).value.data_mut()[c] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numerical("grad_check: non-finite loss".into()));
            }
            let numeric = (plus - minus) / (2.0 * cfg.h);
            let a = analytic.get(id).data()[c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.get(id).name.clone(), c));
            }
        }
    }
    report.passed = report.max_rel_error < cfg.tolerance;
    Ok(report)
}
