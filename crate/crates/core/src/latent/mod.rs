//! Regional latent-state model.
//!
//! Each user city, user AS, service city and service AS carries a
//! distribution over `m` hidden network states. A record's user state `j`
//! has weight `theta_u[j, city] * delta_u[j, as]` and its service state `k`
//! likewise; given `(j, k)` the QoS value is exponential with mean
//! `c_u[j] * c_s[k]`, multiplied by `w` when the value is at or above `eta`.
//!
//! [`fit`] maximizes the data likelihood by alternating a normalized E-step,
//! closed-form updates of the four distribution matrices, and a backtracking
//! gradient step on `c_u`, `c_s` and `w`.

mod em;
mod fit;
mod gd;
mod stochastic;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetDims, QosRecord};
use crate::error::{Error, Result};
use crate::nncore::Rng;
use crate::util::sha256_hex;

pub use em::{e_step, exp_pdf, log_likelihood, m_step, mixture_weight, rate, Responsibilities};
pub use fit::fit;
pub use gd::{expected_log_density, gd_step, q_gradient, GdOutcome};
pub use stochastic::StochasticMatrix;

pub const LATENT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentConfig {
    /// Number of latent states.
    pub m: usize,
    /// Initialization concentration; jitter magnitude is `0.1 / alpha`.
    /// Defaults to `m` when unset.
    pub alpha: Option<f64>,
    pub seed: u64,
    /// Threshold splitting the two exponential branches, in value units.
    pub eta: f64,
    pub w_init: f64,
    /// Initial step of the gradient step on `c_u`, `c_s`, `w`.
    pub learning_rate: f64,
    /// Stop when the relative log-likelihood gain drops below this.
    pub gamma: f64,
    pub max_iters: usize,
    /// Lower clamp for `c_u`, `c_s` and `w`.
    pub param_floor: f64,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self {
            m: 4,
            alpha: None,
            seed: 0,
            eta: 2.5,
            w_init: 50.0,
            learning_rate: 1e-3,
            gamma: 1e-4,
            max_iters: 200,
            param_floor: 1e-6,
        }
    }
}

impl LatentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("latent config: {msg}")));
        if self.m < 1 {
            return bad("m must be >= 1");
        }
        if !(self.eta > 0.0) {
            return bad("eta must be > 0");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite and >= 0");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must be in (0, 1)");
        }
        if !(self.w_init > 0.0) || !(self.param_floor > 0.0) {
            return bad("w_init and param_floor must be > 0");
        }
        if self.alpha.is_some_and(|a| !(a > 0.0)) {
            return bad("alpha must be > 0");
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(self.m as f64)
    }
}

/// Fitted regional latent-state parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionalLatentModel {
    pub theta_u: StochasticMatrix,
    pub theta_s: StochasticMatrix,
    pub delta_u: StochasticMatrix,
    pub delta_s: StochasticMatrix,
    pub c_u: Vec<f64>,
    pub c_s: Vec<f64>,
    pub w: f64,
    pub config: LatentConfig,
    /// Log-likelihood of the initial model followed by one entry per iteration.
    pub fit_log: Vec<f64>,
    /// Current step sizes of the `c_u`, `c_s` and `w` gradient blocks.
    pub gd_steps: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct LatentDocument {
    schema_version: u32,
    kind: String,
    m: usize,
    n_user_cities: usize,
    n_user_as: usize,
    n_service_cities: usize,
    n_service_as: usize,
    #[serde(flatten)]
    model: RegionalLatentModel,
}

impl RegionalLatentModel {
    /// Uniform distributions, unit complexity factors and `w = w_init`.
    pub fn uniform(dims: &DatasetDims, config: LatentConfig) -> Self {
        let m = config.m;
        Self {
            theta_u: StochasticMatrix::uniform(m, dims.n_user_cities),
            theta_s: StochasticMatrix::uniform(m, dims.n_service_cities),
            delta_u: StochasticMatrix::uniform(m, dims.n_user_as),
            delta_s: StochasticMatrix::uniform(m, dims.n_service_as),
            c_u: vec![1.0; m],
            c_s: vec![1.0; m],
            w: config.w_init,
            gd_steps: [config.learning_rate; 3],
            config,
            fit_log: Vec::new(),
        }
    }

    /// Starting point for [`fit`].
    ///
    /// Distribution columns are uniform plus a seeded symmetric perturbation
    /// of magnitude `0.1 / alpha`, renormalized. The complexity factors are
    /// spread geometrically (ratio 2 between neighbouring states) around
    /// `sqrt(mean of values below eta)`, so the states start distinguishable.
    pub fn initialize(records: &[QosRecord], dims: &DatasetDims, config: LatentConfig) -> Self {
        let mut model = Self::uniform(dims, config);
        let m = model.config.m;
        let jitter = 0.1 / model.config.alpha();
        let mut rng = Rng::new(model.config.seed).fork(0x1a7e);
        for mat in [
            &mut model.theta_u,
            &mut model.theta_s,
            &mut model.delta_u,
            &mut model.delta_s,
        ] {
            for q in 0..mat.cols() {
                for p in mat.col_mut(q) {
                    *p *= 1.0 + jitter * rng.uniform_range(-1.0, 1.0);
                }
            }
            mat.normalize_columns();
        }
        let below: Vec<f64> = records
            .iter()
            .map(|r| r.value)
            .filter(|&v| v < model.config.eta)
            .collect();
        let mean = if below.is_empty() {
            records.iter().map(|r| r.value).sum::<f64>() / records.len().max(1) as f64
        } else {
            below.iter().sum::<f64>() / below.len() as f64
        };
        let scale = mean.max(model.config.param_floor).sqrt();
        let mid = (m as f64 - 1.0) / 2.0;
        model.c_u = (0..m).map(|j| scale * 2f64.powf(j as f64 - mid)).collect();
        model.c_s = model.c_u.clone();
        model
    }

    pub fn m(&self) -> usize {
        self.c_u.len()
    }

    pub fn dims_match(&self, dims: &DatasetDims) -> bool {
        self.theta_u.cols() == dims.n_user_cities
            && self.delta_u.cols() == dims.n_user_as
            && self.theta_s.cols() == dims.n_service_cities
            && self.delta_s.cols() == dims.n_service_as
    }

    pub(crate) fn check_codes(&self, r: &QosRecord) -> Result<()> {
        let checks = [
            ("user city", r.user_city, self.theta_u.cols()),
            ("user AS", r.user_as, self.delta_u.cols()),
            ("service city", r.service_city, self.theta_s.cols()),
            ("service AS", r.service_as, self.delta_s.cols()),
        ];
        for (what, index, size) in checks {
            if index >= size {
                return Err(Error::OutOfRange { what, index, size });
            }
        }
        Ok(())
    }

    /// Structural invariants: normalized columns and floored factors.
    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        for mat in [&self.theta_u, &self.theta_s, &self.delta_u, &self.delta_s] {
            if mat.states() != m {
                return Err(Error::Shape("state count mismatch".into()));
            }
            mat.validate(1e-9)?;
        }
        let floor = self.config.param_floor;
        if self.c_s.len() != m
            || self.c_u.iter().chain(&self.c_s).chain([&self.w]).any(|&c| !(c >= floor) || !c.is_finite())
        {
            return Err(Error::Numerical("complexity factors below floor or non-finite".into()));
        }
        Ok(())
    }

    /// `[theta_u col, delta_u col, theta_s col, delta_s col]`, length `4m`.
    pub fn latent_features(
        &self,
        user_city: usize,
        user_as: usize,
        service_city: usize,
        service_as: usize,
    ) -> Result<Vec<f64>> {
        self.check_codes(&QosRecord {
            user_id: 0,
            service_id: 0,
            value: 0.0,
            user_city,
            user_as,
            service_city,
            service_as,
        })?;
        let mut v = Vec::with_capacity(4 * self.m());
        v.extend_from_slice(self.theta_u.col(user_city));
        v.extend_from_slice(self.delta_u.col(user_as));
        v.extend_from_slice(self.theta_s.col(service_city));
        v.extend_from_slice(self.delta_s.col(service_as));
        Ok(v)
    }

    /// Relabels user states by `perm_u` and service states by `perm_s`
    /// (new state `j` is old state `perm[j]`).
    pub fn permute_states(&self, perm_u: &[usize], perm_s: &[usize]) -> Self {
        let mut out = self.clone();
        out.theta_u = self.theta_u.permute_states(perm_u);
        out.delta_u = self.delta_u.permute_states(perm_u);
        out.theta_s = self.theta_s.permute_states(perm_s);
        out.delta_s = self.delta_s.permute_states(perm_s);
        out.c_u = perm_u.iter().map(|&p| self.c_u[p]).collect();
        out.c_s = perm_s.iter().map(|&p| self.c_s[p]).collect();
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = LatentDocument {
            schema_version: LATENT_SCHEMA_VERSION,
            kind: "regional_latent_model".into(),
            m: self.m(),
            n_user_cities: self.theta_u.cols(),
            n_user_as: self.delta_u.cols(),
            n_service_cities: self.theta_s.cols(),
            n_service_as: self.delta_s.cols(),
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: LatentDocument = serde_json::from_str(text)?;
        if doc.schema_version != LATENT_SCHEMA_VERSION {
            return Err(Error::Schema {
                found: doc.schema_version,
                expected: LATENT_SCHEMA_VERSION,
            });
        }
        let model = doc.model;
        if model.m() != doc.m
            || model.theta_u.cols() != doc.n_user_cities
            || model.delta_u.cols() != doc.n_user_as
            || model.theta_s.cols() != doc.n_service_cities
            || model.delta_s.cols() != doc.n_service_as
        {
            return Err(Error::Dimension("latent model document dimensions disagree".into()));
        }
        model.validate()?;
        Ok(model)
    }

    /// SHA-256 of the serialized document.
    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }
}
