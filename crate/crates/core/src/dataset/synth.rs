use super::{Codebooks, DatasetDims, DatasetMeta, QosRecord, RegionCodebook, RegionKind};
use crate::error::{Error, Result};
use crate::latent::StochasticMatrix;
use crate::nncore::Rng;

/// Ground-truth parameters for sampling records from the regional
/// latent-state model.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_users: usize,
    pub n_services: usize,
    /// `m x n_user_cities`.
    pub theta_u: StochasticMatrix,
    /// `m x n_service_cities`.
    pub theta_s: StochasticMatrix,
    /// `m x n_user_as`.
    pub delta_u: StochasticMatrix,
    /// `m x n_service_as`.
    pub delta_s: StochasticMatrix,
    pub c_u: Vec<f64>,
    pub c_s: Vec<f64>,
    pub w: f64,
    pub eta: f64,
    pub value_cap: f64,
    pub n_records: usize,
    pub seed: u64,
    /// `(city, as)` per user; drawn uniformly from the seed when `None`.
    pub user_regions: Option<Vec<(usize, usize)>>,
    pub service_regions: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub records: Vec<QosRecord>,
    /// Hidden `(user state, service state)` per record.
    pub states: Vec<(usize, usize)>,
    pub meta: DatasetMeta,
}

impl SynthSpec {
    pub fn m(&self) -> usize {
        self.c_u.len()
    }

    /// A spec whose region columns put `peak` mass on one state (chosen
    /// at random per region) and spread the rest evenly.
    #[allow(clippy::too_many_arguments)]
    pub fn peaked(
        m: usize,
        n_users: usize,
        n_services: usize,
        (n_user_cities, n_user_as, n_service_cities, n_service_as): (usize, usize, usize, usize),
        peak: f64,
        c_u: Vec<f64>,
        c_s: Vec<f64>,
        n_records: usize,
        seed: u64,
    ) -> Self {
        let mut rng = Rng::new(seed).fork(0x5eed);
        let mut peaked = |cols: usize| {
            let columns = (0..cols)
                .map(|_| {
                    let top = rng.below(m as u64) as usize;
                    let rest = if m > 1 { (1.0 - peak) / (m - 1) as f64 } else { 0.0 };
                    (0..m).map(|j| if j == top { if m > 1 { peak } else { 1.0 } } else { rest }).collect()
                })
                .collect();
            StochasticMatrix::from_columns(m, columns).expect("columns are normalized")
        };
        Self {
            n_users,
            n_services,
            theta_u: peaked(n_user_cities),
            delta_u: peaked(n_user_as),
            theta_s: peaked(n_service_cities),
            delta_s: peaked(n_service_as),
            c_u,
            c_s,
            w: 50.0,
            eta: f64::INFINITY,
            value_cap: f64::INFINITY,
            n_records,
            seed,
            user_regions: None,
            service_regions: None,
        }
    }

    /// Like [`SynthSpec::peaked`], but every AS lies inside one city
    /// (AS `a` in city `a % n_cities`) and shares that city's dominant
    /// state, and objects are placed by drawing an AS and taking its city.
    #[allow(clippy::too_many_arguments)]
    pub fn nested(
        m: usize,
        n_users: usize,
        n_services: usize,
        (n_user_cities, n_user_as, n_service_cities, n_service_as): (usize, usize, usize, usize),
        peak: f64,
        c_u: Vec<f64>,
        c_s: Vec<f64>,
        n_records: usize,
        seed: u64,
    ) -> Self {
        let mut rng = Rng::new(seed).fork(0x4e57);
        let column = |top: usize| -> Vec<f64> {
            if m == 1 {
                return vec![1.0];
            }
            let rest = (1.0 - peak) / (m - 1) as f64;
            (0..m).map(|j| if j == top { peak } else { rest }).collect()
        };
        let mut side = |n_objects: usize, n_cities: usize, n_as: usize| {
            let tops: Vec<usize> = (0..n_cities).map(|_| rng.below(m as u64) as usize).collect();
            let cities = StochasticMatrix::from_columns(m, tops.iter().map(|&t| column(t)).collect())
                .expect("columns are normalized");
            let ases = StochasticMatrix::from_columns(m, (0..n_as).map(|a| column(tops[a % n_cities])).collect())
                .expect("columns are normalized");
            let regions: Vec<(usize, usize)> = (0..n_objects)
                .map(|_| {
                    let a = rng.below(n_as as u64) as usize;
                    (a % n_cities, a)
                })
                .collect();
            (cities, ases, regions)
        };
        let (theta_u, delta_u, user_regions) = side(n_users, n_user_cities, n_user_as);
        let (theta_s, delta_s, service_regions) = side(n_services, n_service_cities, n_service_as);
        Self {
            n_users,
            n_services,
            theta_u,
            theta_s,
            delta_u,
            delta_s,
            c_u,
            c_s,
            w: 50.0,
            eta: f64::INFINITY,
            value_cap: f64::INFINITY,
            n_records,
            seed,
            user_regions: Some(user_regions),
            service_regions: Some(service_regions),
        }
    }

    /// Mean of `T` for states `(j, k)` when no cap applies. Past `eta` the
    /// exponential excess (mean `mu`) is replaced by one with mean `mu * w`,
    /// so the mean grows by `P(T >= eta) * mu * (w - 1)`.
    pub fn expected_value(&self, j: usize, k: usize) -> f64 {
        let mu = self.c_u[j] * self.c_s[k];
        if self.eta.is_infinite() {
            mu
        } else {
            mu + (-self.eta / mu).exp() * mu * (self.w - 1.0)
        }
    }

    fn validate(&self) -> Result<()> {
        let m = self.m();
        if m == 0 || self.c_s.len() != m {
            return Err(Error::Config("c_u and c_s need the same nonzero length".into()));
        }
        for (name, mat) in [
            ("theta_u", &self.theta_u),
            ("theta_s", &self.theta_s),
            ("delta_u", &self.delta_u),
            ("delta_s", &self.delta_s),
        ] {
            if mat.states() != m {
                return Err(Error::Config(format!("{name} has {} states, expected {m}", mat.states())));
            }
            mat.validate(1e-9)
                .map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        if self.c_u.iter().chain(&self.c_s).any(|&c| !(c > 0.0)) || !(self.w > 0.0) {
            return Err(Error::Config("c_u, c_s and w must be positive".into()));
        }
        if !(self.eta > 0.0) || !(self.value_cap > 0.0) {
            return Err(Error::Config("eta and value_cap must be positive".into()));
        }
        if self.n_users == 0 || self.n_services == 0 {
            return Err(Error::Config("need at least one user and one service".into()));
        }
        Ok(())
    }
}

fn labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:05}")).collect()
}

fn assign(rng: &mut Rng, n: usize, n_city: usize, n_as: usize) -> Vec<(usize, usize)> {
    (0..n)
        .map(|_| (rng.below(n_city as u64) as usize, rng.below(n_as as u64) as usize))
        .collect()
}

/// Draws `T` given the state mean `mu`: exponential with mean `mu` below
/// `eta`; past `eta` the excess is exponential with mean `mu * w`.
fn draw_value(rng: &mut Rng, mu: f64, w: f64, eta: f64) -> f64 {
    let t = rng.exponential(mu);
    if t < eta {
        t
    } else {
        eta + rng.exponential(mu * w)
    }
}

/// Samples records from the generative model.
///
/// Per record a user and a service are drawn uniformly. The user state is
/// drawn from the elementwise product of the user's city column of
/// `theta_u` and AS column of `delta_u` (renormalized); likewise for the
/// service. Values above `value_cap` are redrawn.
pub fn synthesize(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let mut region_rng = root.fork(1);
    let user_regions = match &spec.user_regions {
        Some(r) => r.clone(),
        None => assign(&mut region_rng, spec.n_users, spec.theta_u.cols(), spec.delta_u.cols()),
    };
    let service_regions = match &spec.service_regions {
        Some(r) => r.clone(),
        None => assign(&mut region_rng, spec.n_services, spec.theta_s.cols(), spec.delta_s.cols()),
    };
    if user_regions.len() != spec.n_users || service_regions.len() != spec.n_services {
        return Err(Error::Config("region assignment length mismatch".into()));
    }

    let m = spec.m();
    let mut rng = root.fork(2);
    let mut records = Vec::with_capacity(spec.n_records);
    let mut states = Vec::with_capacity(spec.n_records);
    let mut wu = vec![0.0; m];
    let mut ws = vec![0.0; m];
    for _ in 0..spec.n_records {
        let user = rng.below(spec.n_users as u64) as usize;
        let service = rng.below(spec.n_services as u64) as usize;
        let (uc, ua) = user_regions[user];
        let (sc, sa) = service_regions[service];
        for j in 0..m {
            wu[j] = spec.theta_u.get(j, uc) * spec.delta_u.get(j, ua);
            ws[j] = spec.theta_s.get(j, sc) * spec.delta_s.get(j, sa);
        }
        let j = rng.categorical(&wu);
        let k = rng.categorical(&ws);
        let mu = spec.c_u[j] * spec.c_s[k];
        let value = loop {
            let t = draw_value(&mut rng, mu, spec.w, spec.eta);
            if t > 0.0 && t <= spec.value_cap {
                break t;
            }
        };
        records.push(QosRecord {
            user_id: user,
            service_id: service,
            value,
            user_city: uc,
            user_as: ua,
            service_city: sc,
            service_as: sa,
        });
        states.push((j, k));
    }

    let dims = DatasetDims {
        n_users: spec.n_users,
        n_services: spec.n_services,
        n_user_cities: spec.theta_u.cols(),
        n_user_as: spec.delta_u.cols(),
        n_service_cities: spec.theta_s.cols(),
        n_service_as: spec.delta_s.cols(),
    };
    let cb = |kind, prefix: &str, n| {
        let l = labels(prefix, n);
        RegionCodebook::from_labels(kind, l.iter().map(String::as_str))
    };
    let codebooks = Codebooks {
        user_city: cb(RegionKind::UserCity, "ucity", dims.n_user_cities),
        user_as: cb(RegionKind::UserAs, "uas", dims.n_user_as),
        service_city: cb(RegionKind::ServiceCity, "scity", dims.n_service_cities),
        service_as: cb(RegionKind::ServiceAs, "sas", dims.n_service_as),
    };
    Ok(SynthOutput {
        records,
        states,
        meta: DatasetMeta {
            dims,
            codebooks,
            user_regions,
            service_regions,
        },
    })
}
