//! WS-Dream shaped response-time matrices for offline experiments.
//!
//! Users and services sit in countries and autonomous systems; each region
//! leans towards one of a few network states, and each invocation draws a
//! user state and a service state from its regions. Response times combine
//! the two state scales with per-user and per-service factors, lognormal
//! jitter and occasional timeouts, so the marginal distribution is heavily
//! right-skewed with a few percent of values above 5 s.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nncore::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct WsDreamLikeSpec {
    pub n_users: usize,
    pub n_services: usize,
    pub n_user_countries: usize,
    pub n_user_as: usize,
    pub n_service_countries: usize,
    pub n_service_as: usize,
    /// Probability that a cell is unobserved (written as -1).
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for WsDreamLikeSpec {
    fn default() -> Self {
        Self {
            n_users: 100,
            n_services: 1000,
            n_user_countries: 12,
            n_user_as: 30,
            n_service_countries: 40,
            n_service_as: 150,
            missing_rate: 0.03,
            seed: 2024,
        }
    }
}

/// Generated matrix and region tables.
#[derive(Debug, Clone)]
pub struct WsDreamLike {
    /// `n_users x n_services`, `-1` for missing cells.
    pub matrix: Vec<Vec<f64>>,
    /// `(country, as)` labels per user.
    pub users: Vec<(String, String)>,
    pub services: Vec<(String, String)>,
}

const USER_SCALE: [f64; 4] = [0.55, 0.85, 1.3, 2.1];
const SERVICE_SCALE: [f64; 4] = [0.12, 0.3, 0.75, 1.9];
const REGION_PEAK: f64 = 0.75;

fn peaked_column(rng: &mut Rng, m: usize) -> Vec<f64> {
    let top = rng.below(m as u64) as usize;
    let rest = (1.0 - REGION_PEAK) / (m - 1) as f64;
    (0..m).map(|j| if j == top { REGION_PEAK } else { rest }).collect()
}

struct Side {
    labels: Vec<(String, String)>,
    // Per object: unnormalized state weights (country column * AS column).
    weights: Vec<Vec<f64>>,
    factor: Vec<f64>,
}

fn side(
    rng: &mut Rng,
    n: usize,
    n_countries: usize,
    n_as: usize,
    country_prefix: &str,
    as_base: usize,
    factor_sigma: f64,
) -> Side {
    let m = USER_SCALE.len();
    let countries: Vec<Vec<f64>> = (0..n_countries).map(|_| peaked_column(rng, m)).collect();
    let as_cols: Vec<Vec<f64>> = (0..n_as).map(|_| peaked_column(rng, m)).collect();
    // Each AS lives in one country.
    let as_country: Vec<usize> = (0..n_as)
        .map(|a| if a < n_countries { a } else { rng.below(n_countries as u64) as usize })
        .collect();
    let mut labels = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut factor = Vec::with_capacity(n);
    for _ in 0..n {
        let a = rng.below(n_as as u64) as usize;
        let c = as_country[a];
        labels.push((format!("{country_prefix}{c:03}"), format!("AS{}", as_base + 17 * a)));
        weights.push(countries[c].iter().zip(&as_cols[a]).map(|(x, y)| x * y).collect());
        factor.push((factor_sigma * rng.normal()).exp());
    }
    Side {
        labels,
        weights,
        factor,
    }
}

pub fn wsdream_like(spec: &WsDreamLikeSpec) -> Result<WsDreamLike> {
    if spec.n_users == 0
        || spec.n_services == 0
        || spec.n_user_countries == 0
        || spec.n_service_countries == 0
        || spec.n_user_as == 0
        || spec.n_service_as == 0
    {
        return Err(Error::Config("wsdream_like needs nonzero sizes".into()));
    }
    if !(0.0..1.0).contains(&spec.missing_rate) {
        return Err(Error::Config("missing_rate must be in [0, 1)".into()));
    }
    let root = Rng::new(spec.seed);
    let users = side(
        &mut root.fork(1),
        spec.n_users,
        spec.n_user_countries,
        spec.n_user_as,
        "country",
        1000,
        0.25,
    );
    let services = side(
        &mut root.fork(2),
        spec.n_services,
        spec.n_service_countries,
        spec.n_service_as,
        "country",
        3000,
        0.45,
    );
    // Some services are flaky: their timeout probability is much higher.
    let mut flaky_rng = root.fork(3);
    let timeout_prob: Vec<f64> = (0..spec.n_services)
        .map(|_| if flaky_rng.uniform() < 0.08 { 0.25 } else { 0.012 })
        .collect();

    let mut rng = root.fork(4);
    let mut matrix = Vec::with_capacity(spec.n_users);
    for u in 0..spec.n_users {
        let mut row = Vec::with_capacity(spec.n_services);
        for s in 0..spec.n_services {
            if rng.uniform() < spec.missing_rate {
                row.push(-1.0);
                continue;
            }
            let j = rng.categorical(&users.weights[u]);
            let k = rng.categorical(&services.weights[s]);
            let base = USER_SCALE[j] * SERVICE_SCALE[k] * users.factor[u] * services.factor[s];
            let mut t = base * (0.35 * rng.normal()).exp();
            if rng.uniform() < timeout_prob[s] * (0.5 + 0.25 * j as f64) {
                t += 4.0 + rng.exponential(4.0);
            }
            // Three decimals like the published matrices; keep strictly positive.
            let t = (t.min(19.999) * 1000.0).round().max(1.0) / 1000.0;
            row.push(t);
        }
        matrix.push(row);
    }
    Ok(WsDreamLike {
        matrix,
        users: users.labels,
        services: services.labels,
    })
}

impl WsDreamLike {
    pub fn matrix_text(&self) -> String {
        let mut out = String::new();
        for row in &self.matrix {
            let cells: Vec<String> = row
                .iter()
                .map(|&v| if v < 0.0 { "-1".to_string() } else { format!("{v:.3}") })
                .collect();
            out.push_str(&cells.join("\t"));
            out.push('\n');
        }
        out
    }

    fn meta_text(rows: &[(String, String)]) -> String {
        let mut out = String::from("id\tcity\tas\n");
        for (i, (c, a)) in rows.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{c}\t{a}");
        }
        out
    }

    pub fn user_meta_text(&self) -> String {
        Self::meta_text(&self.users)
    }

    pub fn service_meta_text(&self) -> String {
        Self::meta_text(&self.services)
    }

    /// Writes `rtMatrix.txt`, `userlist.txt` and `wslist.txt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<[PathBuf; 3]> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = [dir.join("rtMatrix.txt"), dir.join("userlist.txt"), dir.join("wslist.txt")];
        let texts = [self.matrix_text(), self.user_meta_text(), self.service_meta_text()];
        for (p, t) in paths.iter().zip(texts) {
            std::fs::write(p, t).map_err(|e| Error::io(p, e))?;
        }
        Ok(paths)
    }
}
