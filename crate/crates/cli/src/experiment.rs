//! Grid runner: methods x densities x seeds over one dataset.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::{info, warn};
use r2sl_core::baseline::{MeanLevel, MeanPredictor, Upcc, UpccConfig};
use r2sl_core::dataset::{make_splits, parse_files, write_records_csv, DatasetMeta, ParseOptions};
use r2sl_core::latent::fit;
use r2sl_core::loss::{mae, rmse};
use r2sl_core::model::{fit_network, LatentMask};
use r2sl_core::util::sha256_hex;
use r2sl_core::{DensitySplit, LatentConfig, LossSpec, NetworkConfig, QosRecord, RegionalLatentModel};
use serde::{Deserialize, Serialize};

use crate::commands::score;
use crate::error::{CliError, CliResult};
use crate::io::{create, read_text, write_text};
use crate::stats::mean_std;
use crate::Stopwatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QosKind {
    /// Response time in seconds.
    #[default]
    Rt,
    /// Throughput in kbps.
    Tp,
}

impl QosKind {
    pub fn as_str(self) -> &'static str {
        match self {
            QosKind::Rt => "rt",
            QosKind::Tp => "tp",
        }
    }

    /// Response times are capped at 20 s; throughput is uncapped.
    pub fn default_cap(self) -> f64 {
        match self {
            QosKind::Rt => 20.0,
            QosKind::Tp => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    R2sl,
    R2slDenseGate,
    R2slNoPhysical,
    R2slNoVirtual,
    R2slNoLatent,
    Upcc,
    Mean,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::R2sl,
        Method::R2slDenseGate,
        Method::R2slNoPhysical,
        Method::R2slNoVirtual,
        Method::R2slNoLatent,
        Method::Upcc,
        Method::Mean,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::R2sl => "r2sl",
            Method::R2slDenseGate => "r2sl_dense_gate",
            Method::R2slNoPhysical => "r2sl_no_physical",
            Method::R2slNoVirtual => "r2sl_no_virtual",
            Method::R2slNoLatent => "r2sl_no_latent",
            Method::Upcc => "upcc",
            Method::Mean => "mean",
        }
    }

    pub fn uses_latent(self) -> bool {
        !matches!(self, Method::Upcc | Method::Mean)
    }

    /// Latent features removed by an ablation variant.
    pub fn removed(self) -> Option<&'static str> {
        match self {
            Method::R2sl => Some("none"),
            Method::R2slNoPhysical => Some("physical"),
            Method::R2slNoVirtual => Some("virtual"),
            Method::R2slNoLatent => Some("all"),
            _ => None,
        }
    }

    /// Network settings for this variant on top of `base`.
    pub fn network_config(self, base: &NetworkConfig, seed: u64, m: usize) -> NetworkConfig {
        let mut c = NetworkConfig {
            seed,
            latent_m: m,
            ..base.clone()
        };
        match self {
            Method::R2slDenseGate => c.dense_gate = true,
            Method::R2slNoPhysical => c.latent_mask.physical = false,
            Method::R2slNoVirtual => c.latent_mask.virtual_as = false,
            Method::R2slNoLatent => c.latent_mask = LatentMask { physical: false, virtual_as: false },
            _ => {}
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub matrix: PathBuf,
    pub user_meta: PathBuf,
    pub service_meta: PathBuf,
    #[serde(default)]
    pub qos: QosKind,
    /// Defaults to the QoS kind's cap.
    #[serde(default)]
    pub value_cap: Option<f64>,
    #[serde(default = "default_sentinel")]
    pub sentinel: f64,
}

fn default_sentinel() -> f64 {
    -1.0
}

fn default_fractions() -> [f64; 3] {
    [0.05, 0.75, 0.20]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    /// Training densities (share of all records used for training).
    pub densities: Vec<f64>,
    /// Train, test and validation fractions of each sampled pool.
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub latent: LatentConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub loss: LossSpec,
    #[serde(default)]
    pub upcc: UpccConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Reads a TOML config; relative paths are taken from the file's
    /// directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = read_text(path)?;
        let mut c: ExperimentConfig = toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut c.dataset.matrix,
            &mut c.dataset.user_meta,
            &mut c.dataset.service_meta,
            &mut c.output_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> CliResult<()> {
        let usage = |m: &str| Err(CliError::Usage(format!("experiment config: {m}")));
        if self.densities.is_empty() || self.seeds.is_empty() || self.methods.is_empty() {
            return usage("needs at least one density, one seed and one method");
        }
        if self.densities.iter().any(|&d| !(d > 0.0 && d <= self.fractions[0])) {
            return usage("densities must be in (0, train fraction]");
        }
        let unique: BTreeSet<Method> = self.methods.iter().copied().collect();
        if unique.len() != self.methods.len() {
            return usage("methods are listed more than once");
        }
        self.latent.validate()?;
        self.network.validate()?;
        self.loss.validate()?;
        Ok(())
    }

    /// Hash of every field that affects results. Dataset files enter by
    /// content, so moving them (or the output directory) keeps the hash.
    pub fn snapshot_hash(&self) -> CliResult<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        for p in [&mut c.dataset.matrix, &mut c.dataset.user_meta, &mut c.dataset.service_meta] {
            let bytes = std::fs::read(&*p).map_err(|e| CliError::io(&*p, e))?;
            *p = PathBuf::from(sha256_hex(&bytes));
        }
        Ok(sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes()))
    }

    fn cap(&self) -> f64 {
        self.dataset.value_cap.unwrap_or(self.dataset.qos.default_cap())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub qos: String,
    pub method: String,
    pub density: f64,
    pub seed: u64,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub qos: String,
    pub method: String,
    pub density: f64,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub qos: String,
    pub method: String,
    pub density: f64,
    pub runs: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub density: f64,
    pub method: String,
    /// Latent features the variant drops.
    pub removed: String,
    pub runs: usize,
    pub mae_mean: f64,
    pub rmse_mean: f64,
    /// `(mae_mean / full model mae_mean) - 1`; empty without a full run.
    pub mae_change_vs_full: Option<f64>,
}

/// Everything one experiment run wrote. Paths are relative to the output
/// directory; every emitted file appears exactly once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub config_hash: String,
    pub results: PathBuf,
    pub failures: PathBuf,
    pub summary_csv: PathBuf,
    pub ablation_csv: PathBuf,
    pub summary_md: PathBuf,
    pub models: Vec<PathBuf>,
    pub activation_reports: Vec<PathBuf>,
    pub latent_models: Vec<PathBuf>,
    #[serde(skip)]
    pub rows: Vec<ResultRow>,
    #[serde(skip)]
    pub failure_rows: Vec<FailureRow>,
    #[serde(skip)]
    pub summary: Vec<SummaryRow>,
    #[serde(skip)]
    pub latent_cache_hits: usize,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn records_hash(records: &[QosRecord]) -> CliResult<String> {
    let mut buf = Vec::new();
    write_records_csv(&mut buf, records)?;
    Ok(sha256_hex(&buf))
}

/// Cache file name for a latent fit of `records` under `config`.
pub fn latent_cache_name(records: &[QosRecord], config: &LatentConfig) -> CliResult<String> {
    let config_hash = sha256_hex(serde_json::to_string(config).expect("config serializes").as_bytes());
    let key = sha256_hex(format!("{}:{config_hash}", records_hash(records)?).as_bytes());
    Ok(format!("latent-{}.json", &key[..16]))
}

struct Cell<'a> {
    density: f64,
    seed: u64,
    train: Vec<QosRecord>,
    valid: Vec<QosRecord>,
    test: Vec<QosRecord>,
    meta: &'a DatasetMeta,
}

fn tag(method: Method, density: f64, seed: u64) -> String {
    format!("{}-d{density}-s{seed}", method.as_str())
}

pub fn run_experiment(config: &ExperimentConfig) -> CliResult<RunArtifact> {
    config.validate()?;
    let clock = Stopwatch::start();
    let parsed = parse_files(
        &config.dataset.matrix,
        &config.dataset.user_meta,
        &config.dataset.service_meta,
        ParseOptions {
            missing_sentinel: config.dataset.sentinel,
            value_cap: config.cap(),
        },
    )?;
    info!("experiment: {} records parsed in {clock}", parsed.records.len());
    let qos = config.dataset.qos.as_str().to_string();

    let mut art = RunArtifact {
        config_hash: config.snapshot_hash()?,
        results: "results.csv".into(),
        failures: "failures.csv".into(),
        summary_csv: "summary.csv".into(),
        ablation_csv: "ablation.csv".into(),
        summary_md: "summary.md".into(),
        models: Vec::new(),
        activation_reports: Vec::new(),
        latent_models: Vec::new(),
        rows: Vec::new(),
        failure_rows: Vec::new(),
        summary: Vec::new(),
        latent_cache_hits: 0,
    };
    let [tr, te, va] = config.fractions;
    for &density in &config.densities {
        for &seed in &config.seeds {
            let split = make_splits(parsed.records.len(), density, (tr, te, va), seed)?;
            let cell = Cell {
                density,
                seed,
                train: DensitySplit::select(&parsed.records, &split.train),
                valid: DensitySplit::select(&parsed.records, &split.valid),
                test: DensitySplit::select(&parsed.records, &split.test),
                meta: &parsed.meta,
            };
            run_cell(config, &cell, &qos, &mut art)?;
        }
    }
    art.summary = summarize(&art.rows, config);
    write_outputs(config, &art)?;
    info!("experiment finished in {clock}");
    Ok(art)
}

fn latent_for(config: &ExperimentConfig, cell: &Cell, art: &mut RunArtifact) -> CliResult<RegionalLatentModel> {
    let lc = LatentConfig {
        seed: cell.seed,
        ..config.latent.clone()
    };
    let rel = PathBuf::from("cache").join(latent_cache_name(&cell.train, &lc)?);
    let path = config.output_dir.join(&rel);
    if !art.latent_models.contains(&rel) {
        art.latent_models.push(rel);
    }
    if path.exists() {
        match RegionalLatentModel::from_json(&read_text(&path)?) {
            Ok(model) if model.config == lc => {
                art.latent_cache_hits += 1;
                info!("latent cache hit: {}", path.display());
                return Ok(model);
            }
            _ => warn!("ignoring unreadable latent cache entry {}", path.display()),
        }
    }
    let clock = Stopwatch::start();
    let model = fit(&cell.train, &cell.meta.dims, lc)?;
    info!("latent fit d={} s={}: {clock}", cell.density, cell.seed);
    write_text(&path, &model.to_json()?)?;
    Ok(model)
}

fn run_cell(config: &ExperimentConfig, cell: &Cell, qos: &str, art: &mut RunArtifact) -> CliResult<()> {
    let fail = |method: Method, e: &CliError| FailureRow {
        qos: qos.to_string(),
        method: method.as_str().into(),
        density: cell.density,
        seed: cell.seed,
        error: e.to_string(),
    };
    let needs_latent = config.methods.iter().any(|m| m.uses_latent());
    let latent = if needs_latent {
        match latent_for(config, cell, art) {
            Ok(l) => Some(l),
            Err(e) => {
                warn!("latent fit failed for d={} s={}: {e}", cell.density, cell.seed);
                for &m in config.methods.iter().filter(|m| m.uses_latent()) {
                    art.failure_rows.push(fail(m, &e));
                }
                None
            }
        }
    } else {
        None
    };
    for &method in &config.methods {
        if method.uses_latent() && latent.is_none() {
            continue;
        }
        let clock = Stopwatch::start();
        match run_method(config, cell, method, latent.as_ref(), art) {
            Ok(pairs) => {
                let row = ResultRow {
                    qos: qos.to_string(),
                    method: method.as_str().into(),
                    density: cell.density,
                    seed: cell.seed,
                    mae: mae(&pairs)?,
                    rmse: rmse(&pairs)?,
                    n: pairs.len(),
                };
                info!(
                    "{}: MAE {:.4} RMSE {:.4} ({clock})",
                    tag(method, cell.density, cell.seed),
                    row.mae,
                    row.rmse
                );
                art.rows.push(row);
            }
            Err(e) => {
                warn!("{} failed: {e}", tag(method, cell.density, cell.seed));
                art.failure_rows.push(fail(method, &e));
            }
        }
    }
    Ok(())
}

/// Test-set `(observed, predicted)` pairs for one method.
fn run_method(
    config: &ExperimentConfig,
    cell: &Cell,
    method: Method,
    latent: Option<&RegionalLatentModel>,
    art: &mut RunArtifact,
) -> CliResult<Vec<(f64, f64)>> {
    if cell.test.is_empty() {
        return Err(CliError::Usage("test split is empty".into()));
    }
    let pairs = |f: &dyn Fn(&QosRecord) -> f64| cell.test.iter().map(|r| (r.value, f(r))).collect();
    match method {
        Method::Upcc => {
            let m = Upcc::fit(&cell.train, config.upcc)?;
            Ok(pairs(&|r| m.predict(r.user_id, r.service_id)))
        }
        Method::Mean => {
            let m = MeanPredictor::fit(&cell.train, MeanLevel::Global)?;
            Ok(pairs(&|r| m.predict(r.user_id, r.service_id)))
        }
        _ => {
            let latent = latent.expect("latent model is fitted for network methods");
            let nc = method.network_config(&config.network, cell.seed, latent.m());
            let (net, history) = fit_network(nc, cell.meta.dims, &cell.train, &cell.valid, latent, &config.loss)?;
            let name = tag(method, cell.density, cell.seed);
            let rel = PathBuf::from("models").join(format!("{name}.json"));
            write_text(
                &config.output_dir.join(&rel),
                &net.to_json(&latent.content_hash()?, Some(&history))?,
            )?;
            art.models.push(rel);
            if method == Method::R2sl {
                let rel = PathBuf::from("activation").join(format!("{name}.csv"));
                let report = net.activation_stats(&cell.test, latent)?;
                report.write_csv(create(&config.output_dir.join(&rel))?)?;
                art.activation_reports.push(rel);
            }
            score(&net, latent, &cell.test)
        }
    }
}

/// Per (method, density) aggregates, in config order.
pub fn summarize(rows: &[ResultRow], config: &ExperimentConfig) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for method in &config.methods {
        for &density in &config.densities {
            let sel: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.method == method.as_str() && r.density == density)
                .collect();
            if sel.is_empty() {
                continue;
            }
            let (mae_mean, mae_std) = mean_std(&sel.iter().map(|r| r.mae).collect::<Vec<_>>());
            let (rmse_mean, rmse_std) = mean_std(&sel.iter().map(|r| r.rmse).collect::<Vec<_>>());
            out.push(SummaryRow {
                qos: sel[0].qos.clone(),
                method: method.as_str().into(),
                density,
                runs: sel.len(),
                mae_mean,
                mae_std,
                rmse_mean,
                rmse_std,
            });
        }
    }
    out
}

pub fn ablation(summary: &[SummaryRow], config: &ExperimentConfig) -> Vec<AblationRow> {
    let mut out = Vec::new();
    for &density in &config.densities {
        let at = |m: Method| summary.iter().find(|s| s.method == m.as_str() && s.density == density);
        let full = at(Method::R2sl).map(|s| s.mae_mean);
        for m in Method::ALL {
            if let (Some(removed), Some(s)) = (m.removed(), at(m)) {
                out.push(AblationRow {
                    density,
                    method: s.method.clone(),
                    removed: removed.into(),
                    runs: s.runs,
                    mae_mean: s.mae_mean,
                    rmse_mean: s.rmse_mean,
                    mae_change_vs_full: full.map(|f| s.mae_mean / f - 1.0),
                });
            }
        }
    }
    out
}

/// Methods as rows, one MAE and one RMSE column per density.
pub fn markdown_summary(summary: &[SummaryRow], config: &ExperimentConfig) -> String {
    let mut s = format!(
        "# QoS prediction results ({})\n\nMean ± sample std over seeds {:?}.\n\n| Method |",
        config.dataset.qos.as_str(),
        config.seeds
    );
    for d in &config.densities {
        s.push_str(&format!(" MAE d={d} | RMSE d={d} |"));
    }
    s.push_str("\n|---|");
    s.push_str(&"---|---|".repeat(config.densities.len()));
    s.push('\n');
    for method in &config.methods {
        s.push_str(&format!("| {} |", method.as_str()));
        for &d in &config.densities {
            match summary.iter().find(|r| r.method == method.as_str() && r.density == d) {
                Some(r) => s.push_str(&format!(
                    " {:.4} ± {:.4} | {:.4} ± {:.4} |",
                    r.mae_mean, r.mae_std, r.rmse_mean, r.rmse_std
                )),
                None => s.push_str(" failed | failed |"),
            }
        }
        s.push('\n');
    }
    s
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

fn write_outputs(config: &ExperimentConfig, art: &RunArtifact) -> CliResult<()> {
    let out = &config.output_dir;
    write_csv(
        &out.join(&art.results),
        &art.rows,
        &["qos", "method", "density", "seed", "mae", "rmse", "n"],
    )?;
    write_csv(
        &out.join(&art.failures),
        &art.failure_rows,
        &["qos", "method", "density", "seed", "error"],
    )?;
    write_csv(
        &out.join(&art.summary_csv),
        &art.summary,
        &["qos", "method", "density", "runs", "mae_mean", "mae_std", "rmse_mean", "rmse_std"],
    )?;
    write_csv(
        &out.join(&art.ablation_csv),
        &ablation(&art.summary, config),
        &["density", "method", "removed", "runs", "mae_mean", "rmse_mean", "mae_change_vs_full"],
    )?;
    write_text(&out.join(&art.summary_md), &markdown_summary(&art.summary, config))?;
    write_text(
        &out.join(MANIFEST_FILE),
        &serde_json::to_string_pretty(art).expect("manifest serializes"),
    )?;
    Ok(())
}
