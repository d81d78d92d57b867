use std::path::Path;

use log::info;
use r2sl_core::dataset::{
    distribution_report, make_splits, parse_files, synthesize, DatasetMeta, ParseOptions, SynthSpec,
};
use r2sl_core::latent::fit;
use r2sl_core::model::fit_network;
use r2sl_core::{DatasetDims, DensitySplit, LatentConfig, LossSpec, MetricReport, NetworkConfig, QosRecord};
use r2sl_core::{R2slNetwork, RegionalLatentModel};

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::io::*;
use crate::stats::mean_std;
use crate::Stopwatch;

/// Bucket edges (seconds) for the label distribution summary.
pub const REPORT_EDGES: [f64; 4] = [0.5, 1.0, 2.0, 5.0];

pub fn prepare(a: &PrepareArgs) -> CliResult<()> {
    let opts = ParseOptions {
        missing_sentinel: a.sentinel,
        value_cap: a.cap,
    };
    let parsed = parse_files(&a.matrix, &a.user_meta, &a.service_meta, opts)?;
    write_records(&a.out.join("records.csv"), &parsed.records)?;
    write_text(&a.out.join("meta.json"), &parsed.meta.to_json()?)?;
    let values: Vec<f64> = parsed.records.iter().map(|r| r.value).collect();
    println!(
        "missing: {}  over cap: {}  non-positive: {}",
        parsed.missing, parsed.dropped_over_cap, parsed.dropped_nonpositive
    );
    print!("{}", distribution_report(&values, &REPORT_EDGES)?);
    Ok(())
}

pub fn split(a: &SplitArgs) -> CliResult<()> {
    let f = &a.fractions;
    if f.len() != 3 {
        return Err(CliError::Usage("--fractions needs train,test,valid".into()));
    }
    let records = read_records(&a.records)?;
    let s = make_splits(records.len(), a.density, (f[0], f[1], f[2]), a.seed)?;
    for (name, idx) in [("train", &s.train), ("test", &s.test), ("valid", &s.valid)] {
        write_records(&a.out.join(format!("{name}.csv")), &DensitySplit::select(&records, idx))?;
    }
    write_text(&a.out.join("split.json"), &s.to_json()?)?;
    println!("train: {}  test: {}  valid: {}", s.counts.train, s.counts.test, s.counts.valid);
    Ok(())
}

fn geometric(m: usize, start: f64) -> Vec<f64> {
    (0..m).map(|j| start * 3f64.powi(j as i32)).collect()
}

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    if a.m == 0 {
        return Err(CliError::Usage("--m must be at least 1".into()));
    }
    let c_u = a.c_user.clone().unwrap_or_else(|| geometric(a.m, 0.3));
    let c_s = a.c_service.clone().unwrap_or_else(|| geometric(a.m, 0.4));
    if c_u.len() != a.m || c_s.len() != a.m {
        return Err(CliError::Usage(format!("--c-user and --c-service need {} values", a.m)));
    }
    let r = &a.regions;
    if r.len() != 4 {
        return Err(CliError::Usage("--regions needs four counts".into()));
    }
    if r.iter().any(|&n| n == 0) || a.n_users == 0 || a.n_services == 0 {
        return Err(CliError::Usage("users, services and region counts must be positive".into()));
    }
    if !(a.peak > 0.0 && a.peak <= 1.0) {
        return Err(CliError::Usage("--peak must be in (0, 1]".into()));
    }
    let spec = SynthSpec::nested(
        a.m,
        a.n_users,
        a.n_services,
        (r[0], r[1], r[2], r[3]),
        a.peak,
        c_u,
        c_s,
        a.n_records,
        a.seed,
    );
    let out = synthesize(&spec)?;
    write_records(&a.out.join("records.csv"), &out.records)?;
    write_text(&a.out.join("meta.json"), &out.meta.to_json()?)?;
    let truth = serde_json::json!({
        "m": a.m,
        "c_u": spec.c_u,
        "c_s": spec.c_s,
        "w": spec.w,
        "theta_u": spec.theta_u,
        "delta_u": spec.delta_u,
        "theta_s": spec.theta_s,
        "delta_s": spec.delta_s,
    });
    write_text(
        &a.out.join("truth.json"),
        &serde_json::to_string_pretty(&truth).expect("truth document serializes"),
    )?;
    println!("records: {}", out.records.len());
    Ok(())
}

/// Dims from metadata when given, otherwise the smallest dims covering the
/// records and the latent model's region tables.
fn resolve_dims(
    meta: Option<&Path>,
    records: &[&[QosRecord]],
    latent: Option<&RegionalLatentModel>,
) -> CliResult<DatasetDims> {
    if let Some(p) = meta {
        return Ok(read_meta(p)?.dims);
    }
    let all: Vec<QosRecord> = records.iter().flat_map(|r| r.iter().copied()).collect();
    let mut d = DatasetDims::covering(&all);
    if let Some(l) = latent {
        d.n_user_cities = d.n_user_cities.max(l.theta_u.cols());
        d.n_user_as = d.n_user_as.max(l.delta_u.cols());
        d.n_service_cities = d.n_service_cities.max(l.theta_s.cols());
        d.n_service_as = d.n_service_as.max(l.delta_s.cols());
    }
    Ok(d)
}

pub fn fit_latent(a: &FitLatentArgs) -> CliResult<()> {
    let records = read_records(&a.records)?;
    let config: LatentConfig = read_toml(a.config.as_deref())?;
    let dims = resolve_dims(a.meta.as_deref(), &[&records], None)?;
    let clock = Stopwatch::start();
    let model = fit(&records, &dims, config)?;
    info!("fit-latent: {} records in {}", records.len(), clock);
    write_text(&a.out, &model.to_json()?)?;
    let log = &model.fit_log;
    let tail = log.len().saturating_sub(5);
    for (i, ll) in log.iter().enumerate().skip(tail) {
        println!("iteration {i}: log-likelihood {ll:.6}");
    }
    println!("final log-likelihood: {:.6}", log.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

pub fn parse_loss(kind: &str, varsigma: f64, psi: f64) -> CliResult<LossSpec> {
    let spec = LossSpec {
        kind: kind.parse()?,
        varsigma,
        psi,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let records = read_records(&a.records)?;
    let valid = match &a.valid {
        Some(p) => read_records(p)?,
        None => Vec::new(),
    };
    let latent = read_latent(&a.latent)?;
    let latent_hash = latent.content_hash()?;
    let mut config: NetworkConfig = read_toml(a.config.as_deref())?;
    config.latent_m = latent.m();
    let loss = parse_loss(&a.loss, a.varsigma, a.psi)?;
    let dims = resolve_dims(a.meta.as_deref(), &[&records, &valid], Some(&latent))?;
    let seeds = a.seeds.clone().unwrap_or_else(|| vec![config.seed]);
    if seeds.is_empty() {
        return Err(CliError::Usage("--seeds needs at least one seed".into()));
    }
    for seed in seeds {
        let cfg = NetworkConfig { seed, ..config.clone() };
        let clock = Stopwatch::start();
        let (net, history) = fit_network(cfg, dims, &records, &valid, &latent, &loss)?;
        info!("train seed {seed}: {} epochs in {}", history.epochs.len(), clock);
        let path = a.out.join(format!("model-seed{seed}.json"));
        write_text(&path, &net.to_json(&latent_hash, Some(&history))?)?;
        let best = history.best_epoch.map(|e| &history.epochs[e]);
        match best {
            Some(e) => println!(
                "seed {seed}: best epoch {} train loss {:.6} valid MAE {:.6}",
                e.epoch, e.train_loss, e.valid_mae
            ),
            None => println!("seed {seed}: no epochs run"),
        }
    }
    Ok(())
}

/// Loads a network and checks it was trained against `latent`.
fn load_matching(model: &Path, latent: &RegionalLatentModel) -> CliResult<R2slNetwork> {
    let (net, hash) = read_network(model)?;
    if hash != latent.content_hash()? {
        return Err(CliError::Data(format!(
            "{} was trained against a different latent model",
            model.display()
        )));
    }
    Ok(net)
}

pub fn score(net: &R2slNetwork, latent: &RegionalLatentModel, records: &[QosRecord]) -> CliResult<Vec<(f64, f64)>> {
    let preds = net.predict_many(records, latent)?;
    Ok(records.iter().zip(preds).map(|(r, p)| (r.value, p)).collect())
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let latent = read_latent(&a.latent)?;
    let records = read_records(&a.records)?;
    let mut rows = Vec::new();
    for path in &a.models {
        let net = load_matching(path, &latent)?;
        let pairs = score(&net, &latent, &records)?;
        let row = MetricReport::from_pairs(&a.method, &a.split, net.config().seed, &pairs)?;
        println!("{} seed {}: MAE {:.6} RMSE {:.6}", row.method, row.seed, row.mae, row.rmse);
        rows.push(row);
    }
    r2sl_core::loss::write_metrics_csv(create(&a.out)?, &rows)?;
    if rows.len() > 1 {
        let (mae, mae_sd) = mean_std(&rows.iter().map(|r| r.mae).collect::<Vec<_>>());
        let (rmse, rmse_sd) = mean_std(&rows.iter().map(|r| r.rmse).collect::<Vec<_>>());
        println!(
            "{} over {} runs: MAE {mae:.6} ± {mae_sd:.6}  RMSE {rmse:.6} ± {rmse_sd:.6}",
            a.method,
            rows.len()
        );
    }
    Ok(())
}

pub fn gate_stats(a: &GateStatsArgs) -> CliResult<()> {
    let latent = read_latent(&a.latent)?;
    let net = load_matching(&a.model, &latent)?;
    let records = match (&a.records, a.user, a.service, &a.meta) {
        (Some(p), ..) => read_records(p)?,
        (None, Some(u), Some(s), Some(meta)) => vec![DatasetMeta::query(&read_meta(meta)?, u, s)?],
        _ => return Err(CliError::Usage("give --records, or --user, --service and --meta".into())),
    };
    let report = net.activation_stats(&records, &latent)?;
    report.write_csv(create(&a.out)?)?;
    if let Some(g) = &a.groups_out {
        report.write_groups_csv(create(g)?)?;
    }
    let active: f64 = report.experts.iter().map(|e| e.activation_rate).sum();
    println!(
        "requests: {}  experts: {}  mean active per request: {active:.3}",
        report.n_requests,
        report.experts.len()
    );
    Ok(())
}
