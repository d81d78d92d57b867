use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use r2sl_cli::experiment::{latent_cache_name, ExperimentConfig, MANIFEST_FILE};
use r2sl_cli::run_experiment;
use r2sl_core::dataset::{read_records_csv, wsdream_like, WsDreamLikeSpec};
use r2sl_core::model::median;
use r2sl_core::{LatentConfig, R2slNetwork, RegionalLatentModel};

fn r2sl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_r2sl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = r2sl(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    r2sl(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const USERS: &str = "id\tcity\tas\n0\tOslo\tAS1\n1\tLima\tAS2\n";
const SERVICES: &str = "id\tcity\tas\n0\tRome\tAS9\n1\tKyiv\tAS7\n";

fn write_dataset(dir: &Path, matrix: &str) -> [PathBuf; 3] {
    let paths = [dir.join("m.txt"), dir.join("u.txt"), dir.join("s.txt")];
    fs::write(&paths[0], matrix).unwrap();
    fs::write(&paths[1], USERS).unwrap();
    fs::write(&paths[2], SERVICES).unwrap();
    paths
}

fn prepare(dir: &Path, matrix: &str, extra: &[&str]) -> Output {
    let [m, u, sv] = write_dataset(dir, matrix);
    let out = dir.join("prep");
    let mut args = vec![
        "prepare",
        "--matrix",
        s(&m),
        "--user-meta",
        s(&u),
        "--service-meta",
        s(&sv),
        "--out",
        s(&out),
    ];
    args.extend_from_slice(extra);
    r2sl(&args)
}

#[test]
fn prepare_skips_sentinel_cells_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = prepare(dir.path(), "0.3\t-1\n1.2\t5.0\n", &[]);
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("prep/records.csv")).unwrap();
    assert_eq!(
        csv,
        "user_id,service_id,value,user_city,user_as,service_city,service_as\n\
         0,0,0.3,1,0,1,1\n\
         1,0,1.2,0,1,1,1\n\
         1,1,5,0,1,0,0\n"
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("missing: 1  over cap: 0"), "{stdout}");
    assert!(stdout.contains("records: 3"), "{stdout}");
}

#[test]
fn prepare_drops_values_over_cap() {
    let dir = tempfile::tempdir().unwrap();
    let out = prepare(dir.path(), "25.0\t1\n2\t3\n", &["--cap", "20"]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("over cap: 1"));
    let csv = fs::read(dir.path().join("prep/records.csv")).unwrap();
    assert_eq!(read_records_csv(&csv[..]).unwrap().len(), 3);
}

#[test]
fn prepare_reports_parse_errors_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let out = prepare(dir.path(), "0.3\t1\n1.2\tabc\n", &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("m.txt:2"), "{err}");
    assert_eq!(
        code(&["prepare", "--matrix", "/no/such", "--user-meta", "x", "--service-meta", "y", "--out", "z"]),
        2
    );
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["split", "--records", "x.csv"]), 1);
    assert_eq!(code(&["split", "--records", "x", "--density", "0.1", "--fractions", "0.5,0.5", "--out", "o"]), 1);
    assert_eq!(code(&["--help"]), 0);
}

/// Small synthetic pipeline shared by several tests.
struct Pipeline {
    dir: tempfile::TempDir,
}

impl Pipeline {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        ok(&["synth", "--n-records", "3000", "--m", "2", "--seed", "3", "--out", s(&p.join("syn"))]);
        ok(&[
            "split",
            "--records",
            s(&p.join("syn/records.csv")),
            "--density",
            "0.4",
            "--fractions",
            "0.5,0.3,0.2",
            "--seed",
            "1",
            "--out",
            s(&p.join("sp")),
        ]);
        fs::write(p.join("lat.toml"), "m = 2\nseed = 4\n").unwrap();
        ok(&[
            "fit-latent",
            "--records",
            s(&p.join("sp/train.csv")),
            "--meta",
            s(&p.join("syn/meta.json")),
            "--config",
            s(&p.join("lat.toml")),
            "--out",
            s(&p.join("latent.json")),
        ]);
        Pipeline { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn train(&self, config: &str, seeds: &str, out: &str) -> String {
        let cfg = self.path(&format!("{out}.toml"));
        fs::write(&cfg, config).unwrap();
        ok(&[
            "train",
            "--records",
            s(&self.path("sp/train.csv")),
            "--valid",
            s(&self.path("sp/valid.csv")),
            "--latent",
            s(&self.path("latent.json")),
            "--meta",
            s(&self.path("syn/meta.json")),
            "--config",
            s(&cfg),
            "--seeds",
            seeds,
            "--out",
            s(&self.path(out)),
        ])
    }
}

const TINY_NET: &str = "epochs = 3\nembed_dim = 4\nhidden = 8\ndecoder_v = 3\n[adam]\nlr = 0.01\n";

#[test]
fn split_writes_counted_sets() {
    let p = Pipeline::new();
    let n = |f: &str| read_records_csv(&fs::read(p.path(f)).unwrap()[..]).unwrap().len();
    assert_eq!((n("sp/train.csv"), n("sp/test.csv"), n("sp/valid.csv")), (1200, 720, 480));
}

#[test]
fn fit_latent_improves_likelihood_and_is_deterministic() {
    let p = Pipeline::new();
    let first = fs::read(p.path("latent.json")).unwrap();
    let model = RegionalLatentModel::from_json(std::str::from_utf8(&first).unwrap()).unwrap();
    assert!(model.fit_log.last().unwrap() > &model.fit_log[0]);
    ok(&[
        "fit-latent",
        "--records",
        s(&p.path("sp/train.csv")),
        "--meta",
        s(&p.path("syn/meta.json")),
        "--config",
        s(&p.path("lat.toml")),
        "--out",
        s(&p.path("again.json")),
    ]);
    assert_eq!(first, fs::read(p.path("again.json")).unwrap());
}

#[test]
fn fit_latent_with_one_state_prints_final_likelihood() {
    let p = Pipeline::new();
    fs::write(p.path("m1.toml"), "m = 1\n").unwrap();
    let stdout = ok(&[
        "fit-latent",
        "--records",
        s(&p.path("sp/train.csv")),
        "--config",
        s(&p.path("m1.toml")),
        "--out",
        s(&p.path("m1.json")),
    ]);
    let model = RegionalLatentModel::from_json(&fs::read_to_string(p.path("m1.json")).unwrap()).unwrap();
    assert_eq!(model.m(), 1);
    let last = stdout.lines().last().unwrap();
    assert_eq!(last, format!("final log-likelihood: {:.6}", model.fit_log.last().unwrap()));
}

#[test]
fn evaluate_averages_seeds() {
    let p = Pipeline::new();
    p.train(TINY_NET, "1,2", "models");
    let stdout = ok(&[
        "evaluate",
        "--model",
        s(&p.path("models/model-seed1.json")),
        "--model",
        s(&p.path("models/model-seed2.json")),
        "--latent",
        s(&p.path("latent.json")),
        "--records",
        s(&p.path("sp/test.csv")),
        "--out",
        s(&p.path("metrics.csv")),
    ]);
    let rows = r2sl_core::loss::read_metrics_csv(&p.path("metrics.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![1, 2]);
    let hand_mean = (rows[0].mae + rows[1].mae) / 2.0;
    let line = stdout.lines().find(|l| l.contains("over 2 runs")).unwrap();
    assert!(line.contains(&format!("MAE {hand_mean:.6} ±")), "{line}");
}

#[test]
fn zero_learning_rate_leaves_the_initial_network() {
    let p = Pipeline::new();
    p.train(&TINY_NET.replace("lr = 0.01", "lr = 0.0"), "5", "frozen");
    let text = fs::read_to_string(p.path("frozen/model-seed5.json")).unwrap();
    let (trained, _, _) = R2slNetwork::from_json(&text).unwrap();
    let mut fresh = R2slNetwork::new(trained.config().clone(), *trained.dims()).unwrap();
    let train = read_records_csv(&fs::read(p.path("sp/train.csv")).unwrap()[..]).unwrap();
    fresh.set_output_bias(median(&train.iter().map(|r| r.value).collect::<Vec<_>>()).unwrap());
    for ((_, a), (_, b)) in trained.store().iter().zip(fresh.store().iter()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
}

#[test]
fn numerical_failures_exit_with_three() {
    let p = Pipeline::new();
    let cfg = p.path("huge.toml");
    fs::write(&cfg, TINY_NET.replace("lr = 0.01", "lr = 1e300")).unwrap();
    let c = code(&[
        "train",
        "--records",
        s(&p.path("sp/train.csv")),
        "--latent",
        s(&p.path("latent.json")),
        "--meta",
        s(&p.path("syn/meta.json")),
        "--config",
        s(&cfg),
        "--out",
        s(&p.path("huge")),
    ]);
    assert_eq!(c, 3);
}

fn gate_stats(p: &Pipeline, model: &str) -> Vec<(String, f64, f64)> {
    let out = p.path("gate.csv");
    ok(&[
        "gate-stats",
        "--model",
        s(&p.path(model)),
        "--latent",
        s(&p.path("latent.json")),
        "--user",
        "0",
        "--service",
        "2",
        "--meta",
        s(&p.path("syn/meta.json")),
        "--out",
        s(&out),
    ]);
    let mut r = csv::Reader::from_path(out).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["expert_id", "expert_kind", "mean_weight", "activation_rate"]);
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[1].to_string(), rec[2].parse().unwrap(), rec[3].parse().unwrap())
        })
        .collect()
}

#[test]
fn gate_stats_single_query_contracts() {
    let p = Pipeline::new();
    p.train(&format!("dense_gate = true\n{TINY_NET}"), "1", "dense");
    let rows = gate_stats(&p, "dense/model-seed1.json");
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.2 == 1.0 && r.1 > 0.0));
    assert!((rows.iter().map(|r| r.1).sum::<f64>() - 1.0).abs() < 1e-12);

    p.train(&format!("top_k = 1\n{TINY_NET}"), "1", "top1");
    let rows = gate_stats(&p, "top1/model-seed1.json");
    assert_eq!(rows.len(), 4);
    let active: Vec<_> = rows.iter().filter(|r| r.2 == 1.0).collect();
    assert_eq!(active.len(), 1);
    assert_eq!(active[0].1, 1.0);
    assert!(rows.iter().filter(|r| r.2 == 0.0).all(|r| r.1 == 0.0));
    assert_eq!(rows.iter().map(|r| r.0.as_str()).collect::<Vec<_>>(), ["task", "task", "physical", "virtual"]);
}

#[test]
fn evaluate_rejects_a_foreign_latent_model() {
    let p = Pipeline::new();
    p.train(TINY_NET, "1", "models");
    fs::write(p.path("lat2.toml"), "m = 2\nseed = 99\n").unwrap();
    ok(&[
        "fit-latent",
        "--records",
        s(&p.path("sp/train.csv")),
        "--meta",
        s(&p.path("syn/meta.json")),
        "--config",
        s(&p.path("lat2.toml")),
        "--out",
        s(&p.path("other.json")),
    ]);
    let c = code(&[
        "evaluate",
        "--model",
        s(&p.path("models/model-seed1.json")),
        "--latent",
        s(&p.path("other.json")),
        "--records",
        s(&p.path("sp/test.csv")),
        "--out",
        s(&p.path("m.csv")),
    ]);
    assert_eq!(c, 2);
}

// ---- experiment grid ----

fn experiment_dir(methods: &str, densities: &str, seeds: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = wsdream_like(&WsDreamLikeSpec {
        n_users: 20,
        n_services: 60,
        n_user_countries: 3,
        n_user_as: 5,
        n_service_countries: 4,
        n_service_as: 8,
        seed: 7,
        ..Default::default()
    })
    .unwrap();
    data.write_to(&dir.path().join("data")).unwrap();
    let config = format!(
        r#"
densities = {densities}
fractions = [0.2, 0.6, 0.2]
seeds = {seeds}
methods = {methods}
output_dir = "out"

[dataset]
matrix = "data/rtMatrix.txt"
user_meta = "data/userlist.txt"
service_meta = "data/wslist.txt"
qos = "rt"

[latent]
m = 2

[network]
embed_dim = 4
hidden = 8
decoder_v = 3
epochs = 2
"#
    );
    let path = dir.path().join("exp.toml");
    fs::write(&path, config).unwrap();
    (dir, path)
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn experiment_grid_has_one_row_per_cell() {
    let (dir, cfg) = experiment_dir(r#"["r2sl", "mean"]"#, "[0.1, 0.2]", "[0, 1]");
    let stdout = ok(&["experiment", "--config", s(&cfg)]);
    assert!(stdout.starts_with("8 result rows, 0 failures"), "{stdout}");
    let out = dir.path().join("out");
    let (header, rows) = csv_rows(&out.join("results.csv"));
    assert_eq!(header, ["qos", "method", "density", "seed", "mae", "rmse", "n"]);
    assert_eq!(rows.len(), 8);
    // Fixed grid order: density, then seed, then method.
    let keys: Vec<_> = rows.iter().map(|r| format!("{}/{}/{}", r[2], r[3], r[1])).collect();
    assert_eq!(
        keys,
        [
            "0.1/0/r2sl", "0.1/0/mean", "0.1/1/r2sl", "0.1/1/mean", "0.2/0/r2sl", "0.2/0/mean", "0.2/1/r2sl",
            "0.2/1/mean"
        ]
    );
    let (_, summary) = csv_rows(&out.join("summary.csv"));
    assert_eq!(summary.len(), 4);
    let md = fs::read_to_string(out.join("summary.md")).unwrap();
    assert_eq!(md.lines().filter(|l| l.starts_with("| r2sl |") || l.starts_with("| mean |")).count(), 2);
}

#[test]
fn experiment_ablation_csv_shape() {
    let (dir, cfg) = experiment_dir(
        r#"["r2sl", "r2sl_no_physical", "r2sl_no_virtual", "r2sl_no_latent", "upcc"]"#,
        "[0.1]",
        "[3]",
    );
    ok(&["experiment", "--config", s(&cfg)]);
    let (header, rows) = csv_rows(&dir.path().join("out/ablation.csv"));
    assert_eq!(
        header,
        ["density", "method", "removed", "runs", "mae_mean", "rmse_mean", "mae_change_vs_full"]
    );
    let removed: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(removed, ["none", "physical", "virtual", "all"]);
    assert_eq!(rows[0][6].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn experiment_rerun_reuses_latent_cache_and_reproduces_outputs() {
    let (dir, cfg) = experiment_dir(r#"["r2sl", "r2sl_dense_gate", "mean"]"#, "[0.1]", "[0, 1]");
    let config = ExperimentConfig::load(&cfg).unwrap();
    let first = run_experiment(&config).unwrap();
    assert_eq!(first.latent_cache_hits, 0);
    assert_eq!(first.latent_models.len(), 2);
    let out = dir.path().join("out");
    let snapshot: Vec<(PathBuf, Vec<u8>)> = walk(&out);
    let second = run_experiment(&config).unwrap();
    assert_eq!(second.latent_cache_hits, 2);
    assert_eq!(walk(&out), snapshot);

    // The manifest names every emitted file exactly once.
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
    let mut listed: Vec<PathBuf> = vec![out.join(MANIFEST_FILE)];
    for (k, v) in manifest.as_object().unwrap() {
        match v {
            serde_json::Value::String(p) if k != "config_hash" => listed.push(out.join(p)),
            serde_json::Value::Array(a) => listed.extend(a.iter().map(|p| out.join(p.as_str().unwrap()))),
            _ => {}
        }
    }
    listed.sort();
    let files: Vec<PathBuf> = snapshot.iter().map(|(p, _)| p.clone()).collect();
    assert_eq!(listed, files);

}

#[test]
fn latent_cache_key_follows_records_and_settings() {
    let data = wsdream_like(&WsDreamLikeSpec { n_users: 5, n_services: 10, seed: 1, ..Default::default() }).unwrap();
    let parsed = r2sl_core::dataset::parse_matrix(
        &data.matrix_text(),
        &data.user_meta_text(),
        &data.service_meta_text(),
        Default::default(),
    )
    .unwrap();
    let recs = &parsed.records;
    let lc = LatentConfig { m: 2, ..Default::default() };
    let name = latent_cache_name(recs, &lc).unwrap();
    assert_eq!(name, latent_cache_name(&recs.clone(), &lc.clone()).unwrap());
    assert_ne!(name, latent_cache_name(&recs[1..], &lc).unwrap());
    assert_ne!(name, latent_cache_name(recs, &LatentConfig { seed: 1, ..lc.clone() }).unwrap());
}

fn walk(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = fs::read(&p).unwrap();
                out.push((p, bytes));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn experiment_records_failures_and_continues() {
    // 1e-4 of ~1200 records leaves nothing to train on.
    let (dir, cfg) = experiment_dir(r#"["r2sl", "mean"]"#, "[0.0001, 0.1]", "[0]");
    let stdout = ok(&["experiment", "--config", s(&cfg)]);
    assert!(stdout.starts_with("2 result rows, 2 failures"), "{stdout}");
    let (header, rows) = csv_rows(&dir.path().join("out/failures.csv"));
    assert_eq!(header, ["qos", "method", "density", "seed", "error"]);
    assert_eq!(rows.iter().map(|r| r[1].as_str()).collect::<Vec<_>>(), ["r2sl", "mean"]);
}

#[test]
fn config_hash_tracks_meaningful_fields_only() {
    let (dir, cfg) = experiment_dir(r#"["mean"]"#, "[0.1]", "[0]");
    let base = ExperimentConfig::load(&cfg).unwrap();
    let text = fs::read_to_string(&cfg).unwrap();
    let reformatted = dir.path().join("b.toml");
    fs::write(&reformatted, format!("# comment\n{}", text.replace("output_dir = \"out\"", "output_dir = \"elsewhere\""))).unwrap();
    assert_eq!(ExperimentConfig::load(&reformatted).unwrap().snapshot_hash().unwrap(), base.snapshot_hash().unwrap());
    let changed = dir.path().join("c.toml");
    fs::write(&changed, text.replace("epochs = 2", "epochs = 3")).unwrap();
    assert_ne!(ExperimentConfig::load(&changed).unwrap().snapshot_hash().unwrap(), base.snapshot_hash().unwrap());
    let defaults_spelled_out = dir.path().join("d.toml");
    fs::write(&defaults_spelled_out, text.replace("[latent]\nm = 2", "[latent]\nm = 2\nseed = 0")).unwrap();
    assert_eq!(ExperimentConfig::load(&defaults_spelled_out).unwrap().snapshot_hash().unwrap(), base.snapshot_hash().unwrap());

    // Same data elsewhere: same hash. Edited data: new hash.
    let moved = dir.path().join("moved");
    fs::create_dir(&moved).unwrap();
    for f in ["rtMatrix.txt", "userlist.txt", "wslist.txt"] {
        fs::copy(dir.path().join("data").join(f), moved.join(f)).unwrap();
    }
    let relocated = dir.path().join("e.toml");
    fs::write(&relocated, text.replace("data/", "moved/")).unwrap();
    assert_eq!(ExperimentConfig::load(&relocated).unwrap().snapshot_hash().unwrap(), base.snapshot_hash().unwrap());
    let matrix = moved.join("rtMatrix.txt");
    let edited = fs::read_to_string(&matrix).unwrap().replacen("\t", "\t-1\t", 1);
    fs::write(&matrix, edited).unwrap();
    assert_ne!(ExperimentConfig::load(&relocated).unwrap().snapshot_hash().unwrap(), base.snapshot_hash().unwrap());
}

#[test]
fn experiment_config_rejects_empty_grids_and_unknown_methods() {
    let (_dir, cfg) = experiment_dir("[]", "[0.1]", "[0]");
    assert_eq!(code(&["experiment", "--config", s(&cfg)]), 1);
    let (_dir, cfg) = experiment_dir(r#"["knn"]"#, "[0.1]", "[0]");
    assert_eq!(code(&["experiment", "--config", s(&cfg)]), 1);
}
