use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mgmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgmc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const MINIMAL: &str = "seed = 7\n\
    [problem]\ncells = 8\n\
    [observations]\nradius = 0.1\n\
    [experiment]\nsteps = 10\nwarmup = 20\n";

#[test]
fn sample_writes_requested_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let out = dir.path().join("a");
    let res = mgmc(&["sample", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let csv = fs::read_to_string(out.join("sample.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,z");
    assert_eq!(lines.len(), 11);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(1).unwrap().parse::<f64>().is_ok()));

    let record: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(record["command"], "sample");
    assert_eq!(record["seed"], 7);
    assert_eq!(record["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(record["results"]["steps"], 10);
    assert!(record["rng"].as_str().unwrap().contains("ChaCha8"));
}

#[test]
fn same_seed_gives_identical_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["sample", "--config", &cfg, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert!(mgmc(&args).status.success());
        fs::read(out.join("sample.csv")).unwrap()
    };
    let a = run("a", &[]);
    let b = run("b", &["--threads", "2"]);
    let c = run("c", &["--seed", "8"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn invalid_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[problem]\ncells = 8\nshape = \"round\"\n");
    let res = mgmc(&["sample", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("shape"));

    let cfg = write_config(dir.path(), "[problem]\ncells = 8\n[experiment]\nkind = \"rmse\"\n");
    let res = mgmc(&["sample", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn performance_table_has_shared_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 3\n[problem]\ncells = 8\n[observations]\nradius = 0.1\n\
         [sampler]\nkinds = [\"mgmc\", \"gibbs\", \"cholesky\"]\n\
         [experiment]\nsteps = 300\nwarmup = 50\n",
    );
    let out = dir.path().join("perf");
    let res = mgmc(&["performance", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let mut rdr = csv::Reader::from_path(out.join("performance.csv")).unwrap();
    let header = rdr.headers().unwrap().clone();
    for col in ["sampler", "tau", "seconds_per_sample", "seconds_per_independent_sample", "reliable"] {
        assert!(header.iter().any(|h| h == col), "missing {col}");
    }
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[2][2], "cholesky");
    assert_eq!(&rows[2][3], "1.0");
}

#[test]
fn ensemble_commands_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 4\n[problem]\ncells = 8\n[observations]\nradius = 0.1\n\
         [sampler]\nkinds = [\"mgmc\", \"gibbs\"]\n\
         [experiment]\nsteps = 200\nwarmup = 10\nchains = 50\nmax_lag = 5\n",
    );
    let out = dir.path().join("ens");
    for (cmd, file) in [
        ("convergence", "convergence_summary.csv"),
        ("rmse", "rmse.csv"),
        ("autocorrelation", "autocorrelation.csv"),
    ] {
        let res = mgmc(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(res.status.success(), "{cmd}: {}", String::from_utf8_lossy(&res.stderr));
        assert!(out.join(file).exists(), "{file}");
    }
    let conv = fs::read_to_string(out.join("convergence.csv")).unwrap();
    // 2 samplers × 201 steps + header
    assert_eq!(conv.lines().count(), 403);
}

#[test]
fn verify_passes_and_flags_broken_splitting() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = mgmc(&["verify", "--chains", "20000", "--out", out]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["results"]["passed"], true);
    assert!(report["results"]["checks"].as_array().unwrap().len() > 10);

    let res = mgmc(&["verify", "--chains", "2000", "--broken-splitting", "--out", out]);
    assert_eq!(res.status.code(), Some(1));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    let checks = report["results"]["checks"].as_array().unwrap();
    let neg = checks.iter().find(|c| c["name"] == "invalid splitting rejected").unwrap();
    assert_eq!(neg["pass"], false);
    assert!(neg["detail"].as_str().unwrap().contains("splitting"));
}
