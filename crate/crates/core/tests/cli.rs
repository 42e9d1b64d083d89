use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ggmc(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ggmc"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("GGMC_OUT_DIR")
        .output()
        .unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<csv::StringRecord>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().iter().map(String::from).collect();
    let rows = reader.records().map(|r| r.unwrap()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn gaussian_run_recovers_unit_variance() {
    let dir = tempfile::tempdir().unwrap();
    let out = ggmc(
        &["run", "--target", "gaussian-1d", "--correction", "per-step", "--steps", "100000", "--step-size", "0.5"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("summary.csv"));
    assert_eq!(rows.len(), 1);
    let get = |name: &str| rows[0][column(&header, name)].parse::<f64>().unwrap();
    let (var, ess) = (get("variance"), get("ess"));
    // standard error of a Gaussian sample variance is about var·√(2/ESS)
    assert!((var - 1.0).abs() < 4.0 * (2.0 / ess).sqrt(), "variance {var}, ess {ess}");
    let rate = get("acceptance_rate");
    assert!(rate > 0.9 && rate <= 1.0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("wall time"));
}

#[test]
fn samples_file_is_valid_full_precision_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = ggmc(
        &["run", "--target", "gaussian:1,4", "--correction", "multi-step", "--multi-step-n", "5", "--steps", "5000", "--chains", "2", "--thin", "10"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("samples.csv"));
    assert_eq!(
        header,
        ["chain", "step", "theta_0", "theta_1", "potential", "kinetic", "log_alpha", "accepted"]
    );
    // 1000 units per chain, every 10th kept
    assert_eq!(rows.len(), 200);
    for r in &rows {
        let step: usize = r[1].parse().unwrap();
        assert_eq!(step % 50, 0);
        let theta: Vec<f64> = (2..4).map(|i| r[i].parse().unwrap()).collect();
        // shortest round-trip formatting: parsing and reprinting is lossless
        for (i, t) in theta.iter().enumerate() {
            assert_eq!(t.to_string(), &r[2 + i]);
        }
        let u: f64 = r[4].parse().unwrap();
        let expected = theta[0] * theta[0] / 2.0 + theta[1] * theta[1] / 8.0;
        assert!((u - expected).abs() <= 1e-12 * expected.max(1.0));
        assert!(matches!(&r[7], "0" | "1"));
        let la: f64 = r[6].parse().unwrap();
        assert!(!la.is_nan());
    }
    let (_, summary) = read_csv(&dir.path().join("summary.csv"));
    assert_eq!(summary.len(), 4);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    fs::write(&config, "# base\ntarget = gaussian-2d\nsteps = 300\nseed = 5\nstep_size = 0.2\n").unwrap();
    let a = dir.path().join("a");
    let out = ggmc(&["run", "--config", config.to_str().unwrap()], &a);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = read_csv(&a.join("samples.csv"));
    assert_eq!(rows.len(), 300);

    let b = dir.path().join("b");
    let out = ggmc(&["run", "--config", config.to_str().unwrap(), "--steps", "100"], &b);
    assert!(out.status.success());
    let (_, rows) = read_csv(&b.join("samples.csv"));
    assert_eq!(rows.len(), 100);
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_ggmc"))
        .args(["run", "--steps", "50"])
        .env("GGMC_OUT_DIR", &target)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(target.join("samples.csv").exists());
}

#[test]
fn invalid_specs_fail_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 4] = [
        &["run", "--integrator", "euler-maruyama", "--correction", "per-step"],
        &["run", "--lr", "0.01", "--momentum", "0.9", "--friction", "1"],
        &["run", "--target", "nowhere"],
        &["run", "--correction", "multi-step", "--multi-step-n", "3", "--steps", "10"],
    ];
    for args in cases {
        let out = ggmc(args, dir.path());
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
    let out = ggmc(&["run", "--integrator", "em", "--correction", "per-step"], dir.path());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unrealizable"));
    assert!(!dir.path().join("samples.csv").exists());
}

#[test]
fn blow_up_leaves_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = ggmc(
        &["run", "--target", "gaussian:1e-4", "--step-size", "1", "--friction", "0.1", "--steps", "100000", "--thin", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("blow-up"));
    let (_, rows) = read_csv(&dir.path().join("samples.csv"));
    assert!(!rows.is_empty() && rows.len() < 100_000);
}

#[test]
fn theorem1_demo_reports_no_realizable_steps() {
    let out = Command::new(env!("CARGO_BIN_EXE_ggmc")).arg("theorem1-demo").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("backward-realizable: 0 / 10000"), "{text}");
}

#[test]
fn convert_params_prints_both_mappings() {
    let out = Command::new(env!("CARGO_BIN_EXE_ggmc"))
        .args(["convert-params", "--lr", "1e-4", "--momentum", "0.9", "--data-size", "50000"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains(&format!("step_size={}", (1e-4f64 / 50_000.0).sqrt())), "{text}");
    assert!(text.contains("euler-maruyama"));
}

#[test]
fn sweep_over_learning_rate() {
    let dir = tempfile::tempdir().unwrap();
    let out = ggmc(
        &[
            "sweep", "--target", "logistic", "--correction", "per-step", "--steps", "4000", "--momentum", "0.9",
            "--axis", "lr=0.05,2",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("sweep.csv"));
    assert_eq!(header, ["cell", "lr", "status", "acceptance_rate", "mean_potential", "mean_kinetic", "error"]);
    assert_eq!(rows.len(), 2);
    let rate = |i: usize| rows[i][3].parse::<f64>().unwrap();
    assert!(rows.iter().all(|r| &r[2] == "ok"));
    // smaller learning rate, smaller step, fewer rejections
    assert!(rate(0) > rate(1), "{} vs {}", rate(0), rate(1));
    assert!(dir.path().join("cell_0/summary.csv").exists());
}

#[test]
fn sweep_records_cell_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = ggmc(
        &["sweep", "--correction", "per-step", "--steps", "200", "--axis", "integrator=obabo,euler-maruyama,leapfrog"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = read_csv(&dir.path().join("sweep.csv"));
    let status: Vec<&str> = rows.iter().map(|r| &r[2]).collect();
    assert_eq!(status, ["ok", "error", "ok"]);
    assert!(rows[1][6].contains("unrealizable"));
}

#[test]
fn empty_sweep_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = ggmc(&["sweep"], dir.path());
    assert!(out.status.success());
    let (header, rows) = read_csv(&dir.path().join("sweep.csv"));
    assert_eq!(header[0], "cell");
    assert!(rows.is_empty());
}

#[test]
fn library_entry_point_matches_binary() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("lib");
    let code = ggmc::cli::main_with_args(["ggmc", "run", "--steps", "500", "--seed", "9", "--out", a.to_str().unwrap()]);
    assert_eq!(code, 0);
    let b = dir.path().join("bin");
    assert!(ggmc(&["run", "--steps", "500", "--seed", "9"], &b).status.success());
    assert_eq!(fs::read(a.join("samples.csv")).unwrap(), fs::read(b.join("samples.csv")).unwrap());
}
