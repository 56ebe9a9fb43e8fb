use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sbr::kv::KvMap;
use sbr::SbrFit;

fn sbr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbr"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn sbr")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stdout.is_empty(), "unexpected stdout");
}

fn manifest(path: &Path) -> KvMap {
    KvMap::parse(&fs::read_to_string(path).unwrap()).unwrap()
}

fn error_line(out: &Output) -> String {
    let err = String::from_utf8_lossy(&out.stderr);
    err.lines()
        .find(|l| l.starts_with("error kind="))
        .unwrap_or_else(|| panic!("no error line in: {err}"))
        .to_string()
}

/// Small sparse scenario at a tenth of the desk widths.
fn simulate_small(dir: &Path, scenario: &str) {
    ok(&sbr(
        &[
            "simulate", "--scenario", scenario, "--layout", "desk", "--scale", "0.1", "--n-train", "60", "--n-test",
            "200", "--seed", "4", "--out", "sim",
        ],
        dir,
    ));
}

#[test]
fn fit_writes_fit_and_manifest_with_lambda() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulate_small(d, "sparse");
    let m = manifest(&d.join("sim/run.manifest"));
    assert_eq!(m.get("command"), Some("simulate"));
    assert_eq!(m.get("p_snp"), Some("1000"));
    assert!(d.join("sim/train/sources").exists() && d.join("sim/truth.sbr").exists());

    ok(&sbr(&["fit", "--estimator", "map", "--data", "sim/train", "--out", "out/fit.sbr", "--trace", "out/trace.csv"], d));
    let fit = SbrFit::load(&d.join("out/fit.sbr")).unwrap();
    assert_eq!(fit.source_dims, vec![26, 50, 1000]);
    let m = manifest(&d.join("out/run.manifest"));
    let lam: Vec<f64> = m.parse_list("lambda_hat").unwrap();
    assert_eq!(lam.len(), 3);
    assert_eq!(lam, fit.lambda.values());
    assert_eq!(m.get("estimator"), Some("map"));
    assert!(m.get("sbr_version").is_some());
    let trace = fs::read_to_string(d.join("out/trace.csv")).unwrap();
    assert!(trace.starts_with("stage,lambda_cl,lambda_rna,lambda_snp,objective\n"));
    assert!(trace.lines().any(|l| l.starts_with("map,")) && trace.lines().any(|l| l.starts_with("cv,")));
}

#[test]
fn predict_with_wrong_width_names_the_source() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulate_small(d, "medium");
    ok(&sbr(&["fit", "--data", "sim/train", "--lambda", "1,10,100", "--out", "fit.sbr"], d));
    let out = sbr(
        &[
            "predict", "--fit", "fit.sbr", "--source", "cl=sim/test/cl.sbrm", "--source", "rna=sim/test/cl.sbrm",
            "--source", "snp=sim/test/snp.sbrm", "--out", "p.csv",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(2));
    let line = error_line(&out);
    assert!(line.starts_with("error kind=data reason="), "{line}");
    assert!(line.contains("'rna'"), "{line}");
    assert!(!d.join("p.csv").exists());
}

#[test]
fn usage_errors_exit_one_with_a_single_line() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for args in [
        vec!["fit", "--no-such-flag"],
        vec!["frobnicate"],
        vec!["fit", "--estimator", "bogus", "--data", "x"],
        vec!["sparsify", "--fit", "f.sbr", "--method", "magic"],
    ] {
        let out = sbr(&args, d);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let line = error_line(&out);
        assert!(line.starts_with("error kind=usage reason="), "{line}");
    }
    simulate_small(d, "sparse");
    let out = sbr(&["fit", "--data", "sim/train", "--lambda", "1,-2,3"], d);
    assert_eq!(out.status.code(), Some(1));
    let out = sbr(&["fit", "--data", "sim/train", "--lambda", "1,2"], d);
    assert_eq!(out.status.code(), Some(1));
    let out = sbr(&["fit", "--data", "missing_dir"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).starts_with("error kind=data"));
}

#[test]
fn flags_override_config_which_overrides_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulate_small(d, "sparse");
    fs::write(d.join("run.cfg"), "# tuning\nestimator = cv\nrestarts = 2\nseed = 17\n").unwrap();
    ok(&sbr(&["--config", "run.cfg", "fit", "--data", "sim/train", "--estimator", "ml", "--out", "a/fit.sbr"], d));
    let m = manifest(&d.join("a/run.manifest"));
    assert_eq!(m.get("estimator"), Some("ml"));
    assert_eq!(m.get("restarts"), Some("2"));
    assert_eq!(m.get("seed"), Some("17"));
    assert_eq!(m.get("block_size"), Some("none"));
    assert_eq!(m.get("log_lambda_max"), Some("12"));
    assert_eq!(SbrFit::load(&d.join("a/fit.sbr")).unwrap().lambda.estimator().to_string(), "ml");
}

#[test]
fn reruns_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulate_small(d, "dense");
    for dir in ["r1", "r2"] {
        let out = format!("{dir}/fit.sbr");
        ok(&sbr(&["--workers", "1", "fit", "--data", "sim/train", "--out", &out], d));
    }
    ok(&sbr(&["--workers", "3", "fit", "--data", "sim/train", "--out", "r3/fit.sbr"], d));
    let a = fs::read(d.join("r1/fit.sbr")).unwrap();
    let b = fs::read(d.join("r2/fit.sbr")).unwrap();
    assert_eq!(a, b, "workers=1 reruns differ");
    let ma = manifest(&d.join("r1/run.manifest"));
    let mb = manifest(&d.join("r2/run.manifest"));
    assert_eq!(ma.get("fit_sha256"), mb.get("fit_sha256"));

    let f1 = SbrFit::load(&d.join("r1/fit.sbr")).unwrap();
    let f3 = SbrFit::load(&d.join("r3/fit.sbr")).unwrap();
    for (x, y) in f1.lambda.values().iter().zip(f3.lambda.values()) {
        assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
    }
    for (x, y) in f1.beta_hat.iter().zip(&f3.beta_hat) {
        assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
    }
    for (x, y) in f1.var_diag.unwrap().iter().zip(f3.var_diag.as_ref().unwrap()) {
        assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
    }
}

#[test]
fn sparsify_general_and_pcr_options() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulate_small(d, "medium");
    ok(&sbr(&["fit", "--data", "sim/train", "--lambda", "1,30,300", "--out", "fit.sbr"], d));
    ok(&sbr(&["sparsify", "--fit", "fit.sbr", "--method", "general", "--data", "sim/train", "--pcr-xi", "0.5", "--control", "none", "--out", "g/s.sbr"], d));
    let m = manifest(&d.join("g/run.manifest"));
    assert_eq!(m.get("result_method"), Some("svd_equivalent"));
    assert_eq!(m.get("penalty"), Some("pcr"));
    let out = sbr(&["sparsify", "--fit", "fit.sbr", "--method", "general", "--out", "x.sbr"], d);
    assert_eq!(out.status.code(), Some(1), "general needs data");
    let out = sbr(&["sparsify", "--fit", "fit.sbr", "--alpha", "1", "--pcr-xi", "1"], d);
    assert_eq!(out.status.code(), Some(1));
    let r = sbr(&["sparsify", "--fit", "fit.sbr", "--c-variant", "mode", "--control", "sqrtlogn", "--out", "r/s.sbr"], d);
    ok(&r);
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("sparsity method=relaxed_controlled"), "{err}");
}

#[test]
fn bench_stdout_csv_has_header_and_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = sbr(
        &[
            "bench", "--scenarios", "medium", "--layout", "desk", "--scale", "0.02", "--n-train", "40", "--n-test",
            "100", "--seeds", "2", "--stdout-csv", "--out", "b/bench.csv",
        ],
        d,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], sbr::bench::CSV_HEADER);
    assert_eq!(lines.len(), 3);
    let cols = lines[0].split(',').count();
    assert!(lines[1..].iter().all(|l| l.split(',').count() == cols));
    assert!(!d.join("b/bench.csv").exists());
    assert_eq!(manifest(&d.join("b/run.manifest")).get("rows"), Some("2"));
}

/// Sparsified predictions stay close to the dense ones on a desk-size
/// medium scenario.
#[test]
fn controlled_sparsification_keeps_prediction_quality() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&sbr(
        &["simulate", "--scenario", "medium", "--layout", "desk", "--n-test", "1000", "--seed", "0", "--out", "sim"],
        d,
    ));
    ok(&sbr(&["fit", "--data", "sim/train", "--estimator", "map", "--out", "fit/fit.sbr"], d));
    ok(&sbr(&["sparsify", "--fit", "fit/fit.sbr", "--method", "relaxed", "--control", "logn", "--out", "sp/sparse.sbr"], d));
    ok(&sbr(&["predict", "--fit", "fit/fit.sbr", "--data", "sim/test", "--out", "dense/pred.csv"], d));
    ok(&sbr(
        &["predict", "--fit", "fit/fit.sbr", "--sparse", "sp/sparse.sbr", "--data", "sim/test", "--out", "sparse/pred.csv"],
        d,
    ));
    let dense: f64 = manifest(&d.join("dense/run.manifest")).parse_value("correlation").unwrap();
    let sparse: f64 = manifest(&d.join("sparse/run.manifest")).parse_value("correlation").unwrap();
    let sparsity: f64 = manifest(&d.join("sp/run.manifest")).parse_value("sparsity").unwrap();
    assert!(sparsity < 0.5, "sparsity {sparsity}");
    assert!((dense - sparse).abs() <= 0.05, "dense {dense} vs sparse {sparse}");
    let preds = fs::read_to_string(d.join("sparse/pred.csv")).unwrap();
    assert_eq!(preds.lines().count(), 1001);
}
