use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fixture(rel: &str) -> String {
    fixtures().join(rel).display().to_string()
}

fn lossforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lossforge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn out_arg(dir: &Path) -> String {
    dir.display().to_string()
}

/// Structural equality with a relative tolerance on numbers.
fn assert_json_close(a: &Value, b: &Value, path: &str) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()), "{path}: {x} != {y}");
        }
        (Value::Object(x), Value::Object(y)) => {
            assert_eq!(x.keys().collect::<Vec<_>>(), y.keys().collect::<Vec<_>>(), "{path}: keys differ");
            for (k, v) in x {
                assert_json_close(v, &y[k], &format!("{path}.{k}"));
            }
        }
        (Value::Array(x), Value::Array(y)) => {
            assert_eq!(x.len(), y.len(), "{path}: lengths differ");
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                assert_json_close(u, v, &format!("{path}[{i}]"));
            }
        }
        _ => assert_eq!(a, b, "{path}"),
    }
}

#[test]
fn fit_of_a_synthetic_trace_succeeds() {
    let tmp = TempDir::new().unwrap();
    let o = lossforge(&["fit", &fixture("synth_trace.csv"), "--out", &out_arg(tmp.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fit = read_json(&tmp.path().join("fit.json"));
    let s = fit.to_string();
    assert!(s.contains("q_int"), "{s}");
    assert!(tmp.path().join("fit.csv").exists());
    assert!(tmp.path().join("manifest.json").exists());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = lossforge(&["fit", "--no-such-flag"]);
    assert_eq!(code(&o), 64);
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    assert_eq!(code(&lossforge(&[])), 64);
}

#[test]
fn version_and_help_exit_cleanly() {
    assert_eq!(code(&lossforge(&["--version"])), 0);
    assert_eq!(code(&lossforge(&["--help"])), 0);
}

#[test]
fn missing_input_file_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let o = lossforge(&["fit", "/nonexistent/trace.csv", "--out", &out_arg(&out)]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(!out.exists(), "a failed run must not create the output directory");
}

#[test]
fn jobs_zero_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let o = lossforge(&["fit", &fixture("synth_trace.csv"), "--jobs", "0", "--out", &out_arg(tmp.path())]);
    assert_eq!(code(&o), 64, "{}", stderr(&o));
}

#[test]
fn rank_deficient_extraction_names_the_collinear_channels() {
    let tmp = TempDir::new().unwrap();
    let matrix = tmp.path().join("matrix.json");
    fs::write(
        &matrix,
        r#"{
  "modes": [{"id": "A", "freq_hz": 5e9}, {"id": "B", "freq_hz": 6e9}, {"id": "C", "freq_hz": 7e9}],
  "channels": [
    {"id": "surf", "kind": "dielectric-participation"},
    {"id": "bulk", "kind": "dielectric-participation"},
    {"id": "pkg_ma", "kind": "dielectric-participation"}
  ],
  "values": [[1e-3, 0.9, 9e-4], [4e-4, 0.8, 8e-4], [2e-4, 0.5, 5e-4]]
}"#,
    )
    .unwrap();
    let modes = tmp.path().join("modes.csv");
    fs::write(
        &modes,
        "mode_id,frequency_hz,q_int,q_int_sigma,photon_number\n\
         A,5e9,1.0e6,1.0e4,1\nB,6e9,2.0e6,2.0e4,1\nC,7e9,3.0e6,3.0e4,1\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = lossforge(&[
        "extract",
        "--participations",
        &out_arg(&matrix),
        "--modes",
        &out_arg(&modes),
        "--out",
        &out_arg(&out),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("bulk") && err.contains("pkg_ma"), "{err}");
    assert!(!err.contains("surf"), "{err}");
}

#[test]
fn prediction_matches_the_golden_report() {
    let tmp = TempDir::new().unwrap();
    let o = lossforge(&[
        "predict",
        "--participations",
        &fixture("participations/hairpin_stripline.json"),
        "--library",
        &fixture("library/hairpin_ta_hemex.json"),
        "--out",
        &out_arg(tmp.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let got = read_json(&tmp.path().join("prediction.json"));
    let want = read_json(&fixtures().join("golden/prediction_hairpin.json"));
    assert_json_close(&got, &want, "prediction");
}

fn run_predict_into(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "predict".to_string(),
        "--participations".into(),
        fixture("participations/hairpin_stripline.json"),
        "--library".into(),
        fixture("library/hairpin_ta_hemex.json"),
        "--out".into(),
        out_arg(out),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    lossforge(&refs)
}

fn without_timestamp(manifest: &str) -> String {
    manifest.lines().filter(|l| !l.trim_start().starts_with("\"timestamp\"")).collect::<Vec<_>>().join("\n")
}

#[test]
fn repeated_runs_are_byte_identical_apart_from_the_timestamp() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let snapshot = |dir: &Path| {
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    assert_eq!(code(&run_predict_into(&out, &["--plot"])), 0);
    let first = snapshot(&out);
    assert_eq!(code(&run_predict_into(&out, &["--plot"])), 0);
    let second = snapshot(&out);
    assert_eq!(first.len(), second.len());
    for ((na, a), (nb, b)) in first.iter().zip(&second) {
        assert_eq!(na, nb);
        if na == "manifest.json" {
            let (a, b) = (String::from_utf8_lossy(a), String::from_utf8_lossy(b));
            assert_eq!(without_timestamp(&a), without_timestamp(&b));
        } else {
            assert!(a == b, "{na} differs between runs");
        }
    }
}

#[test]
fn manifest_records_inputs_outputs_and_settings() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&run_predict_into(tmp.path(), &[])), 0);
    let m = read_json(&tmp.path().join("manifest.json"));
    assert_eq!(m["command"], "predict");
    assert!(m["config_digest"].as_str().unwrap().starts_with("sha256:"));
    let inputs = m["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 2);
    for i in inputs {
        let path = i["path"].as_str().unwrap();
        let bytes = fs::read(path).unwrap();
        let digest = i["sha256"].as_str().unwrap();
        assert_eq!(digest.len(), 64, "{path}");
        assert!(!bytes.is_empty());
    }
    let outputs: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(outputs.contains(&"prediction.json"));
    assert!(!outputs.contains(&"manifest.json"));
    assert!(m["timestamp"].as_u64().unwrap() > 0);
}

#[test]
fn command_line_flags_override_config_keys() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("config.json");
    let out = tmp.path().join("out");
    fs::write(
        &cfg,
        format!(
            r#"{{"out": {:?}, "plan-sweep": {{"center": 5e9, "span": 2e6, "points": 51, "weight": 4}}}}"#,
            out.display().to_string()
        ),
    )
    .unwrap();
    let rows = |dir: &Path| fs::read_to_string(dir.join("plan.csv")).unwrap().lines().count() - 1;

    let o = lossforge(&["plan-sweep", "--config", &out_arg(&cfg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(rows(&out), 51);

    let o = lossforge(&["plan-sweep", "--config", &out_arg(&cfg), "--points", "21"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(rows(&out), 21);
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["settings"]["command"]["points"], 21);
    assert_eq!(m["settings"]["command"]["weight"], 4.0);
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("config.json");
    fs::write(&cfg, r#"{"plan-sweep": {"centre": 5e9}}"#).unwrap();
    let o = lossforge(&["plan-sweep", "--config", &out_arg(&cfg), "--out", &out_arg(tmp.path())]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn simulated_sweep_round_trips_through_extraction() {
    let tmp = TempDir::new().unwrap();
    let (sim, sweep, ext) = (tmp.path().join("sim"), tmp.path().join("sweep"), tmp.path().join("ext"));
    let o = lossforge(&["simulate", "--truth", &fixture("truth.json"), "--out", &out_arg(&sim)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = lossforge(&["power-sweep", &out_arg(&sim), "--out", &out_arg(&sweep)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = lossforge(&[
        "extract",
        "--participations",
        &fixture("participations/bf22_tslv2.json"),
        "--modes",
        &out_arg(&sweep.join("modes.csv")),
        "--fixed",
        &fixture("fixed/package.json"),
        "--out",
        &out_arg(&ext),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let truth = read_json(&fixtures().join("truth.json"));
    let f = read_json(&ext.join("factors.json"));
    let factor = |id: &str| (f["factors"][id]["value"].as_f64().unwrap(), f["factors"][id]["sigma"].as_f64().unwrap());

    for id in ["bulk", "seam"] {
        let want = truth["loss_factors"][id]["value"].as_f64().unwrap();
        let (got, sigma) = factor(id);
        assert!((got - want).abs() < 4.0 * sigma, "{id}: {got} +- {sigma} vs {want}");
    }
    // The surface channel is extracted at n = 1, where the TLS loss is q0 + A / sqrt(1 + (1/n_c)^beta).
    let tls = &truth["tls_channels"]["surf"];
    let (q0, a, nc, beta) = (
        tls["q0_inv"].as_f64().unwrap(),
        tls["tls_amplitude"].as_f64().unwrap(),
        tls["n_critical"].as_f64().unwrap(),
        tls["beta"].as_f64().unwrap(),
    );
    let want = q0 + a / (1.0 + (1.0 / nc).powf(beta)).sqrt();
    let (got, _) = factor("surf");
    assert!((got / want - 1.0).abs() < 0.02, "surf: {got} vs {want}");
}

#[test]
fn single_job_matches_the_default_execution() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    let o = lossforge(&["simulate", "--truth", &fixture("truth.json"), "--out", &out_arg(&sim)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (seq, par) = (tmp.path().join("seq"), tmp.path().join("par"));
    assert_eq!(code(&lossforge(&["power-sweep", &out_arg(&sim), "--jobs", "1", "--out", &out_arg(&seq)])), 0);
    assert_eq!(code(&lossforge(&["power-sweep", &out_arg(&sim), "--out", &out_arg(&par)])), 0);
    for name in ["sweeps.json", "points.csv", "tls.csv", "modes.csv"] {
        assert!(fs::read(seq.join(name)).unwrap() == fs::read(par.join(name)).unwrap(), "{name} differs");
    }
}
