use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn surrogacy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surrogacy"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

const SCENARIO: &str = r#"
n_trials = 5
subjects_per_trial = 300
theta_true = 4.0
trial_level_r2_true = 0.8
weibull_shape = 1.1
weibull_scale = 20.0
logistic_baseline = 0.0
surrogate_effect = { mean = 0.5, sd = 0.8 }
true_effect = { mean = -0.3, sd = 0.5 }
admin_censoring = 30.0
seed = 5
"#;

fn simulated(dir: &Path) -> String {
    let scenario = dir.join("scenario.toml");
    fs::write(&scenario, SCENARIO).unwrap();
    let sim = dir.join("sim");
    let out = surrogacy(&[
        "simulate",
        "--config",
        scenario.to_str().unwrap(),
        "--replicates",
        "200",
        "--out",
        sim.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out));
    sim.join("analysis.toml").to_str().unwrap().to_string()
}

/// Exponential curve with a matching at-risk table, readable as digitized
/// input.
fn curve_csv(rate: f64) -> String {
    let mut s = String::from("time,survival,risk_time,n_at_risk\n");
    for k in 0..=30 {
        let t = k as f64;
        let surv = (-rate * t).exp();
        if k % 6 == 0 {
            let n = (100.0 * surv * (1.0 - t / 60.0)).round();
            s.push_str(&format!("{t},{surv},{t},{n}\n"));
        } else {
            s.push_str(&format!("{t},{surv},,\n"));
        }
    }
    s
}

fn curve_config(dir: &Path) -> String {
    let mut cfg = String::from(
        "indication = \"DEMO\"\n[bootstrap]\nseed = 1\n[output]\ndir = \"out\"\n\n[[trials]]\nid = \"T1\"\nmrd_measure_time = 9.0\nsensitivity_label = \"1e-5\"\n",
    );
    for (name, rate) in [
        ("experimental_negative", 0.02),
        ("experimental_positive", 0.06),
        ("control_negative", 0.03),
        ("control_positive", 0.08),
    ] {
        fs::write(dir.join(format!("{name}.csv")), curve_csv(rate)).unwrap();
        cfg.push_str(&format!("[trials.strata.{name}]\ncurve = \"{name}.csv\"\n"));
    }
    let path = dir.join("curves.toml");
    fs::write(&path, cfg).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_then_analyze_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = simulated(dir.path());
    let out_dir = dir.path().join("report");
    let out = surrogacy(&["analyze", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("R2_Copula"));
    assert!(stdout.contains("Bivariate Plackett Copula Global OR"));
    for f in ["report.json", "report.txt", "effects.csv", "scatter_sample_size.svg"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn analyze_is_reproducible_and_honours_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = simulated(dir.path());
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = surrogacy(&[
            "analyze",
            "--config",
            &config,
            "--seed",
            "42",
            "--replicates",
            "300",
            "--exclude-trial",
            "SIM001",
            "--exclude-trial",
            "SIM003",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", text(&out));
        fs::read_to_string(out_dir.join("report.json")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    assert!(a.contains("\"seed\": 42"));
    assert!(a.contains("\"replicates\": 300"));
    assert!(a.contains("\"n_trials\": 3"));
    assert!(a.contains("SIM001") && a.contains("SIM003"));
}

#[test]
fn reconstruct_and_validate_curves() {
    let dir = tempfile::tempdir().unwrap();
    let config = curve_config(dir.path());
    let out_dir = dir.path().join("rec");
    let out = surrogacy(&["reconstruct", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out));
    let ipd = fs::read_to_string(out_dir.join("ipd.csv")).unwrap();
    assert_eq!(ipd.lines().next().unwrap(), "trial_id,arm,mrd_status,time,event");
    assert_eq!(ipd.lines().count(), 401);

    let out = surrogacy(&["validate", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("T1 ")).count(), 4);
    assert!(out_dir.join("reconstruction_qc.json").exists());
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = surrogacy(&["analyze", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "indication = \"X\"\nunknown_key = 3\n").unwrap();
    let out = surrogacy(&["analyze", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out));

    let out = surrogacy(&["analyze"]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = curve_config(dir.path());
    fs::write(dir.path().join("control_positive.csv"), "time,survival\n0,1\n5,abc\n").unwrap();
    let out = surrogacy(&["analyze", "--config", &config]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    assert!(text(&out).contains("T1"));
}

#[test]
fn separation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut ipd = String::from("trial_id,arm,mrd_status,time,event\n");
    for i in 0..40 {
        let arm = if i % 2 == 0 { "experimental" } else { "control" };
        let status = if i % 4 < 2 { "negative" } else { "positive" };
        // Every event is in the control arm.
        let event = u8::from(arm == "control");
        ipd.push_str(&format!("S1,{arm},{status},{},{event}\n", 1.0 + i as f64));
    }
    fs::write(dir.path().join("ipd.csv"), ipd).unwrap();
    let cfg = "indication = \"X\"\n[bootstrap]\nseed = 1\n[output]\ndir = \"out\"\n[[trials]]\nid = \"S1\"\nmrd_measure_time = 1.0\nsensitivity_label = \"x\"\nipd = \"ipd.csv\"\n";
    let path = dir.path().join("a.toml");
    fs::write(&path, cfg).unwrap();
    let out = surrogacy(&["analyze", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out));
}
