use dsse_core::distributions::presets;
use dsse_core::estimator::{Measurement, MeasurementKind, MeasurementSet, MeasurementTarget};
use dsse_core::netmodel::load_network;
use dsse_core::powerflow::{solve_power_flow, PfOptions, PfSpec};
use dsse_core::{Phase, UncertaintyModel};
use num_complex::Complex64;
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::Command;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

fn dsse(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dsse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn parse_stdout(out: &std::process::Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("valid JSON on stdout")
}

#[test]
fn pf_solves_and_reports_the_state() {
    let dir = tempfile::tempdir().unwrap();
    let setpoints = dir.path().join("setpoints.json");
    std::fs::write(
        &setpoints,
        r#"{"setpoints": [
            {"device": "load1", "phase": "a", "p_kw": 0.4, "q_kvar": 0.13},
            {"device": "load1", "phase": "b", "p_kw": 0.4, "q_kvar": 0.13},
            {"device": "load1", "phase": "c", "p_kw": 0.4, "q_kvar": 0.13}
        ]}"#,
    )
    .unwrap();
    let net_path = fixture("two_bus.json");
    let out = dsse(&[
        "pf",
        "--network",
        net_path.to_str().unwrap(),
        "--setpoints",
        setpoints.to_str().unwrap(),
    ]);
    let json = parse_stdout(&out);
    assert!(json["mismatch"].as_f64().unwrap() < 1e-9);
    let voltages = json["state"]["voltages"].as_array().unwrap();
    assert_eq!(voltages.len(), 6);

    // Cross-check one magnitude against a direct library solve.
    let net = load_network(&net_path).unwrap();
    let mut spec = PfSpec::new(&net);
    for p in [Phase::A, Phase::B, Phase::C] {
        spec.set_kw(&net, "load1", p, 0.4, 0.13).unwrap();
    }
    let truth = solve_power_flow(&net, &spec, &PfOptions::default()).unwrap();
    let want = truth.state.voltage(&net, "b2", Phase::A).unwrap().norm();
    let got = voltages
        .iter()
        .find(|v| v["bus"] == "b2" && v["phase"] == "a")
        .unwrap()["u_mag_pu"]
        .as_f64()
        .unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn se_recovers_a_noise_free_state() {
    let net_path = fixture("two_bus.json");
    let net = load_network(&net_path).unwrap();
    let mut spec = PfSpec::new(&net);
    for p in [Phase::A, Phase::B, Phase::C] {
        spec.set_pu(&net, "load1", p, Complex64::new(0.04, 0.013))
            .unwrap();
    }
    let truth = solve_power_flow(&net, &spec, &PfOptions::default())
        .unwrap()
        .state;
    let mut set = MeasurementSet::default();
    for phase in [Phase::A, Phase::B, Phase::C] {
        let u = truth.voltage(&net, "b2", phase).unwrap().norm();
        set.push(Measurement {
            target: MeasurementTarget::VoltageMagnitude {
                bus: "b2".into(),
                phase,
            },
            kind: MeasurementKind::Real,
            model: UncertaintyModel::gaussian(u * 230.0, 0.38).unwrap(),
        });
        set.push(Measurement {
            target: MeasurementTarget::DeviceActivePower {
                device: "load1".into(),
                phase,
            },
            kind: MeasurementKind::Real,
            model: UncertaintyModel::gaussian(0.4, 0.01).unwrap(),
        });
        set.push(Measurement {
            target: MeasurementTarget::DeviceReactivePower {
                device: "load1".into(),
                phase,
            },
            kind: MeasurementKind::Real,
            model: UncertaintyModel::gaussian(0.13, 0.01).unwrap(),
        });
    }
    let dir = tempfile::tempdir().unwrap();
    let meas_path = dir.path().join("measurements.json");
    std::fs::write(&meas_path, serde_json::to_string_pretty(&set).unwrap()).unwrap();
    let out_path = dir.path().join("result.json");
    let out = dsse(&[
        "se",
        "--network",
        net_path.to_str().unwrap(),
        "--measurements",
        meas_path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let json: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(json["status"], "optimal");
    let want = truth.voltage(&net, "b2", Phase::B).unwrap().norm();
    let got = json["state"]["voltages"]
        .as_array()
        .unwrap()
        .iter()
        .find(|v| v["bus"] == "b2" && v["phase"] == "b")
        .unwrap()["u_mag_pu"]
        .as_f64()
        .unwrap();
    assert!((got - want).abs() < 1e-7, "{got} vs {want}");
}

fn sweep_config_json(net_path: &Path) -> String {
    let profiles: Vec<String> = (1..=10)
        .map(|k| format!("\"load{k}\": 0.5"))
        .collect();
    format!(
        r#"{{
        "network": "{}",
        "original": {{"type": "beta4", "alpha": 1.6339, "beta": 20.9022,
                       "xmin": -0.1, "xmax": 8.268}},
        "models": ["exact", "ga"],
        "reactive": {{"mode": "independent", "k1": 0.3287}},
        "ratios": [0.3],
        "runs": 2,
        "seed": 11,
        "profiles": {{ {} }}
    }}"#,
        net_path.display(),
        profiles.join(", ")
    )
}

#[test]
fn mc_writes_the_contract_csv_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("sweep.json");
    std::fs::write(&cfg_path, sweep_config_json(&fixture("feeder30.json"))).unwrap();
    let csv_a = dir.path().join("a.csv");
    let csv_b = dir.path().join("b.csv");
    let csv_c = dir.path().join("c.csv");
    for (csv, seed) in [(&csv_a, None), (&csv_b, None), (&csv_c, Some("99"))] {
        let mut args = vec![
            "mc".to_string(),
            "--config".into(),
            cfg_path.display().to_string(),
            "--out".into(),
            csv.display().to_string(),
            "--workers".into(),
            "2".into(),
        ];
        if let Some(seed) = seed {
            args.push("--seed".into());
            args.push(seed.into());
        }
        let out = Command::new(env!("CARGO_BIN_EXE_dsse"))
            .args(&args)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        // The summary table goes to stdout.
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(stdout.contains("med_du_avg_pu"), "summary missing: {stdout}");
    }
    let a = std::fs::read_to_string(&csv_a).unwrap();
    let b = std::fs::read_to_string(&csv_b).unwrap();
    let c = std::fs::read_to_string(&csv_c).unwrap();
    assert_eq!(
        a.lines().next().unwrap(),
        "ratio,run,model,du_avg_pu,du_max_pu,dpt_a_kw,dpt_b_kw,dpt_c_kw,status,solve_time_s"
    );
    assert_eq!(a.lines().count(), 1 + 2 * 2);
    // Everything but the wall-clock column is deterministic.
    let strip_time = |text: &str| {
        text.lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(
        strip_time(&a),
        strip_time(&b),
        "same seed must reproduce the same records"
    );
    assert_ne!(
        strip_time(&a),
        strip_time(&c),
        "a different seed must change the records"
    );
    for line in a.lines().skip(1) {
        assert!(line.contains(",optimal,"), "unconverged run: {line}");
    }
}

#[test]
fn dist_fits_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let beta_path = dir.path().join("beta.json");
    std::fs::write(
        &beta_path,
        serde_json::to_string(&presets::beta_demand()).unwrap(),
    )
    .unwrap();
    let out = dsse(&["dist", "ga", "--model", beta_path.to_str().unwrap()]);
    let json = parse_stdout(&out);
    assert_eq!(json["type"], "gaussian");
    // Analytic moments of the four-parameter beta.
    assert!((json["mu"].as_f64().unwrap() - 0.506692160577917).abs() < 1e-12);
    assert!((json["sigma"].as_f64().unwrap() - 0.447285063761117).abs() < 1e-12);

    let beta_gmm_path = dir.path().join("beta_gmm.json");
    std::fs::write(
        &beta_gmm_path,
        serde_json::to_string(&presets::beta_demand_gmm()).unwrap(),
    )
    .unwrap();
    let out = dsse(&["dist", "ga", "--model", beta_gmm_path.to_str().unwrap()]);
    let json = parse_stdout(&out);
    // Mixture mean is the weight-averaged component mean.
    assert!((json["mu"].as_f64().unwrap() - 0.505296).abs() < 1e-9);

    let gmm_path = dir.path().join("gmm.json");
    std::fs::write(
        &gmm_path,
        serde_json::to_string(&presets::bimodal_gmm_demand()).unwrap(),
    )
    .unwrap();
    let out = dsse(&["dist", "ge", "--model", gmm_path.to_str().unwrap()]);
    let json = parse_stdout(&out);
    assert!((json["mu"].as_f64().unwrap() - 6.0).abs() < 1e-12);
    assert!((json["sigma"].as_f64().unwrap() - 0.70).abs() < 1e-12);

    // Collapsing every component reproduces the full moment fit.
    let out = dsse(&[
        "dist",
        "ge",
        "--model",
        gmm_path.to_str().unwrap(),
        "--components",
        "0,1",
    ]);
    let json = parse_stdout(&out);
    assert!((json["mu"].as_f64().unwrap() - 4.62).abs() < 0.01);
}

#[test]
fn missing_inputs_fail_with_a_message() {
    let out = dsse(&[
        "pf",
        "--network",
        "/nonexistent/net.json",
        "--setpoints",
        "/nonexistent/sp.json",
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nonexistent"), "stderr: {stderr}");
}
