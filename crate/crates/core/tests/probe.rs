use dsse_core::distributions::presets;
use dsse_core::estimator::estimate;
use dsse_core::harness::{
    generate_scenario, metrics, Approximations, ModelChoice, ReactiveModel, SweepConfig,
};
use dsse_core::netmodel::{load_network, DeviceKind, Phase};

#[test]
fn probe_pseudo_recovery() {
    let net = load_network(format!(
        "{}/fixtures/feeder30.json",
        env!("CARGO_MANIFEST_DIR")
    ))
    .unwrap();
    let mut profiles = std::collections::BTreeMap::new();
    for (id, kw) in [
        ("load1", 0.35),
        ("load2", 0.62),
        ("load3", 0.48),
        ("load4", 0.71),
        ("load5", 0.55),
        ("load6", 0.29),
        ("load7", 0.66),
        ("load8", 0.44),
        ("load9", 0.58),
        ("load10", 0.39),
    ] {
        profiles.insert(id.to_string(), kw);
    }
    let cfg = SweepConfig {
        network: "unused".into(),
        original: presets::beta_demand(),
        models: vec![ModelChoice::Exact, ModelChoice::Gmm, ModelChoice::Ga],
        approximations: Approximations {
            gmm: Some(presets::beta_demand_gmm()),
            ge: Some(presets::beta_demand_ge()),
            ga: None,
        },
        reactive: ReactiveModel::Independent {
            k1: 0.32868410517886303,
        },
        sm_voltage_sigma_v: 0.38,
        sm_power_sigma_fraction: 0.01,
        sm_power_sigma_kw: None,
        ratios: vec![0.9],
        runs: 3,
        seed: 20240817,
        profiles,
        estimator: Default::default(),
        du_avg_per_bus_phase: false,
    };
    let kw = |pu: f64| pu * net.s_base_va / 1e3;
    for run in 0..3 {
        println!("######## run {run}");
        for choice in [ModelChoice::Exact, ModelChoice::Gmm, ModelChoice::Ga] {
            let sc = generate_scenario(&net, &cfg, choice, 0.9, 0, run).unwrap();
            let res = estimate(&net, &sc.measurements, &sc.estimator).unwrap();
            let m = metrics(&net, &sc.truth, &res.state, false);
            println!(
                "== lane {:?}: status {:?} iters {} du_avg {:.4e} du_max {:.4e}",
                choice, res.status, res.iterations, m.du_avg_pu, m.du_max_pu
            );
            let sm: Vec<&str> = net
                .devices
                .iter()
                .filter(|d| {
                    d.kind == DeviceKind::Load && !sc.pseudo_devices.contains(&d.id)
                })
                .map(|d| d.id.as_str())
                .collect();
            println!("  sm devices: {:?}", sm);
            for ph in [Phase::A, Phase::B, Phase::C] {
                let mut sum_t = 0.0;
                let mut sum_e = 0.0;
                for dev in &net.devices {
                    if dev.kind != DeviceKind::Load || !sc.pseudo_devices.contains(&dev.id)
                    {
                        continue;
                    }
                    let t = sc.truth.device_power(&net, &dev.id, ph).unwrap();
                    let e = res.state.device_power(&net, &dev.id, ph).unwrap();
                    sum_t += kw(t.re);
                    sum_e += kw(e.re);
                }
                println!(
                    "  phase {:?}: pseudo aggregate truth {:.3} kW est {:.3} kW",
                    ph, sum_t, sum_e
                );
            }
        }
    }
}
