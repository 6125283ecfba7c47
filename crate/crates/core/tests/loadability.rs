use dsse_core::netmodel::{load_network, Phase};
use dsse_core::powerflow::{solve_power_flow, PfOptions, PfSpec};

#[test]
fn loadability_probe() {
    let net = load_network(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/fixtures/feeder30.json"
    ))
    .unwrap();
    for per_phase_kw in [3.0f64, 4.0, 4.5, 5.0, 5.5, 6.0, 7.0, 8.0, 9.0] {
        let mut spec = PfSpec::new(&net);
        for dev in &net.devices {
            if dev.id.starts_with("load") {
                for ph in dev.phases.iter() {
                    spec.set_kw(&net, &dev.id, ph, per_phase_kw, per_phase_kw * 0.3287)
                        .unwrap();
                }
            }
        }
        let total = per_phase_kw * 30.0;
        match solve_power_flow(&net, &spec, &PfOptions::default()) {
            Ok(r) => {
                let umin = r
                    .state
                    .u
                    .iter()
                    .map(|u| u.norm())
                    .fold(f64::INFINITY, f64::min);
                println!(
                    "{total:6.1} kW total: converged, |U|min = {umin:.4} pu, iters {}",
                    r.iterations
                );
            }
            Err(e) => println!("{total:6.1} kW total: FAILED ({e})"),
        }
    }
}
