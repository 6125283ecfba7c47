//! Command-line frontend: power flow, state estimation, Monte-Carlo
//! sweeps, and distribution fitting over the JSON formats documented in
//! the repository README.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dsse_core::distributions::{ga_fit, ge_reduce};
use dsse_core::estimator::{estimate, load_estimator_config, load_measurements, EstimatorConfig};
use dsse_core::harness::{load_sweep_config, run_monte_carlo, write_csv, SummaryRow};
use dsse_core::netmodel::load_network;
use dsse_core::nlp::NlpStatus;
use dsse_core::powerflow::{solve_power_flow, PfOptions, PfSpec};
use dsse_core::{Network, Phase, StateSolution, UncertaintyModel};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "dsse",
    version,
    about = "Distribution system state estimation with arbitrary smooth error models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a three-phase power flow for fixed device setpoints.
    Pf {
        /// Network JSON file.
        #[arg(long)]
        network: PathBuf,
        /// Setpoint JSON file: {"setpoints": [{device, phase, p_kw, q_kvar}]}.
        #[arg(long)]
        setpoints: PathBuf,
        /// Write the result here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the network state from a measurement file.
    Se {
        /// Network JSON file.
        #[arg(long)]
        network: PathBuf,
        /// Measurement JSON file.
        #[arg(long)]
        measurements: PathBuf,
        /// Estimator configuration JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the result here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo sweep over pseudo-measurement ratios.
    Mc {
        /// Sweep configuration JSON.
        #[arg(long)]
        config: PathBuf,
        /// Destination CSV for per-run records.
        #[arg(long)]
        out: PathBuf,
        /// Override the seed in the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Gaussian approximations of a distribution JSON.
    Dist {
        #[command(subcommand)]
        op: DistOp,
    },
}

#[derive(Subcommand)]
enum DistOp {
    /// Single-gaussian moment fit of any supported distribution.
    Ga {
        /// Distribution JSON file.
        #[arg(long)]
        model: PathBuf,
    },
    /// Collapse mixture components into one moment-matched gaussian.
    Ge {
        /// Mixture distribution JSON file.
        #[arg(long)]
        model: PathBuf,
        /// Component indices to collapse; the largest-weight component
        /// when omitted.
        #[arg(long, value_delimiter = ',')]
        components: Option<Vec<usize>>,
    },
}

#[derive(Debug, Deserialize)]
struct SetpointFile {
    setpoints: Vec<Setpoint>,
}

#[derive(Debug, Deserialize)]
struct Setpoint {
    device: String,
    phase: Phase,
    p_kw: f64,
    q_kvar: f64,
}

#[derive(Serialize)]
struct VoltageJson {
    bus: String,
    phase: Phase,
    u_re_pu: f64,
    u_im_pu: f64,
    u_mag_pu: f64,
}

#[derive(Serialize)]
struct PowerJson {
    device: String,
    phase: Phase,
    p_kw: f64,
    q_kvar: f64,
}

#[derive(Serialize)]
struct StateJson {
    voltages: Vec<VoltageJson>,
    powers: Vec<PowerJson>,
}

#[derive(Serialize)]
struct PfJson {
    state: StateJson,
    iterations: usize,
    mismatch: f64,
}

#[derive(Serialize)]
struct SeJson {
    state: StateJson,
    objective: f64,
    penalties: Vec<f64>,
    status: &'static str,
    iterations: usize,
    solve_time_s: f64,
    stat_err: f64,
    feas_err: f64,
}

fn state_json(net: &Network, state: &StateSolution) -> StateJson {
    let voltages = net
        .bus_phases()
        .iter()
        .enumerate()
        .map(|(bp, &(bus, phase))| VoltageJson {
            bus: net.buses[bus].id.clone(),
            phase,
            u_re_pu: state.u[bp].re,
            u_im_pu: state.u[bp].im,
            u_mag_pu: state.u[bp].norm(),
        })
        .collect();
    let powers = net
        .device_phases()
        .iter()
        .enumerate()
        .map(|(dp, &(dev, phase))| PowerJson {
            device: net.devices[dev].id.clone(),
            phase,
            p_kw: state.s[dp].re * net.s_base_va / 1e3,
            q_kvar: state.s[dp].im * net.s_base_va / 1e3,
        })
        .collect();
    StateJson { voltages, powers }
}

fn status_str(status: NlpStatus) -> &'static str {
    match status {
        NlpStatus::Optimal => "optimal",
        NlpStatus::MaxIterations => "max_iterations",
        NlpStatus::NumericalFailure => "numerical_failure",
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn read_model(path: &Path) -> Result<UncertaintyModel> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)
        .with_context(|| format!("parsing distribution {}", path.display()))?)
}

fn run_pf(network: &Path, setpoints: &Path, out: Option<&Path>) -> Result<()> {
    let net = load_network(network).with_context(|| format!("loading {}", network.display()))?;
    let text = std::fs::read_to_string(setpoints)
        .with_context(|| format!("reading {}", setpoints.display()))?;
    let file: SetpointFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing setpoints {}", setpoints.display()))?;
    let mut spec = PfSpec::new(&net);
    for sp in &file.setpoints {
        spec.set_kw(&net, &sp.device, sp.phase, sp.p_kw, sp.q_kvar)
            .with_context(|| format!("setpoint for {} phase {:?}", sp.device, sp.phase))?;
    }
    let pf = solve_power_flow(&net, &spec, &PfOptions::default())?;
    emit(
        &PfJson {
            state: state_json(&net, &pf.state),
            iterations: pf.iterations,
            mismatch: pf.mismatch,
        },
        out,
    )
}

fn run_se(
    network: &Path,
    measurements: &Path,
    config: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let net = load_network(network).with_context(|| format!("loading {}", network.display()))?;
    let set = load_measurements(measurements)
        .with_context(|| format!("loading {}", measurements.display()))?;
    let cfg = match config {
        Some(path) => {
            load_estimator_config(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => EstimatorConfig::default(),
    };
    let se = estimate(&net, &set, &cfg)?;
    emit(
        &SeJson {
            state: state_json(&net, &se.state),
            objective: se.objective,
            penalties: se.rho.clone(),
            status: status_str(se.status),
            iterations: se.iterations,
            solve_time_s: se.solve_time_s,
            stat_err: se.stat_err,
            feas_err: se.feas_err,
        },
        out,
    )
}

fn summary_table(rows: &[SummaryRow]) -> String {
    let mut s = String::from(
        "ratio  model  runs  optimal  med_du_avg_pu  p90_du_avg_pu  med_du_max_pu  med_solve_s\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{:5.2}  {:5}  {:4}  {:7}  {:13.4e}  {:13.4e}  {:13.4e}  {:11.4}\n",
            r.ratio,
            r.model.as_str(),
            r.runs,
            r.optimal,
            r.median_du_avg_pu,
            r.p90_du_avg_pu,
            r.median_du_max_pu,
            r.median_solve_time_s,
        ));
    }
    s
}

fn run_mc(config: &Path, out: &Path, seed: Option<u64>, workers: Option<usize>) -> Result<()> {
    let mut cfg =
        load_sweep_config(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let net = load_network(&cfg.network)
        .with_context(|| format!("loading {}", cfg.network.display()))?;
    let result = run_monte_carlo(&net, &cfg, workers)?;
    let mut buf = Vec::new();
    write_csv(&result.records, &mut buf)?;
    std::fs::write(out, &buf).with_context(|| format!("writing {}", out.display()))?;
    print!("{}", summary_table(&result.summary));
    Ok(())
}

fn run_dist(op: &DistOp) -> Result<()> {
    let fitted = match op {
        DistOp::Ga { model } => {
            let model = read_model(model)?;
            let g = ga_fit(&model);
            UncertaintyModel::gaussian(g.mu(), g.sigma())?
        }
        DistOp::Ge { model, components } => {
            let model = read_model(model)?;
            let UncertaintyModel::Gmm(gmm) = &model else {
                bail!("ge needs a mixture distribution");
            };
            let selection = match components {
                Some(sel) => sel.clone(),
                None => vec![gmm.dominant_component()],
            };
            let g = ge_reduce(gmm, &selection)?;
            UncertaintyModel::gaussian(g.mu(), g.sigma())?
        }
    };
    emit(&fitted, None)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Pf {
            network,
            setpoints,
            out,
        } => run_pf(network, setpoints, out.as_deref()),
        Command::Se {
            network,
            measurements,
            config,
            out,
        } => run_se(network, measurements, config.as_deref(), out.as_deref()),
        Command::Mc {
            config,
            out,
            seed,
            workers,
        } => run_mc(config, out, *seed, *workers),
        Command::Dist { op } => run_dist(op),
    }
}
