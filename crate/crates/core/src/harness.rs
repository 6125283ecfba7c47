//! Monte-Carlo evaluation pipeline: split the users of a feeder into
//! monitored and forecast-only groups, build the true operating point,
//! attach noisy smart-meter readings and forecast densities, estimate,
//! and score the estimate against the power-flow truth.
//!
//! A sweep is a pure function of its configuration and seed. Every
//! (ratio, run) pair owns an independent rng stream, so scenarios do not
//! depend on the uncertainty model under test, on the worker count, or
//! on execution order; the competing models are scored on identical
//! scenarios.

use crate::distributions::{ga_fit, ge_reduce, DistributionError, UncertaintyModel};
use crate::estimator::{
    estimate, ConstantPowerFactor, EstimatorConfig, EstimatorError, Measurement, MeasurementKind,
    MeasurementSet, MeasurementTarget,
};
use crate::netmodel::{DeviceKind, NetModelError, Network, Phase};
use crate::nlp::NlpStatus;
use crate::powerflow::{solve_power_flow, PfOptions, PfSpec, PowerFlowError, StateSolution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("failed to read sweep config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to parse sweep config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("network error: {0}")]
    Network(#[from] NetModelError),
    #[error("ratio {0} outside [0, 1)")]
    RatioOutOfRange(f64),
    #[error("runs must be at least 1")]
    NoRuns,
    #[error("no uncertainty models selected")]
    NoModels,
    #[error("model list contains {0:?} twice")]
    DuplicateModel(ModelChoice),
    #[error("model {0:?} needs an explicit entry in approximations")]
    MissingApproximation(ModelChoice),
    #[error("approximation for {0:?} must be a plain gaussian")]
    NotGaussian(ModelChoice),
    #[error("load {0} has no profile entry")]
    MissingProfile(String),
    #[error("profile entry {0} does not name a load")]
    UnknownProfile(String),
    #[error("sigma values must be positive and finite")]
    BadSigma,
    #[error("reactive scale must be positive and finite")]
    BadReactiveScale,
    #[error("distribution error: {0}")]
    Distribution(#[from] DistributionError),
    #[error("power flow failed for ratio {ratio} run {run}: {source}")]
    PowerFlow {
        ratio: f64,
        run: usize,
        source: PowerFlowError,
    },
    #[error("estimator setup failed: {0}")]
    Estimator(#[from] EstimatorError),
    #[error("scenario setup failed: {0}")]
    Setup(#[from] PowerFlowError),
}

/// Which stand-in for the original forecast density a sweep lane uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    /// The original density itself.
    Exact,
    /// Mixture-of-Gaussians stand-in.
    Gmm,
    /// Single Gaussian built from selected mixture components.
    Ge,
    /// Single Gaussian moment fit of the original.
    Ga,
}

impl ModelChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelChoice::Exact => "exact",
            ModelChoice::Gmm => "gmm",
            ModelChoice::Ge => "ge",
            ModelChoice::Ga => "ga",
        }
    }
}

impl std::fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Optional explicit stand-ins; anything omitted is derived where a
/// derivation exists (`ga` by moment fit, `ge` by collapsing the dominant
/// mixture component) and rejected otherwise.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Approximations {
    pub gmm: Option<UncertaintyModel>,
    pub ge: Option<UncertaintyModel>,
    pub ga: Option<UncertaintyModel>,
}

/// How reactive power of forecast-only users is treated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ReactiveModel {
    /// Q has its own density: the active-power density rescaled by `k1`,
    /// sampled independently of P.
    Independent { k1: f64 },
    /// Q is tied to P through the equality Q = k2 P; forecast-only users
    /// carry no reactive measurement at all.
    ConstantPf { k2: f64 },
}

/// Full description of one Monte-Carlo sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Network file, resolved by the caller (relative paths are taken
    /// relative to the config file location by [`load_sweep_config`]).
    pub network: PathBuf,
    /// The density the truth is sampled from, in kW.
    pub original: UncertaintyModel,
    /// Sweep lanes; each gets the same scenarios.
    pub models: Vec<ModelChoice>,
    #[serde(default)]
    pub approximations: Approximations,
    pub reactive: ReactiveModel,
    /// Smart-meter voltage noise, volts.
    #[serde(default = "default_voltage_sigma")]
    pub sm_voltage_sigma_v: f64,
    /// Smart-meter power noise as a fraction of the moment-fit sigma of
    /// the original density.
    #[serde(default = "default_power_fraction")]
    pub sm_power_sigma_fraction: f64,
    /// Explicit smart-meter power noise in kW; overrides the fraction.
    #[serde(default)]
    pub sm_power_sigma_kw: Option<f64>,
    /// Fractions of users that are forecast-only.
    pub ratios: Vec<f64>,
    pub runs: usize,
    pub seed: u64,
    /// Metered demand per load in kW, applied to each phase of the load.
    pub profiles: BTreeMap<String, f64>,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    /// Divide the average voltage error by the bus-phase count instead of
    /// the bus count.
    #[serde(default)]
    pub du_avg_per_bus_phase: bool,
}

fn default_voltage_sigma() -> f64 {
    0.38
}

fn default_power_fraction() -> f64 {
    0.01
}

pub fn load_sweep_config(path: impl AsRef<Path>) -> Result<SweepConfig, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg: SweepConfig = serde_json::from_str(&text)?;
    if cfg.network.is_relative() {
        if let Some(dir) = path.parent() {
            cfg.network = dir.join(&cfg.network);
        }
    }
    Ok(cfg)
}

/// Outcome of one estimation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Optimal,
    MaxIterations,
    NumericalFailure,
    /// Scenario generation or problem setup failed; metrics are NaN.
    Error,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Optimal => "optimal",
            RunStatus::MaxIterations => "max_iterations",
            RunStatus::NumericalFailure => "numerical_failure",
            RunStatus::Error => "error",
        }
    }
}

/// One scored estimation run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub ratio: f64,
    pub run: usize,
    pub model: ModelChoice,
    pub du_avg_pu: f64,
    pub du_max_pu: f64,
    /// Head-branch active-power error per phase a/b/c, kW.
    pub dpt_kw: [f64; 3],
    pub status: RunStatus,
    pub solve_time_s: f64,
}

/// Median and spread per (ratio, model) cell, over runs that produced a
/// state (status other than error); `optimal` counts fully converged runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub ratio: f64,
    pub model: ModelChoice,
    pub runs: usize,
    pub optimal: usize,
    pub median_du_avg_pu: f64,
    pub p10_du_avg_pu: f64,
    pub p90_du_avg_pu: f64,
    pub median_du_max_pu: f64,
    pub median_dpt_kw: [f64; 3],
    pub median_solve_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct McResult {
    pub records: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
}

/// Voltage and head-branch power distances between two states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub du_avg_pu: f64,
    pub du_max_pu: f64,
    pub dpt_kw: [f64; 3],
}

/// Scores an estimate against the reference state. The average voltage
/// error sums |U| differences over every bus-phase and divides by the bus
/// count (or the bus-phase count when `per_bus_phase` is set); the power
/// error compares active flows into the branches that leave the reference
/// bus, per phase, in kW.
pub fn metrics(
    net: &Network,
    reference: &StateSolution,
    estimate: &StateSolution,
    per_bus_phase: bool,
) -> Metrics {
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for bp in 0..net.bus_phases().len() {
        let d = (reference.u[bp].norm() - estimate.u[bp].norm()).abs();
        sum += d;
        max = max.max(d);
    }
    let denom = if per_bus_phase {
        net.bus_phases().len() as f64
    } else {
        net.buses.len() as f64
    };
    let dpt = head_active_flow_kw(net, reference)
        .iter()
        .zip(head_active_flow_kw(net, estimate))
        .map(|(a, b)| (a - b).abs())
        .collect::<Vec<f64>>();
    Metrics {
        du_avg_pu: sum / denom,
        du_max_pu: max,
        dpt_kw: [dpt[0], dpt[1], dpt[2]],
    }
}

/// Active power flowing from the reference bus into its branches, per
/// phase a/b/c in kW; phases missing at the head come out as zero.
fn head_active_flow_kw(net: &Network, state: &StateSolution) -> [f64; 3] {
    let eq = crate::powerflow::FlowEquations::new(net).expect("network was validated");
    let flows = eq.branch_flows(state);
    let r = net.reference_bus().expect("network has a reference bus");
    let mut out = [0.0; 3];
    for (b, flow) in flows.iter().enumerate() {
        let (from, to) = net.branch_end_indices(b);
        let side = if from == r {
            &flow.s_from
        } else if to == r {
            &flow.s_to
        } else {
            continue;
        };
        for (k, phase) in flow.phases.iter().enumerate() {
            let slot = Phase::ALL.iter().position(|p| p == phase).unwrap();
            out[slot] += side[k].re * net.s_base_va / 1e3;
        }
    }
    out
}

/// One concrete experiment: truth, the measurement set a lane sees, and
/// the estimator configuration that goes with it.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub truth: StateSolution,
    pub pseudo_devices: Vec<String>,
    pub measurements: MeasurementSet,
    pub estimator: EstimatorConfig,
}

/// Everything random about a scenario, fixed before any model is chosen:
/// the forecast-only subset, the sampled true powers, and the noisy
/// smart-meter readings.
struct ScenarioCore {
    /// Per device: forecast-only flag (always false for non-loads).
    pseudo: Vec<bool>,
    truth: StateSolution,
    /// Per device-phase of smart-metered loads: (z_p_kw, z_q_kvar, z_v_v).
    sm_readings: Vec<Option<(f64, f64, f64)>>,
}

struct ResolvedSweep {
    /// Per lane: choice and the active-power density in kW.
    lanes: Vec<(ModelChoice, UncertaintyModel)>,
    sm_power_sigma_kw: f64,
}

fn resolve(cfg: &SweepConfig, net: &Network) -> Result<ResolvedSweep, HarnessError> {
    for &ratio in &cfg.ratios {
        if !(0.0..1.0).contains(&ratio) || !ratio.is_finite() {
            return Err(HarnessError::RatioOutOfRange(ratio));
        }
    }
    if cfg.runs == 0 {
        return Err(HarnessError::NoRuns);
    }
    if cfg.models.is_empty() {
        return Err(HarnessError::NoModels);
    }
    for (k, &m) in cfg.models.iter().enumerate() {
        if cfg.models[..k].contains(&m) {
            return Err(HarnessError::DuplicateModel(m));
        }
    }
    if !cfg.sm_voltage_sigma_v.is_finite()
        || cfg.sm_voltage_sigma_v <= 0.0
        || !cfg.sm_power_sigma_fraction.is_finite()
        || cfg.sm_power_sigma_fraction <= 0.0
        || cfg.sm_power_sigma_kw.is_some_and(|s| !s.is_finite() || s <= 0.0)
    {
        return Err(HarnessError::BadSigma);
    }
    let k = match cfg.reactive {
        ReactiveModel::Independent { k1 } => k1,
        ReactiveModel::ConstantPf { k2 } => k2,
    };
    if !k.is_finite() || k <= 0.0 {
        return Err(HarnessError::BadReactiveScale);
    }
    for dev in &net.devices {
        if dev.kind == DeviceKind::Load && !cfg.profiles.contains_key(&dev.id) {
            return Err(HarnessError::MissingProfile(dev.id.clone()));
        }
    }
    for id in cfg.profiles.keys() {
        match net.device_idx(id) {
            Some(d) if net.devices[d].kind == DeviceKind::Load => {}
            _ => return Err(HarnessError::UnknownProfile(id.clone())),
        }
    }

    let ga = ga_fit(&cfg.original);
    let mut lanes = Vec::new();
    for &choice in &cfg.models {
        let model = match choice {
            ModelChoice::Exact => cfg.original.clone(),
            ModelChoice::Gmm => match &cfg.approximations.gmm {
                Some(m) => m.clone(),
                None => return Err(HarnessError::MissingApproximation(choice)),
            },
            ModelChoice::Ge => match &cfg.approximations.ge {
                Some(m) => {
                    if !m.is_gaussian() {
                        return Err(HarnessError::NotGaussian(choice));
                    }
                    m.clone()
                }
                None => {
                    let gmm = match &cfg.approximations.gmm {
                        Some(UncertaintyModel::Gmm(g)) => g,
                        _ => return Err(HarnessError::MissingApproximation(choice)),
                    };
                    let g = ge_reduce(gmm, &[gmm.dominant_component()])?;
                    UncertaintyModel::gaussian(g.mu(), g.sigma())?
                }
            },
            ModelChoice::Ga => match &cfg.approximations.ga {
                Some(m) => {
                    if !m.is_gaussian() {
                        return Err(HarnessError::NotGaussian(choice));
                    }
                    m.clone()
                }
                None => UncertaintyModel::gaussian(ga.mu(), ga.sigma())?,
            },
        };
        lanes.push((choice, model));
    }
    Ok(ResolvedSweep {
        lanes,
        sm_power_sigma_kw: cfg
            .sm_power_sigma_kw
            .unwrap_or(cfg.sm_power_sigma_fraction * ga.sigma()),
    })
}

/// The rng stream for one (ratio, run) cell. Streams are disjoint across
/// cells and shared by every model lane, which is what makes the lanes
/// comparable run by run.
fn cell_rng(seed: u64, ratio_idx: usize, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((ratio_idx as u64) << 32) | run as u64);
    rng
}

fn generate_core(
    net: &Network,
    cfg: &SweepConfig,
    resolved: &ResolvedSweep,
    ratio: f64,
    ratio_idx: usize,
    run: usize,
) -> Result<ScenarioCore, HarnessError> {
    let mut rng = cell_rng(cfg.seed, ratio_idx, run);
    let loads: Vec<usize> = (0..net.devices.len())
        .filter(|&d| net.devices[d].kind == DeviceKind::Load)
        .collect();
    let n_pseudo = (ratio * loads.len() as f64).round() as usize;
    let picked = rand::seq::index::sample(&mut rng, loads.len(), n_pseudo);
    let mut pseudo = vec![false; net.devices.len()];
    for k in picked.iter() {
        pseudo[loads[k]] = true;
    }

    let k_reactive = match cfg.reactive {
        ReactiveModel::Independent { k1 } => k1,
        ReactiveModel::ConstantPf { k2 } => k2,
    };
    let q_density = match cfg.reactive {
        ReactiveModel::Independent { k1 } => Some(cfg.original.rescale(k1)?),
        ReactiveModel::ConstantPf { .. } => None,
    };

    // True per-phase powers: forecast-only users draw from the original
    // density, metered users take their profile value. Reactive truth is
    // an independent draw under the independent model and k2 P under the
    // constant power factor.
    let mut spec = PfSpec::new(net);
    for &d in &loads {
        let dev = &net.devices[d];
        for phase in dev.phases.iter() {
            let p_kw = if pseudo[d] {
                cfg.original.sample(&mut rng)?
            } else {
                cfg.profiles[&dev.id]
            };
            let q_kvar = match &q_density {
                Some(qd) if pseudo[d] => qd.sample(&mut rng)?,
                _ => k_reactive * p_kw,
            };
            spec.set_kw(net, &dev.id, phase, p_kw, q_kvar)?;
        }
    }
    let truth = solve_power_flow(net, &spec, &PfOptions::default())
        .map_err(|source| HarnessError::PowerFlow { ratio, run, source })?
        .state;

    // Smart-meter readings: truth plus gaussian noise, drawn in device
    // order so the stream layout is independent of everything downstream.
    let v_noise = Normal::new(0.0, cfg.sm_voltage_sigma_v).expect("validated sigma");
    let p_noise = Normal::new(0.0, resolved.sm_power_sigma_kw).expect("validated sigma");
    let mut sm_readings = vec![None; net.device_phases().len()];
    for &d in &loads {
        if pseudo[d] {
            continue;
        }
        let dev = &net.devices[d];
        let bus = net.bus_idx(&dev.bus).expect("validated device bus");
        for phase in dev.phases.iter() {
            let dp = net.device_phase_idx(d, phase).expect("phase listed");
            let bp = net.bus_phase_idx(bus, phase).expect("device phase on bus");
            let s_kw = truth.s[dp] * net.s_base_va / 1e3;
            let v_v = truth.u[bp].norm() * net.buses[bus].base_voltage_v;
            sm_readings[dp] = Some((
                s_kw.re + p_noise.sample(&mut rng),
                s_kw.im + p_noise.sample(&mut rng),
                v_v + v_noise.sample(&mut rng),
            ));
        }
    }
    Ok(ScenarioCore {
        pseudo,
        truth,
        sm_readings,
    })
}

/// Builds the measurement set and estimator configuration one model lane
/// sees for a fixed scenario core. Gaussian stand-ins enter as plain
/// weighted-squares terms; everything else enters through its shifted
/// log-density.
fn lane_inputs(
    net: &Network,
    cfg: &SweepConfig,
    resolved: &ResolvedSweep,
    core: &ScenarioCore,
    model: &UncertaintyModel,
) -> Result<(MeasurementSet, EstimatorConfig), HarnessError> {
    let q_model = match cfg.reactive {
        ReactiveModel::Independent { k1 } => Some(model.rescale(k1)?),
        ReactiveModel::ConstantPf { .. } => None,
    };
    let mut set = MeasurementSet::default();
    let mut pseudo_ids = Vec::new();
    for (dp, &(d, phase)) in net.device_phases().iter().enumerate() {
        let dev = &net.devices[d];
        if dev.kind != DeviceKind::Load {
            continue;
        }
        if core.pseudo[d] {
            if !pseudo_ids.contains(&dev.id) {
                pseudo_ids.push(dev.id.clone());
            }
            let kind = if model.is_gaussian() {
                MeasurementKind::Real
            } else {
                MeasurementKind::Pseudo
            };
            set.push(Measurement {
                target: MeasurementTarget::DeviceActivePower {
                    device: dev.id.clone(),
                    phase,
                },
                kind,
                model: model.clone(),
            });
            if let Some(qm) = &q_model {
                set.push(Measurement {
                    target: MeasurementTarget::DeviceReactivePower {
                        device: dev.id.clone(),
                        phase,
                    },
                    kind,
                    model: qm.clone(),
                });
            }
        } else {
            let (z_p, z_q, z_v) = core.sm_readings[dp].expect("metered load has readings");
            set.push(Measurement {
                target: MeasurementTarget::VoltageMagnitude {
                    bus: dev.bus.clone(),
                    phase,
                },
                kind: MeasurementKind::Real,
                model: UncertaintyModel::gaussian(z_v, cfg.sm_voltage_sigma_v)?,
            });
            set.push(Measurement {
                target: MeasurementTarget::DeviceActivePower {
                    device: dev.id.clone(),
                    phase,
                },
                kind: MeasurementKind::Real,
                model: UncertaintyModel::gaussian(z_p, resolved.sm_power_sigma_kw)?,
            });
            set.push(Measurement {
                target: MeasurementTarget::DeviceReactivePower {
                    device: dev.id.clone(),
                    phase,
                },
                kind: MeasurementKind::Real,
                model: UncertaintyModel::gaussian(z_q, resolved.sm_power_sigma_kw)?,
            });
        }
    }
    let mut est_cfg = cfg.estimator.clone();
    if let ReactiveModel::ConstantPf { k2 } = cfg.reactive {
        est_cfg.constant_pf = Some(ConstantPowerFactor {
            k2,
            devices: pseudo_ids,
        });
    }
    Ok((set, est_cfg))
}

/// One full scenario for a given model lane. Consumes the same random
/// draws for every lane, so calling this with different models but the
/// same (config, ratio index, run) yields the same truth and readings.
pub fn generate_scenario(
    net: &Network,
    cfg: &SweepConfig,
    choice: ModelChoice,
    ratio: f64,
    ratio_idx: usize,
    run: usize,
) -> Result<Scenario, HarnessError> {
    let resolved = resolve(cfg, net)?;
    let core = generate_core(net, cfg, &resolved, ratio, ratio_idx, run)?;
    let model = &resolved
        .lanes
        .iter()
        .find(|(c, _)| *c == choice)
        .ok_or(HarnessError::NoModels)?
        .1;
    let (measurements, estimator) = lane_inputs(net, cfg, &resolved, &core, model)?;
    let pseudo_devices = net
        .devices
        .iter()
        .enumerate()
        .filter(|&(d, _)| core.pseudo[d])
        .map(|(_, dev)| dev.id.clone())
        .collect();
    Ok(Scenario {
        truth: core.truth,
        pseudo_devices,
        measurements,
        estimator,
    })
}

fn run_cell(
    net: &Network,
    cfg: &SweepConfig,
    resolved: &ResolvedSweep,
    ratio: f64,
    ratio_idx: usize,
    run: usize,
) -> Vec<RunRecord> {
    let failed = |status: RunStatus| RunRecord {
        ratio,
        run,
        model: ModelChoice::Exact,
        du_avg_pu: f64::NAN,
        du_max_pu: f64::NAN,
        dpt_kw: [f64::NAN; 3],
        status,
        solve_time_s: f64::NAN,
    };
    let core = match generate_core(net, cfg, resolved, ratio, ratio_idx, run) {
        Ok(core) => core,
        Err(_) => {
            // Scenario generation failed; every lane gets an error row.
            return resolved
                .lanes
                .iter()
                .map(|&(choice, _)| RunRecord {
                    model: choice,
                    ..failed(RunStatus::Error)
                })
                .collect();
        }
    };
    resolved
        .lanes
        .iter()
        .map(|(choice, model)| {
            let (set, est_cfg) = match lane_inputs(net, cfg, resolved, &core, model) {
                Ok(v) => v,
                Err(_) => {
                    return RunRecord {
                        model: *choice,
                        ..failed(RunStatus::Error)
                    }
                }
            };
            match estimate(net, &set, &est_cfg) {
                Ok(se) => {
                    let m = metrics(net, &core.truth, &se.state, cfg.du_avg_per_bus_phase);
                    RunRecord {
                        ratio,
                        run,
                        model: *choice,
                        du_avg_pu: m.du_avg_pu,
                        du_max_pu: m.du_max_pu,
                        dpt_kw: m.dpt_kw,
                        status: match se.status {
                            NlpStatus::Optimal => RunStatus::Optimal,
                            NlpStatus::MaxIterations => RunStatus::MaxIterations,
                            NlpStatus::NumericalFailure => RunStatus::NumericalFailure,
                        },
                        solve_time_s: se.solve_time_s,
                    }
                }
                Err(_) => RunRecord {
                    model: *choice,
                    ..failed(RunStatus::Error)
                },
            }
        })
        .collect()
}

/// Runs the whole sweep: every ratio, every run, every model lane, in a
/// deterministic order. `workers` bounds the thread pool; `None` uses the
/// default pool. Individual failures land in their records; the sweep
/// itself only fails on bad configuration.
pub fn run_monte_carlo(
    net: &Network,
    cfg: &SweepConfig,
    workers: Option<usize>,
) -> Result<McResult, HarnessError> {
    let resolved = resolve(cfg, net)?;
    let cells: Vec<(usize, f64, usize)> = cfg
        .ratios
        .iter()
        .enumerate()
        .flat_map(|(ri, &ratio)| (0..cfg.runs).map(move |run| (ri, ratio, run)))
        .collect();
    let work = |cells: &[(usize, f64, usize)]| -> Vec<Vec<RunRecord>> {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|&(ri, ratio, run)| run_cell(net, cfg, &resolved, ratio, ri, run))
            .collect()
    };
    let nested = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(|| work(&cells)),
        None => work(&cells),
    };
    let records: Vec<RunRecord> = nested.into_iter().flatten().collect();
    let summary = summarize(&records);
    Ok(McResult { records, summary })
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Aggregates records into per-(ratio, model) rows, in first-seen order.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(f64, ModelChoice)> = Vec::new();
    for r in records {
        if !keys.iter().any(|&(q, m)| q == r.ratio && m == r.model) {
            keys.push((r.ratio, r.model));
        }
    }
    keys.iter()
        .map(|&(ratio, model)| {
            let cell: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.ratio == ratio && r.model == model)
                .collect();
            let scored: Vec<&&RunRecord> = cell
                .iter()
                .filter(|r| r.status != RunStatus::Error)
                .collect();
            let mut du_avg: Vec<f64> = scored.iter().map(|r| r.du_avg_pu).collect();
            let mut du_max: Vec<f64> = scored.iter().map(|r| r.du_max_pu).collect();
            let mut time: Vec<f64> = scored.iter().map(|r| r.solve_time_s).collect();
            du_avg.sort_by(f64::total_cmp);
            du_max.sort_by(f64::total_cmp);
            time.sort_by(f64::total_cmp);
            let mut median_dpt = [0.0; 3];
            for (phase, slot) in median_dpt.iter_mut().enumerate() {
                let mut v: Vec<f64> = scored.iter().map(|r| r.dpt_kw[phase]).collect();
                v.sort_by(f64::total_cmp);
                *slot = percentile(&v, 0.5);
            }
            SummaryRow {
                ratio,
                model,
                runs: cell.len(),
                optimal: cell
                    .iter()
                    .filter(|r| r.status == RunStatus::Optimal)
                    .count(),
                median_du_avg_pu: percentile(&du_avg, 0.5),
                p10_du_avg_pu: percentile(&du_avg, 0.1),
                p90_du_avg_pu: percentile(&du_avg, 0.9),
                median_du_max_pu: percentile(&du_max, 0.5),
                median_dpt_kw: median_dpt,
                median_solve_time_s: percentile(&time, 0.5),
            }
        })
        .collect()
}

/// Fixed CSV layout; NaN metrics render as empty fields.
pub const CSV_HEADER: &str =
    "ratio,run,model,du_avg_pu,du_max_pu,dpt_a_kw,dpt_b_kw,dpt_c_kw,status,solve_time_s";

pub fn write_csv<W: Write>(records: &[RunRecord], mut w: W) -> std::io::Result<()> {
    let field = |x: f64| {
        if x.is_nan() {
            String::new()
        } else {
            format!("{x}")
        }
    };
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.ratio,
            r.run,
            r.model,
            field(r.du_avg_pu),
            field(r.du_max_pu),
            field(r.dpt_kw[0]),
            field(r.dpt_kw[1]),
            field(r.dpt_kw[2]),
            r.status.as_str(),
            field(r.solve_time_s),
        )?;
    }
    Ok(())
}
