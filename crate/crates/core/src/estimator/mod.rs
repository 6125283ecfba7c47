//! Maximum-likelihood state estimation.
//!
//! The estimator minimizes the sum of per-measurement penalties subject to
//! the exact flow equations. Metered (real) readings are Gaussian and
//! contribute (x - z)^2 / sigma^2; pseudo readings contribute
//! xi - log f(x) for an arbitrary smooth density f, with xi the shift that
//! zeroes the penalty at the density mode. Voltage-magnitude readings get
//! an auxiliary magnitude variable tied to the rectangular components by
//! u^2 = e^2 + f^2, keeping every residual smooth.

pub mod wls;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{DistributionError, ShiftConvention, UncertaintyModel};
use crate::netmodel::{Network, Phase};
use crate::nlp::{self, NlpError, NlpModel, NlpOptions, NlpStatus};
use crate::powerflow::{FlowEquations, PowerFlowError, StateSolution};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("measurement {index} targets unknown bus {bus}")]
    UnknownBus { index: usize, bus: String },
    #[error("measurement {index} targets unknown device {device}")]
    UnknownDevice { index: usize, device: String },
    #[error("measurement {index}: bus {bus} has no phase {phase}")]
    PhaseNotOnBus {
        index: usize,
        bus: String,
        phase: Phase,
    },
    #[error("measurement {index}: device {device} has no phase {phase}")]
    PhaseNotOnDevice {
        index: usize,
        device: String,
        phase: Phase,
    },
    #[error("measurement {index} is real but its model is not gaussian")]
    RealMeasurementNotGaussian { index: usize },
    #[error("at least one voltage magnitude measurement is required")]
    NoVoltageMeasurement,
    #[error("device {device} holds the power factor fixed; drop its reactive measurement")]
    ConstantPfReactiveMeasurement { device: String },
    #[error("correlation group needs at least two devices")]
    GroupTooSmall,
    #[error("correlation group has {devices} devices but {scales} scales")]
    GroupScaleCount { devices: usize, scales: usize },
    #[error("correlation group scales must be positive")]
    GroupNonPositiveScale,
    #[error("correlation group devices {a} and {b} differ in phase count")]
    GroupPhaseMismatch { a: String, b: String },
    #[error("unknown device {0} in estimator config")]
    ConfigUnknownDevice(String),
    #[error("variable bounds for measurement target {0} are empty after intersection")]
    EmptyBounds(String),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Nlp(#[from] NlpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum MeasurementTarget {
    VoltageMagnitude { bus: String, phase: Phase },
    DeviceActivePower { device: String, phase: Phase },
    DeviceReactivePower { device: String, phase: Phase },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    Real,
    Pseudo,
}

/// One measurement. Values and spreads inside `model` are in external
/// units: volts for voltage targets, kW or kvar for power targets. A real
/// measurement's reading is the mean of its Gaussian model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    #[serde(flatten)]
    pub target: MeasurementTarget,
    pub kind: MeasurementKind,
    pub model: UncertaintyModel,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub measurements: Vec<Measurement>,
}

impl MeasurementSet {
    pub fn push(&mut self, m: Measurement) {
        self.measurements.push(m);
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }
}

pub fn load_measurements<P: AsRef<Path>>(path: P) -> Result<MeasurementSet, EstimatorError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Devices whose outputs move in lockstep, proportional to `scales`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationGroup {
    pub devices: Vec<String>,
    pub scales: Vec<f64>,
}

/// Devices whose reactive power tracks active power as Q = k2 * P.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantPowerFactor {
    pub k2: f64,
    pub devices: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub solver: NlpOptions,
    /// Box half-width on rectangular voltage variables, per-unit.
    pub voltage_bound_pu: f64,
    /// Fraction of a bounded support trimmed off each end so densities are
    /// evaluated strictly inside their domain.
    pub bound_margin: f64,
    pub shift_convention: ShiftConvention,
    /// Added to the shift constant of every pseudo measurement.
    pub xi_offset: f64,
    /// Divide the solver objective by the measurement count. Reported
    /// objectives stay unnormalized.
    pub normalize_objective: bool,
    pub correlation_groups: Vec<CorrelationGroup>,
    pub constant_pf: Option<ConstantPowerFactor>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            solver: NlpOptions::default(),
            voltage_bound_pu: 1.6,
            bound_margin: 1e-6,
            shift_convention: ShiftConvention::Tight,
            xi_offset: 0.0,
            normalize_objective: false,
            correlation_groups: Vec::new(),
            constant_pf: None,
        }
    }
}

pub fn load_estimator_config<P: AsRef<Path>>(path: P) -> Result<EstimatorConfig, EstimatorError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Where a penalty term reads its value from.
#[derive(Debug, Clone, Copy)]
enum TermVar {
    Var(usize),
    /// Reference-bus voltage magnitude: fixed, the penalty is a constant.
    Fixed(f64),
}

struct RhoTerm {
    var: TermVar,
    model: UncertaintyModel,
    xi: f64,
    pseudo: bool,
}

impl RhoTerm {
    fn value(&self, x: &[f64]) -> f64 {
        let v = match self.var {
            TermVar::Var(i) => x[i],
            TermVar::Fixed(v) => v,
        };
        if self.pseudo {
            self.xi - self.model.logpdf(v)
        } else {
            let (mu, sigma) = self.model.gaussian_parameters().unwrap();
            let d = v - mu;
            d * d / (sigma * sigma)
        }
    }

    fn d1(&self, x: &[f64]) -> f64 {
        match self.var {
            TermVar::Fixed(_) => 0.0,
            TermVar::Var(i) => {
                if self.pseudo {
                    -self
                        .model
                        .dlogpdf(x[i])
                        .expect("bounds keep pseudo values inside the density support")
                } else {
                    let (mu, sigma) = self.model.gaussian_parameters().unwrap();
                    2.0 * (x[i] - mu) / (sigma * sigma)
                }
            }
        }
    }

    fn d2(&self, x: &[f64]) -> f64 {
        match self.var {
            TermVar::Fixed(_) => 0.0,
            TermVar::Var(i) => {
                if self.pseudo {
                    -self
                        .model
                        .d2logpdf(x[i])
                        .expect("bounds keep pseudo values inside the density support")
                } else {
                    let (_, sigma) = self.model.gaussian_parameters().unwrap();
                    2.0 / (sigma * sigma)
                }
            }
        }
    }
}

enum ExtraCon {
    /// u^2 - e^2 - f^2 = 0.
    Magnitude { u: usize, e: usize, f: usize },
    /// s_b * P_a - s_a * P_b = 0.
    Proportional {
        p_a: usize,
        p_b: usize,
        s_a: f64,
        s_b: f64,
    },
    /// Q - k2 * P = 0.
    PowerFactor { p: usize, q: usize, k2: f64 },
}

pub struct SeProblem<'a> {
    eq: FlowEquations<'a>,
    n_vars: usize,
    n_flow_vars: usize,
    bounds: Vec<(f64, f64)>,
    x0: Vec<f64>,
    terms: Vec<RhoTerm>,
    extra: Vec<ExtraCon>,
    scale: f64,
}

impl<'a> SeProblem<'a> {
    pub fn state_from(&self, x: &[f64]) -> StateSolution {
        self.eq.layout().x_to_state(self.eq.network(), &x[..self.n_flow_vars])
    }

    /// Penalty of each measurement at the given point, in input order.
    pub fn rho_values(&self, x: &[f64]) -> Vec<f64> {
        self.terms.iter().map(|t| t.value(x)).collect()
    }
}

fn finite_intersect(
    current: (f64, f64),
    support: (f64, f64),
    margin: f64,
) -> (f64, f64) {
    let (lo, hi) = support;
    if lo.is_finite() && hi.is_finite() {
        let m = margin * (hi - lo);
        (current.0.max(lo + m), current.1.min(hi - m))
    } else {
        (
            current.0.max(lo),
            current.1.min(hi),
        )
    }
}

pub fn build_problem<'a>(
    net: &'a Network,
    set: &MeasurementSet,
    config: &EstimatorConfig,
) -> Result<SeProblem<'a>, EstimatorError> {
    let eq = FlowEquations::new(net)?;
    let layout = eq.layout().clone();
    let n_flow_vars = layout.n_vars();
    let ref_bus = net.reference_bus().ok_or(PowerFlowError::NoReferenceBus)?;

    // Resolve targets, convert models to per-unit, allocate magnitude
    // variables per measured non-reference bus-phase.
    let mut n_vars = n_flow_vars;
    let mut aux_for_bp: Vec<Option<usize>> = vec![None; net.bus_phases().len()];
    let mut aux_list: Vec<usize> = Vec::new();
    let mut terms = Vec::new();
    let mut saw_voltage = false;
    // Per-variable support intersections from measurement models.
    let mut var_caps: Vec<(usize, (f64, f64), String)> = Vec::new();

    for (index, meas) in set.measurements.iter().enumerate() {
        if meas.kind == MeasurementKind::Real && meas.model.gaussian_parameters().is_none() {
            return Err(EstimatorError::RealMeasurementNotGaussian { index });
        }
        let (var, model_pu, label) = match &meas.target {
            MeasurementTarget::VoltageMagnitude { bus, phase } => {
                saw_voltage = true;
                let b = net
                    .bus_idx(bus)
                    .ok_or_else(|| EstimatorError::UnknownBus {
                        index,
                        bus: bus.clone(),
                    })?;
                let bp = net.bus_phase_idx(b, *phase).ok_or_else(|| {
                    EstimatorError::PhaseNotOnBus {
                        index,
                        bus: bus.clone(),
                        phase: *phase,
                    }
                })?;
                let k = 1.0 / net.buses[b].base_voltage_v;
                let model_pu = meas.model.rescale(k)?;
                let var = if b == ref_bus {
                    TermVar::Fixed(1.0)
                } else {
                    let slot = match aux_for_bp[bp] {
                        Some(v) => v,
                        None => {
                            let v = n_vars;
                            n_vars += 1;
                            aux_for_bp[bp] = Some(v);
                            aux_list.push(bp);
                            v
                        }
                    };
                    TermVar::Var(slot)
                };
                (var, model_pu, format!("voltage {bus}/{phase}"))
            }
            MeasurementTarget::DeviceActivePower { device, phase }
            | MeasurementTarget::DeviceReactivePower { device, phase } => {
                let d = net
                    .device_idx(device)
                    .ok_or_else(|| EstimatorError::UnknownDevice {
                        index,
                        device: device.clone(),
                    })?;
                let dp = net.device_phase_idx(d, *phase).ok_or_else(|| {
                    EstimatorError::PhaseNotOnDevice {
                        index,
                        device: device.clone(),
                        phase: *phase,
                    }
                })?;
                let k = 1e3 / net.s_base_va;
                let model_pu = meas.model.rescale(k)?;
                let active = matches!(meas.target, MeasurementTarget::DeviceActivePower { .. });
                let var = if active {
                    layout.p_var(dp)
                } else {
                    layout.q_var(dp)
                };
                let what = if active { "p" } else { "q" };
                (
                    TermVar::Var(var),
                    model_pu,
                    format!("{what} {device}/{phase}"),
                )
            }
        };
        let pseudo = meas.kind == MeasurementKind::Pseudo;
        let xi = if pseudo {
            model_pu.shift_constant(config.shift_convention)? + config.xi_offset
        } else {
            0.0
        };
        if let TermVar::Var(v) = var {
            var_caps.push((v, model_pu.support(), label));
        }
        terms.push(RhoTerm {
            var,
            model: model_pu,
            xi,
            pseudo,
        });
    }
    if !saw_voltage {
        return Err(EstimatorError::NoVoltageMeasurement);
    }

    // Bounds: voltage boxes, then measurement supports, then magnitude
    // variable boxes.
    let mut bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); n_vars];
    for slot in bounds.iter_mut().take(layout.n_voltage_vars()) {
        *slot = (-config.voltage_bound_pu, config.voltage_bound_pu);
    }
    for &bp in &aux_list {
        let v = aux_for_bp[bp].unwrap();
        bounds[v] = (0.5, 1.5);
    }
    for (v, support, label) in var_caps {
        bounds[v] = finite_intersect(bounds[v], support, config.bound_margin);
        if bounds[v].0 > bounds[v].1 {
            return Err(EstimatorError::EmptyBounds(label));
        }
    }

    // Extra constraints after the balance rows.
    let mut extra = Vec::new();
    for &bp in &aux_list {
        let u = aux_for_bp[bp].unwrap();
        let e = layout.ure_var(bp).unwrap();
        extra.push(ExtraCon::Magnitude { u, e, f: e + 1 });
    }
    for group in &config.correlation_groups {
        if group.devices.len() < 2 {
            return Err(EstimatorError::GroupTooSmall);
        }
        if group.devices.len() != group.scales.len() {
            return Err(EstimatorError::GroupScaleCount {
                devices: group.devices.len(),
                scales: group.scales.len(),
            });
        }
        if group.scales.iter().any(|&s| s <= 0.0) {
            return Err(EstimatorError::GroupNonPositiveScale);
        }
        let ids: Vec<usize> = group
            .devices
            .iter()
            .map(|id| {
                net.device_idx(id)
                    .ok_or_else(|| EstimatorError::ConfigUnknownDevice(id.clone()))
            })
            .collect::<Result<_, _>>()?;
        // Pair phases by local position so devices on different phases
        // can still move in lockstep.
        for w in ids.windows(2) {
            if net.devices[w[0]].phases.len() != net.devices[w[1]].phases.len() {
                return Err(EstimatorError::GroupPhaseMismatch {
                    a: net.devices[w[0]].id.clone(),
                    b: net.devices[w[1]].id.clone(),
                });
            }
        }
        for (k, w) in ids.windows(2).enumerate() {
            let phases_a: Vec<Phase> = net.devices[w[0]].phases.iter().collect();
            let phases_b: Vec<Phase> = net.devices[w[1]].phases.iter().collect();
            for (pa, pb) in phases_a.iter().zip(&phases_b) {
                let dp_a = net.device_phase_idx(w[0], *pa).unwrap();
                let dp_b = net.device_phase_idx(w[1], *pb).unwrap();
                extra.push(ExtraCon::Proportional {
                    p_a: layout.p_var(dp_a),
                    p_b: layout.p_var(dp_b),
                    s_a: group.scales[k],
                    s_b: group.scales[k + 1],
                });
            }
        }
    }
    if let Some(cpf) = &config.constant_pf {
        for id in &cpf.devices {
            let d = net
                .device_idx(id)
                .ok_or_else(|| EstimatorError::ConfigUnknownDevice(id.clone()))?;
            let reactive_measured = set.measurements.iter().any(|m| {
                matches!(&m.target,
                    MeasurementTarget::DeviceReactivePower { device, .. } if device == id)
            });
            if reactive_measured {
                return Err(EstimatorError::ConstantPfReactiveMeasurement {
                    device: id.clone(),
                });
            }
            for phase in net.devices[d].phases.iter() {
                let dp = net.device_phase_idx(d, phase).unwrap();
                extra.push(ExtraCon::PowerFactor {
                    p: layout.p_var(dp),
                    q: layout.q_var(dp),
                    k2: cpf.k2,
                });
            }
        }
    }

    // Initial point: flat voltages, magnitudes consistent with them,
    // device powers from measurement models (real means win over pseudo
    // means), everything else zero.
    let mut x0 = vec![0.0; n_vars];
    x0[..n_flow_vars].copy_from_slice(&layout.flat_x(net));
    for &bp in &aux_list {
        x0[aux_for_bp[bp].unwrap()] = 1.0;
    }
    let mut init_is_real = vec![false; n_vars];
    for term in &terms {
        let TermVar::Var(v) = term.var else { continue };
        if v >= n_flow_vars || v < layout.n_voltage_vars() {
            continue;
        }
        if term.pseudo {
            if !init_is_real[v] {
                x0[v] = term.model.mean();
            }
        } else {
            x0[v] = term.model.gaussian_parameters().unwrap().0;
            init_is_real[v] = true;
        }
    }

    let scale = if config.normalize_objective {
        1.0 / set.measurements.len().max(1) as f64
    } else {
        1.0
    };

    Ok(SeProblem {
        eq,
        n_vars,
        n_flow_vars,
        bounds,
        x0,
        terms,
        extra,
        scale,
    })
}

impl<'a> NlpModel for SeProblem<'a> {
    fn num_variables(&self) -> usize {
        self.n_vars
    }

    fn num_equalities(&self) -> usize {
        self.eq.n_balance_rows() + self.extra.len()
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        self.bounds.clone()
    }

    fn initial_point(&self) -> Vec<f64> {
        self.x0.clone()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.scale * self.terms.iter().map(|t| t.value(x)).sum::<f64>()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for t in &self.terms {
            if let TermVar::Var(v) = t.var {
                out[v] += self.scale * t.d1(x);
            }
        }
    }

    fn equalities(&self, x: &[f64], out: &mut [f64]) {
        let nb = self.eq.n_balance_rows();
        self.eq.eval_balance(x, &mut out[..nb]);
        for (k, con) in self.extra.iter().enumerate() {
            out[nb + k] = match *con {
                ExtraCon::Magnitude { u, e, f } => x[u] * x[u] - x[e] * x[e] - x[f] * x[f],
                ExtraCon::Proportional { p_a, p_b, s_a, s_b } => s_b * x[p_a] - s_a * x[p_b],
                ExtraCon::PowerFactor { p, q, k2 } => x[q] - k2 * x[p],
            };
        }
    }

    fn jacobian(&self, x: &[f64], out: &mut Vec<(usize, usize, f64)>) {
        self.eq.eval_balance_jacobian(x, out);
        let nb = self.eq.n_balance_rows();
        for (k, con) in self.extra.iter().enumerate() {
            let row = nb + k;
            match *con {
                ExtraCon::Magnitude { u, e, f } => {
                    out.push((row, u, 2.0 * x[u]));
                    out.push((row, e, -2.0 * x[e]));
                    out.push((row, f, -2.0 * x[f]));
                }
                ExtraCon::Proportional { p_a, p_b, s_a, s_b } => {
                    out.push((row, p_a, s_b));
                    out.push((row, p_b, -s_a));
                }
                ExtraCon::PowerFactor { p, q, k2 } => {
                    out.push((row, q, 1.0));
                    out.push((row, p, -k2));
                }
            }
        }
    }

    fn lagrangian_hessian(
        &self,
        x: &[f64],
        sigma_f: f64,
        lambda: &[f64],
        out: &mut Vec<(usize, usize, f64)>,
    ) {
        out.clear();
        for t in &self.terms {
            if let TermVar::Var(v) = t.var {
                out.push((v, v, self.scale * sigma_f * t.d2(x)));
            }
        }
        for (row, products) in self.eq.balance_hessian_rows().iter().enumerate() {
            let l = lambda[row];
            for &(a, b, v) in products {
                if a == b {
                    out.push((a, a, 2.0 * l * v));
                } else if a < b {
                    out.push((a, b, l * v));
                } else {
                    out.push((b, a, l * v));
                }
            }
        }
        let nb = self.eq.n_balance_rows();
        for (k, con) in self.extra.iter().enumerate() {
            if let ExtraCon::Magnitude { u, e, f } = *con {
                let l = lambda[nb + k];
                out.push((u, u, 2.0 * l));
                out.push((e, e, -2.0 * l));
                out.push((f, f, -2.0 * l));
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeResult {
    pub state: StateSolution,
    /// Sum of the per-measurement penalties, unnormalized.
    pub objective: f64,
    pub rho: Vec<f64>,
    pub status: NlpStatus,
    pub iterations: usize,
    pub solve_time_s: f64,
    pub stat_err: f64,
    pub feas_err: f64,
}

pub fn estimate(
    net: &Network,
    set: &MeasurementSet,
    config: &EstimatorConfig,
) -> Result<SeResult, EstimatorError> {
    let problem = build_problem(net, set, config)?;
    let started = Instant::now();
    let sol = nlp::solve(&problem, &config.solver)?;
    let solve_time_s = started.elapsed().as_secs_f64();
    let rho = problem.rho_values(&sol.x);
    Ok(SeResult {
        state: problem.state_from(&sol.x),
        objective: rho.iter().sum(),
        rho,
        status: sol.status,
        iterations: sol.iterations,
        solve_time_s,
        stat_err: sol.stat_err,
        feas_err: sol.feas_err,
    })
}
