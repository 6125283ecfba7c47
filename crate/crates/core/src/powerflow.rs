//! Rectangular-coordinate power flow for unbalanced multi-phase networks.
//!
//! Branch flows follow the per-phase diagonal of
//! S_side = diag(U_a) * conj(M U_a - Y U_b) with M = Y + Y_shunt(side),
//! and nodal balance sums device injections against the flows leaving each
//! bus-phase. The same residual, Jacobian, and (constant) Hessian code
//! drives both the Newton solver here and the estimation problem, so the
//! estimator inherits exactly these equations.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::netmodel::{DeviceKind, Network, Phase};

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("network has no reference bus")]
    NoReferenceBus,
    #[error("no setpoint for device {device} phase {phase}")]
    MissingSetpoint { device: String, phase: Phase },
    #[error("unknown device {0} in power flow spec")]
    UnknownDevice(String),
    #[error("device {device} has no phase {phase}")]
    UnknownDevicePhase { device: String, phase: Phase },
    #[error("did not converge in {iterations} iterations, mismatch {mismatch:.3e}")]
    NotConverged { iterations: usize, mismatch: f64 },
    #[error("singular power flow Jacobian at iteration {0}")]
    SingularJacobian(usize),
}

/// Reference-bus phase angles: 0, -2pi/3, +2pi/3 for phases a, b, c.
pub fn reference_voltage(phase: Phase) -> Complex64 {
    let theta = match phase {
        Phase::A => 0.0,
        Phase::B => -2.0 * std::f64::consts::FRAC_PI_3,
        Phase::C => 2.0 * std::f64::consts::FRAC_PI_3,
    };
    Complex64::from_polar(1.0, theta)
}

/// Maps bus-phase and device-phase quantities onto a flat real variable
/// vector: interleaved (U_re, U_im) for every non-reference bus-phase,
/// then interleaved (P, Q) for every device-phase. Reference bus-phases
/// are fixed values, not variables.
#[derive(Debug, Clone)]
pub struct Layout {
    n_vars: usize,
    ure: Vec<Option<usize>>,
    p_var: Vec<usize>,
    fixed_u: Vec<Option<Complex64>>,
}

impl Layout {
    pub fn new(net: &Network) -> Result<Self, PowerFlowError> {
        let r = net.reference_bus().ok_or(PowerFlowError::NoReferenceBus)?;
        let mut ure = Vec::with_capacity(net.bus_phases().len());
        let mut fixed_u = Vec::with_capacity(net.bus_phases().len());
        let mut next = 0usize;
        for &(bus, phase) in net.bus_phases() {
            if bus == r {
                ure.push(None);
                fixed_u.push(Some(reference_voltage(phase)));
            } else {
                ure.push(Some(next));
                fixed_u.push(None);
                next += 2;
            }
        }
        let mut p_var = Vec::with_capacity(net.device_phases().len());
        for _ in net.device_phases() {
            p_var.push(next);
            next += 2;
        }
        Ok(Layout {
            n_vars: next,
            ure,
            p_var,
            fixed_u,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// Number of free voltage variables; they occupy slots 0..n_voltage_vars.
    pub fn n_voltage_vars(&self) -> usize {
        self.p_var.first().copied().unwrap_or(self.n_vars)
    }

    pub fn ure_var(&self, bus_phase: usize) -> Option<usize> {
        self.ure[bus_phase]
    }

    pub fn uim_var(&self, bus_phase: usize) -> Option<usize> {
        self.ure[bus_phase].map(|i| i + 1)
    }

    pub fn p_var(&self, device_phase: usize) -> usize {
        self.p_var[device_phase]
    }

    pub fn q_var(&self, device_phase: usize) -> usize {
        self.p_var[device_phase] + 1
    }

    pub fn is_fixed(&self, bus_phase: usize) -> bool {
        self.fixed_u[bus_phase].is_some()
    }

    pub fn voltage(&self, bus_phase: usize, x: &[f64]) -> Complex64 {
        match self.ure[bus_phase] {
            Some(i) => Complex64::new(x[i], x[i + 1]),
            None => self.fixed_u[bus_phase].unwrap(),
        }
    }

    pub fn device_power(&self, device_phase: usize, x: &[f64]) -> Complex64 {
        let i = self.p_var[device_phase];
        Complex64::new(x[i], x[i + 1])
    }

    /// Flat start: reference rotation everywhere, device powers zero.
    pub fn flat_x(&self, net: &Network) -> Vec<f64> {
        let mut x = vec![0.0; self.n_vars];
        for (bp, &(_, phase)) in net.bus_phases().iter().enumerate() {
            if let Some(i) = self.ure[bp] {
                let u = reference_voltage(phase);
                x[i] = u.re;
                x[i + 1] = u.im;
            }
        }
        x
    }

    pub fn state_to_x(&self, state: &StateSolution) -> Vec<f64> {
        let mut x = vec![0.0; self.n_vars];
        for (bp, u) in state.u.iter().enumerate() {
            if let Some(i) = self.ure[bp] {
                x[i] = u.re;
                x[i + 1] = u.im;
            }
        }
        for (dp, s) in state.s.iter().enumerate() {
            let i = self.p_var[dp];
            x[i] = s.re;
            x[i + 1] = s.im;
        }
        x
    }

    pub fn x_to_state(&self, net: &Network, x: &[f64]) -> StateSolution {
        let u = (0..net.bus_phases().len())
            .map(|bp| self.voltage(bp, x))
            .collect();
        let s = (0..net.device_phases().len())
            .map(|dp| self.device_power(dp, x))
            .collect();
        StateSolution { u, s }
    }
}

/// Complex voltages per bus-phase and complex powers per device-phase,
/// all in per-unit, indexed like [`Network::bus_phases`] and
/// [`Network::device_phases`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateSolution {
    pub u: Vec<Complex64>,
    pub s: Vec<Complex64>,
}

impl StateSolution {
    pub fn voltage(&self, net: &Network, bus: &str, phase: Phase) -> Option<Complex64> {
        let b = net.bus_idx(bus)?;
        net.bus_phase_idx(b, phase).map(|bp| self.u[bp])
    }

    pub fn device_power(&self, net: &Network, device: &str, phase: Phase) -> Option<Complex64> {
        let d = net.device_idx(device)?;
        net.device_phase_idx(d, phase).map(|dp| self.s[dp])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    From,
    To,
}

struct CompiledBranch {
    phases: Vec<Phase>,
    /// Global bus-phase index per local phase, per side.
    from_bp: Vec<usize>,
    to_bp: Vec<usize>,
    y: Vec<Complex64>,
    m_from: Vec<Complex64>,
    m_to: Vec<Complex64>,
}

impl CompiledBranch {
    fn dim(&self) -> usize {
        self.phases.len()
    }

    fn own_bp(&self, side: Side) -> &[usize] {
        match side {
            Side::From => &self.from_bp,
            Side::To => &self.to_bp,
        }
    }

    fn other_bp(&self, side: Side) -> &[usize] {
        match side {
            Side::From => &self.to_bp,
            Side::To => &self.from_bp,
        }
    }

    fn m(&self, side: Side) -> &[Complex64] {
        match side {
            Side::From => &self.m_from,
            Side::To => &self.m_to,
        }
    }

    /// Current leaving the own bus into the branch, per local phase:
    /// I = M U_own - Y U_other.
    fn side_current(&self, side: Side, u_own: &[Complex64], u_other: &[Complex64]) -> Vec<Complex64> {
        let d = self.dim();
        let m = self.m(side);
        let mut out = vec![Complex64::new(0.0, 0.0); d];
        for r in 0..d {
            for c in 0..d {
                out[r] += m[r * d + c] * u_own[c] - self.y[r * d + c] * u_other[c];
            }
        }
        out
    }
}

/// Per-branch complex power flows, one entry per local phase and side.
#[derive(Debug, Clone)]
pub struct BranchFlow {
    pub phases: Vec<Phase>,
    pub s_from: Vec<Complex64>,
    pub s_to: Vec<Complex64>,
}

/// Compiled flow equations over a [`Layout`]. Balance rows come in pairs:
/// row 2k is the active and row 2k+1 the reactive balance of bus-phase k.
pub struct FlowEquations<'a> {
    net: &'a Network,
    layout: Layout,
    branches: Vec<CompiledBranch>,
    /// Per device-phase: (bus-phase, +1 generator / -1 load).
    device_sign: Vec<(usize, f64)>,
    hessian_rows: Vec<Vec<(usize, usize, f64)>>,
}

impl<'a> FlowEquations<'a> {
    pub fn new(net: &'a Network) -> Result<Self, PowerFlowError> {
        let layout = Layout::new(net)?;
        let mut branches = Vec::with_capacity(net.branches.len());
        for (k, br) in net.branches.iter().enumerate() {
            let (f, t) = net.branch_end_indices(k);
            let phases: Vec<Phase> = net.branch_phases(k).iter().collect();
            let d = phases.len();
            let from_bp: Vec<usize> = phases
                .iter()
                .map(|&p| net.bus_phase_idx(f, p).unwrap())
                .collect();
            let to_bp: Vec<usize> = phases
                .iter()
                .map(|&p| net.bus_phase_idx(t, p).unwrap())
                .collect();
            let mut y = vec![Complex64::new(0.0, 0.0); d * d];
            for r in 0..d {
                for c in 0..d {
                    y[r * d + c] = br.y_series.get(r, c);
                }
            }
            let shunt = |m: &Option<crate::netmodel::PhaseMatrix>, r: usize, c: usize| match m {
                Some(m) => m.get(r, c),
                None => Complex64::new(0.0, 0.0),
            };
            let mut m_from = y.clone();
            let mut m_to = y.clone();
            for r in 0..d {
                for c in 0..d {
                    m_from[r * d + c] += shunt(&br.y_shunt_from, r, c);
                    m_to[r * d + c] += shunt(&br.y_shunt_to, r, c);
                }
            }
            branches.push(CompiledBranch {
                phases,
                from_bp,
                to_bp,
                y,
                m_from,
                m_to,
            });
        }
        let device_sign = net
            .device_phases()
            .iter()
            .map(|&(d, p)| {
                let dev = &net.devices[d];
                let bus = net.bus_idx(&dev.bus).unwrap();
                let bp = net.bus_phase_idx(bus, p).unwrap();
                let sign = match dev.kind {
                    DeviceKind::Generator => 1.0,
                    DeviceKind::Load => -1.0,
                };
                (bp, sign)
            })
            .collect();
        let mut eq = FlowEquations {
            net,
            layout,
            branches,
            device_sign,
            hessian_rows: Vec::new(),
        };
        eq.hessian_rows = eq.build_hessian_rows();
        Ok(eq)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn network(&self) -> &Network {
        self.net
    }

    pub fn n_balance_rows(&self) -> usize {
        2 * self.net.bus_phases().len()
    }

    fn side_voltages(&self, br: &CompiledBranch, side: Side, x: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let own: Vec<Complex64> = br
            .own_bp(side)
            .iter()
            .map(|&bp| self.layout.voltage(bp, x))
            .collect();
        let other: Vec<Complex64> = br
            .other_bp(side)
            .iter()
            .map(|&bp| self.layout.voltage(bp, x))
            .collect();
        (own, other)
    }

    /// Balance residual: injections minus flows, active then reactive per
    /// bus-phase. A solved state drives every row to zero.
    pub fn eval_balance(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_balance_rows());
        out.fill(0.0);
        for (dp, &(bp, sign)) in self.device_sign.iter().enumerate() {
            let s = self.layout.device_power(dp, x);
            out[2 * bp] += sign * s.re;
            out[2 * bp + 1] += sign * s.im;
        }
        for br in &self.branches {
            for side in [Side::From, Side::To] {
                let (own, other) = self.side_voltages(br, side, x);
                let current = br.side_current(side, &own, &other);
                for (r, &bp) in br.own_bp(side).iter().enumerate() {
                    let s = own[r] * current[r].conj();
                    out[2 * bp] -= s.re;
                    out[2 * bp + 1] -= s.im;
                }
            }
        }
    }

    /// Jacobian of the balance residual as (row, col, value) triplets in a
    /// deterministic order. Entries may repeat a position; consumers sum.
    pub fn eval_balance_jacobian(&self, x: &[f64], out: &mut Vec<(usize, usize, f64)>) {
        out.clear();
        for (dp, &(bp, sign)) in self.device_sign.iter().enumerate() {
            out.push((2 * bp, self.layout.p_var(dp), sign));
            out.push((2 * bp + 1, self.layout.q_var(dp), sign));
        }
        for br in &self.branches {
            let d = br.dim();
            for side in [Side::From, Side::To] {
                let (own, other) = self.side_voltages(br, side, x);
                let current = br.side_current(side, &own, &other);
                let m = br.m(side);
                for (r, &bp_r) in br.own_bp(side).iter().enumerate() {
                    let rows = (2 * bp_r, 2 * bp_r + 1);
                    let u_r = own[r];
                    let ic = current[r].conj();
                    for c in 0..d {
                        // Own-bus columns.
                        let bp_c = br.own_bp(side)[c];
                        if let Some(ev) = self.layout.ure_var(bp_c) {
                            let mc = m[r * d + c].conj();
                            let mut de = u_r * mc;
                            let mut df = -Complex64::i() * u_r * mc;
                            if c == r {
                                de += ic;
                                df += Complex64::i() * ic;
                            }
                            out.push((rows.0, ev, -de.re));
                            out.push((rows.1, ev, -de.im));
                            out.push((rows.0, ev + 1, -df.re));
                            out.push((rows.1, ev + 1, -df.im));
                        }
                        // Other-bus columns.
                        let bp_o = br.other_bp(side)[c];
                        if let Some(ev) = self.layout.ure_var(bp_o) {
                            let yc = br.y[r * d + c].conj();
                            let de = -u_r * yc;
                            let df = Complex64::i() * u_r * yc;
                            out.push((rows.0, ev, -de.re));
                            out.push((rows.1, ev, -de.im));
                            out.push((rows.0, ev + 1, -df.re));
                            out.push((rows.1, ev + 1, -df.im));
                        }
                    }
                }
            }
        }
    }

    /// Product terms (i, j, v) per balance row: v * x_i * x_j appears in the
    /// row's residual. The residual is quadratic, so these are constant; the
    /// Hessian entry is v for i != j (symmetric) and 2v on the diagonal.
    pub fn balance_hessian_rows(&self) -> &[Vec<(usize, usize, f64)>] {
        &self.hessian_rows
    }

    fn build_hessian_rows(&self) -> Vec<Vec<(usize, usize, f64)>> {
        let mut rows = vec![Vec::new(); self.n_balance_rows()];
        for br in &self.branches {
            let d = br.dim();
            for side in [Side::From, Side::To] {
                let m = br.m(side);
                for (r, &bp_r) in br.own_bp(side).iter().enumerate() {
                    let Some(var_r) = self.layout.ure_var(bp_r) else {
                        continue;
                    };
                    let (e1, f1) = (var_r, var_r + 1);
                    for c in 0..d {
                        // Own-bus pair with w = conj(M_rc).
                        let bp_c = br.own_bp(side)[c];
                        if let Some(var_c) = self.layout.ure_var(bp_c) {
                            let w = m[r * d + c].conj();
                            let (e2, f2) = (var_c, var_c + 1);
                            if bp_r == bp_c {
                                rows[2 * bp_r].push((e1, e1, -w.re));
                                rows[2 * bp_r].push((f1, f1, -w.re));
                                rows[2 * bp_r + 1].push((e1, e1, -w.im));
                                rows[2 * bp_r + 1].push((f1, f1, -w.im));
                            } else {
                                rows[2 * bp_r].push((e1, e2, -w.re));
                                rows[2 * bp_r].push((f1, f2, -w.re));
                                rows[2 * bp_r].push((f1, e2, w.im));
                                rows[2 * bp_r].push((e1, f2, -w.im));
                                rows[2 * bp_r + 1].push((e1, e2, -w.im));
                                rows[2 * bp_r + 1].push((f1, f2, -w.im));
                                rows[2 * bp_r + 1].push((f1, e2, -w.re));
                                rows[2 * bp_r + 1].push((e1, f2, w.re));
                            }
                        }
                        // Cross pair with w = -conj(Y_rc).
                        let bp_o = br.other_bp(side)[c];
                        if let Some(var_o) = self.layout.ure_var(bp_o) {
                            let w = -br.y[r * d + c].conj();
                            let (e2, f2) = (var_o, var_o + 1);
                            rows[2 * bp_r].push((e1, e2, -w.re));
                            rows[2 * bp_r].push((f1, f2, -w.re));
                            rows[2 * bp_r].push((f1, e2, w.im));
                            rows[2 * bp_r].push((e1, f2, -w.im));
                            rows[2 * bp_r + 1].push((e1, e2, -w.im));
                            rows[2 * bp_r + 1].push((f1, f2, -w.im));
                            rows[2 * bp_r + 1].push((f1, e2, -w.re));
                            rows[2 * bp_r + 1].push((e1, f2, w.re));
                        }
                    }
                }
            }
        }
        rows
    }

    pub fn branch_flows(&self, state: &StateSolution) -> Vec<BranchFlow> {
        self.branches
            .iter()
            .map(|br| {
                let u_f: Vec<Complex64> = br.from_bp.iter().map(|&bp| state.u[bp]).collect();
                let u_t: Vec<Complex64> = br.to_bp.iter().map(|&bp| state.u[bp]).collect();
                let i_f = br.side_current(Side::From, &u_f, &u_t);
                let i_t = br.side_current(Side::To, &u_t, &u_f);
                BranchFlow {
                    phases: br.phases.clone(),
                    s_from: (0..br.dim()).map(|r| u_f[r] * i_f[r].conj()).collect(),
                    s_to: (0..br.dim()).map(|r| u_t[r] * i_t[r].conj()).collect(),
                }
            })
            .collect()
    }

    /// Complex balance residual per bus-phase for a given state.
    pub fn nodal_balance_residual(&self, state: &StateSolution) -> Vec<Complex64> {
        let x = self.layout.state_to_x(state);
        let mut out = vec![0.0; self.n_balance_rows()];
        self.eval_balance(&x, &mut out);
        (0..self.net.bus_phases().len())
            .map(|bp| Complex64::new(out[2 * bp], out[2 * bp + 1]))
            .collect()
    }
}

/// Fixed complex power setpoints per device-phase in per-unit. Setpoints on
/// reference-bus devices are ignored; those devices balance the feeder.
#[derive(Debug, Clone)]
pub struct PfSpec {
    s: Vec<Option<Complex64>>,
}

impl PfSpec {
    pub fn new(net: &Network) -> Self {
        PfSpec {
            s: vec![None; net.device_phases().len()],
        }
    }

    pub fn set_pu(
        &mut self,
        net: &Network,
        device: &str,
        phase: Phase,
        s: Complex64,
    ) -> Result<(), PowerFlowError> {
        let d = net
            .device_idx(device)
            .ok_or_else(|| PowerFlowError::UnknownDevice(device.to_string()))?;
        let dp = net
            .device_phase_idx(d, phase)
            .ok_or_else(|| PowerFlowError::UnknownDevicePhase {
                device: device.to_string(),
                phase,
            })?;
        self.s[dp] = Some(s);
        Ok(())
    }

    /// Convenience for external units: active kW and reactive kvar.
    pub fn set_kw(
        &mut self,
        net: &Network,
        device: &str,
        phase: Phase,
        p_kw: f64,
        q_kvar: f64,
    ) -> Result<(), PowerFlowError> {
        let s = Complex64::new(p_kw, q_kvar) * 1e3 / net.s_base_va;
        self.set_pu(net, device, phase, s)
    }

    pub fn get(&self, device_phase: usize) -> Option<Complex64> {
        self.s[device_phase]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PfOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions {
            tol: 1e-10,
            max_iter: 50,
        }
    }
}

#[derive(Debug)]
pub struct PfResult {
    pub state: StateSolution,
    pub iterations: usize,
    pub mismatch: f64,
}

/// Newton power flow with analytic Jacobian from a flat start. Solves the
/// non-reference balance equations for the free voltages, then assigns the
/// reference-bus generators whatever injection closes the balance there.
pub fn solve_power_flow(
    net: &Network,
    spec: &PfSpec,
    options: &PfOptions,
) -> Result<PfResult, PowerFlowError> {
    let eq = FlowEquations::new(net)?;
    let layout = eq.layout().clone();
    let r = net.reference_bus().ok_or(PowerFlowError::NoReferenceBus)?;

    let mut x = layout.flat_x(net);
    for (dp, &(d, p)) in net.device_phases().iter().enumerate() {
        let dev = &net.devices[d];
        let on_ref = net.bus_idx(&dev.bus).unwrap() == r;
        match spec.get(dp) {
            Some(s) if !on_ref => {
                x[layout.p_var(dp)] = s.re;
                x[layout.q_var(dp)] = s.im;
            }
            None if !on_ref => {
                return Err(PowerFlowError::MissingSetpoint {
                    device: dev.id.clone(),
                    phase: p,
                })
            }
            _ => {}
        }
    }

    // Square system: rows and voltage columns of non-reference bus-phases.
    let free_rows: Vec<usize> = net
        .bus_phases()
        .iter()
        .enumerate()
        .filter(|(_, &(b, _))| b != r)
        .flat_map(|(bp, _)| [2 * bp, 2 * bp + 1])
        .collect();
    let n_free = layout.n_voltage_vars();
    let row_pos: HashMap<usize, usize> = free_rows.iter().enumerate().map(|(i, &r)| (r, i)).collect();
    debug_assert_eq!(free_rows.len(), n_free);

    let mut residual = vec![0.0; eq.n_balance_rows()];
    let mut triplets = Vec::new();
    let mut mismatch = f64::INFINITY;
    for iter in 0..=options.max_iter {
        eq.eval_balance(&x, &mut residual);
        mismatch = free_rows
            .iter()
            .map(|&row| residual[row].abs())
            .fold(0.0, f64::max);
        if mismatch < options.tol {
            assign_slack(net, &layout, &mut x, &residual, r);
            return Ok(PfResult {
                state: layout.x_to_state(net, &x),
                iterations: iter,
                mismatch,
            });
        }
        if iter == options.max_iter {
            break;
        }
        let mut jac = DMatrix::<f64>::zeros(n_free, n_free);
        eq.eval_balance_jacobian(&x, &mut triplets);
        for &(row, col, v) in &triplets {
            if col < n_free {
                if let Some(&i) = row_pos.get(&row) {
                    jac[(i, col)] += v;
                }
            }
        }
        let rhs = DVector::from_iterator(n_free, free_rows.iter().map(|&row| -residual[row]));
        let lu = jac.lu();
        let Some(step) = lu.solve(&rhs) else {
            return Err(PowerFlowError::SingularJacobian(iter));
        };
        for i in 0..n_free {
            x[i] += step[i];
        }
    }
    Err(PowerFlowError::NotConverged {
        iterations: options.max_iter,
        mismatch,
    })
}

/// Distributes the residual at each reference bus-phase over the generator
/// devices attached there, closing the balance exactly.
fn assign_slack(net: &Network, layout: &Layout, x: &mut [f64], residual: &[f64], ref_bus: usize) {
    for (bp, &(bus, phase)) in net.bus_phases().iter().enumerate() {
        if bus != ref_bus {
            continue;
        }
        let gens: Vec<usize> = net
            .device_phases()
            .iter()
            .enumerate()
            .filter(|(_, &(d, p))| {
                p == phase
                    && net.devices[d].kind == DeviceKind::Generator
                    && net.bus_idx(&net.devices[d].bus) == Some(ref_bus)
            })
            .map(|(dp, _)| dp)
            .collect();
        if gens.is_empty() {
            continue;
        }
        let need = Complex64::new(-residual[2 * bp], -residual[2 * bp + 1]);
        let share = need / gens.len() as f64;
        for dp in gens {
            x[layout.p_var(dp)] += share.re;
            x[layout.q_var(dp)] += share.im;
        }
    }
}

/// Ground-truth generator for scenario studies: solve the network for a
/// given setpoint map, in one call.
pub fn solved_state(net: &Network, spec: &PfSpec) -> Result<StateSolution, PowerFlowError> {
    Ok(solve_power_flow(net, spec, &PfOptions::default())?.state)
}
