//! Weighted-least-squares reference estimator.
//!
//! A deliberately separate implementation used to cross-check the
//! likelihood estimator on all-Gaussian measurement sets: Gauss-Newton on
//! the weighted residuals in rectangular voltage coordinates, with
//! zero-injection bus-phases enforced as hard constraints through a dense
//! KKT system per iteration. Device powers are recovered from the solved
//! voltages afterwards, which restricts this path to networks with at most
//! one device per bus-phase.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::estimator::{MeasurementKind, MeasurementSet, MeasurementTarget};
use crate::netmodel::{DeviceKind, Network, Phase};
use crate::powerflow::{reference_voltage, StateSolution};

#[derive(Debug, Error)]
pub enum WlsError {
    #[error("measurement {0} is not gaussian; this path only handles gaussian errors")]
    NonGaussian(usize),
    #[error("measurement {index} has an unresolvable target: {what}")]
    BadTarget { index: usize, what: String },
    #[error("bus {bus} phase {phase} hosts more than one device")]
    MultipleDevices { bus: String, phase: Phase },
    #[error("network has no reference bus")]
    NoReferenceBus,
    #[error("singular normal system; the measurement set does not pin down the state")]
    Singular,
    #[error("did not converge in {0} iterations")]
    NotConverged(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct WlsOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for WlsOptions {
    fn default() -> Self {
        WlsOptions {
            tol: 1e-12,
            max_iter: 50,
        }
    }
}

/// Injection flows and their voltage derivatives, dense per bus-phase.
struct Flows {
    /// Net complex power flowing from each bus-phase into the grid.
    s: Vec<Complex64>,
    /// Per bus-phase: (other bus-phase, dS/de, dS/df).
    jac: Vec<Vec<(usize, Complex64, Complex64)>>,
}

fn eval_flows(net: &Network, u: &[Complex64]) -> Flows {
    let nbp = net.bus_phases().len();
    let mut s = vec![Complex64::new(0.0, 0.0); nbp];
    let mut jac: Vec<Vec<(usize, Complex64, Complex64)>> = vec![Vec::new(); nbp];
    let i = Complex64::i();
    for (k, br) in net.branches.iter().enumerate() {
        let (fb, tb) = net.branch_end_indices(k);
        let phases: Vec<Phase> = net.branch_phases(k).iter().collect();
        let d = phases.len();
        let y = DMatrix::from_fn(d, d, |r, c| br.y_series.get(r, c));
        let zero = DMatrix::from_element(d, d, Complex64::new(0.0, 0.0));
        let shf = br
            .y_shunt_from
            .as_ref()
            .map(|m| DMatrix::from_fn(d, d, |r, c| m.get(r, c)))
            .unwrap_or_else(|| zero.clone());
        let sht = br
            .y_shunt_to
            .as_ref()
            .map(|m| DMatrix::from_fn(d, d, |r, c| m.get(r, c)))
            .unwrap_or(zero);
        let bp_f: Vec<usize> = phases
            .iter()
            .map(|&p| net.bus_phase_idx(fb, p).unwrap())
            .collect();
        let bp_t: Vec<usize> = phases
            .iter()
            .map(|&p| net.bus_phase_idx(tb, p).unwrap())
            .collect();
        for (own_bp, other_bp, m) in [(&bp_f, &bp_t, &shf + &y), (&bp_t, &bp_f, &sht + &y)] {
            let u_own = DVector::from_fn(d, |r, _| u[own_bp[r]]);
            let u_other = DVector::from_fn(d, |r, _| u[other_bp[r]]);
            let current = &m * &u_own - &y * &u_other;
            for r in 0..d {
                s[own_bp[r]] += u_own[r] * current[r].conj();
                let list = &mut jac[own_bp[r]];
                for c in 0..d {
                    let mut de = u_own[r] * m[(r, c)].conj();
                    let mut df = -i * de;
                    if r == c {
                        de += current[r].conj();
                        df += i * current[r].conj();
                    }
                    list.push((own_bp[c], de, df));
                    let ge = -u_own[r] * y[(r, c)].conj();
                    list.push((other_bp[c], ge, i * u_own[r] * y[(r, c)].conj()));
                }
            }
        }
    }
    Flows { s, jac }
}

pub fn wls_estimate(
    net: &Network,
    set: &MeasurementSet,
    options: &WlsOptions,
) -> Result<StateSolution, WlsError> {
    let ref_bus = net.reference_bus().ok_or(WlsError::NoReferenceBus)?;
    let nbp = net.bus_phases().len();

    // Variable map: (e, f) per non-reference bus-phase.
    let mut var_of: Vec<Option<usize>> = vec![None; nbp];
    let mut n_vars = 0usize;
    for (bp, &(bus, _)) in net.bus_phases().iter().enumerate() {
        if bus != ref_bus {
            var_of[bp] = Some(n_vars);
            n_vars += 2;
        }
    }

    // One device per bus-phase at most; remember its sign.
    let mut device_at: Vec<Option<(usize, f64)>> = vec![None; nbp];
    for (dp, &(d, p)) in net.device_phases().iter().enumerate() {
        let dev = &net.devices[d];
        let b = net.bus_idx(&dev.bus).unwrap();
        let bp = net.bus_phase_idx(b, p).unwrap();
        if device_at[bp].is_some() {
            return Err(WlsError::MultipleDevices {
                bus: dev.bus.clone(),
                phase: p,
            });
        }
        let sign = match dev.kind {
            DeviceKind::Generator => 1.0,
            DeviceKind::Load => -1.0,
        };
        device_at[bp] = Some((dp, sign));
    }

    // Resolve measurements into rows.
    enum Row {
        Magnitude { bp: usize, z: f64, w: f64 },
        Power { bp: usize, sign: f64, reactive: bool, z: f64, w: f64 },
    }
    let mut rows = Vec::new();
    let mut touched = vec![false; nbp];
    for (index, meas) in set.measurements.iter().enumerate() {
        let Some((mu, sigma)) = meas.model.gaussian_parameters() else {
            return Err(WlsError::NonGaussian(index));
        };
        // Pseudo baselines enter the likelihood with half the quadratic
        // weight of metered readings; mirror that here.
        let halved = match meas.kind {
            MeasurementKind::Real => 1.0,
            MeasurementKind::Pseudo => 0.5,
        };
        let bad = |what: &str| WlsError::BadTarget {
            index,
            what: what.to_string(),
        };
        match &meas.target {
            MeasurementTarget::VoltageMagnitude { bus, phase } => {
                let b = net.bus_idx(bus).ok_or_else(|| bad("unknown bus"))?;
                let bp = net
                    .bus_phase_idx(b, *phase)
                    .ok_or_else(|| bad("phase not on bus"))?;
                if b == ref_bus {
                    continue;
                }
                let base = net.buses[b].base_voltage_v;
                rows.push(Row::Magnitude {
                    bp,
                    z: mu / base,
                    w: halved * (base / sigma).powi(2),
                });
            }
            MeasurementTarget::DeviceActivePower { device, phase }
            | MeasurementTarget::DeviceReactivePower { device, phase } => {
                let d = net.device_idx(device).ok_or_else(|| bad("unknown device"))?;
                let dp = net
                    .device_phase_idx(d, *phase)
                    .ok_or_else(|| bad("phase not on device"))?;
                let b = net.bus_idx(&net.devices[d].bus).unwrap();
                let bp = net.bus_phase_idx(b, *phase).unwrap();
                let (dp_here, sign) = device_at[bp].ok_or_else(|| bad("no device slot"))?;
                debug_assert_eq!(dp_here, dp);
                touched[bp] = true;
                let k = 1e3 / net.s_base_va;
                rows.push(Row::Power {
                    bp,
                    sign,
                    reactive: matches!(
                        meas.target,
                        MeasurementTarget::DeviceReactivePower { .. }
                    ),
                    z: mu * k,
                    w: halved / (sigma * k).powi(2),
                });
            }
        }
    }

    // Zero-injection constraints: non-reference bus-phases with no device.
    let zero_inj: Vec<usize> = (0..nbp)
        .filter(|&bp| {
            let (bus, _) = net.bus_phases()[bp];
            bus != ref_bus && device_at[bp].is_none()
        })
        .collect();
    let n_con = 2 * zero_inj.len();

    // Flat start.
    let mut u: Vec<Complex64> = net
        .bus_phases()
        .iter()
        .map(|&(_, p)| reference_voltage(p))
        .collect();

    let pack = |u: &[Complex64], var_of: &[Option<usize>]| {
        let mut v = vec![0.0; n_vars];
        for (bp, slot) in var_of.iter().enumerate() {
            if let Some(i) = slot {
                v[*i] = u[bp].re;
                v[*i + 1] = u[bp].im;
            }
        }
        v
    };
    let mut v = pack(&u, &var_of);

    for iter in 0..options.max_iter {
        for (bp, slot) in var_of.iter().enumerate() {
            if let Some(i) = slot {
                u[bp] = Complex64::new(v[*i], v[*i + 1]);
            }
        }
        let flows = eval_flows(net, &u);

        let n_rows = rows.len();
        let mut jac = DMatrix::<f64>::zeros(n_rows, n_vars);
        let mut res = DVector::<f64>::zeros(n_rows);
        let mut weight = DVector::<f64>::zeros(n_rows);
        for (r, row) in rows.iter().enumerate() {
            match *row {
                Row::Magnitude { bp, z, w } => {
                    let mag = u[bp].norm();
                    res[r] = z - mag;
                    weight[r] = w;
                    if let Some(i) = var_of[bp] {
                        jac[(r, i)] = u[bp].re / mag;
                        jac[(r, i + 1)] = u[bp].im / mag;
                    }
                }
                Row::Power {
                    bp,
                    sign,
                    reactive,
                    z,
                    w,
                } => {
                    let h = if reactive {
                        sign * flows.s[bp].im
                    } else {
                        sign * flows.s[bp].re
                    };
                    res[r] = z - h;
                    weight[r] = w;
                    for &(col_bp, de, df) in &flows.jac[bp] {
                        if let Some(i) = var_of[col_bp] {
                            let (ge, gf) = if reactive {
                                (de.im, df.im)
                            } else {
                                (de.re, df.re)
                            };
                            jac[(r, i)] += sign * ge;
                            jac[(r, i + 1)] += sign * gf;
                        }
                    }
                }
            }
        }

        let mut cons = DMatrix::<f64>::zeros(n_con, n_vars);
        let mut cval = DVector::<f64>::zeros(n_con);
        for (k, &bp) in zero_inj.iter().enumerate() {
            cval[2 * k] = flows.s[bp].re;
            cval[2 * k + 1] = flows.s[bp].im;
            for &(col_bp, de, df) in &flows.jac[bp] {
                if let Some(i) = var_of[col_bp] {
                    cons[(2 * k, i)] += de.re;
                    cons[(2 * k, i + 1)] += df.re;
                    cons[(2 * k + 1, i)] += de.im;
                    cons[(2 * k + 1, i + 1)] += df.im;
                }
            }
        }

        // Dense KKT step.
        let mut jw = jac.clone();
        for r in 0..n_rows {
            for c in 0..n_vars {
                jw[(r, c)] *= weight[r];
            }
        }
        let h = jac.transpose() * &jw;
        let g = jac.transpose()
            * DVector::from_fn(n_rows, |r, _| weight[r] * res[r]);
        let dim = n_vars + n_con;
        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        kkt.view_mut((0, 0), (n_vars, n_vars)).copy_from(&h);
        kkt.view_mut((0, n_vars), (n_vars, n_con))
            .copy_from(&cons.transpose());
        kkt.view_mut((n_vars, 0), (n_con, n_vars)).copy_from(&cons);
        let mut rhs = DVector::<f64>::zeros(dim);
        rhs.rows_mut(0, n_vars).copy_from(&g);
        rhs.rows_mut(n_vars, n_con).copy_from(&(-&cval));
        let step = kkt.lu().solve(&rhs).ok_or(WlsError::Singular)?;
        let mut worst: f64 = 0.0;
        for c in 0..n_vars {
            v[c] += step[c];
            worst = worst.max(step[c].abs());
        }
        if worst < options.tol {
            for (bp, slot) in var_of.iter().enumerate() {
                if let Some(i) = slot {
                    u[bp] = Complex64::new(v[*i], v[*i + 1]);
                }
            }
            // Recover device powers from the final flows.
            let flows = eval_flows(net, &u);
            let mut s_dev = vec![Complex64::new(0.0, 0.0); net.device_phases().len()];
            for bp in 0..nbp {
                if let Some((dp, sign)) = device_at[bp] {
                    s_dev[dp] = sign * flows.s[bp];
                }
            }
            return Ok(StateSolution { u, s: s_dev });
        }
        if iter + 1 == options.max_iter {
            break;
        }
    }
    Err(WlsError::NotConverged(options.max_iter))
}
