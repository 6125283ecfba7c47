//! Primal-dual interior-point solver for smooth nonlinear programs with
//! equality constraints and variable box bounds:
//!
//!   minimize f(x)  subject to  c(x) = 0,  l <= x <= u.
//!
//! Bounds are handled by a log barrier with a monotone decrease of the
//! barrier parameter. Each iteration solves the symmetric saddle system
//! [[H + Sigma + dw I, J'], [J, -dc I]] by sparse LDL^T, correcting the
//! diagonal shifts until the inertia is right, then backtracks on an l1
//! merit function under a fraction-to-boundary rule.
//!
//! Badly scaled objectives (near-exact measurements carry weights around
//! 1e16, whose gradients cannot be evaluated below about w*eps absolute
//! error) are handled by gradient-based objective scaling: when the
//! initial gradient norm exceeds 100 the internal objective is multiplied
//! by s_f = 100/|grad|_inf and optimality is tested in the scaled space.
//! Reported objective value and multipliers are unscaled.

pub mod ldl;

use ldl::{factor, LdlError, TripletMap};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NlpError {
    #[error("variable {0} has lower bound above upper bound")]
    InvalidBounds(usize),
    #[error("model reported no variables")]
    Empty,
}

pub trait NlpModel {
    fn num_variables(&self) -> usize;
    fn num_equalities(&self) -> usize;
    /// Per-variable (lower, upper); infinities mark absent bounds.
    fn bounds(&self) -> Vec<(f64, f64)>;
    fn initial_point(&self) -> Vec<f64>;
    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    fn equalities(&self, x: &[f64], out: &mut [f64]);
    /// Constraint Jacobian as (row, col, value) triplets. The pattern must
    /// be identical on every call; positions may repeat and then sum.
    fn jacobian(&self, x: &[f64], out: &mut Vec<(usize, usize, f64)>);
    /// Upper-triangle triplets (i <= j) of
    /// sigma_f * hess(f) + sum_k lambda_k * hess(c_k),
    /// fixed pattern across calls, repeated positions summing.
    fn lagrangian_hessian(
        &self,
        x: &[f64],
        sigma_f: f64,
        lambda: &[f64],
        out: &mut Vec<(usize, usize, f64)>,
    );
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct NlpOptions {
    pub tol_stat: f64,
    pub tol_feas: f64,
    pub tol_comp: f64,
    pub mu_init: f64,
    pub max_iter: usize,
}

impl Default for NlpOptions {
    fn default() -> Self {
        NlpOptions {
            tol_stat: 1e-6,
            tol_feas: 1e-8,
            tol_comp: 1e-6,
            mu_init: 1e-2,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlpStatus {
    Optimal,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct NlpSolution {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: NlpStatus,
    pub stat_err: f64,
    pub feas_err: f64,
    pub comp_err: f64,
}

struct Errors {
    stat: f64,
    feas: f64,
    comp: f64,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, &b| a.max(b.abs()))
}

pub fn solve<M: NlpModel + ?Sized>(
    model: &M,
    options: &NlpOptions,
) -> Result<NlpSolution, NlpError> {
    let n = model.num_variables();
    let m = model.num_equalities();
    if n == 0 {
        return Err(NlpError::Empty);
    }
    let bounds = model.bounds();
    assert_eq!(bounds.len(), n);
    for (i, &(l, u)) in bounds.iter().enumerate() {
        if l > u {
            return Err(NlpError::InvalidBounds(i));
        }
    }
    let has_l: Vec<bool> = bounds.iter().map(|b| b.0.is_finite()).collect();
    let has_u: Vec<bool> = bounds.iter().map(|b| b.1.is_finite()).collect();
    let n_bounds = has_l.iter().filter(|&&b| b).count() + has_u.iter().filter(|&&b| b).count();

    let mut mu = options.mu_init;
    let mu_min = (options.tol_comp.min(options.tol_stat)) / 20.0;

    // Start strictly interior.
    let mut x = model.initial_point();
    assert_eq!(x.len(), n);
    for i in 0..n {
        let (l, u) = bounds[i];
        match (has_l[i], has_u[i]) {
            (true, true) => {
                let pl = (1e-2 * l.abs().max(1.0)).min(0.5 * (u - l));
                let pu = (1e-2 * u.abs().max(1.0)).min(0.5 * (u - l));
                x[i] = x[i].clamp(l + pl.min(0.25 * (u - l)), u - pu.min(0.25 * (u - l)));
                if u == l {
                    x[i] = l;
                }
            }
            (true, false) => x[i] = x[i].max(l + 1e-2 * l.abs().max(1.0)),
            (false, true) => x[i] = x[i].min(u - 1e-2 * u.abs().max(1.0)),
            (false, false) => {}
        }
    }
    // Gradient-based objective scaling, fixed at the initial point.
    let mut grad0 = vec![0.0; n];
    model.gradient(&x, &mut grad0);
    let g0 = inf_norm(&grad0);
    let s_f = if g0.is_finite() && g0 > 100.0 {
        100.0 / g0
    } else {
        1.0
    };

    let mut lambda = vec![0.0; m];
    let mut z_l = vec![0.0; n];
    let mut z_u = vec![0.0; n];
    for i in 0..n {
        if has_l[i] {
            z_l[i] = (mu / (x[i] - bounds[i].0)).clamp(1e-8, 1e8);
        }
        if has_u[i] {
            z_u[i] = (mu / (bounds[i].1 - x[i])).clamp(1e-8, 1e8);
        }
    }

    // Work areas.
    let mut grad = vec![0.0; n];
    let mut con = vec![0.0; m];
    let mut jac = Vec::new();
    let mut hess = Vec::new();

    // Freeze the KKT pattern from the first evaluation.
    model.jacobian(&x, &mut jac);
    model.lagrangian_hessian(&x, s_f, &lambda, &mut hess);
    let j_len = jac.len();
    let h_len = hess.len();
    let dim = n + m;
    let mut positions: Vec<(usize, usize)> = Vec::with_capacity(h_len + j_len + dim);
    for &(i, j, _) in &hess {
        debug_assert!(i <= j, "hessian triplets must be upper-triangle");
        positions.push((i, j));
    }
    for &(r, c, _) in &jac {
        positions.push((c, n + r));
    }
    for i in 0..dim {
        positions.push((i, i));
    }
    let mut kkt = TripletMap::new(dim, &positions);
    let mut fill_values = vec![0.0; positions.len()];

    let mut delta_w_last = 0.0f64;
    let mut nu = 1.0f64;
    let mut stalls = 0usize;
    let mut status = NlpStatus::MaxIterations;
    let mut iterations = options.max_iter;

    let barrier = |x: &[f64]| -> f64 {
        let mut b = 0.0;
        for i in 0..n {
            if has_l[i] {
                b -= (x[i] - bounds[i].0).ln();
            }
            if has_u[i] {
                b -= (bounds[i].1 - x[i]).ln();
            }
        }
        b
    };

    let errors = |grad: &[f64],
                  con: &[f64],
                  jac: &[(usize, usize, f64)],
                  x: &[f64],
                  lambda: &[f64],
                  z_l: &[f64],
                  z_u: &[f64],
                  mu: f64|
     -> Errors {
        let mut r_d = grad.to_vec();
        for &(r, c, v) in jac {
            r_d[c] += v * lambda[r];
        }
        for i in 0..n {
            r_d[i] -= z_l[i];
            r_d[i] += z_u[i];
        }
        let z_sum: f64 = z_l.iter().chain(z_u.iter()).map(|v| v.abs()).sum();
        let l_sum: f64 = lambda.iter().map(|v| v.abs()).sum();
        let s_d = ((l_sum + z_sum) / ((m + n_bounds).max(1) as f64)).max(100.0) / 100.0;
        let s_c = if n_bounds == 0 {
            1.0
        } else {
            (z_sum / n_bounds as f64).max(100.0) / 100.0
        };
        let mut comp: f64 = 0.0;
        for i in 0..n {
            if has_l[i] {
                comp = comp.max(((x[i] - bounds[i].0) * z_l[i] - mu).abs());
            }
            if has_u[i] {
                comp = comp.max(((bounds[i].1 - x[i]) * z_u[i] - mu).abs());
            }
        }
        Errors {
            stat: inf_norm(&r_d) / s_d,
            feas: inf_norm(con),
            comp: comp / s_c,
        }
    };

    let trace = std::env::var_os("DSSE_NLP_TRACE").is_some();
    let mut f = s_f * model.objective(&x);
    for iter in 0..options.max_iter {
        model.gradient(&x, &mut grad);
        for g in grad.iter_mut() {
            *g *= s_f;
        }
        model.equalities(&x, &mut con);
        model.jacobian(&x, &mut jac);
        assert_eq!(jac.len(), j_len, "jacobian pattern changed");

        let e0 = errors(&grad, &con, &jac, &x, &lambda, &z_l, &z_u, 0.0);
        if trace {
            eprintln!(
                "it {iter:3} f {f:13.6e} stat {:9.3e} feas {:9.3e} comp {:9.3e} mu {mu:9.3e}",
                e0.stat, e0.feas, e0.comp
            );
        }
        if e0.stat <= options.tol_stat
            && e0.feas <= options.tol_feas
            && e0.comp <= options.tol_comp
        {
            status = NlpStatus::Optimal;
            iterations = iter;
            break;
        }
        // Tighten the barrier while the current iterate already meets it.
        loop {
            let em = errors(&grad, &con, &jac, &x, &lambda, &z_l, &z_u, mu);
            let worst = em.stat.max(em.feas).max(em.comp);
            if worst <= 10.0 * mu && mu > mu_min {
                mu = (mu_min).max((0.2 * mu).min(mu.powf(1.5)));
            } else {
                break;
            }
        }
        let tau = 0.99f64.max(1.0 - mu);

        model.lagrangian_hessian(&x, s_f, &lambda, &mut hess);
        assert_eq!(hess.len(), h_len, "hessian pattern changed");

        // Primal-dual barrier term on the variable diagonal.
        let mut sigma = vec![0.0; n];
        for i in 0..n {
            if has_l[i] {
                sigma[i] += z_l[i] / (x[i] - bounds[i].0);
            }
            if has_u[i] {
                sigma[i] += z_u[i] / (bounds[i].1 - x[i]);
            }
        }

        // Right-hand side.
        let mut rhs = vec![0.0; dim];
        for i in 0..n {
            let mut g = grad[i];
            if has_l[i] {
                g -= mu / (x[i] - bounds[i].0);
            }
            if has_u[i] {
                g += mu / (bounds[i].1 - x[i]);
            }
            rhs[i] = -g;
        }
        for &(r, c, v) in &jac {
            rhs[c] -= v * lambda[r];
        }
        for r in 0..m {
            rhs[n + r] = -con[r];
        }

        // Factor with inertia correction.
        let mut delta_w = 0.0;
        let mut delta_c = 0.0;
        let mut step = None;
        for attempt in 0..60 {
            for (slot, &(i, j, v)) in hess.iter().enumerate() {
                let _ = (i, j);
                fill_values[slot] = v;
            }
            for (k, &(_, _, v)) in jac.iter().enumerate() {
                fill_values[h_len + k] = v;
            }
            for i in 0..n {
                fill_values[h_len + j_len + i] = sigma[i] + delta_w;
            }
            for r in 0..m {
                fill_values[h_len + j_len + n + r] = -delta_c;
            }
            kkt.fill(&fill_values);
            match factor(kkt.matrix()) {
                Ok(fac) if fac.inertia() == (n, m) => {
                    let mut s = rhs.clone();
                    fac.solve_in_place(&mut s);
                    // Two rounds of iterative refinement against the
                    // regularized system.
                    let mut resid = vec![0.0; dim];
                    for _ in 0..2 {
                        kkt.matrix().mul_vec(&s, &mut resid);
                        for i in 0..dim {
                            resid[i] = rhs[i] - resid[i];
                        }
                        let mut corr = resid.clone();
                        fac.solve_in_place(&mut corr);
                        for i in 0..dim {
                            s[i] += corr[i];
                        }
                    }
                    if s.iter().all(|v| v.is_finite()) {
                        if delta_w > 0.0 {
                            delta_w_last = delta_w;
                        }
                        step = Some(s);
                        break;
                    }
                }
                Ok(_) | Err(LdlError::ZeroPivot(_)) => {}
            }
            if attempt == 0 {
                delta_c = 1e-8 * mu.powf(0.25);
                delta_w = if delta_w_last == 0.0 {
                    1e-4
                } else {
                    (delta_w_last / 3.0).max(1e-20)
                };
            } else {
                delta_w *= 8.0;
            }
            if delta_w > 1e40 {
                break;
            }
        }
        let Some(step) = step else {
            status = NlpStatus::NumericalFailure;
            iterations = iter;
            break;
        };
        let dx = &step[..n];
        let dl = &step[n..];

        let mut dz_l = vec![0.0; n];
        let mut dz_u = vec![0.0; n];
        for i in 0..n {
            if has_l[i] {
                let g = x[i] - bounds[i].0;
                dz_l[i] = mu / g - z_l[i] - z_l[i] * dx[i] / g;
            }
            if has_u[i] {
                let g = bounds[i].1 - x[i];
                dz_u[i] = mu / g - z_u[i] + z_u[i] * dx[i] / g;
            }
        }

        // Fraction-to-boundary step caps.
        let mut alpha_pr_max: f64 = 1.0;
        let mut alpha_du_max: f64 = 1.0;
        for i in 0..n {
            if has_l[i] {
                let g = x[i] - bounds[i].0;
                if dx[i] < 0.0 {
                    alpha_pr_max = alpha_pr_max.min(-tau * g / dx[i]);
                }
                if dz_l[i] < 0.0 {
                    alpha_du_max = alpha_du_max.min(-tau * z_l[i] / dz_l[i]);
                }
            }
            if has_u[i] {
                let g = bounds[i].1 - x[i];
                if dx[i] > 0.0 {
                    alpha_pr_max = alpha_pr_max.min(tau * g / dx[i]);
                }
                if dz_u[i] < 0.0 {
                    alpha_du_max = alpha_du_max.min(-tau * z_u[i] / dz_u[i]);
                }
            }
        }

        // l1 merit line search.
        let dl_full: Vec<f64> = lambda.iter().zip(dl).map(|(l, d)| l + d).collect();
        nu = nu.max(1.1 * inf_norm(&dl_full) + 1.0);
        let c_l1: f64 = con.iter().map(|v| v.abs()).sum();
        let phi0 = f + mu * barrier(&x) + nu * c_l1;
        let mut dphi = -nu * c_l1;
        for i in 0..n {
            let mut g = grad[i];
            if has_l[i] {
                g -= mu / (x[i] - bounds[i].0);
            }
            if has_u[i] {
                g += mu / (bounds[i].1 - x[i]);
            }
            dphi += g * dx[i];
        }
        let mut alpha = alpha_pr_max;
        let mut accepted = false;
        let mut x_trial = x.clone();
        let mut f_trial = f;
        for _ in 0..40 {
            for i in 0..n {
                x_trial[i] = x[i] + alpha * dx[i];
            }
            f_trial = s_f * model.objective(&x_trial);
            model.equalities(&x_trial, &mut con);
            let c_trial: f64 = con.iter().map(|v| v.abs()).sum();
            let phi = f_trial + mu * barrier(&x_trial) + nu * c_trial;
            if phi.is_finite() && phi <= phi0 + 1e-4 * alpha * dphi.min(0.0) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                break;
            }
        }
        if trace {
            eprintln!(
                "       alpha {alpha:9.3e} a_du {alpha_du_max:9.3e} dw {delta_w:9.3e} ok {accepted}"
            );
        }
        if !accepted {
            stalls += 1;
            if stalls >= 8 {
                status = NlpStatus::NumericalFailure;
                iterations = iter;
                break;
            }
        } else {
            stalls = 0;
        }
        x = x_trial;
        f = f_trial;
        for r in 0..m {
            lambda[r] += alpha * dl[r];
        }
        for i in 0..n {
            if has_l[i] {
                z_l[i] += alpha_du_max * dz_l[i];
                // Keep duals consistent with the barrier path.
                let g = x[i] - bounds[i].0;
                z_l[i] = z_l[i].clamp(mu / (1e10 * g), 1e10 * mu / g);
            }
            if has_u[i] {
                z_u[i] += alpha_du_max * dz_u[i];
                let g = bounds[i].1 - x[i];
                z_u[i] = z_u[i].clamp(mu / (1e10 * g), 1e10 * mu / g);
            }
        }
    }

    model.gradient(&x, &mut grad);
    for g in grad.iter_mut() {
        *g *= s_f;
    }
    model.equalities(&x, &mut con);
    model.jacobian(&x, &mut jac);
    let e = errors(&grad, &con, &jac, &x, &lambda, &z_l, &z_u, 0.0);
    if status == NlpStatus::MaxIterations
        && e.stat <= options.tol_stat
        && e.feas <= options.tol_feas
        && e.comp <= options.tol_comp
    {
        status = NlpStatus::Optimal;
    }
    for l in lambda.iter_mut() {
        *l /= s_f;
    }
    for z in z_l.iter_mut().chain(z_u.iter_mut()) {
        *z /= s_f;
    }
    Ok(NlpSolution {
        objective: model.objective(&x),
        x,
        lambda,
        z_lower: z_l,
        z_upper: z_u,
        iterations,
        status,
        stat_err: e.stat,
        feas_err: e.feas,
        comp_err: e.comp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::presets;
    use nalgebra::{DMatrix, DVector};

    /// min 1/2 x'Qx - b'x subject to A x = a, with optional boxes.
    struct Qp {
        q: DMatrix<f64>,
        b: DVector<f64>,
        a_mat: DMatrix<f64>,
        a_rhs: DVector<f64>,
        bounds: Vec<(f64, f64)>,
        x0: Vec<f64>,
    }

    impl NlpModel for Qp {
        fn num_variables(&self) -> usize {
            self.b.len()
        }
        fn num_equalities(&self) -> usize {
            self.a_rhs.len()
        }
        fn bounds(&self) -> Vec<(f64, f64)> {
            self.bounds.clone()
        }
        fn initial_point(&self) -> Vec<f64> {
            self.x0.clone()
        }
        fn objective(&self, x: &[f64]) -> f64 {
            let xv = DVector::from_column_slice(x);
            (0.5 * xv.transpose() * &self.q * &xv - self.b.transpose() * &xv)[(0, 0)]
        }
        fn gradient(&self, x: &[f64], out: &mut [f64]) {
            let xv = DVector::from_column_slice(x);
            let g = &self.q * &xv - &self.b;
            out.copy_from_slice(g.as_slice());
        }
        fn equalities(&self, x: &[f64], out: &mut [f64]) {
            let xv = DVector::from_column_slice(x);
            let r = &self.a_mat * &xv - &self.a_rhs;
            out.copy_from_slice(r.as_slice());
        }
        fn jacobian(&self, _x: &[f64], out: &mut Vec<(usize, usize, f64)>) {
            out.clear();
            for r in 0..self.a_mat.nrows() {
                for c in 0..self.a_mat.ncols() {
                    out.push((r, c, self.a_mat[(r, c)]));
                }
            }
        }
        fn lagrangian_hessian(
            &self,
            _x: &[f64],
            sigma_f: f64,
            _lambda: &[f64],
            out: &mut Vec<(usize, usize, f64)>,
        ) {
            out.clear();
            for i in 0..self.q.nrows() {
                for j in i..self.q.ncols() {
                    out.push((i, j, sigma_f * self.q[(i, j)]));
                }
            }
        }
    }

    fn free(n: usize) -> Vec<(f64, f64)> {
        vec![(f64::NEG_INFINITY, f64::INFINITY); n]
    }

    #[test]
    fn equality_constrained_qp_matches_dense_kkt_solution() {
        let q = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let a_mat = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let a_rhs = DVector::from_vec(vec![1.0]);
        // Reference from the dense KKT system.
        let mut kkt = DMatrix::<f64>::zeros(4, 4);
        kkt.view_mut((0, 0), (3, 3)).copy_from(&q);
        kkt.view_mut((0, 3), (3, 1)).copy_from(&a_mat.transpose());
        kkt.view_mut((3, 0), (1, 3)).copy_from(&a_mat);
        let rhs = DVector::from_vec(vec![1.0, -2.0, 0.5, 1.0]);
        let want = kkt.lu().solve(&rhs).unwrap();

        let model = Qp {
            q,
            b,
            a_mat,
            a_rhs,
            bounds: free(3),
            x0: vec![0.0; 3],
        };
        let sol = solve(&model, &NlpOptions::default()).unwrap();
        assert_eq!(sol.status, NlpStatus::Optimal);
        for i in 0..3 {
            assert!(
                (sol.x[i] - want[i]).abs() < 1e-7,
                "x[{i}] = {}, want {}",
                sol.x[i],
                want[i]
            );
        }
        // Same multiplier convention on both sides: grad f + J' lambda = 0.
        assert!((sol.lambda[0] - want[3]).abs() < 1e-6);
    }

    #[test]
    fn upper_bound_becomes_active() {
        // min (x-2)^2 with x <= 1: solution x = 1 with positive upper dual.
        let model = Qp {
            q: DMatrix::from_row_slice(1, 1, &[2.0]),
            b: DVector::from_vec(vec![4.0]),
            a_mat: DMatrix::zeros(0, 1),
            a_rhs: DVector::zeros(0),
            bounds: vec![(f64::NEG_INFINITY, 1.0)],
            x0: vec![0.0],
        };
        let sol = solve(&model, &NlpOptions::default()).unwrap();
        assert_eq!(sol.status, NlpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-6, "x = {}", sol.x[0]);
        assert!(sol.z_upper[0] > 1.0, "dual = {}", sol.z_upper[0]);
    }

    #[test]
    fn equality_and_bound_interact() {
        // min x^2 + y^2 with x + y = 1 and x <= 0.2: x = 0.2, y = 0.8.
        let model = Qp {
            q: DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]),
            b: DVector::zeros(2),
            a_mat: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            a_rhs: DVector::from_vec(vec![1.0]),
            bounds: vec![(f64::NEG_INFINITY, 0.2), (f64::NEG_INFINITY, f64::INFINITY)],
            x0: vec![0.0, 0.0],
        };
        let sol = solve(&model, &NlpOptions::default()).unwrap();
        assert_eq!(sol.status, NlpStatus::Optimal);
        assert!((sol.x[0] - 0.2).abs() < 1e-6);
        assert!((sol.x[1] - 0.8).abs() < 1e-6);
    }

    /// Negative log-density of the four-parameter beta demand model; the
    /// minimizer inside the support is the distribution mode.
    struct BetaMode {
        model: crate::distributions::UncertaintyModel,
        lo: f64,
        hi: f64,
    }

    impl NlpModel for BetaMode {
        fn num_variables(&self) -> usize {
            1
        }
        fn num_equalities(&self) -> usize {
            0
        }
        fn bounds(&self) -> Vec<(f64, f64)> {
            vec![(self.lo, self.hi)]
        }
        fn initial_point(&self) -> Vec<f64> {
            vec![0.5 * (self.lo + self.hi)]
        }
        fn objective(&self, x: &[f64]) -> f64 {
            -self.model.logpdf(x[0])
        }
        fn gradient(&self, x: &[f64], out: &mut [f64]) {
            out[0] = -self.model.dlogpdf(x[0]).unwrap();
        }
        fn equalities(&self, _x: &[f64], _out: &mut [f64]) {}
        fn jacobian(&self, _x: &[f64], out: &mut Vec<(usize, usize, f64)>) {
            out.clear();
        }
        fn lagrangian_hessian(
            &self,
            x: &[f64],
            sigma_f: f64,
            _lambda: &[f64],
            out: &mut Vec<(usize, usize, f64)>,
        ) {
            out.clear();
            out.push((0, 0, -sigma_f * self.model.d2logpdf(x[0]).unwrap()));
        }
    }

    #[test]
    fn beta_negative_log_density_minimizes_at_the_mode() {
        let model = presets::beta_demand();
        let (lo, hi) = model.support();
        let nlp = BetaMode {
            lo: lo + 1e-9,
            hi: hi - 1e-9,
            model,
        };
        let sol = solve(&nlp, &NlpOptions::default()).unwrap();
        assert_eq!(sol.status, NlpStatus::Optimal);
        // Frozen mode of the demand fit.
        assert!(
            (sol.x[0] - 0.158300027756000).abs() < 1e-6,
            "mode = {}",
            sol.x[0]
        );
    }

    #[test]
    fn inconsistent_constraints_fail_gracefully() {
        // x + y = 1 and x + y = 2 cannot both hold.
        let model = Qp {
            q: DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]),
            b: DVector::zeros(2),
            a_mat: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            a_rhs: DVector::from_vec(vec![1.0, 2.0]),
            bounds: free(2),
            x0: vec![0.0, 0.0],
        };
        let sol = solve(&model, &NlpOptions::default()).unwrap();
        assert_ne!(sol.status, NlpStatus::Optimal);
    }

    #[test]
    fn crossing_bounds_are_rejected() {
        let model = Qp {
            q: DMatrix::from_row_slice(1, 1, &[2.0]),
            b: DVector::zeros(1),
            a_mat: DMatrix::zeros(0, 1),
            a_rhs: DVector::zeros(0),
            bounds: vec![(1.0, -1.0)],
            x0: vec![0.0],
        };
        assert!(matches!(
            solve(&model, &NlpOptions::default()),
            Err(NlpError::InvalidBounds(0))
        ));
    }
}
