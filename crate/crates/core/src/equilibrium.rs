//! Scheduled operating points and post-disturbance closed-loop equilibria.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ndae::NdaeModel;
use crate::powerflow::PfSolution;

#[derive(Debug, Clone)]
pub struct OperatingPoint {
    pub x_d: DVector<f64>,
    pub x_a: DVector<f64>,
    pub u_ref: DVector<f64>,
    pub q: DVector<f64>,
    pub residual_norm: f64,
}

/// Rotor angle offset φ = δ − θ and internal voltage E′ that produce (P, Q)
/// at terminal voltage v.
pub fn invert_machine(p: f64, q: f64, v: f64, x_dp: f64, x_q: f64) -> Result<(f64, f64)> {
    if !(v > 0.0) {
        return Err(Error::Validation(format!("machine terminal voltage {v} is not positive")));
    }
    let a = (x_dp + x_q) / (2.0 * x_dp * x_q);
    let c = (x_q - x_dp) / (2.0 * x_dp * x_q);
    let v2 = v * v;
    let g = |phi: f64| (q + a * v2 + c * v2 * (2.0 * phi).cos()) * phi.tan() - c * v2 * (2.0 * phi).sin() - p;
    let dg = |phi: f64| {
        let sec = 1.0 / phi.cos();
        -2.0 * c * v2 * (2.0 * phi).sin() * phi.tan() + (q + a * v2 + c * v2 * (2.0 * phi).cos()) * sec * sec
            - 2.0 * c * v2 * (2.0 * phi).cos()
    };
    let mut phi = (x_q * p).atan2(v2 + x_q * q);
    let mut converged = false;
    for _ in 0..50 {
        let r = g(phi);
        if r.abs() < 1e-14 {
            converged = true;
            break;
        }
        let step = r / dg(phi);
        phi -= step;
        if !phi.is_finite() || phi.abs() >= std::f64::consts::FRAC_PI_2 {
            break;
        }
        if step.abs() < 1e-15 {
            converged = true;
            break;
        }
    }
    if !converged || phi.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(Error::Validation(format!("no stable rotor angle delivers P = {p:.4}, Q = {q:.4} at v = {v:.4}")));
    }
    let e = x_dp * (q + a * v2 + c * v2 * (2.0 * phi).cos()) / (v * phi.cos());
    Ok((phi, e))
}

/// Equilibrium with ẋ_d = 0 and ω = ω0 consistent with a power-flow solution.
pub fn steady_state(model: &NdaeModel, pf: &PfSolution, q_k: &DVector<f64>) -> Result<OperatingPoint> {
    let idx = &model.idx;
    let mut x_a = DVector::zeros(idx.n_a);
    for i in 0..idx.g {
        x_a[idx.p_g(i)] = pf.p_gen[i];
        x_a[idx.q_g(i)] = pf.q_gen[i];
    }
    for b in 0..idx.n {
        x_a[idx.v(b)] = pf.v[b];
        x_a[idx.theta(b)] = pf.theta[b];
    }
    let mut x_d = DVector::zeros(idx.n_d);
    let mut u = DVector::zeros(idx.n_u);
    for (i, gp) in model.gens.iter().enumerate() {
        let b = idx.gen_buses[i];
        let (v, theta) = (pf.v[b], pf.theta[b]);
        let (phi, e) = invert_machine(pf.p_gen[i], pf.q_gen[i], v, gp.x_d_prime, gp.x_q)?;
        x_d[idx.delta(i)] = theta + phi;
        x_d[idx.omega(i)] = model.omega0;
        x_d[idx.e_prime(i)] = e;
        x_d[idx.t_m(i)] = pf.p_gen[i];
        u[idx.t_r(i)] = pf.p_gen[i];
        u[idx.e_fd(i)] = gp.x_d / gp.x_d_prime * e - (gp.x_d - gp.x_d_prime) / gp.x_d_prime * v * phi.cos();
    }
    let zero = DVector::zeros(idx.n_d);
    let residual_norm = model.eval_residual(&x_d, &zero, &x_a, &u, q_k)?.norm_inf();
    Ok(OperatingPoint { x_d, x_a, u_ref: u, q: q_k.clone(), residual_norm })
}

/// Closed-loop rest point under u = u_ref + K(x_d − x_d^k) and disturbance q_e.
///
/// The δ rows read ω = ω0 exactly, so ω is fixed and eliminated and Newton
/// runs on the remaining unknowns.
pub fn post_disturbance_equilibrium(
    model: &NdaeModel,
    k_d: &DMatrix<f64>,
    op: &OperatingPoint,
    q_e: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let idx = &model.idx;
    if k_d.nrows() != idx.n_u || k_d.ncols() != idx.n_d {
        return Err(Error::Dimension { what: "gain rows x cols", expected: idx.n_u * idx.n_d, got: k_d.nrows() * k_d.ncols() });
    }
    if !q_e.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("q_e"));
    }
    let free_d: Vec<usize> = (0..idx.n_d).filter(|j| !idx.omega_range().contains(j)).collect();
    let rows_d: Vec<usize> = (idx.g..idx.n_d).collect();
    let nf = free_d.len();
    let n = nf + idx.n_a;

    let unpack = |z: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        let mut x_d = op.x_d.clone();
        for (k, &j) in free_d.iter().enumerate() {
            x_d[j] = z[k];
        }
        for i in 0..idx.g {
            x_d[idx.omega(i)] = model.omega0;
        }
        (x_d, z.rows(nf, idx.n_a).into_owned())
    };
    let eval = |z: &DVector<f64>| -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let (x_d, x_a) = unpack(z);
        let u = &op.u_ref + k_d * (&x_d - &op.x_d);
        let fd = model.rhs_d(&x_d, &x_a, &u);
        let ra = model.residual_a(&x_d, &x_a, q_e);
        let mut f = DVector::zeros(n);
        for (k, &r) in rows_d.iter().enumerate() {
            f[k] = fd[r];
        }
        f.rows_mut(nf, idx.n_a).copy_from(&ra);
        (f, x_d, x_a)
    };

    let mut z = DVector::zeros(n);
    for (k, &j) in free_d.iter().enumerate() {
        z[k] = op.x_d[j];
    }
    z.rows_mut(nf, idx.n_a).copy_from(&op.x_a);

    let bk = &model.b_d * k_d;
    let (mut f, mut x_d, mut x_a) = eval(&z);
    let mut norm = f.amax();
    for iter in 0..60 {
        if norm < 1e-11 {
            return Ok((x_d, x_a));
        }
        let jac = model.eval_jacobians(&x_d, &x_a)?;
        let mut j = DMatrix::zeros(n, n);
        for (r, &row) in rows_d.iter().enumerate() {
            for (c, &col) in free_d.iter().enumerate() {
                j[(r, c)] = jac.fd_xd[(row, col)] + bk[(row, col)];
            }
            for c in 0..idx.n_a {
                j[(r, nf + c)] = jac.fd_xa[(row, c)];
            }
        }
        for r in 0..idx.n_a {
            for (c, &col) in free_d.iter().enumerate() {
                j[(nf + r, c)] = jac.fa_xd[(r, col)];
            }
            for c in 0..idx.n_a {
                j[(nf + r, nf + c)] = jac.fa_xa[(r, c)];
            }
        }
        let dz = j.lu().solve(&(-&f)).ok_or(Error::SingularJacobian("post-disturbance equilibrium"))?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=40 {
            let trial = &z + &dz * alpha;
            let (ft, xdt, xat) = eval(&trial);
            let nt = ft.amax();
            if nt.is_finite() && (nt < norm || nt < 1e-11) {
                z = trial;
                f = ft;
                x_d = xdt;
                x_a = xat;
                norm = nt;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence { what: "post-disturbance equilibrium", iterations: iter + 1, residual: norm });
        }
    }
    if norm < 1e-11 {
        Ok((x_d, x_a))
    } else {
        Err(Error::NonConvergence { what: "post-disturbance equilibrium", iterations: 60, residual: norm })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unloaded_machine_rests_at_zero_angle() {
        let (phi, e) = invert_machine(0.0, 0.0, 1.0, 0.3, 0.8).unwrap();
        assert_eq!(phi, 0.0);
        assert!((e - 1.0).abs() < 1e-14);
    }

    #[test]
    fn inversion_reproduces_power() {
        let (x_dp, x_q, v) = (0.12, 0.86, 1.02);
        let (p, q) = (1.63, 0.07);
        let (phi, e) = invert_machine(p, q, v, x_dp, x_q).unwrap();
        let c = (x_q - x_dp) / (2.0 * x_dp * x_q);
        let pp = e * v * phi.sin() / x_dp - c * v * v * (2.0 * phi).sin();
        let qq = e * v * phi.cos() / x_dp - (x_dp + x_q) / (2.0 * x_dp * x_q) * v * v - c * v * v * (2.0 * phi).cos();
        assert!((pp - p).abs() < 1e-12 && (qq - q).abs() < 1e-12);
    }
}
