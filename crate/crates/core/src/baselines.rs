//! Controllers: the load/renewable-following state feedback, a linearized
//! LQR design, and single-area AGC.

use nalgebra::{DMatrix, DVector};

use crate::daesolve::Controller;
use crate::equilibrium::OperatingPoint;
use crate::error::{Error, Result};
use crate::ndae::NdaeModel;

/// u = u_ref + K (x_d − x_d_ref). Independent of the algebraic states.
#[derive(Debug, Clone)]
pub struct LrfcController {
    pub k_d: DMatrix<f64>,
    pub x_d_ref: DVector<f64>,
    pub u_ref: DVector<f64>,
}

pub fn make_lrfc(k_d: &DMatrix<f64>, op: &OperatingPoint) -> Result<LrfcController> {
    if k_d.nrows() != op.u_ref.len() {
        return Err(Error::Dimension { what: "gain rows", expected: op.u_ref.len(), got: k_d.nrows() });
    }
    if k_d.ncols() != op.x_d.len() {
        return Err(Error::Dimension { what: "gain columns", expected: op.x_d.len(), got: k_d.ncols() });
    }
    Ok(LrfcController { k_d: k_d.clone(), x_d_ref: op.x_d.clone(), u_ref: op.u_ref.clone() })
}

impl Controller for LrfcController {
    fn output(&self, _t: f64, x_d: &DVector<f64>, _x_a: &DVector<f64>, _z: &DVector<f64>) -> DVector<f64> {
        &self.u_ref + &self.k_d * (x_d - &self.x_d_ref)
    }

    fn output_jacobian(
        &self,
        _x_d: &DVector<f64>,
        x_a: &DVector<f64>,
        _z: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n_u = self.u_ref.len();
        (self.k_d.clone(), DMatrix::zeros(n_u, x_a.len()), DMatrix::zeros(n_u, 0))
    }
}

/// Constant input u = u_ref.
#[derive(Debug, Clone)]
pub struct OpenLoop {
    pub u_ref: DVector<f64>,
}

impl Controller for OpenLoop {
    fn output(&self, _t: f64, _x_d: &DVector<f64>, _x_a: &DVector<f64>, _z: &DVector<f64>) -> DVector<f64> {
        self.u_ref.clone()
    }

    fn output_jacobian(
        &self,
        x_d: &DVector<f64>,
        x_a: &DVector<f64>,
        _z: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n_u = self.u_ref.len();
        (DMatrix::zeros(n_u, x_d.len()), DMatrix::zeros(n_u, x_a.len()), DMatrix::zeros(n_u, 0))
    }
}

/// Linearization of the closed-form reduced ODE ẋ_d = A_red x_d + B_red u
/// around an operating point.
#[derive(Debug, Clone)]
pub struct LinearizedReducedModel {
    pub a_red: DMatrix<f64>,
    pub b_red: DMatrix<f64>,
    /// Condition number of the algebraic Jacobian that was eliminated.
    pub conditioning: f64,
}

pub fn linearize_and_reduce(model: &NdaeModel, op: &OperatingPoint) -> Result<LinearizedReducedModel> {
    let chk = model.check_index_one(&op.x_d, &op.x_a);
    if !chk.holds {
        return Err(Error::SingularJacobian("algebraic Jacobian at the operating point"));
    }
    let j = model.eval_jacobians(&op.x_d, &op.x_a)?;
    let lu = j.fa_xa.clone().lu();
    let sol = lu.solve(&j.fa_xd).ok_or(Error::SingularJacobian("algebraic Jacobian at the operating point"))?;
    Ok(LinearizedReducedModel {
        a_red: &j.fd_xd - &j.fd_xa * sol,
        b_red: model.b_d.clone(),
        conditioning: chk.sigma_max / chk.sigma_min,
    })
}

/// Stabilizing solution of AᵀP + PA − PBR⁻¹BᵀP + Q = 0 by the matrix sign
/// function of the Hamiltonian.
pub fn solve_care(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let rinv = r.clone().try_inverse().ok_or_else(|| Error::Validation("R is singular".into()))?;
    let s = b * &rinv * b.transpose();
    let mut z = DMatrix::zeros(2 * n, 2 * n);
    z.view_mut((0, 0), (n, n)).copy_from(a);
    z.view_mut((0, n), (n, n)).copy_from(&(-&s));
    z.view_mut((n, 0), (n, n)).copy_from(&(-q));
    z.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let mut converged = false;
    for _ in 0..100 {
        let zinv = z
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Unstabilizable("Hamiltonian has eigenvalues on the imaginary axis".into()))?;
        let det = z.clone().lu().determinant().abs();
        let c = if det.is_finite() && det > 0.0 { det.powf(1.0 / (2 * n) as f64) } else { 1.0 };
        let next = (&z / c + zinv * c) * 0.5;
        let change = (&next - &z).norm() / next.norm().max(1.0);
        z = next;
        if change < 1e-13 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence { what: "Riccati sign iteration", iterations: 100, residual: f64::NAN });
    }
    let w11 = z.view((0, 0), (n, n)).into_owned();
    let w12 = z.view((0, n), (n, n)).into_owned();
    let w21 = z.view((n, 0), (n, n)).into_owned();
    let w22 = z.view((n, n), (n, n)).into_owned();
    let id = DMatrix::<f64>::identity(n, n);
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w12);
    lhs.view_mut((n, 0), (n, n)).copy_from(&(&w22 + &id));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(&w11 + &id)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w21));
    let p = lhs.svd(true, true).solve(&rhs, 1e-12).map_err(|e| Error::Solver(format!("Riccati subspace solve: {e}")))?;
    let p = (&p + p.transpose()) * 0.5;

    let res = a.transpose() * &p + &p * a - &p * &s * &p + q;
    let scale = 1.0 + q.norm() + (a.transpose() * &p).norm();
    if res.norm() > 1e-6 * scale {
        return Err(Error::NonConvergence { what: "Riccati residual", iterations: 0, residual: res.norm() });
    }
    Ok(p)
}

pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

/// K = −R⁻¹BᵀP for the reduced model.
pub fn lqr_gain(red: &LinearizedReducedModel, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = solve_care(&red.a_red, &red.b_red, q, r)?;
    let rinv = r.clone().try_inverse().ok_or_else(|| Error::Validation("R is singular".into()))?;
    let k = -(rinv * red.b_red.transpose() * p);
    let alpha = spectral_abscissa(&(&red.a_red + &red.b_red * &k));
    if !(alpha < 0.0) {
        return Err(Error::Unstabilizable(format!("closed-loop spectral abscissa {alpha:.3e}")));
    }
    Ok(k)
}

/// Q = I with 1e-6 added on the rotor-angle block.
pub fn default_lqr_weights(model: &NdaeModel) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut q = DMatrix::identity(model.idx.n_d, model.idx.n_d);
    for i in 0..model.idx.g {
        q[(model.idx.delta(i), model.idx.delta(i))] += 1e-6;
    }
    (q, DMatrix::identity(model.idx.n_u, model.idx.n_u))
}

/// LQR gain at an operating point with the default weights.
pub fn lqr_at(model: &NdaeModel, op: &OperatingPoint) -> Result<DMatrix<f64>> {
    let red = linearize_and_reduce(model, op)?;
    let (q, r) = default_lqr_weights(model);
    lqr_gain(&red, &q, &r)
}

/// Single-area AGC with one integrator state χ:
///
/// ```text
/// χ̇ = K_G (−χ − ACE + Σ_i (P_Gi − P_Gi⁰)),  ACE = (1/G) Σ_i (1/R_Di + D_i)(ω_i − ω0)
/// T_ri = T_ri⁰ + K_i χ
/// ```
///
/// Field voltages follow the E_fd rows of an LQR gain.
#[derive(Debug, Clone)]
pub struct AgcController {
    pub k_g: f64,
    pub participation: DVector<f64>,
    pub p_g0: DVector<f64>,
    pub t_r0: DVector<f64>,
    pub efd_gain: DMatrix<f64>,
    pub efd0: DVector<f64>,
    pub x_d_ref: DVector<f64>,
    /// (1/R_D + D)/G per generator.
    ace_weights: DVector<f64>,
    omega_idx: Vec<usize>,
    pg_idx: Vec<usize>,
    omega0: f64,
}

pub fn make_agc(model: &NdaeModel, op: &OperatingPoint, k_g: f64, lqr: &DMatrix<f64>) -> Result<AgcController> {
    let idx = &model.idx;
    let g = idx.g;
    if lqr.nrows() != idx.n_u || lqr.ncols() != idx.n_d {
        return Err(Error::Dimension { what: "LQR gain", expected: idx.n_u * idx.n_d, got: lqr.len() });
    }
    let p_g0 = DVector::from_fn(g, |i, _| op.x_a[idx.p_g(i)]);
    let total: f64 = p_g0.sum();
    if !(total.abs() > 0.0) {
        return Err(Error::Validation("scheduled generation sums to zero".into()));
    }
    let participation = &p_g0 / total;
    let efd_rows: Vec<usize> = (0..g).map(|i| idx.e_fd(i)).collect();
    Ok(AgcController {
        k_g,
        participation,
        p_g0,
        t_r0: DVector::from_fn(g, |i, _| op.u_ref[idx.t_r(i)]),
        efd_gain: lqr.select_rows(efd_rows.iter()),
        efd0: DVector::from_fn(g, |i, _| op.u_ref[idx.e_fd(i)]),
        x_d_ref: op.x_d.clone(),
        ace_weights: DVector::from_fn(g, |i, _| (1.0 / model.gens[i].r_d + model.gens[i].d) / g as f64),
        omega_idx: (0..g).map(|i| idx.omega(i)).collect(),
        pg_idx: (0..g).map(|i| idx.p_g(i)).collect(),
        omega0: model.omega0,
    })
}

impl AgcController {
    pub fn ace(&self, x_d: &DVector<f64>) -> f64 {
        self.omega_idx.iter().zip(self.ace_weights.iter()).map(|(&k, w)| w * (x_d[k] - self.omega0)).sum()
    }

    fn g(&self) -> usize {
        self.p_g0.len()
    }
}

impl Controller for AgcController {
    fn n_internal(&self) -> usize {
        1
    }

    fn output(&self, _t: f64, x_d: &DVector<f64>, _x_a: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        let g = self.g();
        let efd = &self.efd0 + &self.efd_gain * (x_d - &self.x_d_ref);
        let tr = &self.t_r0 + &self.participation * z[0];
        let mut u = DVector::zeros(2 * g);
        u.rows_mut(0, g).copy_from(&efd);
        u.rows_mut(g, g).copy_from(&tr);
        u
    }

    fn output_jacobian(
        &self,
        x_d: &DVector<f64>,
        x_a: &DVector<f64>,
        _z: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let g = self.g();
        let mut ux = DMatrix::zeros(2 * g, x_d.len());
        ux.rows_mut(0, g).copy_from(&self.efd_gain);
        let mut uz = DMatrix::zeros(2 * g, 1);
        uz.view_mut((g, 0), (g, 1)).copy_from(&self.participation);
        (ux, DMatrix::zeros(2 * g, x_a.len()), uz)
    }

    fn internal_rhs(&self, _t: f64, x_d: &DVector<f64>, x_a: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        let dp: f64 = self.pg_idx.iter().zip(self.p_g0.iter()).map(|(&k, p0)| x_a[k] - p0).sum();
        DVector::from_element(1, self.k_g * (-z[0] - self.ace(x_d) + dp))
    }

    fn internal_jacobian(
        &self,
        x_d: &DVector<f64>,
        x_a: &DVector<f64>,
        _z: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let mut zx = DMatrix::zeros(1, x_d.len());
        for (&k, w) in self.omega_idx.iter().zip(self.ace_weights.iter()) {
            zx[(0, k)] = -self.k_g * w;
        }
        let mut za = DMatrix::zeros(1, x_a.len());
        for &k in &self.pg_idx {
            za[(0, k)] = self.k_g;
        }
        (zx, za, DMatrix::from_element(1, 1, -self.k_g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_care() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let p = solve_care(&DMatrix::zeros(1, 1), &one, &one, &one).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-12);
        let red = LinearizedReducedModel { a_red: DMatrix::zeros(1, 1), b_red: one.clone(), conditioning: 1.0 };
        let k = lqr_gain(&red, &one, &one).unwrap();
        assert!((k[(0, 0)] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn double_integrator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let red = LinearizedReducedModel { a_red: a, b_red: b, conditioning: 1.0 };
        let k = lqr_gain(&red, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1)).unwrap();
        assert!((k[(0, 0)] + 1.0).abs() < 1e-10);
        assert!((k[(0, 1)] + 3f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn uncontrollable_unstable_mode_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let red = LinearizedReducedModel { a_red: a, b_red: b, conditioning: 1.0 };
        assert!(lqr_gain(&red, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1)).is_err());
    }
}
