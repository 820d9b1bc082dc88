//! Polar Newton–Raphson AC power flow.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::netcase::{AdmittanceMatrix, BusKind, NetworkCase};

#[derive(Debug, Clone)]
pub struct PfSolution {
    pub v: DVector<f64>,
    pub theta: DVector<f64>,
    pub p_inj: DVector<f64>,
    pub q_inj: DVector<f64>,
    /// Generator outputs recovered from the balance, in generator order.
    pub p_gen: DVector<f64>,
    pub q_gen: DVector<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Net injections P_i, Q_i from the network side of the balance equations.
pub fn injections(y: &AdmittanceMatrix, v: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = v.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let (mut sp, mut sq) = (0.0, 0.0);
        for j in 0..n {
            let (gij, bij) = (y.g[(i, j)], y.b[(i, j)]);
            if gij == 0.0 && bij == 0.0 {
                continue;
            }
            let (s, c) = (theta[i] - theta[j]).sin_cos();
            sp += v[j] * (gij * c + bij * s);
            sq += v[j] * (gij * s - bij * c);
        }
        p[i] = v[i] * sp;
        q[i] = v[i] * sq;
    }
    (p, q)
}

/// Partial derivatives of the injections, each N×N.
pub struct InjectionJacobian {
    pub dp_dv: DMatrix<f64>,
    pub dp_dtheta: DMatrix<f64>,
    pub dq_dv: DMatrix<f64>,
    pub dq_dtheta: DMatrix<f64>,
}

pub fn injection_jacobian(y: &AdmittanceMatrix, v: &[f64], theta: &[f64]) -> InjectionJacobian {
    let n = v.len();
    let (p, q) = injections(y, v, theta);
    let mut jac = InjectionJacobian {
        dp_dv: DMatrix::zeros(n, n),
        dp_dtheta: DMatrix::zeros(n, n),
        dq_dv: DMatrix::zeros(n, n),
        dq_dtheta: DMatrix::zeros(n, n),
    };
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (gij, bij) = (y.g[(i, j)], y.b[(i, j)]);
            if gij == 0.0 && bij == 0.0 {
                continue;
            }
            let (s, c) = (theta[i] - theta[j]).sin_cos();
            let a = gij * c + bij * s;
            let b = gij * s - bij * c;
            jac.dp_dtheta[(i, j)] = v[i] * v[j] * b;
            jac.dq_dtheta[(i, j)] = -v[i] * v[j] * a;
            jac.dp_dv[(i, j)] = v[i] * a;
            jac.dq_dv[(i, j)] = v[i] * b;
        }
        let (gii, bii) = (y.g[(i, i)], y.b[(i, i)]);
        jac.dp_dtheta[(i, i)] = -q[i] - bii * v[i] * v[i];
        jac.dq_dtheta[(i, i)] = p[i] - gii * v[i] * v[i];
        if v[i] != 0.0 {
            jac.dp_dv[(i, i)] = p[i] / v[i] + gii * v[i];
            jac.dq_dv[(i, i)] = q[i] / v[i] - bii * v[i];
        } else {
            jac.dp_dv[(i, i)] = (0..n)
                .map(|j| v[j] * (y.g[(i, j)] * (theta[i] - theta[j]).cos() + y.b[(i, j)] * (theta[i] - theta[j]).sin()))
                .sum();
            jac.dq_dv[(i, i)] = (0..n)
                .map(|j| v[j] * (y.g[(i, j)] * (theta[i] - theta[j]).sin() - y.b[(i, j)] * (theta[i] - theta[j]).cos()))
                .sum();
        }
    }
    jac
}

/// Solve the power flow with renewables as negative loads.
pub fn solve_power_flow(case: &NetworkCase, y: &AdmittanceMatrix, tol: f64, max_iter: usize) -> Result<PfSolution> {
    let n = case.n_buses();
    if y.n() != n {
        return Err(Error::Dimension { what: "admittance matrix", expected: n, got: y.n() });
    }
    if !(tol > 0.0) {
        return Err(Error::Validation(format!("power-flow tolerance must be positive, got {tol}")));
    }
    let mut p_spec = vec![0.0; n];
    let mut q_spec = vec![0.0; n];
    for (i, bus) in case.buses.iter().enumerate() {
        p_spec[i] = bus.p_ren - bus.p_load;
        q_spec[i] = bus.q_ren - bus.q_load;
    }
    for g in &case.generators {
        p_spec[g.bus - 1] += g.p_set;
    }

    // Unknown ordering: angles of non-slack buses, then magnitudes of PQ buses.
    let ang: Vec<usize> = (0..n).filter(|&i| case.buses[i].kind != BusKind::Slack).collect();
    let mag: Vec<usize> = (0..n).filter(|&i| case.buses[i].kind == BusKind::Pq).collect();
    let (na, nm) = (ang.len(), mag.len());

    let mut v: Vec<f64> = case.buses.iter().map(|b| if b.kind == BusKind::Pq { 1.0 } else { b.v_set.unwrap_or(1.0) }).collect();
    let mut theta = vec![0.0; n];

    let mismatch = |v: &[f64], theta: &[f64]| -> DVector<f64> {
        let (p, q) = injections(y, v, theta);
        let mut f = DVector::zeros(na + nm);
        for (k, &i) in ang.iter().enumerate() {
            f[k] = p[i] - p_spec[i];
        }
        for (k, &i) in mag.iter().enumerate() {
            f[na + k] = q[i] - q_spec[i];
        }
        f
    };

    let mut f = mismatch(&v, &theta);
    let mut norm = f.amax();
    let mut iterations = 0;
    while norm > tol {
        if iterations >= max_iter || !norm.is_finite() {
            return Err(Error::NonConvergence { what: "power flow", iterations, residual: norm });
        }
        let jac = injection_jacobian(y, &v, &theta);
        let mut j = DMatrix::zeros(na + nm, na + nm);
        for (r, &i) in ang.iter().enumerate() {
            for (c, &k) in ang.iter().enumerate() {
                j[(r, c)] = jac.dp_dtheta[(i, k)];
            }
            for (c, &k) in mag.iter().enumerate() {
                j[(r, na + c)] = jac.dp_dv[(i, k)];
            }
        }
        for (r, &i) in mag.iter().enumerate() {
            for (c, &k) in ang.iter().enumerate() {
                j[(na + r, c)] = jac.dq_dtheta[(i, k)];
            }
            for (c, &k) in mag.iter().enumerate() {
                j[(na + r, na + c)] = jac.dq_dv[(i, k)];
            }
        }
        let dx = j.lu().solve(&(-&f)).ok_or(Error::SingularJacobian("power flow"))?;
        for (k, &i) in ang.iter().enumerate() {
            theta[i] += dx[k];
        }
        for (k, &i) in mag.iter().enumerate() {
            v[i] += dx[na + k];
        }
        iterations += 1;
        f = mismatch(&v, &theta);
        norm = f.amax();
        if v.iter().any(|&vi| !(vi > 0.0)) {
            return Err(Error::NonConvergence { what: "power flow", iterations, residual: norm });
        }
    }

    let (p, q) = injections(y, &v, &theta);
    let mut p_gen = DVector::zeros(case.n_generators());
    let mut q_gen = DVector::zeros(case.n_generators());
    for (k, g) in case.generators.iter().enumerate() {
        let i = g.bus - 1;
        let bus = &case.buses[i];
        p_gen[k] = p[i] + bus.p_load - bus.p_ren;
        q_gen[k] = q[i] + bus.q_load - bus.q_ren;
    }
    Ok(PfSolution {
        v: DVector::from_vec(v),
        theta: DVector::from_vec(theta),
        p_inj: DVector::from_vec(p),
        q_inj: DVector::from_vec(q),
        p_gen,
        q_gen,
        iterations,
        residual_norm: norm,
    })
}
