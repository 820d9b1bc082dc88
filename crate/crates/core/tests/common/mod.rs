//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use gridctl_core::daesolve::{integrate_dae, DaeSystem, IntegratorOptions};
use gridctl_core::ndae::assemble_model;
use gridctl_core::netcase::{build_admittance, prepare_case};
use gridctl_core::{CaseId, NdaeModel, NetworkCase};
use nalgebra::{dmatrix, DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

pub fn fixture(id: CaseId) -> (NetworkCase, NdaeModel) {
    let case = prepare_case(&id.load());
    let y = build_admittance(&case).unwrap();
    let model = assemble_model(&case, &y).unwrap();
    (case, model)
}

/// Bus admittance matrix from the π-equivalent of every branch.
pub fn complex_ybus(case: &NetworkCase) -> Vec<Vec<Complex64>> {
    let n = case.buses.len();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for br in &case.branches {
        let (f, t) = (br.from - 1, br.to - 1);
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let ysh = Complex64::new(0.0, br.b_sh / 2.0);
        y[f][f] += (ys + ysh) / (br.tap * br.tap);
        y[t][t] += ys + ysh;
        y[f][t] -= ys / br.tap;
        y[t][f] -= ys / br.tap;
    }
    for (i, b) in case.buses.iter().enumerate() {
        y[i][i] += Complex64::new(b.g_sh, b.b_sh);
    }
    y
}

/// Complex power injections S = V ∘ conj(Y V).
pub fn injections(y: &[Vec<Complex64>], v: &[f64], theta: &[f64]) -> Vec<Complex64> {
    let vc: Vec<Complex64> = v.iter().zip(theta).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
    (0..vc.len())
        .map(|i| {
            let i_inj: Complex64 = (0..vc.len()).map(|j| y[i][j] * vc[j]).sum();
            vc[i] * i_inj.conj()
        })
        .collect()
}

pub struct Point {
    pub x_d: DVector<f64>,
    pub xdot: DVector<f64>,
    pub x_a: DVector<f64>,
    pub u: DVector<f64>,
    pub q: DVector<f64>,
}

pub fn random_point(model: &NdaeModel, rng: &mut impl Rng) -> Point {
    let idx = &model.idx;
    let mut x_d = DVector::zeros(idx.n_d);
    let mut x_a = DVector::zeros(idx.n_a);
    for i in 0..idx.g {
        x_d[idx.delta(i)] = rng.gen_range(-3.0..3.0);
        x_d[idx.omega(i)] = model.omega0 + rng.gen_range(-5.0..5.0);
        x_d[idx.e_prime(i)] = rng.gen_range(0.5..1.5);
        x_d[idx.t_m(i)] = rng.gen_range(0.0..2.0);
        x_a[idx.p_g(i)] = rng.gen_range(-2.0..2.0);
        x_a[idx.q_g(i)] = rng.gen_range(-2.0..2.0);
    }
    for b in 0..idx.n {
        x_a[idx.v(b)] = rng.gen_range(0.8..1.2);
        x_a[idx.theta(b)] = rng.gen_range(-1.0..1.0);
    }
    let r = |n: usize, lo: f64, hi: f64, rng: &mut dyn rand::RngCore| DVector::from_fn(n, |_, _| rng.gen_range(lo..hi));
    Point { xdot: r(idx.n_d, -10.0, 10.0, rng), u: r(idx.n_u, 0.0, 3.0, rng), q: r(idx.n_q, 0.0, 1.5, rng), x_d, x_a }
}

/// Eqs. of the machine, stator and network written out per generator and bus,
/// in the model's row layout.
pub fn direct_residual(case: &NetworkCase, model: &NdaeModel, p: &Point) -> (DVector<f64>, DVector<f64>) {
    let idx = &model.idx;
    let w0 = case.omega0;
    let mut r_d = DVector::zeros(idx.n_d);
    let mut r_a = DVector::zeros(idx.n_a);
    let v: Vec<f64> = (0..idx.n).map(|b| p.x_a[idx.v(b)]).collect();
    let th: Vec<f64> = (0..idx.n).map(|b| p.x_a[idx.theta(b)]).collect();

    let mut p_bal = vec![0.0; idx.n];
    let mut q_bal = vec![0.0; idx.n];
    for (i, gp) in case.generators.iter().enumerate() {
        let b = gp.bus - 1;
        let delta = p.x_d[idx.delta(i)];
        let omega = p.x_d[idx.omega(i)];
        let e = p.x_d[idx.e_prime(i)];
        let tm = p.x_d[idx.t_m(i)];
        let pg = p.x_a[idx.p_g(i)];
        let qg = p.x_a[idx.q_g(i)];
        let efd = p.u[idx.e_fd(i)];
        let tr = p.u[idx.t_r(i)];
        let phi = delta - th[b];

        r_d[idx.delta(i)] = p.xdot[idx.delta(i)] - (omega - w0);
        r_d[idx.omega(i)] = p.xdot[idx.omega(i)] - (tm - pg - gp.d * (omega - w0)) / gp.m;
        r_d[idx.e_prime(i)] = p.xdot[idx.e_prime(i)]
            - (-gp.x_d / gp.x_d_prime * e + (gp.x_d - gp.x_d_prime) / gp.x_d_prime * v[b] * phi.cos() + efd) / gp.t_d0_prime;
        r_d[idx.t_m(i)] = p.xdot[idx.t_m(i)] - (-tm - (omega - w0) / gp.r_d + tr) / gp.t_ch;

        let (xdp, xq) = (gp.x_d_prime, gp.x_q);
        let pg_stator = e * v[b] * phi.sin() / xdp - (xq - xdp) / (2.0 * xdp * xq) * v[b] * v[b] * (2.0 * phi).sin();
        let qg_stator = e * v[b] * phi.cos() / xdp
            - (xdp + xq) / (2.0 * xdp * xq) * v[b] * v[b]
            - (xq - xdp) / (2.0 * xdp * xq) * v[b] * v[b] * (2.0 * phi).cos();
        r_a[idx.p_g(i)] = pg_stator - pg;
        r_a[idx.q_g(i)] = qg_stator - qg;
        p_bal[b] += pg;
        q_bal[b] += qg;
    }
    for (k, &b) in idx.renewable_buses.iter().enumerate() {
        p_bal[b] += p.q[idx.p_r(k)];
        q_bal[b] += p.q[idx.q_r(k)];
    }
    for (k, &b) in idx.load_buses.iter().enumerate() {
        p_bal[b] -= p.q[idx.p_l(k)];
        q_bal[b] -= p.q[idx.q_l(k)];
    }
    let s = injections(&complex_ybus(case), &v, &th);
    for b in 0..idx.n {
        r_a[idx.balance_p(b)] = s[b].re - p_bal[b];
        r_a[idx.balance_q(b)] = s[b].im - q_bal[b];
    }
    (r_d, r_a)
}

/// Central-difference Jacobian of `f` at `x`.
pub fn central_diff(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let m = f(x).len();
    let mut j = DMatrix::zeros(m, x.len());
    for c in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[c] += h;
        xm[c] -= h;
        j.set_column(c, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    j
}

/// max over entries of |a − r| / max(|r|, 1).
pub fn rel_err(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    a.iter().zip(reference.iter()).map(|(x, r)| (x - r).abs() / r.abs().max(1.0)).fold(0.0, f64::max)
}

/// λ_max of Mᵀ(aMMᵀ + bI)⁻¹M − aI by direct eigendecomposition.
pub fn resolvent_form(m: &DMatrix<f64>, a: f64, b: f64) -> f64 {
    let inner = m * m.transpose() * a + DMatrix::identity(m.nrows(), m.nrows()) * b;
    let inv = inner.try_inverse().unwrap();
    let form = m.transpose() * inv * m - DMatrix::identity(m.ncols(), m.ncols()) * a;
    let sym = (&form + form.transpose()) * 0.5;
    sym.symmetric_eigenvalues().max()
}

/// ẋ = A x + B y + s(t), 0 = C x + D y + g(t), with forcing chosen so that
/// x* = (sin t, cos 2t), y* = e^{−t/2} is the exact solution.
pub struct Manufactured {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl Manufactured {
    pub fn new() -> Self {
        Manufactured { a: dmatrix![-1.0, 2.0; -3.0, -0.5], b: dmatrix![1.0; -2.0], c: dmatrix![0.5, -1.0], d: dmatrix![2.0] }
    }
    pub fn exact(t: f64) -> (DVector<f64>, DVector<f64>) {
        (DVector::from_vec(vec![t.sin(), (2.0 * t).cos()]), DVector::from_vec(vec![(-0.5 * t).exp()]))
    }
    fn exact_dot(t: f64) -> DVector<f64> {
        DVector::from_vec(vec![t.cos(), -2.0 * (2.0 * t).sin()])
    }
}

impl DaeSystem for Manufactured {
    fn n_diff(&self) -> usize {
        2
    }
    fn n_alg(&self) -> usize {
        1
    }
    fn f(&self, t: f64, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let (xs, ys) = Self::exact(t);
        let s = Self::exact_dot(t) - &self.a * xs - &self.b * ys;
        &self.a * x + &self.b * y + s
    }
    fn g(&self, t: f64, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let (xs, ys) = Self::exact(t);
        &self.c * (x - xs) + &self.d * (y - ys)
    }
    fn jacobians(&self, _: f64, _: &DVector<f64>, _: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        (self.a.clone(), self.b.clone(), self.c.clone(), self.d.clone())
    }
}

pub fn manufactured_error(dt: f64) -> f64 {
    let (x0, y0) = Manufactured::exact(0.0);
    let opts = IntegratorOptions { dt, horizon: 2.0, step_tol: 1e-13, alg_tol: 1e-13, ..Default::default() };
    let sol = integrate_dae(&Manufactured::new(), &x0, &y0, &opts).unwrap();
    let (xe, ye) = Manufactured::exact(2.0);
    (sol.x.last().unwrap() - xe).amax().max((sol.y.last().unwrap() - ye).amax())
}
