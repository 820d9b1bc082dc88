//! Implicit trapezoidal integration of semi-explicit index-one DAEs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ndae::NdaeModel;

/// ẋ = f(t, x, y), 0 = g(t, x, y).
pub trait DaeSystem {
    fn n_diff(&self) -> usize;
    fn n_alg(&self) -> usize;
    fn f(&self, t: f64, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;
    fn g(&self, t: f64, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;
    /// (f_x, f_y, g_x, g_y).
    fn jacobians(&self, t: f64, x: &DVector<f64>, y: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);
    /// Called after every accepted step; returning a reason aborts the run.
    fn inspect(&self, _t: f64, _x: &DVector<f64>, _y: &DVector<f64>, _rec: &mut StepRecord) -> Option<String> {
        None
    }
}

/// State feedback acting on the plant, possibly with internal states z.
pub trait Controller {
    fn n_internal(&self) -> usize {
        0
    }
    fn initial_internal(&self) -> DVector<f64> {
        DVector::zeros(self.n_internal())
    }
    fn output(&self, t: f64, x_d: &DVector<f64>, x_a: &DVector<f64>, z: &DVector<f64>) -> DVector<f64>;
    /// (∂u/∂x_d, ∂u/∂x_a, ∂u/∂z).
    fn output_jacobian(
        &self,
        x_d: &DVector<f64>,
        x_a: &DVector<f64>,
        z: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);
    fn internal_rhs(&self, _t: f64, _x_d: &DVector<f64>, _x_a: &DVector<f64>, _z: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }
    /// (∂ż/∂x_d, ∂ż/∂x_a, ∂ż/∂z).
    fn internal_jacobian(
        &self,
        x_d: &DVector<f64>,
        x_a: &DVector<f64>,
        z: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let nz = self.n_internal();
        (DMatrix::zeros(nz, x_d.len()), DMatrix::zeros(nz, x_a.len()), DMatrix::zeros(nz, z.len()))
    }
}

/// Time-varying disturbance vector q(t).
pub trait Signal {
    fn q(&self, t: f64) -> DVector<f64>;
}

/// q(t) = q_e for all t > 0.
#[derive(Debug, Clone)]
pub struct StepSignal(pub DVector<f64>);

impl Signal for StepSignal {
    fn q(&self, _t: f64) -> DVector<f64> {
        self.0.clone()
    }
}

/// Piecewise-constant samples on a fixed grid: q(t) = samples[⌊t/dt⌋].
#[derive(Debug, Clone)]
pub struct SampledSignal {
    pub dt: f64,
    pub samples: Vec<DVector<f64>>,
}

impl Signal for SampledSignal {
    fn q(&self, t: f64) -> DVector<f64> {
        let k = ((t / self.dt).floor().max(0.0) as usize).min(self.samples.len() - 1);
        self.samples[k].clone()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IntegratorOptions {
    pub dt: f64,
    pub dt_min: f64,
    pub horizon: f64,
    pub step_tol: f64,
    pub alg_tol: f64,
    pub max_newton: usize,
    /// Keep every n-th accepted step in the trajectory (the final step is always kept).
    pub record_stride: usize,
    pub monitor_index_one: bool,
    /// Frequency excursion |ω − ω0| treated as divergence (rad/s).
    pub omega_limit: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            dt: 1e-3,
            dt_min: 1e-6,
            horizon: 15.0,
            step_tol: 1e-9,
            alg_tol: 1e-9,
            max_newton: 8,
            record_stride: 1,
            monitor_index_one: true,
            omega_limit: 20.0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub newton_iters: usize,
    pub step_residual: f64,
    pub alg_residual: f64,
    pub index_one: Option<bool>,
    pub sigma_min: Option<f64>,
}

/// Raw output of the generic integrator.
#[derive(Debug, Clone)]
pub struct DaeSolution {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub steps: Vec<StepRecord>,
}

struct Factor {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    dt: f64,
}

fn newton_matrix<S: DaeSystem + ?Sized>(sys: &S, t: f64, x: &DVector<f64>, y: &DVector<f64>, dt: f64) -> DMatrix<f64> {
    let (nx, ny) = (sys.n_diff(), sys.n_alg());
    let (fx, fy, gx, gy) = sys.jacobians(t, x, y);
    let mut j = DMatrix::zeros(nx + ny, nx + ny);
    j.view_mut((0, 0), (nx, nx)).copy_from(&(DMatrix::identity(nx, nx) - fx * (0.5 * dt)));
    j.view_mut((0, nx), (nx, ny)).copy_from(&(fy * (-0.5 * dt)));
    j.view_mut((nx, 0), (ny, nx)).copy_from(&gx);
    j.view_mut((nx, nx), (ny, ny)).copy_from(&gy);
    j
}

/// Integrate from consistent (x0, y0) over `opts.horizon`.
pub fn integrate_dae<S: DaeSystem + ?Sized>(
    sys: &S,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    opts: &IntegratorOptions,
) -> Result<DaeSolution> {
    if !(opts.dt > 0.0) || !(opts.horizon > 0.0) {
        return Err(Error::Validation("dt and horizon must be positive".into()));
    }
    let (nx, ny) = (sys.n_diff(), sys.n_alg());
    let mut t = 0.0;
    let mut x = x0.clone();
    let mut y = y0.clone();
    let mut f_n = sys.f(t, &x, &y);
    let mut sol = DaeSolution { t: vec![0.0], x: vec![x.clone()], y: vec![y.clone()], steps: Vec::new() };

    let mut dt = opts.dt;
    let mut factor: Option<Factor> = None;
    let mut good_steps = 0usize;
    let mut accepted = 0usize;
    let end_tol = 1e-12 * opts.horizon.max(1.0);

    while t < opts.horizon - end_tol {
        let h = dt.min(opts.horizon - t);
        let t_new = t + h;
        let mut attempt = None;
        // Up to two tries at this dt: chord iteration with the cached
        // factorization, then full Newton.
        for fresh in [false, true] {
            if fresh || factor.as_ref().is_none_or(|f| f.dt != h) {
                let j = newton_matrix(sys, t_new, &x, &y, h);
                factor = Some(Factor { lu: j.lu(), dt: h });
            }
            let mut xn = x.clone();
            let mut yn = y.clone();
            let mut prev = f64::INFINITY;
            let mut result = None;
            for it in 0..=opts.max_newton {
                let fx = sys.f(t_new, &xn, &yn);
                let r1 = &xn - &x - (&fx + &f_n) * (0.5 * h);
                let r2 = sys.g(t_new, &xn, &yn);
                let (e1, e2) = (r1.amax(), r2.amax());
                if !(e1.is_finite() && e2.is_finite()) {
                    break;
                }
                if e1 <= opts.step_tol && e2 <= opts.alg_tol {
                    result = Some((xn.clone(), yn.clone(), fx, it, e1, e2));
                    break;
                }
                let size = e1.max(e2);
                if it == opts.max_newton || (it >= 2 && size > 0.9 * prev) {
                    break;
                }
                prev = size;
                let mut rhs = DVector::zeros(nx + ny);
                rhs.rows_mut(0, nx).copy_from(&r1);
                rhs.rows_mut(nx, ny).copy_from(&r2);
                // The retry is a full Newton iteration: algebraic jumps in q
                // are too large for the chord matrix from the step start.
                if fresh && it > 0 {
                    factor = Some(Factor { lu: newton_matrix(sys, t_new, &xn, &yn, h).lu(), dt: f64::NAN });
                }
                let Some(d) = factor.as_ref().unwrap().lu.solve(&rhs) else { break };
                xn -= d.rows(0, nx);
                yn -= d.rows(nx, ny);
            }
            if result.is_some() {
                attempt = result;
                break;
            }
        }

        match attempt {
            Some((xn, yn, fx, iters, e1, e2)) => {
                t = t_new;
                x = xn;
                y = yn;
                f_n = fx;
                accepted += 1;
                let mut rec =
                    StepRecord { t, dt: h, newton_iters: iters, step_residual: e1, alg_residual: e2, ..Default::default() };
                if let Some(reason) = sys.inspect(t, &x, &y, &mut rec) {
                    return Err(Error::Diverged { time: t, reason });
                }
                sol.steps.push(rec);
                if accepted.is_multiple_of(opts.record_stride.max(1)) || t >= opts.horizon - end_tol {
                    sol.t.push(t);
                    sol.x.push(x.clone());
                    sol.y.push(y.clone());
                }
                good_steps += 1;
                if dt < opts.dt && good_steps >= 8 {
                    dt = (dt * 2.0).min(opts.dt);
                    good_steps = 0;
                }
            }
            None => {
                dt *= 0.5;
                good_steps = 0;
                if dt < opts.dt_min {
                    return Err(Error::Diverged { time: t, reason: "Newton failed at the minimum step size".into() });
                }
            }
        }
    }
    Ok(sol)
}

// ---------------------------------------------------------------------------
// Power-network closed loop

/// Closed-loop plant: x = [x_d; z], y = x_a.
pub struct ClosedLoop<'a, C: Controller + ?Sized, Q: Signal + ?Sized> {
    pub model: &'a NdaeModel,
    pub controller: &'a C,
    pub signal: &'a Q,
    pub omega_limit: f64,
    pub monitor_index_one: bool,
}

impl<'a, C: Controller + ?Sized, Q: Signal + ?Sized> ClosedLoop<'a, C, Q> {
    fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let nd = self.model.idx.n_d;
        (x.rows(0, nd).into_owned(), x.rows(nd, x.len() - nd).into_owned())
    }
}

impl<'a, C: Controller + ?Sized, Q: Signal + ?Sized> DaeSystem for ClosedLoop<'a, C, Q> {
    fn n_diff(&self) -> usize {
        self.model.idx.n_d + self.controller.n_internal()
    }

    fn n_alg(&self) -> usize {
        self.model.idx.n_a
    }

    fn f(&self, t: f64, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let (x_d, z) = self.split(x);
        let u = self.controller.output(t, &x_d, y, &z);
        let fd = self.model.rhs_d(&x_d, y, &u);
        let fz = self.controller.internal_rhs(t, &x_d, y, &z);
        let mut out = DVector::zeros(self.n_diff());
        out.rows_mut(0, fd.len()).copy_from(&fd);
        out.rows_mut(fd.len(), fz.len()).copy_from(&fz);
        out
    }

    fn g(&self, t: f64, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let nd = self.model.idx.n_d;
        self.model.residual_a(&x.rows(0, nd).into_owned(), y, &self.signal.q(t))
    }

    fn jacobians(&self, _t: f64, x: &DVector<f64>, y: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (nd, na) = (self.model.idx.n_d, self.model.idx.n_a);
        let nz = self.controller.n_internal();
        let (x_d, z) = self.split(x);
        let jac = self.model.eval_jacobians(&x_d, y).expect("finite state inside Newton");
        let (ux, ua, uz) = self.controller.output_jacobian(&x_d, y, &z);
        let (zx, za, zz) = self.controller.internal_jacobian(&x_d, y, &z);
        let bd = &self.model.b_d;

        let mut fx = DMatrix::zeros(nd + nz, nd + nz);
        fx.view_mut((0, 0), (nd, nd)).copy_from(&(jac.fd_xd + bd * ux));
        if nz > 0 {
            fx.view_mut((0, nd), (nd, nz)).copy_from(&(bd * uz));
            fx.view_mut((nd, 0), (nz, nd)).copy_from(&zx);
            fx.view_mut((nd, nd), (nz, nz)).copy_from(&zz);
        }
        let mut fy = DMatrix::zeros(nd + nz, na);
        fy.view_mut((0, 0), (nd, na)).copy_from(&(jac.fd_xa + bd * ua));
        if nz > 0 {
            fy.view_mut((nd, 0), (nz, na)).copy_from(&za);
        }
        let mut gx = DMatrix::zeros(na, nd + nz);
        gx.view_mut((0, 0), (na, nd)).copy_from(&jac.fa_xd);
        (fx, fy, gx, jac.fa_xa)
    }

    fn inspect(&self, _t: f64, x: &DVector<f64>, y: &DVector<f64>, rec: &mut StepRecord) -> Option<String> {
        let idx = &self.model.idx;
        if !(x.iter().chain(y.iter()).all(|v| v.is_finite())) {
            return Some("non-finite state".into());
        }
        for i in 0..idx.g {
            let dev = (x[idx.omega(i)] - self.model.omega0).abs();
            if dev > self.omega_limit {
                return Some(format!("generator {} frequency deviation {:.2} rad/s", i + 1, dev));
            }
        }
        if self.monitor_index_one {
            let chk = self.model.check_index_one(&x.rows(0, idx.n_d).into_owned(), y);
            rec.index_one = Some(chk.holds);
            rec.sigma_min = Some(chk.sigma_min);
            if !chk.holds {
                return Some("algebraic Jacobian lost rank".into());
            }
        }
        None
    }
}

/// Closed-loop trajectory with state, input and disturbance histories.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x_d: Vec<DVector<f64>>,
    pub x_a: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub q: Vec<DVector<f64>>,
    /// Controller internal states (empty vectors when stateless).
    pub z: Vec<DVector<f64>>,
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Index of the recorded sample closest to time `t`.
    pub fn nearest(&self, t: f64) -> usize {
        let mut best = 0;
        for (k, &tk) in self.t.iter().enumerate() {
            if (tk - t).abs() < (self.t[best] - t).abs() {
                best = k;
            }
        }
        best
    }

    pub fn to_matrix(rows: &[DVector<f64>]) -> DMatrix<f64> {
        let n = rows.first().map_or(0, |r| r.len());
        DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j])
    }
}

/// Solve r_a(x_d0, x_a, q) = 0 for x_a by Newton from `guess`.
pub fn consistent_init(
    model: &NdaeModel,
    x_d0: &DVector<f64>,
    q: &DVector<f64>,
    guess: &DVector<f64>,
    tol: f64,
) -> Result<DVector<f64>> {
    if !model.check_index_one(x_d0, guess).holds {
        return Err(Error::SingularJacobian("consistent initialization"));
    }
    let mut x_a = guess.clone();
    let mut r = model.residual_a(x_d0, &x_a, q);
    let mut norm = r.amax();
    for iter in 0..50 {
        if norm <= tol {
            return Ok(x_a);
        }
        let j = model.algebraic_jacobian(x_d0, &x_a);
        let dx = j.lu().solve(&r).ok_or(Error::SingularJacobian("consistent initialization"))?;
        let mut alpha = 1.0;
        loop {
            let trial = &x_a - &dx * alpha;
            let rt = model.residual_a(x_d0, &trial, q);
            let nt = rt.amax();
            if nt.is_finite() && nt < norm {
                x_a = trial;
                r = rt;
                norm = nt;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-10 {
                return Err(Error::NonConvergence { what: "consistent initialization", iterations: iter + 1, residual: norm });
            }
        }
    }
    if norm <= tol {
        Ok(x_a)
    } else {
        Err(Error::NonConvergence { what: "consistent initialization", iterations: 50, residual: norm })
    }
}

/// Integrate the closed loop from a consistent (x_d0, x_a0).
pub fn integrate<C: Controller + ?Sized, Q: Signal + ?Sized>(
    model: &NdaeModel,
    controller: &C,
    x_d0: &DVector<f64>,
    x_a0: &DVector<f64>,
    signal: &Q,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    let sys = ClosedLoop { model, controller, signal, omega_limit: opts.omega_limit, monitor_index_one: opts.monitor_index_one };
    let nd = model.idx.n_d;
    let nz = controller.n_internal();
    let mut x0 = DVector::zeros(nd + nz);
    x0.rows_mut(0, nd).copy_from(x_d0);
    x0.rows_mut(nd, nz).copy_from(&controller.initial_internal());
    let sol = integrate_dae(&sys, &x0, x_a0, opts)?;

    let mut traj = Trajectory {
        t: sol.t,
        x_d: Vec::with_capacity(sol.x.len()),
        x_a: sol.y,
        u: Vec::with_capacity(sol.x.len()),
        q: Vec::with_capacity(sol.x.len()),
        z: Vec::with_capacity(sol.x.len()),
        steps: sol.steps,
    };
    for (k, x) in sol.x.iter().enumerate() {
        let x_d = x.rows(0, nd).into_owned();
        let z = x.rows(nd, nz).into_owned();
        let t = traj.t[k];
        traj.u.push(controller.output(t, &x_d, &traj.x_a[k], &z));
        traj.q.push(signal.q(t));
        traj.x_d.push(x_d);
        traj.z.push(z);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// ẋ = −x, 0 = y − x.
    struct Decay;

    impl DaeSystem for Decay {
        fn n_diff(&self) -> usize {
            1
        }
        fn n_alg(&self) -> usize {
            1
        }
        fn f(&self, _t: f64, _x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
            -y
        }
        fn g(&self, _t: f64, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
            y - x
        }
        fn jacobians(
            &self,
            _: f64,
            _: &DVector<f64>,
            _: &DVector<f64>,
        ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
            let m = |v: f64| DMatrix::from_element(1, 1, v);
            (m(0.0), m(-1.0), m(-1.0), m(1.0))
        }
    }

    fn run(dt: f64) -> f64 {
        let opts = IntegratorOptions { dt, horizon: 1.0, step_tol: 1e-14, alg_tol: 1e-14, ..Default::default() };
        let sol = integrate_dae(&Decay, &DVector::from_element(1, 1.0), &DVector::from_element(1, 1.0), &opts).unwrap();
        *sol.x.last().unwrap().as_slice().first().unwrap()
    }

    #[test]
    fn scalar_decay_matches_exponential() {
        assert!((run(1e-3) - (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn trapezoid_is_second_order() {
        let exact = (-1.0f64).exp();
        let ratio = (run(0.02) - exact).abs() / (run(0.01) - exact).abs();
        assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
    }
}
