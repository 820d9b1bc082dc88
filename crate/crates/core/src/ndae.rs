//! Semi-explicit NDAE model of the network:
//!
//! ```text
//! ẋ_d = A_d x_d + G_d f_d(x_d, x_a) + B_d u + h ω0
//!   0 = A_a x_a + G_a f_a(x_d, x_a) + B_a q
//! ```
//!
//! with x_d = [δ; ω; E′; T_M], x_a = [P_G; Q_G; v; θ], u = [E_fd; T_r] and
//! q = [P_R; Q_R; P_L; Q_L].
//!
//! The trigonometric channel f_a is split into its Jacobian at a flat
//! reference point (δ = θ = 0, E′ = v = 1), which is folded into A_a, and the
//! remainder. Both nonlinearity channels carry a gauge factor that moves gain
//! between G and f. Neither transformation changes the residual.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::netcase::{AdmittanceMatrix, GeneratorParams, NetworkCase};
use crate::powerflow::{injection_jacobian, injections};

/// Index bookkeeping for the state, input and disturbance vectors.
#[derive(Debug, Clone)]
pub struct StateIndexing {
    pub g: usize,
    pub n: usize,
    pub n_d: usize,
    pub n_a: usize,
    pub n_u: usize,
    pub n_q: usize,
    pub n_fd: usize,
    pub n_fa: usize,
    /// Bus index of each generator.
    pub gen_buses: Vec<usize>,
    pub renewable_buses: Vec<usize>,
    pub load_buses: Vec<usize>,
    /// Bus ids (one-based) for naming.
    pub bus_ids: Vec<usize>,
    /// Offset of each bus's active balance row within the 2N balance block;
    /// the reactive row follows the layout [P gen; Q gen; P other; Q other].
    bal_p: Vec<usize>,
    bal_q: Vec<usize>,
}

impl StateIndexing {
    pub fn new(case: &NetworkCase) -> Self {
        let g = case.n_generators();
        let n = case.n_buses();
        let gen_buses = case.generator_buses();
        let mut bal_p = vec![0; n];
        let mut bal_q = vec![0; n];
        for (k, &b) in gen_buses.iter().enumerate() {
            bal_p[b] = k;
            bal_q[b] = g + k;
        }
        let others: Vec<usize> = (0..n).filter(|b| !gen_buses.contains(b)).collect();
        for (m, &b) in others.iter().enumerate() {
            bal_p[b] = 2 * g + m;
            bal_q[b] = 2 * g + (n - g) + m;
        }
        let renewable_buses = case.renewable_buses();
        let load_buses = case.load_buses();
        StateIndexing {
            g,
            n,
            n_d: 4 * g,
            n_a: 2 * g + 2 * n,
            n_u: 2 * g,
            n_q: 2 * renewable_buses.len() + 2 * load_buses.len(),
            n_fd: 2 * g,
            n_fa: 5 * g + 2 * n,
            gen_buses,
            renewable_buses,
            load_buses,
            bus_ids: case.buses.iter().map(|b| b.id).collect(),
            bal_p,
            bal_q,
        }
    }

    pub fn delta(&self, i: usize) -> usize {
        i
    }
    pub fn omega(&self, i: usize) -> usize {
        self.g + i
    }
    pub fn e_prime(&self, i: usize) -> usize {
        2 * self.g + i
    }
    pub fn t_m(&self, i: usize) -> usize {
        3 * self.g + i
    }
    pub fn p_g(&self, i: usize) -> usize {
        i
    }
    pub fn q_g(&self, i: usize) -> usize {
        self.g + i
    }
    pub fn v(&self, bus: usize) -> usize {
        2 * self.g + bus
    }
    pub fn theta(&self, bus: usize) -> usize {
        2 * self.g + self.n + bus
    }
    pub fn e_fd(&self, i: usize) -> usize {
        i
    }
    pub fn t_r(&self, i: usize) -> usize {
        self.g + i
    }
    /// Residual row of the active/reactive balance at `bus`.
    pub fn balance_p(&self, bus: usize) -> usize {
        2 * self.g + self.bal_p[bus]
    }
    pub fn balance_q(&self, bus: usize) -> usize {
        2 * self.g + self.bal_q[bus]
    }
    pub fn p_r(&self, k: usize) -> usize {
        k
    }
    pub fn q_r(&self, k: usize) -> usize {
        self.renewable_buses.len() + k
    }
    pub fn p_l(&self, k: usize) -> usize {
        2 * self.renewable_buses.len() + k
    }
    pub fn q_l(&self, k: usize) -> usize {
        2 * self.renewable_buses.len() + self.load_buses.len() + k
    }

    pub fn omega_range(&self) -> std::ops::Range<usize> {
        self.g..2 * self.g
    }

    pub fn x_d_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_d);
        for prefix in ["delta", "omega", "e_prime", "t_m"] {
            out.extend((1..=self.g).map(|i| format!("{prefix}_{i}")));
        }
        out
    }

    pub fn x_a_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_a);
        for prefix in ["p_g", "q_g"] {
            out.extend((1..=self.g).map(|i| format!("{prefix}_{i}")));
        }
        for prefix in ["v", "theta"] {
            out.extend(self.bus_ids.iter().map(|id| format!("{prefix}_{id}")));
        }
        out
    }

    pub fn u_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_u);
        for prefix in ["e_fd", "t_r"] {
            out.extend((1..=self.g).map(|i| format!("{prefix}_{i}")));
        }
        out
    }

    pub fn q_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_q);
        for (prefix, buses) in
            [("p_r", &self.renewable_buses), ("q_r", &self.renewable_buses), ("p_l", &self.load_buses), ("q_l", &self.load_buses)]
        {
            out.extend(buses.iter().map(|&b| format!("{prefix}_{}", self.bus_ids[b])));
        }
        out
    }

    /// Disturbance vector of a case as currently loaded.
    pub fn q_of_case(&self, case: &NetworkCase) -> DVector<f64> {
        let mut q = DVector::zeros(self.n_q);
        for (k, &b) in self.renewable_buses.iter().enumerate() {
            q[self.p_r(k)] = case.buses[b].p_ren;
            q[self.q_r(k)] = case.buses[b].q_ren;
        }
        for (k, &b) in self.load_buses.iter().enumerate() {
            q[self.p_l(k)] = case.buses[b].p_load;
            q[self.q_l(k)] = case.buses[b].q_load;
        }
        q
    }

    /// q scaled as ((1+ρ_R)·renewables, (1+ρ_L)·loads).
    pub fn scale_q(&self, q: &DVector<f64>, rho_l: f64, rho_r: f64) -> DVector<f64> {
        let r = self.renewable_buses.len();
        DVector::from_fn(self.n_q, |i, _| if i < 2 * r { (1.0 + rho_r) * q[i] } else { (1.0 + rho_l) * q[i] })
    }
}

/// Gauge factors of the two nonlinearity channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelScaling {
    /// G_d = σ_d·G_d⁰ and f_d = f_d⁰/σ_d.
    pub dynamic: f64,
    /// Target gain ‖A_a⁻¹ G_a‖₂ of the algebraic channel.
    pub algebraic_gain: f64,
}

impl Default for ChannelScaling {
    fn default() -> Self {
        ChannelScaling { dynamic: 0.1, algebraic_gain: 0.1 }
    }
}

#[derive(Debug, Clone)]
pub struct NdaeModel {
    pub idx: StateIndexing,
    pub a_d: DMatrix<f64>,
    pub g_d: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
    pub h: DVector<f64>,
    pub a_a: DMatrix<f64>,
    pub g_a: DMatrix<f64>,
    pub b_a: DMatrix<f64>,
    pub omega0: f64,
    pub gens: Vec<GeneratorParams>,
    pub ybus: AdmittanceMatrix,
    pub scaling: ChannelScaling,
    /// σ_a actually applied to the algebraic channel.
    pub sigma_a: f64,
    /// Jacobian of the unscaled f_a with respect to x_a at the flat reference.
    pub phi: DMatrix<f64>,
    pub case_name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub r_d: DVector<f64>,
    pub r_a: DVector<f64>,
}

impl Residual {
    pub fn norm_inf(&self) -> f64 {
        self.r_d.amax().max(self.r_a.amax())
    }
}

/// Jacobians of the right-hand sides F_d = A_d x_d + G_d f_d + B_d u + hω0
/// and F_a = r_a. The derivative of r_d = ẋ_d − F_d is the negative of the
/// first two blocks.
#[derive(Debug, Clone)]
pub struct JacobianBlocks {
    pub fd_xd: DMatrix<f64>,
    pub fd_xa: DMatrix<f64>,
    pub fa_xd: DMatrix<f64>,
    pub fa_xa: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct IndexOneCheck {
    pub holds: bool,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

/// Relative numerical-rank threshold for the algebraic Jacobian.
pub const RANK_TOL: f64 = 1e-8;

pub fn assemble_model(case: &NetworkCase, ybus: &AdmittanceMatrix) -> Result<NdaeModel> {
    assemble_model_with(case, ybus, ChannelScaling::default())
}

pub fn assemble_model_with(case: &NetworkCase, ybus: &AdmittanceMatrix, scaling: ChannelScaling) -> Result<NdaeModel> {
    let idx = StateIndexing::new(case);
    if ybus.n() != idx.n {
        return Err(Error::Dimension { what: "admittance matrix", expected: idx.n, got: ybus.n() });
    }
    let g = idx.g;
    let gens = case.generators.clone();
    let sd = scaling.dynamic;

    let mut a_d = DMatrix::zeros(idx.n_d, idx.n_d);
    let mut g_d = DMatrix::zeros(idx.n_d, idx.n_fd);
    let mut b_d = DMatrix::zeros(idx.n_d, idx.n_u);
    let mut h = DVector::zeros(idx.n_d);
    for (i, p) in gens.iter().enumerate() {
        let (d, w, e, t) = (idx.delta(i), idx.omega(i), idx.e_prime(i), idx.t_m(i));
        a_d[(d, w)] = 1.0;
        h[d] = -1.0;

        a_d[(w, w)] = -p.d / p.m;
        a_d[(w, t)] = 1.0 / p.m;
        g_d[(w, i)] = -sd / p.m;
        h[w] = p.d / p.m;

        a_d[(e, e)] = -p.x_d / (p.x_d_prime * p.t_d0_prime);
        g_d[(e, g + i)] = sd * (p.x_d - p.x_d_prime) / (p.x_d_prime * p.t_d0_prime);
        b_d[(e, idx.e_fd(i))] = 1.0 / p.t_d0_prime;

        a_d[(t, w)] = -1.0 / (p.r_d * p.t_ch);
        a_d[(t, t)] = -1.0 / p.t_ch;
        b_d[(t, idx.t_r(i))] = 1.0 / p.t_ch;
        h[t] = 1.0 / (p.r_d * p.t_ch);
    }

    // Unscaled algebraic channel as laid out bus by bus.
    let mut a_raw = DMatrix::zeros(idx.n_a, idx.n_a);
    let mut g_raw = DMatrix::zeros(idx.n_a, idx.n_fa);
    for (i, p) in gens.iter().enumerate() {
        let (xdp, xq) = (p.x_d_prime, p.x_q);
        let c = (xdp - xq) / (2.0 * xdp * xq);
        a_raw[(idx.p_g(i), idx.p_g(i))] = -1.0;
        a_raw[(idx.q_g(i), idx.q_g(i))] = -1.0;
        g_raw[(idx.p_g(i), i)] = 1.0 / xdp;
        g_raw[(idx.p_g(i), g + i)] = c;
        g_raw[(idx.q_g(i), 2 * g + i)] = 1.0 / xdp;
        g_raw[(idx.q_g(i), 3 * g + i)] = -(xdp + xq) / (2.0 * xdp * xq);
        g_raw[(idx.q_g(i), 4 * g + i)] = c;

        let b = idx.gen_buses[i];
        a_raw[(idx.balance_p(b), idx.p_g(i))] = -1.0;
        a_raw[(idx.balance_q(b), idx.q_g(i))] = -1.0;
    }
    for row in 2 * g..idx.n_a {
        g_raw[(row, 3 * g + row)] = 1.0;
    }

    let mut b_a = DMatrix::zeros(idx.n_a, idx.n_q);
    for (k, &b) in idx.renewable_buses.iter().enumerate() {
        b_a[(idx.balance_p(b), idx.p_r(k))] = -1.0;
        b_a[(idx.balance_q(b), idx.q_r(k))] = -1.0;
    }
    for (k, &b) in idx.load_buses.iter().enumerate() {
        b_a[(idx.balance_p(b), idx.p_l(k))] = 1.0;
        b_a[(idx.balance_q(b), idx.q_l(k))] = 1.0;
    }

    let mut model = NdaeModel {
        idx,
        a_d,
        g_d,
        b_d,
        h,
        a_a: DMatrix::zeros(0, 0),
        g_a: DMatrix::zeros(0, 0),
        b_a,
        omega0: case.omega0,
        gens,
        ybus: ybus.clone(),
        scaling,
        sigma_a: 1.0,
        phi: DMatrix::zeros(0, 0),
        case_name: case.name.clone(),
    };

    let (x_d_ref, x_a_ref) = model.flat_reference();
    let (_, phi) = model.fa_raw_jacobian(&x_d_ref, &x_a_ref);
    let a_a = &a_raw + &g_raw * &phi;
    let lu = a_a.clone().lu();
    let gain = lu
        .solve(&g_raw)
        .ok_or_else(|| Error::Validation("algebraic state matrix is singular at the flat reference".into()))?
        .singular_values()
        .max();
    model.sigma_a = scaling.algebraic_gain / gain;
    model.g_a = g_raw * model.sigma_a;
    model.a_a = a_a;
    model.phi = phi;
    Ok(model)
}

impl NdaeModel {
    /// δ = θ = 0, E′ = v = 1, everything else zero.
    pub fn flat_reference(&self) -> (DVector<f64>, DVector<f64>) {
        let idx = &self.idx;
        let mut x_d = DVector::zeros(idx.n_d);
        let mut x_a = DVector::zeros(idx.n_a);
        for i in 0..idx.g {
            x_d[idx.e_prime(i)] = 1.0;
        }
        for b in 0..idx.n {
            x_a[idx.v(b)] = 1.0;
        }
        (x_d, x_a)
    }

    fn gen_angles(&self, x_d: &DVector<f64>, x_a: &DVector<f64>, i: usize) -> (f64, f64, f64) {
        let b = self.idx.gen_buses[i];
        let phi = x_d[self.idx.delta(i)] - x_a[self.idx.theta(b)];
        (phi, x_d[self.idx.e_prime(i)], x_a[self.idx.v(b)])
    }

    fn bus_voltages(&self, x_a: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let n = self.idx.n;
        let v = (0..n).map(|b| x_a[self.idx.v(b)]).collect();
        let t = (0..n).map(|b| x_a[self.idx.theta(b)]).collect();
        (v, t)
    }

    /// Unscaled f_d⁰ = [P_G; v cos(δ − θ)].
    pub fn fd_raw(&self, x_d: &DVector<f64>, x_a: &DVector<f64>) -> DVector<f64> {
        let g = self.idx.g;
        let mut f = DVector::zeros(self.idx.n_fd);
        for i in 0..g {
            let (phi, _, v) = self.gen_angles(x_d, x_a, i);
            f[i] = x_a[self.idx.p_g(i)];
            f[g + i] = v * phi.cos();
        }
        f
    }

    pub fn f_d(&self, x_d: &DVector<f64>, x_a: &DVector<f64>) -> DVector<f64> {
        self.fd_raw(x_d, x_a) / self.scaling.dynamic
    }

    /// Unscaled f_a⁰: generator trigonometric terms followed by the bus
    /// injections in balance-row order.
    pub fn fa_raw(&self, x_d: &DVector<f64>, x_a: &DVector<f64>) -> DVector<f64> {
        let idx = &self.idx;
        let g = idx.g;
        let mut f = DVector::zeros(idx.n_fa);
        for i in 0..g {
            let (phi, e, v) = self.gen_angles(x_d, x_a, i);
            let (s1, c1) = phi.sin_cos();
            let (s2, c2) = (2.0 * phi).sin_cos();
            f[i] = e * v * s1;
            f[g + i] = v * v * s2;
            f[2 * g + i] = e * v * c1;
            f[3 * g + i] = v * v;
            f[4 * g + i] = v * v * c2;
        }
        let (v, t) = self.bus_voltages(x_a);
        let (p, q) = injections(&self.ybus, &v, &t);
        for b in 0..idx.n {
            f[3 * g + idx.balance_p(b)] = p[b];
            f[3 * g + idx.balance_q(b)] = q[b];
        }
        f
    }

    pub fn f_a(&self, x_d: &DVector<f64>, x_a: &DVector<f64>) -> DVector<f64> {
        (self.fa_raw(x_d, x_a) - &self.phi * x_a) / self.sigma_a
    }

    /// F_d = A_d x_d + G_d f_d + B_d u + h ω0.
    pub fn rhs_d(&self, x_d: &DVector<f64>, x_a: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a_d * x_d + &self.g_d * self.f_d(x_d, x_a) + &self.b_d * u + &self.h * self.omega0
    }

    /// r_a = A_a x_a + G_a f_a + B_a q.
    pub fn residual_a(&self, x_d: &DVector<f64>, x_a: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
        &self.a_a * x_a + &self.g_a * self.f_a(x_d, x_a) + &self.b_a * q
    }

    fn check_dims(&self, x_d: &DVector<f64>, x_a: &DVector<f64>) -> Result<()> {
        if x_d.len() != self.idx.n_d {
            return Err(Error::Dimension { what: "x_d", expected: self.idx.n_d, got: x_d.len() });
        }
        if x_a.len() != self.idx.n_a {
            return Err(Error::Dimension { what: "x_a", expected: self.idx.n_a, got: x_a.len() });
        }
        Ok(())
    }

    pub fn eval_residual(
        &self,
        x_d: &DVector<f64>,
        xdot_d: &DVector<f64>,
        x_a: &DVector<f64>,
        u: &DVector<f64>,
        q: &DVector<f64>,
    ) -> Result<Residual> {
        self.check_dims(x_d, x_a)?;
        if xdot_d.len() != self.idx.n_d {
            return Err(Error::Dimension { what: "xdot_d", expected: self.idx.n_d, got: xdot_d.len() });
        }
        if u.len() != self.idx.n_u {
            return Err(Error::Dimension { what: "u", expected: self.idx.n_u, got: u.len() });
        }
        if q.len() != self.idx.n_q {
            return Err(Error::Dimension { what: "q", expected: self.idx.n_q, got: q.len() });
        }
        let finite = |v: &DVector<f64>| v.iter().all(|x| x.is_finite());
        if !(finite(x_d) && finite(xdot_d) && finite(x_a) && finite(u) && finite(q)) {
            return Err(Error::NonFinite("residual inputs"));
        }
        Ok(Residual { r_d: xdot_d - self.rhs_d(x_d, x_a, u), r_a: self.residual_a(x_d, x_a, q) })
    }

    /// ∂f_d⁰/∂x_d and ∂f_d⁰/∂x_a.
    pub fn fd_raw_jacobian(&self, x_d: &DVector<f64>, x_a: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let idx = &self.idx;
        let g = idx.g;
        let mut jd = DMatrix::zeros(idx.n_fd, idx.n_d);
        let mut ja = DMatrix::zeros(idx.n_fd, idx.n_a);
        for i in 0..g {
            let b = idx.gen_buses[i];
            let (phi, _, v) = self.gen_angles(x_d, x_a, i);
            let (s, c) = phi.sin_cos();
            ja[(i, idx.p_g(i))] = 1.0;
            jd[(g + i, idx.delta(i))] = -v * s;
            ja[(g + i, idx.v(b))] = c;
            ja[(g + i, idx.theta(b))] = v * s;
        }
        (jd, ja)
    }

    /// ∂f_a⁰/∂x_d and ∂f_a⁰/∂x_a.
    pub fn fa_raw_jacobian(&self, x_d: &DVector<f64>, x_a: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let idx = &self.idx;
        let g = idx.g;
        let mut jd = DMatrix::zeros(idx.n_fa, idx.n_d);
        let mut ja = DMatrix::zeros(idx.n_fa, idx.n_a);
        for i in 0..g {
            let b = idx.gen_buses[i];
            let (dl, ep, vv, th) = (idx.delta(i), idx.e_prime(i), idx.v(b), idx.theta(b));
            let (phi, e, v) = self.gen_angles(x_d, x_a, i);
            let (s1, c1) = phi.sin_cos();
            let (s2, c2) = (2.0 * phi).sin_cos();

            let r = i;
            jd[(r, dl)] = e * v * c1;
            jd[(r, ep)] = v * s1;
            ja[(r, vv)] = e * s1;
            ja[(r, th)] = -e * v * c1;

            let r = g + i;
            jd[(r, dl)] = 2.0 * v * v * c2;
            ja[(r, vv)] = 2.0 * v * s2;
            ja[(r, th)] = -2.0 * v * v * c2;

            let r = 2 * g + i;
            jd[(r, dl)] = -e * v * s1;
            jd[(r, ep)] = v * c1;
            ja[(r, vv)] = e * c1;
            ja[(r, th)] = e * v * s1;

            ja[(3 * g + i, vv)] = 2.0 * v;

            let r = 4 * g + i;
            jd[(r, dl)] = -2.0 * v * v * s2;
            ja[(r, vv)] = 2.0 * v * c2;
            ja[(r, th)] = 2.0 * v * v * s2;
        }
        let (v, t) = self.bus_voltages(x_a);
        let inj = injection_jacobian(&self.ybus, &v, &t);
        for b in 0..idx.n {
            let (rp, rq) = (3 * g + idx.balance_p(b), 3 * g + idx.balance_q(b));
            for k in 0..idx.n {
                ja[(rp, idx.v(k))] = inj.dp_dv[(b, k)];
                ja[(rp, idx.theta(k))] = inj.dp_dtheta[(b, k)];
                ja[(rq, idx.v(k))] = inj.dq_dv[(b, k)];
                ja[(rq, idx.theta(k))] = inj.dq_dtheta[(b, k)];
            }
        }
        (jd, ja)
    }

    pub fn eval_jacobians(&self, x_d: &DVector<f64>, x_a: &DVector<f64>) -> Result<JacobianBlocks> {
        self.check_dims(x_d, x_a)?;
        if !(x_d.iter().chain(x_a.iter()).all(|x| x.is_finite())) {
            return Err(Error::NonFinite("jacobian inputs"));
        }
        let sd = self.scaling.dynamic;
        let (dd, da) = self.fd_raw_jacobian(x_d, x_a);
        let (ad, aa) = self.fa_raw_jacobian(x_d, x_a);
        let ga = &self.g_a / self.sigma_a;
        let gd = &self.g_d / sd;
        Ok(JacobianBlocks {
            fd_xd: &self.a_d + &gd * dd,
            fd_xa: &gd * da,
            fa_xd: &ga * ad,
            fa_xa: &self.a_a + &ga * (aa - &self.phi),
        })
    }

    /// Full algebraic Jacobian ∂r_a/∂x_a.
    pub fn algebraic_jacobian(&self, x_d: &DVector<f64>, x_a: &DVector<f64>) -> DMatrix<f64> {
        let (_, aa) = self.fa_raw_jacobian(x_d, x_a);
        &self.a_a + (&self.g_a / self.sigma_a) * (aa - &self.phi)
    }

    /// Index-one test: ∂r_a/∂x_a has full rank to RANK_TOL relative.
    pub fn check_index_one(&self, x_d: &DVector<f64>, x_a: &DVector<f64>) -> IndexOneCheck {
        let sv = self.algebraic_jacobian(x_d, x_a).singular_values();
        let sigma_max = sv.max();
        let sigma_min = sv.min();
        IndexOneCheck { holds: sigma_max > 0.0 && sigma_min > RANK_TOL * sigma_max, sigma_min, sigma_max }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcase::{build_admittance, Bus, BusKind, OMEGA0};

    fn one_machine(d: f64, m: f64, r_d: f64, t_ch: f64) -> NetworkCase {
        NetworkCase {
            name: "one".into(),
            base_mva: 100.0,
            buses: vec![Bus {
                id: 1,
                kind: BusKind::Slack,
                v_set: Some(1.0),
                p_load: 0.5,
                q_load: 0.0,
                g_sh: 0.5,
                b_sh: 0.0,
                has_renewable: false,
                p_ren: 0.0,
                q_ren: 0.0,
            }],
            branches: vec![],
            generators: vec![GeneratorParams {
                bus: 1,
                p_set: 0.0,
                m,
                d,
                x_d: 1.2,
                x_q: 0.8,
                x_d_prime: 0.3,
                t_d0_prime: 5.0,
                t_ch,
                r_d,
            }],
            omega0: OMEGA0,
            renewable_rule: None,
            redispatch: false,
        }
    }

    fn model_of(case: &NetworkCase) -> NdaeModel {
        assemble_model(case, &build_admittance(case).unwrap()).unwrap()
    }

    #[test]
    fn single_machine_blocks() {
        let model = model_of(&one_machine(1.0, 2.0, 0.02, 0.2));
        assert_eq!(model.a_d.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, -0.5, 0.0, 0.5]);
        assert!((model.a_d[(2, 2)] + 1.2 / (0.3 * 5.0)).abs() < 1e-15);
        // Delta row selects omega; the offset sits in h.
        assert_eq!(model.a_d.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 0.0, 0.0]);
        let h: Vec<f64> = model.h.iter().copied().collect();
        assert_eq!(h[1], 0.5);
        assert_eq!(h[2], 0.0);
        assert!((h[3] - 250.0).abs() < 1e-9);
        assert_eq!(h[0], -1.0);
    }

    #[test]
    fn b_d_only_drives_e_prime_and_t_m() {
        let model = model_of(&crate::netcase::prepare_case(&crate::CaseId::Ieee9.load()));
        let g = model.idx.g;
        for r in 0..2 * g {
            assert!(model.b_d.row(r).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn zero_everything_cancels_with_h() {
        let case = one_machine(1.0, 2.0, 0.02, 0.2);
        let model = model_of(&case);
        let idx = &model.idx;
        let x_d = DVector::zeros(idx.n_d);
        let x_a = DVector::zeros(idx.n_a);
        let u = DVector::zeros(idx.n_u);
        let q = DVector::zeros(idx.n_q);
        let xdot = &model.h * model.omega0;
        let res = model.eval_residual(&x_d, &xdot, &x_a, &u, &q).unwrap();
        assert!(res.r_d.amax() < 1e-12);
    }

    #[test]
    fn resistive_bus_balance_has_no_angle_coupling() {
        let case = one_machine(1.0, 2.0, 0.02, 0.2);
        let model = model_of(&case);
        let idx = &model.idx;
        let mut x_d = DVector::zeros(idx.n_d);
        x_d[idx.delta(0)] = 0.3;
        x_d[idx.e_prime(0)] = 1.1;
        let mut x_a = DVector::zeros(idx.n_a);
        x_a[idx.v(0)] = 0.97;
        x_a[idx.theta(0)] = 0.2;
        let jac = model.eval_jacobians(&x_d, &x_a).unwrap();
        for row in [idx.balance_p(0), idx.balance_q(0)] {
            assert!(jac.fa_xa[(row, idx.theta(0))].abs() < 1e-12);
        }
    }

    #[test]
    fn collapsed_voltages_break_index_one() {
        let case = crate::netcase::prepare_case(&crate::CaseId::Ieee9.load());
        let model = model_of(&case);
        let (x_d, mut x_a) = model.flat_reference();
        assert!(model.check_index_one(&x_d, &x_a).holds);
        for b in 0..model.idx.n {
            x_a[model.idx.v(b)] = 0.0;
        }
        assert!(!model.check_index_one(&x_d, &x_a).holds);
    }

    #[test]
    fn algebraic_channel_gain_is_normalized() {
        let case = crate::netcase::prepare_case(&crate::CaseId::Ieee14.load());
        let model = model_of(&case);
        let gain = model.a_a.clone().lu().solve(&model.g_a).unwrap().singular_values().max();
        assert!((gain - model.scaling.algebraic_gain).abs() < 1e-10);
    }
}
