//! LMI synthesis of the load/renewable-following gain and fixed-gain
//! certificate checks.
//!
//! The synthesis LMI in the variables (X1, X2, R, W, ε̄) reads
//!
//! ```text
//! ⎡ Ψ              *              *      *    ⎤
//! ⎢ A_a X2         Θ              *      *    ⎥  ⪯ −δI
//! ⎢ H̄_d^½ X1       0            −ε̄I      *    ⎥
//! ⎣ H̄_a^½ X2       H̄_a^½ R        0     −ε̄I   ⎦
//! Ψ = A_d X1 + X1 A_dᵀ + B_d W + Wᵀ B_dᵀ + ε̄ G_d G_dᵀ
//! Θ = A_a R + Rᵀ A_aᵀ + ε̄ G_a G_aᵀ
//! ```
//!
//! with E_d = I, so the free term Y in Q2 = X2 + Y is redundant and fixed to
//! zero. The gain is K_d = W X1⁻¹.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::equilibrium::OperatingPoint;
use crate::error::{Error, Result};
use crate::ndae::NdaeModel;
use crate::sdp::{self, SdpOptions, SdpProblem, SdpStatus};

/// Matrices of the descriptor system the LMIs are built from.
#[derive(Debug, Clone)]
pub struct LmiSystem {
    pub a_d: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
    pub g_d: DMatrix<f64>,
    pub a_a: DMatrix<f64>,
    pub g_a: DMatrix<f64>,
}

impl LmiSystem {
    pub fn from_model(model: &NdaeModel) -> Self {
        LmiSystem {
            a_d: model.a_d.clone(),
            b_d: model.b_d.clone(),
            g_d: model.g_d.clone(),
            a_a: model.a_a.clone(),
            g_a: model.g_a.clone(),
        }
    }

    pub fn n_d(&self) -> usize {
        self.a_d.nrows()
    }
    pub fn n_a(&self) -> usize {
        self.a_a.nrows()
    }
    pub fn n_u(&self) -> usize {
        self.b_d.ncols()
    }
    pub fn n_fd(&self) -> usize {
        self.g_d.ncols()
    }
    pub fn n_fa(&self) -> usize {
        self.g_a.ncols()
    }

    fn validate(&self) -> Result<()> {
        let (n_d, n_a) = (self.n_d(), self.n_a());
        let checks = [
            ("A_d columns", n_d, self.a_d.ncols()),
            ("B_d rows", n_d, self.b_d.nrows()),
            ("G_d rows", n_d, self.g_d.nrows()),
            ("A_a columns", n_a, self.a_a.ncols()),
            ("G_a rows", n_a, self.g_a.nrows()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(Error::Dimension { what, expected, got });
            }
        }
        Ok(())
    }
}

/// Combined quadratic bounds H̄_d (n_d×n_d) and H̄_a (n_a×n_a).
#[derive(Debug, Clone)]
pub struct BoundingMatrices {
    pub hbar_d: DMatrix<f64>,
    pub hbar_a: DMatrix<f64>,
}

impl BoundingMatrices {
    pub fn scaled_identity(n_d: usize, n_a: usize, hd: f64, ha: f64) -> Self {
        BoundingMatrices { hbar_d: DMatrix::identity(n_d, n_d) * hd, hbar_a: DMatrix::identity(n_a, n_a) * ha }
    }

    pub fn for_model(model: &NdaeModel, hd: f64, ha: f64) -> Self {
        Self::scaled_identity(model.idx.n_d, model.idx.n_a, hd, ha)
    }

    /// I for systems up to 14 buses, 10·I above.
    pub fn default_for(model: &NdaeModel) -> Self {
        let s = if model.idx.n <= 14 { 1.0 } else { 10.0 };
        Self::for_model(model, s, s)
    }

    pub fn validate(&self, n_d: usize, n_a: usize) -> Result<()> {
        for (what, m, n) in [("H̄_d", &self.hbar_d, n_d), ("H̄_a", &self.hbar_a, n_a)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Dimension { what, expected: n, got: m.nrows() });
            }
            let asym = (m - m.transpose()).amax();
            if asym > 1e-12 * (1.0 + m.amax()) {
                return Err(Error::Validation(format!("{what} is not symmetric")));
            }
            if n > 0 && m.clone().symmetric_eigenvalues().min() < -1e-12 * (1.0 + m.amax()) {
                return Err(Error::Validation(format!("{what} is not positive semidefinite")));
            }
        }
        Ok(())
    }

    pub fn sqrt_d(&self) -> DMatrix<f64> {
        psd_sqrt(&self.hbar_d)
    }
    pub fn sqrt_a(&self) -> DMatrix<f64> {
        psd_sqrt(&self.hbar_a)
    }
}

/// Principal square root of a symmetric PSD matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    let eig = m.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthesisMode {
    /// Full when the variable count is at most `full_max_vars`.
    Auto,
    /// All of X1, X2, R, W, ε̄ free.
    Full,
    /// X2 = 0 and R = r·R0 with R0 = −H̄_a⁻¹A_aᵀ; the LMI splits into a
    /// dynamic and an algebraic block.
    Reduced,
}

#[derive(Debug, Clone, Copy)]
pub struct SynthesisOptions {
    pub kappa: f64,
    pub delta: f64,
    pub mode: SynthesisMode,
    pub full_max_vars: usize,
    pub sdp: SdpOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions { kappa: 1e-3, delta: 1e-6, mode: SynthesisMode::Auto, full_max_vars: 4000, sdp: SdpOptions::default() }
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub x1: DMatrix<f64>,
    pub x2: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub eps_bar: f64,
    pub k_d: DMatrix<f64>,
    pub status: SdpStatus,
    /// κ‖W‖₂ at the returned point.
    pub objective: f64,
    pub delta: f64,
    pub mode: SynthesisMode,
    pub iterations: usize,
}

/// Position of the four block rows/columns inside the SDP blocks.
struct Layout {
    /// (sdp block, offset) for block rows 1..4.
    pos: [(usize, usize); 4],
}

#[allow(clippy::too_many_arguments)]
fn add_sym(p: &mut SdpProblem, var: usize, lay: &Layout, qr: usize, qc: usize, r: usize, c: usize, v: f64) {
    let (br, or) = lay.pos[qr];
    let (bc, oc) = lay.pos[qc];
    debug_assert_eq!(br, bc);
    p.add(var, br, or + r, oc + c, v);
}

/// Adds M + Mᵀ for a single entry M[r,c] = v in the diagonal block q.
fn add_twice(p: &mut SdpProblem, var: usize, lay: &Layout, q: usize, r: usize, c: usize, v: f64) {
    if r == c {
        add_sym(p, var, lay, q, q, r, r, 2.0 * v);
    } else {
        add_sym(p, var, lay, q, q, r, c, v);
    }
}

fn nonzero_col(m: &DMatrix<f64>, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
    m.column(j).iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect::<Vec<_>>().into_iter()
}

/// Synthesize the decentralized gain from the model's LMI data.
pub fn synthesize_gain(model: &NdaeModel, bounds: &BoundingMatrices, kappa: f64, delta: f64) -> Result<SynthesisResult> {
    let opts = SynthesisOptions { kappa, delta, ..Default::default() };
    synthesize(&LmiSystem::from_model(model), bounds, &opts)
}

pub fn synthesize(sys: &LmiSystem, bounds: &BoundingMatrices, opts: &SynthesisOptions) -> Result<SynthesisResult> {
    sys.validate()?;
    let (n_d, n_a, n_u) = (sys.n_d(), sys.n_a(), sys.n_u());
    bounds.validate(n_d, n_a)?;
    if !(opts.kappa > 0.0) || !(opts.delta > 0.0) {
        return Err(Error::Validation("kappa and delta must be positive".into()));
    }
    let full_vars = n_d * (n_d + 1) / 2 + n_a * n_d + n_a * n_a + n_u * n_d + 2;
    let mode = match opts.mode {
        SynthesisMode::Auto if full_vars <= opts.full_max_vars => SynthesisMode::Full,
        SynthesisMode::Auto => SynthesisMode::Reduced,
        m => m,
    };
    let hd = bounds.sqrt_d();
    let ha = bounds.sqrt_a();

    // The LMI is homogeneous in (X1, X2, R, W, ε̄), so solve at δ = 1 and
    // scale back; K_d does not change.
    let mut nv = 0usize;
    let mut take = |k: usize| {
        let s = nv;
        nv += k;
        s
    };
    let x1_base = take(n_d * (n_d + 1) / 2);
    let x1_idx = |i: usize, j: usize| {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        x1_base + j * (j + 1) / 2 + i
    };
    let w_base = take(n_u * n_d);
    let (x2_base, r_base) = match mode {
        SynthesisMode::Full => (take(n_a * n_d), take(n_a * n_a)),
        _ => (usize::MAX, take(1)),
    };
    let eps = take(1);
    let t = take(1);

    let mut p = SdpProblem::new(nv);
    let lay = match mode {
        SynthesisMode::Full => {
            let b = p.add_block("synthesis LMI", 2 * n_d + 2 * n_a);
            Layout { pos: [(b, 0), (b, n_d), (b, n_d + n_a), (b, 2 * n_d + n_a)] }
        }
        _ => {
            let bd = p.add_block("synthesis LMI (dynamic part)", 2 * n_d);
            let ba = p.add_block("synthesis LMI (algebraic part)", 2 * n_a);
            Layout { pos: [(bd, 0), (ba, 0), (bd, n_d), (ba, n_a)] }
        }
    };
    let b_x1 = p.add_block("X1 ⪰ δI", n_d);
    let b_eps = p.add_block("ε̄ ≥ δ", 1);
    let b_norm = p.add_block("‖W‖₂ epigraph", n_u + n_d);

    let sizes = [n_d, n_a, n_d, n_a];
    for (q, &(b, o)) in lay.pos.iter().enumerate() {
        for k in 0..sizes[q] {
            p.add_constant(b, o + k, o + k, 1.0);
        }
    }
    for k in 0..n_d {
        p.add_constant(b_x1, k, k, 1.0);
    }
    p.add_constant(b_eps, 0, 0, 1.0);

    // X1: Ψ gets A_d S + S A_dᵀ, block (3,1) gets H̄_d^½ S.
    for j in 0..n_d {
        for i in 0..=j {
            let var = x1_idx(i, j);
            let pairs: &[(usize, usize)] = if i == j { &[(i, j)] } else { &[(i, j), (j, i)] };
            for &(a, b) in pairs {
                // S has a one at (a, b).
                for (r, v) in nonzero_col(&sys.a_d, a) {
                    add_twice(&mut p, var, &lay, 0, r, b, v);
                }
                for (r, v) in nonzero_col(&hd, a) {
                    add_sym(&mut p, var, &lay, 2, 0, r, b, v);
                }
            }
            p.add(var, b_x1, i, j, -1.0);
        }
    }
    for i in 0..n_u {
        for j in 0..n_d {
            let var = w_base + i + j * n_u;
            for (r, v) in nonzero_col(&sys.b_d, i) {
                add_twice(&mut p, var, &lay, 0, r, j, v);
            }
            p.add(var, b_norm, i, n_u + j, -1.0);
        }
    }
    match mode {
        SynthesisMode::Full => {
            for i in 0..n_a {
                for j in 0..n_d {
                    let var = x2_base + i + j * n_a;
                    for (r, v) in nonzero_col(&sys.a_a, i) {
                        add_sym(&mut p, var, &lay, 1, 0, r, j, v);
                    }
                    for (r, v) in nonzero_col(&ha, i) {
                        add_sym(&mut p, var, &lay, 3, 0, r, j, v);
                    }
                }
            }
            for i in 0..n_a {
                for j in 0..n_a {
                    let var = r_base + i + j * n_a;
                    for (r, v) in nonzero_col(&sys.a_a, i) {
                        add_twice(&mut p, var, &lay, 1, r, j, v);
                    }
                    for (r, v) in nonzero_col(&ha, i) {
                        add_sym(&mut p, var, &lay, 3, 1, r, j, v);
                    }
                }
            }
        }
        _ => {
            let r0 = reduced_r0(sys, bounds)?;
            let theta = &sys.a_a * &r0;
            let theta = &theta + theta.transpose();
            let low = &ha * &r0;
            for c in 0..n_a {
                for r in 0..=c {
                    add_sym(&mut p, r_base, &lay, 1, 1, r, c, theta[(r, c)]);
                }
                for r in 0..n_a {
                    add_sym(&mut p, r_base, &lay, 3, 1, r, c, low[(r, c)]);
                }
            }
        }
    }
    let ggd = &sys.g_d * sys.g_d.transpose();
    let gga = &sys.g_a * sys.g_a.transpose();
    for c in 0..n_d {
        for r in 0..=c {
            add_sym(&mut p, eps, &lay, 0, 0, r, c, ggd[(r, c)]);
        }
        add_sym(&mut p, eps, &lay, 2, 2, c, c, -1.0);
    }
    for c in 0..n_a {
        for r in 0..=c {
            add_sym(&mut p, eps, &lay, 1, 1, r, c, gga[(r, c)]);
        }
        add_sym(&mut p, eps, &lay, 3, 3, c, c, -1.0);
    }
    p.add(eps, b_eps, 0, 0, -1.0);
    for k in 0..n_u + n_d {
        p.add(t, b_norm, k, k, -1.0);
    }
    p.objective[t] = opts.kappa;

    log::debug!("synthesis: {mode:?} mode, {nv} variables");
    let sol = sdp::solve_or_diagnose(&p, &opts.sdp)?;
    let y = &sol.y;

    let s = opts.delta;
    let x1 = DMatrix::from_fn(n_d, n_d, |i, j| y[x1_idx(i, j)]);
    let w = DMatrix::from_fn(n_u, n_d, |i, j| y[w_base + i + j * n_u]);
    let (x2, r) = match mode {
        SynthesisMode::Full => (
            DMatrix::from_fn(n_a, n_d, |i, j| y[x2_base + i + j * n_a]),
            DMatrix::from_fn(n_a, n_a, |i, j| y[r_base + i + j * n_a]),
        ),
        _ => (DMatrix::zeros(n_a, n_d), reduced_r0(sys, bounds)? * y[r_base]),
    };
    let k_d = gain_from(&w, &x1)?;
    let w = w * s;
    let objective = opts.kappa * spectral_norm(&w);
    Ok(SynthesisResult {
        x1: x1 * s,
        x2: x2 * s,
        r: r * s,
        y: DMatrix::zeros(n_a, n_d),
        w,
        eps_bar: y[eps] * s,
        k_d,
        status: sol.status,
        objective,
        delta: s,
        mode,
        iterations: sol.iterations,
    })
}

/// R0 = −H̄_a⁻¹A_aᵀ (pseudo-inverse when H̄_a is singular).
fn reduced_r0(sys: &LmiSystem, bounds: &BoundingMatrices) -> Result<DMatrix<f64>> {
    let inv = bounds.hbar_a.clone().pseudo_inverse(1e-12).map_err(|e| Error::Solver(format!("H̄_a pseudo-inverse: {e}")))?;
    Ok(-(inv * sys.a_a.transpose()))
}

fn gain_from(w: &DMatrix<f64>, x1: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ch = x1.clone().cholesky().ok_or_else(|| Error::Solver("X1 is not positive definite".into()))?;
    // K = W X1⁻¹ ⇔ X1 Kᵀ = Wᵀ.
    Ok(ch.solve(&w.transpose()).transpose())
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        m.singular_values().max()
    }
}

fn sym_max_eig(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        f64::NEG_INFINITY
    } else {
        let s = (m + m.transpose()) * 0.5;
        s.symmetric_eigenvalues().max()
    }
}

fn put(dst: &mut DMatrix<f64>, r: usize, c: usize, m: &DMatrix<f64>) {
    dst.view_mut((r, c), (m.nrows(), m.ncols())).copy_from(m);
}

/// Dense synthesis LMI block matrix at the given variables.
#[allow(clippy::too_many_arguments)]
pub fn assemble_synthesis_lmi(
    sys: &LmiSystem,
    bounds: &BoundingMatrices,
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DMatrix<f64>,
    w: &DMatrix<f64>,
    eps_bar: f64,
) -> DMatrix<f64> {
    let (n_d, n_a) = (sys.n_d(), sys.n_a());
    let q2 = x2 + y;
    let bw = &sys.b_d * w;
    let psi = &sys.a_d * x1 + x1 * sys.a_d.transpose() + &bw + bw.transpose() + &sys.g_d * sys.g_d.transpose() * eps_bar;
    let ar = &sys.a_a * r;
    let theta = &ar + ar.transpose() + &sys.g_a * sys.g_a.transpose() * eps_bar;
    let hd = bounds.sqrt_d();
    let ha = bounds.sqrt_a();

    let n = 2 * n_d + 2 * n_a;
    let mut m = DMatrix::zeros(n, n);
    let (o2, o3, o4) = (n_d, n_d + n_a, 2 * n_d + n_a);
    put(&mut m, 0, 0, &psi);
    put(&mut m, o2, 0, &(&sys.a_a * &q2));
    put(&mut m, o2, o2, &theta);
    put(&mut m, o3, 0, &(&hd * x1));
    put(&mut m, o4, 0, &(&ha * &q2));
    put(&mut m, o4, o2, &(&ha * r));
    put(&mut m, o3, o3, &(DMatrix::identity(n_d, n_d) * -eps_bar));
    put(&mut m, o4, o4, &(DMatrix::identity(n_a, n_a) * -eps_bar));
    let lower = m.clone();
    for i in 0..n {
        for j in i + 1..n {
            m[(i, j)] = lower[(j, i)];
        }
    }
    m
}

/// λ_max of the re-assembled synthesis LMI at a result.
pub fn synthesis_lmi_max_eigenvalue(sys: &LmiSystem, bounds: &BoundingMatrices, res: &SynthesisResult) -> f64 {
    sym_max_eig(&assemble_synthesis_lmi(sys, bounds, &res.x1, &res.x2, &res.r, &res.y, &res.w, res.eps_bar))
}

#[derive(Debug, Clone)]
pub struct CertificateResult {
    pub p1: DMatrix<f64>,
    pub p2: DMatrix<f64>,
    pub p3: DMatrix<f64>,
    pub eps: f64,
    /// −λ_max(Ω) at the returned point, with P1 normalized to λ_max(P1) ≤ 1.
    pub min_eig_margin: f64,
}

/// Dense Ω(K_d; P1, P2, P3, ε).
pub fn assemble_certificate_lmi(
    sys: &LmiSystem,
    bounds: &BoundingMatrices,
    k_d: &DMatrix<f64>,
    p1: &DMatrix<f64>,
    p2: &DMatrix<f64>,
    p3: &DMatrix<f64>,
    eps: f64,
) -> DMatrix<f64> {
    let (n_d, n_a, n_fd, n_fa) = (sys.n_d(), sys.n_a(), sys.n_fd(), sys.n_fa());
    let abar = &sys.a_d + &sys.b_d * k_d;
    let n = n_d + n_a + n_fd + n_fa;
    let (o2, o3, o4) = (n_d, n_d + n_a, n_d + n_a + n_fd);
    let mut m = DMatrix::zeros(n, n);
    let ap = abar.transpose() * p1;
    put(&mut m, 0, 0, &(&ap + ap.transpose() + &bounds.hbar_d * eps));
    put(&mut m, o2, 0, &(sys.a_a.transpose() * p2));
    let ap3 = sys.a_a.transpose() * p3;
    put(&mut m, o2, o2, &(&ap3 + ap3.transpose() + &bounds.hbar_a * eps));
    put(&mut m, o3, 0, &(sys.g_d.transpose() * p1));
    put(&mut m, o4, 0, &(sys.g_a.transpose() * p2));
    put(&mut m, o4, o2, &(sys.g_a.transpose() * p3));
    put(&mut m, o3, o3, &(DMatrix::identity(n_fd, n_fd) * -eps));
    put(&mut m, o4, o4, &(DMatrix::identity(n_fa, n_fa) * -eps));
    let lower = m.clone();
    for i in 0..n {
        for j in i + 1..n {
            m[(i, j)] = lower[(j, i)];
        }
    }
    m
}

pub fn verify_certificate(model: &NdaeModel, k_d: &DMatrix<f64>, bounds: &BoundingMatrices) -> Result<CertificateResult> {
    verify(&LmiSystem::from_model(model), k_d, bounds, SynthesisMode::Auto, &SdpOptions::default())
}

/// Look for (P1, P2, P3, ε) with Ω ≺ 0 and P1 ≻ 0 for a fixed gain.
///
/// Maximizes t subject to Ω ⪯ −tI, tI ⪯ P1 ⪯ I, ε ≥ t. In reduced mode
/// P2 = 0 and P3 = −p·A_a⁻ᵀH̄_a.
pub fn verify(
    sys: &LmiSystem,
    k_d: &DMatrix<f64>,
    bounds: &BoundingMatrices,
    mode: SynthesisMode,
    sdp_opts: &SdpOptions,
) -> Result<CertificateResult> {
    sys.validate()?;
    let (n_d, n_a, n_fd, n_fa) = (sys.n_d(), sys.n_a(), sys.n_fd(), sys.n_fa());
    bounds.validate(n_d, n_a)?;
    if k_d.nrows() != sys.n_u() || k_d.ncols() != n_d {
        return Err(Error::Dimension { what: "gain columns", expected: n_d, got: k_d.ncols() });
    }
    let full_vars = n_d * (n_d + 1) / 2 + n_a * n_d + n_a * n_a + 2;
    let mode = match mode {
        SynthesisMode::Auto if full_vars <= 4000 => SynthesisMode::Full,
        SynthesisMode::Auto => SynthesisMode::Reduced,
        m => m,
    };
    let abar = &sys.a_d + &sys.b_d * k_d;
    let p3_0 = match mode {
        SynthesisMode::Full => DMatrix::zeros(0, 0),
        _ => {
            let inv_t = sys.a_a.transpose().try_inverse().ok_or(Error::SingularJacobian("algebraic state matrix"))?;
            -(inv_t * &bounds.hbar_a)
        }
    };

    let n_p1 = n_d * (n_d + 1) / 2;
    let p1_idx = |i: usize, j: usize| {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        j * (j + 1) / 2 + i
    };
    let (p2_base, p3_base, nv) = match mode {
        SynthesisMode::Full => (n_p1, n_p1 + n_a * n_d, n_p1 + n_a * n_d + n_a * n_a),
        _ => (usize::MAX, n_p1, n_p1 + 1),
    };
    let eps = nv;
    let t = nv + 1;
    let mut p = SdpProblem::new(nv + 2);
    let n_om = n_d + n_a + n_fd + n_fa;
    let b_om = p.add_block("Ω", n_om);
    let b_lo = p.add_block("P1 ⪰ tI", n_d);
    let b_hi = p.add_block("P1 ⪯ I", n_d);
    let b_eps = p.add_block("ε ≥ t", 1);
    let (o2, o3, o4) = (n_d, n_d + n_a, n_d + n_a + n_fd);

    for j in 0..n_d {
        for i in 0..=j {
            let var = p1_idx(i, j);
            let pairs: &[(usize, usize)] = if i == j { &[(i, j)] } else { &[(i, j), (j, i)] };
            for &(a, b) in pairs {
                // S[a,b] = 1: ĀᵀS has column b equal to row a of Ā.
                for c in 0..n_d {
                    let v = abar[(a, c)];
                    if v != 0.0 {
                        if c == b {
                            p.add(var, b_om, c, b, 2.0 * v);
                        } else {
                            p.add(var, b_om, c, b, v);
                        }
                    }
                }
                // G_dᵀS: column b equals row a of G_d.
                for c in 0..n_fd {
                    let v = sys.g_d[(a, c)];
                    if v != 0.0 {
                        p.add(var, b_om, o3 + c, b, v);
                    }
                }
            }
            p.add(var, b_lo, i, j, -1.0);
            p.add(var, b_hi, i, j, 1.0);
        }
    }
    match mode {
        SynthesisMode::Full => {
            for i in 0..n_a {
                for j in 0..n_d {
                    let var = p2_base + i + j * n_a;
                    for c in 0..n_a {
                        let v = sys.a_a[(i, c)];
                        if v != 0.0 {
                            p.add(var, b_om, o2 + c, j, v);
                        }
                    }
                    for c in 0..n_fa {
                        let v = sys.g_a[(i, c)];
                        if v != 0.0 {
                            p.add(var, b_om, o4 + c, j, v);
                        }
                    }
                }
            }
            for i in 0..n_a {
                for j in 0..n_a {
                    let var = p3_base + i + j * n_a;
                    for c in 0..n_a {
                        let v = sys.a_a[(i, c)];
                        if v != 0.0 {
                            p.add(var, b_om, o2 + c, o2 + j, if c == j { 2.0 * v } else { v });
                        }
                    }
                    for c in 0..n_fa {
                        let v = sys.g_a[(i, c)];
                        if v != 0.0 {
                            p.add(var, b_om, o4 + c, o2 + j, v);
                        }
                    }
                }
            }
        }
        _ => {
            let ap = sys.a_a.transpose() * &p3_0;
            let ap = &ap + ap.transpose();
            let gp = sys.g_a.transpose() * &p3_0;
            for c in 0..n_a {
                for r in 0..=c {
                    p.add(p3_base, b_om, o2 + r, o2 + c, ap[(r, c)]);
                }
                for r in 0..n_fa {
                    p.add(p3_base, b_om, o4 + r, o2 + c, gp[(r, c)]);
                }
            }
        }
    }
    for c in 0..n_d {
        for r in 0..=c {
            p.add(eps, b_om, r, c, bounds.hbar_d[(r, c)]);
        }
    }
    for c in 0..n_a {
        for r in 0..=c {
            p.add(eps, b_om, o2 + r, o2 + c, bounds.hbar_a[(r, c)]);
        }
    }
    for k in 0..n_fd + n_fa {
        p.add(eps, b_om, o3 + k, o3 + k, -1.0);
    }
    p.add(eps, b_eps, 0, 0, -1.0);
    for k in 0..n_om {
        p.add(t, b_om, k, k, 1.0);
    }
    for k in 0..n_d {
        p.add(t, b_lo, k, k, 1.0);
        p.add_constant(b_hi, k, k, -1.0);
    }
    p.add(t, b_eps, 0, 0, 1.0);
    // Keep t bounded when n_d = 0.
    let b_t = p.add_block("t ≤ 1", 1);
    p.add(t, b_t, 0, 0, 1.0);
    p.add_constant(b_t, 0, 0, -1.0);
    p.objective[t] = -1.0;

    let sol = sdp::solve(&p, sdp_opts)?;
    let y = &sol.y;
    let p1 = DMatrix::from_fn(n_d, n_d, |i, j| y[p1_idx(i, j)]);
    let (p2, p3) = match mode {
        SynthesisMode::Full => (
            DMatrix::from_fn(n_a, n_d, |i, j| y[p2_base + i + j * n_a]),
            DMatrix::from_fn(n_a, n_a, |i, j| y[p3_base + i + j * n_a]),
        ),
        _ => (DMatrix::zeros(n_a, n_d), &p3_0 * y[p3_base]),
    };
    let e = y[eps];
    let omega = assemble_certificate_lmi(sys, bounds, k_d, &p1, &p2, &p3, e);
    let margin = -sym_max_eig(&omega);
    let p1_min = if n_d == 0 { f64::INFINITY } else { p1.clone().symmetric_eigenvalues().min() };
    let floor = 1e-9;
    if !(margin > floor && p1_min > floor && e > 0.0) {
        return Err(Error::Infeasible(format!(
            "no certificate for this gain: best margin {margin:.3e}, λ_min(P1) {p1_min:.3e}, ε {e:.3e}"
        )));
    }
    Ok(CertificateResult { p1, p2, p3, eps: e, min_eig_margin: margin })
}

/// λ_max(Mᵀ(aMMᵀ + bI)⁻¹M − aI).
///
/// The eigenvalues of Mᵀ(aMMᵀ + bI)⁻¹M are σ²/(aσ² + b) < 1/a, so this is
/// non-positive whenever a ≥ 1 but can be positive for a < 1; see
/// [`resolvent_reciprocal_max_eigenvalue`].
pub fn resolvent_max_eigenvalue(m: &DMatrix<f64>, a: f64, b: f64) -> f64 {
    let s = m.ncols();
    sym_max_eig(&(resolvent_form(m, a, b) - DMatrix::identity(s, s) * a))
}

/// λ_max(Mᵀ(aMMᵀ + bI)⁻¹M − a⁻¹I), non-positive for every M and a, b > 0.
pub fn resolvent_reciprocal_max_eigenvalue(m: &DMatrix<f64>, a: f64, b: f64) -> f64 {
    let s = m.ncols();
    sym_max_eig(&(resolvent_form(m, a, b) - DMatrix::identity(s, s) / a))
}

fn resolvent_form(m: &DMatrix<f64>, a: f64, b: f64) -> DMatrix<f64> {
    let r = m.nrows();
    let inner = m * m.transpose() * a + DMatrix::identity(r, r) * b;
    let sol = inner.cholesky().expect("aMMᵀ + bI is positive definite").solve(m);
    m.transpose() * sol
}

#[derive(Debug, Clone, Copy)]
pub struct QuadraticBoundReport {
    pub samples: usize,
    pub violations: usize,
    pub violation_fraction: f64,
    /// max ‖Δf‖² / (Δx_dᵀH̄_dΔx_d + Δx_aᵀH̄_aΔx_a).
    pub worst_ratio: f64,
}

/// Squared deviation norms (‖Δf_d‖² + ‖Δf_a‖², Δxᵀ H̄ Δx) at one offset.
pub fn quadratic_bound_terms(
    model: &NdaeModel,
    bounds: &BoundingMatrices,
    op: &OperatingPoint,
    dx_d: &DVector<f64>,
    dx_a: &DVector<f64>,
) -> (f64, f64) {
    let xd = &op.x_d + dx_d;
    let xa = &op.x_a + dx_a;
    let dfd = model.f_d(&xd, &xa) - model.f_d(&op.x_d, &op.x_a);
    let dfa = model.f_a(&xd, &xa) - model.f_a(&op.x_d, &op.x_a);
    let lhs = dfd.norm_squared() + dfa.norm_squared();
    let rhs = dx_d.dot(&(&bounds.hbar_d * dx_d)) + dx_a.dot(&(&bounds.hbar_a * dx_a));
    (lhs, rhs)
}

/// Monte-Carlo check of ‖Δf‖² ≤ Δxᵀ H̄ Δx over a box of the given
/// half-width around an operating point.
pub fn check_quadratic_bounds(
    model: &NdaeModel,
    bounds: &BoundingMatrices,
    half_width: f64,
    samples: usize,
    op: &OperatingPoint,
    seed: u64,
) -> QuadraticBoundReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_d, n_a) = (model.idx.n_d, model.idx.n_a);
    let mut violations = 0;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let dx_d = DVector::from_fn(n_d, |_, _| rng.gen_range(-half_width..=half_width));
        let dx_a = DVector::from_fn(n_a, |_, _| rng.gen_range(-half_width..=half_width));
        let (lhs, rhs) = quadratic_bound_terms(model, bounds, op, &dx_d, &dx_a);
        if lhs > rhs {
            violations += 1;
        }
        let ratio = if rhs > 0.0 {
            lhs / rhs
        } else if lhs > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        worst = worst.max(ratio);
    }
    QuadraticBoundReport {
        samples,
        violations,
        violation_fraction: if samples == 0 { 0.0 } else { violations as f64 / samples as f64 },
        worst_ratio: worst,
    }
}
