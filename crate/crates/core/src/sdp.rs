//! Primal-dual interior-point solver for block-diagonal linear matrix
//! inequalities
//!
//! ```text
//! minimize cᵀy  subject to  F0_b + Σ_i y_i F_i_b ⪯ 0  for every block b.
//! ```
//!
//! Internally this is the dual standard form max bᵀy, Σ y_i A_i + S = C with
//! A_i = F_i, C = −F0, b = −c, solved by an infeasible-start path-following
//! method using the HKM search direction and Mehrotra's predictor-corrector.

use faer::prelude::Solve;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetric coefficient entries (r ≤ c): value v stands at (r,c) and (c,r).
type Triplets = Vec<(usize, usize, f64)>;

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub block_sizes: Vec<usize>,
    pub block_names: Vec<String>,
    pub objective: Vec<f64>,
    constant: Vec<DMatrix<f64>>,
    /// Per variable: (block, entries).
    coefs: Vec<Vec<(usize, Triplets)>>,
}

impl SdpProblem {
    pub fn new(n_vars: usize) -> Self {
        SdpProblem {
            block_sizes: Vec::new(),
            block_names: Vec::new(),
            objective: vec![0.0; n_vars],
            constant: Vec::new(),
            coefs: vec![Vec::new(); n_vars],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_block(&mut self, name: impl Into<String>, size: usize) -> usize {
        self.block_sizes.push(size);
        self.block_names.push(name.into());
        self.constant.push(DMatrix::zeros(size, size));
        self.block_sizes.len() - 1
    }

    /// F_var[r,c] = F_var[c,r] += v.
    pub fn add(&mut self, var: usize, block: usize, r: usize, c: usize, v: f64) {
        if v == 0.0 {
            return;
        }
        let (r, c) = if r <= c { (r, c) } else { (c, r) };
        let parts = &mut self.coefs[var];
        match parts.iter_mut().find(|(b, _)| *b == block) {
            Some((_, t)) => t.push((r, c, v)),
            None => parts.push((block, vec![(r, c, v)])),
        }
    }

    /// F0[r,c] = F0[c,r] += v.
    pub fn add_constant(&mut self, block: usize, r: usize, c: usize, v: f64) {
        self.constant[block][(r, c)] += v;
        if r != c {
            self.constant[block][(c, r)] += v;
        }
    }

    /// F(y) per block.
    pub fn evaluate(&self, y: &[f64]) -> Vec<DMatrix<f64>> {
        let mut out = self.constant.clone();
        for (i, parts) in self.coefs.iter().enumerate() {
            for (b, tri) in parts {
                for &(r, c, v) in tri {
                    out[*b][(r, c)] += y[i] * v;
                    if r != c {
                        out[*b][(c, r)] += y[i] * v;
                    }
                }
            }
        }
        out
    }

    /// Largest eigenvalue of F(y) per block.
    pub fn block_max_eigenvalues(&self, y: &[f64]) -> Vec<f64> {
        self.evaluate(y).into_iter().map(|m| m.symmetric_eigenvalues().max()).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SdpOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SdpOptions {
    fn default() -> Self {
        SdpOptions { tol: 1e-8, max_iter: 120 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    /// Stopped at the iteration limit or on stalled progress with a feasible
    /// dual iterate that meets a looser tolerance.
    Inaccurate,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub y: Vec<f64>,
    pub status: SdpStatus,
    pub iterations: usize,
    pub objective: f64,
    pub gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
}

struct Part {
    block: usize,
    tri: Triplets,
    dense: Option<DMatrix<f64>>,
}

struct Compiled {
    sizes: Vec<usize>,
    c: Vec<DMatrix<f64>>,
    b: Vec<f64>,
    vars: Vec<Vec<Part>>,
    /// Per block: (var, part index) pairs touching it.
    by_block: Vec<Vec<(usize, usize)>>,
}

fn merge(mut tri: Triplets) -> Triplets {
    tri.sort_by_key(|a| (a.0, a.1));
    let mut out: Triplets = Vec::with_capacity(tri.len());
    for (r, c, v) in tri {
        match out.last_mut() {
            Some(last) if last.0 == r && last.1 == c => last.2 += v,
            _ => out.push((r, c, v)),
        }
    }
    out.retain(|t| t.2 != 0.0);
    out
}

fn sym_dense(n: usize, tri: &Triplets) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for &(r, c, v) in tri {
        m[(r, c)] += v;
        if r != c {
            m[(c, r)] += v;
        }
    }
    m
}

impl Compiled {
    fn new(p: &SdpProblem) -> Self {
        let nb = p.block_sizes.len();
        let mut vars = Vec::with_capacity(p.n_vars());
        let mut by_block = vec![Vec::new(); nb];
        for (i, parts) in p.coefs.iter().enumerate() {
            let mut out = Vec::new();
            for (b, tri) in parts {
                let tri = merge(tri.clone());
                if tri.is_empty() {
                    continue;
                }
                let n = p.block_sizes[*b];
                let dense = (tri.len() > 2 * n).then(|| sym_dense(n, &tri));
                by_block[*b].push((i, out.len()));
                out.push(Part { block: *b, tri, dense });
            }
            vars.push(out);
        }
        Compiled {
            sizes: p.block_sizes.clone(),
            c: p.constant.iter().map(|m| -m).collect(),
            b: p.objective.iter().map(|v| -v).collect(),
            vars,
            by_block,
        }
    }

    fn m(&self) -> usize {
        self.vars.len()
    }

    /// <A_i, Z> for a (not necessarily symmetric) block matrix Z.
    fn inner(part: &Part, z: &DMatrix<f64>) -> f64 {
        match &part.dense {
            Some(d) => d.dot(z),
            None => part.tri.iter().map(|&(r, c, v)| if r == c { v * z[(r, r)] } else { v * (z[(r, c)] + z[(c, r)]) }).sum(),
        }
    }

    fn op(&self, z: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_iterator(self.m(), self.vars.iter().map(|parts| parts.iter().map(|p| Self::inner(p, &z[p.block])).sum()))
    }

    fn op_adjoint(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = self.sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for (i, parts) in self.vars.iter().enumerate() {
            if y[i] == 0.0 {
                continue;
            }
            for p in parts {
                let blk = &mut out[p.block];
                for &(r, c, v) in &p.tri {
                    blk[(r, c)] += y[i] * v;
                    if r != c {
                        blk[(c, r)] += y[i] * v;
                    }
                }
            }
        }
        out
    }

    /// Schur complement M_ij = <A_i, X A_j S⁻¹>.
    fn schur(&self, x: &[DMatrix<f64>], sinv: &[DMatrix<f64>]) -> DMatrix<f64> {
        let m = self.m();
        let mut mat = DMatrix::zeros(m, m);
        for j in 0..m {
            for pj in &self.vars[j] {
                let b = pj.block;
                let (xb, sb) = (&x[b], &sinv[b]);
                let n = self.sizes[b];
                let g = match &pj.dense {
                    Some(d) => xb * d * sb,
                    None => {
                        let mut g = DMatrix::zeros(n, n);
                        for &(r, c, v) in &pj.tri {
                            for q in 0..n {
                                let a = v * sb[(c, q)];
                                if a != 0.0 {
                                    g.column_mut(q).axpy(a, &xb.column(r), 1.0);
                                }
                                if r != c {
                                    let a2 = v * sb[(r, q)];
                                    if a2 != 0.0 {
                                        g.column_mut(q).axpy(a2, &xb.column(c), 1.0);
                                    }
                                }
                            }
                        }
                        g
                    }
                };
                for &(i, pi) in &self.by_block[b] {
                    if i < j {
                        continue;
                    }
                    mat[(i, j)] += Self::inner(&self.vars[i][pi], &g);
                }
            }
        }
        for j in 0..m {
            for i in j + 1..m {
                mat[(j, i)] = mat[(i, j)];
            }
        }
        mat
    }
}

fn frob(ms: &[DMatrix<f64>]) -> f64 {
    ms.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
}

fn dot(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest α with X + αΔX ⪰ 0 (∞ if unbounded).
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let Some(ch) = x.clone().cholesky() else { return 0.0 };
    let l = ch.l();
    let Some(linv) = l.clone().try_inverse() else { return 0.0 };
    let mut t = &linv * dx * linv.transpose();
    symmetrize(&mut t);
    let lmin = t.symmetric_eigenvalues().min();
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

/// Cholesky solve of the Schur system with Jacobi scaling, a diagonal
/// shift when the factorization breaks down, and iterative refinement
/// against the unshifted matrix.
fn schur_solve(m: &DMatrix<f64>, rhs: &[&DVector<f64>]) -> Option<Vec<DVector<f64>>> {
    let n = m.nrows();
    let d: Vec<f64> = (0..n).map(|i| 1.0 / m[(i, i)].abs().max(1e-300).sqrt()).collect();
    let mut reg = 0.0;
    for _ in 0..13 {
        let fm = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)] * d[i] * d[j] + if i == j { reg } else { 0.0 });
        if let Ok(llt) = fm.llt(faer::Side::Lower) {
            let solve = |r: &DVector<f64>| {
                let mut b = faer::Mat::<f64>::from_fn(n, 1, |i, _| r[i] * d[i]);
                llt.solve_in_place(b.as_mut());
                DVector::from_fn(n, |i, _| b[(i, 0)] * d[i])
            };
            let mut out = Vec::with_capacity(rhs.len());
            for r in rhs {
                let mut x = solve(r);
                let rn = r.norm().max(1e-300);
                let mut res = *r - m * &x;
                for _ in 0..5 {
                    if res.norm() <= 1e-14 * rn {
                        break;
                    }
                    let dx = solve(&res);
                    let cand = &x + dx;
                    let cres = *r - m * &cand;
                    if cres.norm() >= res.norm() {
                        break;
                    }
                    x = cand;
                    res = cres;
                }
                out.push(x);
            }
            return Some(out);
        }
        reg = if reg == 0.0 { 1e-14 } else { reg * 10.0 };
    }
    None
}

/// Loosest combined residual at which a dual-feasible iterate is returned
/// as [`SdpStatus::Inaccurate`].
const ACCEPT_TOL: f64 = 1e-4;

/// Solve the LMI problem. Returns a solver error when the iteration fails;
/// use [`solve_or_diagnose`] for an infeasibility report.
pub fn solve(problem: &SdpProblem, opts: &SdpOptions) -> Result<SdpSolution> {
    let cp = Compiled::new(problem);
    let m = cp.m();
    let nb = cp.sizes.len();
    let n_total: usize = cp.sizes.iter().sum();
    let b = DVector::from_vec(cp.b.clone());
    let norm_b = b.norm();
    let norm_c = frob(&cp.c);

    // Initial point, scaled per block.
    let mut x = Vec::with_capacity(nb);
    let mut s = Vec::with_capacity(nb);
    for k in 0..nb {
        let n = cp.sizes[k] as f64;
        let mut amax: f64 = 0.0;
        let mut ratio: f64 = 0.0;
        for &(i, pi) in &cp.by_block[k] {
            let a = cp.vars[i][pi].tri.iter().map(|t| if t.0 == t.1 { t.2 * t.2 } else { 2.0 * t.2 * t.2 }).sum::<f64>().sqrt();
            amax = amax.max(a);
            ratio = ratio.max((1.0 + cp.b[i].abs()) / (1.0 + a));
        }
        let xi = (10.0f64).max(n.sqrt()).max(n * ratio);
        let eta = (10.0f64).max(n.sqrt()).max(amax.max(cp.c[k].norm()));
        x.push(DMatrix::identity(cp.sizes[k], cp.sizes[k]) * xi);
        s.push(DMatrix::identity(cp.sizes[k], cp.sizes[k]) * eta);
    }
    let mut y = DVector::zeros(m);

    let mut best: Option<(f64, SdpSolution)> = None;
    for iter in 0..opts.max_iter {
        let ax = cp.op(&x);
        let rp = &b - &ax;
        let aty = cp.op_adjoint(&y);
        let rd: Vec<DMatrix<f64>> = (0..nb).map(|k| &cp.c[k] - &s[k] - &aty[k]).collect();
        let mu = dot(&x, &s) / n_total as f64;
        let pobj = dot(&cp.c, &x);
        let dobj = b.dot(&y);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let pinf = rp.norm() / (1.0 + norm_b);
        let dinf = frob(&rd) / (1.0 + norm_c);
        log::debug!("sdp iter {iter}: pobj {pobj:.6e} dobj {dobj:.6e} gap {gap:.2e} pinf {pinf:.2e} dinf {dinf:.2e} mu {mu:.2e}");

        let current = SdpSolution {
            y: y.iter().copied().collect(),
            status: SdpStatus::Inaccurate,
            iterations: iter,
            objective: -dobj,
            gap,
            primal_infeasibility: pinf,
            dual_infeasibility: dinf,
        };
        if gap < opts.tol && pinf < opts.tol && dinf < opts.tol {
            return Ok(SdpSolution { status: SdpStatus::Optimal, ..current });
        }
        let score = gap.max(pinf).max(dinf);
        if dinf < 1e-7 && best.as_ref().is_none_or(|(sc, _)| score < *sc) {
            best = Some((score, current));
        }
        // Unbounded primal iterates certify an empty LMI set.
        if !(mu.is_finite() && pobj.is_finite() && dobj.is_finite()) || pobj.abs() > 1e12 * (1.0 + dobj.abs()) {
            log::debug!("sdp: objective blow-up");
            break;
        }

        let mut sinv = Vec::with_capacity(nb);
        for sk in &s {
            let inv =
                sk.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| Error::Solver("dual slack lost definiteness".into()))?;
            sinv.push(inv);
        }
        let schur = cp.schur(&x, &sinv);

        // Direction for a complementarity target H (block matrices).
        let direction = |h: &[DMatrix<f64>], dy_out: &DVector<f64>| -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
            let aty = cp.op_adjoint(dy_out);
            let ds: Vec<DMatrix<f64>> = (0..nb).map(|k| &rd[k] - &aty[k]).collect();
            let dx: Vec<DMatrix<f64>> = (0..nb)
                .map(|k| {
                    let mut d = &h[k] - &x[k] * &ds[k] * &sinv[k];
                    symmetrize(&mut d);
                    d
                })
                .collect();
            (dx, ds)
        };
        let rhs_for = |h: &[DMatrix<f64>]| -> DVector<f64> {
            let t: Vec<DMatrix<f64>> = (0..nb).map(|k| &h[k] - &x[k] * &rd[k] * &sinv[k]).collect();
            &rp - cp.op(&t)
        };

        // Predictor: H = −X.
        let h_aff: Vec<DMatrix<f64>> = x.iter().map(|xk| -xk).collect();
        let r_aff = rhs_for(&h_aff);
        let Some(sol) = schur_solve(&schur, &[&r_aff]) else {
            log::debug!("sdp: Schur factorization failed");
            break;
        };
        let dy_aff = sol.into_iter().next().unwrap();
        let (dx_aff, ds_aff) = direction(&h_aff, &dy_aff);
        let ap = (0..nb).map(|k| max_step(&x[k], &dx_aff[k])).fold(f64::INFINITY, f64::min).min(1.0);
        let ad = (0..nb).map(|k| max_step(&s[k], &ds_aff[k])).fold(f64::INFINITY, f64::min).min(1.0);
        let mut mu_aff = 0.0;
        for k in 0..nb {
            mu_aff += (&x[k] + &dx_aff[k] * ap).dot(&(&s[k] + &ds_aff[k] * ad));
        }
        mu_aff /= n_total as f64;
        let sigma = (mu_aff / mu).max(0.0).powi(3).min(1.0);

        // Corrector: H = σμS⁻¹ − X − ΔX_aff ΔS_aff S⁻¹.
        let h_cor: Vec<DMatrix<f64>> =
            (0..nb).map(|k| &sinv[k] * (sigma * mu) - &x[k] - &dx_aff[k] * &ds_aff[k] * &sinv[k]).collect();
        let r_cor = rhs_for(&h_cor);
        let Some(sol) = schur_solve(&schur, &[&r_cor]) else {
            log::debug!("sdp: Schur factorization failed");
            break;
        };
        let dy = sol.into_iter().next().unwrap();
        let (dx, ds) = direction(&h_cor, &dy);

        let ap = (0..nb).map(|k| max_step(&x[k], &dx[k])).fold(f64::INFINITY, f64::min);
        let ad = (0..nb).map(|k| max_step(&s[k], &ds[k])).fold(f64::INFINITY, f64::min);
        let gamma = 0.9 + 0.09 * ap.min(ad).min(1.0);
        let ap = (gamma * ap).min(1.0);
        let ad = (gamma * ad).min(1.0);
        if ap < 1e-12 && ad < 1e-12 {
            log::debug!("sdp: step lengths vanished");
            break;
        }
        for k in 0..nb {
            x[k] += &dx[k] * ap;
            s[k] += &ds[k] * ad;
        }
        y += &dy * ad;
    }
    match best {
        Some((score, sol)) if score < ACCEPT_TOL => Ok(sol),
        _ => Err(Error::Solver("interior-point iteration did not converge".into())),
    }
}

/// Solve, and on failure run a phase-one problem to name the most violated
/// constraint block.
pub fn solve_or_diagnose(problem: &SdpProblem, opts: &SdpOptions) -> Result<SdpSolution> {
    match solve(problem, opts) {
        Ok(sol) => Ok(sol),
        Err(err) => match phase_one(problem, opts) {
            Some((s, y)) if s > -1e-7 => {
                let eig = problem.block_max_eigenvalues(&y);
                let (k, worst) =
                    eig.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
                Err(Error::Infeasible(format!(
                    "block '{}' most violated (largest eigenvalue {:.3e} at the least-infeasible point)",
                    problem.block_names[k], worst
                )))
            }
            _ => Err(err),
        },
    }
}

/// min s s.t. F(y) ⪯ sI, s ≥ −1. Returns (s*, y*).
pub fn phase_one(problem: &SdpProblem, opts: &SdpOptions) -> Option<(f64, Vec<f64>)> {
    let m = problem.n_vars();
    let mut p1 = problem.clone();
    p1.objective = vec![0.0; m + 1];
    p1.coefs.push(Vec::new());
    for k in 0..problem.block_sizes.len() {
        for r in 0..problem.block_sizes[k] {
            p1.add(m, k, r, r, -1.0);
        }
    }
    let lb = p1.add_block("phase-one bound", 1);
    p1.add(m, lb, 0, 0, -1.0);
    p1.add_constant(lb, 0, 0, -1.0);
    p1.objective[m] = 1.0;
    let sol = solve(&p1, opts).ok()?;
    Some((sol.y[m], sol.y[..m].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_lp() {
        // min y s.t. 1 − y ≤ 0  →  y = 1.
        let mut p = SdpProblem::new(1);
        let b = p.add_block("bound", 1);
        p.add(0, b, 0, 0, -1.0);
        p.add_constant(b, 0, 0, 1.0);
        p.objective[0] = 1.0;
        let sol = solve(&p, &SdpOptions::default()).unwrap();
        assert!((sol.y[0] - 1.0).abs() < 1e-7, "{:?}", sol.y);
    }

    #[test]
    fn max_eigenvalue_as_sdp() {
        // min t s.t. A − tI ⪯ 0  →  t = λmax(A).
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let mut p = SdpProblem::new(1);
        let b = p.add_block("lmi", 3);
        for r in 0..3 {
            for c in r..3 {
                p.add_constant(b, r, c, a[(r, c)]);
            }
            p.add(0, b, r, r, -1.0);
        }
        p.objective[0] = 1.0;
        let sol = solve(&p, &SdpOptions::default()).unwrap();
        let lmax = a.symmetric_eigenvalues().max();
        assert!((sol.y[0] - lmax).abs() < 1e-6);
    }

    #[test]
    fn lyapunov_feasibility_and_infeasibility() {
        // Find P = p (scalar) with a·p + p·a ⪯ −1, p ≥ 1: feasible for a < 0.
        let build = |a: f64| {
            let mut p = SdpProblem::new(1);
            let b0 = p.add_block("lyapunov", 1);
            p.add(0, b0, 0, 0, 2.0 * a);
            p.add_constant(b0, 0, 0, 1.0);
            let b1 = p.add_block("positivity", 1);
            p.add(0, b1, 0, 0, -1.0);
            p.add_constant(b1, 0, 0, 1.0);
            p.objective[0] = 1.0;
            p
        };
        let ok = solve_or_diagnose(&build(-1.0), &SdpOptions::default()).unwrap();
        assert!((ok.y[0] - 1.0).abs() < 1e-6);
        let err = solve_or_diagnose(&build(1.0), &SdpOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)), "{err}");
    }
}
