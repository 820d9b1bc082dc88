//! Disturbance scenarios: step changes of load and renewable power, optional
//! Gaussian renewable noise, closed-loop simulation and reporting.

use std::cell::OnceCell;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::baselines::{lqr_at, make_agc, make_lrfc, OpenLoop};
use crate::daesolve::{consistent_init, integrate, Controller, IntegratorOptions, SampledSignal, Signal, StepSignal, Trajectory};
use crate::equilibrium::{steady_state, OperatingPoint};
use crate::error::{Error, Result};
use crate::ndae::{assemble_model, NdaeModel, StateIndexing};
use crate::netcase::{build_admittance, prepare_case, CaseId, NetworkCase};
use crate::powerflow::{solve_power_flow, PfSolution};
use crate::synth::{synthesize_gain, BoundingMatrices};

/// AGC integrator gain used in the comparisons.
pub const AGC_GAIN: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Ndae,
    Lqr,
    Agc,
    OpenLoop,
}

impl ControllerKind {
    pub const COMPARED: [ControllerKind; 3] = [ControllerKind::Ndae, ControllerKind::Lqr, ControllerKind::Agc];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Ndae => "ndae",
            ControllerKind::Lqr => "lqr",
            ControllerKind::Agc => "agc",
            ControllerKind::OpenLoop => "open-loop",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ndae" | "lrfc" => Ok(ControllerKind::Ndae),
            "lqr" => Ok(ControllerKind::Lqr),
            "agc" => Ok(ControllerKind::Agc),
            "open-loop" | "openloop" | "none" => Ok(ControllerKind::OpenLoop),
            other => Err(Error::Validation(format!("unknown controller '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseConfig {
    Off,
    /// z ~ N(0, variance_scale·P_R⁰) per renewable, added as (1 + j)z.
    Gaussian {
        variance_scale: f64,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioConfig {
    pub case: String,
    pub controller: ControllerKind,
    pub rho_l: f64,
    pub rho_r: f64,
    pub noise: NoiseConfig,
    pub runs: usize,
    pub horizon: f64,
    /// Time at which the deviation metric is read.
    pub metric_time: f64,
    pub dt: f64,
    pub seed: u64,
    /// Keep every n-th accepted step.
    pub record_stride: usize,
}

impl ScenarioConfig {
    /// ρ_R = −ρ_L, 15 s horizon, metric at 10 s for the 9-bus case and
    /// 15 s otherwise.
    pub fn new(case: &str, controller: ControllerKind, rho_l: f64) -> Self {
        let metric_time = if case.eq_ignore_ascii_case("ieee9") { 10.0 } else { 15.0 };
        ScenarioConfig {
            case: case.to_string(),
            controller,
            rho_l,
            rho_r: -rho_l,
            noise: NoiseConfig::Off,
            runs: 1,
            horizon: 15.0,
            metric_time,
            dt: 1e-3,
            seed: 0,
            record_stride: 1,
        }
    }

    pub fn with_noise(mut self, runs: usize, seed: u64) -> Self {
        self.noise = NoiseConfig::Gaussian { variance_scale: 0.01 };
        self.runs = runs;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Validation("runs must be at least 1".into()));
        }
        if !(self.horizon > 0.0) || !(self.dt > 0.0) {
            return Err(Error::Validation("horizon and dt must be positive".into()));
        }
        if self.metric_time > self.horizon + 1e-12 {
            return Err(Error::Validation("metric time lies beyond the horizon".into()));
        }
        Ok(())
    }

    pub fn integrator_options(&self) -> IntegratorOptions {
        IntegratorOptions { dt: self.dt, horizon: self.horizon, record_stride: self.record_stride.max(1), ..Default::default() }
    }
}

/// Everything derived from one network case before a disturbance is applied.
/// Gains are synthesized on first use and cached.
pub struct CasePipeline {
    pub case: NetworkCase,
    pub pf: PfSolution,
    pub model: NdaeModel,
    pub op: OperatingPoint,
    ndae_gain: OnceCell<DMatrix<f64>>,
    lqr_gain: OnceCell<DMatrix<f64>>,
}

fn stage<T>(label: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Validation(m) => Error::Validation(format!("{label}: {m}")),
        Error::Solver(m) => Error::Solver(format!("{label}: {m}")),
        Error::Infeasible(m) => Error::Infeasible(format!("{label}: {m}")),
        other => other,
    })
}

impl CasePipeline {
    pub fn new(case: &NetworkCase) -> Result<Self> {
        let case = prepare_case(case);
        stage("case", case.validate())?;
        let ybus = stage("admittance", build_admittance(&case))?;
        let pf = stage("power flow", solve_power_flow(&case, &ybus, 1e-10, 30))?;
        let model = stage("model", assemble_model(&case, &ybus))?;
        let q0 = model.idx.q_of_case(&case);
        let op = stage("steady state", steady_state(&model, &pf, &q0))?;
        Ok(CasePipeline { case, pf, model, op, ndae_gain: OnceCell::new(), lqr_gain: OnceCell::new() })
    }

    pub fn for_case(id: CaseId) -> Result<Self> {
        Self::new(&id.load())
    }

    pub fn idx(&self) -> &StateIndexing {
        &self.model.idx
    }

    pub fn bounds(&self) -> BoundingMatrices {
        BoundingMatrices::default_for(&self.model)
    }

    /// Synthesized gain with the default bounds, κ = 1e-3 and δ = 1e-6.
    pub fn ndae_gain(&self) -> Result<&DMatrix<f64>> {
        if let Some(k) = self.ndae_gain.get() {
            return Ok(k);
        }
        let res = stage("synthesis", synthesize_gain(&self.model, &self.bounds(), 1e-3, 1e-6))?;
        Ok(self.ndae_gain.get_or_init(|| res.k_d))
    }

    /// Use a precomputed gain instead of synthesizing.
    pub fn set_ndae_gain(&mut self, k: DMatrix<f64>) -> Result<()> {
        let idx = &self.model.idx;
        if k.nrows() != idx.n_u || k.ncols() != idx.n_d {
            return Err(Error::Dimension { what: "gain columns", expected: idx.n_d, got: k.ncols() });
        }
        self.ndae_gain = OnceCell::from(k);
        Ok(())
    }

    pub fn lqr_gain(&self) -> Result<&DMatrix<f64>> {
        if let Some(k) = self.lqr_gain.get() {
            return Ok(k);
        }
        let k = stage("LQR design", lqr_at(&self.model, &self.op))?;
        Ok(self.lqr_gain.get_or_init(|| k))
    }

    pub fn controller(&self, kind: ControllerKind) -> Result<Box<dyn Controller>> {
        Ok(match kind {
            ControllerKind::Ndae => Box::new(make_lrfc(self.ndae_gain()?, &self.op)?),
            ControllerKind::Lqr => Box::new(make_lrfc(self.lqr_gain()?, &self.op)?),
            ControllerKind::Agc => Box::new(make_agc(&self.model, &self.op, AGC_GAIN, self.lqr_gain()?)?),
            ControllerKind::OpenLoop => Box::new(OpenLoop { u_ref: self.op.u_ref.clone() }),
        })
    }

    /// Post-disturbance q_e = (1 + ρ)·q⁰ with separate factors for loads and
    /// renewables.
    pub fn disturbed_q(&self, rho_l: f64, rho_r: f64) -> DVector<f64> {
        self.model.idx.scale_q(&self.op.q, rho_l, rho_r)
    }

    /// Renewable noise samples on a fixed grid covering the horizon.
    pub fn noise_signal(&self, q_e: &DVector<f64>, variance_scale: f64, horizon: f64, dt: f64, seed: u64) -> SampledSignal {
        let idx = &self.model.idx;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dists: Vec<Option<Normal<f64>>> = (0..idx.renewable_buses.len())
            .map(|k| {
                let var = variance_scale * self.op.q[idx.p_r(k)];
                (var > 0.0).then(|| Normal::new(0.0, var.sqrt()).expect("finite standard deviation"))
            })
            .collect();
        let n = (horizon / dt).ceil() as usize + 2;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let mut q = q_e.clone();
            for (k, d) in dists.iter().enumerate() {
                if let Some(d) = d {
                    let z = d.sample(&mut rng);
                    q[idx.p_r(k)] += z;
                    q[idx.q_r(k)] += z;
                }
            }
            samples.push(q);
        }
        SampledSignal { dt, samples }
    }

    /// One closed-loop simulation from the scheduled operating point.
    pub fn simulate(&self, controller: &dyn Controller, signal: &dyn Signal, opts: &IntegratorOptions) -> Result<Trajectory> {
        let q0 = signal.q(0.0);
        let x_a0 = stage("consistent initialization", consistent_init(&self.model, &self.op.x_d, &q0, &self.op.x_a, 1e-10))?;
        integrate(&self.model, controller, &self.op.x_d, &x_a0, signal, opts)
    }

    /// Run a scenario. Integration failures are reported as divergence.
    pub fn run(&self, cfg: &ScenarioConfig) -> Result<ScenarioOutcome> {
        cfg.validate()?;
        let controller = self.controller(cfg.controller)?;
        let q_e = self.disturbed_q(cfg.rho_l, cfg.rho_r);
        let opts = cfg.integrator_options();
        let omega0 = self.model.omega0;
        let g = self.model.idx.g;

        let mut runs = Vec::with_capacity(cfg.runs);
        let mut trajectories = Vec::with_capacity(cfg.runs);
        for r in 0..cfg.runs {
            let seed = cfg.seed.wrapping_add(r as u64);
            let result = match cfg.noise {
                NoiseConfig::Off => self.simulate(controller.as_ref(), &StepSignal(q_e.clone()), &opts),
                NoiseConfig::Gaussian { variance_scale } => {
                    let sig = self.noise_signal(&q_e, variance_scale, cfg.horizon, cfg.dt, seed);
                    self.simulate(controller.as_ref(), &sig, &opts)
                }
            };
            match result {
                Ok(traj) => {
                    let k = traj.nearest(cfg.metric_time);
                    let omega: Vec<f64> = (0..g).map(|i| traj.x_d[k][self.model.idx.omega(i)]).collect();
                    runs.push(RunSummary {
                        seed,
                        diverged: None,
                        deviation_metric: Some(deviation_metric(&traj, &self.model, cfg.metric_time)),
                        final_frequencies: omega,
                        index_one_every_step: traj.steps.iter().all(|s| s.index_one != Some(false)),
                        accepted_steps: traj.steps.len(),
                    });
                    trajectories.push(Some(traj));
                }
                Err(
                    e
                    @ (Error::Diverged { .. } | Error::NonConvergence { .. } | Error::SingularJacobian(_) | Error::NonFinite(_)),
                ) => {
                    runs.push(RunSummary {
                        seed,
                        diverged: Some(e.to_string()),
                        deviation_metric: None,
                        final_frequencies: Vec::new(),
                        index_one_every_step: false,
                        accepted_steps: 0,
                    });
                    trajectories.push(None);
                }
                Err(e) => return Err(e),
            }
        }

        let converged: Vec<f64> = runs.iter().filter_map(|r| r.deviation_metric).collect();
        let deviation_metric = (converged.len() == runs.len()).then(|| converged.iter().sum::<f64>() / converged.len() as f64);
        let envelope = match cfg.noise {
            NoiseConfig::Off => None,
            NoiseConfig::Gaussian { .. } => {
                let ok: Vec<&Trajectory> = trajectories.iter().flatten().collect();
                (!ok.is_empty()).then(|| FrequencyEnvelope::from_runs(&ok, &self.model, 0.01, cfg.horizon))
            }
        };
        let report = ScenarioReport {
            config: cfg.clone(),
            omega0,
            diverged: deviation_metric.is_none(),
            deviation_metric,
            runs,
            envelope_half_width_at_horizon: envelope.as_ref().map(|e| e.half_width_at(cfg.horizon)),
            files: Vec::new(),
        };
        Ok(ScenarioOutcome { report, trajectories, envelope })
    }
}

/// ‖ω0·1 − ω(t)‖₂ × 10³ at the recorded sample nearest to t.
pub fn deviation_metric(traj: &Trajectory, model: &NdaeModel, t: f64) -> f64 {
    let k = traj.nearest(t);
    let x = &traj.x_d[k];
    (0..model.idx.g).map(|i| (x[model.idx.omega(i)] - model.omega0).powi(2)).sum::<f64>().sqrt() * 1e3
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    /// Reason when the run did not reach the horizon.
    pub diverged: Option<String>,
    pub deviation_metric: Option<f64>,
    pub final_frequencies: Vec<f64>,
    pub index_one_every_step: bool,
    pub accepted_steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub config: ScenarioConfig,
    pub omega0: f64,
    pub diverged: bool,
    /// Mean over runs; absent when any run diverged.
    pub deviation_metric: Option<f64>,
    pub runs: Vec<RunSummary>,
    pub envelope_half_width_at_horizon: Option<f64>,
    pub files: Vec<String>,
}

pub struct ScenarioOutcome {
    pub report: ScenarioReport,
    /// One entry per run, `None` where the run diverged.
    pub trajectories: Vec<Option<Trajectory>>,
    pub envelope: Option<FrequencyEnvelope>,
}

/// Frequency statistics over several runs on a uniform time grid.
#[derive(Debug, Clone, Serialize)]
pub struct FrequencyEnvelope {
    pub t: Vec<f64>,
    /// Mean ω_i over runs, per time point and generator.
    pub mean: Vec<Vec<f64>>,
    /// Minimum and maximum over runs and generators.
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub omega0: f64,
}

impl FrequencyEnvelope {
    pub fn from_runs(runs: &[&Trajectory], model: &NdaeModel, step: f64, horizon: f64) -> Self {
        let g = model.idx.g;
        let n = (horizon / step).round() as usize + 1;
        let mut env = FrequencyEnvelope {
            t: Vec::with_capacity(n),
            mean: Vec::with_capacity(n),
            min: Vec::with_capacity(n),
            max: Vec::with_capacity(n),
            omega0: model.omega0,
        };
        let mut cursors = vec![0usize; runs.len()];
        for k in 0..n {
            let t = (k as f64 * step).min(horizon);
            let mut mean = vec![0.0; g];
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for (r, traj) in runs.iter().enumerate() {
                let c = &mut cursors[r];
                while *c + 1 < traj.len() && (traj.t[*c + 1] - t).abs() <= (traj.t[*c] - t).abs() {
                    *c += 1;
                }
                for (i, m) in mean.iter_mut().enumerate() {
                    let w = traj.x_d[*c][model.idx.omega(i)];
                    *m += w / runs.len() as f64;
                    lo = lo.min(w);
                    hi = hi.max(w);
                }
            }
            env.t.push(t);
            env.mean.push(mean);
            env.min.push(lo);
            env.max.push(hi);
        }
        env
    }

    /// max |ω − ω0| over runs and generators at the grid point nearest t.
    pub fn half_width_at(&self, t: f64) -> f64 {
        let k = self.t.iter().enumerate().min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs())).map_or(0, |(k, _)| k);
        (self.max[k] - self.omega0).abs().max((self.min[k] - self.omega0).abs())
    }
}

// ---------------------------------------------------------------------------
// Sparsity pattern

/// Allowed entries: E_fd_i ← E′_i and T_r_i ← δ_i, ω_i, T_M_i.
pub fn decentralized_pattern(idx: &StateIndexing) -> DMatrix<bool> {
    let mut m = DMatrix::from_element(idx.n_u, idx.n_d, false);
    for i in 0..idx.g {
        m[(idx.e_fd(i), idx.e_prime(i))] = true;
        for c in [idx.delta(i), idx.omega(i), idx.t_m(i)] {
            m[(idx.t_r(i), c)] = true;
        }
    }
    m
}

#[derive(Debug, Clone, Serialize)]
pub struct GainEntry {
    pub input: String,
    pub state: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SparsityReport {
    pub threshold: f64,
    pub significant: Vec<GainEntry>,
    /// Significant entries outside the decentralized pattern.
    pub violations: Vec<GainEntry>,
    pub conforming: bool,
}

pub fn sparsity_report(k_d: &DMatrix<f64>, idx: &StateIndexing, threshold: f64) -> SparsityReport {
    let pattern = decentralized_pattern(idx);
    let (un, xn) = (idx.u_names(), idx.x_d_names());
    let mut significant = Vec::new();
    let mut violations = Vec::new();
    for r in 0..k_d.nrows() {
        for c in 0..k_d.ncols() {
            let v = k_d[(r, c)];
            if v.abs() >= threshold {
                let e = GainEntry { input: un[r].clone(), state: xn[c].clone(), value: v };
                if !pattern[(r, c)] {
                    violations.push(e.clone());
                }
                significant.push(e);
            }
        }
    }
    SparsityReport { threshold, conforming: violations.is_empty(), significant, violations }
}

// ---------------------------------------------------------------------------
// Files

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Validation(format!("{}: {kind:?}", path.display())),
    }
}

/// Dense n_u×n_d gain with a header naming the states and a leading column
/// naming the inputs.
pub fn write_gain_csv(path: impl AsRef<Path>, k_d: &DMatrix<f64>, idx: &StateIndexing) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["input".to_string()];
    header.extend(idx.x_d_names());
    w.write_record(&header)?;
    for (r, name) in idx.u_names().into_iter().enumerate() {
        let mut row = vec![name];
        row.extend((0..k_d.ncols()).map(|c| format!("{:e}", k_d[(r, c)])));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_gain_csv(path: impl AsRef<Path>, idx: &StateIndexing) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let mut rd = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = rd.headers()?.clone();
    let states = idx.x_d_names();
    if header.len() != states.len() + 1 || header.iter().skip(1).zip(&states).any(|(a, b)| a != b) {
        return Err(Error::Validation(format!("{}: header does not match the case's states", path.display())));
    }
    let inputs = idx.u_names();
    let mut k = DMatrix::zeros(idx.n_u, idx.n_d);
    let mut rows = 0;
    for rec in rd.records() {
        let rec = rec?;
        let r = inputs
            .iter()
            .position(|n| n == &rec[0])
            .ok_or_else(|| Error::Validation(format!("{}: unknown input '{}'", path.display(), &rec[0])))?;
        for c in 0..idx.n_d {
            k[(r, c)] = rec[c + 1].trim().parse::<f64>().map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        }
        rows += 1;
    }
    if rows != idx.n_u {
        return Err(Error::Dimension { what: "gain rows", expected: idx.n_u, got: rows });
    }
    Ok(k)
}

/// Full state, input and disturbance history, one row per recorded step.
pub fn write_trajectory_csv(path: impl AsRef<Path>, traj: &Trajectory, idx: &StateIndexing) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["t".to_string()];
    header.extend(idx.x_d_names());
    header.extend(idx.x_a_names());
    header.extend(idx.u_names());
    w.write_record(&header)?;
    for k in 0..traj.len() {
        let mut row = vec![format!("{:.6}", traj.t[k])];
        row.extend(traj.x_d[k].iter().chain(traj.x_a[k].iter()).chain(traj.u[k].iter()).map(|v| format!("{v:e}")));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_series(path: &Path, names: &[String], rows: impl Iterator<Item = (f64, Vec<f64>)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (t, vals) in rows {
        let mut row = vec![format!("{t:.6}")];
        row.extend(vals.iter().map(|v| format!("{v:e}")));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes report.json, trajectory.csv, frequency.csv and voltage.csv (plus
/// envelope.csv for noise runs) into `dir`. Returns the report with file
/// names filled in.
pub fn write_outputs(dir: impl AsRef<Path>, pipeline: &CasePipeline, outcome: &ScenarioOutcome) -> Result<ScenarioReport> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let idx = pipeline.idx();
    let mut report = outcome.report.clone();
    let mut files: Vec<PathBuf> = Vec::new();

    if let Some(traj) = outcome.trajectories.iter().flatten().next() {
        let p = dir.join("trajectory.csv");
        write_trajectory_csv(&p, traj, idx)?;
        files.push(p);

        let names: Vec<String> = (0..idx.g).map(|i| format!("omega_{}", i + 1)).collect();
        let p = dir.join("frequency.csv");
        write_series(&p, &names, (0..traj.len()).map(|k| (traj.t[k], (0..idx.g).map(|i| traj.x_d[k][idx.omega(i)]).collect())))?;
        files.push(p);

        let names: Vec<String> = pipeline.case.buses.iter().map(|b| format!("v_{}", b.id)).collect();
        let p = dir.join("voltage.csv");
        write_series(&p, &names, (0..traj.len()).map(|k| (traj.t[k], (0..idx.n).map(|b| traj.x_a[k][idx.v(b)]).collect())))?;
        files.push(p);
    }
    if let Some(env) = &outcome.envelope {
        let mut names: Vec<String> = (0..idx.g).map(|i| format!("mean_omega_{}", i + 1)).collect();
        names.push("min_omega".into());
        names.push("max_omega".into());
        let p = dir.join("envelope.csv");
        write_series(
            &p,
            &names,
            (0..env.t.len()).map(|k| {
                let mut v = env.mean[k].clone();
                v.push(env.min[k]);
                v.push(env.max[k]);
                (env.t[k], v)
            }),
        )?;
        files.push(p);
    }
    let p = dir.join("report.json");
    files.push(p.clone());
    report.files = files.iter().map(|f| f.display().to_string()).collect();
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Comparison table

/// Disturbance levels per case used in the comparison table.
pub fn table_levels(case: CaseId) -> &'static [f64] {
    match case {
        CaseId::Ieee9 | CaseId::Ieee14 => &[0.04, 0.08, 0.12],
        CaseId::Ieee39 => &[0.01, 0.05],
        CaseId::Ieee57 => &[0.005, 0.01],
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub case: String,
    pub rho_l: f64,
    pub controller: ControllerKind,
    pub deviation_metric: Option<f64>,
    pub diverged: Option<String>,
}

/// Deterministic step scenarios for every (case, ρ, controller) cell.
pub fn comparison_table(cases: &[CaseId], controllers: &[ControllerKind]) -> Result<Vec<TableRow>> {
    let mut rows = Vec::new();
    for &id in cases {
        let pipe = CasePipeline::for_case(id)?;
        for &rho in table_levels(id) {
            for &kind in controllers {
                let cfg = ScenarioConfig::new(id.name(), kind, rho);
                let out = pipe.run(&cfg)?;
                rows.push(TableRow {
                    case: id.name().to_string(),
                    rho_l: rho,
                    controller: kind,
                    deviation_metric: out.report.deviation_metric,
                    diverged: out.report.runs.iter().find_map(|r| r.diverged.clone()),
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_table_csv(path: impl AsRef<Path>, rows: &[TableRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["case", "rho_l", "controller", "deviation_metric"])?;
    for r in rows {
        let metric = r.deviation_metric.map_or_else(|| "diverged".to_string(), |m| format!("{m:e}"));
        w.write_record([r.case.clone(), r.rho_l.to_string(), r.controller.to_string(), metric])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
