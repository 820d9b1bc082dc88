use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridctl_core::netcase::{build_admittance, prepare_case, resolve_case};
use gridctl_core::powerflow::solve_power_flow;
use gridctl_core::scenario::{
    comparison_table, read_gain_csv, sparsity_report, table_levels, write_gain_csv, write_outputs, write_table_csv, CasePipeline,
    ControllerKind, NoiseConfig, ScenarioConfig,
};
use gridctl_core::synth::{
    synthesis_lmi_max_eigenvalue, synthesize, verify_certificate, BoundingMatrices, LmiSystem, SynthesisOptions,
};
use gridctl_core::{CaseId, Error, NetworkCase};
use nalgebra::{DMatrix, DVector};

#[derive(Parser)]
#[command(name = "gridctl", version, about = "Power-network NDAE models, decentralized gain synthesis and disturbance scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect a case file or shipped case.
    #[command(subcommand)]
    Case(CaseCmd),
    /// Solve the AC power flow.
    Pf {
        case: String,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the model matrices.
    #[command(subcommand)]
    Model(ModelCmd),
    /// Scheduled operating point with all loads scaled.
    Equilibrium {
        case: String,
        #[arg(long, default_value_t = 1.0)]
        load_scale: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize the decentralized feedback gain.
    Synth(SynthArgs),
    /// Run a disturbance scenario.
    #[command(alias = "simulate")]
    Run(RunArgs),
    /// Sweep every (case, controller, ρ_L) cell of the comparison table.
    Table2 {
        #[arg(long, default_value = "table.csv")]
        out: PathBuf,
        /// Comma-separated subset of cases.
        #[arg(long, value_delimiter = ',')]
        cases: Option<Vec<String>>,
    },
}

#[derive(Subcommand)]
enum CaseCmd {
    /// Parse, attach renewables and check the case.
    Validate { case: String },
    /// Write G and B of the bus admittance matrix.
    Ybus {
        case: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ModelCmd {
    /// Write A_d, G_d, B_d, h, A_a, G_a, B_a as CSV into a directory.
    Dump {
        case: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    case: String,
    /// Scale of H̄_d (H̄_d = hd·I). Defaults per case size.
    #[arg(long)]
    hd: Option<f64>,
    #[arg(long)]
    ha: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    kappa: f64,
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
    #[arg(long, default_value = "gain.csv")]
    out: PathBuf,
    /// Also search for a stability certificate of the result.
    #[arg(long)]
    verify: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    case: String,
    #[arg(long, default_value = "ndae")]
    controller: ControllerKind,
    #[arg(long)]
    rho_l: f64,
    /// Defaults to −ρ_L.
    #[arg(long, allow_hyphen_values = true)]
    rho_r: Option<f64>,
    /// Gaussian renewable noise with variance 0.01·P_R⁰.
    #[arg(long)]
    noise: bool,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    metric_time: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Keep every n-th step in the written trajectories.
    #[arg(long, default_value_t = 10)]
    stride: usize,
    /// Use a gain file from `synth` instead of synthesizing.
    #[arg(long)]
    gain: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Case(CaseCmd::Validate { case }) => {
            let c = prepare_case(&resolve_case(&case)?);
            c.validate()?;
            let (pl, ql) = c.total_load();
            let (pr, qr) = c.total_renewable();
            println!("{}: {} buses, {} branches, {} generators", c.name, c.n_buses(), c.branches.len(), c.n_generators());
            println!("load {pl:.4} + j{ql:.4} pu, renewables {pr:.4} + j{qr:.4} pu on {} buses", c.renewable_buses().len());
        }
        Command::Case(CaseCmd::Ybus { case, out }) => {
            let c = prepare_case(&resolve_case(&case)?);
            let y = build_admittance(&c)?;
            let stem = out.with_extension("");
            write_matrix(&with_suffix(&stem, "_g.csv"), &y.g)?;
            write_matrix(&with_suffix(&stem, "_b.csv"), &y.b)?;
            println!("wrote {}_g.csv and {}_b.csv", stem.display(), stem.display());
        }
        Command::Pf { case, tol, out } => {
            let c = prepare_case(&resolve_case(&case)?);
            let y = build_admittance(&c)?;
            let pf = solve_power_flow(&c, &y, tol, 30)?;
            let rows: Vec<Vec<String>> = (0..c.n_buses())
                .map(|b| {
                    vec![
                        c.buses[b].id.to_string(),
                        format!("{:.6}", pf.v[b]),
                        format!("{:.6}", pf.theta[b].to_degrees()),
                        format!("{:.6}", pf.p_inj[b]),
                        format!("{:.6}", pf.q_inj[b]),
                    ]
                })
                .collect();
            let header = ["bus", "v_pu", "theta_deg", "p_inj_pu", "q_inj_pu"];
            match out {
                Some(p) => write_rows(&p, &header, &rows)?,
                None => print_rows(Some(&header), &rows)?,
            }
            eprintln!("converged in {} iterations, mismatch {:.2e}", pf.iterations, pf.residual_norm);
        }
        Command::Model(ModelCmd::Dump { case, out }) => {
            let p = CasePipeline::new(&resolve_case(&case)?)?;
            std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
            let m = &p.model;
            for (name, mat) in
                [("a_d", &m.a_d), ("g_d", &m.g_d), ("b_d", &m.b_d), ("a_a", &m.a_a), ("g_a", &m.g_a), ("b_a", &m.b_a)]
            {
                write_matrix(&out.join(format!("{name}.csv")), mat)?;
            }
            write_matrix(&out.join("h.csv"), &DMatrix::from_column_slice(m.h.len(), 1, m.h.as_slice()))?;
            let idx = p.idx();
            println!(
                "n_d {} n_a {} n_u {} n_q {} n_fd {} n_fa {} → {}",
                idx.n_d,
                idx.n_a,
                idx.n_u,
                idx.n_q,
                idx.n_fd,
                idx.n_fa,
                out.display()
            );
        }
        Command::Equilibrium { case, load_scale, out } => {
            let mut c = resolve_case(&case)?;
            for b in &mut c.buses {
                b.p_load *= load_scale;
                b.q_load *= load_scale;
            }
            let p = CasePipeline::new(&c)?;
            let idx = p.idx();
            let names: Vec<String> = idx.x_d_names().into_iter().chain(idx.x_a_names()).chain(idx.u_names()).collect();
            let values: Vec<f64> = p.op.x_d.iter().chain(p.op.x_a.iter()).chain(p.op.u_ref.iter()).copied().collect();
            let rows: Vec<Vec<String>> = names.iter().zip(&values).map(|(n, v)| vec![n.clone(), format!("{v:.10}")]).collect();
            match out {
                Some(path) => write_rows(&path, &["state", "value"], &rows)?,
                None => print_rows(None, &rows)?,
            }
            eprintln!("residual {:.2e}", p.op.residual_norm);
        }
        Command::Synth(a) => synth(a)?,
        Command::Run(a) => run_scenario(a)?,
        Command::Table2 { out, cases } => {
            let ids: Vec<CaseId> = match cases {
                Some(list) => list.iter().map(|s| s.parse()).collect::<Result<_, _>>()?,
                None => CaseId::ALL.to_vec(),
            };
            for id in &ids {
                eprintln!("{id}: ρ_L ∈ {:?}", table_levels(*id));
            }
            let rows = comparison_table(&ids, &ControllerKind::COMPARED)?;
            for r in &rows {
                let m = r.deviation_metric.map_or("diverged".to_string(), |m| format!("{m:.4}"));
                println!("{}\t{}\t{}\t{m}", r.case, r.rho_l, r.controller);
            }
            write_table_csv(&out, &rows)?;
        }
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), Error> {
    let p = CasePipeline::new(&resolve_case(&a.case)?)?;
    let defaults = p.bounds();
    let bounds = match (a.hd, a.ha) {
        (None, None) => defaults,
        (hd, ha) => {
            BoundingMatrices::for_model(&p.model, hd.unwrap_or(defaults.hbar_d[(0, 0)]), ha.unwrap_or(defaults.hbar_a[(0, 0)]))
        }
    };
    let sys = LmiSystem::from_model(&p.model);
    let opts = SynthesisOptions { kappa: a.kappa, delta: a.delta, ..Default::default() };
    let res = synthesize(&sys, &bounds, &opts)?;
    let lmax = synthesis_lmi_max_eigenvalue(&sys, &bounds, &res);
    println!(
        "{:?} mode, {:?} after {} iterations, κ‖W‖₂ = {:.4e}, λ_max = {lmax:.3e}",
        res.mode, res.status, res.iterations, res.objective
    );
    let rep = sparsity_report(&res.k_d, p.idx(), 1e-6);
    println!("{} entries ≥ 1e-6, {} outside the decentralized pattern", rep.significant.len(), rep.violations.len());
    for v in &rep.violations {
        println!("  {} ← {}: {:.3e}", v.input, v.state, v.value);
    }
    if a.verify {
        let cert = verify_certificate(&p.model, &res.k_d, &bounds)?;
        println!("certificate found, margin {:.3e}", cert.min_eig_margin);
    }
    write_gain_csv(&a.out, &res.k_d, p.idx())?;
    println!("gain written to {}", a.out.display());
    Ok(())
}

fn run_scenario(a: RunArgs) -> Result<(), Error> {
    let case: NetworkCase = resolve_case(&a.case)?;
    let mut p = CasePipeline::new(&case)?;
    if let Some(path) = &a.gain {
        let k = read_gain_csv(path, p.idx())?;
        p.set_ndae_gain(k)?;
    }
    let name = a.case.parse::<CaseId>().map_or(case.name.clone(), |id| id.name().to_string());
    let mut cfg = ScenarioConfig::new(&name, a.controller, a.rho_l);
    if let Some(r) = a.rho_r {
        cfg.rho_r = r;
    }
    if a.noise {
        cfg = cfg.with_noise(a.runs.unwrap_or(10), a.seed);
    } else {
        cfg.runs = a.runs.unwrap_or(1);
        cfg.seed = a.seed;
    }
    if let Some(h) = a.horizon {
        cfg.horizon = h;
        cfg.metric_time = cfg.metric_time.min(h);
    }
    if let Some(t) = a.metric_time {
        cfg.metric_time = t;
    }
    cfg.dt = a.dt;
    cfg.record_stride = a.stride.max(1);

    let outcome = p.run(&cfg)?;
    let report = write_outputs(&a.out, &p, &outcome)?;
    match (report.deviation_metric, cfg.noise) {
        (Some(m), _) => println!("deviation metric ‖ω0·1 − ω(t̃)‖₂×10³ at t̃ = {} s: {m:.6}", cfg.metric_time),
        (None, _) => println!("diverged: {}", report.runs.iter().find_map(|r| r.diverged.clone()).unwrap_or_default()),
    }
    if let (Some(hw), NoiseConfig::Gaussian { .. }) = (report.envelope_half_width_at_horizon, cfg.noise) {
        println!("envelope half-width at {} s: {hw:.4e}", cfg.horizon);
    }
    println!("outputs in {}", a.out.display());
    Ok(())
}

fn print_rows(header: Option<&[&str]>, rows: &[Vec<String>]) -> Result<(), Error> {
    let mut o = std::io::stdout().lock();
    let res = header
        .map_or(Ok(()), |h| writeln!(o, "{}", h.join("\t")))
        .and_then(|_| rows.iter().try_for_each(|r| writeln!(o, "{}", r.join("\t"))));
    res.map_err(|e| io_err(Path::new("<stdout>"), e))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source: e }
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path)?;
    for r in 0..m.nrows() {
        let row: DVector<f64> = m.row(r).transpose();
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}
