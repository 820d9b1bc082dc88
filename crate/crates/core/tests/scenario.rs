use gridctl_core::scenario::{
    read_gain_csv, sparsity_report, write_gain_csv, write_outputs, write_table_csv, CasePipeline, ControllerKind, ScenarioConfig,
    TableRow,
};
use gridctl_core::CaseId;
use nalgebra::DMatrix;

fn nine_bus() -> CasePipeline {
    CasePipeline::for_case(CaseId::Ieee9).unwrap()
}

#[test]
fn no_disturbance_gives_zero_metric() {
    let p = nine_bus();
    for kind in [ControllerKind::Lqr, ControllerKind::OpenLoop] {
        let mut cfg = ScenarioConfig::new("ieee9", kind, 0.0);
        cfg.horizon = 10.0;
        let out = p.run(&cfg).unwrap();
        assert!(out.report.deviation_metric.unwrap() < 1e-6, "{kind}");
    }
}

#[test]
fn ndae_metric_grows_with_the_step() {
    let p = nine_bus();
    let m: Vec<f64> = [0.04, 0.08, 0.12]
        .iter()
        .map(|&rho| p.run(&ScenarioConfig::new("ieee9", ControllerKind::Ndae, rho)).unwrap().report.deviation_metric.unwrap())
        .collect();
    assert!(m[0] < m[1] && m[1] < m[2], "{m:?}");
}

#[test]
fn noise_runs_are_reproducible() {
    let p = nine_bus();
    let mut cfg = ScenarioConfig::new("ieee9", ControllerKind::Lqr, 0.04).with_noise(2, 3);
    cfg.horizon = 1.0;
    cfg.metric_time = 1.0;
    let a = p.run(&cfg).unwrap();
    let b = p.run(&cfg).unwrap();
    let ta = a.trajectories[1].as_ref().unwrap();
    let tb = b.trajectories[1].as_ref().unwrap();
    assert_eq!(ta.x_d, tb.x_d);
    assert_eq!(a.report.envelope_half_width_at_horizon, b.report.envelope_half_width_at_horizon);
    // Different seeds per run.
    assert_ne!(a.trajectories[0].as_ref().unwrap().x_d, ta.x_d);
    assert_eq!(a.report.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![3, 4]);
}

#[test]
fn outputs_are_written() {
    let p = nine_bus();
    let mut cfg = ScenarioConfig::new("ieee9", ControllerKind::Agc, 0.04);
    cfg.horizon = 0.5;
    cfg.metric_time = 0.5;
    cfg.record_stride = 10;
    let out = p.run(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = write_outputs(dir.path(), &p, &out).unwrap();
    for f in ["report.json", "trajectory.csv", "frequency.csv", "voltage.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["controller"], "agc");
    assert_eq!(json["files"].as_array().unwrap().len(), report.files.len());

    let mut rd = csv::Reader::from_path(dir.path().join("trajectory.csv")).unwrap();
    let idx = p.idx();
    assert_eq!(rd.headers().unwrap().len(), 1 + idx.n_d + idx.n_a + idx.n_u);
    assert_eq!(rd.records().count(), 51);
}

#[test]
fn gain_csv_round_trips() {
    let p = nine_bus();
    let idx = p.idx();
    let k = DMatrix::from_fn(idx.n_u, idx.n_d, |r, c| (r as f64 - 2.5) * 1.37e-3 + c as f64 * 0.1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gain.csv");
    write_gain_csv(&path, &k, idx).unwrap();
    assert_eq!(read_gain_csv(&path, idx).unwrap(), k);

    let other = CasePipeline::for_case(CaseId::Ieee14).unwrap();
    assert!(read_gain_csv(&path, other.idx()).is_err());
    assert!(read_gain_csv(dir.path().join("missing.csv"), idx).is_err());
}

#[test]
fn sparsity_report_lists_offending_entries() {
    let p = nine_bus();
    let idx = p.idx();
    let mut k = DMatrix::zeros(idx.n_u, idx.n_d);
    k[(idx.e_fd(0), idx.e_prime(0))] = -2.0;
    k[(idx.t_r(1), idx.omega(1))] = -30.0;
    assert!(sparsity_report(&k, idx, 1e-6).conforming);
    k[(idx.t_r(1), idx.omega(2))] = 1e-3;
    k[(idx.e_fd(2), idx.delta(2))] = 1e-7;
    let r = sparsity_report(&k, idx, 1e-6);
    assert!(!r.conforming);
    assert_eq!(r.violations.len(), 1);
    assert_eq!(r.significant.len(), 3);
    assert_eq!(r.violations[0].state, idx.x_d_names()[idx.omega(2)]);
}

#[test]
fn table_marks_divergence() {
    let rows = vec![
        TableRow {
            case: "ieee9".into(),
            rho_l: 0.04,
            controller: ControllerKind::Ndae,
            deviation_metric: Some(0.5),
            diverged: None,
        },
        TableRow {
            case: "ieee9".into(),
            rho_l: 0.12,
            controller: ControllerKind::Agc,
            deviation_metric: None,
            diverged: Some("x".into()),
        },
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    write_table_csv(&path, &rows).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.lines().nth(2).unwrap().ends_with("diverged"));
}

#[test]
fn invalid_configuration_is_rejected() {
    let p = nine_bus();
    let mut cfg = ScenarioConfig::new("ieee9", ControllerKind::Lqr, 0.04);
    cfg.metric_time = 20.0;
    assert!(p.run(&cfg).is_err());
}
