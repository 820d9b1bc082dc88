mod common;

use common::{fixture, resolvent_form};
use gridctl_core::baselines::spectral_abscissa;
use gridctl_core::scenario::{decentralized_pattern, sparsity_report};
use gridctl_core::synth::{
    assemble_certificate_lmi, resolvent_max_eigenvalue, resolvent_reciprocal_max_eigenvalue, synthesis_lmi_max_eigenvalue,
    synthesize, synthesize_gain, verify_certificate, BoundingMatrices, LmiSystem, SynthesisMode, SynthesisOptions,
};
use gridctl_core::CaseId;
use nalgebra::DMatrix;
use proptest::prelude::*;

#[test]
fn nine_bus_gain_is_certified_and_decentralized() {
    let (_, model) = fixture(CaseId::Ieee9);
    let bounds = BoundingMatrices::default_for(&model);
    let delta = 1e-6;
    let res = synthesize_gain(&model, &bounds, 1e-3, delta).unwrap();
    assert_eq!(res.mode, SynthesisMode::Full);
    let sys = LmiSystem::from_model(&model);

    let lmax = synthesis_lmi_max_eigenvalue(&sys, &bounds, &res);
    assert!(lmax <= -delta / 2.0, "λ_max = {lmax:e}");
    assert!(res.x1.clone().symmetric_eigenvalues().min() >= delta * (1.0 - 1e-6));
    assert!(res.eps_bar >= delta * (1.0 - 1e-6));
    assert!((&res.w - &res.k_d * &res.x1).amax() < 1e-8 * res.w.amax().max(1.0));
    assert_eq!(res.y.amax(), 0.0);

    // The linear part of the closed loop is Hurwitz: Ψ ≺ 0 is a Lyapunov
    // inequality for A_d + B_d K_d.
    assert!(spectral_abscissa(&(&model.a_d + &model.b_d * &res.k_d)) < 0.0);

    let report = sparsity_report(&res.k_d, &model.idx, 1e-6);
    assert!(report.conforming, "{:?}", report.violations);

    let cert = verify_certificate(&model, &res.k_d, &bounds).unwrap();
    let omega = assemble_certificate_lmi(&sys, &bounds, &res.k_d, &cert.p1, &cert.p2, &cert.p3, cert.eps);
    let sym = (&omega + omega.transpose()) * 0.5;
    assert!(sym.symmetric_eigenvalues().max() < 0.0);
    assert!(cert.p1.symmetric_eigenvalues().min() > 0.0);
}

#[test]
fn open_loop_has_no_certificate() {
    let (_, model) = fixture(CaseId::Ieee9);
    let bounds = BoundingMatrices::default_for(&model);
    let k = DMatrix::zeros(model.idx.n_u, model.idx.n_d);
    assert!(verify_certificate(&model, &k, &bounds).is_err());
}

#[test]
fn reduced_mode_is_feasible_for_the_full_lmi() {
    let (_, model) = fixture(CaseId::Ieee9);
    let bounds = BoundingMatrices::default_for(&model);
    let sys = LmiSystem::from_model(&model);
    let opts = SynthesisOptions { mode: SynthesisMode::Reduced, ..Default::default() };
    let res = synthesize(&sys, &bounds, &opts).unwrap();
    assert_eq!(res.mode, SynthesisMode::Reduced);
    assert_eq!(res.x2.amax(), 0.0);
    assert!(synthesis_lmi_max_eigenvalue(&sys, &bounds, &res) <= -opts.delta / 2.0);
}

#[test]
fn pattern_has_four_entries_per_generator() {
    let (_, model) = fixture(CaseId::Ieee14);
    let p = decentralized_pattern(&model.idx);
    assert_eq!(p.iter().filter(|&&b| b).count(), 4 * model.idx.g);
}

#[test]
fn invalid_bounds_are_rejected() {
    let (_, model) = fixture(CaseId::Ieee9);
    let bad = BoundingMatrices::for_model(&model, -1.0, 1.0);
    assert!(synthesize_gain(&model, &bad, 1e-3, 1e-6).is_err());
}

/// Random M with entries in [-3, 3), a and b log-uniform on [1e-2, 1e2].
fn resolvent_inputs() -> impl Strategy<Value = (DMatrix<f64>, f64, f64)> {
    (1usize..5, 1usize..5).prop_flat_map(|(r, c)| {
        (prop::collection::vec(-3.0..3.0f64, r * c), -2.0..2.0f64, -2.0..2.0f64)
            .prop_map(move |(v, la, lb)| (DMatrix::from_vec(r, c, v), 10f64.powf(la), 10f64.powf(lb)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn resolvent_form_matches_direct_evaluation((m, a, b) in resolvent_inputs()) {
        let direct = resolvent_form(&m, a, b);
        prop_assert!((resolvent_max_eigenvalue(&m, a, b) - direct).abs() < 1e-9 * direct.abs().max(1.0));
    }

    #[test]
    fn resolvent_bound_holds_with_reciprocal_scale((m, a, b) in resolvent_inputs()) {
        prop_assert!(resolvent_reciprocal_max_eigenvalue(&m, a, b) <= 1e-10);
    }

    #[test]
    fn resolvent_bound_with_scale_a_holds_for_a_at_least_one((m, a, b) in resolvent_inputs()) {
        prop_assume!(a >= 1.0);
        prop_assert!(resolvent_max_eigenvalue(&m, a, b) <= 1e-10);
    }
}

#[test]
fn resolvent_bound_with_scale_a_fails_below_one() {
    // σ² = 5: 5/(0.5·5 + 2) − 0.5 = 0.6111…
    let m = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
    let l = resolvent_max_eigenvalue(&m, 0.5, 2.0);
    assert!((l - (5.0 / 4.5 - 0.5)).abs() < 1e-12);
}
