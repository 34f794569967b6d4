use std::sync::Arc;
use std::thread;

use integrable::flow::{conservation_drift, integrate, integrate_rescaled, IntegratorConfig};
use integrable::linearize::{certify_linearization, chart, classify, CertifyOptions, Tolerances};
use integrable::model::{
    builtin_euler, builtin_lotka_volterra, euler_document, load_system, lotka_volterra_document, sample_points,
    verify_conservation, ModelError, SampleBox,
};
use integrable::poisson::{nu_regular, verify_realization};
use integrable::IntegrableSystem;
use proptest::prelude::*;

fn validate(sys: &IntegrableSystem) {
    let region = SampleBox::cube(3, -2.0, 2.0, 1000, 42).unwrap();
    let pts = sample_points(&region, |x| sys.field().eval(x).is_ok() && sys.hamiltonian().eval(x).is_ok()).points;
    let usable: Vec<_> = pts.into_iter().filter(|x| sys.conserved_quantities().all(|c| c.eval(x).is_ok())).collect();
    for r in verify_conservation(sys, &usable, 1e-8) {
        assert!(r.passed, "{}: {}", r.check, r.max_residual);
    }
    let realization = verify_realization(sys, &usable);
    assert!(realization.passed, "{realization:?}");
}

#[test]
fn builtins_pass_validation_at_1000_points() {
    validate(&builtin_lotka_volterra());
    validate(&builtin_euler(1.0, 2.0, 3.0).unwrap());
    validate(&builtin_euler(0.7, 1.9, 4.2).unwrap());
}

#[test]
fn documents_round_trip() {
    for sys in [builtin_lotka_volterra(), builtin_euler(1.0, 2.0, 3.0).unwrap()] {
        let reloaded = load_system(&sys.to_json().unwrap()).unwrap();
        assert_eq!(reloaded.to_document().unwrap(), sys.to_document().unwrap());
        for x in [[1.0, 1.0, 2.0], [0.3, -1.2, 1.7]] {
            assert_eq!(reloaded.field().eval(&x).unwrap(), sys.field().eval(&x).unwrap());
            assert_eq!(reloaded.nu().eval(&x).unwrap(), sys.nu().eval(&x).unwrap());
        }
    }
    assert_eq!(
        load_system(&serde_json::to_string(&lotka_volterra_document()).unwrap()).unwrap().name(),
        "lotka-volterra"
    );
    assert!(load_system(&serde_json::to_string(&euler_document(1.0, 2.0, 3.0)).unwrap()).unwrap().mu().is_some());
}

#[test]
fn wrong_casimir_count_is_rejected() {
    let mut doc = lotka_volterra_document();
    doc.casimirs.push("x1".into());
    let err = load_system(&serde_json::to_string(&doc).unwrap()).unwrap_err();
    assert!(matches!(err, ModelError::Count { .. }), "{err}");
}

#[test]
fn systems_are_shareable_across_threads() {
    let sys = Arc::new(builtin_lotka_volterra());
    let cfg = IntegratorConfig::rk45(0.0, 0.3, 1e-10, 1e-12);
    let serial = integrate(&sys, &[1.0, 1.0, 2.0], &cfg).unwrap();
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let (sys, cfg) = (Arc::clone(&sys), cfg.clone());
            thread::spawn(move || integrate(&sys, &[1.0, 1.0, 2.0], &cfg).unwrap())
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap().samples, serial.samples);
    }
}

#[test]
fn lotka_volterra_initial_s_rate() {
    let lv = builtin_lotka_volterra();
    assert_eq!(-lv.field().divergence(&[1.0, 1.0, 2.0]).unwrap(), -2.0);
}

#[test]
fn adaptive_and_fixed_step_agree() {
    let lv = builtin_lotka_volterra();
    let a = integrate(&lv, &[1.0, 1.0, 2.0], &IntegratorConfig::rk45(0.0, 0.3, 1e-10, 1e-12)).unwrap();
    let b = integrate(&lv, &[1.0, 1.0, 2.0], &IntegratorConfig::rk4(0.0, 0.3, 1e-3)).unwrap();
    let (ea, eb) = (a.last(), b.last());
    assert_eq!(ea.t, eb.t);
    for (p, q) in ea.x.iter().zip(&eb.x) {
        assert!((p - q).abs() <= 1e-7);
    }
    assert!((ea.s - eb.s).abs() <= 1e-7);
}

#[test]
fn euler_unrescaled_keeps_s_at_zero() {
    let e = builtin_euler(1.0, 2.0, 3.0).unwrap();
    let traj = integrate(&e, &[1.0, 1.0, 1.0], &IntegratorConfig::rk45(0.0, 5.0, 1e-10, 1e-12)).unwrap();
    assert!(traj.samples.iter().all(|s| s.s.abs() <= 1e-12));
    assert!(conservation_drift(&e, &traj).max() <= 1e-8);
}

#[test]
fn unit_rescaling_matches_plain_integration() {
    let lv = builtin_lotka_volterra().with_mu(Some(integrable::ScalarField::constant(3, 1.0)));
    let cfg = IntegratorConfig::rk45(0.0, 0.3, 1e-10, 1e-12);
    let a = integrate(&lv, &[1.0, 1.0, 2.0], &cfg).unwrap();
    let b = integrate_rescaled(&lv, &[1.0, 1.0, 2.0], &cfg).unwrap();
    assert_eq!(a.samples.len(), b.samples.len());
    for (p, q) in a.samples.iter().zip(&b.samples) {
        assert!(p.x.iter().zip(&q.x).all(|(u, v)| (u - v).abs() <= 1e-12));
        assert!((p.s - q.s).abs() <= 1e-12);
    }
}

#[test]
fn single_sample_trajectory_has_no_drift() {
    let lv = builtin_lotka_volterra();
    let traj = integrate(&lv, &[1.0, 1.0, 2.0], &IntegratorConfig::rk45(0.0, 0.0, 1e-10, 1e-12)).unwrap();
    assert_eq!(traj.samples.len(), 1);
    assert_eq!(conservation_drift(&lv, &traj).max(), 0.0);
}

#[test]
fn chart_unwinds_along_the_trajectory() {
    let lv = builtin_lotka_volterra();
    let cert = certify_linearization(
        &lv,
        &[1.0, 1.0, 2.0],
        &IntegratorConfig::rk45(0.0, 0.3, 1e-10, 1e-12),
        &CertifyOptions::for_dimension(3),
    )
    .unwrap();
    for (sample, certified) in cert.trajectory.samples.iter().zip(&cert.samples) {
        assert!(certified.defect.is_some());
        let nu = lv.nu().eval(&sample.x).unwrap();
        let values: Vec<f64> =
            std::iter::once(1.0).chain(lv.conserved_quantities().map(|c| c.eval(&sample.x).unwrap())).collect();
        for (u, v) in certified.u.iter().zip(&values) {
            assert!((u * nu - v).abs() <= 1e-10 * v.abs().max(1.0));
        }
    }
}

#[test]
fn defect_does_not_shrink_when_tolerance_loosens() {
    let lv = builtin_lotka_volterra();
    let defect = |rtol: f64| {
        certify_linearization(
            &lv,
            &[1.0, 1.0, 2.0],
            &IntegratorConfig::rk45(0.0, 0.3, rtol, rtol * 1e-2),
            &CertifyOptions::for_dimension(3),
        )
        .unwrap()
        .max_defect
    };
    assert!(defect(1e-7) >= defect(1e-10));
}

#[test]
fn lotka_volterra_s_rate_has_the_sign_of_x1_minus_x3() {
    let lv = builtin_lotka_volterra();
    let traj = integrate(&lv, &[1.0, 1.0, 2.0], &IntegratorConfig::rk45(0.0, 0.3, 1e-10, 1e-12)).unwrap();
    for sample in &traj.samples {
        let rate = -lv.field().divergence(&sample.x).unwrap();
        assert_eq!(rate.signum(), (sample.x[0] - sample.x[2]).signum());
    }
}

#[test]
fn rescaled_euler_rejects_x1_zero() {
    let e = builtin_euler(1.0, 2.0, 3.0).unwrap();
    let err = integrate_rescaled(&e, &[0.0, 1.0, 1.0], &IntegratorConfig::rk45(0.0, 1.0, 1e-10, 1e-12)).unwrap_err();
    assert!(err.to_string().starts_with("x0 ∉ Ω₀:"));
    assert!(chart(&e.rescaled().unwrap(), &[0.0, 1.0, 1.0]).is_err());
}

#[test]
fn omega00_samples_respect_the_lotka_volterra_description() {
    let lv = builtin_lotka_volterra();
    let tols = Tolerances::default();
    let region = SampleBox::cube(3, -2.0, 2.0, 300, 9).unwrap();
    for x in sample_points(&region, |x| classify(&lv, x, &tols).in_omega00).points {
        assert!(x[0] * x[2] != 0.0 && x[0] + x[1] + x[2] != 0.0 && x[0] != x[2]);
    }
    let off_plane = sample_points(&region, |x| (x[0] - x[2]).abs() > 1e-3).points;
    assert!(off_plane.iter().all(|x| (x[0] - x[2]).abs() > 1e-3));
    let again = sample_points(&region.with_count(10), |_| true).points;
    assert_eq!(again, sample_points(&region.with_count(10), |_| true).points);
    assert_eq!(again.len(), 10);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn classify_verdicts_are_consistent(x in prop::collection::vec(-2.0..2.0f64, 3), factor in 1.0..100.0f64) {
        let tols = Tolerances::default();
        for sys in [builtin_lotka_volterra(), builtin_euler(1.0, 2.0, 3.0).unwrap().rescaled().unwrap()] {
            let v = classify(&sys, &x, &tols);
            prop_assert!(!v.in_omega00 || v.in_omega0);
            prop_assert!(!v.in_e || v.in_o);
            let wider = classify(&sys, &x, &tols.scaled(factor));
            prop_assert!(v.in_omega00 || !wider.in_omega00);
            prop_assert_eq!(v.product, wider.product);
        }
    }

    #[test]
    fn chart_inverts_to_conserved_quantities(x in prop::collection::vec(-2.0..2.0f64, 3)) {
        let lv = builtin_lotka_volterra();
        prop_assume!(nu_regular(&lv, &x));
        let u = chart(&lv, &x).unwrap();
        let nu = lv.nu().eval(&x).unwrap();
        prop_assert!((u[0] * nu - 1.0).abs() <= 1e-10);
        prop_assert!((u[2] * nu - lv.hamiltonian().eval(&x).unwrap()).abs() <= 1e-10 * (1.0 + (x[0] + x[1] + x[2]).abs()));
    }
}
