use clwn_core::annulus::{cyclic_sum, AnnulusSchedule};
use clwn_core::chordal::{chordal_flow, ChordalRun};
use clwn_core::checks::annulus_test_schedule;
use clwn_core::driving::{DrivingSpec, Schedule};
use clwn_core::ode::OdeOptions;
use clwn_core::surface_flow::{
    conjugacy_residuals, evolve_triples, integrate_seeds, test_schedule,
};
use clwn_core::{Complex64, Exec};
use proptest::prelude::*;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn chordal_matches_closed_form(x in -2.0..2.0f64, y in 0.5..3.0f64, t in 0.05..0.8f64) {
        let z = c(x, y);
        let run = ChordalRun {
            driving: DrivingSpec::Constant { value: 0.0 },
            seeds: vec![z],
            t_end: t,
            tol: 1e-10,
        };
        let r = chordal_flow(&run, Exec::Sequential).unwrap();
        // g_t(z) = sqrt(z^2 + 4t) on the branch with positive imaginary part.
        let mut exact = (z * z + 4.0 * t).sqrt();
        if exact.im < 0.0 {
            exact = -exact;
        }
        prop_assert!((r[0].last() - exact).norm() < 1e-6);
    }

    #[test]
    fn annulus_flow_commutes_with_scaling(x in -3.0..3.0f64, y in 0.5..2.5f64) {
        let field = annulus_test_schedule().realize(0.3).unwrap();
        let opts = OdeOptions::with_tol(1e-10);
        let z = c(x, y);
        let e0 = field.tau(0.0).exp();
        let a = field.forward_flow(z, 0.3, &opts).unwrap();
        let b = field.forward_flow(e0 * z, 0.3, &opts).unwrap();
        prop_assume!(!a.swallowed() && !b.swallowed());
        let et = field.tau(0.3).exp();
        prop_assert!((b.last() - et * a.last()).norm() < 1e-6 * (1.0 + b.last().norm()));
    }

    #[test]
    fn annulus_sum_is_scaling_covariant(x in -3.0..3.0f64, y in 0.2..3.0f64) {
        // Reindexing k turns the c-terms into a telescoping sum worth 1/ξ.
        let (tau, cc, xi) = (0.8, 2.0, 1.0);
        let z = c(x, y);
        let a = cyclic_sum(tau, cc, xi, z, 0.0, Some(200)).unwrap().value;
        let b = cyclic_sum(tau, cc, xi, tau.exp() * z, 0.0, Some(200)).unwrap().value;
        prop_assert!((b - a - 1.0 / xi).norm() < 1e-10);
    }
}

#[test]
fn annulus_batches_agree_across_modes() {
    let field = AnnulusSchedule::with_rate(
        0.7,
        0.3,
        DrivingSpec::Sle {
            kappa: 1.0,
            drift: Schedule::default(),
            seed: 9,
            dt: 1e-3,
            start: 1.0,
        },
        Schedule::constant(0.1),
        -1.5,
    )
    .realize(0.2)
    .unwrap();
    let seeds: Vec<Complex64> = (0..12).map(|k| c(-3.0 + 0.5 * k as f64, 0.7)).collect();
    let opts = OdeOptions::with_tol(1e-8);
    let a = field.forward_flows(&seeds, 0.2, &opts, Exec::Sequential).unwrap();
    let b = field.forward_flows(&seeds, 0.2, &opts, Exec::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn surface_mesh_refinement_is_consistent() {
    let z = c(0.4, 0.8);
    let run = |dt: f64| {
        let (_, tl) = evolve_triples(&test_schedule(0.01, dt, 5)).unwrap();
        integrate_seeds(&tl, &[z], Exec::Sequential).unwrap().remove(0)
    };
    let a = run(2e-3);
    let b = run(1e-3);
    let change = (a.last() - b.last()).norm();
    assert!(change < 4.0 * a.error_bound(), "{change:e} vs {:e}", a.error_bound());
}

#[test]
fn surface_conjugacy_residual_grows_from_zero() {
    let (_, tl) = evolve_triples(&test_schedule(0.01, 1e-3, 5)).unwrap();
    for l in 0..2 {
        let r = conjugacy_residuals(&tl, l, c(0.0, 2.0), Exec::Parallel).unwrap();
        assert_eq!(r[0].1, 0.0);
        let max = r.iter().map(|x| x.1).fold(0.0, f64::max);
        assert_eq!(max, r.last().unwrap().1);
        assert!(max < 1e-4);
    }
}

#[test]
fn surface_timeline_records_positive_margins() {
    let (triples, tl) = evolve_triples(&test_schedule(0.005, 1e-3, 4)).unwrap();
    assert_eq!(triples.len(), tl.nodes().len());
    assert_eq!(tl.times().len(), 6);
    for n in tl.nodes() {
        assert!(n.margins.trace > 0.0 && n.margins.c > 0.0 && n.margins.xi > 0.0);
        assert_eq!(n.deltas.len(), 2);
        assert!(n.sigma.is_finite());
    }
}
