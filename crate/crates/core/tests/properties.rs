use geoflow_core::metrics::{build_katok_family, cone_membership, eval_h0, DEFAULT_ALPHA};
use geoflow_core::profiles::{eval_f0, f0_inverse, make_spliced_profile, smooth_step, CutoffPair};
use geoflow_core::{CotangentPoint, DualMetric, RotationalProfile};
use proptest::prelude::*;

fn katok(profile: RotationalProfile) -> DualMetric {
    build_katok_family(
        profile,
        CutoffPair::new(0.5, 1.25, 1.75).unwrap(),
        DEFAULT_ALPHA,
    )
    .unwrap()
}

fn covector() -> impl Strategy<Value = CotangentPoint> {
    (-10.0..10.0f64, -2.5..2.5f64, -3.0..3.0f64, -3.0..3.0f64)
        .prop_filter("nonzero covector", |&(_, _, a, b)| a.hypot(b) > 1e-3)
        .prop_map(|(x1, x2, xi1, xi2)| CotangentPoint::new(x1, x2, xi1, xi2))
}

proptest! {
    #[test]
    fn katok_metric_is_positively_homogeneous(p in covector(), a in 0.01..50.0f64) {
        let h = katok(RotationalProfile::RoundSphere);
        let v = h.eval(&p).unwrap();
        let va = h.eval(&p.scale_xi(a)).unwrap();
        prop_assert!((va - a * v).abs() <= 1e-12 * a * v.abs());
        prop_assert!(v > 0.0);
    }

    #[test]
    fn perturbation_vanishes_outside_the_outer_cone(p in covector()) {
        let profile = RotationalProfile::RoundSphere;
        prop_assume!(!cone_membership(&profile, 1.25, &p).unwrap());
        let h = katok(profile.clone());
        prop_assert_eq!(h.eval(&p).unwrap(), eval_h0(&profile, &p).unwrap());
    }

    #[test]
    fn katok_torus_is_periodic_in_both_coordinates(p in covector(), k in -3i32..3) {
        let h = katok(make_spliced_profile(4.0, 0.25).unwrap());
        let q = CotangentPoint::new(p.x1 + std::f64::consts::TAU * k as f64, p.x2 + 4.0 * k as f64, p.xi1, p.xi2);
        let (a, b) = (h.eval(&p).unwrap(), h.eval(&q).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn smooth_step_is_monotone_and_bounded(s in -1.0..2.0f64, d in 0.0..1.0f64) {
        let (a, b) = (smooth_step(s), smooth_step(s + d));
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(a <= b);
    }

    #[test]
    fn f0_inverse_is_a_right_inverse(c in 1e-6..1.0f64) {
        let x = f0_inverse(c).unwrap();
        prop_assert!(x >= 0.0);
        prop_assert!((eval_f0(x) - c).abs() <= 1e-12);
    }
}
