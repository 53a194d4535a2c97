use mcte_core::geometry::bisect_critical;
use mcte_core::*;
use proptest::prelude::*;

fn toy(c: f64) -> EntropySurface {
    EntropySurface::toy(ToyGranularParams::default().with_coupling(c)).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// In-domain toy point with `V - V_J` in `[0.02, 0.5]`.
fn toy_point() -> impl Strategy<Value = [f64; 2]> {
    (0.02..0.5f64, 0.0..0.9f64).prop_map(|(x, s)| [0.75 + x, s])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fd_derivatives_track_analytic_ones(q in toy_point(), c in 0.0..0.6f64) {
        let exact = toy(c);
        let fd = toy(c).with_derivatives(DerivativeMode::CentralFd(FdStep::Auto)).unwrap();
        let (hg, hh) = (1e-5f64, 1e-3f64);
        let ga = exact.gradient(&q).unwrap();
        let gf = fd.gradient(&q).unwrap();
        let scale = ga.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for k in 0..2 {
            prop_assert!((ga[k] - gf[k]).abs() <= 10.0 * hg * hg * scale, "beta_{} {} vs {}", k, ga[k], gf[k]);
        }
        let ha = exact.hessian(&q).unwrap();
        let hf = fd.hessian(&q).unwrap();
        prop_assert!((&ha - &hf).amax() <= 100.0 * hh * hh * ha.amax());
    }

    #[test]
    fn quadratic_fd_matches_analytic(x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let exact = EntropySurface::quadratic(vec![2.0, 3.0], vec![0.1, -0.2]).unwrap();
        let fd = exact.clone().with_derivatives(DerivativeMode::CentralFd(FdStep::Auto)).unwrap();
        let q = [x, y];
        let ga = exact.gradient_unchecked(&q).unwrap();
        let gf = fd.gradient_unchecked(&q).unwrap();
        for k in 0..2 {
            prop_assert!((ga[k] - gf[k]).abs() <= 10.0 * 1e-10 * ga[k].abs().max(1.0));
        }
        prop_assert!((exact.hessian(&q).unwrap() - fd.hessian(&q).unwrap()).amax() <= 100.0 * 1e-6 * 3.0);
    }

    #[test]
    fn evaluations_are_pure(q in toy_point(), c in 0.0..0.6f64) {
        let s = toy(c);
        prop_assert_eq!(s.entropy(&q).unwrap().to_bits(), s.entropy(&q).unwrap().to_bits());
        prop_assert_eq!(s.gradient(&q).unwrap(), s.gradient(&q).unwrap());
        prop_assert_eq!(s.hessian(&q).unwrap(), s.hessian(&q).unwrap());
    }

    #[test]
    fn cross_hessian_sign(q in toy_point(), c in 1e-6..0.6f64) {
        prop_assert!(toy(c).hessian(&q).unwrap()[(0, 1)] > 0.0);
        prop_assert_eq!(toy(0.0).hessian(&q).unwrap()[(0, 1)], 0.0);
        // metric off-diagonal carries the opposite sign
        prop_assert!(metric_at(&toy(c), &q).unwrap().g[(0, 1)] < 0.0);
    }

    #[test]
    fn flow_rhs_is_beta_times_omega(q in toy_point(), c in 0.0..0.6f64) {
        let mp = metric_at(&toy(c), &q).unwrap();
        for (i, j) in [(0, 1), (1, 0)] {
            let rhs = levelset_flow_rhs(&mp, i, j).unwrap();
            let om = omega_at(&mp, i).unwrap();
            prop_assert_eq!(om.components[i], 0.0);
            prop_assert!(rel(rhs, mp.beta[i] * om.components[j]) <= 1e-14);
        }
    }

    #[test]
    fn two_channel_reduction(q in toy_point(), c in 0.0..0.6f64) {
        let mp = metric_at(&toy(c), &q).unwrap();
        let a = omega_at(&mp, VOLUME).unwrap().components[STRESS];
        let b = scalar_zeta_coefficient(&mp).unwrap();
        prop_assert!(rel(a, b) <= 1e-14, "{} vs {}", a, b);
    }
}

#[test]
fn flow_rhs_rejects_equal_channels() {
    let mp = metric_at(&toy(0.3), &[0.8, 0.2]).unwrap();
    assert!(matches!(
        levelset_flow_rhs(&mp, 1, 1),
        Err(McteError::Index(_))
    ));
}

#[test]
fn critical_point_bisection_is_reproducible() {
    // det g changes sign along V at sigma = 0.5 for c = 0.6
    let s = toy(0.6);
    let a = [0.80, 0.5];
    let b = [1.20, 0.5];
    let p1 = bisect_critical(&s, &a, &b, 1e-12).unwrap();
    let p2 = bisect_critical(&s, &a, &b, 1e-12).unwrap();
    assert_eq!(p1, p2);
    // closed form: x^2 + 1.2 sigma x = 0.36 (1 - sigma)^2 ... with sigma = 0.5
    // (x^2 + 0.6 x) / 0.25 = 0.36 => x^2 + 0.6 x - 0.09 = 0
    let x = 0.5 * (-0.6 + (0.36f64 + 0.36).sqrt());
    assert!((p1[0] - (0.75 + x)).abs() < 1e-10);
    // det g is continuous across the crossing
    let d = |v: f64| metric_tensor(&s, &[v, 0.5]).unwrap().determinant();
    assert!(d(p1[0] - 1e-9).signum() != d(p1[0] + 1e-9).signum());
}
