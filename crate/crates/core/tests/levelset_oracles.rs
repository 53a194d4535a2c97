mod common;

use approx::assert_relative_eq;
use mcte_core::*;

fn toy_with(c: f64, v_j: f64) -> EntropySurface {
    EntropySurface::toy(ToyGranularParams {
        c,
        v_j,
        ..ToyGranularParams::default()
    })
    .unwrap()
}

fn toy(c: f64) -> EntropySurface {
    toy_with(c, 0.75)
}

fn ctrl() -> StepControl {
    StepControl::default()
}

#[test]
fn decoupled_level_set_matches_closed_form() {
    let s = toy_with(0.0, 0.7);
    let path = trace_level_set(&s, &[0.78, 0.2], STRESS, 0.8, &ctrl()).unwrap();
    assert!(!path.is_truncated());
    assert_eq!(path.end().q[STRESS], 0.8);
    let path = zeta_along_path(&s, &path, VOLUME, 1.0, &ctrl()).unwrap();
    for smp in &path.samples {
        let sig = smp.q[STRESS];
        let v = 0.7 + 0.08 * (0.8 / (1.0 - sig));
        assert!((smp.q[VOLUME] - v).abs() < 1e-10, "V({sig})");
        assert!(smp.s_drift.abs() <= 1e-13);
        let zeta = (1.0 - sig) / 0.8;
        assert!((smp.zeta[VOLUME] - zeta).abs() < 1e-10 * zeta);
    }
}

#[test]
fn circle_level_set_of_isotropic_quadratic() {
    let s = EntropySurface::quadratic(vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
    assert!(matches!(
        trace_level_set(&s, &[0.6, 0.0], STRESS, 0.5, &ctrl()),
        Err(McteError::DegenerateIntensity { .. })
    ));
    let path = trace_level_set(&s, &[0.6, 0.1], STRESS, 0.5, &ctrl()).unwrap();
    assert!(!path.is_truncated());
    for smp in &path.samples {
        let r2 = smp.q[0] * smp.q[0] + smp.q[1] * smp.q[1];
        assert!((r2 - 0.37).abs() < 1e-10);
    }
}

#[test]
fn classical_limit_profile_on_constant_metric() {
    // g is diagonal and constant, yet omega_0 keeps its g_00 beta_1 term:
    // zeta_0 follows beta_0 = -q0 instead of staying at lambda
    let s = EntropySurface::quadratic(vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
    let path = trace_level_set(&s, &[0.6, 0.1], STRESS, 0.4, &ctrl()).unwrap();
    let path = zeta_along_path(&s, &path, 0, 1.0, &ctrl()).unwrap();
    let end = path.end();
    let expect = (0.37f64 - 0.16).sqrt() / 0.6;
    assert_relative_eq!(end.zeta[0], expect, max_relative = 1e-10);
    assert!((end.zeta[0] - 1.0).abs() > 0.2);
    assert!(invariant_check(&path).max_rel_drift[0] <= 1e-10);
}

#[test]
fn beta_ratio_identity_on_both_channels() {
    for c in [0.0, 0.15, 0.3, 0.6] {
        let s = toy(c);
        let path = trace_level_set(&s, &[0.80, 0.1], STRESS, 0.6, &ctrl()).unwrap();
        let mut path = zeta_along_path(&s, &path, VOLUME, 1.0, &ctrl()).unwrap();
        path = zeta_along_path(&s, &path, STRESS, 2.0, &ctrl()).unwrap();
        assert!(path.beta_ratio_error(VOLUME) <= 1e-10);
        assert!(path.beta_ratio_error(STRESS) <= 1e-10);
    }
}

#[test]
fn reversal_returns_to_start() {
    for c in [0.0, 0.3, 0.6] {
        let s = toy(c);
        let q0 = [0.79, 0.1];
        let fwd = trace_level_set(&s, &q0, STRESS, 0.6, &ctrl()).unwrap();
        let back = trace_level_set(&s, &fwd.end().q, STRESS, 0.1, &ctrl()).unwrap();
        let q = &back.end().q;
        assert!(
            (q[0] - q0[0]).abs() < 1e-9 && (q[1] - q0[1]).abs() < 1e-9,
            "{q:?}"
        );
    }
}

#[test]
fn tighter_tolerances_do_not_worsen_the_invariant() {
    let s = toy(0.3);
    let mut drifts = Vec::new();
    for rtol in [1e-4, 1e-6, 1e-8, 1e-10, 1e-12] {
        let ctrl = StepControl {
            rtol,
            atol: rtol * 1e-2,
            quad_nodes: 3,
            ..StepControl::default()
        };
        let path = trace_level_set(&s, &[0.78, 0.1], STRESS, 0.6, &ctrl).unwrap();
        let path = zeta_along_path(&s, &path, VOLUME, 1.0, &ctrl).unwrap();
        drifts.push(invariant_check(&path).max_rel_drift[VOLUME]);
    }
    for w in drifts.windows(2) {
        assert!(w[1] <= w[0].max(1e-12), "{drifts:?}");
    }
    assert!(drifts[0] > drifts[drifts.len() - 1], "{drifts:?}");
    assert!(*drifts.last().unwrap() <= 1e-10);
}

#[test]
fn steep_level_set_swaps_channels() {
    // the circle starts nearly vertical in the sigma parameterization
    let s = EntropySurface::quadratic(vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
    let path = trace_level_set(&s, &[0.05, -0.6], STRESS, 0.55, &ctrl()).unwrap();
    assert!(!path.is_truncated(), "{:?}", path.termination);
    assert!(path.samples.iter().any(|p| p.slaved == STRESS));
    assert_eq!(path.end().q[STRESS], 0.55);
    for smp in &path.samples {
        assert!((smp.q[0] * smp.q[0] + smp.q[1] * smp.q[1] - 0.3625).abs() < 1e-10);
    }
    assert!(path.max_s_drift() <= 1e-13);
    // beta_sigma crosses zero at sigma = 0, so only the volume channel has a zeta
    let path = zeta_along_path(&s, &path, VOLUME, 1.0, &ctrl()).unwrap();
    assert!(
        path.beta_ratio_error(VOLUME) <= 1e-10,
        "{:e}",
        path.beta_ratio_error(VOLUME)
    );
}

#[test]
fn three_channel_curve_keeps_the_invariant() {
    let s = EntropySurface::quadratic(vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 0.0]).unwrap();
    let q0 = [0.5, 0.3, 0.2];
    let nodes: Vec<Vec<f64>> = (1..=20)
        .map(|k| {
            let t = k as f64 / 20.0;
            vec![0.5, 0.3 - 0.2 * t, 0.2 + 0.1 * t * t]
        })
        .collect();
    let path = slave_curve(&s, &q0, 0, &nodes, 1e-13).unwrap();
    let lam = calibrated_lambdas(&path, 1.0);
    let mut path = path;
    for (i, l) in lam.iter().enumerate() {
        path = zeta_along_path(&s, &path, i, *l, &ctrl()).unwrap();
    }
    let inv = invariant_check(&path);
    for i in 0..3 {
        assert!(
            inv.max_rel_drift[i] <= 1e-10,
            "channel {i}: {:e}",
            inv.max_rel_drift[i]
        );
        assert_relative_eq!(inv.c_mean[i], inv.c_mean[0], max_relative = 1e-10);
    }
}

#[test]
fn holonomy_matches_complex_step_stokes_oracle() {
    for c in [0.15, 0.3, 0.6] {
        let s = toy(c);
        let lp = LoopSpec::rectangle((0.78, 0.82), (0.1, 0.3), 8);
        let h = holonomy(&s, &lp, VOLUME).unwrap();
        let oracle = common::stokes_oracle(c, (0.78, 0.82), (0.1, 0.3));
        assert!((h - oracle).abs() <= 1e-8, "c = {c}: {h} vs {oracle}");
        let fd = stokes_holonomy(&s, (0.78, 0.82), (0.1, 0.3), VOLUME, 4).unwrap();
        assert!((fd - oracle).abs() <= 1e-8);
    }
}

#[test]
fn decoupled_holonomy_vanishes() {
    let s = toy(0.0);
    for (v, sg) in [((0.78, 0.82), (0.1, 0.3)), ((0.76, 0.95), (0.0, 0.9))] {
        let h = holonomy(&s, &LoopSpec::rectangle(v, sg, 8), VOLUME).unwrap();
        assert!(h.abs() <= 1e-10);
    }
}

#[test]
fn holonomy_is_additive_and_orientation_odd() {
    let s = toy(0.3);
    let whole = holonomy(
        &s,
        &LoopSpec::rectangle((0.78, 0.82), (0.1, 0.3), 8),
        VOLUME,
    )
    .unwrap();
    let lower = holonomy(
        &s,
        &LoopSpec::rectangle((0.78, 0.82), (0.1, 0.2), 8),
        VOLUME,
    )
    .unwrap();
    let upper = holonomy(
        &s,
        &LoopSpec::rectangle((0.78, 0.82), (0.2, 0.3), 8),
        VOLUME,
    )
    .unwrap();
    assert!((whole - lower - upper).abs() <= 1e-10);

    let mut rev = LoopSpec::rectangle((0.78, 0.82), (0.1, 0.3), 8);
    rev.vertices.reverse();
    let back = holonomy(&s, &rev, VOLUME).unwrap();
    assert!((whole + back).abs() <= 1e-12);
}

#[test]
fn collinear_loop_has_no_holonomy() {
    let s = toy(0.3);
    let lp = LoopSpec {
        vertices: vec![vec![0.78, 0.1], vec![0.80, 0.2], vec![0.82, 0.3]],
        samples_per_edge: 8,
    };
    assert!(holonomy(&s, &lp, VOLUME).unwrap().abs() <= 1e-10);
}

#[test]
fn loops_leaving_the_domain_are_rejected() {
    let s = toy(0.3);
    let lp = LoopSpec::rectangle((0.70, 0.82), (0.1, 0.3), 8);
    assert!(matches!(
        holonomy(&s, &lp, VOLUME),
        Err(McteError::Domain { .. })
    ));
}

#[test]
fn sign_flip_is_inert_without_coupling() {
    let r = sign_flip_diagnostic(&toy(0.0), &[0.78, 0.1], 0.6, &ctrl()).unwrap();
    assert!(r.vacuous);
    assert_eq!(r.drift_correct, r.drift_flipped);
}

#[test]
fn sign_flip_drift_grows_with_coupling() {
    let d3 = sign_flip_diagnostic(&toy(0.3), &[0.78, 0.1], 0.6, &ctrl()).unwrap();
    let d6 = sign_flip_diagnostic(&toy(0.6), &[0.78, 0.1], 0.6, &ctrl()).unwrap();
    assert!(d6.drift_flipped >= d3.drift_flipped);
    assert!(d3.drift_flipped >= 0.1 && d3.drift_correct <= 1e-10);
}

#[test]
fn coupling_scales_with_distance_to_jamming() {
    // S(V_J + k x, sigma; k c) = S(V_J + x, sigma; c) + ln k, so the zeta
    // profile depends on c and V0 only through c / (V0 - V_J)
    let ctrl = ctrl();
    for (c, x, k) in [(0.15, 0.05, 2.0), (0.3, 0.04, 0.5), (0.2, 0.03, 3.0)] {
        let a = zeta_end(c, 0.75 + x, &ctrl);
        let b = zeta_end(k * c, 0.75 + k * x, &ctrl);
        assert!((a - b).abs() <= 1e-10 * a.abs(), "{a} vs {b}");
    }
}

fn zeta_end(c: f64, v0: f64, ctrl: &StepControl) -> f64 {
    let s = toy(c);
    let path = trace_level_set(&s, &[v0, 0.1], STRESS, 0.6, ctrl).unwrap();
    zeta_along_path(&s, &path, VOLUME, 1.0, ctrl)
        .unwrap()
        .end()
        .zeta[VOLUME]
}
