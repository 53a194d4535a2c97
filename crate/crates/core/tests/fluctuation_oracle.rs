use mcte_core::*;

fn quad_cfg(n_samples: usize, seed: u64) -> SamplerConfig {
    SamplerConfig {
        q_center: vec![0.0, 0.0],
        half_width: vec![4.0, 3.5],
        n_samples,
        burn_in: 5_000,
        proposal_scale: vec![1.0, 1.0],
        seed,
        batches: 50,
    }
}

#[test]
fn decoupled_quadratic_off_diagonal_is_zero_within_error() {
    let s = EntropySurface::quadratic(vec![2.0, 3.0], vec![0.0, 0.0]).unwrap();
    let r = sample_metric(&s, &quad_cfg(200_000, 11)).unwrap();
    assert_eq!(r.g_analytic[(0, 1)], 0.0);
    assert!(r.z_scores()[(0, 1)] <= 3.0, "{}", r.z_scores());
    assert!(r.ess > 1_000.0);
    assert!(
        (0.3..=0.6).contains(&r.acceptance_rate),
        "{}",
        r.acceptance_rate
    );
}

#[test]
fn error_shrinks_with_sample_count() {
    let s = EntropySurface::quadratic(vec![2.0, 3.0], vec![0.0, 0.0]).unwrap();
    let small = sample_metric(&s, &quad_cfg(20_000, 3)).unwrap();
    let large = sample_metric(&s, &quad_cfg(800_000, 3)).unwrap();
    // standard errors scale like n^-1/2: a factor 40 in n gives ~6.3
    let ratio = small.std_err[(0, 0)] / large.std_err[(0, 0)];
    assert!((3.0..15.0).contains(&ratio), "{ratio}");
    assert!(large.rel_err_frobenius < small.rel_err_frobenius.max(0.02));
}

#[test]
fn pooled_chains_are_deterministic() {
    let s = EntropySurface::quadratic(vec![2.0, 3.0], vec![0.0, 0.0]).unwrap();
    let a = sample_metric_chains(&s, &quad_cfg(20_000, 5), 4).unwrap();
    let b = sample_metric_chains(&s, &quad_cfg(20_000, 5), 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.n_samples, 80_000);
}

#[test]
fn coupled_toy_off_diagonal_is_negative() {
    let s = EntropySurface::toy(ToyGranularParams::default()).unwrap();
    let cfg = SamplerConfig {
        q_center: vec![0.78, 0.2],
        half_width: vec![0.005, 0.005],
        n_samples: 200_000,
        burn_in: 20_000,
        proposal_scale: vec![0.002, 0.002],
        seed: 1,
        batches: 50,
    };
    let r = sample_metric(&s, &cfg).unwrap();
    assert!(r.g_analytic[(0, 1)] < 0.0);
    assert!(r.g_sampled.iter().all(|x| x.is_finite()));
}

#[test]
fn decoupled_toy_off_diagonal_is_zero_within_error() {
    let s = EntropySurface::toy(ToyGranularParams::default().with_coupling(0.0)).unwrap();
    let cfg = SamplerConfig {
        q_center: vec![0.85, 0.3],
        half_width: vec![0.01, 0.01],
        n_samples: 1_000_000,
        burn_in: 20_000,
        proposal_scale: vec![0.005, 0.005],
        seed: 17,
        batches: 50,
    };
    let r = sample_metric(&s, &cfg).unwrap();
    assert_eq!(r.g_analytic[(0, 1)], 0.0);
    assert!(r.z_scores()[(0, 1)] <= 3.0, "{}", r.z_scores());
}

#[test]
fn narrow_gaussian_window_biases_the_precision_upward() {
    // a hard window of +-1 cuts the k = 2 Gaussian at 1.4 standard deviations
    let s = EntropySurface::quadratic(vec![2.0, 3.0], vec![0.0, 0.0]).unwrap();
    let mut cfg = quad_cfg(200_000, 4);
    cfg.half_width = vec![1.0, 1.0];
    let narrow = sample_metric(&s, &cfg).unwrap();
    let wide = sample_metric(&s, &quad_cfg(200_000, 4)).unwrap();
    assert!(narrow.g_sampled[(0, 0)] > 3.0);
    assert!(narrow.rel_err_frobenius > 10.0 * wide.rel_err_frobenius);
}
