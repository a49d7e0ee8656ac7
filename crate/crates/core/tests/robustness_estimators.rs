//! Radius and margin estimators against closed-form answers on identity and
//! linear models.

mod common;

use common::{bisect, normal_cdf};
use proptest::prelude::*;
use vaerobust::attacks::{margin_attack, AttackConfig};
use vaerobust::numerics::stats::binomial_se;
use vaerobust::numerics::{gaussian_sample, RngStream, Tensor};
use vaerobust::robustness::{
    delta_sample, estimate_margin, estimate_min_r, inside_fraction, margin_bound, margin_bound_formula, min_r_bound,
    EstimatorConfig,
};
use vaerobust::vae::{Likelihood, VaeModel};

fn identity(d: usize) -> VaeModel {
    VaeModel::identity(&Tensor::vector(vec![1.0; d])).unwrap()
}

#[test]
fn min_r_matches_half_normal_and_chi_medians() {
    // Medians of |N(0,1)| and of the norm of a 2-D standard normal.
    let half_normal = bisect(|t| 2.0 * normal_cdf(t) - 1.0 - 0.5, 0.0, 3.0);
    let chi2 = (2.0 * 2f64.ln()).sqrt();
    assert!((half_normal - 0.6745).abs() < 1e-4);
    assert!((chi2 - 1.1774).abs() < 1e-4);

    let cfg = EstimatorConfig {
        samples: 100_000,
        ..EstimatorConfig::default()
    };
    for (d, median) in [(1, half_normal), (2, chi2)] {
        let m = identity(d);
        let x = Tensor::zeros(&[d]);
        let est = estimate_min_r(&m, &x, &cfg, &mut RngStream::new(3, d as u64)).unwrap();
        let tol = cfg.step + 3.0 * binomial_se(0.5, cfg.samples);
        assert!((est.r - median).abs() <= tol, "d={d}: {} vs {median}", est.r);
        assert!(est.p_inside.estimate > 0.5);
    }
}

#[test]
fn min_r_is_invariant_to_the_input_location() {
    let m = identity(2);
    let cfg = EstimatorConfig {
        samples: 20_000,
        ..EstimatorConfig::default()
    };
    let a = estimate_min_r(&m, &Tensor::zeros(&[2]), &cfg, &mut RngStream::new(1, 0)).unwrap();
    let b = estimate_min_r(&m, &Tensor::vector_f64(&[3.0, -7.0]), &cfg, &mut RngStream::new(1, 0)).unwrap();
    assert_eq!(a, b);
}

fn one_d_margin_oracle(r: f64) -> f64 {
    bisect(|big_r| normal_cdf(r - big_r) - normal_cdf(-r - big_r) - 0.5, 0.0, r)
}

#[test]
fn margin_matches_the_one_dimensional_root() {
    let root = one_d_margin_oracle(1.0);
    assert!((root - 0.93).abs() < 0.01, "{root}");

    // Monte Carlo cross-check of the root itself.
    let mut rng = RngStream::new(11, 0);
    let n = 200_000;
    let inside = (0..n).filter(|_| (root + rng.normal()).abs() <= 1.0).count();
    assert!((inside as f64 / n as f64 - 0.5).abs() < 4.0 * binomial_se(0.5, n));

    let m = identity(1);
    let cfg = EstimatorConfig {
        samples: 20_000,
        restarts: 3,
        initial_margin: 2.0,
        ..EstimatorConfig::default()
    };
    let attack = AttackConfig {
        steps: 20,
        restarts: 2,
        ..AttackConfig::default()
    };
    let est = estimate_margin(
        &m,
        &Tensor::vector_f64(&[0.4]),
        1.0,
        &cfg,
        margin_attack(attack),
        &mut RngStream::new(5, 0),
    )
    .unwrap();
    assert!(est.robust_at_origin);
    assert!((est.margin - root).abs() <= 2.0 * cfg.step, "{} vs {root}", est.margin);
}

#[test]
fn margin_is_zero_when_not_robust_at_the_origin() {
    let m = identity(1);
    let cfg = EstimatorConfig {
        samples: 5_000,
        ..EstimatorConfig::default()
    };
    let est = estimate_margin(
        &m,
        &Tensor::vector_f64(&[0.0]),
        0.5,
        &cfg,
        margin_attack(AttackConfig::default()),
        &mut RngStream::new(5, 0),
    )
    .unwrap();
    assert!(!est.robust_at_origin);
    assert_eq!(est.margin, 0.0);
}

#[test]
fn margin_bound_is_sound_on_the_one_dimensional_model() {
    let m = identity(1);
    let b = margin_bound(&m, &Tensor::vector_f64(&[0.0]), 1.0, &mut RngStream::new(2, 0), 50_000).unwrap();
    let p = normal_cdf(1.0) - normal_cdf(-1.0);
    assert!((b.p_inside.estimate - p).abs() < 4.0 * b.p_inside.std_error);
    assert!(b.bound > 0.0 && b.bound < one_d_margin_oracle(1.0));
    assert!(!b.outside_trust_region);
    assert_eq!(b.trust_mismatch, 0.0);
}

fn random_linear(rng: &mut RngStream, dx: usize, dz: usize) -> VaeModel {
    let enc: Tensor = gaussian_sample(rng, &[dz, dx]);
    let dec: Tensor = gaussian_sample(rng, &[dx, dz]);
    let sigma = Tensor::vector((0..dz).map(|_| 0.2 + rng.uniform()).collect());
    VaeModel::linear(
        &enc,
        &Tensor::zeros(&[dz]),
        &sigma,
        &dec,
        &Tensor::zeros(&[dx]),
        Likelihood::Gaussian { gamma: 1.0 },
    )
    .unwrap()
}

#[test]
fn trace_radius_guarantees_half_the_mass_inside() {
    let mut rng = RngStream::new(21, 0);
    for trial in 0..20 {
        let (dx, dz) = (2 + trial % 5, 1 + trial % 3);
        let m = random_linear(&mut rng, dx, dz);
        let x: Tensor = gaussian_sample(&mut rng, &[dx]);
        let r = min_r_bound(&m, &x).unwrap();
        let n = 20_000;
        let p = inside_fraction(&delta_sample(&m, &x, &mut rng, n).unwrap(), r);
        assert!(p.estimate >= 0.5 - 3.0 * p.std_error, "trial {trial}: {}", p.estimate);
    }
}

proptest! {
    #[test]
    fn margin_bound_formula_is_monotone(
        p in 0.0f64..0.999, dp in 0.0f64..0.2,
        s in 0.01f64..5.0, ds in 0.0f64..2.0,
        j in 0.01f64..5.0, dj in 0.0f64..2.0,
    ) {
        let p2 = (p + dp).min(0.9999);
        let base = margin_bound_formula(p, s, j).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert!(margin_bound_formula(p2, s, j).unwrap() >= base);
        prop_assert!(margin_bound_formula(p, s + ds, j).unwrap() >= base);
        prop_assert!(margin_bound_formula(p, s, j + dj).unwrap() <= base);
    }

    #[test]
    fn trace_radius_scales_with_sigma(seed in 0u64..500, c in 0.1f64..10.0) {
        let mut rng = RngStream::new(seed, 0);
        let sigma: Vec<f64> = (0..3).map(|_| 0.1 + rng.uniform()).collect();
        let scaled: Vec<f64> = sigma.iter().map(|s| s * c).collect();
        let x = Tensor::zeros(&[3]);
        let a = min_r_bound(&VaeModel::identity(&Tensor::vector(sigma)).unwrap(), &x).unwrap();
        let b = min_r_bound(&VaeModel::identity(&Tensor::vector(scaled)).unwrap(), &x).unwrap();
        prop_assert!((b - c * a).abs() <= 1e-12 * b.max(1.0));
    }
}
