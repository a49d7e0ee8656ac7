//! Closed-form linear-Gaussian and linear-attack references checked against
//! each other and against the generic attack.

mod common;

use common::rel_err;
use nalgebra::DMatrix;
use vaerobust::attacks::{max_damage_attack, AttackConfig, AttackTarget};
use vaerobust::numerics::{gaussian_sample, RngStream, Tensor};
use vaerobust::oracles::{
    mc_reference, svd_attack_optimum, tempered_posterior, verify_theorem2, LinearGaussianVae, McDistribution,
    McStatistic,
};
use vaerobust::vae::{Likelihood, VaeModel};

#[test]
fn tempered_posterior_at_beta_one_is_the_textbook_posterior() {
    let mut rng = RngStream::new(4, 0);
    for _ in 0..10 {
        let lg = LinearGaussianVae::random(5, 3, 0.7, &mut rng).unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let a = tempered_posterior(&lg, &x, 1.0).unwrap();
        let b = lg.exact_posterior(&x).unwrap();
        for (u, v) in a.mean.iter().zip(&b.mean).chain(a.covariance.iter().zip(&b.covariance)) {
            assert!((u - v).abs() <= 1e-12, "{u} vs {v}");
        }
    }
}

#[test]
fn tempered_covariance_grows_with_beta() {
    let mut rng = RngStream::new(8, 0);
    let lg = LinearGaussianVae::random(4, 2, 1.0, &mut rng).unwrap();
    let x = [0.3, -0.1, 0.8, 1.2];
    let trace = |beta: f64| {
        let c = tempered_posterior(&lg, &x, beta).unwrap().covariance;
        c[0] + c[3]
    };
    assert!(trace(0.5) < trace(1.0) && trace(1.0) < trace(4.0));
    assert!(trace(1e6) < 2.0 + 1e-5);
}

#[test]
fn tempered_posterior_maximises_the_beta_elbo() {
    let mut rng = RngStream::new(10, 0);
    for instance in 0..5 {
        let lg = LinearGaussianVae::random(4, 2 + instance % 2, 0.5 + 0.2 * instance as f64, &mut rng).unwrap();
        let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        for beta in [0.25, 0.5, 1.0, 2.0, 4.0, 10.0] {
            let rep = verify_theorem2(&lg, &x, beta, 1e-6, 100, 0.05, &mut rng).unwrap();
            assert!(rep.passed, "instance {instance} beta {beta}: {rep:?}");
        }
    }
}

#[test]
fn svd_optimum_beats_a_dense_sphere_grid() {
    let mut rng = RngStream::new(12, 0);
    let w: Tensor = gaussian_sample(&mut rng, &[2, 2]);
    let a: Tensor = gaussian_sample(&mut rng, &[3, 2]);
    let m = DMatrix::from_row_slice(3, 2, a.data()) * DMatrix::from_row_slice(2, 2, w.data());
    let budget = 1.7;
    let best_grid = (0..20_000)
        .map(|i| {
            let t = i as f64 / 20_000.0 * std::f64::consts::TAU;
            (&m * nalgebra::DVector::from_vec(vec![budget * t.cos(), budget * t.sin()])).norm()
        })
        .fold(0.0f64, f64::max);
    let opt = svd_attack_optimum(&w, &a, budget).unwrap();
    assert!(opt.damage >= best_grid - 1e-12);
    assert!(rel_err(opt.damage, best_grid) < 5e-3);
    let achieved = (&m * nalgebra::DVector::from_vec(opt.delta.clone())).norm();
    assert!(rel_err(achieved, opt.damage) < 1e-12);
}

#[test]
fn monte_carlo_reference_medians() {
    let mut rng = RngStream::new(13, 0);
    for (dist, want) in [
        (McDistribution::HalfNormal, 0.674_489_750_196),
        (McDistribution::ChiNorm(2), (2.0 * 2f64.ln()).sqrt()),
        (McDistribution::StandardNormal, 0.0),
    ] {
        let e = mc_reference(dist, McStatistic::Median, 100_000, &mut rng).unwrap();
        assert!((e.estimate - want).abs() < 4.0 * e.std_error + 1e-3, "{dist:?}: {e:?}");
    }
    let mean = mc_reference(McDistribution::HalfNormal, McStatistic::Mean, 100_000, &mut rng).unwrap();
    let want = (2.0 / std::f64::consts::PI).sqrt();
    assert!((mean.estimate - want).abs() < 4.0 * mean.std_error);
}

#[test]
fn attack_reaches_the_svd_optimum_on_linear_models() {
    let mut rng = RngStream::new(14, 0);
    for trial in 0..3 {
        let (dx, dz) = (4, 2);
        let w: Tensor = gaussian_sample(&mut rng, &[dz, dx]);
        let a: Tensor = gaussian_sample(&mut rng, &[dx, dz]);
        // The oracle ignores the encoder noise, so it is made negligible.
        let model: VaeModel = VaeModel::linear(
            &w,
            &Tensor::zeros(&[dz]),
            &Tensor::vector(vec![1e-6; dz]),
            &a,
            &Tensor::zeros(&[dx]),
            Likelihood::Gaussian { gamma: 1.0 },
        )
        .unwrap();
        let x: Tensor = gaussian_sample(&mut rng, &[dx]);
        for budget in [0.1, 1.0, 10.0] {
            let opt = svd_attack_optimum(&w, &a, budget).unwrap();
            let cfg = AttackConfig {
                budget,
                target: AttackTarget::MuOnly,
                ..AttackConfig::default()
            };
            let res = max_damage_attack(&model, &x, &cfg, &RngStream::new(trial, 0)).unwrap();
            assert!(res.delta_norm <= budget * (1.0 + 1e-9));
            assert!(
                rel_err(res.damage, opt.damage) <= 0.02,
                "trial {trial} L={budget}: {} vs {}",
                res.damage,
                opt.damage
            );
        }
    }
}
