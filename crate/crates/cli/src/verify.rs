//! Self-checks of the estimators and attacks against closed-form references.

use vaerobust::attacks::{max_damage_attack, AttackConfig, AttackTarget};
use vaerobust::numerics::stats::binomial_se;
use vaerobust::numerics::{gaussian_sample, RngStream, Tensor};
use vaerobust::oracles::{
    mc_reference, svd_attack_optimum, tempered_posterior, verify_theorem2, LinearGaussianVae, McDistribution,
    McStatistic,
};
use vaerobust::robustness::{estimate_min_r, EstimatorConfig};
use vaerobust::vae::{Likelihood, VaeModel};
use vaerobust::Result;

use crate::table::{cell, Table};

struct Check<'a> {
    table: &'a mut Table,
    failed: usize,
}

impl Check<'_> {
    fn record(&mut self, name: &str, value: f64, reference: f64, tolerance: f64) -> Result<()> {
        let passed = (value - reference).abs() <= tolerance;
        self.failed += usize::from(!passed);
        self.table
            .push(vec![cell(name), cell(value), cell(reference), cell(tolerance), cell(passed)])
    }
}

/// Runs every oracle check; the second value counts failures.
pub fn verify_oracles(seed: u64) -> Result<(Table, usize)> {
    let mut table = Table::new("oracles", 1, &["check", "value", "reference", "tolerance", "passed"]);
    let mut c = Check {
        table: &mut table,
        failed: 0,
    };
    let mut rng = RngStream::new(seed, 0);

    for instance in 0..5 {
        let lg = LinearGaussianVae::random(4, 2, 0.5 + 0.1 * instance as f64, &mut rng)?;
        let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let exact = lg.exact_posterior(&x)?;
        let tempered = tempered_posterior(&lg, &x, 1.0)?;
        let gap = exact
            .mean
            .iter()
            .zip(&tempered.mean)
            .chain(exact.covariance.iter().zip(&tempered.covariance))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        c.record(&format!("tempered_posterior_beta1/{instance}"), gap, 0.0, 1e-12)?;
        for beta in [0.25, 0.5, 1.0, 2.0, 4.0, 10.0] {
            let rep = verify_theorem2(&lg, &x, beta, 1e-6, 100, 0.05, &mut rng)?;
            let ok = if rep.passed { 0.0 } else { 1.0 };
            c.record(&format!("beta_elbo_optimum/{instance}/beta={beta}"), ok, 0.0, 0.0)?;
        }
    }

    let (w, a): (Tensor, Tensor) = (gaussian_sample(&mut rng, &[2, 4]), gaussian_sample(&mut rng, &[4, 2]));
    let model: VaeModel = VaeModel::linear(
        &w,
        &Tensor::zeros(&[2]),
        &Tensor::vector(vec![1e-6; 2]),
        &a,
        &Tensor::zeros(&[4]),
        Likelihood::Gaussian { gamma: 1.0 },
    )?;
    let x: Tensor = gaussian_sample(&mut rng, &[4]);
    for budget in [0.1, 1.0, 10.0] {
        let opt = svd_attack_optimum(&w, &a, budget)?;
        let cfg = AttackConfig {
            budget,
            target: AttackTarget::MuOnly,
            ..AttackConfig::default()
        };
        let res = max_damage_attack(&model, &x, &cfg, &rng.derive(budget.to_bits()))?;
        c.record(&format!("linear_attack/L={budget}"), res.damage / opt.damage, 1.0, 0.02)?;
    }

    let cfg = EstimatorConfig {
        samples: 100_000,
        ..EstimatorConfig::default()
    };
    for (d, dist) in [(1, McDistribution::HalfNormal), (2, McDistribution::ChiNorm(2))] {
        let m: VaeModel = VaeModel::identity(&Tensor::vector(vec![1.0; d]))?;
        let est = estimate_min_r(&m, &Tensor::zeros(&[d]), &cfg, &mut rng)?;
        let reference = mc_reference(dist, McStatistic::Median, 100_000, &mut rng)?;
        let tol = cfg.step + 3.0 * binomial_se(0.5, cfg.samples) + 3.0 * reference.std_error;
        c.record(&format!("min_r_identity/d={d}"), est.r, reference.estimate, tol)?;
    }
    let failed = c.failed;
    Ok((table, failed))
}
