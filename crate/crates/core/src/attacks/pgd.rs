use serde::{Deserialize, Serialize};

use super::metrics::degradation;
use super::objective::{damage, damage_and_gradient, AttackTarget};
use crate::error::{Error, Result};
use crate::numerics::{gaussian_sample, l2_project, RngStream, Tensor};
use crate::scalar::Scalar;
use crate::vae::VaeModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// L2 budget on the input perturbation.
    pub budget: f64,
    pub steps: usize,
    /// Length of each normalised ascent step; `budget / steps` when unset.
    pub step_size: Option<f64>,
    /// Restart 0 starts at the origin, the others at random points of the sphere.
    pub restarts: usize,
    /// Noise draws averaged inside the objective.
    pub n_mc: usize,
    /// Noise draws used to score the final perturbations.
    pub n_eval: usize,
    pub target: AttackTarget,
    /// One fresh noise draw per step instead of a fixed batch per restart.
    pub single_sample: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            budget: 1.0,
            steps: 50,
            step_size: None,
            restarts: 5,
            n_mc: 8,
            n_eval: 256,
            target: AttackTarget::Both,
            single_sample: false,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget >= 0.0) || !self.budget.is_finite() {
            return Err(Error::Config(format!("attack budget must be non-negative, got {}", self.budget)));
        }
        if self.steps == 0 || self.restarts == 0 || self.n_mc == 0 || self.n_eval == 0 {
            return Err(Error::Config("attack steps, restarts, n_mc and n_eval must be at least 1".into()));
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0) {
                return Err(Error::Config(format!("attack step size must be positive, got {s}")));
            }
        }
        Ok(())
    }

    fn step(&self) -> f64 {
        self.step_size.unwrap_or(self.budget / self.steps as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub delta: Vec<f64>,
    pub delta_norm: f64,
    pub budget: f64,
    /// Objective at `delta` on the fixed evaluation noise batch.
    pub damage: f64,
    /// Objective of the winning restart after each ascent step.
    pub trace: Vec<f64>,
    /// Relative log-likelihood degradation of the mean embedding; absent when
    /// the clean log-likelihood is exactly zero.
    pub degradation: Option<f64>,
    pub target: AttackTarget,
    pub restart: usize,
    pub seed: u64,
}

const EVAL_STREAM: u64 = 0x6576_616c;

/// Maximum-damage attack: projected gradient ascent on the expected
/// reconstruction distance, best of several restarts.
pub fn max_damage_attack<S: Scalar>(
    model: &VaeModel<S>,
    x: &Tensor<S>,
    cfg: &AttackConfig,
    rng: &RngStream,
) -> Result<AttackResult> {
    attack_with_warm_start(model, x, cfg, rng, None)
}

/// As [`max_damage_attack`], additionally considering `warm` (which must be
/// feasible) as a starting point and as a candidate answer.
///
/// All randomness is derived from `rng` without advancing it, and the
/// evaluation noise batch does not depend on the budget, so a sweep over
/// growing budgets that warm-starts from the previous answer yields
/// non-decreasing damage.
pub fn attack_with_warm_start<S: Scalar>(
    model: &VaeModel<S>,
    x: &Tensor<S>,
    cfg: &AttackConfig,
    rng: &RngStream,
    warm: Option<&Tensor<S>>,
) -> Result<AttackResult> {
    cfg.validate()?;
    if x.rank() != 1 || x.len() != model.data_dim {
        return Err(Error::shape(format!("attack input {:?}", x.shape())));
    }
    let budget = S::lit(cfg.budget);
    let eval_eta: Tensor<S> = gaussian_sample(&mut rng.derive(EVAL_STREAM), &[cfg.n_eval, model.latent_dim]);
    let score = |d: &Tensor<S>| damage(model, x, d, cfg.target, &eval_eta).map(|v| v.as_f64());

    let mut best: Option<(f64, Tensor<S>, Vec<f64>, usize)> = None;
    let mut consider = |value: f64, d: Tensor<S>, trace: Vec<f64>, restart: usize| {
        if best.as_ref().is_none_or(|b| value > b.0) {
            best = Some((value, d, trace, restart));
        }
    };

    let zero = Tensor::zeros(&[model.data_dim]);
    if cfg.budget == 0.0 {
        let v = score(&zero)?;
        consider(v, zero.clone(), Vec::new(), 0);
    } else {
        if let Some(w) = warm {
            let w = l2_project(w, budget)?;
            if let Ok(v) = score(&w) {
                consider(v, w, Vec::new(), cfg.restarts);
            }
        }
        let n_starts = cfg.restarts + usize::from(warm.is_some());
        for j in 0..n_starts {
            let mut stream = rng.derive(j as u64);
            let start = if j == cfg.restarts {
                l2_project(warm.expect("warm start"), budget)?
            } else if j == 0 {
                zero.clone()
            } else {
                let dir: Tensor<S> = gaussian_sample(&mut stream, &[model.data_dim]);
                let n = dir.l2_norm();
                if n > S::zero() {
                    l2_project(&dir.scale(budget / n), budget)?
                } else {
                    zero.clone()
                }
            };
            let Ok((delta, trace)) = ascend(model, x, cfg, start, &mut stream) else {
                continue;
            };
            if let Ok(v) = score(&delta) {
                consider(v, delta, trace, j);
            }
        }
    }

    let Some((value, delta, trace, restart)) = best else {
        return Err(Error::NonFinite("every attack restart produced a non-finite objective".into()));
    };
    let degradation = degradation(model, x, &delta).ok();
    Ok(AttackResult {
        delta_norm: delta.l2_norm().as_f64(),
        delta: delta.to_f64_vec(),
        budget: cfg.budget,
        damage: value,
        trace,
        degradation,
        target: cfg.target,
        restart,
        seed: rng.seed(),
    })
}

fn ascend<S: Scalar>(
    model: &VaeModel<S>,
    x: &Tensor<S>,
    cfg: &AttackConfig,
    start: Tensor<S>,
    rng: &mut RngStream,
) -> Result<(Tensor<S>, Vec<f64>)> {
    let budget = S::lit(cfg.budget);
    let step = S::lit(cfg.step());
    let n_mc = if cfg.single_sample { 1 } else { cfg.n_mc };
    let mut eta: Tensor<S> = gaussian_sample(rng, &[n_mc, model.latent_dim]);
    let mut delta = start;
    let mut trace = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        if cfg.single_sample {
            eta = gaussian_sample(rng, &[1, model.latent_dim]);
        }
        let (value, grad) = damage_and_gradient(model, x, &delta, cfg.target, &eta)?;
        trace.push(value.as_f64());
        let gn = grad.l2_norm();
        if !gn.is_finite() {
            return Err(Error::NonFinite("attack gradient".into()));
        }
        if gn > S::zero() {
            delta = l2_project(&delta.add(&grad.scale(step / gn)), budget)?;
        }
    }
    Ok((delta, trace))
}

/// Attacks at each budget in increasing order, warm-starting every budget
/// from the previous answer.
pub fn budget_sweep<S: Scalar>(
    model: &VaeModel<S>,
    x: &Tensor<S>,
    budgets: &[f64],
    cfg: &AttackConfig,
    rng: &RngStream,
) -> Result<Vec<AttackResult>> {
    if budgets.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("attack budgets must be non-decreasing".into()));
    }
    let mut out: Vec<AttackResult> = Vec::with_capacity(budgets.len());
    let mut warm: Option<Tensor<S>> = None;
    for &b in budgets {
        let c = AttackConfig { budget: b, ..*cfg };
        let res = attack_with_warm_start(model, x, &c, rng, warm.as_ref())?;
        warm = Some(Tensor::vector(res.delta.iter().map(|&v| S::lit(v)).collect()));
        out.push(res);
    }
    Ok(out)
}

/// Adapts the attack to the callback expected by the margin estimator.
pub fn margin_attack<S: Scalar>(
    cfg: AttackConfig,
) -> impl FnMut(&VaeModel<S>, &Tensor<S>, f64, &mut RngStream) -> Result<Tensor<S>> {
    move |model, x, radius, rng| {
        let c = AttackConfig { budget: radius, ..cfg };
        let stream = rng.derive(0);
        let res = max_damage_attack(model, x, &c, &stream)?;
        Ok(Tensor::vector(res.delta.iter().map(|&v| S::lit(v)).collect()))
    }
}
