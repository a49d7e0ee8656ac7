//! Sweep protocols over trained models.
//!
//! Models inside one sweep share their initialisation and training seed, so
//! only the swept quantity changes between them. Per-input evaluations run in
//! parallel; each draws from streams derived from the run seed and the input
//! index, so results do not depend on scheduling.

use rayon::prelude::*;
use vaerobust::attacks::{
    budget_sweep, damage_distribution, margin_attack, max_damage_attack, noise_sensitivity, AttackConfig, AttackTarget,
};
use vaerobust::numerics::stats::{mean, median, pearson, quantile, std_dev};
use vaerobust::numerics::{RngStream, Tensor};
use vaerobust::robustness::{
    assess, delta_sample, estimate_min_r, inside_fraction, margin_bound, min_r_bound, perturbed_delta_sample,
    RobustnessReport,
};
use vaerobust::vae::{train, TrainConfig, TrainReport, VaeModel};
use vaerobust::{Error, Result};

use crate::config::{ExperimentConfig, RRule};
use crate::table::{cell, Table};

const MODEL_STREAM: u64 = 0x6d6f_64656c;
const INIT_STREAM: u64 = 0x696e_6974;
const INPUT_STREAM: u64 = 0x696e_7075;
const RULE_STREAM: u64 = 0x7275_6c65;
const CURVE_STREAM: u64 = 0x6375_7276;
const NOISE_STREAM: u64 = 0x6e6f_6973;
const DAMAGE_STREAM: u64 = 0x6461_6d61;

/// Training seed of the `k`-th model of a run.
pub fn model_seed(run_seed: u64, k: u64) -> u64 {
    RngStream::new(run_seed, MODEL_STREAM).derive(k).next_u64()
}

/// Builds a model from the configured architecture and trains it.
pub fn train_model(
    cfg: &ExperimentConfig,
    data: &Tensor<f64>,
    beta: f64,
    tau: f64,
    seed: u64,
) -> Result<(VaeModel, TrainReport)> {
    let mut init = RngStream::new(seed, INIT_STREAM);
    let mut model = VaeModel::new(cfg.model.architecture(data.cols()), cfg.model.likelihood, tau, &mut init)?;
    let tc = TrainConfig {
        beta,
        seed,
        ..cfg.training
    };
    let report = train(&mut model, data, &tc)?;
    Ok((model, report))
}

/// Distinct row indices chosen by a seeded shuffle.
pub fn select_inputs(data: &Tensor<f64>, count: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..data.rows()).collect();
    RngStream::new(seed, INPUT_STREAM).shuffle(&mut idx);
    idx.truncate(count);
    idx
}

pub fn row(data: &Tensor<f64>, i: usize) -> Tensor<f64> {
    Tensor::vector(data.row(i).to_vec())
}

pub fn choose_r(model: &VaeModel, x: &Tensor<f64>, rule: RRule, rng: &mut RngStream) -> Result<f64> {
    match rule {
        RRule::Fixed { r } => Ok(r),
        RRule::InsideProbability { p, samples } => {
            let mut d = delta_sample(model, x, rng, samples)?;
            d.sort_by(f64::total_cmp);
            let k = ((p * samples as f64).ceil() as usize).clamp(1, samples);
            // Distances are zero only for a flat decoder; keep r positive.
            Ok(d[k - 1].max(f64::MIN_POSITIVE))
        }
    }
}

/// Every estimator for one input, with `r` chosen by `rule`.
pub fn evaluate_input(
    cfg: &ExperimentConfig,
    model: &VaeModel,
    model_id: &str,
    x: &Tensor<f64>,
    input_id: usize,
    rule: RRule,
) -> Result<RobustnessReport> {
    let mut rng = RngStream::new(cfg.seed, RULE_STREAM).derive(input_id as u64);
    let r = choose_r(model, x, rule, &mut rng)?;
    assess(model, model_id, input_id, x, r, &cfg.estimator, margin_attack(cfg.margin_attack), cfg.seed)
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let se = if v.len() > 1 { std_dev(v) / (v.len() as f64).sqrt() } else { 0.0 };
    (mean(v), se)
}

/// A model that failed to train, kept for the failure record.
#[derive(Clone, Debug, PartialEq)]
pub struct Failure {
    pub label: String,
    pub message: String,
}

pub struct SweepOutput {
    pub tables: Vec<(String, Table)>,
    pub failures: Vec<Failure>,
}

impl SweepOutput {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.0 == name).map(|t| &t.1)
    }
}

fn report_cells(r: &RobustnessReport) -> Vec<String> {
    vec![
        cell(r.input_id),
        cell(r.r),
        cell(r.p_inside),
        cell(r.p_inside_se),
        cell(r.r_min_estimate),
        cell(r.r_min_bound),
        cell(r.margin_estimate),
        cell(r.margin_bound),
        cell(r.min_sigma),
        cell(r.jac_norm),
        cell(r.robust_at_origin),
        cell(r.outside_trust_region),
    ]
}

const REPORT_COLUMNS: [&str; 12] = [
    "input",
    "r",
    "p_inside",
    "p_inside_se",
    "r_min_estimate",
    "r_min_bound",
    "margin_estimate",
    "margin_bound",
    "min_sigma",
    "jac_norm",
    "robust_at_origin",
    "outside_trust_region",
];

fn with_prefix(prefix: &[&'static str], rest: &[&'static str]) -> Vec<&'static str> {
    prefix.iter().chain(rest).copied().collect()
}

fn train_or_record(
    cfg: &ExperimentConfig,
    data: &Tensor<f64>,
    beta: f64,
    tau: f64,
    seed: u64,
    label: String,
    failures: &mut Vec<Failure>,
) -> Result<Option<(VaeModel, TrainReport)>> {
    match train_model(cfg, data, beta, tau, seed) {
        Ok(m) => Ok(Some(m)),
        Err(e @ Error::Divergence { .. }) => {
            failures.push(Failure {
                label,
                message: e.to_string(),
            });
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

struct CurvePoint {
    budget: f64,
    p_inside: f64,
    attack_log_likelihood: f64,
    damage: f64,
}

fn attack_curve(cfg: &ExperimentConfig, model: &VaeModel, x: &Tensor<f64>, input: usize, r: f64) -> Result<Vec<CurvePoint>> {
    let stream = RngStream::new(cfg.seed, CURVE_STREAM).derive(input as u64);
    let results = budget_sweep(model, x, &cfg.attack_budgets, &cfg.attack, &stream)?;
    let mut sample = stream.derive(u64::MAX);
    results
        .iter()
        .map(|res| {
            let delta = Tensor::vector(res.delta.clone());
            let d = perturbed_delta_sample(
                model,
                x,
                &delta,
                cfg.estimator.sigma_source,
                &mut sample,
                cfg.estimator.samples,
            )?;
            let z_star = model.encode_mu(&x.add(&delta))?;
            Ok(CurvePoint {
                budget: res.budget,
                p_inside: inside_fraction(&d, r).estimate,
                attack_log_likelihood: model.log_likelihood(x, &z_star)?,
                damage: res.damage,
            })
        })
        .collect()
}

/// One model per `tau`: margins, attack curves and noise curves.
pub fn run_tau_sweep(cfg: &ExperimentConfig, data: &Tensor<f64>) -> Result<SweepOutput> {
    let inputs = select_inputs(data, cfg.inputs, cfg.seed);
    let seed = model_seed(cfg.seed, 0);
    let mut per_input = Table::new("tau_inputs", 1, &with_prefix(&["tau"], &REPORT_COLUMNS));
    let mut curves = Table::new(
        "tau_curves",
        1,
        &["tau", "input", "budget", "p_inside", "attack_log_likelihood", "damage"],
    );
    let mut noise = Table::new("tau_noise", 1, &["tau", "input", "sigma_eps", "mean_log_likelihood", "std_error"]);
    let mut summary = Table::new(
        "tau_summary",
        1,
        &[
            "tau",
            "status",
            "final_loss",
            "inputs",
            "mean_margin",
            "se_margin",
            "mean_bound",
            "se_bound",
            "mean_min_sigma",
            "mean_jac_norm",
        ],
    );
    let mut failures = Vec::new();
    for &tau in &cfg.tau {
        let Some((model, rep)) = train_or_record(cfg, data, cfg.training.beta, tau, seed, format!("tau={tau}"), &mut failures)?
        else {
            summary.push(vec![cell(tau), cell("diverged"), cell(f64::NAN), cell(0), cell(f64::NAN), cell(f64::NAN), cell(f64::NAN), cell(f64::NAN), cell(f64::NAN), cell(f64::NAN)])?;
            continue;
        };
        let id = format!("tau={tau}");
        let results: Vec<_> = inputs
            .par_iter()
            .map(|&i| {
                let x = row(data, i);
                let report = evaluate_input(cfg, &model, &id, &x, i, cfg.r_selection.tau)?;
                let curve = attack_curve(cfg, &model, &x, i, report.r)?;
                let mut nrng = RngStream::new(cfg.seed, NOISE_STREAM).derive(i as u64);
                let pts = noise_sensitivity(&model, &x, &cfg.noise_sigmas, &mut nrng, cfg.damage_samples)?;
                Ok((report, curve, pts))
            })
            .collect::<Result<Vec<_>>>()?;
        for (report, curve, pts) in &results {
            let mut c = vec![cell(tau)];
            c.extend(report_cells(report));
            per_input.push(c)?;
            for p in curve {
                curves.push(vec![
                    cell(tau),
                    cell(report.input_id),
                    cell(p.budget),
                    cell(p.p_inside),
                    cell(p.attack_log_likelihood),
                    cell(p.damage),
                ])?;
            }
            for p in pts {
                noise.push(vec![
                    cell(tau),
                    cell(report.input_id),
                    cell(p.sigma_eps),
                    cell(p.mean_log_likelihood),
                    cell(p.std_error),
                ])?;
            }
        }
        let margins: Vec<f64> = results.iter().map(|r| r.0.margin_estimate).collect();
        let bounds: Vec<f64> = results.iter().map(|r| r.0.margin_bound).collect();
        let (mm, sm) = mean_se(&margins);
        let (mb, sb) = mean_se(&bounds);
        summary.push(vec![
            cell(tau),
            cell("ok"),
            cell(rep.loss_trace.last().copied().unwrap_or(f64::NAN)),
            cell(results.len()),
            cell(mm),
            cell(sm),
            cell(mb),
            cell(sb),
            cell(mean(&results.iter().map(|r| r.0.min_sigma).collect::<Vec<_>>())),
            cell(mean(&results.iter().map(|r| r.0.jac_norm).collect::<Vec<_>>())),
        ])?;
    }
    Ok(SweepOutput {
        tables: vec![
            ("tau_inputs.csv".into(), per_input),
            ("tau_curves.csv".into(), curves),
            ("tau_noise.csv".into(), noise),
            ("tau_summary.csv".into(), summary),
        ],
        failures,
    })
}

/// One model per `beta`: encoder statistics, margins, bounds and attack
/// likelihoods.
pub fn run_beta_sweep(cfg: &ExperimentConfig, data: &Tensor<f64>) -> Result<SweepOutput> {
    let inputs = select_inputs(data, cfg.inputs, cfg.seed);
    let seed = model_seed(cfg.seed, 0);
    let tau = cfg.tau[0];
    let mut per_input = Table::new(
        "beta_inputs",
        1,
        &with_prefix(&["beta"], &[&REPORT_COLUMNS[..], &["attack_log_likelihood"]].concat()),
    );
    let mut summary = Table::new(
        "beta_summary",
        1,
        &[
            "beta",
            "status",
            "final_loss",
            "inputs",
            "mean_min_sigma",
            "se_min_sigma",
            "mean_jac_norm",
            "se_jac_norm",
            "mean_margin",
            "se_margin",
            "mean_bound",
            "se_bound",
            "mean_attack_log_likelihood",
        ],
    );
    let mut failures = Vec::new();
    for &beta in &cfg.beta {
        let Some((model, rep)) = train_or_record(cfg, data, beta, tau, seed, format!("beta={beta}"), &mut failures)? else {
            let mut r = vec![cell(beta), cell("diverged"), cell(f64::NAN), cell(0)];
            r.extend(std::iter::repeat_n(cell(f64::NAN), 9));
            summary.push(r)?;
            continue;
        };
        let id = format!("beta={beta}");
        let results: Vec<(RobustnessReport, f64)> = inputs
            .par_iter()
            .map(|&i| {
                let x = row(data, i);
                let report = evaluate_input(cfg, &model, &id, &x, i, cfg.r_selection.beta)?;
                let stream = RngStream::new(cfg.seed, CURVE_STREAM).derive(i as u64);
                let res = max_damage_attack(&model, &x, &cfg.attack, &stream)?;
                let z_star = model.encode_mu(&x.add(&Tensor::vector(res.delta)))?;
                Ok((report, model.log_likelihood(&x, &z_star)?))
            })
            .collect::<Result<Vec<_>>>()?;
        for (report, ll) in &results {
            let mut c = vec![cell(beta)];
            c.extend(report_cells(report));
            c.push(cell(ll));
            per_input.push(c)?;
        }
        let col = |f: fn(&(RobustnessReport, f64)) -> f64| results.iter().map(f).collect::<Vec<f64>>();
        let (ms, ss) = mean_se(&col(|r| r.0.min_sigma));
        let (mj, sj) = mean_se(&col(|r| r.0.jac_norm));
        let (mm, sm) = mean_se(&col(|r| r.0.margin_estimate));
        let (mb, sb) = mean_se(&col(|r| r.0.margin_bound));
        summary.push(vec![
            cell(beta),
            cell("ok"),
            cell(rep.loss_trace.last().copied().unwrap_or(f64::NAN)),
            cell(results.len()),
            cell(ms),
            cell(ss),
            cell(mj),
            cell(sj),
            cell(mm),
            cell(sm),
            cell(mb),
            cell(sb),
            cell(mean(&col(|r| r.1))),
        ])?;
    }
    Ok(SweepOutput {
        tables: vec![("beta_inputs.csv".into(), per_input), ("beta_summary.csv".into(), summary)],
        failures,
    })
}

/// Margin estimates against bounds over several separately trained models.
pub fn run_bound_correlation(cfg: &ExperimentConfig, data: &Tensor<f64>) -> Result<SweepOutput> {
    let spec = &cfg.correlation;
    if spec.models < 2 || spec.inputs < 5 {
        return Err(Error::Config("correlation needs at least 2 models and 5 inputs".into()));
    }
    let inputs = select_inputs(data, spec.inputs, cfg.seed);
    let mut points = Table::new(
        "correlation",
        1,
        &with_prefix(&["model", "tau", "beta"], &REPORT_COLUMNS),
    );
    let mut failures = Vec::new();
    let (mut est, mut bnd) = (Vec::new(), Vec::new());
    for k in 0..spec.models {
        let tau = spec.tau[k % spec.tau.len()];
        let beta = spec.beta[k % spec.beta.len()];
        let label = format!("model{k}");
        let Some((model, _)) = train_or_record(cfg, data, beta, tau, model_seed(cfg.seed, k as u64), label.clone(), &mut failures)?
        else {
            continue;
        };
        let results: Vec<RobustnessReport> = inputs
            .par_iter()
            .map(|&i| evaluate_input(cfg, &model, &label, &row(data, i), i, cfg.r_selection.correlation))
            .collect::<Result<Vec<_>>>()?;
        for r in &results {
            let mut c = vec![cell(k), cell(tau), cell(beta)];
            c.extend(report_cells(r));
            points.push(c)?;
            est.push(r.margin_estimate);
            bnd.push(r.margin_bound);
        }
    }
    let finite: Vec<(f64, f64)> = est
        .iter()
        .zip(&bnd)
        .filter(|(e, b)| e.is_finite() && b.is_finite())
        .map(|(&e, &b)| (e, b))
        .collect();
    let (fe, fb): (Vec<f64>, Vec<f64>) = finite.iter().copied().unzip();
    let rho = pearson(&fb, &fe);
    let mut summary = Table::new("correlation_summary", 1, &["points", "finite_points", "rho", "status"]);
    summary.push(vec![
        cell(est.len()),
        cell(finite.len()),
        rho.map_or_else(|| cell("undefined"), cell),
        cell(if rho.is_some() { "ok" } else { "zero variance" }),
    ])?;
    Ok(SweepOutput {
        tables: vec![("correlation.csv".into(), points), ("correlation_summary.csv".into(), summary)],
        failures,
    })
}

/// Attack every input once per target and summarise the resulting
/// reconstruction distances.
pub fn run_attack_targets(
    cfg: &ExperimentConfig,
    model: &VaeModel,
    data: &Tensor<f64>,
    targets: &[AttackTarget],
) -> Result<Table> {
    let inputs = select_inputs(data, cfg.inputs, cfg.seed);
    let mut t = Table::new(
        "attack_targets",
        1,
        &["input", "target", "budget", "objective", "median_distance", "q90_distance", "degradation"],
    );
    let rows: Vec<Vec<Vec<String>>> = inputs
        .par_iter()
        .map(|&i| {
            let x = row(data, i);
            targets
                .iter()
                .map(|&target| {
                    let c = AttackConfig { target, ..cfg.attack };
                    let stream = RngStream::new(cfg.seed, CURVE_STREAM).derive(i as u64);
                    let res = max_damage_attack(model, &x, &c, &stream)?;
                    let mut drng = RngStream::new(cfg.seed, DAMAGE_STREAM).derive(i as u64);
                    let d = damage_distribution(model, &x, &Tensor::vector(res.delta), target, &mut drng, cfg.damage_samples)?;
                    Ok(vec![
                        cell(i),
                        cell(target.name()),
                        cell(c.budget),
                        cell(res.damage),
                        cell(median(&d)),
                        cell(quantile(&d, 0.9)),
                        res.degradation.map_or_else(|| cell("undefined"), cell),
                    ])
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    for r in rows.into_iter().flatten() {
        t.push(r)?;
    }
    Ok(t)
}

/// Minimal-radius estimates with the closed-form trace radius.
pub fn run_min_r(cfg: &ExperimentConfig, model: &VaeModel, data: &Tensor<f64>) -> Result<Table> {
    let inputs = select_inputs(data, cfg.inputs, cfg.seed);
    let mut t = Table::new("min_r", 1, &["input", "r_min_estimate", "p_inside", "iterations", "r_min_bound"]);
    let rows = inputs
        .par_iter()
        .map(|&i| {
            let x = row(data, i);
            let mut rng = RngStream::new(cfg.seed, i as u64).derive(1);
            let e = estimate_min_r(model, &x, &cfg.estimator, &mut rng)?;
            Ok(vec![cell(i), cell(e.r), cell(e.p_inside.estimate), cell(e.iterations), cell(min_r_bound(model, &x)?)])
        })
        .collect::<Result<Vec<_>>>()?;
    for r in rows {
        t.push(r)?;
    }
    Ok(t)
}

/// Full robustness reports, with `r` either fixed or chosen by the default rule.
pub fn run_margin(cfg: &ExperimentConfig, model: &VaeModel, data: &Tensor<f64>, r: Option<f64>) -> Result<Table> {
    let inputs = select_inputs(data, cfg.inputs, cfg.seed);
    let rule = r.map_or(cfg.r_selection.default, |r| RRule::Fixed { r });
    let mut t = Table::new("margin", 1, &REPORT_COLUMNS);
    let rows = inputs
        .par_iter()
        .map(|&i| evaluate_input(cfg, model, "model", &row(data, i), i, rule).map(|r| report_cells(&r)))
        .collect::<Result<Vec<_>>>()?;
    for r in rows {
        t.push(r)?;
    }
    Ok(t)
}

/// Closed-form bounds only; no attacks.
pub fn run_bound(cfg: &ExperimentConfig, model: &VaeModel, data: &Tensor<f64>, r: Option<f64>) -> Result<Table> {
    let inputs = select_inputs(data, cfg.inputs, cfg.seed);
    let rule = r.map_or(cfg.r_selection.default, |r| RRule::Fixed { r });
    let mut t = Table::new(
        "bound",
        1,
        &["input", "r", "p_inside", "margin_bound", "min_sigma", "jac_norm", "trust_mismatch", "outside_trust_region", "r_min_bound"],
    );
    let rows = inputs
        .par_iter()
        .map(|&i| {
            let x = row(data, i);
            let mut rng = RngStream::new(cfg.seed, RULE_STREAM).derive(i as u64);
            let r = choose_r(model, &x, rule, &mut rng)?;
            let b = margin_bound(model, &x, r, &mut RngStream::new(cfg.seed, i as u64).derive(2), cfg.estimator.samples)?;
            Ok(vec![
                cell(i),
                cell(r),
                cell(b.p_inside.estimate),
                cell(b.bound),
                cell(b.min_sigma),
                cell(b.jac_norm),
                cell(b.trust_mismatch),
                cell(b.outside_trust_region),
                cell(min_r_bound(model, &x)?),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    for r in rows {
        t.push(r)?;
    }
    Ok(t)
}
