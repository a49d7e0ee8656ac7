//! Experiment configuration: a TOML tree layered over a named profile.
//!
//! Loading starts from the defaults of the chosen profile and overlays the
//! file. Tables are merged key by key, except that a tagged table (one with
//! `kind`, `rule` or `family`) whose tag changes replaces the default whole.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vaerobust::attacks::AttackConfig;
use vaerobust::robustness::EstimatorConfig;
use vaerobust::vae::{Activation, Architecture, Likelihood, TrainConfig};
use vaerobust::{Error, Result};

use crate::data::{DatasetSpec, Generator};

/// Attack budget used on 784-pixel images.
pub const IMAGE_BUDGET: f64 = 10.0;
/// Fixed reconstruction radius used for the tau experiment on 784-pixel images.
pub const IMAGE_RADIUS: f64 = 4.0;
/// `sqrt(16 / 784)`: rescales image-space distances to the 16-pixel desk
/// benchmark, whose pixels share the `[0, 1]` range.
pub const DESK_SCALE: f64 = 0.142_857_142_857_142_85;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Small synthetic runs that finish in minutes on a laptop.
    Desk,
    /// Network sizes and training schedule of the published image experiments.
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub latent_dim: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub likelihood: Likelihood,
}

impl ModelSpec {
    pub fn architecture(&self, data_dim: usize) -> Architecture {
        Architecture {
            data_dim,
            latent_dim: self.latent_dim,
            hidden: self.hidden,
            hidden_layers: self.hidden_layers,
            activation: self.activation,
        }
    }
}

/// How the reconstruction radius `r` is chosen for each (model, input).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum RRule {
    Fixed { r: f64 },
    /// Smallest `r` whose empirical inside-probability reaches `p`.
    InsideProbability { p: f64, samples: usize },
}

impl RRule {
    fn validate(&self, what: &str) -> Result<()> {
        let ok = match *self {
            RRule::Fixed { r } => r > 0.0 && r.is_finite(),
            RRule::InsideProbability { p, samples } => p > 0.0 && p < 1.0 && samples > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid r rule for {what}: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RSelection {
    /// Used by the single-model commands.
    pub default: RRule,
    pub tau: RRule,
    pub beta: RRule,
    pub correlation: RRule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationSpec {
    pub models: usize,
    pub inputs: usize,
    /// Model `k` is trained with `tau[k % len]` and `beta[k % len]`.
    pub tau: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub training: TrainConfig,
    pub beta: Vec<f64>,
    pub tau: Vec<f64>,
    /// Inputs evaluated per model in the sweeps and single-model commands.
    pub inputs: usize,
    pub attack_budgets: Vec<f64>,
    pub noise_sigmas: Vec<f64>,
    /// Reconstruction draws behind each reported distance distribution.
    pub damage_samples: usize,
    pub estimator: EstimatorConfig,
    /// Attack used by the `attack` command and the sweep curves.
    pub attack: AttackConfig,
    /// Cheaper attack run at every margin candidate.
    pub margin_attack: AttackConfig,
    pub r_selection: RSelection,
    pub correlation: CorrelationSpec,
}

impl ExperimentConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let desk = profile == Profile::Desk;
        Self {
            profile,
            seed: 0,
            output_dir: PathBuf::from("runs"),
            dataset: DatasetSpec::Synthetic {
                generator: Generator::Bars,
                n: 2000,
                dim: 16,
                seed: 0,
            },
            model: ModelSpec {
                latent_dim: if desk { 8 } else { 20 },
                hidden: if desk { 64 } else { 400 },
                hidden_layers: 2,
                activation: Activation::Relu,
                likelihood: Likelihood::Bernoulli,
            },
            training: TrainConfig {
                learning_rate: 0.001,
                batch_size: if desk { 64 } else { 512 },
                epochs: if desk { 20 } else { 100 },
                ..TrainConfig::default()
            },
            beta: if desk { vec![0.1, 1.0, 10.0] } else { vec![0.1, 0.5, 1.0, 5.0, 10.0] },
            tau: vec![0.0, 0.1, 0.5, 1.0],
            inputs: 25,
            attack_budgets: vec![0.0, 0.25, 0.5, 1.0, 2.0],
            noise_sigmas: vec![0.0, 0.1, 0.25, 0.5],
            damage_samples: if desk { 2000 } else { 10_000 },
            estimator: EstimatorConfig {
                samples: if desk { 2000 } else { 10_000 },
                restarts: if desk { 3 } else { 5 },
                initial_margin: if desk { 4.0 } else { 10.0 },
                ..EstimatorConfig::default()
            },
            attack: AttackConfig {
                budget: if desk { IMAGE_BUDGET * DESK_SCALE } else { IMAGE_BUDGET },
                steps: if desk { 30 } else { 50 },
                restarts: if desk { 3 } else { 5 },
                ..AttackConfig::default()
            },
            margin_attack: AttackConfig {
                steps: if desk { 15 } else { 50 },
                restarts: if desk { 2 } else { 5 },
                n_eval: if desk { 128 } else { 256 },
                ..AttackConfig::default()
            },
            r_selection: RSelection {
                default: RRule::InsideProbability { p: 0.9, samples: 4000 },
                tau: RRule::Fixed {
                    r: if desk { IMAGE_RADIUS * DESK_SCALE } else { IMAGE_RADIUS },
                },
                beta: RRule::InsideProbability { p: 0.9, samples: 4000 },
                correlation: RRule::InsideProbability { p: 0.9, samples: 4000 },
            },
            correlation: CorrelationSpec {
                models: 5,
                inputs: 25,
                tau: vec![0.0],
                beta: vec![1.0],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lists: [(&str, &[f64]); 6] = [
            ("beta", &self.beta),
            ("tau", &self.tau),
            ("attack_budgets", &self.attack_budgets),
            ("noise_sigmas", &self.noise_sigmas),
            ("correlation.tau", &self.correlation.tau),
            ("correlation.beta", &self.correlation.beta),
        ];
        for (name, l) in lists {
            if l.is_empty() {
                return Err(Error::Config(format!("{name} must not be empty")));
            }
            if l.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Config(format!("{name} entries must be finite and non-negative")));
            }
        }
        if self.beta.iter().chain(&self.correlation.beta).any(|&b| b <= 0.0) {
            return Err(Error::Config("beta entries must be positive".into()));
        }
        if self.attack_budgets.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("attack_budgets must be non-decreasing".into()));
        }
        if self.inputs == 0 || self.damage_samples == 0 || self.correlation.models == 0 || self.correlation.inputs == 0 {
            return Err(Error::Config("inputs, damage_samples and correlation sizes must be at least 1".into()));
        }
        if self.model.latent_dim == 0 || self.model.hidden == 0 {
            return Err(Error::Config("model widths must be at least 1".into()));
        }
        self.training.validate()?;
        self.estimator.validate()?;
        self.attack.validate()?;
        self.margin_attack.validate()?;
        self.r_selection.default.validate("default")?;
        self.r_selection.tau.validate("tau")?;
        self.r_selection.beta.validate("beta")?;
        self.r_selection.correlation.validate("correlation")?;
        Ok(())
    }

    /// Parses `text` over the defaults of `profile`, or of the file's own
    /// `profile` key when no override is given.
    pub fn from_toml(text: &str, profile: Option<Profile>) -> Result<Self> {
        let file: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let profile = match profile {
            Some(p) => p,
            None => match file.get("profile") {
                Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
                None => Profile::Desk,
            },
        };
        let mut base = toml::Table::try_from(Self::for_profile(profile)).map_err(|e| Error::Config(e.to_string()))?;
        overlay(&mut base, file);
        base.insert("profile".into(), toml::Value::try_from(profile).map_err(|e| Error::Config(e.to_string()))?);
        let cfg: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, profile: Option<Profile>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, profile)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

const TAGS: [&str; 3] = ["kind", "rule", "family"];

fn overlay(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                let retagged = TAGS.iter().any(|t| o.get(*t).is_some_and(|ov| b.get(*t) != Some(ov)));
                if retagged {
                    *b = o;
                } else {
                    overlay(b, o);
                }
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Annotated configuration file for `profile`; it parses back to the
/// profile's defaults.
pub fn template(profile: Profile) -> String {
    let c = ExperimentConfig::for_profile(profile);
    let list = |v: &[f64]| format!("[{}]", v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", "));
    let rule = |r: RRule| match r {
        RRule::Fixed { r } => format!("{{ rule = \"fixed\", r = {r:?} }}"),
        RRule::InsideProbability { p, samples } => {
            format!("{{ rule = \"inside_probability\", p = {p:?}, samples = {samples} }}")
        }
    };
    let name = match profile {
        Profile::Desk => "desk",
        Profile::Paper => "paper",
    };
    let (generator, n, dim, dseed) = match &c.dataset {
        DatasetSpec::Synthetic { generator, n, dim, seed } => (generator.name(), *n, *dim, *seed),
        DatasetSpec::Idx { .. } => unreachable!("profiles default to synthetic data"),
    };
    format!(
        r#"# Experiment configuration ({name} profile).
# Every key is optional; omitted keys take the profile default shown here.

profile = "{name}"
# Seeds are explicit; nothing is derived from the clock.
seed = {seed}
output_dir = {out:?}
# KL weights; the published beta experiment used [0.1, 0.5, 1, 5, 10].
beta = {beta}
# Encoder std offsets; the published tau experiment used [0, 0.1, 0.5, 1].
tau = {tau}
inputs = {inputs}
attack_budgets = {budgets}
# Input noise levels for the noise-sensitivity curves.
noise_sigmas = {noise}
damage_samples = {damage}

[dataset]
# kind = "synthetic" with generator in gaussian-blobs | two-moons | bars,
# or kind = "idx" with path = "images-idx3-ubyte" and optional limit.
kind = "synthetic"
generator = "{generator}"
n = {n}
dim = {dim}
seed = {dseed}

[model]
# The published image models used 400 hidden units and 20 latent dimensions.
latent_dim = {latent}
hidden = {hidden}
hidden_layers = {layers}
activation = "relu"
likelihood = {{ family = "bernoulli" }}

[training]
# Published schedule: Adam, learning rate 0.001, batch 512, 100 epochs.
beta = {tbeta:?}
learning_rate = {lr:?}
batch_size = {batch}
epochs = {epochs}
seed = {tseed}

[estimator]
# Robustness threshold m = 0.5 and grid step 0.05 follow the published algorithms.
m = {m:?}
step = {step:?}
samples = {samples}
restarts = {restarts}
initial_margin = {im:?}
r_cap = {cap:?}
sigma_source = "perturbed"
bisection_steps = 0

[attack]
# Budget 10 on 784-pixel images, scaled by sqrt(d / 784) on smaller data.
budget = {ab:?}
steps = {asteps}
restarts = {arest}
n_mc = {amc}
n_eval = {aeval}
target = "both"
single_sample = false

[margin_attack]
budget = {mb:?}
steps = {msteps}
restarts = {mrest}
n_mc = {mmc}
n_eval = {meval}
target = "both"
single_sample = false

[r_selection]
default = {rdef}
# The published tau experiment fixed r = 4 on 784-pixel images; the desk
# profile scales it by sqrt(16 / 784).
tau = {rtau}
# The published bound distributions pick r so that the inside-probability is 0.9.
beta = {rbeta}
correlation = {rcorr}

[correlation]
# The published correlation plots used 5 networks and 25 inputs.
models = {cm}
inputs = {ci}
tau = {ctau}
beta = {cbeta}
"#,
        seed = c.seed,
        out = c.output_dir.display().to_string(),
        beta = list(&c.beta),
        tau = list(&c.tau),
        inputs = c.inputs,
        budgets = list(&c.attack_budgets),
        noise = list(&c.noise_sigmas),
        damage = c.damage_samples,
        latent = c.model.latent_dim,
        hidden = c.model.hidden,
        layers = c.model.hidden_layers,
        tbeta = c.training.beta,
        lr = c.training.learning_rate,
        batch = c.training.batch_size,
        epochs = c.training.epochs,
        tseed = c.training.seed,
        m = c.estimator.m,
        step = c.estimator.step,
        samples = c.estimator.samples,
        restarts = c.estimator.restarts,
        im = c.estimator.initial_margin,
        cap = c.estimator.r_cap,
        ab = c.attack.budget,
        asteps = c.attack.steps,
        arest = c.attack.restarts,
        amc = c.attack.n_mc,
        aeval = c.attack.n_eval,
        mb = c.margin_attack.budget,
        msteps = c.margin_attack.steps,
        mrest = c.margin_attack.restarts,
        mmc = c.margin_attack.n_mc,
        meval = c.margin_attack.n_eval,
        rdef = rule(c.r_selection.default),
        rtau = rule(c.r_selection.tau),
        rbeta = rule(c.r_selection.beta),
        rcorr = rule(c.r_selection.correlation),
        cm = c.correlation.models,
        ci = c.correlation.inputs,
        ctau = list(&c.correlation.tau),
        cbeta = list(&c.correlation.beta),
    )
}
