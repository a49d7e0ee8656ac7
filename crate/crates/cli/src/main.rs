//! `vaerobust` command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use vaerobust::attacks::AttackTarget;
use vaerobust::vae::{Checkpoint, TrainConfig, VaeModel};
use vaerobust::{Error, Result};
use vaerobust_cli::config::{template, ExperimentConfig, Profile};
use vaerobust_cli::data::ingest;
use vaerobust_cli::experiments::{
    model_seed, run_attack_targets, run_beta_sweep, run_bound, run_bound_correlation, run_margin, run_min_r,
    run_tau_sweep, train_model, SweepOutput,
};
use vaerobust_cli::manifest::RunManifest;
use vaerobust_cli::plot::figures_for;
use vaerobust_cli::table::{cell, Table};
use vaerobust_cli::verify::verify_oracles;
use vaerobust_cli::exit_code;

#[derive(Parser)]
#[command(name = "vaerobust", version, about = "Robustness margins, bounds and attacks for VAEs")]
struct Cli {
    /// Experiment configuration (TOML); profile defaults fill missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    /// Output directory; defaults to the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TargetArg {
    MuOnly,
    SigmaOnly,
    Both,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its checkpoint.
    Train {
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Maximum-damage attacks on the selected inputs.
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = TargetArg::All)]
        target: TargetArg,
        #[arg(long)]
        budget: Option<f64>,
    },
    /// Smallest radius r at which each input is r-robust.
    MinR {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Estimated input-space margins with bounds.
    Margin {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        r: Option<f64>,
    },
    /// Closed-form margin bounds and trace radii.
    Bound {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        r: Option<f64>,
    },
    /// One model per encoder std offset.
    SweepTau,
    /// One model per KL weight.
    SweepBeta,
    /// Margin estimates against bounds over several models.
    Correlate,
    /// SVG figures for result tables.
    Plot { csv: Vec<PathBuf> },
    /// Checks estimators and attacks against closed-form references.
    VerifyOracles,
    /// Prints an annotated configuration file.
    Template,
}

struct Run {
    cfg: ExperimentConfig,
    config_text: String,
    out: PathBuf,
    format: Format,
    manifest: RunManifest,
}

impl Run {
    fn open(cli: &Cli, command: &str) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(p) => ExperimentConfig::load(p, cli.profile)?,
            None => ExperimentConfig::for_profile(cli.profile.unwrap_or(Profile::Desk)),
        };
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
        std::fs::create_dir_all(&out)?;
        let config_text = cfg.to_toml()?;
        let manifest = match RunManifest::load(&out) {
            Ok(mut m) => {
                m.command = command.to_string();
                m.config_hash = vaerobust_cli::manifest::blob_hash(config_text.as_bytes());
                m.seed = cfg.seed;
                m.timing.clear();
                m
            }
            Err(_) => RunManifest::new(command, &config_text, cfg.seed),
        };
        let mut run = Self {
            cfg,
            config_text,
            out,
            format: cli.format,
            manifest,
        };
        let text = run.config_text.clone();
        run.write("config.toml", text.as_bytes())?;
        Ok(run)
    }

    fn write(&mut self, name: &str, content: &[u8]) -> Result<()> {
        self.manifest.write_artifact(&self.out, name, content)
    }

    fn emit(&mut self, name: &str, table: &Table, plots: bool) -> Result<()> {
        match self.format {
            Format::Csv => self.write(name, table.to_csv_string()?.as_bytes())?,
            Format::Json => {
                let json = table_json(table)?;
                self.write(&name.replace(".csv", ".json"), json.as_bytes())?
            }
        }
        if plots {
            for (file, svg) in figures_for(table)? {
                self.write(&file, svg.as_bytes())?;
            }
        }
        Ok(())
    }

    fn emit_sweep(&mut self, out: &SweepOutput) -> Result<()> {
        for (name, t) in &out.tables {
            let plots = figures_for(t).is_ok();
            self.emit(name, t, plots)?;
        }
        if !out.failures.is_empty() {
            let mut f = Table::new("failures", 1, &["model", "message"]);
            for x in &out.failures {
                f.push(vec![cell(&x.label), cell(&x.message)])?;
            }
            self.emit("failures.csv", &f, false)?;
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        self.manifest.save(&self.out)
    }

    fn data(&mut self) -> Result<vaerobust::Tensor64> {
        let t = Instant::now();
        let d = ingest(&self.cfg.dataset)?;
        self.manifest.time("ingest", t.elapsed().as_secs_f64());
        Ok(d)
    }
}

/// Rows as JSON objects; numeric and boolean cells keep their type.
fn table_json(t: &Table) -> Result<String> {
    let rows: Vec<serde_json::Map<String, serde_json::Value>> = t
        .rows
        .iter()
        .map(|r| {
            t.columns
                .iter()
                .zip(r)
                .map(|(c, v)| {
                    let value = if let Ok(b) = v.parse::<bool>() {
                        serde_json::Value::Bool(b)
                    } else if let Some(n) = v.parse::<f64>().ok().and_then(serde_json::Number::from_f64) {
                        serde_json::Value::Number(n)
                    } else {
                        serde_json::Value::String(v.clone())
                    };
                    (c.clone(), value)
                })
                .collect()
        })
        .collect();
    let doc = serde_json::json!({ "schema": format!("{}/{}", t.schema, t.version), "rows": rows });
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

fn load_model(path: &Path) -> Result<VaeModel> {
    Checkpoint::load(path)?.to_model()
}

fn run(cli: &Cli) -> Result<i32> {
    let name = match &cli.command {
        Command::Train { .. } => "train",
        Command::Attack { .. } => "attack",
        Command::MinR { .. } => "min-r",
        Command::Margin { .. } => "margin",
        Command::Bound { .. } => "bound",
        Command::SweepTau => "sweep-tau",
        Command::SweepBeta => "sweep-beta",
        Command::Correlate => "correlate",
        Command::Plot { .. } => "plot",
        Command::VerifyOracles => "verify-oracles",
        Command::Template => {
            print!("{}", template(cli.profile.unwrap_or(Profile::Desk)));
            return Ok(0);
        }
    };
    let mut run = Run::open(cli, name)?;
    let start = Instant::now();
    let mut code = 0;
    match &cli.command {
        Command::Train { beta, tau } => {
            let data = run.data()?;
            let beta = beta.unwrap_or(run.cfg.training.beta);
            let tau = tau.unwrap_or(run.cfg.tau[0]);
            let seed = model_seed(run.cfg.seed, 0);
            let (model, report) = train_model(&run.cfg, &data, beta, tau, seed)?;
            let tc = TrainConfig {
                beta,
                seed,
                ..run.cfg.training
            };
            let ckpt = Checkpoint::from_model(&model, Some(&tc)).to_json()?;
            run.write("model.json", ckpt.as_bytes())?;
            let mut t = Table::new("train_loss", 1, &["epoch", "loss"]);
            for (e, l) in report.loss_trace.iter().enumerate() {
                t.push(vec![cell(e), cell(l)])?;
            }
            run.emit("train_loss.csv", &t, false)?;
        }
        Command::Attack {
            checkpoint,
            target,
            budget,
        } => {
            let model = load_model(checkpoint)?;
            let data = run.data()?;
            if let Some(b) = budget {
                run.cfg.attack.budget = *b;
                run.cfg.attack.validate()?;
            }
            let targets: Vec<AttackTarget> = match target {
                TargetArg::MuOnly => vec![AttackTarget::MuOnly],
                TargetArg::SigmaOnly => vec![AttackTarget::SigmaOnly],
                TargetArg::Both => vec![AttackTarget::Both],
                TargetArg::All => AttackTarget::ALL.to_vec(),
            };
            let t = run_attack_targets(&run.cfg, &model, &data, &targets)?;
            run.emit("attack_targets.csv", &t, true)?;
        }
        Command::MinR { checkpoint } => {
            let model = load_model(checkpoint)?;
            let data = run.data()?;
            let t = run_min_r(&run.cfg, &model, &data)?;
            run.emit("min_r.csv", &t, false)?;
        }
        Command::Margin { checkpoint, r } => {
            let model = load_model(checkpoint)?;
            let data = run.data()?;
            let t = run_margin(&run.cfg, &model, &data, *r)?;
            run.emit("margin.csv", &t, false)?;
        }
        Command::Bound { checkpoint, r } => {
            let model = load_model(checkpoint)?;
            let data = run.data()?;
            let t = run_bound(&run.cfg, &model, &data, *r)?;
            run.emit("bound.csv", &t, false)?;
        }
        Command::SweepTau | Command::SweepBeta | Command::Correlate => {
            let data = run.data()?;
            let out = match &cli.command {
                Command::SweepTau => run_tau_sweep(&run.cfg, &data)?,
                Command::SweepBeta => run_beta_sweep(&run.cfg, &data)?,
                _ => run_bound_correlation(&run.cfg, &data)?,
            };
            run.emit_sweep(&out)?;
            if !out.failures.is_empty() {
                for f in &out.failures {
                    eprintln!("{}: {}", f.label, f.message);
                }
                code = 4;
            }
        }
        Command::Plot { csv } => {
            if csv.is_empty() {
                return Err(Error::Config("plot needs at least one CSV file".into()));
            }
            for p in csv {
                let table = Table::read(p)?;
                for (file, svg) in figures_for(&table)? {
                    run.write(&file, svg.as_bytes())?;
                }
            }
        }
        Command::VerifyOracles => {
            let (t, failed) = verify_oracles(run.cfg.seed)?;
            for r in &t.rows {
                println!("{:<40} {}", r[0], if r[4] == "true" { "ok" } else { "FAILED" });
            }
            run.emit("oracles.csv", &t, false)?;
            if failed > 0 {
                eprintln!("{failed} oracle checks failed");
                code = 1;
            }
        }
        Command::Template => unreachable!(),
    }
    run.manifest.time(name, start.elapsed().as_secs_f64());
    run.finish()?;
    eprintln!("wrote {}", run.out.display());
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
