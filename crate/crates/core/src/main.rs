use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mvskill_core::gradsuite::{run_suite, Suite};
use mvskill_core::harness::{self, RunConfig};
use mvskill_core::sampler::{pats_plan, uniform_plan, SamplerConfig};
use mvskill_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "mvskill", version, about = "Multi-view proficiency estimation at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the frame plan for one video as JSON.
    Sample {
        #[arg(long)]
        video_length: usize,
        #[arg(long)]
        n_target: usize,
        #[arg(long, default_value_t = 1)]
        n_segments: usize,
        #[arg(long = "d-s", default_value_t = 1)]
        d_s: usize,
        /// Evenly spaced frames instead of segment sampling.
        #[arg(long)]
        uniform: bool,
    },
    /// Train the discriminative classifier on synthetic data.
    TrainCls(ConfigArgs),
    /// Train the generative feedback model on synthetic data.
    TrainGen(ConfigArgs),
    /// Score a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the config stored in the checkpoint.
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the finite-difference gradient suites.
    Gradcheck {
        #[arg(long, default_value = "all")]
        module: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the full per-instance report as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON config file; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one field, e.g. `--set data.noise_std=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self, base: RunConfig) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => base,
        };
        let cfg = cfg.with_overrides(&self.overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample {
            video_length,
            n_target,
            n_segments,
            d_s,
            uniform,
        } => {
            let plan = if uniform {
                uniform_plan(video_length, n_target)?
            } else {
                pats_plan(video_length, &SamplerConfig::new(n_target, n_segments, d_s)?)?
            };
            println!("{}", plan.to_json());
        }
        Command::TrainCls(args) => {
            let cfg = args.resolve(RunConfig::default())?;
            let (run, out) = harness::run_classifier(&cfg)?;
            let r = &run.report;
            println!(
                "test top1 {:.4} (best epoch {}, val top1 {:.4})",
                r.test.top1, r.best_epoch, r.best_val_top1
            );
            println!("checkpoint {}", out.checkpoint.display());
            println!("report {}", out.report.display());
        }
        Command::TrainGen(args) => {
            let cfg = args.resolve(RunConfig::default())?;
            let (run, out) = harness::run_generative(&cfg)?;
            let t = &run.report.test;
            println!(
                "test top1 {:.4}, parse rate {:.4}, rouge-l {:.4} (best epoch {})",
                t.top1,
                t.parse_success_rate.unwrap_or(0.0),
                t.rouge_l.unwrap_or(0.0),
                run.report.best_epoch
            );
            println!("checkpoint {}", out.checkpoint.display());
            println!("report {}", out.report.display());
        }
        Command::Eval { checkpoint, config } => {
            let base = harness::load_snapshot(&checkpoint)?.config;
            let cfg = config.resolve(base)?;
            let (_, report) = harness::evaluate_checkpoint(&checkpoint, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Gradcheck { module, seed, json } => {
            let suite: Suite = module.parse()?;
            let report = run_suite(suite, seed)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                let mut worst: Vec<(&str, f64, f64)> = Vec::new();
                for c in &report.cases {
                    match worst.iter_mut().find(|w| w.0 == c.case) {
                        Some(w) => {
                            w.1 = w.1.max(c.max_resolved_error);
                            w.2 = w.2.max(c.max_relative_error);
                        }
                        None => worst.push((&c.case, c.max_resolved_error, c.max_relative_error)),
                    }
                }
                println!("{:<28} {:>12} {:>12}", "case", "resolved", "relative");
                for (case, resolved, relative) in worst {
                    println!("{case:<28} {resolved:>12.3e} {relative:>12.3e}");
                }
                println!(
                    "suite {}: {} instances, {} components",
                    report.suite, report.instances, report.components_checked
                );
                println!(
                    "max resolved error {:.3e} ({}), max relative error {:.3e}, tolerance {:.0e}",
                    report.max_resolved_error, report.worst_case, report.max_relative_error, report.tolerance
                );
            }
            if !report.passed() {
                return Err(Error::Numeric(format!(
                    "gradcheck failed: max resolved error {:.3e} in {}",
                    report.max_resolved_error, report.worst_case
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
