//! `nptraj`: generate data, train, evaluate, export predictions and check
//! gradients for the neural-process trajectory models.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nptraj_core::autodiff::Fault;
use nptraj_core::data::synth::{synth_lane_change_records, synth_sine_family, LaneChangeParams};
use nptraj_core::data::{load_episodes, write_csv, write_series_csv, Episode};
use nptraj_core::gradcheck::TOLERANCE;
use nptraj_core::gradcheck_suite::run_suite;
use nptraj_core::train_eval::{
    evaluate, save_trace, train, write_predictions, ConstantVelocity, EvalConfig, ModelBundle, OracleStub, Predictor,
};

#[derive(Parser, Debug)]
#[command(name = "nptraj", version, about = "Neural-process models for vehicle trajectory prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum DataKind {
    /// Sine regression tasks, written as a series CSV
    Sine,
    /// Simulated lane changes, written as a trajectory CSV
    Lanechange,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset as CSV
    GenData {
        #[arg(long, value_enum)]
        kind: DataKind,
        #[arg(long)]
        out: PathBuf,
        /// Generator seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of episodes
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Points per sine episode
        #[arg(long, default_value_t = 20)]
        points: usize,
        /// Lane-change episode length in seconds
        #[arg(long, default_value_t = 8.0)]
        duration: f64,
        /// Lane width in meters
        #[arg(long, default_value_t = 3.7)]
        lane_width: f64,
        /// Std of the observation noise in meters
        #[arg(long, default_value_t = 0.1)]
        noise_std: f64,
    },
    /// Train a model from a key = value config file
    #[command(after_help = config::keys_help())]
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a model on a dataset and print the metrics report as JSON
    Eval {
        /// Trained model file (not needed with a baseline flag)
        #[arg(long, required_unless_present_any = ["oracle_stub", "constant_velocity"])]
        model: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated prediction horizons in seconds
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        horizons: Vec<f64>,
        /// Where to write the metrics report
        #[arg(long, default_value = "metrics.json")]
        out: PathBuf,
        /// Predict the ground truth instead of using a model
        #[arg(long, conflicts_with = "constant_velocity")]
        oracle_stub: bool,
        /// Use the constant-velocity baseline instead of a model
        #[arg(long)]
        constant_velocity: bool,
    },
    /// Export per-step predictions for one episode as CSV
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        episode_id: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with central differences
    Gradcheck {
        /// Base seed for the checked inputs
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Seeds per check
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        /// Corrupt the tanh derivative to exercise the failure path
        #[arg(long, hide = true)]
        corrupt_tanh: bool,
    },
}

#[derive(clap::Args, Debug)]
struct DataArgs {
    /// Trajectory or series CSV
    #[arg(long)]
    data: PathBuf,
    /// Window length for trajectory data [default: the model's, else 20]
    #[arg(long)]
    window: Option<usize>,
    /// Seconds of observed context at the start of each episode
    #[arg(long, default_value_t = 2.0)]
    context_seconds: f64,
    /// Latent samples per prediction
    #[arg(long, default_value_t = 16)]
    samples: usize,
    /// Seed for latent sampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData {
            kind,
            out,
            seed,
            count,
            points,
            duration,
            lane_width,
            noise_std,
        } => {
            let mut buf = Vec::new();
            match kind {
                DataKind::Sine => write_series_csv(&mut buf, &synth_sine_family(count, points, seed)?)?,
                DataKind::Lanechange => {
                    let params = LaneChangeParams {
                        lane_width,
                        duration,
                        noise_std,
                        ..LaneChangeParams::default()
                    };
                    write_csv(&mut buf, &synth_lane_change_records(count, seed, &params)?)?;
                }
            }
            write_file(&out, &buf)?;
            println!("wrote {count} episodes to {}", out.display());
        }
        Command::Train { config } => {
            let config = config::load(&config)?;
            let outcome = train(&config.train)?;
            outcome
                .bundle
                .save(&config.model_out)
                .with_context(|| format!("cannot write model `{}`", config.model_out.display()))?;
            save_trace(&config.trace_out, &outcome.trace)
                .with_context(|| format!("cannot write trace `{}`", config.trace_out.display()))?;
            let last = outcome.trace.last().expect("training runs at least one step");
            println!(
                "trained {} for {} steps: final loss {:.6} (recon {:.6}, kl {:.6})",
                config.train.kind,
                outcome.trace.len(),
                last.loss,
                last.recon_nll,
                last.kl
            );
        }
        Command::Eval {
            model,
            data,
            horizons,
            out,
            oracle_stub,
            constant_velocity,
        } => {
            let bundle = if oracle_stub || constant_velocity {
                None
            } else {
                Some(load_model(model.as_deref().expect("clap requires --model here"))?)
            };
            let predictor: &dyn Predictor = match &bundle {
                Some(b) => b,
                None if oracle_stub => &OracleStub,
                None => &ConstantVelocity,
            };
            let episodes = load_data(&data, bundle.as_ref())?;
            let config = EvalConfig {
                context_seconds: data.context_seconds,
                horizons,
                n_samples: data.samples,
                seed: data.seed,
            };
            let report = evaluate(predictor, &episodes, &config)?.report_json();
            write_file(&out, report.as_bytes())?;
            print!("{report}");
        }
        Command::Predict {
            model,
            data,
            episode_id,
            out,
        } => {
            let bundle = load_model(&model)?;
            let episodes = load_data(&data, Some(&bundle))?;
            let ep = episodes.iter().find(|e| e.episode_id == episode_id).ok_or_else(|| {
                let ids: Vec<String> = episodes.iter().map(|e| e.episode_id.to_string()).collect();
                anyhow!("episode {episode_id} not found; available ids: {}", ids.join(", "))
            })?;
            let mut buf = Vec::new();
            write_predictions(&mut buf, &bundle, ep, data.context_seconds, data.samples, data.seed)?;
            write_file(&out, &buf)?;
            println!("wrote {} prediction rows to {}", ep.len(), out.display());
        }
        Command::Gradcheck {
            seed,
            seeds,
            corrupt_tanh,
        } => {
            if seeds == 0 {
                bail!("--seeds must be at least 1");
            }
            let fault = corrupt_tanh.then_some(Fault::TanhDerivative);
            let lines = run_suite(seed, seeds, fault)?;
            let failed = lines.iter().filter(|l| !l.passed()).count();
            for l in &lines {
                println!(
                    "{} {:<28} max rel error {:.3e} over {} gradients",
                    if l.passed() { "PASS" } else { "FAIL" },
                    l.name,
                    l.max_rel_error,
                    l.checked
                );
            }
            println!(
                "{} of {} checks passed (tolerance {TOLERANCE:e}, {seeds} seeds)",
                lines.len() - failed,
                lines.len()
            );
            if failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("cannot write `{}`", path.display()))
}

fn load_model(path: &Path) -> Result<ModelBundle> {
    ModelBundle::load(path).with_context(|| format!("cannot load model `{}`", path.display()))
}

fn load_data(args: &DataArgs, bundle: Option<&ModelBundle>) -> Result<Vec<Episode>> {
    let window = args.window.or(bundle.map(|b| b.model.dims.window)).unwrap_or(20);
    let episodes =
        load_episodes(&args.data, window).with_context(|| format!("cannot load data `{}`", args.data.display()))?;
    if episodes.is_empty() {
        bail!("`{}` holds no usable episodes", args.data.display());
    }
    Ok(episodes)
}
