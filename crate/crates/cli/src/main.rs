use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{ArgAction, Parser, Subcommand};
use voxtrace::manipulate::Manipulation;
use voxtrace::metrics::{EvalReport, REPORT_HEADER};
use voxtrace::pipeline::{ExperimentConfig, Pipeline, StageOutcome};

const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

/// Fake-voice detection from neuron activation behaviors of a speaker network.
#[derive(Parser)]
#[command(name = "voxtrace", version)]
struct Cli {
    /// Experiment config (TOML); the bundled default is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for extraction and sweeps (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the labeled corpus and its manifest.
    GenData,
    /// Train the speaker network on real training clips.
    TrainBackbone,
    /// Compute per-layer activation thresholds from training clips.
    Calibrate,
    /// Write activation traces and coverage features for every clip.
    Extract,
    /// Train one detector per configured criterion.
    TrainDetector,
    /// Score the test split, optionally after a manipulation.
    Eval {
        /// `resample:<hz>`, `speed:<rate>`, `pitch:<steps>` or `noise:<id>@<db>`.
        #[arg(long)]
        manipulation: Option<Manipulation>,
    },
    /// Evaluate the frozen models under the full manipulation grid.
    Sweep,
    /// Write labeled trace and feature tables for external tools.
    ExportFeatures,
    /// Every stage from corpus generation to evaluation.
    Run,
    /// Print the bundled default config.
    DefaultConfig,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::from_toml(DEFAULT_CONFIG, "<bundled default.toml>".as_ref())?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn print_outcome(p: &Pipeline, o: &StageOutcome) {
    for path in &o.outputs {
        log::debug!("{}: {}", o.stage, p.paths.display(path));
    }
    println!("{}: ok ({} artifact(s) in {})", o.stage, o.outputs.len(), p.paths.root.display());
}

fn print_reports(reports: &[EvalReport]) {
    println!("{REPORT_HEADER}");
    for r in reports {
        println!("{}", r.csv_row());
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Command::DefaultConfig = cli.command {
        print!("{DEFAULT_CONFIG}");
        return Ok(ExitCode::SUCCESS);
    }
    let cfg = load_config(&cli)?;
    let p = Pipeline::new(cfg, cli.jobs)?;
    match &cli.command {
        Command::GenData => print_outcome(&p, &p.gen_data()?),
        Command::TrainBackbone => print_outcome(&p, &p.train_backbone()?),
        Command::Calibrate => print_outcome(&p, &p.calibrate()?),
        Command::Extract => print_outcome(&p, &p.extract()?),
        Command::TrainDetector => print_outcome(&p, &p.train_detector()?),
        Command::Eval { manipulation } => {
            let (reports, o) = p.eval(manipulation.as_ref())?;
            print_reports(&reports);
            print_outcome(&p, &o);
        }
        Command::Sweep => {
            let s = p.sweep()?;
            print_outcome(&p, &s.stage);
            if s.failed() > 0 {
                eprintln!("sweep: {} of {} cells failed; see sweep/sweep.csv", s.failed(), s.cells.len());
                return Ok(ExitCode::from(2));
            }
        }
        Command::ExportFeatures => print_outcome(&p, &p.export_features()?),
        Command::Run => {
            let stages: [fn(&Pipeline) -> voxtrace::Result<StageOutcome>; 5] = [
                Pipeline::gen_data,
                Pipeline::train_backbone,
                Pipeline::calibrate,
                Pipeline::extract,
                Pipeline::train_detector,
            ];
            for stage in stages {
                print_outcome(&p, &stage(&p)?);
            }
            let (reports, o) = p.eval(None)?;
            print_reports(&reports);
            print_outcome(&p, &o);
        }
        Command::DefaultConfig => unreachable!(),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
