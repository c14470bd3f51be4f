//! `bilevel`: toy gradient studies, gradient checks and TV segmentation training.

mod check;
mod config;
mod output;
mod segment;
mod toy;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use config::{KeySpec, Settings};
use output::OutDir;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
}

impl From<bilevel_core::Error> for CliError {
    fn from(e: bilevel_core::Error) -> Self {
        use bilevel_core::Error as E;
        let usage = match &e {
            E::Outer { source, .. } => matches!(**source, E::Input(_) | E::Config(_) | E::Dimension { .. }),
            E::Input(_) | E::Config(_) | E::Dimension { .. } => true,
            _ => false,
        };
        if usage {
            CliError::Usage(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

/// How a command finished when it did not error.
pub enum Status {
    Ok,
    /// A check ran to completion and failed.
    Fail,
}

#[derive(Parser)]
#[command(name = "bilevel", version, about = "Hypergradients through Bregman splitting solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines; flags take precedence
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<String>,
    /// Set any key, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate toy-problem hypergradient estimators at one theta
    ToyGradients {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: Option<String>,
        /// Estimator tag or `all`
        #[arg(long)]
        kind: Option<String>,
        /// Forward iterations (and back-iterations unless n_back is set)
        #[arg(long)]
        n: Option<String>,
        #[arg(long = "n-back", alias = "n_back")]
        n_back: Option<String>,
    },
    /// Evaluate estimators over a grid of theta, n_forward and n_back
    ToySweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated estimator tags or `all`
        #[arg(long)]
        kinds: Option<String>,
        #[arg(long)]
        thetas: Option<String>,
        #[arg(long = "n-forward", alias = "n_forward")]
        n_forward: Option<String>,
        #[arg(long = "n-back", alias = "n_back")]
        n_back: Option<String>,
    },
    /// Compare analytic gradients with central finite differences
    CheckGrad {
        #[command(flatten)]
        common: Common,
        /// `segmentation` or `toy`
        #[arg(long)]
        module: Option<String>,
        /// Grid size WIDTHxHEIGHT
        #[arg(long)]
        size: Option<String>,
        #[arg(long)]
        labels: Option<String>,
        #[arg(long = "n-inner", alias = "n_inner")]
        n_inner: Option<String>,
    },
    /// Train the unary model by bilevel optimization
    SegmentTrain {
        #[command(flatten)]
        common: Common,
        /// Dataset manifest of `features;gt` lines (synthetic data when empty)
        #[arg(long)]
        manifest: Option<String>,
        #[arg(long)]
        iterations: Option<String>,
        #[arg(long = "n-inner", alias = "n_inner")]
        n_inner: Option<String>,
        /// `adam`, `gd` or `ipiano`
        #[arg(long)]
        optimizer: Option<String>,
        #[arg(long)]
        rate: Option<String>,
    },
    /// Segment images with trained parameters
    SegmentInfer {
        #[command(flatten)]
        common: Common,
        /// `theta.csv` written by segment-train
        #[arg(long = "theta-file", alias = "theta_file")]
        theta_file: Option<String>,
        #[arg(long)]
        manifest: Option<String>,
        #[arg(long = "n-inner", alias = "n_inner")]
        n_inner: Option<String>,
    },
}

type Runner = fn(&Settings, &mut OutDir) -> Result<Status, CliError>;

impl Command {
    fn parts(&self) -> (&'static str, &'static [KeySpec], Runner, &Common, Vec<(&'static str, &Option<String>)>) {
        match self {
            Command::ToyGradients {
                common,
                theta,
                kind,
                n,
                n_back,
            } => (
                "toy-gradients",
                toy::GRADIENT_KEYS,
                toy::gradients,
                common,
                vec![("theta", theta), ("kind", kind), ("n", n), ("n_back", n_back)],
            ),
            Command::ToySweep {
                common,
                kinds,
                thetas,
                n_forward,
                n_back,
            } => (
                "toy-sweep",
                toy::SWEEP_KEYS,
                toy::sweep,
                common,
                vec![
                    ("kinds", kinds),
                    ("thetas", thetas),
                    ("n_forward", n_forward),
                    ("n_back", n_back),
                ],
            ),
            Command::CheckGrad {
                common,
                module,
                size,
                labels,
                n_inner,
            } => (
                "check-grad",
                check::KEYS,
                check::run,
                common,
                vec![
                    ("module", module),
                    ("size", size),
                    ("labels", labels),
                    ("n_inner", n_inner),
                ],
            ),
            Command::SegmentTrain {
                common,
                manifest,
                iterations,
                n_inner,
                optimizer,
                rate,
            } => (
                "segment-train",
                segment::TRAIN_KEYS,
                segment::train,
                common,
                vec![
                    ("manifest", manifest),
                    ("iterations", iterations),
                    ("n_inner", n_inner),
                    ("optimizer", optimizer),
                    ("rate", rate),
                ],
            ),
            Command::SegmentInfer {
                common,
                theta_file,
                manifest,
                n_inner,
            } => (
                "segment-infer",
                segment::INFER_KEYS,
                segment::infer,
                common,
                vec![("theta_file", theta_file), ("manifest", manifest), ("n_inner", n_inner)],
            ),
        }
    }
}

/// `threads` (`auto` = all cores) capped by `BILEVEL_THREADS`; `0` runs serially.
pub fn worker_threads(settings: &Settings) -> Result<usize, CliError> {
    let requested = match settings.str("threads") {
        "auto" => std::thread::available_parallelism().map_or(1, |n| n.get()),
        _ => settings.get("threads")?,
    };
    match std::env::var("BILEVEL_THREADS") {
        Ok(v) => {
            let cap: usize = v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("BILEVEL_THREADS: expected a count, got '{v}'")))?;
            Ok(requested.min(cap))
        }
        Err(_) => Ok(requested),
    }
}

fn execute(command: &Command) -> Result<Status, CliError> {
    let (name, keys, run, common, flags) = command.parts();
    let mut settings = Settings::new(name, keys);
    if let Some(path) = &common.config {
        settings.load_file(path)?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set: expected KEY=VALUE, got '{kv}'")))?;
        settings.set(k.trim(), v, "--set")?;
    }
    for (k, v) in flags {
        if let Some(v) = v {
            settings.set(k, v, &format!("--{k}"))?;
        }
    }
    if let Some(out) = &common.out {
        settings.set("out", out, "--out")?;
    }
    let mut out = OutDir::create(PathBuf::from(settings.str("out")), &settings)?;
    // the manifest is written even when the run fails part-way
    let status = run(&settings, &mut out);
    out.finish(&settings)?;
    status
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if std::env::args_os().len() <= 1 {
        let _ = Cli::command().print_help();
        println!();
        return ExitCode::from(1);
    }
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli.command) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Fail) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
