use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use transverse::runner::{run, Experiment, ExperimentConfig, RunError};
use transverse::zoo::MODEL_IDS;

#[derive(Parser, Debug)]
#[command(name = "transverse", version, about = "Numerical experiments on Riemannian foliations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment and write CSV, JSON and plot data.
    Run(RunArgs),
    /// List the shipped models.
    Models,
    /// List the experiments.
    Experiments,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Experiment name, e.g. `spectrum` or `verify-cartan`.
    experiment: String,
    #[arg(long)]
    model: Option<String>,
    /// TOML config; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    /// Ball radius or geodesic length; repeat for several.
    #[arg(long = "R")]
    radius: Vec<f64>,
    #[arg(long)]
    tmax: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    /// Model parameter as `key=value`; repeatable.
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, f64)>,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("`{k}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn config(args: RunArgs) -> Result<ExperimentConfig, RunError> {
    let experiment: Experiment = args.experiment.parse()?;
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(e) = cfg.experiment {
        if e != experiment {
            return Err(RunError::Config(format!("config names experiment `{e}` but `{experiment}` was requested")));
        }
    }
    cfg.experiment = Some(experiment);
    cfg.model = args.model.or(cfg.model);
    cfg.out = args.out.or(cfg.out);
    cfg.seed = args.seed.or(cfg.seed);
    let s = &mut cfg.settings;
    s.tol = args.tol.or(s.tol);
    s.t_max = args.tmax.or(s.t_max);
    s.samples = args.samples.or(s.samples);
    s.grid = args.grid.or(s.grid);
    if !args.radius.is_empty() {
        s.radius = Some(args.radius);
    }
    cfg.params.extend(args.params);
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Models => {
            MODEL_IDS.iter().for_each(|m| println!("{m}"));
            ExitCode::SUCCESS
        }
        Command::Experiments => {
            Experiment::ALL.iter().for_each(|e| println!("{e}"));
            ExitCode::SUCCESS
        }
        Command::Run(args) => match config(args).and_then(|c| run(&c)) {
            Ok(out) => {
                let s = &out.summary;
                for c in &s.checks {
                    let mark = match (c.pass, c.informational) {
                        (true, _) => "pass",
                        (false, true) => "info",
                        (false, false) => "FAIL",
                    };
                    println!("{mark:4}  {:28} {:<12e} {}", c.name, c.value, c.detail);
                }
                println!("{} on {}: {}", s.experiment, s.model, if s.pass { "pass" } else { "fail" });
                println!("wrote {}", out.csv.display());
                if !s.pass {
                    eprintln!("{} on {}: checks failed", s.experiment, s.model);
                }
                ExitCode::from(s.exit_code() as u8)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
    }
}
