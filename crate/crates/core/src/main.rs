//! `spvim` command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spvim::config::{RunConfig, SimulateConfig};
use spvim::data::{load_dataset, Task};
use spvim::experiment::{run_experiment, ExperimentSpec};
use spvim::learners::{LearnerKind, LearnerSpec};
use spvim::pipeline::{estimate_spvim, EstimationConfig};
use spvim::plot::forest_plot;
use spvim::predictiveness::PredictivenessMeasure;
use spvim::report::Report;
use spvim::simulate::simulate;
use spvim::{Result, SpvimError};

#[derive(Parser)]
#[command(name = "spvim", version, about = "Shapley population variable importance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate feature importance with intervals (tests as configured).
    Estimate(EstimateArgs),
    /// Estimate and run the split-sample test for every feature.
    Test(EstimateArgs),
    /// Importance of feature groups (`groups` in the config or `--groups`).
    Group(GroupArgs),
    /// Write a simulated dataset as CSV.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo experiment and write its summary as JSON.
    Experiment(ExperimentArgs),
    /// Render a report as an SVG forest plot.
    Plot(PlotArgs),
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long)]
    measure: Option<PredictivenessMeasure>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "SPVIM_WORKERS")]
    workers: Option<usize>,
    /// External model runner command line (program followed by its arguments).
    #[arg(long)]
    runner: Option<String>,
    /// Report path; the report goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GroupArgs {
    #[command(flatten)]
    common: EstimateArgs,
    /// Groups of 1-based column indices, e.g. `1,2;3;4,5`.
    #[arg(long)]
    groups: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "SPVIM_WORKERS")]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Report JSON written by `estimate`, `test` or `group`.
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_groups(text: &str) -> Result<Vec<Vec<usize>>> {
    text.split(';')
        .map(|g| {
            g.split(',')
                .map(|c| {
                    c.trim()
                        .parse::<usize>()
                        .map_err(|_| SpvimError::Config(format!("bad column index `{c}` in --groups")))
                })
                .collect()
        })
        .collect()
}

fn resolve(args: &EstimateArgs) -> Result<(RunConfig, PathBuf, String)> {
    let mut run = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let est: &mut EstimationConfig = &mut run.estimation;
    if let Some(m) = args.measure {
        est.measure = m;
    }
    if let Some(g) = args.gamma {
        est.gamma = g;
    }
    if let Some(s) = args.seed {
        est.seed = s;
    }
    if let Some(w) = args.workers {
        est.workers = w;
    }
    if let Some(cmd) = &args.runner {
        let mut parts = cmd.split_whitespace().map(String::from);
        let program = parts.next().ok_or_else(|| SpvimError::Config("--runner is empty".into()))?;
        est.learner = LearnerSpec {
            kind: LearnerKind::External { command: program, args: parts.collect() },
            ..est.learner.clone()
        };
    }
    if let Some(out) = &args.out {
        run.out = Some(out.clone());
    }
    let data = args
        .data
        .clone()
        .or_else(|| run.data.clone())
        .ok_or_else(|| SpvimError::Config("no data file: pass --data or set `data` in the config".into()))?;
    let outcome =
        args.outcome.clone().or_else(|| run.outcome.clone()).ok_or_else(|| {
            SpvimError::Config("no outcome column: pass --outcome or set `outcome` in the config".into())
        })?;
    Ok((run, data, outcome))
}

fn infer_task(run: &RunConfig) -> Task {
    run.task.unwrap_or({
        let est = &run.estimation;
        if est.measure.needs_binary_outcome() || matches!(est.learner.kind, LearnerKind::LogisticIrls) {
            Task::Binary
        } else {
            Task::Regression
        }
    })
}

fn summary_table(report: &Report) -> String {
    let mut out = format!(
        "{:<20} {:>10} {:>10} {:>10} {:>10} {:>9} {:>9}\n",
        "feature", "estimate", "se", "ci_lower", "ci_upper", "T", "p"
    );
    let opt = |v: Option<f64>| v.map_or_else(|| "-".into(), |v| format!("{v:.3}"));
    for j in 0..report.features.len() {
        out.push_str(&format!(
            "{:<20} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>9} {:>9}\n",
            report.features[j],
            report.estimates[j],
            report.std_errors[j],
            report.ci_lower[j],
            report.ci_upper[j],
            opt(report.test_statistics[j]),
            opt(report.p_values[j]),
        ));
    }
    for w in &report.diagnostics.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}

enum Mode<'a> {
    Estimate,
    Test,
    Group(Option<&'a str>),
}

fn estimate(args: &EstimateArgs, mode: Mode) -> Result<()> {
    let (mut run, data_path, outcome) = resolve(args)?;
    match mode {
        Mode::Estimate => {}
        Mode::Test => run.estimation.test = true,
        Mode::Group(Some(g)) => run.estimation.groups = Some(parse_groups(g)?),
        Mode::Group(None) if run.estimation.groups.is_none() => {
            return Err(SpvimError::Config("group needs `groups` in the config or --groups".into()));
        }
        Mode::Group(None) => {}
    }
    run.estimation.validate()?;
    let data = load_dataset(&data_path, &outcome, infer_task(&run))?;
    let result = estimate_spvim(&data, &run.estimation)?;
    let report = Report::new(&result, &run.estimation);
    match &run.out {
        Some(path) => {
            report.write(path)?;
            print!("{}", summary_table(&report));
        }
        None => println!("{}", report.to_json()),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Estimate(args) => estimate(&args, Mode::Estimate),
        Command::Test(args) => estimate(&args, Mode::Test),
        Command::Group(args) => estimate(&args.common, Mode::Group(args.groups.as_deref())),
        Command::Simulate(args) => {
            let text = std::fs::read_to_string(&args.config)
                .map_err(|e| SpvimError::Config(format!("cannot read {}: {e}", args.config.display())))?;
            let mut cfg: SimulateConfig = toml::from_str(&text)?;
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            simulate(&cfg.dgp, cfg.n, cfg.seed)?.write_csv(&args.out)
        }
        Command::Experiment(args) => {
            let text = std::fs::read_to_string(&args.config)
                .map_err(|e| SpvimError::Config(format!("cannot read {}: {e}", args.config.display())))?;
            let mut spec: ExperimentSpec = toml::from_str(&text)?;
            if let Some(s) = args.seed {
                spec.seed = s;
            }
            if let Some(w) = args.workers {
                spec.workers = w;
            }
            let report = run_experiment(&spec)?;
            print!("{}", report.to_table());
            if let Some(out) = &args.out {
                std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
            }
            Ok(())
        }
        Command::Plot(args) => {
            let report = Report::read(&args.report)?;
            std::fs::write(&args.out, forest_plot(&report)?)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
