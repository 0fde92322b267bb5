//! Subcommand implementations behind the `postfix-gp` binary.
//!
//! Diagnostics go to stderr; result data goes to files and stdout. Every
//! command is deterministic given the same inputs, seed and flags.

use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use postfix_gp_core::{
    fitness_report, metrics, predict_multi_step, predict_one_step, render_infix, resume_run,
    FitnessReport, Genome, PrimitiveSet, RunState,
};

use crate::io;
use crate::snapshot;
use crate::threaded::ThreadedEvaluator;

#[derive(Parser)]
#[command(
    name = "postfix-gp",
    version,
    about = "Symbolic regression by genetic programming over postfix genomes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run a fresh evolution from CSV data and a parameter file.
    Run(RunArgs),
    /// Continue a saved run until its generation budget is spent.
    Resume(ResumeArgs),
    /// Evaluate a saved solution on test data.
    Predict(PredictArgs),
    /// Turn a stats CSV into plot-ready data files.
    Report(ReportArgs),
    /// Print the best archived solutions of a saved run.
    Show(ShowArgs),
}

#[derive(Args)]
pub struct RunArgs {
    /// Training CSV: header row, input columns, target column last.
    #[arg(long)]
    pub data: PathBuf,
    /// Function vocabulary CSV: one `symbol,arity` line per operator.
    #[arg(long)]
    pub functions: PathBuf,
    /// Constant pool: one comma-separated line of reals.
    #[arg(long)]
    pub constants: Option<PathBuf>,
    /// Parameter file (TOML).
    #[arg(long)]
    pub params: PathBuf,
    /// Output directory for stats.csv, run.log and final.snapshot.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the parameter file's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluation threads; results are identical for any value.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Args)]
pub struct ResumeArgs {
    /// Snapshot written by a previous `run` or `resume`.
    #[arg(long)]
    pub snapshot: PathBuf,
    /// The training CSV the snapshot was created from.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the continuation's outputs.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub snapshot: PathBuf,
    /// Test CSV: same input columns as training, target column optional.
    #[arg(long)]
    pub test: PathBuf,
    /// Predictions CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Archive index of the solution to use (0 = best).
    #[arg(long, default_value_t = 0)]
    pub solution: usize,
    /// Feed predictions back as inputs instead of reading each row.
    #[arg(long)]
    pub multi_step: bool,
    /// Rollout length in multi-step mode; defaults to the test row count.
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// stats.csv produced by `run` or `resume`.
    #[arg(long)]
    pub stats: PathBuf,
    /// Directory for the four plot-data files.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ShowArgs {
    #[arg(long)]
    pub snapshot: PathBuf,
    /// Training CSV, used to recompute the error metrics.
    #[arg(long)]
    pub data: PathBuf,
    /// How many archive entries to print.
    #[arg(long, default_value_t = 5)]
    pub top: usize,
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Resume(args) => cmd_resume(&args),
        Command::Predict(args) => cmd_predict(&args),
        Command::Report(args) => cmd_report(&args),
        Command::Show(args) => cmd_show(&args),
    }
}

fn fmt6(x: f64) -> String {
    format!("{:.6e}", x)
}

fn fmt6_opt(x: Option<f64>) -> String {
    x.map(fmt6).unwrap_or_else(|| "NA".to_string())
}

/// One stable line per solution, shared by `show` and the run summary.
fn solution_line(
    index: usize,
    genome: &Genome,
    report: &FitnessReport,
    pset: &PrimitiveSet,
) -> Result<String> {
    let expr = render_infix(genome, pset).map_err(|e| anyhow!("rendering solution: {}", e))?;
    Ok(format!(
        "#{}  adj={} size={} mae={} nmse={} r={}  {}",
        index,
        fmt6(report.adjusted),
        genome.valid_length(),
        fmt6(report.mae),
        fmt6_opt(report.nmse),
        fmt6_opt(report.r),
        expr
    ))
}

fn print_archive_summary(state: &RunState, top: usize) -> Result<()> {
    for (i, g) in state.archive.entries().iter().take(top).enumerate() {
        let report = fitness_report(g, &state.dataset, &state.pset)
            .map_err(|e| anyhow!("evaluating archive entry {}: {}", i, e))?;
        println!("{}", solution_line(i, g, &report, &state.pset)?);
    }
    Ok(())
}

/// Drives the engine loop while collecting the population log, then writes
/// stats.csv, run.log and final.snapshot into `out`.
fn finish_run(state: &mut RunState, threads: usize, out: &PathBuf) -> Result<()> {
    let evaluator = ThreadedEvaluator::new(threads);
    let mut log = String::new();
    let mut log_err: Option<anyhow::Error> = None;
    // The freshly initialized (or freshly loaded) state is generation
    // zero of this leg's log.
    if state.generation == 0 {
        if let Err(e) = io::append_population_log(state, &mut log) {
            log_err = Some(e);
        }
    }
    resume_run(state, &evaluator, |s| {
        if log_err.is_none() {
            if let Err(e) = io::append_population_log(s, &mut log) {
                log_err = Some(e);
            }
        }
    })
    .map_err(|e| anyhow!("engine: {}", e))?;
    if let Some(e) = log_err {
        return Err(e);
    }

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    if !state.records.is_empty() {
        io::write_stats_csv(&state.records, &out.join("stats.csv"))?;
    }
    io::atomic_write(&out.join("run.log"), &log)?;
    snapshot::save_state(state, &out.join("final.snapshot"))?;
    Ok(())
}

pub fn cmd_run(args: &RunArgs) -> Result<()> {
    let dataset = io::load_dataset(&args.data)?;
    let (binary, unary) = io::load_functions(&args.functions)?;
    let constants = match &args.constants {
        Some(path) => io::load_constants(path)?,
        None => Vec::new(),
    };
    let pset = PrimitiveSet::new(dataset.variable_names().to_vec(), constants, binary, unary)
        .map_err(|e| anyhow!("primitive set: {}", e))?;
    let params = io::load_params(&args.params, args.seed)?;

    let evaluator = ThreadedEvaluator::new(args.threads);
    let mut state = postfix_gp_core::init_run(&params, &dataset, &pset, &evaluator)
        .map_err(|e| anyhow!("engine: {}", e))?;
    finish_run(&mut state, args.threads, &args.out)?;

    eprintln!(
        "run complete: {} generations, best adjusted fitness {}",
        state.generation,
        fmt6(state.best_so_far().and_then(|g| g.adjusted_fitness()).unwrap_or(0.0))
    );
    print_archive_summary(&state, 5)?;
    Ok(())
}

pub fn cmd_resume(args: &ResumeArgs) -> Result<()> {
    let dataset = io::load_dataset(&args.data)?;
    let mut state = snapshot::load_state(&args.snapshot, dataset)?;
    if state.generation >= state.params.generations {
        eprintln!(
            "nothing to resume: snapshot is already at generation {} of {}",
            state.generation, state.params.generations
        );
        return Ok(());
    }
    finish_run(&mut state, args.threads, &args.out)?;
    eprintln!(
        "resume complete: {} generations, best adjusted fitness {}",
        state.generation,
        fmt6(state.best_so_far().and_then(|g| g.adjusted_fitness()).unwrap_or(0.0))
    );
    print_archive_summary(&state, 5)?;
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let parts = snapshot::load_snapshot(&args.snapshot)?;
    let (inputs, targets) = io::load_test_data(&args.test, &parts.pset)?;
    let genome = parts.archive.entries().get(args.solution).ok_or_else(|| {
        anyhow!(
            "solution index {} out of range: archive holds {} entries",
            args.solution,
            parts.archive.len()
        )
    })?;

    if args.multi_step {
        let horizon = args.horizon.unwrap_or(inputs.len());
        let rollout = predict_multi_step(genome, &inputs[0], horizon, &parts.pset)
            .map_err(|e| anyhow!("multi-step prediction: {}", e))?;
        io::write_multi_step_csv(&rollout.values, rollout.truncated, &args.out)?;
        if rollout.truncated {
            eprintln!(
                "rollout truncated after {} of {} steps (non-finite prediction)",
                rollout.values.len(),
                horizon
            );
        }
        if let Some(t) = &targets {
            let n = rollout.values.len().min(t.len());
            if n >= 2 {
                let m = metrics(&rollout.values[..n], &t[..n])
                    .map_err(|e| anyhow!("metrics: {}", e))?;
                println!("MAE {}  NMSE {}  r {}", fmt6(m.mae), fmt6_opt(m.nmse), fmt6_opt(m.r));
            }
        }
    } else {
        let predictions = predict_one_step(genome, &inputs, &parts.pset)
            .map_err(|e| anyhow!("prediction: {}", e))?;
        io::write_predictions_csv(
            parts.pset.variables(),
            &inputs,
            targets.as_deref(),
            &predictions,
            &args.out,
        )?;
        if let Some(t) = &targets {
            let m = metrics(&predictions, t).map_err(|e| anyhow!("metrics: {}", e))?;
            println!("MAE {}  NMSE {}  r {}", fmt6(m.mae), fmt6_opt(m.nmse), fmt6_opt(m.r));
        }
    }
    Ok(())
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let rows = io::read_stats_csv(&args.stats)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    io::write_plot_files(&rows, &args.out)
}

pub fn cmd_show(args: &ShowArgs) -> Result<()> {
    let parts = snapshot::load_snapshot(&args.snapshot)?;
    let dataset = io::load_dataset(&args.data)?;
    if dataset.variable_names() != parts.pset.variables() {
        bail!(
            "{}: columns ({}) do not match the snapshot's variables ({})",
            args.data.display(),
            dataset.variable_names().join(","),
            parts.pset.variables().join(",")
        );
    }
    if args.top > parts.archive.len() {
        eprintln!(
            "archive holds {} entries; showing all of them",
            parts.archive.len()
        );
    }
    for (i, g) in parts.archive.entries().iter().take(args.top).enumerate() {
        let report = fitness_report(g, &dataset, &parts.pset)
            .map_err(|e| anyhow!("evaluating archive entry {}: {}", i, e))?;
        println!("{}", solution_line(i, g, &report, &parts.pset)?);
    }
    Ok(())
}
