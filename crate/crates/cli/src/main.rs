//! `lockbox`: run sweeps, analyze logs, fit curves and play the box.
//!
//! Exit codes: 0 success, 2 configuration or schema error, 3 I/O error,
//! 4 transport exhaustion during an LLM run.

mod play;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lockbox_probe::agents::AgentSpec;
use lockbox_probe::analysis::{analyze, fit_success, AnalysisReport, DEFAULT_MAX_ORDER};
use lockbox_probe::lockbox::{default_config, LockboxConfig};
use lockbox_probe::log::{read_log, write_log, LogError};
use lockbox_probe::runner::{run_sweep, run_trial, RunPlan, TrialRecord, DEFAULT_STEP_BUDGET};
use lockbox_probe::seed::trial_seed;

#[derive(Parser)]
#[command(name = "lockbox", version, about = "Closed-loop Lockbox evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunFlags {
    /// Run plan (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the plan's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the agent by name, with default parameters.
    #[arg(long)]
    agent: Option<String>,
    /// Archive every request and response in the trial log.
    #[arg(long)]
    archive_transcripts: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single trial.
    Run {
        #[command(flatten)]
        flags: RunFlags,
        /// Flip probability for this trial (defaults to the first grid value).
        #[arg(long)]
        flip_p: Option<f64>,
        /// Trial log to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full flip-probability sweep.
    Sweep {
        #[command(flatten)]
        flags: RunFlags,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Per-condition success, loop metrics, correlation and fit.
    Analyze {
        /// Trial log (JSONL).
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_ORDER)]
        max_order: usize,
    },
    /// Fit success rate against flip probability.
    Fit {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write `x,y,fitted` rows here.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_ORDER)]
        max_order: usize,
    },
    /// Print a summary table of an analysis JSON.
    Report {
        #[arg(long)]
        analysis: PathBuf,
    },
    /// Play the box in the terminal.
    Play {
        /// Lockbox config JSON (defaults to the built-in box).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        flip_p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_STEP_BUDGET)]
        budget: usize,
    },
    /// Check a run plan without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

enum Failure {
    Config(String),
    Io(String),
    Transport(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::Transport(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Io(m) | Failure::Transport(m) => m,
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn load_plan(flags: &RunFlags) -> Result<RunPlan, Failure> {
    let text = fs::read_to_string(&flags.config).map_err(|e| io_failure(&flags.config, e))?;
    let base = flags.config.parent().unwrap_or(Path::new("."));
    let mut plan =
        RunPlan::from_json(&text, base).map_err(|e| Failure::Config(format!("{}: {e}", flags.config.display())))?;
    if let Some(seed) = flags.seed {
        plan.master_seed = seed;
    }
    if let Some(name) = &flags.agent {
        plan.agent_spec = AgentSpec::by_name(name).map_err(|e| Failure::Config(format!("--agent: {e}")))?;
    }
    plan.archive_transcripts |= flags.archive_transcripts;
    plan.validate().map_err(|e| Failure::Config(e.to_string()))?;
    if let AgentSpec::Llm(endpoint) = &plan.agent_spec {
        if std::env::var_os(&endpoint.api_key_env).is_none() {
            return Err(Failure::Config(format!(
                "credential variable `{}` is not set",
                endpoint.api_key_env
            )));
        }
    }
    Ok(plan)
}

fn read_records(path: &Path) -> Result<Vec<TrialRecord>, Failure> {
    read_log(path).map_err(|e| match e {
        LogError::Io(e) => io_failure(path, e),
        other => Failure::Config(format!("{}: {other}", path.display())),
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let file = fs::File::create(path).map_err(|e| io_failure(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_failure(path, e))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| io_failure(path, e))
}

fn check_aborts(records: &[TrialRecord]) -> Result<(), Failure> {
    let aborted = records.iter().filter(|r| r.aborted).count();
    if aborted == 0 {
        return Ok(());
    }
    let note = records.iter().find_map(|r| r.abort_note.clone()).unwrap_or_default();
    Err(Failure::Transport(format!("{aborted} trial(s) aborted; first: {note}")))
}

fn cmd_run(flags: RunFlags, flip_p: Option<f64>, out: Option<PathBuf>) -> Result<(), Failure> {
    let plan = load_plan(&flags)?;
    let p = flip_p.unwrap_or(plan.flip_grid[0]);
    if !(0.0..=1.0).contains(&p) {
        return Err(Failure::Config(format!("--flip-p must lie in [0, 1], got {p}")));
    }
    let record = run_trial(&plan, p, trial_seed(plan.master_seed, 0, 0, 0));
    let actions: Vec<&str> = record.actions().iter().map(|&j| plan.config_ref.label(j)).collect();
    println!(
        "p={p} success={} steps={} flips={} substitutions={} actions=[{}]",
        record.success,
        record.steps.len(),
        record.flips().count(),
        record.substitutions(),
        actions.join(" ")
    );
    let records = vec![record];
    if let Some(path) = out {
        write_log(&path, &records).map_err(|e| io_failure(&path, e))?;
    }
    check_aborts(&records)
}

fn cmd_sweep(flags: RunFlags, out: PathBuf, jobs: usize) -> Result<(), Failure> {
    let plan = load_plan(&flags)?;
    // fail on an unwritable destination before spending any compute
    fs::File::create(&out).map_err(|e| io_failure(&out, e))?;
    let records = run_sweep(&plan, jobs);
    write_log(&out, &records).map_err(|e| io_failure(&out, e))?;
    for (g, p) in plan.flip_grid.iter().enumerate() {
        let group: Vec<&TrialRecord> = records.iter().filter(|r| r.grid_index == g).collect();
        let usable = group.iter().filter(|r| !r.aborted).count();
        let wins = group.iter().filter(|r| r.success).count();
        let rate = if usable == 0 { 0.0 } else { wins as f64 / usable as f64 };
        println!(
            "p={p:.2} trials={} success_rate={rate:.3} aborted={}",
            group.len(),
            group.len() - usable
        );
    }
    check_aborts(&records)
}

fn cmd_analyze(log: PathBuf, out: PathBuf, max_order: usize) -> Result<(), Failure> {
    let records = read_records(&log)?;
    let report = analyze(&records, max_order).map_err(|e| Failure::Config(format!("{}: {e}", log.display())))?;
    write_json(&out, &report)
}

fn cmd_fit(log: PathBuf, out: PathBuf, csv: Option<PathBuf>, max_order: usize) -> Result<(), Failure> {
    let records = read_records(&log)?;
    let fit = fit_success(&records, max_order);
    write_json(&out, &fit)?;
    if let Some(path) = csv {
        let Some(text) = fit.csv() else {
            return Err(Failure::Config(format!(
                "no fit to export: {}",
                fit.omitted_reason.unwrap_or_default()
            )));
        };
        fs::write(&path, text).map_err(|e| io_failure(&path, e))?;
    }
    match &fit.selection {
        Some(s) => println!(
            "order={} (aic={}, cv={}{}) peak_flip_p={:.3}",
            s.order,
            s.aic_order,
            s.cv_order,
            if s.criteria_agree { "" } else { ", disagree" },
            fit.peak_flip_p.unwrap_or(f64::NAN)
        ),
        None => println!("fit omitted: {}", fit.omitted_reason.as_deref().unwrap_or("")),
    }
    Ok(())
}

fn cmd_report(analysis: PathBuf) -> Result<(), Failure> {
    let text = fs::read_to_string(&analysis).map_err(|e| io_failure(&analysis, e))?;
    let report: AnalysisReport =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", analysis.display())))?;
    let mut rows: Vec<_> = report.conditions.values().collect();
    rows.sort_by(|a, b| a.flip_p.total_cmp(&b.flip_p));
    let stdout = io::stdout();
    let mut w = stdout.lock();
    let _ = writeln!(
        w,
        "{:>6} {:>7} {:>8} {:>9} {:>9} {:>9}",
        "flip_p", "trials", "success", "loop_p", "coverage", "flip_rate"
    );
    for c in rows {
        let _ = writeln!(
            w,
            "{:>6.2} {:>7} {:>8.3} {:>9.3} {:>9.3} {:>9.3}",
            c.flip_p, c.n_trials, c.success_rate, c.loop_probability, c.mean_coverage_fraction, c.mean_flip_rate
        );
    }
    match (
        report.correlation.loop_probability_vs_success_rate,
        &report.correlation.omitted_reason,
    ) {
        (Some(r), _) => {
            let _ = writeln!(w, "pearson(loop_probability, success_rate) = {r:.3}");
        }
        (None, Some(why)) => {
            let _ = writeln!(w, "correlation omitted: {why}");
        }
        _ => {}
    }
    if let Some(s) = &report.fit.selection {
        let _ = writeln!(
            w,
            "fit order {} coefficients {:?} peak at p = {:.3}",
            s.order,
            s.best().coefficients,
            report.fit.peak_flip_p.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn cmd_play(config: Option<PathBuf>, flip_p: f64, seed: u64, budget: usize) -> Result<(), Failure> {
    let config: LockboxConfig = match config {
        None => default_config(),
        Some(path) => {
            let text = fs::read_to_string(&path).map_err(|e| io_failure(&path, e))?;
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
    };
    if !(0.0..=1.0).contains(&flip_p) || budget == 0 {
        return Err(Failure::Config(
            "--flip-p must lie in [0, 1] and --budget be positive".into(),
        ));
    }
    let stdin = io::stdin();
    play::play(&config, flip_p, seed, budget, stdin.lock(), io::stdout())
        .map(|_| ())
        .map_err(|e| Failure::Io(e.to_string()))
}

fn cmd_validate(config: PathBuf) -> Result<(), Failure> {
    let plan = load_plan(&RunFlags {
        config,
        seed: None,
        agent: None,
        archive_transcripts: false,
    })?;
    println!(
        "ok: agent={} grid={:?} repetitions={} trials={} budget={} total_trials={}",
        plan.agent_spec.name(),
        plan.flip_grid,
        plan.repetitions,
        plan.trials_per_repetition,
        plan.step_budget,
        plan.total_trials()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { flags, flip_p, out } => cmd_run(flags, flip_p, out),
        Command::Sweep { flags, out, jobs } => cmd_sweep(flags, out, jobs),
        Command::Analyze { log, out, max_order } => cmd_analyze(log, out, max_order),
        Command::Fit {
            log,
            out,
            csv,
            max_order,
        } => cmd_fit(log, out, csv, max_order),
        Command::Report { analysis } => cmd_report(analysis),
        Command::Play {
            config,
            flip_p,
            seed,
            budget,
        } => cmd_play(config, flip_p, seed, budget),
        Command::ValidateConfig { config } => cmd_validate(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
