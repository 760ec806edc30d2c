//! `relsim`: run, sweep and inspect the two-mode translation simulator.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use relevance_core::agent::{Mode, Schedule, SessionOptions};
use relevance_core::config::{load_config, RunConfig};
use relevance_core::field::{
    self, classify_path, field_sweep, replica_seeds, run_seeded, trace_path, SweepGrid,
};
use relevance_core::scenarios::Scenario;
use relevance_core::tu_stream::{self, emit_events, summarize_tus, write_csv};
use relevance_core::belief::RngStream;
use relevance_core::validate::run_validation;

#[derive(Parser)]
#[command(name = "relsim", version, about = "Simulate effort and relevance in translation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults to the easy scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Sessions per grid point (sweep), paths drawn (field) or seeds (demo).
    #[arg(long, global = true)]
    replicas: Option<usize>,
    /// Sweep axis as `param=lo:hi:step`; param is rho, kappa, theta, gamma or budget.
    #[arg(long, global = true)]
    grid: Vec<String>,
    /// Choose the most probable target instead of sampling.
    #[arg(long, global = true)]
    deterministic_actions: bool,
}

#[derive(Subcommand)]
enum Command {
    /// One session: events.csv, tu_summary.csv and session.json.
    Run,
    /// Parameter sweep to sweep.csv.
    Sweep,
    /// Effort/effect paths to field.csv.
    Field {
        /// Also draw the paths to field.svg.
        #[arg(long)]
        svg: bool,
    },
    /// Canned comparisons.
    Demo {
        #[command(subcommand)]
        which: Demo,
    },
    /// Run the invariant battery and print a JSON report.
    Validate,
}

#[derive(Subcommand)]
enum Demo {
    /// s-mode-only against i-mode-forced translation of the hard scenario.
    Table1,
}

/// Anything other than a failed validation.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(Failure(msg)) => {
            eprintln!("relsim: {msg}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: &Cli) -> Result<ExitCode, Failure> {
    let c = &cli.common;
    let mut config = match &c.config {
        Some(path) => load_config(path)?,
        // A ρ sweep or mode comparison on the easy text has nothing to show.
        None if matches!(cli.command, Command::Demo { .. } | Command::Sweep) => {
            Scenario::Hard.config()
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = c.seed {
        config.master_seed = seed;
    }
    if let Some(out) = &c.out {
        config.output_dir = out.clone();
    }
    let options = SessionOptions {
        deterministic_actions: c.deterministic_actions,
        schedule: Schedule::Monitor,
    };

    if let Command::Validate = cli.command {
        let report = run_validation(config.master_seed);
        println!("{}", report.to_json());
        return Ok(if report.passed {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(1)
        });
    }

    let out = config.output_dir.clone();
    fs::create_dir_all(&out)
        .map_err(|e| Failure(format!("cannot create {}: {e}", out.display())))?;
    match &cli.command {
        Command::Run => run(&config, &options, &out)?,
        Command::Sweep => sweep(&config, c, &options, &out)?,
        Command::Field { svg } => field(&config, c, &options, &out, *svg)?,
        Command::Demo { which: Demo::Table1 } => table1(&config, c, &options, &out)?,
        Command::Validate => unreachable!(),
    }
    Ok(ExitCode::SUCCESS)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure(format!("cannot write {}: {e}", path.display())))
}

fn run(config: &RunConfig, options: &SessionOptions, out: &Path) -> Result<(), Failure> {
    let trace = run_seeded(config, config.task.seed, config.master_seed, options)?;
    let path = trace_path(&trace);
    let class = classify_path(&path, &config.boundary);
    let session_id = format!("s{}", config.master_seed);

    let events = emit_events(&trace, &config.timing, &RngStream::new(config.master_seed).derive(1))?;
    let rows = summarize_tus(&events, &trace, &session_id, class)?;
    tu_stream::write_events(&events, create(&out.join("events.csv"))?)?;
    tu_stream::write_table(&rows, create(&out.join("tu_summary.csv"))?)?;

    let doc = json!({
        "session_id": session_id,
        "task_seed": config.task.seed,
        "master_seed": config.master_seed,
        "class": class,
        "relevance": trace.totals.relevance(),
        "trace": trace,
        "path": path,
    });
    fs::write(out.join("session.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

fn sweep(
    config: &RunConfig,
    c: &Common,
    options: &SessionOptions,
    out: &Path,
) -> Result<(), Failure> {
    let grid = if c.grid.is_empty() {
        SweepGrid::default_rho()
    } else {
        SweepGrid::parse(&c.grid)?
    };
    let rows = field_sweep(config, &grid, c.replicas.unwrap_or(100), config.master_seed, options)?;
    write_csv(
        create(&out.join("sweep.csv"))?,
        &field::SWEEP_HEADER,
        rows.iter().map(|r| r.to_record()),
    )?;
    Ok(())
}

fn field(
    config: &RunConfig,
    c: &Common,
    options: &SessionOptions,
    out: &Path,
    svg: bool,
) -> Result<(), Failure> {
    let mut paths = Vec::new();
    for replica in 0..c.replicas.unwrap_or(20) {
        let (task_seed, session_seed) = replica_seeds(config.master_seed, replica);
        let trace = run_seeded(config, task_seed, session_seed, options)?;
        let path = trace_path(&trace);
        paths.push((classify_path(&path, &config.boundary), path));
    }
    let header = ["replica", "step", "effort_nats", "effect", "tick", "class"];
    let rows = paths.iter().enumerate().flat_map(|(replica, (class, path))| {
        path.points.iter().enumerate().map(move |(step, p)| {
            vec![
                replica.to_string(),
                step.to_string(),
                p.effort.0.to_string(),
                p.effect.to_string(),
                p.tick.to_string(),
                class.to_string(),
            ]
        })
    });
    write_csv(create(&out.join("field.csv"))?, &header, rows)?;
    if svg {
        fs::write(out.join("field.svg"), field::render_svg(&paths, &config.boundary))?;
    }
    Ok(())
}

fn table1(
    config: &RunConfig,
    c: &Common,
    options: &SessionOptions,
    out: &Path,
) -> Result<(), Failure> {
    let seeds = c.replicas.unwrap_or(100);
    let header = [
        "condition",
        "sessions",
        "tus",
        "mean_effort_nats",
        "mean_dur_ms",
        "mean_pause_before_ms",
        "mean_effect_per_session",
    ];
    let mut rows = Vec::new();
    for (label, schedule) in [("smode_only", Schedule::SmodeOnly), ("imode_forced", Schedule::ImodeForced)] {
        let opts = SessionOptions { schedule, ..*options };
        let (mut tus, mut effort, mut dur, mut pause, mut effect) = (0usize, 0.0, 0.0, 0.0, 0.0);
        for replica in 0..seeds {
            let (task_seed, session_seed) = replica_seeds(config.master_seed, replica);
            let trace = run_seeded(config, task_seed, session_seed, &opts)?;
            let class = classify_path(&trace_path(&trace), &config.boundary);
            let events = emit_events(&trace, &config.timing, &RngStream::new(session_seed))?;
            for row in summarize_tus(&events, &trace, label, class)? {
                debug_assert!(schedule != Schedule::SmodeOnly || row.mode == Mode::Smode);
                tus += 1;
                effort += row.effort_e1_nats.0 + row.effort_e2_nats.0;
                dur += row.dur_ms as f64;
                pause += row.pause_before_ms as f64;
            }
            effect += trace.totals.effect;
        }
        let per_tu = tus.max(1) as f64;
        rows.push(vec![
            label.to_string(),
            seeds.to_string(),
            tus.to_string(),
            (effort / per_tu).to_string(),
            (dur / per_tu).to_string(),
            (pause / per_tu).to_string(),
            (effect / seeds.max(1) as f64).to_string(),
        ]);
    }
    write_csv(create(&out.join("table1.csv"))?, &header, rows)?;
    Ok(())
}
