mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{AgentFlags, FileConfig, TrainFlags};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "tgm", version, about = "Train and inspect a growing-mixture maze agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one agent per seed and write metrics, events and checkpoints.
    Train {
        /// JSON config file; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        maze: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        /// `0..4`, `0..=4`, `7` or `1,5,9`.
        #[arg(long)]
        seeds: Option<String>,
        /// Episodes averaged in summary.csv.
        #[arg(long)]
        final_window: Option<usize>,
        /// Continue from existing checkpoints in the output directory.
        #[arg(long)]
        resume: bool,
        /// Also checkpoint every N episodes (0 = only at the end).
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
        #[command(flatten)]
        agent: AgentFlags,
    },
    /// Run greedy episodes from a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        maze: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also compare learned transitions with the true maze dynamics.
        #[arg(long)]
        compare: bool,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Print components, transitions and Q-values stored in a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Train { config, maze, out: out_dir, episodes, seeds, final_window, resume, checkpoint_every, agent } => {
            let file = match config {
                Some(p) => config::load_file_config(&p)?,
                None => FileConfig::default(),
            };
            let seeds = seeds.map(|s| config::parse_seeds(&s)).transpose().map_err(CliError::config)?;
            let flags = TrainFlags { maze, out: out_dir, episodes, seeds, final_window, agent };
            let cfg = config::resolve(file, flags)?;
            let summaries = commands::train(&cfg, resume, checkpoint_every)?;
            for s in summaries {
                writeln!(
                    out,
                    "seed {}: return {:.3} ± {:.3}, success {:.2}, K_active {}",
                    s.seed, s.mean_return, s.std_return, s.success_rate, s.k_active
                )?;
            }
        }
        Command::Eval { checkpoint, maze, episodes, seed, compare, format } => {
            let report = commands::evaluate(&checkpoint, &maze, episodes, seed, compare)?;
            match format {
                Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("report serializes"))?,
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(&mut out);
                    let steps = report.mean_steps.map(|s| s.to_string()).unwrap_or_default();
                    let tv = report.comparison.as_ref().map(|c| c.mean_tv.to_string()).unwrap_or_default();
                    let e = |e: csv::Error| CliError::runtime(e.to_string());
                    w.write_record(["episodes", "success_rate", "mean_steps", "mean_tv"]).map_err(e)?;
                    w.write_record([report.episodes.to_string(), report.success_rate.to_string(), steps, tv]).map_err(e)?;
                    w.flush()?;
                }
                Format::Text => {
                    writeln!(out, "episodes: {}", report.episodes)?;
                    writeln!(out, "success_rate: {:.4}", report.success_rate)?;
                    match report.mean_steps {
                        Some(s) => writeln!(out, "mean_steps: {s:.2}")?,
                        None => writeln!(out, "mean_steps: n/a")?,
                    }
                    if let Some(c) = &report.comparison {
                        writeln!(out, "mean_tv: {:.4}", c.mean_tv)?;
                        for ((cell, comp), tv) in c.cells.iter().zip(&c.cell_to_component).zip(&c.tv) {
                            let comp = comp.map_or("-".to_string(), |k| k.to_string());
                            let tvs: Vec<String> = tv.iter().map(|t| format!("{t:.3}")).collect();
                            writeln!(out, "  cell {cell:?} -> component {comp}: tv {}", tvs.join(" "))?;
                        }
                    }
                }
            }
        }
        Command::Inspect { checkpoint, format } => {
            let report = commands::inspect(&checkpoint)?;
            match format {
                Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("report serializes"))?,
                Format::Csv => commands::write_inspect_csv(&report, &mut out)?,
                Format::Text => commands::write_inspect_text(&report, &mut out)?,
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let level = std::env::var("TGM_LOG_LEVEL").unwrap_or_else(|_| "warn".into());
    let level_ok = matches!(level.as_str(), "error" | "warn" | "info" | "debug");
    env_logger::Builder::new()
        .parse_filters(if level_ok { &level } else { "warn" })
        .format_timestamp_millis()
        .init();
    if !level_ok {
        eprintln!("error: TGM_LOG_LEVEL must be one of error, warn, info, debug (got {level:?})");
        return ExitCode::from(1);
    }

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
        Err(e) if e.code == 0 => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
