//! Run configuration: defaults, overlaid by a JSON config file, overlaid by flags.

use std::ops::Range;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tgm::agent::{AgentConfig, QMode};

use crate::error::CliError;

/// Contents of `--config`. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub maze: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub episodes: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub final_window: Option<usize>,
    /// Partial agent config; missing fields keep their defaults.
    pub agent: Option<serde_json::Value>,
}

/// Agent overrides that can be given as flags.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct AgentFlags {
    #[arg(long)]
    pub checkpoint_period: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub epsilon_start: Option<f64>,
    #[arg(long)]
    pub epsilon_end: Option<f64>,
    #[arg(long)]
    pub epsilon_decay_fraction: Option<f64>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub theta_kl: Option<f64>,
    #[arg(long)]
    pub theta_counts: Option<u32>,
    #[arg(long)]
    pub min_support: Option<usize>,
    #[arg(long)]
    pub vgm_max_sweeps: Option<usize>,
    /// `batched` (replay per checkpoint) or `online` (per step).
    #[arg(long, value_parser = parse_q_mode)]
    pub q_mode: Option<QMode>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub sigma_obs: Option<f64>,
}

fn parse_q_mode(s: &str) -> Result<QMode, String> {
    match s {
        "batched" => Ok(QMode::Batched),
        "online" => Ok(QMode::Online),
        other => Err(format!("unknown q mode {other:?} (expected batched or online)")),
    }
}

/// Parse `0..4` (half-open), `0..=4`, a single seed, or a comma list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let num = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("bad seed {t:?}: {e}"));
    if let Some((a, b)) = s.split_once("..=") {
        return Ok((num(a)?..=num(b)?).collect());
    }
    if let Some((a, b)) = s.split_once("..") {
        let r: Range<u64> = num(a)?..num(b)?;
        return Ok(r.collect());
    }
    s.split(',').map(num).collect()
}

/// The effective configuration of a training run, echoed to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub maze: PathBuf,
    pub out: PathBuf,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub final_window: usize,
    pub agent: AgentConfig,
}

impl RunConfig {
    /// Hash of everything that determines a run's results except the seed.
    pub fn hash(&self, maze_text: &str) -> String {
        let doc = serde_json::json!({
            "agent": self.agent,
            "episodes": self.episodes,
            "maze": maze_text,
        });
        hex::encode(Sha256::digest(doc.to_string().as_bytes()))
    }
}

pub struct TrainFlags {
    pub maze: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub episodes: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub final_window: Option<usize>,
    pub agent: AgentFlags,
}

pub fn load_file_config(path: &std::path::Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
}

pub fn resolve(file: FileConfig, flags: TrainFlags) -> Result<RunConfig, CliError> {
    let mut agent = AgentConfig::default();
    if let Some(partial) = file.agent {
        let mut base = serde_json::to_value(&agent).expect("config serializes");
        merge(&mut base, partial);
        agent = serde_json::from_value(base).map_err(|e| CliError::config(format!("invalid agent config: {e}")))?;
    }
    let f = flags.agent;
    macro_rules! set {
        ($($field:ident).+ <- $flag:ident) => {
            if let Some(v) = f.$flag {
                agent.$($field).+ = v;
            }
        };
    }
    set!(checkpoint_period <- checkpoint_period);
    set!(alpha <- alpha);
    set!(gamma <- gamma);
    set!(epsilon_start <- epsilon_start);
    set!(epsilon_end <- epsilon_end);
    set!(epsilon_decay_fraction <- epsilon_decay_fraction);
    set!(bandwidth <- bandwidth);
    set!(theta_kl <- theta_kl);
    set!(theta_counts <- theta_counts);
    set!(min_support <- min_support);
    set!(vgm_max_sweeps <- vgm_max_sweeps);
    set!(q_mode <- q_mode);
    set!(env.max_steps <- max_steps);
    set!(env.sigma_obs <- sigma_obs);
    agent.validate().map_err(|e| CliError::config(e.to_string()))?;

    let maze = flags
        .maze
        .or(file.maze)
        .ok_or_else(|| CliError::config("no maze given (use --maze or the config file)"))?;
    let seeds = flags.seeds.or(file.seeds).unwrap_or_else(|| vec![0]);
    if seeds.is_empty() {
        return Err(CliError::config("seed list is empty"));
    }
    let final_window = flags.final_window.or(file.final_window).unwrap_or(50);
    if final_window == 0 {
        return Err(CliError::config("final window must be at least 1"));
    }
    Ok(RunConfig {
        maze,
        out: flags.out.or(file.out).unwrap_or_else(|| PathBuf::from("runs")),
        episodes: flags.episodes.or(file.episodes).unwrap_or(500),
        seeds,
        final_window,
        agent,
    })
}

/// Recursively overlay `patch` onto `base` (objects merge, everything else replaces).
fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
