use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tgm::agent::{self, eval, Agent, EpisodeMetrics};
use tgm::checkpoint::Checkpoint;
use tgm::env::{Maze, MazeSpec, NUM_ACTIONS};

use crate::config::RunConfig;
use crate::error::CliError;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const EVENTS_FILE: &str = "events.jsonl";

pub fn read_maze(path: &Path) -> Result<(String, MazeSpec), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::maze(format!("cannot read maze {}: {e}", path.display())))?;
    let spec = MazeSpec::parse(&text).map_err(|e| CliError::maze(format!("{}: {e}", path.display())))?;
    Ok((text, spec))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::config(format!("checkpoint not found: {}", path.display())));
    }
    let text = fs::read_to_string(path)?;
    Checkpoint::from_json(&text).map_err(|e| CliError::corrupt(format!("{}: {e}", path.display())))
}

fn load_agent(path: &Path) -> Result<(Checkpoint, Agent), CliError> {
    let doc = load_checkpoint(path)?;
    let agent = doc.to_agent().map_err(|e| CliError::corrupt(format!("{}: {e}", path.display())))?;
    Ok((doc, agent))
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

#[derive(Debug, Clone, Serialize)]
struct EventLine<'a> {
    ts_ms: u128,
    seed: u64,
    episode: usize,
    #[serde(flatten)]
    event: &'a agent::StampedEvent,
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Final-window statistics for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub seed: u64,
    pub episodes: usize,
    pub window: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub success_rate: f64,
    pub k_active: usize,
}

fn summarize(seed: u64, metrics_path: &Path, window: usize) -> Result<SeedSummary, CliError> {
    let file = File::open(metrics_path)?;
    let mut rows: Vec<EpisodeMetrics> = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| CliError::runtime(format!("bad metrics line: {e}")))?);
    }
    let tail = &rows[rows.len().saturating_sub(window)..];
    let n = tail.len() as f64;
    let (mean, std, rate) = if tail.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        let mean = tail.iter().map(|m| m.episode_return).sum::<f64>() / n;
        let var = tail.iter().map(|m| (m.episode_return - mean).powi(2)).sum::<f64>() / n;
        let rate = tail.iter().filter(|m| m.success).count() as f64 / n;
        (mean, var.sqrt(), rate)
    };
    Ok(SeedSummary {
        seed,
        episodes: rows.len(),
        window: tail.len(),
        mean_return: mean,
        std_return: std,
        success_rate: rate,
        k_active: rows.last().map_or(0, |m| m.k_active),
    })
}

fn train_seed(cfg: &RunConfig, maze: &Maze, hash: &str, seed: u64, resume: bool, every: usize) -> Result<SeedSummary, CliError> {
    let dir = seed_dir(&cfg.out, seed);
    fs::create_dir_all(&dir)?;
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let metrics_path = dir.join(METRICS_FILE);
    let events_path = dir.join(EVENTS_FILE);

    let resumed = resume && ckpt_path.is_file();
    let mut agent = if resumed {
        let (doc, agent) = load_agent(&ckpt_path)?;
        if doc.config_hash != hash {
            return Err(CliError::config(format!(
                "cannot resume {}: it was written with a different configuration",
                ckpt_path.display()
            )));
        }
        info!("seed {seed}: resuming at episode {}", agent.episodes_done);
        agent
    } else {
        let mut agent_cfg = cfg.agent.clone();
        agent_cfg.env = maze.cfg;
        Agent::new(agent_cfg, 2, seed)?
    };
    let open = |p: &Path| -> std::io::Result<BufWriter<File>> {
        let mut o = OpenOptions::new();
        o.create(true);
        if resumed {
            o.append(true);
        } else {
            o.write(true).truncate(true);
        }
        Ok(BufWriter::new(o.open(p)?))
    };
    let mut metrics = open(&metrics_path)?;
    let mut events = open(&events_path)?;

    let mut io_error: Option<std::io::Error> = None;
    let result = agent::continue_training(&mut agent, maze, cfg.episodes, |m, agent| {
        let mut write = || -> std::io::Result<()> {
            serde_json::to_writer(&mut metrics, m)?;
            metrics.write_all(b"\n")?;
            for ev in agent.drain_events() {
                let line = EventLine { ts_ms: now_ms(), seed, episode: m.episode, event: &ev };
                serde_json::to_writer(&mut events, &line)?;
                events.write_all(b"\n")?;
            }
            Ok(())
        };
        if let Err(e) = write() {
            io_error = Some(e);
            return Err(tgm::TgmError::Precondition("metrics write failed".into()));
        }
        if every > 0 && agent.episodes_done % every == 0 {
            metrics.flush()?;
            Checkpoint::from_agent(agent, hash).save(&ckpt_path)?;
        }
        Ok(())
    });
    if let Some(e) = io_error {
        return Err(e.into());
    }
    result?;
    metrics.flush()?;
    events.flush()?;
    Checkpoint::from_agent(&agent, hash).save(&ckpt_path)?;
    summarize(seed, &metrics_path, cfg.final_window)
}

pub fn train(cfg: &RunConfig, resume: bool, checkpoint_every: usize) -> Result<Vec<SeedSummary>, CliError> {
    let (maze_text, spec) = read_maze(&cfg.maze)?;
    let maze = Maze::new(spec, cfg.agent.env)?;
    let hash = cfg.hash(&maze_text);
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::config(format!("cannot create output directory {}: {e}", cfg.out.display())))?;
    let echo = serde_json::json!({ "config_hash": hash, "run": cfg });
    fs::write(cfg.out.join("config.json"), serde_json::to_string_pretty(&echo).expect("config serializes"))?;

    let results: Vec<Result<SeedSummary, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let (maze, hash) = (&maze, &hash);
                scope.spawn(move || train_seed(cfg, maze, hash, seed, resume, checkpoint_every))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(CliError::runtime("training thread panicked"))))
            .collect()
    });
    let summaries = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut w = csv::Writer::from_path(cfg.out.join("summary.csv")).map_err(|e| CliError::runtime(e.to_string()))?;
    w.write_record(["seed", "episodes", "window", "mean_return", "std_return", "success_rate", "k_active"])
        .map_err(|e| CliError::runtime(e.to_string()))?;
    for s in &summaries {
        w.write_record([
            s.seed.to_string(),
            s.episodes.to_string(),
            s.window.to_string(),
            s.mean_return.to_string(),
            s.std_return.to_string(),
            s.success_rate.to_string(),
            s.k_active.to_string(),
        ])
        .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    w.flush()?;
    Ok(summaries)
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub success_rate: f64,
    /// Over successful episodes; null when there were none.
    pub mean_steps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    /// Component matched to each floor cell (row-major), if any.
    pub cell_to_component: Vec<Option<usize>>,
    pub cells: Vec<(usize, usize)>,
    /// `[cell][action]` total-variation distances.
    pub tv: Vec<[f64; NUM_ACTIONS]>,
    pub mean_tv: f64,
}

pub fn evaluate(checkpoint: &Path, maze_path: &Path, episodes: usize, seed: u64, compare: bool) -> Result<EvalReport, CliError> {
    let (_, mut agent) = load_agent(checkpoint)?;
    let (_, spec) = read_maze(maze_path)?;
    if agent.num_components() > 0 && agent.state.dim != 2 {
        return Err(CliError::config("checkpoint observations are not 2-D positions"));
    }
    let maze = Maze::new(spec.clone(), agent.cfg.env)?;
    agent.rng = ChaCha8Rng::seed_from_u64(seed);
    let (rate, steps) = agent::evaluate_greedy(&mut agent, &maze, episodes)?;
    let comparison = compare.then(|| {
        let active = agent.active_components();
        let matching = if agent.num_components() == 0 {
            vec![None; spec.floor_cells().len()]
        } else {
            eval::match_components_to_cells(&agent.state, &spec, &active)
        };
        let tv = eval::transition_tv(&agent.tensor, &spec, &matching);
        Comparison { mean_tv: eval::mean_tv(&tv), cell_to_component: matching, cells: spec.floor_cells(), tv }
    });
    Ok(EvalReport {
        episodes,
        success_rate: if episodes == 0 { f64::NAN } else { rate },
        mean_steps: steps.is_finite().then_some(steps),
        comparison,
    })
}

#[derive(Debug, Serialize)]
pub struct ComponentRow {
    pub index: usize,
    pub status: tgm::structure::ComponentStatus,
    pub persistence: u32,
    pub mean: Vec<f64>,
    pub beta: f64,
    pub v: f64,
    pub d: f64,
}

/// Human-facing views of a checkpoint plus the checkpoint itself.
#[derive(Debug, Serialize)]
pub struct InspectReport {
    pub components: Vec<ComponentRow>,
    /// Per action, rows = next component, columns = current component.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// Rows = actions, columns = components.
    pub q_table: Vec<Vec<f64>>,
    pub checkpoint: Checkpoint,
}

pub fn inspect(path: &Path) -> Result<InspectReport, CliError> {
    let (doc, agent) = load_agent(path)?;
    let post = &agent.state.posterior;
    let components = (0..agent.num_components())
        .map(|k| {
            let entry = agent.ledger.entries.get(k);
            ComponentRow {
                index: k,
                status: entry.map_or(tgm::structure::ComponentStatus::Flexible, |e| e.status),
                persistence: entry.map_or(0, |e| e.persistence),
                mean: post.components[k].m.iter().copied().collect(),
                beta: post.components[k].beta,
                v: post.components[k].v,
                d: post.d[k],
            }
        })
        .collect();
    let transitions = agent
        .tensor
        .expected_transitions()
        .iter()
        .map(|m| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
        .collect();
    let q = &agent.q.values;
    let q_table = (0..q.nrows()).map(|i| q.row(i).iter().copied().collect()).collect();
    Ok(InspectReport { components, transitions, q_table, checkpoint: doc })
}

pub fn write_inspect_text(r: &InspectReport, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "K = {}, O = {}, steps = {}, episodes = {}", r.checkpoint.k, r.checkpoint.o, r.checkpoint.total_steps, r.checkpoint.episodes_done)?;
    writeln!(out, "\ncomponents")?;
    writeln!(out, "{:>4} {:>9} {:>5} {:>22} {:>10} {:>10} {:>10}", "k", "status", "pers", "mean", "beta", "v", "d")?;
    for c in &r.components {
        let mean: Vec<String> = c.mean.iter().map(|x| format!("{x:.3}")).collect();
        let status = match c.status {
            tgm::structure::ComponentStatus::Fixed => "fixed",
            tgm::structure::ComponentStatus::Flexible => "flexible",
        };
        writeln!(out, "{:>4} {:>9} {:>5} {:>22} {:>10.2} {:>10.2} {:>10.2}", c.index, status, c.persistence, mean.join(", "), c.beta, c.v, c.d)?;
    }
    for (a, m) in r.transitions.iter().enumerate() {
        writeln!(out, "\nP(next | current, action {a}); columns = current")?;
        for row in m {
            let cells: Vec<String> = row.iter().map(|p| format!("{p:.3}")).collect();
            writeln!(out, "  {}", cells.join(" "))?;
        }
    }
    writeln!(out, "\nQ table; rows = actions, columns = components")?;
    for row in &r.q_table {
        let cells: Vec<String> = row.iter().map(|q| format!("{q:.4}")).collect();
        writeln!(out, "  {}", cells.join(" "))?;
    }
    Ok(())
}

/// Long-format CSV: one row per value.
pub fn write_inspect_csv(r: &InspectReport, out: impl Write) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::runtime(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["table", "action", "row", "col", "value"]).map_err(err)?;
    let mut rec = |table: &str, action: String, row: usize, col: String, value: String| {
        w.write_record([table, &action, &row.to_string(), &col, &value]).map_err(err)
    };
    for c in &r.components {
        for (i, x) in c.mean.iter().enumerate() {
            rec("mean", String::new(), c.index, i.to_string(), x.to_string())?;
        }
        rec("beta", String::new(), c.index, String::new(), c.beta.to_string())?;
        rec("v", String::new(), c.index, String::new(), c.v.to_string())?;
        rec("d", String::new(), c.index, String::new(), c.d.to_string())?;
        let status = serde_json::to_value(c.status).expect("status serializes");
        rec("status", String::new(), c.index, String::new(), status.as_str().unwrap_or_default().to_string())?;
    }
    for (a, m) in r.transitions.iter().enumerate() {
        for (i, row) in m.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                rec("transition", a.to_string(), i, j.to_string(), p.to_string())?;
            }
        }
    }
    for (a, row) in r.q_table.iter().enumerate() {
        for (k, q) in row.iter().enumerate() {
            rec("q", a.to_string(), k, String::new(), q.to_string())?;
        }
    }
    w.flush()?;
    Ok(())
}
