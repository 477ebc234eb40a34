//! The online agent: perception, structure learning, transition learning,
//! forgetting and planning wired into one training loop.
//!
//! Every `checkpoint_period` environment steps the agent
//! 1. refits the mixture on the buffer (discovering components first if it has none),
//! 2. adds components for clusters of poorly explained observations and refits,
//! 3. drops flexible components that explain almost nothing,
//! 4. updates the component ledger,
//! 5. recomputes the transition posterior from all buffered triplets,
//! 6. replays the buffered triplets through the belief Q-update,
//! 7. plans and applies forgetting.

pub mod buffer;
pub mod eval;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use buffer::{ExperienceBuffer, StepRecord};

use crate::env::{Action, Maze, NUM_ACTIONS};
use crate::error::{Result, TgmError};
use crate::meanshift::MeanShiftConfig;
use crate::planner::{Belief, QTable};
use crate::structure::{
    discover_components, plan_forgetting, ComponentLedger, DiscoveryConfig, ForgetPlan, LedgerConfig, StructureEvent,
};
use crate::transition::{TransitionSample, TransitionTensor};
use crate::vgm::{compute_stats_indexed, fit, FitConfig, MixtureState, PosteriorCache, EPS_MASS};

/// When belief Q-updates run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QMode {
    /// Replay all buffered triplets once per checkpoint.
    Batched,
    /// Update after every environment step with the current model.
    Online,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub checkpoint_period: usize,
    pub theta_kl: f64,
    pub theta_counts: u32,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episodes over which ε decays linearly.
    pub epsilon_decay_fraction: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Mean-shift bandwidth θ_b, in cell units.
    pub bandwidth: f64,
    pub novelty_mahalanobis: f64,
    pub min_support: usize,
    pub vgm_max_sweeps: usize,
    pub vgm_tol: f64,
    /// Flexible components with less buffered mass than this are removed.
    pub prune_mass: f64,
    pub q_mode: QMode,
    pub env: crate::env::EnvConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            checkpoint_period: 100,
            theta_kl: 0.5,
            theta_counts: 4,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.5,
            alpha: 0.1,
            gamma: 0.95,
            bandwidth: 0.5,
            novelty_mahalanobis: 3.0,
            min_support: 3,
            vgm_max_sweeps: 50,
            vgm_tol: 1e-6,
            prune_mass: 0.5,
            q_mode: QMode::Batched,
            env: crate::env::EnvConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TgmError::InvalidConfig(msg));
        if self.checkpoint_period == 0 {
            return bad("checkpoint_period must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0, 1], got {}", self.gamma));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must be in (0, 1], got {}", self.alpha));
        }
        for (name, e) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&e) {
                return bad(format!("{name} must be in [0, 1], got {e}"));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay_fraction) {
            return bad("epsilon_decay_fraction must be in [0, 1]".into());
        }
        if !(self.theta_kl > 0.0) || self.theta_counts == 0 {
            return bad("theta_kl must be positive and theta_counts at least 1".into());
        }
        if !(self.novelty_mahalanobis > 0.0) || self.min_support == 0 {
            return bad("novelty_mahalanobis must be positive and min_support at least 1".into());
        }
        if self.vgm_max_sweeps == 0 || !(self.vgm_tol >= 0.0) || !(self.prune_mass >= 0.0) {
            return bad("vgm_max_sweeps, vgm_tol and prune_mass out of range".into());
        }
        self.meanshift().validate()?;
        self.env.validate()
    }

    pub fn meanshift(&self) -> MeanShiftConfig {
        MeanShiftConfig::with_bandwidth(self.bandwidth)
    }

    pub fn discovery(&self) -> DiscoveryConfig {
        DiscoveryConfig {
            meanshift: self.meanshift(),
            novelty_mahalanobis: self.novelty_mahalanobis,
            min_support: self.min_support,
        }
    }

    pub fn ledger(&self) -> LedgerConfig {
        LedgerConfig { theta_kl: self.theta_kl, theta_counts: self.theta_counts }
    }

    /// Linear decay from `epsilon_start` to `epsilon_end` over the first
    /// `epsilon_decay_fraction` of training, constant afterwards.
    pub fn epsilon_at(&self, episode: usize, episodes: usize) -> f64 {
        let horizon = self.epsilon_decay_fraction * episodes as f64;
        if horizon <= 0.0 {
            return self.epsilon_end;
        }
        let frac = (episode as f64 / horizon).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Per-episode metrics record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub steps: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    #[serde(rename = "K_active")]
    pub k_active: usize,
    pub vfe: f64,
    pub tv_distance: f64,
    /// Whether the episode ended by eating at the goal.
    pub success: bool,
}

/// A structural event stamped with the environment step at which it happened.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StampedEvent {
    pub step: u64,
    #[serde(flatten)]
    pub event: StructureEvent,
}

/// Transition samples for the given source indices from responsibility rows.
pub fn transition_samples(buffer: &ExperienceBuffer, resp: &DMatrix<f64>, sources: &[usize]) -> Result<Vec<TransitionSample>> {
    sources
        .iter()
        .map(|&t| {
            let rec = buffer.steps.get(t).copied().flatten().ok_or_else(|| {
                TgmError::InconsistentPlan(format!("observation {t} has no outgoing transition"))
            })?;
            if t + 1 >= resp.nrows() {
                return Err(TgmError::IndexOutOfRange { index: t + 1, len: resp.nrows() });
            }
            Ok(TransitionSample {
                r0: resp.row(t).iter().copied().collect(),
                r1: resp.row(t + 1).iter().copied().collect(),
                action: rec.action,
            })
        })
        .collect()
}

fn check_plan(buffer: &ExperienceBuffer, plan: &ForgetPlan) -> Result<()> {
    let n = buffer.len();
    let mut seen = vec![0u8; n];
    for &t in plan.observation_forget.iter().chain(&plan.observation_keep) {
        if t >= n {
            return Err(TgmError::InconsistentPlan(format!("observation {t} out of range")));
        }
        seen[t] += 1;
    }
    if seen.iter().any(|&s| s != 1) {
        return Err(TgmError::InconsistentPlan("observation sets do not partition the buffer".into()));
    }
    let mut forget = vec![false; n];
    for &t in &plan.observation_forget {
        forget[t] = true;
    }
    let mut sources = buffer.transition_sources();
    let mut listed: Vec<usize> = plan.transition_forget.iter().chain(&plan.transition_keep).copied().collect();
    sources.sort_unstable();
    listed.sort_unstable();
    if sources != listed {
        return Err(TgmError::InconsistentPlan("transition sets do not partition the buffer".into()));
    }
    for &t in &plan.transition_keep {
        if forget[t] || forget[t + 1] {
            return Err(TgmError::InconsistentPlan(format!("kept transition {t} touches a forgotten observation")));
        }
    }
    Ok(())
}

/// Absorb the forgotten observations and transitions into the priors, then
/// drop them from the buffer. Responsibilities stay frozen.
pub fn apply_forgetting(
    buffer: &ExperienceBuffer,
    plan: &ForgetPlan,
    state: &MixtureState,
    tensor: &TransitionTensor,
) -> Result<(ExperienceBuffer, MixtureState, TransitionTensor)> {
    check_plan(buffer, plan)?;
    if state.num_points() != buffer.len() {
        return Err(TgmError::InconsistentPlan(format!(
            "{} responsibility rows for {} observations",
            state.num_points(),
            buffer.len()
        )));
    }
    let forgotten = transition_samples(buffer, &state.responsibilities, &plan.transition_forget)?;
    let kept = transition_samples(buffer, &state.responsibilities, &plan.transition_keep)?;
    let tensor = tensor.absorb_forgotten(&forgotten)?.compute_posterior(&kept)?;

    let mut state = state.clone();
    state.absorb_and_drop(&buffer.observations, &plan.observation_forget)?;
    let mut buffer = buffer.clone();
    buffer.drop_forgotten(plan)?;
    let all: Vec<usize> = (0..buffer.len()).collect();
    let keep_stats = compute_stats_indexed(&buffer.observations, &state.responsibilities, &all, state.dim)?;
    state.posterior = state.empirical.updated_with(&keep_stats)?;
    Ok((buffer, state, tensor))
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub cfg: AgentConfig,
    pub state: MixtureState,
    pub tensor: TransitionTensor,
    pub q: QTable,
    pub ledger: ComponentLedger,
    pub buffer: ExperienceBuffer,
    pub total_steps: u64,
    pub episodes_done: usize,
    pub last_vfe: f64,
    pub rng: ChaCha8Rng,
    cache: Option<PosteriorCache>,
    trans: Vec<DMatrix<f64>>,
    events: Vec<StampedEvent>,
}

impl Agent {
    pub fn new(cfg: AgentConfig, dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let q = QTable::new(NUM_ACTIONS, 0, cfg.alpha, cfg.gamma)?;
        Ok(Self {
            state: MixtureState::empty(dim),
            tensor: TransitionTensor::new(NUM_ACTIONS, 0),
            q,
            ledger: ComponentLedger::default(),
            buffer: ExperienceBuffer::default(),
            total_steps: 0,
            episodes_done: 0,
            last_vfe: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cache: None,
            trans: vec![],
            events: vec![],
            cfg,
        })
    }

    /// Reassemble an agent from stored parts; caches are rebuilt.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        cfg: AgentConfig,
        state: MixtureState,
        tensor: TransitionTensor,
        q: QTable,
        ledger: ComponentLedger,
        total_steps: u64,
        last_vfe: f64,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        state.validate()?;
        let k = state.num_components();
        if tensor.num_states() != k || q.num_states() != k || ledger.len() > k {
            return Err(TgmError::DimensionMismatch { expected: k, got: tensor.num_states() });
        }
        let mut agent = Self {
            cfg,
            state,
            tensor,
            q,
            ledger,
            buffer: ExperienceBuffer::default(),
            total_steps,
            episodes_done: 0,
            last_vfe,
            rng,
            cache: None,
            trans: vec![],
            events: vec![],
        };
        agent.refresh_caches()?;
        Ok(agent)
    }

    pub fn num_components(&self) -> usize {
        self.state.num_components()
    }

    /// Components that are fixed or currently explain buffered data.
    pub fn active_components(&self) -> Vec<bool> {
        let masses = self.state.masses();
        (0..self.num_components())
            .map(|k| self.ledger.is_fixed(k) || masses.get(k).is_some_and(|&m| m > self.cfg.prune_mass))
            .collect()
    }

    pub fn k_active(&self) -> usize {
        self.active_components().iter().filter(|&&a| a).count()
    }

    pub fn drain_events(&mut self) -> Vec<StampedEvent> {
        std::mem::take(&mut self.events)
    }

    fn refresh_caches(&mut self) -> Result<()> {
        if self.num_components() == 0 {
            self.cache = None;
            self.trans.clear();
        } else {
            self.cache = Some(PosteriorCache::new(&self.state)?);
            self.trans = self.tensor.expected_transitions();
        }
        Ok(())
    }

    /// Posterior responsibilities of one observation, if any component exists.
    pub fn belief(&self, obs: &DVector<f64>) -> Result<Option<Belief>> {
        match &self.cache {
            None => Ok(None),
            Some(c) => Ok(Some(Belief::new(c.responsibility(obs)?)?)),
        }
    }

    pub fn act(&mut self, obs: &DVector<f64>, epsilon: f64) -> Result<usize> {
        Ok(match self.belief(obs)? {
            Some(b) => self.q.epsilon_greedy(&b, epsilon, &mut self.rng),
            None => self.rng.random_range(0..NUM_ACTIONS),
        })
    }

    fn stamp(&mut self, events: Vec<StructureEvent>) {
        let step = self.total_steps;
        for event in events {
            info!("step {step}: {event:?}");
            self.events.push(StampedEvent { step, event });
        }
    }

    fn apply_mapping(&mut self, mapping: &[Option<usize>]) -> Result<()> {
        let k = self.num_components();
        self.tensor = self.tensor.resize(k, mapping)?;
        self.q = self.q.resize(k, mapping)?;
        self.ledger = self.ledger.remap(k, mapping);
        Ok(())
    }

    fn refit(&mut self) -> Result<()> {
        let points = &self.buffer.observations;
        let state = self.state.update_responsibilities(points)?;
        let cfg = FitConfig { max_sweeps: self.cfg.vgm_max_sweeps, tol_per_point: self.cfg.vgm_tol };
        let out = fit(&state, points, &vec![false; points.len()], cfg)?;
        self.last_vfe = out.vfe_trace.last().copied().unwrap_or(0.0);
        self.state = out.state;
        Ok(())
    }

    fn discover(&mut self) -> Result<bool> {
        let (grown, mapping, events) = discover_components(&self.buffer.observations, &self.cfg.discovery(), &self.state)?;
        if events.is_empty() {
            return Ok(false);
        }
        self.state = grown;
        self.apply_mapping(&mapping)?;
        self.stamp(events);
        Ok(true)
    }

    fn prune(&mut self) -> Result<bool> {
        let masses = self.state.masses();
        let keep: Vec<bool> = (0..self.num_components())
            .map(|k| self.ledger.is_fixed(k) || masses[k] >= self.cfg.prune_mass)
            .collect();
        if keep.iter().all(|&k| k) {
            return Ok(false);
        }
        let dropped: Vec<StructureEvent> = keep
            .iter()
            .enumerate()
            .filter(|(_, &k)| !k)
            .map(|(component, _)| StructureEvent::Dropped { component })
            .collect();
        let mapping = self.state.retain_components(&keep);
        self.apply_mapping(&mapping)?;
        self.stamp(dropped);
        Ok(true)
    }

    /// The periodic model update. Safe to call at any time.
    pub fn update_model(&mut self) -> Result<()> {
        if self.buffer.is_empty() {
            return Ok(());
        }
        // Discover against the previous posterior first, so a new cell is not
        // swallowed by a neighbouring component stretching during the refit.
        if !self.discover()? && self.num_components() == 0 {
            return Ok(());
        }
        self.refit()?;
        if self.discover()? {
            self.refit()?;
        }
        if self.prune()? {
            if self.num_components() == 0 {
                self.refresh_caches()?;
                return Ok(());
            }
            self.refit()?;
        }

        let gaussians = self.state.posterior_gaussians()?;
        let current: Vec<_> = gaussians.into_iter().map(Some).collect();
        let (ledger, events) = self.ledger.checkpoint_components(&current, &self.cfg.ledger())?;
        self.ledger = ledger;
        self.stamp(events);

        let sources = self.buffer.transition_sources();
        let samples = transition_samples(&self.buffer, &self.state.responsibilities, &sources)?;
        self.tensor = self.tensor.compute_posterior(&samples)?;
        self.refresh_caches()?;

        if self.cfg.q_mode == QMode::Batched {
            for (t, s) in sources.iter().zip(&samples) {
                let rec = self.buffer.steps[*t].expect("transition source has a step");
                let belief = Belief::new(s.r0.clone())?;
                self.q.belief_q_update(&belief, rec.action, rec.reward, &self.trans, rec.terminal)?;
            }
        }

        let plan = plan_forgetting(&self.state.responsibilities, &self.ledger, &self.buffer.segments)?;
        if !plan.is_empty() {
            let (buffer, state, tensor) = apply_forgetting(&self.buffer, &plan, &self.state, &self.tensor)?;
            debug!(
                "forgot {} observations and {} transitions, {} remain",
                plan.observation_forget.len(),
                plan.transition_forget.len(),
                buffer.len()
            );
            self.buffer = buffer;
            self.state = state;
            self.tensor = tensor;
            self.refresh_caches()?;
        }
        Ok(())
    }

    fn after_step(&mut self) -> Result<()> {
        self.total_steps += 1;
        if self.total_steps % self.cfg.checkpoint_period as u64 == 0 {
            self.update_model()?;
        }
        Ok(())
    }

    /// Run one episode. With `learn` off the agent neither stores data nor updates.
    pub fn run_episode(&mut self, maze: &Maze, epsilon: f64, learn: bool) -> Result<(usize, f64, bool)> {
        let (mut env_state, mut obs) = maze.reset(&mut self.rng);
        if learn {
            self.buffer.begin_segment(obs.clone());
        }
        let mut total = 0.0;
        let mut success = false;
        while !env_state.done {
            let belief = self.belief(&obs)?;
            let action = match &belief {
                Some(b) => self.q.epsilon_greedy(b, epsilon, &mut self.rng),
                None => self.rng.random_range(0..NUM_ACTIONS),
            };
            let out = maze.step(&env_state, Action::from_index(action)?, &mut self.rng)?;
            total += out.reward;
            success |= out.terminal;
            if learn {
                let record = StepRecord { action, reward: out.reward, terminal: out.terminal };
                self.buffer.push_step(record, out.observation.clone())?;
                if out.state.done {
                    self.buffer.close_segment();
                }
                if self.cfg.q_mode == QMode::Online {
                    if let (Some(b), Some(_)) = (&belief, &self.cache) {
                        self.q.belief_q_update(b, action, out.reward, &self.trans, out.terminal)?;
                    }
                }
                self.after_step()?;
            }
            env_state = out.state;
            obs = out.observation;
        }
        Ok((env_state.steps, total, success))
    }
}

/// Train a fresh agent; `on_episode` sees every episode's metrics.
pub fn train<F>(maze: &Maze, cfg: AgentConfig, episodes: usize, seed: u64, on_episode: F) -> Result<Agent>
where
    F: FnMut(&EpisodeMetrics, &mut Agent) -> Result<()>,
{
    let mut cfg = cfg;
    cfg.env = maze.cfg;
    let mut agent = Agent::new(cfg, 2, seed)?;
    continue_training(&mut agent, maze, episodes, on_episode)?;
    Ok(agent)
}

/// Run episodes until `agent.episodes_done == episodes`. The ε schedule is
/// laid out over `episodes`, so a resumed run matches an uninterrupted one.
pub fn continue_training<F>(agent: &mut Agent, maze: &Maze, episodes: usize, mut on_episode: F) -> Result<()>
where
    F: FnMut(&EpisodeMetrics, &mut Agent) -> Result<()>,
{
    while agent.episodes_done < episodes {
        let episode = agent.episodes_done;
        let epsilon = agent.cfg.epsilon_at(episode, episodes);
        let (steps, episode_return, success) = agent.run_episode(maze, epsilon, true)?;
        agent.episodes_done += 1;
        let metrics = EpisodeMetrics {
            episode,
            steps,
            episode_return,
            k_active: agent.k_active(),
            vfe: agent.last_vfe,
            tv_distance: eval::agent_tv(agent, &maze.spec),
            success,
        };
        on_episode(&metrics, agent)?;
    }
    Ok(())
}

/// Greedy (ε = 0) rollouts without learning: (success rate, mean steps on success).
pub fn evaluate_greedy(agent: &mut Agent, maze: &Maze, episodes: usize) -> Result<(f64, f64)> {
    let mut successes = 0usize;
    let mut steps_total = 0usize;
    for _ in 0..episodes {
        let (steps, _, success) = agent.run_episode(maze, 0.0, false)?;
        if success {
            successes += 1;
            steps_total += steps;
        }
    }
    let rate = if episodes == 0 { 0.0 } else { successes as f64 / episodes as f64 };
    let mean_steps = if successes == 0 { f64::NAN } else { steps_total as f64 / successes as f64 };
    Ok((rate, mean_steps))
}

/// Mass of each component over the buffer, exposed for reporting.
pub fn component_masses(agent: &Agent) -> Vec<f64> {
    agent.state.masses().into_iter().map(|m| if m < EPS_MASS { 0.0 } else { m }).collect()
}
