//! Gridworld maze with noisy continuous position observations.
//!
//! Maze text uses `W` for walls, `.` for floor, `S` for the start and `G`
//! for the goal; the border must be wall. Observations are the (row, col)
//! center of the agent's cell plus isotropic Gaussian noise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TgmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Eat,
}

pub const NUM_ACTIONS: usize = 5;

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::Eat];

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(TgmError::IndexOutOfRange { index: i, len: NUM_ACTIONS })
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Eat => (0, 0),
        }
    }
}

pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MazeSpec {
    pub rows: usize,
    pub cols: usize,
    walls: Vec<bool>,
    pub start: Cell,
    pub goal: Cell,
}

/// The six transcribed mazes, by name.
pub const FIXTURES: [(&str, &str); 6] = [
    ("fig12a", include_str!("../../../fixtures/fig12a.maze")),
    ("fig12b", include_str!("../../../fixtures/fig12b.maze")),
    ("fig12c", include_str!("../../../fixtures/fig12c.maze")),
    ("fig12d", include_str!("../../../fixtures/fig12d.maze")),
    ("fig12e", include_str!("../../../fixtures/fig12e.maze")),
    ("fig12f", include_str!("../../../fixtures/fig12f.maze")),
];

impl MazeSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).filter(|l| !l.trim().is_empty()).collect();
        if lines.is_empty() {
            return Err(TgmError::MazeParse("empty maze".into()));
        }
        let cols = lines[0].chars().count();
        let rows = lines.len();
        let mut walls = Vec::with_capacity(rows * cols);
        let mut start = None;
        let mut goal = None;
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(TgmError::MazeParse(format!(
                    "row {r} has {} columns, expected {cols}",
                    line.chars().count()
                )));
            }
            for (c, ch) in line.chars().enumerate() {
                let wall = match ch {
                    'W' => true,
                    '.' => false,
                    'S' | 'G' => {
                        let slot = if ch == 'S' { &mut start } else { &mut goal };
                        if slot.replace((r, c)).is_some() {
                            return Err(TgmError::MazeParse(format!("more than one '{ch}'")));
                        }
                        false
                    }
                    other => return Err(TgmError::MazeParse(format!("unexpected character {other:?} at ({r}, {c})"))),
                };
                let border = r == 0 || c == 0 || r + 1 == rows || c + 1 == cols;
                if border && !wall {
                    return Err(TgmError::MazeParse(format!("border cell ({r}, {c}) is not a wall")));
                }
                walls.push(wall);
            }
        }
        let start = start.ok_or_else(|| TgmError::MazeParse("missing start 'S'".into()))?;
        let goal = goal.ok_or_else(|| TgmError::MazeParse("missing goal 'G'".into()))?;
        Ok(Self { rows, cols, walls, start, goal })
    }

    pub fn fixture(name: &str) -> Result<Self> {
        let text = FIXTURES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| TgmError::MazeParse(format!("unknown fixture {name}")))?;
        Self::parse(text)
    }

    pub fn is_floor(&self, cell: Cell) -> bool {
        cell.0 < self.rows && cell.1 < self.cols && !self.walls[cell.0 * self.cols + cell.1]
    }

    /// Floor cells in row-major order.
    pub fn floor_cells(&self) -> Vec<Cell> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .filter(|&c| self.is_floor(c))
            .collect()
    }

    pub fn cell_index(&self, cell: Cell) -> Option<usize> {
        self.floor_cells().iter().position(|&c| c == cell)
    }

    /// Deterministic successor cell; bumping into a wall stays put.
    pub fn next_cell(&self, cell: Cell, action: Action) -> Cell {
        let (dr, dc) = action.delta();
        let r = cell.0 as isize + dr;
        let c = cell.1 as isize + dc;
        if r < 0 || c < 0 {
            return cell;
        }
        let target = (r as usize, c as usize);
        if self.is_floor(target) {
            target
        } else {
            cell
        }
    }

    pub fn cell_center(cell: Cell) -> DVector<f64> {
        DVector::from_vec(vec![cell.0 as f64, cell.1 as f64])
    }
}

/// Per-action 0/1 matrices over floor cells with entry (to, from).
///
/// Eating at the goal ends the episode; it is encoded as staying in place.
pub fn true_transition_matrices(spec: &MazeSpec) -> Vec<DMatrix<f64>> {
    let cells = spec.floor_cells();
    let n = cells.len();
    Action::ALL
        .iter()
        .map(|&a| {
            let mut m = DMatrix::zeros(n, n);
            for (from, &cell) in cells.iter().enumerate() {
                let to = cells.iter().position(|&c| c == spec.next_cell(cell, a)).expect("floor successor");
                m[(to, from)] = 1.0;
            }
            m
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub sigma_obs: f64,
    pub reward_goal: f64,
    pub reward_step: f64,
    pub max_steps: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { sigma_obs: 0.1, reward_goal: 1.0, reward_step: 0.0, max_steps: 200 }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_obs >= 0.0) || !self.sigma_obs.is_finite() {
            return Err(TgmError::InvalidConfig(format!("sigma_obs must be >= 0, got {}", self.sigma_obs)));
        }
        if self.max_steps == 0 {
            return Err(TgmError::InvalidConfig("max_steps must be at least 1".into()));
        }
        if !self.reward_goal.is_finite() || !self.reward_step.is_finite() {
            return Err(TgmError::InvalidConfig("rewards must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvState {
    pub position: Cell,
    pub steps: usize,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub observation: DVector<f64>,
    pub reward: f64,
    /// The goal was eaten: no bootstrapping past this step.
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Maze {
    pub spec: MazeSpec,
    pub cfg: EnvConfig,
}

impl Maze {
    pub fn new(spec: MazeSpec, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { spec, cfg })
    }

    pub fn observe<R: Rng + ?Sized>(&self, cell: Cell, rng: &mut R) -> DVector<f64> {
        let mut x = MazeSpec::cell_center(cell);
        if self.cfg.sigma_obs > 0.0 {
            let noise = Normal::new(0.0, self.cfg.sigma_obs).expect("validated sigma");
            for v in x.iter_mut() {
                *v += noise.sample(rng);
            }
        }
        x
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> (EnvState, DVector<f64>) {
        let state = EnvState { position: self.spec.start, steps: 0, done: false };
        (state, self.observe(state.position, rng))
    }

    pub fn step<R: Rng + ?Sized>(&self, state: &EnvState, action: Action, rng: &mut R) -> Result<StepOutcome> {
        if state.done {
            return Err(TgmError::EpisodeDone);
        }
        let position = self.spec.next_cell(state.position, action);
        let terminal = action == Action::Eat && position == self.spec.goal;
        let steps = state.steps + 1;
        let reward = if terminal { self.cfg.reward_goal } else { self.cfg.reward_step };
        let next = EnvState { position, steps, done: terminal || steps >= self.cfg.max_steps };
        Ok(StepOutcome { state: next, observation: self.observe(position, rng), reward, terminal })
    }
}
