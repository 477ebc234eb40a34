//! Tabular Q-learning over mixture components, its belief-weighted variant,
//! and value iteration as a reference solution.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Result, TgmError};

/// Action values q(a, z), one row per action.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub values: DMatrix<f64>,
    pub alpha: f64,
    pub gamma: f64,
}

/// Probability vector over components.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    probs: Vec<f64>,
}

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if let Some(i) = probs.iter().position(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(TgmError::NonFinite(i));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(TgmError::Precondition(format!("belief sums to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn one_hot(k: usize, z: usize) -> Self {
        let mut probs = vec![0.0; k];
        probs[z] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

impl QTable {
    pub fn new(num_actions: usize, num_states: usize, alpha: f64, gamma: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(TgmError::InvalidConfig(format!("alpha must be in (0, 1], got {alpha}")));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(TgmError::InvalidConfig(format!("gamma must be in [0, 1], got {gamma}")));
        }
        Ok(Self { values: DMatrix::zeros(num_actions, num_states), alpha, gamma })
    }

    pub fn num_actions(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_states(&self) -> usize {
        self.values.ncols()
    }

    fn check_action(&self, a: usize) -> Result<()> {
        if a >= self.num_actions() {
            return Err(TgmError::IndexOutOfRange { index: a, len: self.num_actions() });
        }
        Ok(())
    }

    /// max_a q(a, z) per state.
    pub fn state_values(&self) -> Vec<f64> {
        (0..self.num_states())
            .map(|z| self.values.column(z).max())
            .collect()
    }

    /// Standard update: q(a,s) += α [r + γ max_a' q(a',s') − q(a,s)].
    /// `next = None` marks a terminal transition.
    pub fn q_update(&mut self, state: usize, action: usize, reward: f64, next: Option<usize>) -> Result<()> {
        self.check_action(action)?;
        let k = self.num_states();
        for s in std::iter::once(state).chain(next) {
            if s >= k {
                return Err(TgmError::IndexOutOfRange { index: s, len: k });
            }
        }
        let boot = next.map_or(0.0, |s| self.values.column(s).max());
        let td = reward + self.gamma * boot - self.values[(action, state)];
        self.values[(action, state)] += self.alpha * td;
        Ok(())
    }

    /// Same as [`QTable::q_update`] but with an explicit step size.
    pub fn q_update_with_rate(
        &mut self,
        state: usize,
        action: usize,
        reward: f64,
        next: Option<usize>,
        alpha: f64,
    ) -> Result<()> {
        let saved = self.alpha;
        self.alpha = alpha;
        let out = self.q_update(state, action, reward, next);
        self.alpha = saved;
        out
    }

    /// Belief-weighted update of row `action`:
    /// q(a,z) += α b(z) [r + γ Σ_z' P(z'|z,a) max_a' q(a',z') − q(a,z)].
    ///
    /// `trans[a]` is column-stochastic with entry (to, from). All targets use
    /// the table as it was before the call. `terminal` zeroes the bootstrap.
    pub fn belief_q_update(
        &mut self,
        belief: &Belief,
        action: usize,
        reward: f64,
        trans: &[DMatrix<f64>],
        terminal: bool,
    ) -> Result<()> {
        self.check_action(action)?;
        let k = self.num_states();
        if belief.len() != k {
            return Err(TgmError::DimensionMismatch { expected: k, got: belief.len() });
        }
        let p = trans.get(action).ok_or(TgmError::IndexOutOfRange { index: action, len: trans.len() })?;
        if p.nrows() != k || p.ncols() != k {
            return Err(TgmError::DimensionMismatch { expected: k, got: p.nrows() });
        }
        let v = self.state_values();
        let old: Vec<f64> = self.values.row(action).iter().copied().collect();
        for z in 0..k {
            let b = belief.probs[z];
            if b == 0.0 {
                continue;
            }
            let boot = if terminal {
                0.0
            } else {
                let mut acc = 0.0;
                for (zp, vz) in v.iter().enumerate() {
                    acc += p[(zp, z)] * vz;
                }
                acc
            };
            let td = reward + self.gamma * boot - old[z];
            self.values[(action, z)] = old[z] + self.alpha * b * td;
        }
        Ok(())
    }

    /// Σ_z b(z) q(a, z) for each action.
    pub fn expected_values(&self, belief: &Belief) -> Vec<f64> {
        (0..self.num_actions())
            .map(|a| {
                belief
                    .probs
                    .iter()
                    .enumerate()
                    .map(|(z, &b)| b * self.values[(a, z)])
                    .sum()
            })
            .collect()
    }

    /// Greedy action under the belief; ties go to the lowest index.
    pub fn greedy(&self, belief: &Belief) -> usize {
        let ev = self.expected_values(belief);
        let mut best = 0;
        for a in 1..ev.len() {
            if ev[a] > ev[best] {
                best = a;
            }
        }
        best
    }

    /// Uniform action with probability ε, otherwise greedy on the belief.
    pub fn epsilon_greedy<R: Rng + ?Sized>(&self, belief: &Belief, epsilon: f64, rng: &mut R) -> usize {
        if rng.random::<f64>() < epsilon {
            rng.random_range(0..self.num_actions())
        } else {
            self.greedy(belief)
        }
    }

    /// Resize the state axis; new columns start at zero.
    pub fn resize(&self, new_k: usize, mapping: &[Option<usize>]) -> Result<Self> {
        if mapping.len() != self.num_states() {
            return Err(TgmError::DimensionMismatch { expected: self.num_states(), got: mapping.len() });
        }
        let mut values = DMatrix::zeros(self.num_actions(), new_k);
        for (old, m) in mapping.iter().enumerate() {
            if let Some(new) = *m {
                if new >= new_k {
                    return Err(TgmError::IndexOutOfRange { index: new, len: new_k });
                }
                values.set_column(new, &self.values.column(old));
            }
        }
        Ok(Self { values, alpha: self.alpha, gamma: self.gamma })
    }
}

/// Finite MDP. `transitions[a]` has entry (to, from); columns may sum to less
/// than one, the missing mass being termination.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    pub transitions: Vec<DMatrix<f64>>,
    /// Expected immediate reward, one row per action.
    pub rewards: DMatrix<f64>,
    pub gamma: f64,
}

/// Iterate the Bellman optimality operator to a 1e-10 sup-norm fixed point.
pub fn value_iteration_oracle(mdp: &Mdp) -> Result<DMatrix<f64>> {
    let a_count = mdp.transitions.len();
    if a_count == 0 || mdp.rewards.nrows() != a_count {
        return Err(TgmError::DimensionMismatch { expected: a_count, got: mdp.rewards.nrows() });
    }
    let s_count = mdp.rewards.ncols();
    for t in &mdp.transitions {
        if t.nrows() != s_count || t.ncols() != s_count {
            return Err(TgmError::DimensionMismatch { expected: s_count, got: t.nrows() });
        }
    }
    // Stopping at Δ < tol (1 − γ)/γ bounds the distance to the fixed point by tol.
    let tol = 1e-10;
    let stop = if mdp.gamma > 0.0 { tol * (1.0 - mdp.gamma) / mdp.gamma } else { f64::INFINITY };
    let mut q = DMatrix::zeros(a_count, s_count);
    for _ in 0..1_000_000 {
        let v: Vec<f64> = (0..s_count).map(|s| q.column(s).max()).collect();
        let mut next = mdp.rewards.clone();
        for a in 0..a_count {
            for s in 0..s_count {
                let mut acc = 0.0;
                for (sp, vs) in v.iter().enumerate() {
                    acc += mdp.transitions[a][(sp, s)] * vs;
                }
                next[(a, s)] += mdp.gamma * acc;
            }
        }
        let delta = (&next - &q).amax();
        q = next;
        if delta <= stop {
            return Ok(q);
        }
    }
    Err(TgmError::Precondition("value iteration did not converge".into()))
}
