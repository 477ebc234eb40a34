//! Dirichlet-categorical transition model over mixture components.
//!
//! For each action the tensor holds a K×K matrix of Dirichlet counts whose
//! columns are indexed by the *from* component and rows by the *to*
//! component, so every column is a distribution over next states. Storage is
//! `[action][to][from]`; use [`TransitionTensor::count`] rather than raw
//! indexing.

use nalgebra::DMatrix;

use crate::error::{Result, TgmError};

/// Which parameter tier to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountTier {
    Prior,
    Empirical,
    Posterior,
}

/// One (r_t, a_t, r_{t+1}) triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    pub r0: Vec<f64>,
    pub r1: Vec<f64>,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTensor {
    num_actions: usize,
    k: usize,
    prior: Vec<f64>,
    empirical: Vec<f64>,
    posterior: Vec<f64>,
}

impl TransitionTensor {
    /// All three tiers filled with ones.
    pub fn new(num_actions: usize, k: usize) -> Self {
        let ones = vec![1.0; num_actions * k * k];
        Self {
            num_actions,
            k,
            prior: ones.clone(),
            empirical: ones.clone(),
            posterior: ones,
        }
    }

    /// Rebuild from raw `[action][to][from]` buffers.
    pub fn from_parts(
        num_actions: usize,
        k: usize,
        prior: Vec<f64>,
        empirical: Vec<f64>,
        posterior: Vec<f64>,
    ) -> Result<Self> {
        let len = num_actions * k * k;
        for t in [&prior, &empirical, &posterior] {
            if t.len() != len {
                return Err(TgmError::DimensionMismatch { expected: len, got: t.len() });
            }
            if let Some(i) = t.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(TgmError::InvalidDirichlet { index: i, value: t[i] });
            }
        }
        Ok(Self { num_actions, k, prior, empirical, posterior })
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_states(&self) -> usize {
        self.k
    }

    fn idx(&self, action: usize, from: usize, to: usize) -> usize {
        (action * self.k + to) * self.k + from
    }

    fn tier(&self, tier: CountTier) -> &[f64] {
        match tier {
            CountTier::Prior => &self.prior,
            CountTier::Empirical => &self.empirical,
            CountTier::Posterior => &self.posterior,
        }
    }

    /// Raw `[action][to][from]` buffer of a tier.
    pub fn raw(&self, tier: CountTier) -> &[f64] {
        self.tier(tier)
    }

    pub fn count(&self, tier: CountTier, action: usize, from: usize, to: usize) -> f64 {
        self.tier(tier)[self.idx(action, from, to)]
    }

    fn check_sample(&self, s: &TransitionSample) -> Result<()> {
        if s.action >= self.num_actions {
            return Err(TgmError::IndexOutOfRange { index: s.action, len: self.num_actions });
        }
        for r in [&s.r0, &s.r1] {
            if r.len() != self.k {
                return Err(TgmError::DimensionMismatch { expected: self.k, got: r.len() });
            }
        }
        Ok(())
    }

    fn accumulate(&self, base: &[f64], samples: &[TransitionSample]) -> Result<Vec<f64>> {
        let mut out = base.to_vec();
        for s in samples {
            self.check_sample(s)?;
            for (from, &p0) in s.r0.iter().enumerate() {
                if p0 == 0.0 {
                    continue;
                }
                for (to, &p1) in s.r1.iter().enumerate() {
                    let i = self.idx(s.action, from, to);
                    out[i] += p0 * p1;
                }
            }
        }
        Ok(out)
    }

    /// Empirical ← prior + forgotten triplets, then prior ← empirical.
    pub fn absorb_forgotten(&self, samples: &[TransitionSample]) -> Result<Self> {
        let empirical = self.accumulate(&self.prior, samples)?;
        Ok(Self {
            prior: empirical.clone(),
            empirical,
            ..self.clone()
        })
    }

    /// Posterior ← empirical + kept triplets.
    pub fn compute_posterior(&self, samples: &[TransitionSample]) -> Result<Self> {
        Ok(Self {
            posterior: self.accumulate(&self.empirical, samples)?,
            ..self.clone()
        })
    }

    /// Posterior-mean transition matrix M with M[(to, from)] = P(to | from, action).
    pub fn expected_transition(&self, action: usize) -> Result<DMatrix<f64>> {
        if action >= self.num_actions {
            return Err(TgmError::IndexOutOfRange { index: action, len: self.num_actions });
        }
        let k = self.k;
        let mut m = DMatrix::zeros(k, k);
        for from in 0..k {
            let total: f64 = (0..k).map(|to| self.count(CountTier::Posterior, action, from, to)).sum();
            for to in 0..k {
                m[(to, from)] = self.count(CountTier::Posterior, action, from, to) / total;
            }
        }
        Ok(m)
    }

    pub fn expected_transitions(&self) -> Vec<DMatrix<f64>> {
        (0..self.num_actions)
            .map(|a| self.expected_transition(a).expect("action in range"))
            .collect()
    }

    /// Re-index components. `mapping[old]` is the new index or `None` to drop;
    /// new slots start at one.
    pub fn resize(&self, new_k: usize, mapping: &[Option<usize>]) -> Result<Self> {
        if mapping.len() != self.k {
            return Err(TgmError::DimensionMismatch { expected: self.k, got: mapping.len() });
        }
        let mut seen = vec![false; new_k];
        for &m in mapping.iter().flatten() {
            if m >= new_k {
                return Err(TgmError::IndexOutOfRange { index: m, len: new_k });
            }
            if seen[m] {
                return Err(TgmError::Precondition(format!("mapping sends two components to {m}")));
            }
            seen[m] = true;
        }
        let mut out = Self::new(self.num_actions, new_k);
        for a in 0..self.num_actions {
            for (from, nf) in mapping.iter().enumerate() {
                let Some(nf) = *nf else { continue };
                for (to, nt) in mapping.iter().enumerate() {
                    let Some(nt) = *nt else { continue };
                    let src = self.idx(a, from, to);
                    let dst = out.idx(a, nf, nt);
                    out.prior[dst] = self.prior[src];
                    out.empirical[dst] = self.empirical[src];
                    out.posterior[dst] = self.posterior[src];
                }
            }
        }
        Ok(out)
    }
}
