//! Observations grouped into episode segments, with the action, reward and
//! terminal flag that link each observation to its successor.

use nalgebra::DVector;

use crate::error::{Result, TgmError};
use crate::structure::{ForgetPlan, Segment};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub action: usize,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperienceBuffer {
    pub observations: Vec<DVector<f64>>,
    /// `steps[t]` links observation t to t + 1; `None` at segment ends.
    pub steps: Vec<Option<StepRecord>>,
    pub segments: Vec<Segment>,
}

impl ExperienceBuffer {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Start a new episode segment with its first observation.
    pub fn begin_segment(&mut self, obs: DVector<f64>) {
        self.close_segment();
        self.segments.push(Segment { start: self.len(), len: 1, open: true });
        self.observations.push(obs);
        self.steps.push(None);
    }

    /// Record the step taken from the latest observation and its outcome.
    pub fn push_step(&mut self, record: StepRecord, next_obs: DVector<f64>) -> Result<()> {
        let seg = self
            .segments
            .last_mut()
            .filter(|s| s.open)
            .ok_or_else(|| TgmError::Precondition("no open segment".into()))?;
        seg.len += 1;
        let last = self.steps.len() - 1;
        self.steps[last] = Some(record);
        self.observations.push(next_obs);
        self.steps.push(None);
        Ok(())
    }

    pub fn close_segment(&mut self) {
        if let Some(seg) = self.segments.last_mut() {
            seg.open = false;
        }
    }

    /// Source indices of all stored transitions, in order.
    pub fn transition_sources(&self) -> Vec<usize> {
        self.segments.iter().flat_map(|s| s.transition_sources()).collect()
    }

    /// Physically remove the forgotten observations. Segments are cut where
    /// observations disappear; each remaining piece starts like a new trial.
    pub fn drop_forgotten(&mut self, plan: &ForgetPlan) -> Result<()> {
        let n = self.len();
        let mut forget = vec![false; n];
        for &t in &plan.observation_forget {
            if t >= n {
                return Err(TgmError::InconsistentPlan(format!("observation {t} not in buffer of {n}")));
            }
            forget[t] = true;
        }
        let mut observations = Vec::with_capacity(n - plan.observation_forget.len());
        let mut steps = Vec::with_capacity(observations.capacity());
        let mut segments = Vec::new();
        for seg in &self.segments {
            let end = seg.start + seg.len;
            let mut current: Option<Segment> = None;
            for t in seg.start..end {
                if forget[t] {
                    if let Some(s) = current.take() {
                        segments.push(s);
                    }
                    continue;
                }
                let link = if t + 1 < end && !forget[t + 1] { self.steps[t] } else { None };
                match current.as_mut() {
                    Some(s) => s.len += 1,
                    None => current = Some(Segment { start: observations.len(), len: 1, open: false }),
                }
                observations.push(self.observations[t].clone());
                steps.push(link);
            }
            if let Some(mut s) = current {
                s.open = seg.open && !forget[end - 1];
                segments.push(s);
            }
        }
        self.observations = observations;
        self.steps = steps;
        self.segments = segments;
        Ok(())
    }
}
