//! Component lifecycle, discovery of new components, and construction of
//! the forget/keep index sets.
//!
//! A component starts flexible. At every checkpoint its posterior Gaussian
//! (mean m̂, precision v̂Ŵ) is compared with the previous snapshot. After
//! `theta_counts` consecutive confirmations (KL < `theta_kl`) it becomes
//! fixed for good. Observations sandwiched between fixed-backed observations
//! can then be absorbed into the prior and dropped.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::{gaussian_kl, GaussianParams};
use crate::error::{Result, TgmError};
use crate::meanshift::{mean_shift, MeanShiftConfig};
use crate::vgm::{cluster_moments, component_from_moments, ridge_for, MixtureState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentStatus {
    Flexible,
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub persistence: u32,
    pub status: ComponentStatus,
    /// Posterior Gaussian at the last checkpoint; `None` if inactive then.
    pub snapshot: Option<GaussianParams>,
}

impl LedgerEntry {
    pub fn fresh() -> Self {
        Self { persistence: 0, status: ComponentStatus::Flexible, snapshot: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerConfig {
    pub theta_kl: f64,
    pub theta_counts: u32,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        Self { theta_kl: 0.5, theta_counts: 4 }
    }
}

/// Structural changes worth logging.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StructureEvent {
    Discovered { component: usize, mean: Vec<f64>, support: usize },
    Fixed { component: usize },
    Dropped { component: usize },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComponentLedger {
    pub entries: Vec<LedgerEntry>,
}

impl ComponentLedger {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_fixed(&self, k: usize) -> bool {
        self.entries.get(k).is_some_and(|e| e.status == ComponentStatus::Fixed)
    }

    /// Compare `current` with the stored snapshots and update counts.
    ///
    /// Matching is greedy on ascending KL(prev ‖ curr); each current
    /// component can confirm at most one previous snapshot.
    pub fn checkpoint_components(
        &self,
        current: &[Option<GaussianParams>],
        cfg: &LedgerConfig,
    ) -> Result<(ComponentLedger, Vec<StructureEvent>)> {
        let mut pairs = Vec::new();
        for (i, prev) in self.entries.iter().enumerate() {
            let Some(prev) = &prev.snapshot else { continue };
            for (j, cur) in current.iter().enumerate() {
                let Some(cur) = cur else { continue };
                let kl = gaussian_kl(prev, cur)?;
                if kl < cfg.theta_kl {
                    pairs.push((kl, i, j));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut prev_used = vec![false; self.entries.len()];
        let mut matched: Vec<Option<usize>> = vec![None; current.len()];
        for (_, i, j) in pairs {
            if !prev_used[i] && matched[j].is_none() {
                prev_used[i] = true;
                matched[j] = Some(i);
            }
        }

        let len = self.entries.len().max(current.len());
        let mut entries = Vec::with_capacity(len);
        let mut events = Vec::new();
        for j in 0..len {
            let old = self.entries.get(j).cloned().unwrap_or_else(LedgerEntry::fresh);
            let snapshot = current.get(j).cloned().flatten();
            let persistence = match matched.get(j).copied().flatten() {
                Some(i) => self.entries[i].persistence + 1,
                None => 0,
            };
            let status = if old.status == ComponentStatus::Fixed || persistence >= cfg.theta_counts {
                ComponentStatus::Fixed
            } else {
                ComponentStatus::Flexible
            };
            if status == ComponentStatus::Fixed && old.status != ComponentStatus::Fixed {
                events.push(StructureEvent::Fixed { component: j });
            }
            entries.push(LedgerEntry { persistence, status, snapshot });
        }
        Ok((ComponentLedger { entries }, events))
    }

    /// Apply a component re-indexing; new slots start flexible.
    pub fn remap(&self, new_k: usize, mapping: &[Option<usize>]) -> ComponentLedger {
        let mut entries = vec![LedgerEntry::fresh(); new_k];
        for (old, m) in mapping.iter().enumerate() {
            if let (Some(new), Some(e)) = (m, self.entries.get(old)) {
                entries[*new] = e.clone();
            }
        }
        ComponentLedger { entries }
    }
}

/// Contiguous run of observations from one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    /// Global index of the first observation.
    pub start: usize,
    pub len: usize,
    /// Still being extended: its last observation has an unknown successor.
    pub open: bool,
}

impl Segment {
    /// Global indices t with a transition t → t+1 inside the segment.
    pub fn transition_sources(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len.saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ForgetPlan {
    pub observation_forget: Vec<usize>,
    pub observation_keep: Vec<usize>,
    /// Transitions are identified by their source observation index.
    pub transition_forget: Vec<usize>,
    pub transition_keep: Vec<usize>,
}

impl ForgetPlan {
    pub fn is_empty(&self) -> bool {
        self.observation_forget.is_empty() && self.transition_forget.is_empty()
    }
}

/// Build N′, N″, M′, M″ from per-observation fixed-backed flags.
pub fn plan_from_flags(fixed_backed: &[bool], segments: &[Segment]) -> Result<ForgetPlan> {
    let n = fixed_backed.len();
    let mut forget = vec![false; n];
    let mut covered = 0;
    for seg in segments {
        let end = seg.start + seg.len;
        if end > n {
            return Err(TgmError::IndexOutOfRange { index: end - 1, len: n });
        }
        covered += seg.len;
        for t in seg.start..end {
            let prev_ok = t == seg.start || fixed_backed[t - 1];
            let next_ok = if t + 1 == end { !seg.open } else { fixed_backed[t + 1] };
            forget[t] = fixed_backed[t] && prev_ok && next_ok;
        }
    }
    if covered != n {
        return Err(TgmError::InconsistentPlan(format!(
            "segments cover {covered} observations, buffer holds {n}"
        )));
    }
    let mut plan = ForgetPlan::default();
    for (t, &f) in forget.iter().enumerate() {
        if f {
            plan.observation_forget.push(t);
        } else {
            plan.observation_keep.push(t);
        }
    }
    for seg in segments {
        for t in seg.transition_sources() {
            if forget[t] || forget[t + 1] {
                plan.transition_forget.push(t);
            } else {
                plan.transition_keep.push(t);
            }
        }
    }
    plan.transition_forget.sort_unstable();
    plan.transition_keep.sort_unstable();
    Ok(plan)
}

/// An observation is fixed-backed when its argmax-responsibility component is fixed.
pub fn plan_forgetting(
    responsibilities: &nalgebra::DMatrix<f64>,
    ledger: &ComponentLedger,
    segments: &[Segment],
) -> Result<ForgetPlan> {
    let flags: Vec<bool> = responsibilities
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            row.len() > 0 && ledger.is_fixed(best)
        })
        .collect();
    plan_from_flags(&flags, segments)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscoveryConfig {
    pub meanshift: MeanShiftConfig,
    /// A point is novel when its best component sees it beyond this many
    /// Mahalanobis units.
    pub novelty_mahalanobis: f64,
    pub min_support: usize,
}

impl DiscoveryConfig {
    pub fn with_bandwidth(bandwidth: f64) -> Self {
        Self {
            meanshift: MeanShiftConfig::with_bandwidth(bandwidth),
            novelty_mahalanobis: 3.0,
            min_support: 5,
        }
    }
}

/// Indices of points that no current component explains.
pub fn novel_points(points: &[DVector<f64>], gaussians: &[GaussianParams], threshold: f64) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (n, x) in points.iter().enumerate() {
        let mut best: Option<(f64, f64)> = None;
        for g in gaussians {
            let lp = crate::distributions::log_gaussian_pdf(x, g)?;
            if best.is_none_or(|(b, _)| lp > b) {
                best = Some((lp, g.mahalanobis_sq(x)?));
            }
        }
        match best {
            Some((_, m2)) if m2 <= threshold * threshold => {}
            _ => out.push(n),
        }
    }
    Ok(out)
}

/// Shrink a small-sample covariance toward the isotropic matrix of equal
/// trace, with weight `min(1, (O + 1) / n)`. A handful of points otherwise
/// yields a needle-thin ellipse that flags most later points as novel.
pub fn shrink_covariance(cov: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let dim = cov.nrows();
    if count == 0 || dim == 0 {
        return cov.clone();
    }
    let lambda = ((dim + 1) as f64 / count as f64).min(1.0);
    let iso = cov.trace() / dim as f64;
    cov * (1.0 - lambda) + DMatrix::identity(dim, dim) * (lambda * iso)
}

/// Grow `state` with one component per well-supported cluster of novel points.
///
/// Returns the grown state (new components have all tiers equal and zero
/// responsibility columns), the old→new index map, and discovery events.
pub fn discover_components(
    points: &[DVector<f64>],
    cfg: &DiscoveryConfig,
    state: &MixtureState,
) -> Result<(MixtureState, Vec<Option<usize>>, Vec<StructureEvent>)> {
    let old_k = state.num_components();
    let identity: Vec<Option<usize>> = (0..old_k).map(Some).collect();
    let gaussians = state.posterior_gaussians()?;
    let novel = novel_points(points, &gaussians, cfg.novelty_mahalanobis)?;
    if novel.len() < cfg.min_support {
        return Ok((state.clone(), identity, vec![]));
    }
    let novel_pts: Vec<DVector<f64>> = novel.iter().map(|&n| points[n].clone()).collect();
    let assignment = mean_shift(&novel_pts, &cfg.meanshift)?;
    let sizes = assignment.cluster_sizes();
    // The tail of a known component forms a ring whose mode sits on the
    // component itself; only clusters centred away from every component count.
    let novel_centroids = novel_points(&assignment.centroids, &gaussians, cfg.novelty_mahalanobis)?;
    let accepted: Vec<usize> = novel_centroids.into_iter().filter(|&c| sizes[c] >= cfg.min_support).collect();
    if accepted.is_empty() {
        return Ok((state.clone(), identity, vec![]));
    }
    let k_total = accepted.len();
    let ridge = ridge_for(points);
    let mut new = Vec::with_capacity(accepted.len());
    let mut events = Vec::new();
    for (i, &c) in accepted.iter().enumerate() {
        let members: Vec<&DVector<f64>> = novel_pts
            .iter()
            .zip(&assignment.labels)
            .filter(|(_, &l)| l == c)
            .map(|(p, _)| p)
            .collect();
        let (mean, cov) = cluster_moments(&members, state.dim)?;
        let cov = shrink_covariance(&cov, members.len());
        let (d, comp) = component_from_moments(mean, cov, members.len(), k_total, ridge)?;
        events.push(StructureEvent::Discovered {
            component: old_k + i,
            mean: comp.m.iter().copied().collect(),
            support: members.len(),
        });
        new.push((d, comp));
    }
    let mut grown = state.clone();
    grown.add_components(new);
    Ok((grown, identity, events))
}
