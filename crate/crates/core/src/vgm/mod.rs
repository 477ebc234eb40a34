//! Variational Gaussian mixture with Normal-Wishart / Dirichlet priors.
//!
//! Parameters live in three tiers. The prior carries everything already
//! absorbed from forgotten data. The empirical prior is the posterior given
//! only the points about to be forgotten (N′). The posterior adds the kept
//! points (N″) on top of the empirical prior. Because the family is
//! conjugate, prior → empirical → posterior equals prior → posterior on
//! N′ ∪ N″ when responsibilities are held fixed.

pub mod vfe;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::distributions::{
    self, digamma, expect_ln_det_precision_from, linalg, GaussianParams, WishartParams,
};
use crate::error::{Result, TgmError};
use crate::meanshift::ClusterAssignment;

pub use vfe::{compute_vfe, VfeTerms};

/// Below this responsibility mass a component counts as empty.
pub const EPS_MASS: f64 = 1e-10;

/// Normal-Wishart parameters (m, β, W, v) of one component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentParams {
    pub m: DVector<f64>,
    pub beta: f64,
    pub w: DMatrix<f64>,
    pub v: f64,
}

impl ComponentParams {
    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(TgmError::Precondition(format!("beta must be positive, got {}", self.beta)));
        }
        if self.w.nrows() != self.dim() {
            return Err(TgmError::DimensionMismatch { expected: self.dim(), got: self.w.nrows() });
        }
        self.wishart().map(|_| ())
    }

    pub fn wishart(&self) -> Result<WishartParams> {
        WishartParams::new(self.w.clone(), self.v)
    }

    /// Gaussian at the point estimates: mean m, precision E[Λ] = vW.
    pub fn plug_in_gaussian(&self) -> Result<GaussianParams> {
        GaussianParams::new(self.m.clone(), &self.w * self.v)
    }

    /// Conjugate update with the statistics of `n` points (mean `xbar`, covariance `s`).
    fn absorb(&self, n: f64, xbar: &DVector<f64>, s: &DMatrix<f64>) -> Result<Self> {
        let beta = self.beta + n;
        let diff = xbar - &self.m;
        let w_inv = linalg::inverse_spd(&self.w)?
            + s * n
            + (&diff * diff.transpose()) * (self.beta * n / beta);
        Ok(Self {
            m: (&self.m * self.beta + xbar * n) / beta,
            beta,
            w: linalg::inverse_spd(&w_inv)?,
            v: self.v + n,
        })
    }
}

/// Dirichlet concentrations plus per-component Normal-Wishart parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Tier {
    pub d: Vec<f64>,
    pub components: Vec<ComponentParams>,
}

impl Tier {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.d.len() != self.components.len() {
            return Err(TgmError::DimensionMismatch {
                expected: self.components.len(),
                got: self.d.len(),
            });
        }
        for (index, &value) in self.d.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(TgmError::InvalidDirichlet { index, value });
            }
        }
        for c in &self.components {
            if c.dim() != dim {
                return Err(TgmError::DimensionMismatch { expected: dim, got: c.dim() });
            }
            c.validate()?;
        }
        Ok(())
    }

    /// Conjugate update of every component; empty components are copied unchanged.
    pub fn updated_with(&self, stats: &SufficientStats) -> Result<Tier> {
        if stats.counts.len() != self.len() {
            return Err(TgmError::DimensionMismatch { expected: self.len(), got: stats.counts.len() });
        }
        let mut d = self.d.clone();
        let mut components = Vec::with_capacity(self.len());
        for (k, c) in self.components.iter().enumerate() {
            if stats.is_empty(k) {
                components.push(c.clone());
            } else {
                d[k] += stats.counts[k];
                components.push(c.absorb(stats.counts[k], &stats.means[k], &stats.covs[k])?);
            }
        }
        Ok(Tier { d, components })
    }
}

/// Per-component responsibility mass, weighted mean and weighted covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub counts: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl SufficientStats {
    pub fn zeros(k: usize, dim: usize) -> Self {
        Self {
            counts: vec![0.0; k],
            means: vec![DVector::zeros(dim); k],
            covs: vec![DMatrix::zeros(dim, dim); k],
        }
    }

    /// Mean and covariance are undefined (left at zero) for empty components.
    pub fn is_empty(&self, k: usize) -> bool {
        self.counts[k] < EPS_MASS
    }
}

/// Statistics of the rows `indices` of `points`/`resp`.
pub fn compute_stats_indexed(
    points: &[DVector<f64>],
    resp: &DMatrix<f64>,
    indices: &[usize],
    dim: usize,
) -> Result<SufficientStats> {
    if resp.nrows() != points.len() {
        return Err(TgmError::DimensionMismatch { expected: points.len(), got: resp.nrows() });
    }
    let k = resp.ncols();
    let mut stats = SufficientStats::zeros(k, dim);
    for &n in indices {
        if n >= points.len() {
            return Err(TgmError::IndexOutOfRange { index: n, len: points.len() });
        }
        if points[n].len() != dim {
            return Err(TgmError::DimensionMismatch { expected: dim, got: points[n].len() });
        }
        for j in 0..k {
            let r = resp[(n, j)];
            stats.counts[j] += r;
            stats.means[j].axpy(r, &points[n], 1.0);
        }
    }
    for j in 0..k {
        if stats.is_empty(j) {
            stats.means[j].fill(0.0);
            continue;
        }
        stats.means[j] /= stats.counts[j];
    }
    for &n in indices {
        for j in 0..k {
            if stats.is_empty(j) {
                continue;
            }
            let diff = &points[n] - &stats.means[j];
            stats.covs[j].ger(resp[(n, j)], &diff, &diff, 1.0);
        }
    }
    for j in 0..k {
        if !stats.is_empty(j) {
            let c = linalg::symmetrize(&stats.covs[j]) / stats.counts[j];
            stats.covs[j] = c;
        }
    }
    Ok(stats)
}

/// Statistics over all points, `resp` aligned row-for-row with `points`.
pub fn compute_stats(points: &[DVector<f64>], resp: &DMatrix<f64>, dim: usize) -> Result<SufficientStats> {
    let all: Vec<usize> = (0..points.len()).collect();
    compute_stats_indexed(points, resp, &all, dim)
}

/// The full variational state of the mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureState {
    pub dim: usize,
    pub prior: Tier,
    pub empirical: Tier,
    pub posterior: Tier,
    /// N×K, one row per buffered point.
    pub responsibilities: DMatrix<f64>,
}

/// Ridge added to singular cluster covariances: 1e-6 times the data variance trace.
pub fn ridge_for(points: &[DVector<f64>]) -> f64 {
    if points.is_empty() {
        return 1e-6;
    }
    let dim = points[0].len();
    let n = points.len() as f64;
    let mean = points.iter().fold(DVector::zeros(dim), |acc, p| acc + p) / n;
    let trace: f64 = points.iter().map(|p| (p - &mean).norm_squared()).sum::<f64>() / n;
    let eps = 1e-6 * trace;
    if eps > 0.0 && eps.is_finite() {
        eps
    } else {
        1e-6
    }
}

/// Mean and population covariance of a cluster.
pub fn cluster_moments(members: &[&DVector<f64>], dim: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if members.is_empty() {
        return Err(TgmError::EmptyInput);
    }
    let n = members.len() as f64;
    let mean = members.iter().fold(DVector::zeros(dim), |acc, p| acc + *p) / n;
    let mut cov = DMatrix::zeros(dim, dim);
    for p in members {
        let diff = *p - &mean;
        cov.ger(1.0 / n, &diff, &diff, 1.0);
    }
    Ok((mean, linalg::symmetrize(&cov)))
}

/// Prior component for one cluster when the mixture will hold `k_total` components.
pub fn component_from_cluster(
    members: &[&DVector<f64>],
    k_total: usize,
    dim: usize,
    ridge: f64,
) -> Result<(f64, ComponentParams)> {
    let (mean, cov) = cluster_moments(members, dim)?;
    component_from_moments(mean, cov, members.len(), k_total, ridge)
}

/// Prior component from precomputed cluster moments over `count` points.
pub fn component_from_moments(
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    count: usize,
    k_total: usize,
    ridge: f64,
) -> Result<(f64, ComponentParams)> {
    let dim = mean.len();
    let precision = if count < dim + 1 {
        None
    } else {
        linalg::inverse_spd(&cov).ok()
    };
    let precision = match precision {
        Some(p) => p,
        None => linalg::inverse_spd(&(cov + DMatrix::identity(dim, dim) * ridge))?,
    };
    let two_k = 2.0 * k_total as f64;
    let v = two_k + dim as f64 - 0.99;
    let comp = ComponentParams {
        m: mean,
        beta: two_k,
        w: precision / v,
        v,
    };
    Ok((two_k, comp))
}

impl MixtureState {
    pub fn num_components(&self) -> usize {
        self.prior.len()
    }

    pub fn num_points(&self) -> usize {
        self.responsibilities.nrows()
    }

    pub fn empty(dim: usize) -> Self {
        let tier = Tier { d: vec![], components: vec![] };
        Self {
            dim,
            prior: tier.clone(),
            empirical: tier.clone(),
            posterior: tier,
            responsibilities: DMatrix::zeros(0, 0),
        }
    }

    /// Build the prior from a hard clustering; all tiers start equal.
    pub fn init_prior_from_clusters(assignment: &ClusterAssignment, points: &[DVector<f64>]) -> Result<Self> {
        if assignment.labels.len() != points.len() {
            return Err(TgmError::DimensionMismatch {
                expected: points.len(),
                got: assignment.labels.len(),
            });
        }
        let first = points.first().ok_or(TgmError::EmptyInput)?;
        let dim = first.len();
        let k = assignment.num_clusters();
        let ridge = ridge_for(points);
        let mut d = Vec::with_capacity(k);
        let mut components = Vec::with_capacity(k);
        for j in 0..k {
            let members: Vec<&DVector<f64>> = points
                .iter()
                .zip(&assignment.labels)
                .filter(|(_, &l)| l == j)
                .map(|(p, _)| p)
                .collect();
            let (dk, comp) = component_from_cluster(&members, k, dim, ridge)?;
            d.push(dk);
            components.push(comp);
        }
        let prior = Tier { d, components };
        prior.validate(dim)?;
        Ok(Self {
            dim,
            empirical: prior.clone(),
            posterior: prior.clone(),
            prior,
            responsibilities: assignment.one_hot(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_components();
        for tier in [&self.prior, &self.empirical, &self.posterior] {
            if tier.len() != k {
                return Err(TgmError::DimensionMismatch { expected: k, got: tier.len() });
            }
            tier.validate(self.dim)?;
        }
        if self.num_points() > 0 && self.responsibilities.ncols() != k {
            return Err(TgmError::DimensionMismatch { expected: k, got: self.responsibilities.ncols() });
        }
        Ok(())
    }

    /// Append components (all tiers equal) and zero responsibility columns.
    pub fn add_components(&mut self, new: Vec<(f64, ComponentParams)>) {
        let n = self.num_points();
        let old_k = self.num_components();
        for (d, c) in new {
            for tier in [&mut self.prior, &mut self.empirical, &mut self.posterior] {
                tier.d.push(d);
                tier.components.push(c.clone());
            }
        }
        let k = self.num_components();
        let mut resp = DMatrix::zeros(n, k);
        if old_k > 0 {
            resp.view_mut((0, 0), (n, old_k)).copy_from(&self.responsibilities);
        }
        self.responsibilities = resp;
    }

    /// Keep only components with `keep[k]`; returns the old→new index map.
    pub fn retain_components(&mut self, keep: &[bool]) -> Vec<Option<usize>> {
        let mut mapping = Vec::with_capacity(keep.len());
        let mut next = 0;
        for &kp in keep {
            if kp {
                mapping.push(Some(next));
                next += 1;
            } else {
                mapping.push(None);
            }
        }
        for tier in [&mut self.prior, &mut self.empirical, &mut self.posterior] {
            let mut i = 0;
            tier.d.retain(|_| {
                i += 1;
                keep[i - 1]
            });
            let mut i = 0;
            tier.components.retain(|_| {
                i += 1;
                keep[i - 1]
            });
        }
        let cols: Vec<usize> = (0..keep.len()).filter(|&k| keep[k]).collect();
        let n = self.num_points();
        let mut resp = DMatrix::zeros(n, cols.len());
        for (new, &old) in cols.iter().enumerate() {
            if old < self.responsibilities.ncols() {
                resp.set_column(new, &self.responsibilities.column(old));
            }
        }
        // renormalize rows that lost mass to dropped components
        for mut row in resp.row_iter_mut() {
            let s: f64 = row.sum();
            if s > 0.0 {
                row /= s;
            }
        }
        self.responsibilities = resp;
        mapping
    }

    /// Empirical tier ← prior updated with the statistics of the forget set.
    pub fn update_empirical_prior(&self, forget: &SufficientStats) -> Result<Self> {
        let mut next = self.clone();
        next.empirical = self.prior.updated_with(forget)?;
        Ok(next)
    }

    /// Posterior tier ← empirical updated with the statistics of the keep set.
    pub fn update_posterior(&self, keep: &SufficientStats) -> Result<Self> {
        let mut next = self.clone();
        next.posterior = self.empirical.updated_with(keep)?;
        Ok(next)
    }

    /// Recompute r̂ for `points` from the posterior tier.
    pub fn update_responsibilities(&self, points: &[DVector<f64>]) -> Result<Self> {
        let cache = PosteriorCache::new(self)?;
        let mut next = self.clone();
        next.responsibilities = cache.responsibilities(points)?;
        Ok(next)
    }

    /// Posterior point-estimate Gaussians (m̂, v̂Ŵ).
    pub fn posterior_gaussians(&self) -> Result<Vec<GaussianParams>> {
        self.posterior.components.iter().map(|c| c.plug_in_gaussian()).collect()
    }

    /// Responsibility mass per component over the stored points.
    pub fn masses(&self) -> Vec<f64> {
        self.responsibilities.row_sum().iter().copied().collect()
    }

    /// Absorb the rows `forget` into the prior and drop them from r̂.
    /// The posterior is left as-is: it already accounts for these points.
    pub fn absorb_and_drop(&mut self, points: &[DVector<f64>], forget: &[usize]) -> Result<()> {
        let stats = compute_stats_indexed(points, &self.responsibilities, forget, self.dim)?;
        self.empirical = self.prior.updated_with(&stats)?;
        self.prior = self.empirical.clone();
        let mut drop = vec![false; self.num_points()];
        for &n in forget {
            drop[n] = true;
        }
        let kept: Vec<usize> = (0..self.num_points()).filter(|&n| !drop[n]).collect();
        self.responsibilities = self.responsibilities.select_rows(kept.iter());
        Ok(())
    }
}

/// Per-component quantities that the responsibility update needs, computed once.
#[derive(Debug, Clone)]
pub struct PosteriorCache {
    dim: usize,
    /// E[ln D_k] - O/2 ln 2π + ½ E[ln|Λ_k|] - O/(2β̂_k)
    offsets: Vec<f64>,
    means: Vec<DVector<f64>>,
    /// v̂_k Ŵ_k
    scaled_w: Vec<DMatrix<f64>>,
}

impl PosteriorCache {
    pub fn new(state: &MixtureState) -> Result<Self> {
        let tier = &state.posterior;
        let o = state.dim as f64;
        let d_sum: f64 = tier.d.iter().sum();
        let psi_sum = digamma(d_sum);
        let mut offsets = Vec::with_capacity(tier.len());
        for (k, c) in tier.components.iter().enumerate() {
            let ln_det = linalg::ln_det_spd(&c.w)?;
            let ln_lambda = expect_ln_det_precision_from(ln_det, c.v, state.dim);
            let ln_d = digamma(tier.d[k]) - psi_sum;
            offsets.push(
                ln_d - 0.5 * o * (2.0 * std::f64::consts::PI).ln() + 0.5 * ln_lambda - 0.5 * o / c.beta,
            );
        }
        Ok(Self {
            dim: state.dim,
            offsets,
            means: tier.components.iter().map(|c| c.m.clone()).collect(),
            scaled_w: tier.components.iter().map(|c| &c.w * c.v).collect(),
        })
    }

    pub fn num_components(&self) -> usize {
        self.offsets.len()
    }

    /// ln ρ_k for one point.
    pub fn log_rho(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(TgmError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok((0..self.offsets.len())
            .map(|k| self.offsets[k] - 0.5 * quad_form(&self.scaled_w[k], x, &self.means[k]))
            .collect())
    }

    /// Normalized responsibilities of one point.
    pub fn responsibility(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        let mut lr = self.log_rho(x)?;
        softmax_in_place(&mut lr);
        Ok(lr)
    }

    pub fn responsibilities(&self, points: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        let k = self.num_components();
        let rows: Vec<Vec<f64>> = points
            .par_iter()
            .map(|x| self.responsibility(x))
            .collect::<Result<_>>()?;
        let mut out = DMatrix::zeros(points.len(), k);
        for (n, row) in rows.iter().enumerate() {
            for j in 0..k {
                out[(n, j)] = row[j];
            }
        }
        Ok(out)
    }
}

/// (x - m)ᵀ W (x - m) without allocating.
pub(crate) fn quad_form(w: &DMatrix<f64>, x: &DVector<f64>, m: &DVector<f64>) -> f64 {
    let o = x.len();
    let mut acc = 0.0;
    for i in 0..o {
        let di = x[i] - m[i];
        let mut row = 0.0;
        for j in 0..o {
            row += w[(i, j)] * (x[j] - m[j]);
        }
        acc += di * row;
    }
    acc
}

/// Log-sum-exp softmax.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// Sweep budget and stopping rule for [`fit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub max_sweeps: usize,
    /// Stop when |ΔVFE| < tol_per_point · N.
    pub tol_per_point: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { max_sweeps: 50, tol_per_point: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub state: MixtureState,
    /// VFE after each completed sweep.
    pub vfe_trace: Vec<f64>,
}

/// Coordinate ascent: statistics → empirical → posterior → responsibilities.
///
/// `forget[n]` marks points in N′; the rest form N″. Responsibilities in
/// `state` must be aligned with `points`.
pub fn fit(state: &MixtureState, points: &[DVector<f64>], forget: &[bool], cfg: FitConfig) -> Result<FitOutcome> {
    if cfg.max_sweeps == 0 {
        return Err(TgmError::Precondition("fit needs at least one sweep".into()));
    }
    if forget.len() != points.len() || state.num_points() != points.len() {
        return Err(TgmError::DimensionMismatch { expected: points.len(), got: forget.len() });
    }
    let forget_idx: Vec<usize> = (0..points.len()).filter(|&n| forget[n]).collect();
    let keep_idx: Vec<usize> = (0..points.len()).filter(|&n| !forget[n]).collect();
    let tol = cfg.tol_per_point * points.len().max(1) as f64;
    let mut state = state.clone();
    let mut trace = Vec::new();
    for _ in 0..cfg.max_sweeps {
        let fs = compute_stats_indexed(points, &state.responsibilities, &forget_idx, state.dim)?;
        let ks = compute_stats_indexed(points, &state.responsibilities, &keep_idx, state.dim)?;
        state.empirical = state.prior.updated_with(&fs)?;
        state.posterior = state.empirical.updated_with(&ks)?;
        state.responsibilities = PosteriorCache::new(&state)?.responsibilities(points)?;
        let f = compute_vfe(&state, points)?.total();
        let converged = trace.last().is_some_and(|prev: &f64| (prev - f).abs() < tol);
        trace.push(f);
        if converged {
            break;
        }
    }
    Ok(FitOutcome { state, vfe_trace: trace })
}

/// Plug-in Gaussian log density of `x` under the best posterior component.
pub fn best_log_density(gaussians: &[GaussianParams], x: &DVector<f64>) -> Result<Option<(usize, f64)>> {
    let mut best: Option<(usize, f64)> = None;
    for (k, g) in gaussians.iter().enumerate() {
        let lp = distributions::log_gaussian_pdf(x, g)?;
        if best.is_none_or(|(_, b)| lp > b) {
            best = Some((k, lp));
        }
    }
    Ok(best)
}
