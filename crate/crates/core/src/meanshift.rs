//! Flat-kernel mean shift used to seed Gaussian components.
//!
//! Every point climbs to the mean of the data inside a ball of radius θ_b
//! around its current position until it stops moving. Points whose converged
//! positions land within `merge_radius` of each other share a cluster.
//!
//! Neighborhoods are found by brute force, O(N²) per iteration. Buffers stay
//! in the low thousands of points so a spatial index would not pay for itself.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, TgmError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanShiftConfig {
    pub bandwidth: f64,
    pub convergence_tol: f64,
    pub max_iterations: usize,
    pub merge_radius: f64,
}

impl MeanShiftConfig {
    /// Defaults derived from the bandwidth: merge radius θ_b/4, tolerance 1e-6·θ_b.
    pub fn with_bandwidth(bandwidth: f64) -> Self {
        Self {
            bandwidth,
            convergence_tol: 1e-6 * bandwidth,
            max_iterations: 200,
            merge_radius: bandwidth / 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(TgmError::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive("bandwidth", self.bandwidth)?;
        positive("convergence_tol", self.convergence_tol)?;
        positive("merge_radius", self.merge_radius)?;
        if self.max_iterations == 0 {
            return Err(TgmError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster id per point.
    pub labels: Vec<usize>,
    /// Mean converged position of each cluster's members.
    pub centroids: Vec<DVector<f64>>,
}

impl ClusterAssignment {
    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }

    /// N×K binary matrix with a single one per row.
    pub fn one_hot(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.labels.len(), self.centroids.len());
        for (n, &k) in self.labels.iter().enumerate() {
            m[(n, k)] = 1.0;
        }
        m
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &k in &self.labels {
            sizes[k] += 1;
        }
        sizes
    }
}

fn window_mean(points: &[DVector<f64>], center: &DVector<f64>, radius_sq: f64) -> Option<DVector<f64>> {
    let mut sum = DVector::zeros(center.len());
    let mut count = 0usize;
    for p in points {
        if (p - center).norm_squared() <= radius_sq {
            sum += p;
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

fn climb(points: &[DVector<f64>], start: &DVector<f64>, cfg: &MeanShiftConfig) -> DVector<f64> {
    let radius_sq = cfg.bandwidth * cfg.bandwidth;
    let mut y = start.clone();
    for _ in 0..cfg.max_iterations {
        let Some(next) = window_mean(points, &y, radius_sq) else {
            break;
        };
        let shift = (&next - &y).norm();
        y = next;
        if shift < cfg.convergence_tol {
            break;
        }
    }
    y
}

pub fn mean_shift(points: &[DVector<f64>], cfg: &MeanShiftConfig) -> Result<ClusterAssignment> {
    cfg.validate()?;
    let first = points.first().ok_or(TgmError::EmptyInput)?;
    let dim = first.len();
    for (n, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(TgmError::DimensionMismatch { expected: dim, got: p.len() });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(TgmError::NonFinite(n));
        }
    }

    let modes: Vec<DVector<f64>> = points.par_iter().map(|p| climb(points, p, cfg)).collect();

    // Modes within the merge radius of each other are linked and clusters are
    // the connected components, so the partition does not depend on input
    // order. Labels follow the first member in input order.
    let merge_sq = cfg.merge_radius * cfg.merge_radius;
    let n = modes.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if (&modes[i] - &modes[j]).norm_squared() <= merge_sq {
                let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut label_of_root = vec![usize::MAX; n];
    let mut sums: Vec<DVector<f64>> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut labels = Vec::with_capacity(n);
    for (i, mode) in modes.iter().enumerate() {
        let r = root(&mut parent, i);
        if label_of_root[r] == usize::MAX {
            label_of_root[r] = sums.len();
            sums.push(DVector::zeros(dim));
            counts.push(0);
        }
        let k = label_of_root[r];
        sums[k] += mode;
        counts[k] += 1;
        labels.push(k);
    }
    let centroids = sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| s / c as f64)
        .collect();
    Ok(ClusterAssignment { labels, centroids })
}
