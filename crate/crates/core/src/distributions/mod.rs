//! Gaussian, Wishart and Dirichlet parameter types with the closed-form
//! expectations the variational updates need.
//!
//! Everything here is computed in log space. Determinants and quadratic forms
//! go through a Cholesky factor.

pub mod linalg;
pub mod special;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TgmError};
pub use special::{digamma, ln_gamma, ln_multivariate_gamma};

/// Gaussian with mean and precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    ln_det: f64,
}

impl GaussianParams {
    pub fn new(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        if precision.nrows() != mean.len() {
            return Err(TgmError::DimensionMismatch {
                expected: mean.len(),
                got: precision.nrows(),
            });
        }
        if let Some(i) = mean.iter().position(|v| !v.is_finite()) {
            return Err(TgmError::NonFinite(i));
        }
        let chol = linalg::cholesky(&precision)?;
        let ln_det = linalg::ln_det_chol(&chol);
        Ok(Self {
            mean,
            precision: linalg::symmetrize(&precision),
            chol_l: chol.unpack(),
            ln_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn ln_det_precision(&self) -> f64 {
        self.ln_det
    }

    /// (x - μ)ᵀ Λ (x - μ) as ‖Lᵀ(x - μ)‖².
    pub fn mahalanobis_sq(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let diff = x - &self.mean;
        Ok((self.chol_l.transpose() * diff).norm_squared())
    }
}

/// Wishart over precision matrices: scale W, degrees of freedom v.
#[derive(Debug, Clone, PartialEq)]
pub struct WishartParams {
    scale: DMatrix<f64>,
    dof: f64,
    ln_det_scale: f64,
}

impl WishartParams {
    pub fn new(scale: DMatrix<f64>, dof: f64) -> Result<Self> {
        let dim = scale.nrows();
        if dim == 0 {
            return Err(TgmError::InvalidWishart("empty scale matrix".into()));
        }
        if !dof.is_finite() || dof <= dim as f64 - 1.0 {
            return Err(TgmError::InvalidWishart(format!(
                "degrees of freedom {dof} must exceed {}",
                dim as f64 - 1.0
            )));
        }
        let chol = linalg::cholesky(&scale).map_err(|e| match e {
            TgmError::NotPositiveDefinite => {
                TgmError::InvalidWishart("scale matrix is not positive definite".into())
            }
            other => other,
        })?;
        Ok(Self {
            ln_det_scale: linalg::ln_det_chol(&chol),
            scale: linalg::symmetrize(&scale),
            dof,
        })
    }

    pub fn dim(&self) -> usize {
        self.scale.nrows()
    }

    pub fn scale(&self) -> &DMatrix<f64> {
        &self.scale
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn ln_det_scale(&self) -> f64 {
        self.ln_det_scale
    }
}

/// Dirichlet with strictly positive concentrations.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    concentration: Vec<f64>,
}

impl DirichletParams {
    pub fn new(concentration: Vec<f64>) -> Result<Self> {
        if concentration.is_empty() {
            return Err(TgmError::EmptyInput);
        }
        for (index, &value) in concentration.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(TgmError::InvalidDirichlet { index, value });
            }
        }
        Ok(Self { concentration })
    }

    pub fn concentration(&self) -> &[f64] {
        &self.concentration
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(TgmError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// E[ln|Λ|] under a Wishart, from ln|W| directly.
pub fn expect_ln_det_precision_from(ln_det_scale: f64, dof: f64, dim: usize) -> f64 {
    let mut acc = dim as f64 * 2f64.ln() + ln_det_scale;
    for i in 1..=dim {
        acc += digamma((dof + 1.0 - i as f64) / 2.0);
    }
    acc
}

/// E[ln|Λ|] = O ln 2 + ln|W| + Σᵢ ψ((v + 1 - i)/2).
pub fn expect_ln_det_precision(w: &WishartParams) -> f64 {
    expect_ln_det_precision_from(w.ln_det_scale, w.dof, w.dim())
}

/// E[(x - μ)ᵀ Λ (x - μ)] under the Normal-Wishart with mean m, scaling β.
pub fn expect_quadratic_form(
    x: &DVector<f64>,
    mean: &DVector<f64>,
    beta: f64,
    w: &WishartParams,
) -> Result<f64> {
    check_dim(w.dim(), x.len())?;
    check_dim(w.dim(), mean.len())?;
    if !(beta > 0.0) {
        return Err(TgmError::Precondition(format!("beta must be positive, got {beta}")));
    }
    let diff = x - mean;
    Ok(w.dim() as f64 / beta + w.dof * linalg::bilinear(&diff, &w.scale, &diff))
}

/// E[ln D_k] = ψ(d_k) - ψ(Σ d).
pub fn expect_ln_dirichlet(d: &DirichletParams, k: usize) -> Result<f64> {
    let len = d.concentration.len();
    let dk = *d
        .concentration
        .get(k)
        .ok_or(TgmError::IndexOutOfRange { index: k, len })?;
    Ok(digamma(dk) - digamma(d.concentration.iter().sum()))
}

/// ln of the Dirichlet normalizer, i.e. -ln B(d).
pub fn dirichlet_ln_norm(concentration: &[f64]) -> f64 {
    let total: f64 = concentration.iter().sum();
    ln_gamma(total) - concentration.iter().map(|&a| ln_gamma(a)).sum::<f64>()
}

/// ln of the Wishart normalizer B(W, v).
pub fn wishart_ln_norm(ln_det_scale: f64, dof: f64, dim: usize) -> f64 {
    let o = dim as f64;
    -0.5 * dof * o * 2f64.ln() - 0.5 * dof * ln_det_scale - ln_multivariate_gamma(dim, dof / 2.0)
}

/// KL(p ‖ q) between two Gaussians. Round-off negatives are clamped to zero.
pub fn gaussian_kl(p: &GaussianParams, q: &GaussianParams) -> Result<f64> {
    check_dim(p.dim(), q.dim())?;
    let o = p.dim() as f64;
    // tr(Λ_q Σ_p) via ‖L_p⁻¹ L_q‖²_F
    let lp = &p.chol_l;
    let solved = lp
        .solve_lower_triangular(&q.chol_l)
        .ok_or(TgmError::NotPositiveDefinite)?;
    let trace = solved.norm_squared();
    let maha = q.mahalanobis_sq(&p.mean)?;
    let kl = 0.5 * (trace + maha - o + p.ln_det - q.ln_det);
    Ok(kl.max(0.0))
}

pub fn log_gaussian_pdf(x: &DVector<f64>, g: &GaussianParams) -> Result<f64> {
    let maha = g.mahalanobis_sq(x)?;
    Ok(-0.5 * g.dim() as f64 * (2.0 * PI).ln() + 0.5 * g.ln_det - 0.5 * maha)
}
