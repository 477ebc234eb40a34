//! Variational free energy, one closed-form term per expectation.
//!
//! Q-terms use the posterior tier, P-terms use the prior tier. Expectations
//! of ln D_k and ln|Λ_k| are always taken under the posterior.

use std::f64::consts::PI;

use nalgebra::DVector;

use super::{quad_form, MixtureState};
use crate::distributions::{digamma, dirichlet_ln_norm, expect_ln_det_precision_from, linalg, wishart_ln_norm};
use crate::error::{Result, TgmError};

/// The nine expectation terms. `total()` is F = E_Q[ln Q] - E_Q[ln P].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VfeTerms {
    pub q_d: f64,
    pub q_mu: f64,
    pub q_lambda: f64,
    pub q_z: f64,
    pub p_d: f64,
    pub p_mu: f64,
    pub p_lambda: f64,
    pub p_z: f64,
    pub p_x: f64,
}

impl VfeTerms {
    pub fn total(&self) -> f64 {
        self.q_d + self.q_mu + self.q_lambda + self.q_z
            - (self.p_d + self.p_mu + self.p_lambda + self.p_z + self.p_x)
    }
}

pub fn compute_vfe(state: &MixtureState, points: &[DVector<f64>]) -> Result<VfeTerms> {
    let k_count = state.num_components();
    let dim = state.dim;
    let o = dim as f64;
    let r = &state.responsibilities;
    if r.nrows() != points.len() {
        return Err(TgmError::DimensionMismatch { expected: points.len(), got: r.nrows() });
    }
    if !points.is_empty() && r.ncols() != k_count {
        return Err(TgmError::DimensionMismatch { expected: k_count, got: r.ncols() });
    }
    let post = &state.posterior;
    let prior = &state.prior;
    let ln_2pi = (2.0 * PI).ln();

    let psi_sum = digamma(post.d.iter().sum());
    let ln_d: Vec<f64> = post.d.iter().map(|&d| digamma(d) - psi_sum).collect();

    let mut t = VfeTerms {
        q_d: dirichlet_ln_norm(&post.d),
        p_d: dirichlet_ln_norm(&prior.d),
        ..VfeTerms::default()
    };

    for k in 0..k_count {
        let q = &post.components[k];
        let p = &prior.components[k];
        let ln_det_q = linalg::ln_det_spd(&q.w)?;
        let ln_det_p = linalg::ln_det_spd(&p.w)?;
        let ln_lambda = expect_ln_det_precision_from(ln_det_q, q.v, dim);

        t.q_d += (post.d[k] - 1.0) * ln_d[k];
        t.p_d += (prior.d[k] - 1.0) * ln_d[k];

        t.q_mu += 0.5 * (o * (q.beta / (2.0 * PI)).ln() + ln_lambda - o);
        t.q_lambda += wishart_ln_norm(ln_det_q, q.v, dim) + 0.5 * (q.v - o - 1.0) * ln_lambda - 0.5 * q.v * o;

        t.p_mu += 0.5
            * (o * (p.beta / (2.0 * PI)).ln() + ln_lambda
                - o * p.beta / q.beta
                - p.beta * q.v * quad_form(&q.w, &p.m, &q.m));
        let trace = (linalg::inverse_spd(&p.w)? * &q.w).trace();
        t.p_lambda += wishart_ln_norm(ln_det_p, p.v, dim) + 0.5 * (p.v - o - 1.0) * ln_lambda - 0.5 * q.v * trace;

        // Per-point form of Σ_k N_k/2 [ ... ]: equal to the statistic form and
        // defined even when a component has no mass.
        let base = ln_lambda - o / q.beta - o * ln_2pi;
        for (n, x) in points.iter().enumerate() {
            let rnk = r[(n, k)];
            if rnk == 0.0 {
                continue;
            }
            t.q_z += rnk * rnk.ln();
            t.p_z += rnk * ln_d[k];
            t.p_x += 0.5 * rnk * (base - q.v * quad_form(&q.w, x, &q.m));
        }
    }
    Ok(t)
}
