//! Independent oracles for integration tests: samplers and log densities
//! written from textbook definitions, with `statrs` for ln Γ.

#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tgm::env::{true_transition_matrices, Action, MazeSpec, NUM_ACTIONS};
use tgm::planner::{Mdp, QTable};
use tgm::vgm::{ComponentParams, MixtureState, Tier};

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Random SPD matrix with eigenvalues roughly in [lo, hi].
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, dim: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| std_normal(rng));
    let q = a.qr().q();
    let eig = DMatrix::from_diagonal(&DVector::from_fn(dim, |_, _| rng.random_range(lo..hi)));
    let m = &q * eig * q.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn random_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| scale * std_normal(rng))
}

pub fn random_simplex<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    let g: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let t: f64 = g.iter().sum();
    g.into_iter().map(|x| x / t).collect()
}

/// N(mean, precision⁻¹) via the Cholesky factor of the precision.
pub fn sample_gaussian<R: Rng + ?Sized>(rng: &mut R, mean: &DVector<f64>, precision: &DMatrix<f64>) -> DVector<f64> {
    let l = precision.clone().cholesky().expect("SPD precision").l();
    let z = DVector::from_fn(mean.len(), |_, _| std_normal(rng));
    // Solve Lᵀ y = z so that Cov(y) = (L Lᵀ)⁻¹.
    let y = l.transpose().solve_upper_triangular(&z).expect("triangular solve");
    mean + y
}

/// Wishart(W, v) by the Bartlett decomposition.
pub fn sample_wishart<R: Rng + ?Sized>(rng: &mut R, scale: &DMatrix<f64>, dof: f64) -> DMatrix<f64> {
    let f = sample_wishart_factor(rng, scale, dof);
    &f * f.transpose()
}

/// Lower-triangular F with F Fᵀ ~ Wishart(W, v).
pub fn sample_wishart_factor<R: Rng + ?Sized>(rng: &mut R, scale: &DMatrix<f64>, dof: f64) -> DMatrix<f64> {
    let p = scale.nrows();
    let l = scale.clone().cholesky().expect("SPD scale").l();
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(dof - i as f64).expect("dof > p - 1");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = std_normal(rng);
        }
    }
    l * a
}

/// N(mean, (c F Fᵀ)⁻¹) for a lower-triangular factor F.
pub fn sample_gaussian_factor<R: Rng + ?Sized>(rng: &mut R, mean: &DVector<f64>, factor: &DMatrix<f64>, c: f64) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| std_normal(rng) / c.sqrt());
    mean + factor.transpose().solve_upper_triangular(&z).expect("triangular solve")
}

pub fn sample_dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: &[f64]) -> Vec<f64> {
    let g: Vec<f64> = alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap().sample(rng)).collect();
    let t: f64 = g.iter().sum();
    g.into_iter().map(|x| x / t).collect()
}

pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, p: &[f64]) -> usize {
    let mut u = rng.random::<f64>();
    for (i, &pi) in p.iter().enumerate() {
        if u < pi {
            return i;
        }
        u -= pi;
    }
    p.len() - 1
}

pub fn ln_det(m: &DMatrix<f64>) -> f64 {
    let l = m.clone().cholesky().expect("SPD").l();
    2.0 * l.diagonal().iter().map(|x| x.ln()).sum::<f64>()
}

pub fn ln_gaussian(x: &DVector<f64>, mean: &DVector<f64>, precision: &DMatrix<f64>) -> f64 {
    let d = x - mean;
    let o = x.len() as f64;
    0.5 * ln_det(precision) - 0.5 * o * (2.0 * PI).ln() - 0.5 * (d.transpose() * precision * &d)[(0, 0)]
}

pub fn ln_mv_gamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    pf * (pf - 1.0) / 4.0 * PI.ln() + (0..p).map(|j| ln_gamma(a - j as f64 / 2.0)).sum::<f64>()
}

pub fn ln_wishart(lambda: &DMatrix<f64>, scale: &DMatrix<f64>, dof: f64) -> f64 {
    let p = lambda.nrows();
    let pf = p as f64;
    let winv = scale.clone().try_inverse().expect("invertible");
    (dof - pf - 1.0) / 2.0 * ln_det(lambda) - 0.5 * (winv * lambda).trace()
        - dof * pf / 2.0 * 2f64.ln()
        - dof / 2.0 * ln_det(scale)
        - ln_mv_gamma(p, dof / 2.0)
}

pub fn ln_dirichlet(x: &[f64], alpha: &[f64]) -> f64 {
    let a0: f64 = alpha.iter().sum();
    ln_gamma(a0) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>()
        + x.iter().zip(alpha).map(|(xi, a)| (a - 1.0) * xi.ln()).sum::<f64>()
}

/// Running mean and standard error.
#[derive(Debug, Clone, Default)]
pub struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std_error(&self) -> f64 {
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }

    pub fn merge(&mut self, other: &Moments) {
        let n = self.n + other.n;
        if n == 0.0 {
            return;
        }
        let d = other.mean - self.mean;
        self.m2 += other.m2 + d * d * self.n * other.n / n;
        self.mean += d * other.n / n;
        self.n = n;
    }
}

pub fn random_component<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> ComponentParams {
    let v = dim as f64 - 1.0 + rng.random_range(1.5..6.0);
    ComponentParams {
        m: random_vector(rng, dim, 1.5),
        beta: rng.random_range(0.5..4.0),
        w: random_spd(rng, dim, 0.2, 1.5) / v,
        v,
    }
}

pub fn random_tier<R: Rng + ?Sized>(rng: &mut R, k: usize, dim: usize) -> Tier {
    Tier {
        d: (0..k).map(|_| rng.random_range(0.7..5.0)).collect(),
        components: (0..k).map(|_| random_component(rng, dim)).collect(),
    }
}

/// Unrelated random prior and posterior tiers with random responsibilities.
pub fn random_state<R: Rng + ?Sized>(rng: &mut R, k: usize, dim: usize, n: usize) -> (MixtureState, Vec<DVector<f64>>) {
    let prior = random_tier(rng, k, dim);
    let posterior = random_tier(rng, k, dim);
    let resp = DMatrix::from_fn(n, k, |_, _| 0.0);
    let mut resp = resp;
    for i in 0..n {
        for (j, p) in random_simplex(rng, k).into_iter().enumerate() {
            resp[(i, j)] = p;
        }
    }
    let points = (0..n).map(|_| random_vector(rng, dim, 2.0)).collect();
    let state = MixtureState { dim, empirical: prior.clone(), prior, posterior, responsibilities: resp };
    (state, points)
}

/// `per` points around each centre with isotropic noise.
pub fn blobs<R: Rng + ?Sized>(rng: &mut R, centres: &[DVector<f64>], per: usize, sd: f64) -> Vec<DVector<f64>> {
    let mut out = Vec::new();
    for c in centres {
        for _ in 0..per {
            out.push(c + DVector::from_fn(c.len(), |_, _| sd * std_normal(rng)));
        }
    }
    out
}

pub fn data_mean_cov(points: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let dim = points[0].len();
    let n = points.len() as f64;
    let mean = points.iter().fold(DVector::zeros(dim), |a, p| a + p) / n;
    let mut cov = DMatrix::zeros(dim, dim);
    for p in points {
        let d = p - &mean;
        cov += &d * d.transpose() / n;
    }
    (mean, cov)
}

/// k-means++ seeds: first uniform, then proportional to squared distance.
pub fn kmeans_pp<R: Rng + ?Sized>(rng: &mut R, points: &[DVector<f64>], k: usize) -> Vec<DVector<f64>> {
    let mut seeds = vec![points[rng.random_range(0..points.len())].clone()];
    while seeds.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| seeds.iter().map(|s| (p - s).norm_squared()).fold(f64::INFINITY, f64::min))
            .collect();
        let idx = sample_categorical(rng, &{
            let t: f64 = d2.iter().sum();
            d2.iter().map(|d| d / t).collect::<Vec<_>>()
        });
        seeds.push(points[idx].clone());
    }
    seeds
}

/// Broad sparse prior over `seeds` with nearest-seed one-hot responsibilities.
pub fn broad_state(points: &[DVector<f64>], seeds: &[DVector<f64>]) -> MixtureState {
    let dim = points[0].len();
    let k = seeds.len();
    let (_, cov) = data_mean_cov(points);
    let v = dim as f64;
    let w = cov.try_inverse().expect("data covariance invertible") / v;
    let comps = seeds.iter().map(|s| ComponentParams { m: s.clone(), beta: 1.0, w: w.clone(), v }).collect();
    let tier = Tier { d: vec![1e-3; k], components: comps };
    let mut resp = DMatrix::zeros(points.len(), k);
    for (i, p) in points.iter().enumerate() {
        let j = (0..k)
            .min_by(|&a, &b| (p - &seeds[a]).norm().total_cmp(&(p - &seeds[b]).norm()))
            .unwrap();
        resp[(i, j)] = 1.0;
    }
    MixtureState { dim, prior: tier.clone(), empirical: tier.clone(), posterior: tier, responsibilities: resp }
}

/// Reward 1 for eating at the goal, which ends the episode.
pub fn maze_mdp(spec: &MazeSpec, gamma: f64) -> Mdp {
    let cells = spec.floor_cells();
    let goal = spec.cell_index(spec.goal).unwrap();
    let mut transitions = true_transition_matrices(spec);
    let eat = Action::Eat.index();
    transitions[eat][(goal, goal)] = 0.0;
    let mut rewards = DMatrix::zeros(NUM_ACTIONS, cells.len());
    rewards[(eat, goal)] = 1.0;
    Mdp { transitions, rewards, gamma }
}

/// Sup-norm error of tabular Q-learning after `updates` uniformly random
/// (state, action) updates with step size `rate(visits)`.
pub fn tabular_q_error(spec: &MazeSpec, mdp: &Mdp, oracle: &DMatrix<f64>, updates: usize, rate: impl Fn(f64) -> f64) -> f64 {
    let s_count = spec.floor_cells().len();
    let goal = spec.cell_index(spec.goal).unwrap();
    let mut q = QTable::new(NUM_ACTIONS, s_count, 1.0, mdp.gamma).unwrap();
    let mut visits = DMatrix::<f64>::zeros(NUM_ACTIONS, s_count);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..updates {
        let s = rng.random_range(0..s_count);
        let a = rng.random_range(0..NUM_ACTIONS);
        visits[(a, s)] += 1.0;
        let terminal = a == Action::Eat.index() && s == goal;
        let next = (!terminal).then(|| (0..s_count).find(|&sp| mdp.transitions[a][(sp, s)] == 1.0).unwrap());
        q.q_update_with_rate(s, a, mdp.rewards[(a, s)], next, rate(visits[(a, s)])).unwrap();
    }
    (&q.values - oracle).amax()
}
