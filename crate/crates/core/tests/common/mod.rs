//! Helpers shared by the integration tests: random problem instances and a
//! dense-inverse reference implementation of the GP formulas.

#![allow(dead_code)]

use mloo::{FittedGp, Hyperparameters, ObservationSet, ParameterVector};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn point(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.random_range(0.0..=1.0)).collect()
}

/// Observations at uniform random points. Each uncertainty is zero with
/// probability `p_zero`, otherwise uniform in `[0.05, 0.5]`.
pub fn random_obs(rng: &mut ChaCha8Rng, n: usize, m: usize, p_zero: f64) -> ObservationSet {
    let params = (0..n).map(|_| ParameterVector::new(point(rng, m)).unwrap()).collect();
    let costs = (0..n).map(|_| rng.random_range(-2.0..=3.0)).collect();
    let uncerts = (0..n).map(|_| if rng.random_bool(p_zero) { 0.0 } else { rng.random_range(0.05..=0.5) }).collect();
    ObservationSet::new(params, costs, uncerts).unwrap()
}

/// Log-uniform lengths in `[lo, hi]`.
pub fn random_hyp(rng: &mut ChaCha8Rng, m: usize, lo: f64, hi: f64) -> Hyperparameters {
    Hyperparameters::new((0..m).map(|_| rng.random_range(lo.ln()..=hi.ln()).exp()).collect()).unwrap()
}

pub fn kernel(a: &[f64], b: &[f64], h: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..a.len() {
        let d = (a[j] - b[j]) / h[j];
        s += d * d;
    }
    (-s).exp()
}

/// Textbook GP quantities from an explicit inverse of `R`.
pub struct DenseGp {
    xs: Vec<Vec<f64>>,
    h: Vec<f64>,
    rinv: DMatrix<f64>,
    y: DVector<f64>,
    pub beta: f64,
    pub gamma: DVector<f64>,
    pub cost_var: f64,
    pub log_like: f64,
    /// `jᵀR⁻¹j`
    pub jrj: f64,
}

impl DenseGp {
    pub fn new(obs: &ObservationSet, hyp: &Hyperparameters, jitter: f64) -> Self {
        let n = obs.len();
        let xs: Vec<Vec<f64>> = obs.params().iter().map(|p| p.to_vec()).collect();
        let h = hyp.lengths().to_vec();
        let r = DMatrix::from_fn(n, n, |i, k| {
            kernel(&xs[i], &xs[k], &h) + if i == k { obs.uncerts()[i].powi(2) + jitter } else { 0.0 }
        });
        let rinv = r.clone().try_inverse().expect("oracle matrix invertible");
        let j = DVector::from_element(n, 1.0);
        let y = DVector::from_column_slice(obs.costs());
        let jrj = (j.transpose() * &rinv * &j)[(0, 0)];
        let beta = (j.transpose() * &rinv * &y)[(0, 0)] / jrj;
        let gamma = &rinv * (&y - &j * beta);
        let mean = y.mean();
        let cost_var = y.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n as f64;
        let proj = &rinv - (&rinv * &j * j.transpose() * &rinv) / jrj;
        let quad = (y.transpose() * proj * &y)[(0, 0)];
        let log_det = r.lu().determinant().ln();
        let log_like =
            0.5 * (-log_det - jrj.ln() - (n as f64 - 1.0) * (2.0 * std::f64::consts::PI).ln() - quad);
        Self { xs, h, rinv, y, beta, gamma, cost_var, log_like, jrj }
    }

    fn r_vec(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.xs.len(), self.xs.iter().map(|xi| kernel(x, xi, &self.h)))
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        self.beta + self.r_vec(x).dot(&self.gamma)
    }

    pub fn variance(&self, x: &[f64]) -> f64 {
        let r = self.r_vec(x);
        let n = self.y.len();
        let j = DVector::from_element(n, 1.0);
        let jrj = (j.transpose() * &self.rinv * &j)[(0, 0)];
        let rr = (r.transpose() * &self.rinv * &r)[(0, 0)];
        let jr = (j.transpose() * &self.rinv * &r)[(0, 0)];
        (self.cost_var * (1.0 - rr + (1.0 - jr).powi(2) / jrj)).max(0.0)
    }
}

/// Condition number of `R` from its symmetric eigenvalues; infinite when
/// rounding leaves it without a positive smallest eigenvalue.
pub fn condition(obs: &ObservationSet, hyp: &Hyperparameters) -> f64 {
    let n = obs.len();
    let xs: Vec<&[f64]> = obs.params().iter().map(|p| p.as_slice()).collect();
    let r = DMatrix::from_fn(n, n, |i, k| {
        kernel(xs[i], xs[k], hyp.lengths()) + if i == k { obs.uncerts()[i].powi(2) } else { 0.0 }
    });
    let eig = r.symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
    if lo <= 0.0 { f64::INFINITY } else { hi / lo }
}

/// Random instance with `N ≤ 50`, `M ≤ 16` and mixed noise, redrawn until
/// `R` is well enough conditioned for a 1e-8 comparison to be meaningful.
pub fn oracle_instance(rng: &mut ChaCha8Rng) -> (ObservationSet, Hyperparameters) {
    loop {
        let n = rng.random_range(2..=50);
        let m = rng.random_range(1..=16);
        let obs = random_obs(rng, n, m, 0.3);
        let hyp = random_hyp(rng, m, 0.05, 2.0);
        if condition(&obs, &hyp) < 1e6 {
            return (obs, hyp);
        }
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64, floor: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(floor)
}

/// Compares a factorized fit against the dense oracle at `queries`;
/// returns the first discrepancy.
pub fn compare_with_oracle(obs: &ObservationSet, hyp: &Hyperparameters, queries: &[Vec<f64>], tol: f64) -> Result<(), String> {
    let gp = FittedGp::fit(obs, hyp).map_err(|e| e.to_string())?;
    let dense = DenseGp::new(obs, hyp, gp.jitter());
    let scale = 1.0;
    if !rel_close(gp.beta(), dense.beta, tol, scale) {
        return Err(format!("beta {} vs {}", gp.beta(), dense.beta));
    }
    for (g, d) in gp.gamma().iter().zip(dense.gamma.iter()) {
        if !rel_close(*g, *d, tol, scale) {
            return Err(format!("gamma {g} vs {d}"));
        }
    }
    if !rel_close(gp.log_likelihood(), dense.log_like, tol, scale) {
        return Err(format!("log-likelihood {} vs {}", gp.log_likelihood(), dense.log_like));
    }
    for x in queries {
        let (m, v) = if obs.len() >= 2 {
            gp.predict(x).map_err(|e| e.to_string())?
        } else {
            (gp.predict_mean(x).map_err(|e| e.to_string())?, dense.variance(x))
        };
        if !rel_close(m, dense.mean(x), tol, scale) {
            return Err(format!("mean at {x:?}: {m} vs {}", dense.mean(x)));
        }
        // variances are compared relative to the prior scale σ_C²
        if !rel_close(v, dense.variance(x), tol, dense.cost_var.max(1e-300)) {
            return Err(format!("variance at {x:?}: {v} vs {}", dense.variance(x)));
        }
    }
    Ok(())
}

/// Ensemble fitted on `n` random noisy observations in `m` dimensions.
pub fn random_model(seed: u64, n: usize, m: usize, particles: usize) -> (mloo::ParticleEnsemble, ObservationSet) {
    let mut r = rng(seed);
    let obs = random_obs(&mut r, n, m, 0.0);
    let cfg = mloo::EnsembleConfig { particles, ..Default::default() };
    let mut ens = mloo::ParticleEnsemble::new(cfg, seed).unwrap();
    ens.refresh(&obs).unwrap();
    (ens, obs)
}

/// Result of scanning the biased cost over a `side × side` grid of a 2-D box.
pub struct GridScan {
    pub min: f64,
    pub argmin: Vec<f64>,
    /// largest change of the biased cost between neighbouring grid nodes
    pub resolution: f64,
}

pub fn scan_bias(ens: &mloo::ParticleEnsemble, b: f64, lo: &[f64], hi: &[f64], side: usize) -> GridScan {
    let at = |i: usize, j: usize| {
        let x = [
            lo[0] + (hi[0] - lo[0]) * i as f64 / (side - 1) as f64,
            lo[1] + (hi[1] - lo[1]) * j as f64 / (side - 1) as f64,
        ];
        (mloo::bias_value(ens, &x, b, mloo::UncertaintyMeasure::StdDev).unwrap(), x)
    };
    let vals: Vec<Vec<(f64, [f64; 2])>> = (0..side).map(|i| (0..side).map(|j| at(i, j)).collect()).collect();
    let mut best = (f64::INFINITY, vec![]);
    let mut resolution: f64 = 0.0;
    for i in 0..side {
        for j in 0..side {
            let (v, x) = vals[i][j];
            if v < best.0 {
                best = (v, x.to_vec());
            }
            if i + 1 < side {
                resolution = resolution.max((vals[i + 1][j].0 - v).abs());
            }
            if j + 1 < side {
                resolution = resolution.max((vals[i][j + 1].0 - v).abs());
            }
        }
    }
    GridScan { min: best.0, argmin: best.1, resolution }
}
