//! Likelihood-weighted ensemble of GP hyperparameter hypotheses ("particles").
//!
//! Each particle carries one set of correlation lengths, locally maximized
//! against the marginal likelihood. Predictions are mixtures: the weighted
//! mean `Σ w_i μ_i` and the mixture variance `Σ w_i (σ_i² + μ_i²) − M²`,
//! with `w_i ∝ L_i`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{FittedGp, HyperBounds, Hyperparameters};
use crate::nelder_mead::{nm_optimize, Bounds, NelderMeadOptions};
use crate::params::ObservationSet;

/// Two particles closer than this in every log-length are treated as duplicates.
const MERGE_TOL: f64 = 1e-3;
/// Random redraws attempted for a particle whose fit keeps failing.
const MAX_REDRAWS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    /// number of particles `P`
    pub particles: usize,
    pub bounds: HyperBounds,
    /// fraction of particles redrawn at random on every refresh (at least one when `P > 1`)
    pub restart_fraction: f64,
    /// likelihood search budget per dimension
    pub evals_per_dim: usize,
    /// relative tolerance of the likelihood search
    pub tolerance: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { particles: 1, bounds: HyperBounds::default(), restart_fraction: 0.25, evals_per_dim: 100, tolerance: 1e-4 }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if self.particles == 0 {
            return Err(Error::Config("particle count must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.restart_fraction) {
            return Err(Error::Config("restart fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn restarts(&self) -> usize {
        if self.particles <= 1 {
            0
        } else {
            ((self.particles as f64 * self.restart_fraction).round() as usize).clamp(1, self.particles)
        }
    }

    fn search_options(&self, dim: usize) -> NelderMeadOptions {
        NelderMeadOptions {
            initial_step: 0.1,
            x_tol: self.tolerance,
            f_tol: Some(self.tolerance),
            max_evals: (self.evals_per_dim * dim).max(dim + 2),
        }
    }
}

/// Locally maximizes the marginal likelihood over `log h` inside `bounds`,
/// starting from `start`. The returned likelihood is never below the start's.
pub fn optimize_particle(
    obs: &ObservationSet,
    start: &Hyperparameters,
    bounds: &HyperBounds,
    opts: NelderMeadOptions,
) -> Result<(Hyperparameters, f64)> {
    let m = start.dim();
    let start_ll = crate::gp::log_likelihood(obs, start)?;
    let log_bounds = Bounds::new(vec![bounds.min.ln(); m], vec![bounds.max.ln(); m])?;
    let x0: Vec<f64> = start.lengths().iter().map(|h| h.clamp(bounds.min, bounds.max).ln()).collect();
    let objective = |logh: &[f64]| {
        let hyp = Hyperparameters::new(logh.iter().map(|v| v.exp()).collect())?;
        Ok(match crate::gp::log_likelihood(obs, &hyp) {
            Ok(ll) => -ll,
            Err(Error::Singular { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        })
    };
    let res = nm_optimize(&x0, &log_bounds, objective, opts)?;
    if -res.best_cost >= start_ll {
        let hyp = Hyperparameters::new(res.best_x.iter().map(|v| v.exp()).collect())?;
        Ok((hyp, -res.best_cost))
    } else {
        // start was clamped into bounds and the clamped point scored lower
        Ok((start.clone(), start_ll))
    }
}

/// One hyperparameter hypothesis with its fitted model and weight.
#[derive(Debug, Clone)]
pub struct Particle {
    pub hyp: Hyperparameters,
    pub fitted: FittedGp,
    pub log_like: f64,
    pub weight: f64,
}

/// Serializable part of an ensemble; fitted models are rebuilt on restore.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleState {
    pub rng_seed: u64,
    pub refreshes: u64,
    pub hyps: Vec<Hyperparameters>,
}

#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    cfg: EnsembleConfig,
    particles: Vec<Particle>,
    rng_seed: u64,
    refreshes: u64,
}

impl ParticleEnsemble {
    /// An empty ensemble; call [`ParticleEnsemble::refresh`] to draw and fit particles.
    pub fn new(cfg: EnsembleConfig, rng_seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, particles: Vec::new(), rng_seed, refreshes: 0 })
    }

    /// Builds an ensemble from explicit hypotheses fitted on `obs`.
    pub fn from_hypotheses(cfg: EnsembleConfig, rng_seed: u64, obs: &ObservationSet, hyps: Vec<Hyperparameters>) -> Result<Self> {
        let mut ens = Self::new(cfg, rng_seed)?;
        for hyp in hyps {
            let fitted = FittedGp::fit(obs, &hyp)?;
            let log_like = fitted.log_likelihood();
            ens.particles.push(Particle { hyp, fitted, log_like, weight: 0.0 });
        }
        ens.reweight();
        Ok(ens)
    }

    pub fn restore(cfg: EnsembleConfig, obs: &ObservationSet, state: &EnsembleState) -> Result<Self> {
        let mut ens = Self::from_hypotheses(cfg, state.rng_seed, obs, state.hyps.clone())?;
        ens.refreshes = state.refreshes;
        Ok(ens)
    }

    pub fn state(&self) -> EnsembleState {
        EnsembleState {
            rng_seed: self.rng_seed,
            refreshes: self.refreshes,
            hyps: self.particles.iter().map(|p| p.hyp.clone()).collect(),
        }
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.cfg
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn is_fitted(&self) -> bool {
        !self.particles.is_empty()
    }

    /// Observation count the particles are conditioned on.
    pub fn observation_count(&self) -> usize {
        self.particles.first().map_or(0, |p| p.fitted.observations().len())
    }

    pub fn dim(&self) -> Option<usize> {
        self.particles.first().map(|p| p.hyp.dim())
    }

    /// Recomputes `w_i = L_i / Σ L` in log space.
    pub fn reweight(&mut self) {
        let weights = normalized_weights(&self.particles.iter().map(|p| p.log_like).collect::<Vec<_>>());
        for (p, w) in self.particles.iter_mut().zip(weights) {
            p.weight = w;
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, dim: usize) -> Hyperparameters {
        let (lo, hi) = (self.cfg.bounds.min.ln(), self.cfg.bounds.max.ln());
        let lengths = (0..dim).map(|_| rng.random_range(lo..=hi).exp()).collect();
        Hyperparameters::new(lengths).expect("bounds are positive")
    }

    /// Locally optimizes from `start`; on numerical failure redraws at random.
    fn settle(&self, obs: &ObservationSet, start: Hyperparameters, rng: &mut ChaCha8Rng) -> Result<Particle> {
        let opts = self.cfg.search_options(obs.dim());
        let mut candidate = start;
        for _ in 0..=MAX_REDRAWS {
            let fitted = optimize_particle(obs, &candidate, &self.cfg.bounds, opts)
                .and_then(|(hyp, _)| FittedGp::fit(obs, &hyp));
            match fitted {
                Ok(fitted) => {
                    let hyp = fitted.hyperparameters().clone();
                    let log_like = fitted.log_likelihood();
                    return Ok(Particle { hyp, fitted, log_like, weight: 0.0 });
                }
                Err(Error::Singular { jitter }) => {
                    log::debug!("particle fit singular (jitter {jitter:e}); redrawing");
                    candidate = self.draw(rng, obs.dim());
                }
                Err(e) => return Err(e),
            }
        }
        Err(Error::Singular { jitter: f64::NAN })
    }

    /// Refits every particle against `obs`.
    ///
    /// Surviving particles restart their local search from their previous
    /// hyperparameters; the lowest-likelihood fraction is redrawn log-uniformly
    /// inside the bounds. Duplicates are merged and replaced by fresh draws.
    pub fn refresh(&mut self, obs: &ObservationSet) -> Result<()> {
        let dim = obs.dim();
        if let Some(d) = self.dim() {
            crate::error::check_dim(d, dim)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(self.refreshes);
        self.refreshes += 1;

        let p = self.cfg.particles;
        let mut starts: Vec<Hyperparameters> = if self.particles.is_empty() {
            (0..p).map(|_| self.draw(&mut rng, dim)).collect()
        } else {
            let mut order: Vec<usize> = (0..self.particles.len()).collect();
            order.sort_by(|&a, &b| self.particles[a].log_like.total_cmp(&self.particles[b].log_like));
            let restart: Vec<usize> = order.into_iter().take(self.cfg.restarts()).collect();
            (0..p)
                .map(|i| match self.particles.get(i) {
                    Some(part) if !restart.contains(&i) => part.hyp.clone(),
                    _ => self.draw(&mut rng, dim),
                })
                .collect()
        };

        let mut settled: Vec<Particle> = Vec::with_capacity(p);
        for start in starts.drain(..) {
            let mut particle = self.settle(obs, start, &mut rng)?;
            let mut redraws = 0;
            while redraws < MAX_REDRAWS && settled.iter().any(|q| duplicates(&q.hyp, &particle.hyp)) {
                particle = self.settle(obs, self.draw(&mut rng, dim), &mut rng)?;
                redraws += 1;
            }
            settled.push(particle);
        }
        self.particles = settled;
        self.reweight();
        Ok(())
    }

    /// Mixture mean `Σ w_i μ_i(x)`.
    pub fn weighted_mean(&self, x: &[f64]) -> Result<f64> {
        if self.particles.is_empty() {
            return Err(Error::Unfitted);
        }
        let mut m = 0.0;
        for p in &self.particles {
            m += p.weight * p.fitted.predict_mean(x)?;
        }
        Ok(m)
    }

    /// Mixture variance `Σ w_i (σ_i² + μ_i²) − M²`, clamped at zero.
    pub fn weighted_variance(&self, x: &[f64]) -> Result<f64> {
        self.predict(x).map(|(_, v)| v)
    }

    /// Mixture mean and variance at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        if self.particles.is_empty() {
            return Err(Error::Unfitted);
        }
        if let [only] = self.particles.as_slice() {
            return only.fitted.predict(x);
        }
        let mut preds = Vec::with_capacity(self.particles.len());
        for p in &self.particles {
            preds.push((p.weight, p.fitted.predict(x)?));
        }
        let mean: f64 = preds.iter().map(|(w, (mu, _))| w * mu).sum();
        // Σ w σ² + Σ w (μ − M)² equals the mixture formula with less cancellation
        let var: f64 = preds.iter().map(|(w, (mu, s2))| w * (s2 + (mu - mean).powi(2))).sum();
        Ok((mean, var.max(0.0)))
    }
}

fn duplicates(a: &Hyperparameters, b: &Hyperparameters) -> bool {
    a.lengths().iter().zip(b.lengths()).all(|(x, y)| (x.ln() - y.ln()).abs() < MERGE_TOL)
}

/// `exp(l_i) / Σ exp(l_k)` computed without overflow or underflow to NaN.
pub fn normalized_weights(log_likes: &[f64]) -> Vec<f64> {
    let max = log_likes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![1.0 / log_likes.len() as f64; log_likes.len()];
    }
    let raw: Vec<f64> = log_likes.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / total).collect()
}
