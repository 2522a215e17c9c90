//! Choosing the next experiment: the swept biased cost `B = b·M − (1 − b)·Σ`
//! minimized inside a leash box around the best measured parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::nelder_mead::{nm_optimize, Bounds, NelderMeadOptions};
use crate::params::ParameterVector;

/// How the mixture uncertainty enters the biased cost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMeasure {
    /// `Σ = sqrt(Σ²)`, sharing cost units with the mean
    #[default]
    StdDev,
    Variance,
}

/// `b·M(x) − (1 − b)·Σ(x)`.
pub fn bias_value(ensemble: &ParticleEnsemble, x: &[f64], b: f64, measure: UncertaintyMeasure) -> Result<f64> {
    if !(0.0..=1.0).contains(&b) {
        return Err(Error::InvalidInput(format!("bias {b} outside [0, 1]")));
    }
    let (mean, var) = ensemble.predict(x)?;
    let spread = match measure {
        UncertaintyMeasure::StdDev => var.sqrt(),
        UncertaintyMeasure::Variance => var,
    };
    Ok(b * mean - (1.0 - b) * spread)
}

/// Linear sweep of `b` from 0 to 1 over a cycle of `Q` proposals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSchedule {
    cycle_len: usize,
    index: usize,
}

impl SweepSchedule {
    pub fn new(cycle_len: usize) -> Result<Self> {
        Self::at(cycle_len, 0)
    }

    pub fn at(cycle_len: usize, index: usize) -> Result<Self> {
        if cycle_len < 2 {
            return Err(Error::Config(format!("sweep cycle length {cycle_len} must be >= 2")));
        }
        if index >= cycle_len {
            return Err(Error::InvalidInput(format!("sweep index {index} outside cycle of {cycle_len}")));
        }
        Ok(Self { cycle_len, index })
    }

    pub fn cycle_len(&self) -> usize {
        self.cycle_len
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Returns `index / (Q − 1)` and advances the index modulo `Q`.
    pub fn next_bias(&mut self) -> f64 {
        let b = self.index as f64 / (self.cycle_len - 1) as f64;
        self.index = (self.index + 1) % self.cycle_len;
        b
    }
}

/// Box of half-width `half_width` around `center`, clipped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeashBox {
    pub center: ParameterVector,
    pub half_width: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl LeashBox {
    pub fn bounds(&self) -> Bounds {
        Bounds::new(self.lo.clone(), self.hi.clone()).expect("leash box has lo <= hi")
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lo.len() && x.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| l <= v && v <= h)
    }
}

pub fn leash_bounds(best: &ParameterVector, half_width: f64) -> Result<LeashBox> {
    if !(half_width > 0.0 && half_width <= 1.0) {
        return Err(Error::InvalidInput(format!("leash half-width {half_width} outside (0, 1]")));
    }
    let lo = best.iter().map(|c| (c - half_width).max(0.0)).collect();
    let hi = best.iter().map(|c| (c + half_width).min(1.0)).collect();
    Ok(LeashBox { center: best.clone(), half_width, lo, hi })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionConfig {
    /// multi-start count `S` (box midpoint, leash center, then random draws)
    pub starts: usize,
    /// local-search tolerance in normalized units
    pub tolerance: f64,
    pub evals_per_dim: usize,
    pub measure: UncertaintyMeasure,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self { starts: 10, tolerance: 1e-4, evals_per_dim: 100, measure: UncertaintyMeasure::StdDev }
    }
}

/// Outcome of one multi-start minimization of the biased cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub x: ParameterVector,
    pub bias_value: f64,
    /// starting points in search order, with their biased costs
    pub starts: Vec<(Vec<f64>, f64)>,
}

/// Minimizes the biased cost inside `leash` from `S` starts and returns the best
/// end point; ties go to the earliest start. Deterministic in all inputs.
pub fn propose_parameters(
    ensemble: &ParticleEnsemble,
    b: f64,
    leash: &LeashBox,
    rng_seed: u64,
    cfg: &AcquisitionConfig,
) -> Result<Proposal> {
    let n = ensemble.observation_count();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let objective = |x: &[f64]| bias_value(ensemble, x, b, cfg.measure);
    let bounds = leash.bounds();
    if bounds.is_degenerate() {
        let x = leash.lo.clone();
        let v = objective(&x)?;
        return Ok(Proposal { x: ParameterVector::new(x.clone())?, bias_value: v, starts: vec![(x, v)] });
    }

    let dim = bounds.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut starts: Vec<Vec<f64>> = vec![
        leash.lo.iter().zip(&leash.hi).map(|(l, h)| 0.5 * (l + h)).collect(),
        leash.center.to_vec(),
    ];
    while starts.len() < cfg.starts.max(1) {
        starts.push(
            leash
                .lo
                .iter()
                .zip(&leash.hi)
                .map(|(l, h)| if h > l { rng.random_range(*l..=*h) } else { *l })
                .collect(),
        );
    }
    starts.truncate(cfg.starts.max(1));

    let max_width = (0..dim).map(|j| bounds.width(j)).fold(0.0, f64::max);
    let opts = NelderMeadOptions {
        initial_step: 0.1,
        x_tol: cfg.tolerance / max_width,
        f_tol: None,
        max_evals: (cfg.evals_per_dim * dim).max(dim + 2),
    };

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut start_values = Vec::with_capacity(starts.len());
    for s in starts {
        let fs = objective(&s)?;
        let res = nm_optimize(&s, &bounds, objective, opts)?;
        let (x, f) = if res.best_cost <= fs { (res.best_x, res.best_cost) } else { (s.clone(), fs) };
        start_values.push((s, fs));
        if best.as_ref().is_none_or(|(_, fb)| f < *fb) {
            best = Some((x, f));
        }
    }
    let (x, v) = best.expect("at least one start");
    Ok(Proposal { x: ParameterVector::new(x)?, bias_value: v, starts: start_values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::EnsembleConfig;
    use crate::gp::Hyperparameters;
    use crate::params::ObservationSet;

    fn pv(v: &[f64]) -> ParameterVector {
        ParameterVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn sweep_sequence() {
        let mut s = SweepSchedule::new(5).unwrap();
        let seq: Vec<f64> = (0..10).map(|_| s.next_bias()).collect();
        assert_eq!(seq, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.0, 0.25, 0.5, 0.75, 1.0]);
        let mut end = SweepSchedule::at(5, 4).unwrap();
        assert_eq!(end.next_bias(), 1.0);
        assert_eq!(end.index(), 0);
        assert!(SweepSchedule::new(1).is_err());
    }

    #[test]
    fn leash_examples() {
        let b = leash_bounds(&pv(&[0.5, 0.5]), 0.2).unwrap();
        assert_eq!(b.lo, vec![0.3, 0.3]);
        assert_eq!(b.hi, vec![0.7, 0.7]);
        let edge = leash_bounds(&pv(&[0.05]), 0.2).unwrap();
        assert_eq!(edge.lo, vec![0.0]);
        assert_eq!(edge.hi, vec![0.25]);
        let full = leash_bounds(&pv(&[0.3, 0.9]), 1.0).unwrap();
        assert_eq!(full.lo, vec![0.0, 0.0]);
        assert_eq!(full.hi, vec![1.0, 1.0]);
        assert!(leash_bounds(&pv(&[0.5]), 0.0).is_err());
    }

    fn bowl_ensemble() -> ParticleEnsemble {
        let xs = [[0.2, 0.2], [0.8, 0.2], [0.2, 0.8], [0.8, 0.8], [0.5, 0.5], [0.5, 0.2], [0.2, 0.5]];
        let obs = ObservationSet::new(
            xs.iter().map(|x| pv(x)).collect(),
            xs.iter().map(|x| (x[0] - 0.45).powi(2) + (x[1] - 0.55).powi(2)).collect(),
            vec![0.0; xs.len()],
        )
        .unwrap();
        let hyp = Hyperparameters::new(vec![0.6, 0.6]).unwrap();
        ParticleEnsemble::from_hypotheses(EnsembleConfig::default(), 0, &obs, vec![hyp]).unwrap()
    }

    #[test]
    fn bias_limits() {
        let ens = bowl_ensemble();
        let x = [0.33, 0.61];
        let (m, v) = ens.predict(&x).unwrap();
        let sd = UncertaintyMeasure::StdDev;
        assert_eq!(bias_value(&ens, &x, 1.0, sd).unwrap(), m);
        assert_eq!(bias_value(&ens, &x, 0.0, sd).unwrap(), -v.sqrt());
        assert_eq!(bias_value(&ens, &x, 0.0, UncertaintyMeasure::Variance).unwrap(), -v);
    }

    #[test]
    fn proposal_stays_in_box_and_is_deterministic() {
        let ens = bowl_ensemble();
        let leash = leash_bounds(&pv(&[0.5, 0.5]), 0.2).unwrap();
        let cfg = AcquisitionConfig::default();
        for b in [0.0, 0.5, 1.0] {
            let p = propose_parameters(&ens, b, &leash, 9, &cfg).unwrap();
            assert!(leash.contains(&p.x));
            assert!(p.starts.iter().all(|(_, fs)| p.bias_value <= *fs));
            let q = propose_parameters(&ens, b, &leash, 9, &cfg).unwrap();
            assert_eq!(p, q);
        }
        let p = propose_parameters(&ens, 1.0, &leash, 9, &cfg).unwrap();
        assert!((p.x[0] - 0.45).abs() < 0.02 && (p.x[1] - 0.55).abs() < 0.02, "{:?}", p.x);
    }

    #[test]
    fn degenerate_box_returns_lo() {
        let ens = bowl_ensemble();
        let leash = LeashBox { center: pv(&[0.4, 0.4]), half_width: 0.2, lo: vec![0.4, 0.4], hi: vec![0.4, 0.4] };
        let p = propose_parameters(&ens, 0.5, &leash, 1, &AcquisitionConfig::default()).unwrap();
        assert_eq!(p.x.as_slice(), &[0.4, 0.4]);
    }
}
