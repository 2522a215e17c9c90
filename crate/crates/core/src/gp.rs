//! Exact Gaussian-process regression with a constant offset and a
//! squared-exponential correlation function.
//!
//! The model is conditioned on an [`ObservationSet`] `(X, C, U)`. With
//! `R_ij = K(X_i, X_j, H) + δ_ij U_i²`, `j` the all-ones vector and `Y = C`:
//!
//! ```text
//! β   = (jᵀR⁻¹j)⁻¹ jᵀR⁻¹Y
//! γ   = R⁻¹(Y − jβ)
//! μ(x)  = β + r(x)ᵀγ
//! σ²(x) = σ_C² (1 − rᵀR⁻¹r + (jᵀR⁻¹j)⁻¹ (jᵀR⁻¹r − 1)²)
//! ```
//!
//! where `σ_C²` is the population variance of the costs. The kernel has no
//! factor ½ in its exponent: `K = exp(−Σ (a_j − b_j)² / h_j²)`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, Cholesky};
use crate::params::ObservationSet;

/// First jitter level, relative to the mean diagonal of `R`.
const JITTER_START: f64 = 1e-10;
/// Largest relative jitter tried before giving up.
const JITTER_MAX: f64 = 1e-4;

/// Per-dimension correlation lengths, in normalized parameter units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Hyperparameters {
    lengths: Vec<f64>,
}

impl Hyperparameters {
    pub fn new(lengths: Vec<f64>) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::InvalidInput("hyperparameters must be non-empty".into()));
        }
        if let Some(h) = lengths.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
            return Err(Error::InvalidInput(format!("correlation length {h} must be finite and > 0")));
        }
        Ok(Self { lengths })
    }

    /// Same length `h` along every one of `dim` axes.
    pub fn isotropic(dim: usize, h: f64) -> Result<Self> {
        Self::new(vec![h; dim])
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn dim(&self) -> usize {
        self.lengths.len()
    }
}

/// Box constraint `[min, max]` on every correlation length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for HyperBounds {
    fn default() -> Self {
        Self { min: 0.01, max: 10.0 }
    }
}

impl HyperBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.min > 0.0 && self.max > self.min && self.max.is_finite()) {
            return Err(Error::Config(format!(
                "correlation-length bounds [{}, {}] must satisfy 0 < min < max",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, hyp: &Hyperparameters) -> bool {
        hyp.lengths.iter().all(|h| (self.min..=self.max).contains(h))
    }
}

/// Squared-exponential correlation `exp(−Σ_j (a_j − b_j)² / h_j²)`.
pub fn kernel_value(a: &[f64], b: &[f64], hyp: &Hyperparameters) -> Result<f64> {
    check_dim(hyp.dim(), a.len())?;
    check_dim(hyp.dim(), b.len())?;
    let exponent: f64 = a
        .iter()
        .zip(b)
        .zip(&hyp.lengths)
        .map(|((x, y), h)| {
            let d = (x - y) / h;
            d * d
        })
        .sum();
    Ok((-exponent).exp())
}

/// A GP conditioned on a fixed observation set and hyperparameters.
///
/// Immutable once built; predictions cost `O(N·M)` for the mean and `O(N²)`
/// for the variance.
#[derive(Debug, Clone)]
pub struct FittedGp {
    obs: ObservationSet,
    hyp: Hyperparameters,
    /// observation inputs, row-major `N × M`
    xs: Vec<f64>,
    inv_len_sq: Vec<f64>,
    factor: Cholesky,
    beta: f64,
    gamma: Vec<f64>,
    rinv_j: Vec<f64>,
    j_rinv_j: f64,
    cost_var: f64,
    log_like: f64,
    jitter: f64,
}

impl FittedGp {
    pub fn fit(obs: &ObservationSet, hyp: &Hyperparameters) -> Result<Self> {
        let n = obs.len();
        let m = obs.dim();
        check_dim(m, hyp.dim())?;

        let xs: Vec<f64> = obs.params().iter().flat_map(|p| p.iter().copied()).collect();
        let inv_len_sq: Vec<f64> = hyp.lengths.iter().map(|h| 1.0 / (h * h)).collect();

        let mut r = vec![0.0; n * n];
        for i in 0..n {
            r[i * n + i] = 1.0 + obs.uncerts()[i].powi(2);
            for k in 0..i {
                let v = sq_exp(&xs[i * m..(i + 1) * m], &xs[k * m..(k + 1) * m], &inv_len_sq);
                r[i * n + k] = v;
                r[k * n + i] = v;
            }
        }
        let (factor, jitter) = factor_with_jitter(&mut r, n)?;

        let ones = vec![1.0; n];
        let rinv_j = factor.solve(&ones);
        let j_rinv_j: f64 = rinv_j.iter().sum();
        let y = obs.costs();
        let beta = dot(&rinv_j, y) / j_rinv_j;
        let resid: Vec<f64> = y.iter().map(|c| c - beta).collect();
        let gamma = factor.solve(&resid);

        let mean = y.iter().sum::<f64>() / n as f64;
        let cost_var = y.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n as f64;

        let log_like = if n == 1 {
            // every term cancels for a single observation
            0.0
        } else {
            let whitened = factor.solve_lower(&resid);
            let quad = dot(&whitened, &whitened);
            0.5 * (-factor.log_det()
                - j_rinv_j.ln()
                - (n as f64 - 1.0) * (2.0 * std::f64::consts::PI).ln()
                - quad)
        };

        Ok(Self {
            obs: obs.clone(),
            hyp: hyp.clone(),
            xs,
            inv_len_sq,
            factor,
            beta,
            gamma,
            rinv_j,
            j_rinv_j,
            cost_var,
            log_like,
            jitter,
        })
    }

    pub fn observations(&self) -> &ObservationSet {
        &self.obs
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyp
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// Population variance of the observed costs.
    pub fn cost_variance(&self) -> f64 {
        self.cost_var
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_like
    }

    /// Absolute jitter added to the diagonal of `R` (0 when none was needed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn correlations(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.hyp.dim();
        check_dim(m, x.len())?;
        Ok(self.xs.chunks_exact(m).map(|xi| sq_exp(x, xi, &self.inv_len_sq)).collect())
    }

    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        let r = self.correlations(x)?;
        Ok(self.beta + dot(&r, &self.gamma))
    }

    pub fn predict_variance(&self, x: &[f64]) -> Result<f64> {
        self.predict(x).map(|(_, v)| v)
    }

    /// Mean and variance at `x`, sharing the correlation vector.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        let n = self.obs.len();
        if n < 2 {
            return Err(Error::InsufficientData { needed: 2, got: n });
        }
        let r = self.correlations(x)?;
        let mean = self.beta + dot(&r, &self.gamma);
        let v = self.factor.solve_lower(&r);
        let r_rinv_r = dot(&v, &v);
        let u = dot(&self.rinv_j, &r) - 1.0;
        let var = self.cost_var * (1.0 - r_rinv_r + u * u / self.j_rinv_j);
        Ok((mean, var.max(0.0)))
    }

    /// Gradient of the predicted mean with respect to `x`.
    pub fn predict_mean_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.hyp.dim();
        let r = self.correlations(x)?;
        let mut grad = vec![0.0; m];
        for ((xi, ri), gi) in self.xs.chunks_exact(m).zip(&r).zip(&self.gamma) {
            let w = gi * ri;
            for j in 0..m {
                grad[j] -= 2.0 * (x[j] - xi[j]) * self.inv_len_sq[j] * w;
            }
        }
        Ok(grad)
    }
}

/// Marginal log-likelihood `log P(C | X, U, H)` of the observations.
pub fn log_likelihood(obs: &ObservationSet, hyp: &Hyperparameters) -> Result<f64> {
    FittedGp::fit(obs, hyp).map(|gp| gp.log_likelihood())
}

fn sq_exp(a: &[f64], b: &[f64], inv_len_sq: &[f64]) -> f64 {
    let e: f64 = a
        .iter()
        .zip(b)
        .zip(inv_len_sq)
        .map(|((x, y), w)| (x - y) * (x - y) * w)
        .sum();
    (-e).exp()
}

/// Factorizes `r`, adding escalating diagonal jitter on failure. Returns the
/// factor and the absolute jitter used.
fn factor_with_jitter(r: &mut [f64], n: usize) -> Result<(Cholesky, f64)> {
    if let Some(f) = Cholesky::factor(r, n) {
        return Ok((f, 0.0));
    }
    let mean_diag = (0..n).map(|i| r[i * n + i]).sum::<f64>() / n as f64;
    let mut added = 0.0;
    let mut level = JITTER_START;
    loop {
        let jitter = level * mean_diag;
        for i in 0..n {
            r[i * n + i] += jitter - added;
        }
        added = jitter;
        if let Some(f) = Cholesky::factor(r, n) {
            log::debug!("covariance factorized with jitter {jitter:e}");
            return Ok((f, jitter));
        }
        if level >= JITTER_MAX * (1.0 - 1e-9) {
            return Err(Error::Singular { jitter });
        }
        level *= 10.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParameterVector;

    fn pv(v: &[f64]) -> ParameterVector {
        ParameterVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn kernel_examples() {
        let h1 = Hyperparameters::new(vec![0.7]).unwrap();
        assert_eq!(kernel_value(&[0.3], &[0.3], &h1).unwrap(), 1.0);
        let e1 = kernel_value(&[0.0], &[0.7], &h1).unwrap();
        assert!((e1 - (-1.0f64).exp()).abs() < 1e-15);
        let h2 = Hyperparameters::new(vec![1.0, 2.0]).unwrap();
        let e2 = kernel_value(&[0.0, 0.0], &[1.0, 2.0], &h2).unwrap();
        assert!((e2 - 0.1353352832366127).abs() < 1e-15);
        assert!(matches!(
            kernel_value(&[0.0], &[0.0, 1.0], &h2),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_observation() {
        let obs = ObservationSet::new(vec![pv(&[0.4, 0.2])], vec![3.5], vec![0.3]).unwrap();
        let gp = FittedGp::fit(&obs, &Hyperparameters::isotropic(2, 0.2).unwrap()).unwrap();
        assert_eq!(gp.beta(), 3.5);
        assert_eq!(gp.gamma(), &[0.0]);
        assert_eq!(gp.log_likelihood(), 0.0);
        assert_eq!(gp.predict_mean(&[0.9, 0.9]).unwrap(), 3.5);
        assert_eq!(gp.predict_mean_gradient(&[0.1, 0.8]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            gp.predict_variance(&[0.1, 0.1]),
            Err(Error::InsufficientData { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn duplicate_noise_free_points_need_jitter() {
        let obs = ObservationSet::new(vec![pv(&[0.5]), pv(&[0.5])], vec![1.0, 2.0], vec![0.0, 0.0])
            .unwrap();
        let gp = FittedGp::fit(&obs, &Hyperparameters::new(vec![0.3]).unwrap()).unwrap();
        assert!(gp.jitter() > 0.0);
        assert!((gp.beta() - 1.5).abs() < 1e-9);
    }

    #[test]
    fn far_field_variance() {
        let obs = ObservationSet::new(
            vec![pv(&[0.1]), pv(&[0.2]), pv(&[0.35])],
            vec![1.0, 3.0, 2.0],
            vec![0.1, 0.0, 0.2],
        )
        .unwrap();
        let gp = FittedGp::fit(&obs, &Hyperparameters::new(vec![0.1]).unwrap()).unwrap();
        // r(x) underflows to exactly zero this far away
        let var = gp.predict_variance(&[1e3]).unwrap();
        let expected = gp.cost_variance() * (1.0 + 1.0 / gp.j_rinv_j);
        assert!((var - expected).abs() < 1e-14 * expected);
        assert!((gp.cost_variance() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_midpoint_has_zero_gradient() {
        let obs = ObservationSet::new(vec![pv(&[0.2, 0.5]), pv(&[0.6, 0.5])], vec![1.0, 1.0], vec![0.0; 2])
            .unwrap();
        let gp = FittedGp::fit(&obs, &Hyperparameters::new(vec![0.3, 0.3]).unwrap()).unwrap();
        let g = gp.predict_mean_gradient(&[0.4, 0.5]).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-14), "{g:?}");
    }

    #[test]
    fn interpolates_noise_free_data() {
        let obs = ObservationSet::new(
            vec![pv(&[0.1]), pv(&[0.5]), pv(&[0.8])],
            vec![2.0, -1.0, 0.5],
            vec![0.0; 3],
        )
        .unwrap();
        let gp = FittedGp::fit(&obs, &Hyperparameters::new(vec![0.25]).unwrap()).unwrap();
        for (x, c) in obs.params().iter().zip(obs.costs()) {
            let (m, v) = gp.predict(x).unwrap();
            assert!((m - c).abs() < 1e-9);
            assert!(v < 1e-9);
        }
    }
}
