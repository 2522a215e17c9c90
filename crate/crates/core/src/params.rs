//! Normalized parameter vectors and the observation history the model conditions on.

use std::ops::{Deref, Index};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A point in the normalized search space `[0, 1]^M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("parameter vector must be non-empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite parameter {v}")));
        }
        Ok(Self(values))
    }

    /// Like [`ParameterVector::new`] but additionally requires every entry in `[0, 1]`.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let p = Self::new(values)?;
        if let Some(v) = p.0.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("normalized parameter {v} outside [0, 1]")));
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParameterVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for ParameterVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for ParameterVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

/// Parameters, costs and uncertainties of every experiment run so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    params: Vec<ParameterVector>,
    costs: Vec<f64>,
    uncerts: Vec<f64>,
}

impl ObservationSet {
    pub fn new(params: Vec<ParameterVector>, costs: Vec<f64>, uncerts: Vec<f64>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::InvalidInput("observation set must be non-empty".into()));
        }
        if costs.len() != params.len() || uncerts.len() != params.len() {
            return Err(Error::InvalidInput(format!(
                "observation lists differ in length: {} params, {} costs, {} uncerts",
                params.len(),
                costs.len(),
                uncerts.len()
            )));
        }
        let dim = params[0].dim();
        let mut set = Self { params: Vec::with_capacity(params.len()), costs: vec![], uncerts: vec![] };
        for ((p, c), u) in params.into_iter().zip(costs).zip(uncerts) {
            check_dim(dim, p.dim())?;
            set.push_unchecked(p, c, u)?;
        }
        Ok(set)
    }

    /// Appends one observation (`N -> N + 1`).
    pub fn push(&mut self, x: ParameterVector, cost: f64, uncert: f64) -> Result<()> {
        check_dim(self.dim(), x.dim())?;
        self.push_unchecked(x, cost, uncert)
    }

    fn push_unchecked(&mut self, x: ParameterVector, cost: f64, uncert: f64) -> Result<()> {
        if !cost.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite cost {cost}")));
        }
        if !(uncert.is_finite() && uncert >= 0.0) {
            return Err(Error::InvalidInput(format!("uncertainty {uncert} must be finite and >= 0")));
        }
        self.params.push(x);
        self.costs.push(cost);
        self.uncerts.push(uncert);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.params[0].dim()
    }

    pub fn params(&self) -> &[ParameterVector] {
        &self.params
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn uncerts(&self) -> &[f64] {
        &self.uncerts
    }

    /// Returns a copy with every cost shifted by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        let mut out = self.clone();
        out.costs.iter_mut().for_each(|c| *c += delta);
        out
    }

    /// Returns a copy with the uncertainties replaced.
    pub fn with_uncerts(&self, uncerts: Vec<f64>) -> Result<Self> {
        Self::new(self.params.clone(), self.costs.clone(), uncerts)
    }
}
