//! Bounded Nelder-Mead simplex search.
//!
//! The solver is an ask/tell state machine so the same code drives both
//! in-process minimization (likelihood and acquisition searches) and the
//! online baseline, where every evaluation is a physical experiment that
//! may be logged, interrupted and replayed. Reflection, expansion,
//! contraction and shrink coefficients are the textbook `(1, 2, 0.5, 0.5)`.
//! Candidate points are clipped to the bounds before evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Axis-aligned box `lo <= x <= hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if lo.is_empty() {
            return Err(Error::InvalidInput("bounds must be non-empty".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l <= h)) {
            return Err(Error::InvalidInput("bounds require finite lo <= hi".into()));
        }
        Ok(Self { lo, hi })
    }

    /// The normalized domain `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Self { lo: vec![0.0; dim], hi: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn width(&self, j: usize) -> f64 {
        self.hi[j] - self.lo[j]
    }

    pub fn clip(&self, x: &mut [f64]) {
        for ((v, l), h) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| l <= v && v <= h)
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    /// Initial vertex offset as a fraction of each axis' bound width.
    pub initial_step: f64,
    /// Stop once every vertex lies within this fraction of the bound width of the best.
    pub x_tol: f64,
    /// Optional stop once `f_worst − f_best <= f_tol · max(1, |f_best|)`.
    pub f_tol: Option<f64>,
    /// Maximum number of objective evaluations.
    pub max_evals: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { initial_step: 0.1, x_tol: 1e-4, f_tol: None, max_evals: 1000 }
    }
}

/// `M + 1` vertices and their objective values, kept sorted best-first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simplex {
    pub vertices: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl Simplex {
    fn sort(&mut self) {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        // stable, so earlier vertices win ties
        order.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        self.vertices = order.iter().map(|&i| self.vertices[i].clone()).collect();
        self.values = order.iter().map(|&i| self.values[i]).collect();
    }

    pub fn best(&self) -> (&[f64], f64) {
        (&self.vertices[0], self.values[0])
    }
}

#[derive(Debug, Clone)]
enum Phase {
    Init { next: usize },
    Reflect { centroid: Vec<f64> },
    Expand { centroid: Vec<f64>, xr: Vec<f64>, fr: f64 },
    ContractOutside { xr: Vec<f64>, fr: f64 },
    ContractInside,
    Shrink { next: usize },
}

/// Ask/tell Nelder-Mead optimizer over a box.
#[derive(Debug, Clone)]
pub struct NelderMead {
    bounds: Bounds,
    opts: NelderMeadOptions,
    simplex: Simplex,
    phase: Phase,
    pending: Option<Vec<f64>>,
    evals: usize,
    iterations: usize,
    best: Option<(Vec<f64>, f64)>,
}

impl NelderMead {
    /// Builds the initial simplex: `start` plus one vertex per axis offset by
    /// `initial_step · width`, flipped inward where it would leave the box.
    pub fn new(start: &[f64], bounds: Bounds, opts: NelderMeadOptions) -> Result<Self> {
        check_dim(bounds.dim(), start.len())?;
        let mut x0 = start.to_vec();
        bounds.clip(&mut x0);
        let m = x0.len();
        let mut vertices = vec![x0.clone()];
        for j in 0..m {
            let step = opts.initial_step * bounds.width(j);
            let mut v = x0.clone();
            v[j] = if x0[j] + step <= bounds.hi[j] { x0[j] + step } else { x0[j] - step };
            bounds.clip(&mut v);
            vertices.push(v);
        }
        Ok(Self {
            bounds,
            opts,
            simplex: Simplex { vertices, values: vec![f64::INFINITY; m + 1] },
            phase: Phase::Init { next: 0 },
            pending: None,
            evals: 0,
            iterations: 0,
            best: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn evaluations(&self) -> usize {
        self.evals
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn simplex(&self) -> &Simplex {
        &self.simplex
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    /// Best point evaluated so far.
    pub fn best(&self) -> Option<(&[f64], f64)> {
        self.best.as_ref().map(|(x, f)| (x.as_slice(), *f))
    }

    /// True once the simplex collapsed below tolerance (only checked between iterations).
    pub fn converged(&self) -> bool {
        if matches!(self.phase, Phase::Init { .. } | Phase::Shrink { .. }) || self.pending.is_some() {
            return false;
        }
        if !matches!(self.phase, Phase::Reflect { .. }) {
            return false;
        }
        let best = &self.simplex.vertices[0];
        let diameter = self.simplex.vertices[1..]
            .iter()
            .flat_map(|v| {
                v.iter().zip(best).enumerate().map(|(j, (a, b))| {
                    let w = self.bounds.width(j);
                    if w > 0.0 { (a - b).abs() / w } else { 0.0 }
                })
            })
            .fold(0.0, f64::max);
        if diameter < self.opts.x_tol {
            return true;
        }
        if let Some(f_tol) = self.opts.f_tol {
            let fb = self.simplex.values[0];
            let fw = *self.simplex.values.last().unwrap();
            if fw - fb <= f_tol * fb.abs().max(1.0) {
                return true;
            }
        }
        false
    }

    /// Next point to evaluate. Repeated calls without `tell` return the same point.
    pub fn ask(&mut self) -> Vec<f64> {
        if let Some(p) = &self.pending {
            return p.clone();
        }
        let p = self.next_point();
        self.pending = Some(p.clone());
        p
    }

    fn next_point(&mut self) -> Vec<f64> {
        let m = self.dim();
        match &self.phase {
            Phase::Init { next } => self.simplex.vertices[*next].clone(),
            Phase::Shrink { next } => {
                let best = &self.simplex.vertices[0];
                let mut v: Vec<f64> = best
                    .iter()
                    .zip(&self.simplex.vertices[*next])
                    .map(|(b, x)| b + SHRINK * (x - b))
                    .collect();
                self.bounds.clip(&mut v);
                v
            }
            Phase::Reflect { .. } => {
                let centroid = self.centroid();
                let worst = &self.simplex.vertices[m];
                let mut xr: Vec<f64> =
                    centroid.iter().zip(worst).map(|(c, w)| c + REFLECT * (c - w)).collect();
                self.bounds.clip(&mut xr);
                self.phase = Phase::Reflect { centroid };
                xr
            }
            Phase::Expand { centroid, .. } => {
                let worst = &self.simplex.vertices[m];
                let mut xe: Vec<f64> =
                    centroid.iter().zip(worst).map(|(c, w)| c + EXPAND * (c - w)).collect();
                self.bounds.clip(&mut xe);
                xe
            }
            Phase::ContractOutside { xr, .. } => {
                let centroid = self.centroid();
                let mut xc: Vec<f64> =
                    centroid.iter().zip(xr).map(|(c, r)| c + CONTRACT * (r - c)).collect();
                self.bounds.clip(&mut xc);
                xc
            }
            Phase::ContractInside => {
                let centroid = self.centroid();
                let worst = &self.simplex.vertices[m];
                let mut xc: Vec<f64> =
                    centroid.iter().zip(worst).map(|(c, w)| c + CONTRACT * (w - c)).collect();
                self.bounds.clip(&mut xc);
                xc
            }
        }
    }

    fn centroid(&self) -> Vec<f64> {
        let m = self.dim();
        let mut c = vec![0.0; m];
        for v in &self.simplex.vertices[..m] {
            for (ci, vi) in c.iter_mut().zip(v) {
                *ci += vi;
            }
        }
        c.iter_mut().for_each(|ci| *ci /= m as f64);
        c
    }

    /// Reports the objective value at the last asked point. Non-finite values
    /// are treated as `+∞`.
    pub fn tell(&mut self, value: f64) {
        let x = self.pending.take().unwrap_or_else(|| self.next_point());
        let f = if value.is_nan() { f64::INFINITY } else { value };
        self.evals += 1;
        if self.best.as_ref().is_none_or(|(_, fb)| f < *fb) {
            self.best = Some((x.clone(), f));
        }
        let m = self.dim();
        let phase = std::mem::replace(&mut self.phase, Phase::ContractInside);
        self.phase = match phase {
            Phase::Init { next } => {
                self.simplex.values[next] = f;
                if next == m {
                    self.finish_iteration()
                } else {
                    Phase::Init { next: next + 1 }
                }
            }
            Phase::Shrink { next } => {
                self.simplex.vertices[next] = x;
                self.simplex.values[next] = f;
                if next == m {
                    self.finish_iteration()
                } else {
                    Phase::Shrink { next: next + 1 }
                }
            }
            Phase::Reflect { centroid } => {
                let f1 = self.simplex.values[0];
                let f_second = self.simplex.values[m - 1];
                let fw = self.simplex.values[m];
                if f < f1 {
                    Phase::Expand { centroid, xr: x, fr: f }
                } else if f < f_second {
                    self.replace_worst(x, f)
                } else if f < fw {
                    Phase::ContractOutside { xr: x, fr: f }
                } else {
                    Phase::ContractInside
                }
            }
            Phase::Expand { xr, fr, .. } => {
                if f < fr {
                    self.replace_worst(x, f)
                } else {
                    self.replace_worst(xr, fr)
                }
            }
            Phase::ContractOutside { fr, .. } => {
                if f <= fr {
                    self.replace_worst(x, f)
                } else {
                    Phase::Shrink { next: 1 }
                }
            }
            Phase::ContractInside => {
                if f < self.simplex.values[m] {
                    self.replace_worst(x, f)
                } else {
                    Phase::Shrink { next: 1 }
                }
            }
        };
    }

    fn replace_worst(&mut self, x: Vec<f64>, f: f64) -> Phase {
        let m = self.dim();
        self.simplex.vertices[m] = x;
        self.simplex.values[m] = f;
        self.finish_iteration()
    }

    fn finish_iteration(&mut self) -> Phase {
        self.simplex.sort();
        self.iterations += 1;
        Phase::Reflect { centroid: Vec::new() }
    }

    /// Runs evaluations until the current iteration completes (the initial
    /// simplex evaluation counts as one iteration).
    pub fn step<F>(&mut self, mut evaluate: F) -> Result<()>
    where
        F: FnMut(&[f64]) -> Result<f64>,
    {
        let start = self.iterations;
        while self.iterations == start {
            let x = self.ask();
            let f = evaluate(&x)?;
            self.tell(f);
        }
        Ok(())
    }
}

/// Result of a completed simplex search.
#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub best_x: Vec<f64>,
    pub best_cost: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimizes `evaluate` from `start` inside `bounds` until the simplex collapses
/// or `opts.max_evals` evaluations have been spent.
pub fn nm_optimize<F>(start: &[f64], bounds: &Bounds, mut evaluate: F, opts: NelderMeadOptions) -> Result<NelderMeadResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let needed = start.len() + 2;
    if opts.max_evals < needed {
        return Err(Error::BudgetTooSmall { budget: opts.max_evals, needed });
    }
    let mut nm = NelderMead::new(start, bounds.clone(), opts)?;
    while nm.evaluations() < opts.max_evals && !nm.converged() {
        let x = nm.ask();
        let f = evaluate(&x)?;
        nm.tell(f);
    }
    let converged = nm.converged();
    let (x, f) = nm.best().expect("at least one evaluation");
    Ok(NelderMeadResult { best_x: x.to_vec(), best_cost: f, evaluations: nm.evaluations(), converged })
}
