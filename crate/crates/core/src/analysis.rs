//! Post-hoc interrogation of a fitted ensemble: cost-landscape cross-sections
//! through the best measured point and a ranking of parameter sensitivities.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::LogRecord;
use crate::ensemble::{EnsembleConfig, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::params::{ObservationSet, ParameterVector};

/// Model predictions on a uniform grid over one or two axes, all other
/// coordinates held at the anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub axes: Vec<usize>,
    /// normalized coordinates shared by every varied axis
    pub grid: Vec<f64>,
    pub anchor: Vec<f64>,
    /// predicted means; row-major over `(axes[0], axes[1])` in 2-D
    pub mean: Vec<f64>,
    /// predicted standard deviations, same layout as `mean`
    pub std_dev: Vec<f64>,
}

/// Metadata written next to a cross-section CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionMeta {
    pub axes: Vec<usize>,
    pub grid: Vec<f64>,
    pub anchor: Vec<f64>,
    pub observations: usize,
    pub particles: usize,
    pub seed: u64,
    pub mean_csv: String,
    pub std_csv: String,
}

impl CrossSection {
    pub fn grid_n(&self) -> usize {
        self.grid.len()
    }

    /// `(mean, std_dev)` at grid index `i` (1-D) or `(i, j)` (2-D).
    pub fn at(&self, i: usize, j: usize) -> (f64, f64) {
        let k = if self.axes.len() == 2 { i * self.grid_n() + j } else { i };
        (self.mean[k], self.std_dev[k])
    }

    /// Largest minus smallest predicted mean.
    pub fn mean_span(&self) -> f64 {
        let (lo, hi) = self.mean.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        hi - lo
    }

    /// Grid coordinates of the lowest predicted mean (earliest on ties).
    pub fn argmin(&self) -> Vec<f64> {
        let k = (0..self.mean.len()).fold(0, |best, k| if self.mean[k] < self.mean[best] { k } else { best });
        match self.axes.len() {
            2 => vec![self.grid[k / self.grid_n()], self.grid[k % self.grid_n()]],
            _ => vec![self.grid[k]],
        }
    }

    fn write_values<W: Write>(&self, values: &[f64], out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        if self.axes.len() == 2 {
            let mut header = vec![String::from("x\\y")];
            header.extend(self.grid.iter().map(|g| g.to_string()));
            w.write_record(&header)?;
            for (row, g) in values.chunks_exact(self.grid_n()).zip(&self.grid) {
                w.write_record(std::iter::once(g.to_string()).chain(row.iter().map(|v| v.to_string())))?;
            }
        } else {
            w.write_record([format!("x{}", self.axes[0]), "value".into()])?;
            for (g, v) in self.grid.iter().zip(values) {
                w.write_record([g.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `<stem>.csv` (means), `<stem>_std.csv` and the `<stem>.json`
    /// sidecar into `dir`.
    pub fn write(&self, dir: &Path, stem: &str, observations: usize, particles: usize, seed: u64) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mean_csv = format!("{stem}.csv");
        let std_csv = format!("{stem}_std.csv");
        self.write_values(&self.mean, fs::File::create(dir.join(&mean_csv))?)?;
        self.write_values(&self.std_dev, fs::File::create(dir.join(&std_csv))?)?;
        let meta = SectionMeta {
            axes: self.axes.clone(),
            grid: self.grid.clone(),
            anchor: self.anchor.clone(),
            observations,
            particles,
            seed,
            mean_csv,
            std_csv,
        };
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }
}

/// Parameters of the lowest-cost non-default record (earliest on ties).
pub fn best_point(records: &[LogRecord]) -> Result<Vec<f64>> {
    let pick = |valid: bool| {
        records
            .iter()
            .filter(|r| !valid || !r.is_default)
            .min_by(|a, b| a.cost.total_cmp(&b.cost).then(a.index.cmp(&b.index)))
    };
    pick(true)
        .or_else(|| pick(false))
        .map(|r| r.x.clone())
        .ok_or(Error::InsufficientData { needed: 1, got: 0 })
}

pub fn observations_of(records: &[LogRecord]) -> Result<ObservationSet> {
    ObservationSet::new(
        records.iter().map(|r| ParameterVector::new(r.x.clone())).collect::<Result<_>>()?,
        records.iter().map(|r| r.cost).collect(),
        records.iter().map(|r| r.uncert).collect(),
    )
}

/// Fits a fresh ensemble to every record of a log.
pub fn fit_log(records: &[LogRecord], cfg: EnsembleConfig, seed: u64) -> Result<ParticleEnsemble> {
    let obs = observations_of(records)?;
    let mut ens = ParticleEnsemble::new(cfg, seed)?;
    ens.refresh(&obs)?;
    Ok(ens)
}

fn uniform_grid(grid_n: usize) -> Result<Vec<f64>> {
    if grid_n < 2 {
        return Err(Error::InvalidInput(format!("grid needs at least 2 points, got {grid_n}")));
    }
    Ok((0..grid_n).map(|i| i as f64 / (grid_n - 1) as f64).collect())
}

fn check_axis(ens: &ParticleEnsemble, axis: usize) -> Result<usize> {
    let dim = ens.dim().ok_or(Error::Unfitted)?;
    if axis >= dim {
        return Err(Error::InvalidInput(format!("axis {axis} outside a {dim}-parameter model")));
    }
    Ok(dim)
}

fn check_anchor(dim: usize, anchor: &[f64]) -> Result<()> {
    crate::error::check_dim(dim, anchor.len())?;
    ParameterVector::normalized(anchor.to_vec()).map(|_| ())
}

/// Section along `axis` through `anchor` (normally [`best_point`]).
pub fn cross_section_1d(ens: &ParticleEnsemble, anchor: &[f64], axis: usize, grid_n: usize) -> Result<CrossSection> {
    let dim = check_axis(ens, axis)?;
    check_anchor(dim, anchor)?;
    let grid = uniform_grid(grid_n)?;
    let mut x = anchor.to_vec();
    let mut mean = Vec::with_capacity(grid_n);
    let mut std_dev = Vec::with_capacity(grid_n);
    for g in &grid {
        x[axis] = *g;
        let (m, v) = ens.predict(&x)?;
        mean.push(m);
        std_dev.push(v.sqrt());
    }
    Ok(CrossSection { axes: vec![axis], grid, anchor: anchor.to_vec(), mean, std_dev })
}

/// `grid_n × grid_n` section over two distinct axes through `anchor`.
pub fn cross_section_2d(
    ens: &ParticleEnsemble,
    anchor: &[f64],
    axes: (usize, usize),
    grid_n: usize,
) -> Result<CrossSection> {
    let dim = check_axis(ens, axes.0)?;
    check_axis(ens, axes.1)?;
    if axes.0 == axes.1 {
        return Err(Error::InvalidInput(format!("cross-section axes must differ, got {} twice", axes.0)));
    }
    check_anchor(dim, anchor)?;
    let grid = uniform_grid(grid_n)?;
    let mut x = anchor.to_vec();
    let mut mean = Vec::with_capacity(grid_n * grid_n);
    let mut std_dev = Vec::with_capacity(grid_n * grid_n);
    for gi in &grid {
        x[axes.0] = *gi;
        for gj in &grid {
            x[axes.1] = *gj;
            let (m, v) = ens.predict(&x)?;
            mean.push(m);
            std_dev.push(v.sqrt());
        }
    }
    Ok(CrossSection { axes: vec![axes.0, axes.1], grid, anchor: anchor.to_vec(), mean, std_dev })
}

/// `Σ_i w_i / h_{j,i}` per axis, sorted descending with ties in axis order.
pub fn sensitivity_ranking(ens: &ParticleEnsemble) -> Result<Vec<(usize, f64)>> {
    let dim = ens.dim().ok_or(Error::Unfitted)?;
    let mut sens = vec![0.0; dim];
    for p in ens.particles() {
        for (s, h) in sens.iter_mut().zip(p.hyp.lengths()) {
            *s += p.weight / h;
        }
    }
    let mut ranked: Vec<(usize, f64)> = sens.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::Hyperparameters;

    fn ensemble(lengths: Vec<Vec<f64>>) -> ParticleEnsemble {
        let xs = [[0.1, 0.2, 0.3], [0.8, 0.4, 0.6], [0.5, 0.9, 0.1], [0.3, 0.6, 0.8]];
        let obs = ObservationSet::new(
            xs.iter().map(|x| ParameterVector::new(x.to_vec()).unwrap()).collect(),
            xs.iter().map(|x| x.iter().map(|v| (v - 0.5).powi(2)).sum()).collect(),
            vec![0.05; xs.len()],
        )
        .unwrap();
        let cfg = EnsembleConfig { particles: lengths.len(), ..EnsembleConfig::default() };
        let hyps = lengths.into_iter().map(|l| Hyperparameters::new(l).unwrap()).collect();
        ParticleEnsemble::from_hypotheses(cfg, 0, &obs, hyps).unwrap()
    }

    #[test]
    fn single_particle_ranks_by_inverse_length() {
        let ens = ensemble(vec![vec![0.5, 0.1, 2.0]]);
        let r = sensitivity_ranking(&ens).unwrap();
        assert_eq!(r.iter().map(|(a, _)| *a).collect::<Vec<_>>(), vec![1, 0, 2]);
        assert_eq!(r[0].1, 10.0);
        assert_eq!(r[2].1, 0.5);
    }

    #[test]
    fn equal_lengths_tie_in_axis_order() {
        let ens = ensemble(vec![vec![0.3; 3]]);
        let r = sensitivity_ranking(&ens).unwrap();
        assert_eq!(r.iter().map(|(a, _)| *a).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(r.windows(2).all(|w| w[0].1 == w[1].1));
    }

    #[test]
    fn minimal_grid_and_anchor_consistency() {
        let ens = ensemble(vec![vec![0.5, 0.4, 0.6], vec![0.2, 0.9, 0.3]]);
        let anchor = [0.5, 0.5, 0.5];
        let s = cross_section_1d(&ens, &anchor, 1, 2).unwrap();
        assert_eq!(s.grid, vec![0.0, 1.0]);
        let s = cross_section_1d(&ens, &anchor, 1, 3).unwrap();
        let (m, v) = ens.predict(&anchor).unwrap();
        assert_eq!(s.at(1, 0), (m, v.sqrt()));
        let s2 = cross_section_2d(&ens, &anchor, (0, 1), 3).unwrap();
        assert_eq!(s2.at(1, 1), (m, v.sqrt()));
        assert!(cross_section_1d(&ens, &anchor, 3, 5).is_err());
        assert!(cross_section_1d(&ens, &anchor, 0, 1).is_err());
        assert!(cross_section_2d(&ens, &anchor, (1, 1), 5).is_err());
    }

    #[test]
    fn unfitted_is_an_error() {
        let ens = ParticleEnsemble::new(EnsembleConfig::default(), 0).unwrap();
        assert!(matches!(cross_section_1d(&ens, &[0.5], 0, 4), Err(Error::Unfitted)));
        assert!(matches!(sensitivity_ranking(&ens), Err(Error::Unfitted)));
    }
}
