//! Experiment cost from absorption images, and combination of paired runs
//! into one cost/uncertainty sample.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-pixel optical depth, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorptionImage {
    width: usize,
    height: usize,
    od: Vec<f64>,
}

impl AbsorptionImage {
    pub fn new(width: usize, height: usize, od: Vec<f64>) -> Result<Self> {
        if od.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "image of {width}x{height} needs {} pixels, got {}",
                width * height,
                od.len()
            )));
        }
        if let Some(v) = od.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidInput(format!("optical depth {v} must be finite and >= 0")));
        }
        Ok(Self { width, height, od })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.od
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.od[y * self.width + x]
    }

    /// Little-endian raster: `u32` width, `u32` height, then row-major `f64` values.
    pub fn read_raster<R: Read>(mut r: R) -> Result<Self> {
        let mut dims = [0u8; 8];
        r.read_exact(&mut dims)?;
        let width = u32::from_le_bytes(dims[..4].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(dims[4..].try_into().unwrap()) as usize;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != width * height * 8 {
            return Err(Error::InvalidInput(format!(
                "raster body has {} bytes, expected {}",
                bytes.len(),
                width * height * 8
            )));
        }
        let od = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::new(width, height, od)
    }

    pub fn write_raster<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        for v in &self.od {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Headerless CSV with one image row per line.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(r);
        let mut od = Vec::new();
        let mut width = None;
        let mut height = 0;
        for rec in reader.records() {
            let rec = rec?;
            if width.is_some_and(|w| w != rec.len()) {
                return Err(Error::InvalidInput("ragged image CSV".into()));
            }
            width = Some(rec.len());
            for field in rec.iter() {
                od.push(field.parse::<f64>().map_err(|e| Error::InvalidInput(format!("bad pixel {field:?}: {e}")))?);
            }
            height += 1;
        }
        Self::new(width.unwrap_or(0), height, od)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for row in self.od.chunks_exact(self.width.max(1)) {
            writer.write_record(row.iter().map(|v| v.to_string()))?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Mean of the optical depths lying in `[lo, hi]`.
pub fn threshold_cost(img: &AbsorptionImage, lo: f64, hi: f64) -> Result<f64> {
    if !(lo >= 0.0 && lo < hi) {
        return Err(Error::InvalidInput(format!("thresholds require 0 <= lo < hi, got [{lo}, {hi}]")));
    }
    // running mean, so a uniform in-band image returns its value exactly
    let (mean, count) = img
        .od
        .iter()
        .filter(|v| (lo..=hi).contains(*v))
        .fold((0.0, 0usize), |(m, n), v| (m + (v - m) / (n + 1) as f64, n + 1));
    if count == 0 {
        return Err(Error::NoSignal);
    }
    Ok(mean.clamp(lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostConfig {
    /// lower optical-depth threshold (noise floor)
    pub od_lo: f64,
    /// upper optical-depth threshold (just below saturation)
    pub od_hi: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub default_cost: f64,
    pub default_uncert: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { od_lo: 0.15, od_hi: 2.5, u_min: 0.02, u_max: 0.5, default_cost: 2.0, default_uncert: 0.5 }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.od_lo >= 0.0 && self.od_lo < self.od_hi) {
            return Err(Error::Config("cost thresholds require 0 <= od_lo < od_hi".into()));
        }
        if !(self.u_min >= 0.0 && self.u_min <= self.u_max) {
            return Err(Error::Config("uncertainty bounds require 0 <= u_min <= u_max".into()));
        }
        if !(self.default_cost.is_finite() && self.default_uncert.is_finite() && self.default_uncert >= 0.0) {
            return Err(Error::Config("default cost and uncertainty must be finite".into()));
        }
        Ok(())
    }

    /// The sample recorded when a parameter set produced nothing usable.
    pub fn default_sample(&self) -> CostSample {
        CostSample { cost: self.default_cost, uncert: self.default_uncert, is_default: true, raw_costs: vec![] }
    }
}

/// Cost and uncertainty recorded for one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSample {
    pub cost: f64,
    pub uncert: f64,
    pub is_default: bool,
    pub raw_costs: Vec<f64>,
}

/// Combines two runs of the same parameters. `None` marks a failed run.
///
/// Two valid runs give their mean with uncertainty `2·|c1 − c2|` clamped to
/// `[u_min, u_max]`; a single valid run is used with `u_max`; two failures
/// give the configured default sample.
pub fn combine_runs(c1: Option<f64>, c2: Option<f64>, cfg: &CostConfig) -> CostSample {
    match (c1, c2) {
        (Some(a), Some(b)) => CostSample {
            cost: 0.5 * (a + b),
            uncert: (2.0 * (a - b).abs()).clamp(cfg.u_min, cfg.u_max),
            is_default: false,
            raw_costs: vec![a, b],
        },
        (Some(c), None) | (None, Some(c)) => {
            CostSample { cost: c, uncert: cfg.u_max, is_default: false, raw_costs: vec![c] }
        }
        (None, None) => cfg.default_sample(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn in_band_mean() {
        let img = AbsorptionImage::new(2, 2, vec![0.1, 0.5, 0.6, 0.9]).unwrap();
        assert!((threshold_cost(&img, 0.2, 0.8).unwrap() - 0.55).abs() < 1e-15);
        let dark = AbsorptionImage::new(2, 1, vec![0.0, 0.1]).unwrap();
        assert!(matches!(threshold_cost(&dark, 0.2, 0.8), Err(Error::NoSignal)));
        let flat = AbsorptionImage::new(3, 3, vec![0.7; 9]).unwrap();
        assert_eq!(threshold_cost(&flat, 0.2, 0.8).unwrap(), 0.7);
        assert!(threshold_cost(&flat, 0.8, 0.2).is_err());
    }

    #[test]
    fn rejects_negative_pixels() {
        assert!(AbsorptionImage::new(1, 1, vec![-0.1]).is_err());
        assert!(AbsorptionImage::new(2, 1, vec![0.1]).is_err());
    }

    #[test]
    fn run_combination() {
        let cfg = CostConfig { u_min: 0.0, u_max: 10.0, ..Default::default() };
        let s = combine_runs(Some(1.0), Some(1.2), &cfg);
        assert!((s.cost - 1.1).abs() < 1e-15 && (s.uncert - 0.4).abs() < 1e-15);
        let d = combine_runs(None, None, &cfg);
        assert!(d.is_default && d.cost == cfg.default_cost && d.uncert == cfg.default_uncert);
        let cfg = CostConfig { u_min: 0.05, ..Default::default() };
        let s = combine_runs(Some(0.8), Some(0.8), &cfg);
        assert_eq!((s.cost, s.uncert), (0.8, 0.05));
        let one = combine_runs(None, Some(0.7), &cfg);
        assert_eq!((one.cost, one.uncert, one.is_default), (0.7, cfg.u_max, false));
    }

    #[test]
    fn raster_and_csv_round_trip() {
        let img = AbsorptionImage::new(3, 2, vec![0.0, 0.25, 1.5, 3.0, 0.125, 2.0]).unwrap();
        let mut buf = Vec::new();
        img.write_raster(&mut buf).unwrap();
        assert_eq!(&buf[..8], &[3, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(AbsorptionImage::read_raster(&buf[..]).unwrap(), img);
        let mut text = Vec::new();
        img.write_csv(&mut text).unwrap();
        assert_eq!(AbsorptionImage::read_csv(&text[..]).unwrap(), img);
        assert!(AbsorptionImage::read_raster(&buf[..20]).is_err());
    }

    #[test]
    fn sample_serializes_as_json() {
        let s = combine_runs(Some(0.5), Some(0.6), &CostConfig::default());
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert_eq!(v["is_default"], false);
        assert_eq!(v["raw_costs"].as_array().unwrap().len(), 2);
    }
}
