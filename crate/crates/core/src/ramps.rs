//! Evaporation ramp parameterizations and the mapping from normalized
//! optimizer parameters to three-channel control schedules.
//!
//! Simple ramps interpolate linearly between a start and end amplitude.
//! Complex ramps add three polynomial corrections that vanish at both ends:
//!
//! ```text
//! y(t) = y_i + (y_f − y_i) t/t_f
//!      + a2 t(t − t_f)
//!      + a3 t(t − t_f)(t + t_f/2)
//!      + a4 t(t − t_f)(t + 2t_f/3)(t + t_f/3)
//! ```
//!
//! [`RootPlacement::EvenlySpaced`] instead places the extra roots inside
//! `(0, t_f)`: `(t − t_f/2)` and `(t − t_f/3)(t − 2t_f/3)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParameterVector;

pub const CHANNELS: usize = 3;

fn check_time(t: f64, t_final: f64) -> Result<()> {
    if !(0.0..=t_final).contains(&t) {
        return Err(Error::Domain { t, t_final });
    }
    Ok(())
}

/// Linear part, written so both endpoints are reproduced exactly.
fn linear(y_i: f64, y_f: f64, t: f64, t_f: f64) -> f64 {
    let s = t / t_f;
    y_i * (1.0 - s) + y_f * s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimpleRamp {
    pub y_i: f64,
    pub y_f: f64,
    pub t_f: f64,
}

pub fn eval_simple(r: &SimpleRamp, t: f64) -> Result<f64> {
    check_time(t, r.t_f)?;
    Ok(linear(r.y_i, r.y_f, t, r.t_f))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootPlacement {
    /// root factors `(t + t_f/2)`, `(t + 2t_f/3)(t + t_f/3)`
    #[default]
    Verbatim,
    EvenlySpaced,
}

/// Simple ramp plus quadratic, cubic and quartic corrections `a2`, `a3`, `a4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexRamp {
    pub y_i: f64,
    pub y_f: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub t_f: f64,
}

pub fn eval_complex(r: &ComplexRamp, t: f64, roots: RootPlacement) -> Result<f64> {
    check_time(t, r.t_f)?;
    let tf = r.t_f;
    let base = t * (t - tf);
    let (cubic, quartic) = match roots {
        RootPlacement::Verbatim => (t + 0.5 * tf, (t + 2.0 * tf / 3.0) * (t + tf / 3.0)),
        RootPlacement::EvenlySpaced => (t - 0.5 * tf, (t - tf / 3.0) * (t - 2.0 * tf / 3.0)),
    };
    let correction = r.a2 * base + r.a3 * base * cubic + r.a4 * base * quartic;
    Ok(linear(r.y_i, r.y_f, t, tf) + correction)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Ramp {
    Simple(SimpleRamp),
    Complex(ComplexRamp),
}

impl Ramp {
    pub fn t_f(&self) -> f64 {
        match self {
            Ramp::Simple(r) => r.t_f,
            Ramp::Complex(r) => r.t_f,
        }
    }

    pub fn eval(&self, t: f64, roots: RootPlacement) -> Result<f64> {
        match self {
            Ramp::Simple(r) => eval_simple(r, t),
            Ramp::Complex(r) => eval_complex(r, t, roots),
        }
    }
}

/// Three control ramps sharing one duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampSchedule {
    pub ramps: [Ramp; CHANNELS],
    pub t_f: f64,
    #[serde(default)]
    pub roots: RootPlacement,
}

impl RampSchedule {
    /// Channel values at time `t`.
    pub fn eval(&self, t: f64) -> Result<[f64; CHANNELS]> {
        let mut out = [0.0; CHANNELS];
        for (o, r) in out.iter_mut().zip(&self.ramps) {
            *o = r.eval(t, self.roots)?;
        }
        Ok(out)
    }

    /// Writes `t` and the three channel values, sampled at `sample_rate` Hz
    /// (the final time is always included).
    pub fn write_csv<W: Write>(&self, layout: &RampLayout, sample_rate: f64, out: W) -> Result<()> {
        if !(sample_rate > 0.0) {
            return Err(Error::InvalidInput(format!("sample rate {sample_rate} must be > 0")));
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(layout.channels.iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        let steps = (self.t_f * sample_rate).ceil() as usize;
        for k in 0..=steps {
            let t = (k as f64 / sample_rate).min(self.t_f);
            let v = self.eval(t)?;
            w.write_record(std::iter::once(t).chain(v).map(|x| x.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampMode {
    #[default]
    Simple,
    Complex,
}

/// Role of the trailing duration slot in the parameter vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationSlot {
    /// the last parameter sets the shared ramp duration
    #[default]
    Controlled,
    /// the last parameter is accepted but drives nothing; duration is fixed
    Dummy,
    /// no slot; duration is fixed
    Absent,
}

/// Physical range of one control channel and of its polynomial coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    pub min: f64,
    pub max: f64,
    /// `[a2, a3, a4]` ranges, used only by complex ramps
    pub coeff_bounds: [(f64, f64); 3],
}

impl ChannelSpec {
    fn with_range(name: &str, min: f64, max: f64, t_ref: f64) -> Self {
        let r = max - min;
        let c = |k: i32| {
            let a = r / t_ref.powi(k);
            (-a, a)
        };
        Self { name: name.into(), min, max, coeff_bounds: [c(2), c(3), c(4)] }
    }
}

/// How a normalized parameter vector maps onto a [`RampSchedule`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RampLayout {
    pub mode: RampMode,
    pub duration: DurationSlot,
    pub channels: Vec<ChannelSpec>,
    pub t_f_min: f64,
    pub t_f_max: f64,
    /// duration used when the slot is dummy or absent
    pub t_f_fixed: f64,
    pub roots: RootPlacement,
}

impl Default for RampLayout {
    fn default() -> Self {
        let t_ref = 3.0;
        Self {
            mode: RampMode::Simple,
            duration: DurationSlot::Controlled,
            channels: vec![
                ChannelSpec::with_range("1090nm_current_A", 0.0, 20.0, t_ref),
                ChannelSpec::with_range("1090nm_waveplate_transmission", 0.0, 1.0, t_ref),
                ChannelSpec::with_range("1064nm_current_A", 0.0, 10.0, t_ref),
            ],
            t_f_min: 1.0,
            t_f_max: 6.0,
            t_f_fixed: t_ref,
            roots: RootPlacement::Verbatim,
        }
    }
}

fn denorm(x: f64, lo: f64, hi: f64) -> f64 {
    lo + x * (hi - lo)
}

fn norm(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }
}

impl RampLayout {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != CHANNELS {
            return Err(Error::Config(format!("ramp layout needs {CHANNELS} channels, got {}", self.channels.len())));
        }
        for c in &self.channels {
            if !(c.min.is_finite() && c.max.is_finite() && c.min < c.max) {
                return Err(Error::Config(format!("channel {} has invalid range [{}, {}]", c.name, c.min, c.max)));
            }
        }
        let durations_ok = match self.duration {
            DurationSlot::Controlled => self.t_f_min > 0.0 && self.t_f_max > self.t_f_min,
            DurationSlot::Dummy | DurationSlot::Absent => self.t_f_fixed > 0.0,
        };
        if !durations_ok {
            return Err(Error::Config("ramp duration bounds must be positive".into()));
        }
        Ok(())
    }

    pub fn params_per_channel(&self) -> usize {
        match self.mode {
            RampMode::Simple => 2,
            RampMode::Complex => 5,
        }
    }

    /// Parameter count: 7 for simple, 16 for complex, one fewer without a duration slot.
    pub fn dim(&self) -> usize {
        CHANNELS * self.params_per_channel() + usize::from(self.duration != DurationSlot::Absent)
    }

    /// Index of the unconnected parameter, if any.
    pub fn dummy_index(&self) -> Option<usize> {
        (self.duration == DurationSlot::Dummy).then(|| self.dim() - 1)
    }

    /// Denormalizes `x` into a schedule.
    pub fn params_to_schedule(&self, x: &[f64]) -> Result<RampSchedule> {
        crate::error::check_dim(self.dim(), x.len())?;
        let k = self.params_per_channel();
        let t_f = match self.duration {
            DurationSlot::Controlled => denorm(x[self.dim() - 1], self.t_f_min, self.t_f_max),
            DurationSlot::Dummy | DurationSlot::Absent => self.t_f_fixed,
        };
        let ramp = |c: usize| {
            let spec = &self.channels[c];
            let p = &x[c * k..(c + 1) * k];
            let y_i = denorm(p[0], spec.min, spec.max);
            let y_f = denorm(p[1], spec.min, spec.max);
            match self.mode {
                RampMode::Simple => Ramp::Simple(SimpleRamp { y_i, y_f, t_f }),
                RampMode::Complex => {
                    let [b2, b3, b4] = spec.coeff_bounds;
                    Ramp::Complex(ComplexRamp {
                        y_i,
                        y_f,
                        a2: denorm(p[2], b2.0, b2.1),
                        a3: denorm(p[3], b3.0, b3.1),
                        a4: denorm(p[4], b4.0, b4.1),
                        t_f,
                    })
                }
            }
        };
        Ok(RampSchedule { ramps: [ramp(0), ramp(1), ramp(2)], t_f, roots: self.roots })
    }

    /// Inverse of [`RampLayout::params_to_schedule`]; a dummy slot is filled with `dummy_fill`.
    pub fn schedule_to_params(&self, sched: &RampSchedule, dummy_fill: f64) -> Result<ParameterVector> {
        let mut x = Vec::with_capacity(self.dim());
        for (spec, ramp) in self.channels.iter().zip(&sched.ramps) {
            match (self.mode, ramp) {
                (RampMode::Simple, Ramp::Simple(r)) => {
                    x.push(norm(r.y_i, spec.min, spec.max));
                    x.push(norm(r.y_f, spec.min, spec.max));
                }
                (RampMode::Complex, Ramp::Complex(r)) => {
                    let [b2, b3, b4] = spec.coeff_bounds;
                    x.extend([
                        norm(r.y_i, spec.min, spec.max),
                        norm(r.y_f, spec.min, spec.max),
                        norm(r.a2, b2.0, b2.1),
                        norm(r.a3, b3.0, b3.1),
                        norm(r.a4, b4.0, b4.1),
                    ]);
                }
                _ => return Err(Error::InvalidInput("schedule ramp kind does not match layout mode".into())),
            }
        }
        match self.duration {
            DurationSlot::Controlled => x.push(norm(sched.t_f, self.t_f_min, self.t_f_max)),
            DurationSlot::Dummy => x.push(dummy_fill),
            DurationSlot::Absent => {}
        }
        ParameterVector::new(x)
    }

    /// Physical value of every slot of `x` (the dummy slot stays normalized).
    pub fn to_physical(&self, x: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_dim(self.dim(), x.len())?;
        let k = self.params_per_channel();
        let mut out = Vec::with_capacity(x.len());
        for (c, spec) in self.channels.iter().enumerate() {
            for (i, v) in x[c * k..(c + 1) * k].iter().enumerate() {
                out.push(match i {
                    0 | 1 => denorm(*v, spec.min, spec.max),
                    _ => {
                        let (lo, hi) = spec.coeff_bounds[i - 2];
                        denorm(*v, lo, hi)
                    }
                });
            }
        }
        match self.duration {
            DurationSlot::Controlled => out.push(denorm(x[x.len() - 1], self.t_f_min, self.t_f_max)),
            DurationSlot::Dummy => out.push(x[x.len() - 1]),
            DurationSlot::Absent => {}
        }
        Ok(out)
    }

    /// Inverse of [`RampLayout::to_physical`].
    pub fn from_physical(&self, p: &[f64]) -> Result<ParameterVector> {
        crate::error::check_dim(self.dim(), p.len())?;
        let k = self.params_per_channel();
        let mut out = Vec::with_capacity(p.len());
        for (c, spec) in self.channels.iter().enumerate() {
            for (i, v) in p[c * k..(c + 1) * k].iter().enumerate() {
                out.push(match i {
                    0 | 1 => norm(*v, spec.min, spec.max),
                    _ => {
                        let (lo, hi) = spec.coeff_bounds[i - 2];
                        norm(*v, lo, hi)
                    }
                });
            }
        }
        match self.duration {
            DurationSlot::Controlled => out.push(norm(p[p.len() - 1], self.t_f_min, self.t_f_max)),
            DurationSlot::Dummy => out.push(p[p.len() - 1]),
            DurationSlot::Absent => {}
        }
        ParameterVector::new(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_examples() {
        let r = SimpleRamp { y_i: 0.0, y_f: 1.0, t_f: 1.0 };
        assert_eq!(eval_simple(&r, 0.5).unwrap(), 0.5);
        let r = SimpleRamp { y_i: 0.1, y_f: 0.7, t_f: 2.3 };
        assert_eq!(eval_simple(&r, 0.0).unwrap(), 0.1);
        assert_eq!(eval_simple(&r, 2.3).unwrap(), 0.7);
        let c = SimpleRamp { y_i: 2.0, y_f: 2.0, t_f: 3.0 };
        for t in [0.0, 0.4, 1.7, 3.0] {
            assert_eq!(eval_simple(&c, t).unwrap(), 2.0);
        }
        assert!(matches!(eval_simple(&r, 2.31), Err(Error::Domain { .. })));
        assert!(eval_simple(&r, -0.01).is_err());
    }

    #[test]
    fn complex_example() {
        let r = ComplexRamp { y_i: 0.0, y_f: 0.0, a2: 1.0, a3: 0.0, a4: 0.0, t_f: 1.0 };
        assert_eq!(eval_complex(&r, 0.5, RootPlacement::Verbatim).unwrap(), -0.25);
        let r = ComplexRamp { y_i: 0.3, y_f: 1.1, a2: 0.0, a3: 1.0, a4: 0.0, t_f: 1.0 };
        // 0.3 + 0.8*0.5 + 0.5*(-0.5)*1.0
        assert!((eval_complex(&r, 0.5, RootPlacement::Verbatim).unwrap() - 0.45).abs() < 1e-15);
        // evenly spaced cubic has a root at the midpoint
        assert!((eval_complex(&r, 0.5, RootPlacement::EvenlySpaced).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn layout_dimensions() {
        let mut l = RampLayout::default();
        assert_eq!(l.dim(), 7);
        l.mode = RampMode::Complex;
        assert_eq!(l.dim(), 16);
        let s = l.params_to_schedule(&[0.5; 16]).unwrap();
        assert!(s.ramps.iter().all(|r| matches!(r, Ramp::Complex(_))));
        assert!(l.params_to_schedule(&[0.5; 7]).is_err());
        l.mode = RampMode::Simple;
        l.duration = DurationSlot::Absent;
        assert_eq!(l.dim(), 6);
    }

    #[test]
    fn zero_vector_maps_to_lower_bounds() {
        let l = RampLayout::default();
        let s = l.params_to_schedule(&[0.0; 7]).unwrap();
        assert_eq!(s.t_f, l.t_f_min);
        for (r, spec) in s.ramps.iter().zip(&l.channels) {
            let Ramp::Simple(r) = r else { panic!() };
            assert_eq!((r.y_i, r.y_f), (spec.min, spec.min));
        }
    }

    #[test]
    fn dummy_slot_is_ignored() {
        let l = RampLayout { duration: DurationSlot::Dummy, ..Default::default() };
        let mut x = vec![0.3, 0.6, 0.9, 0.2, 0.5, 0.1, 0.0];
        let a = l.params_to_schedule(&x).unwrap();
        x[6] = 0.87;
        assert_eq!(a, l.params_to_schedule(&x).unwrap());
        assert_eq!(l.dummy_index(), Some(6));
    }

    #[test]
    fn csv_export() {
        let l = RampLayout::default();
        let s = l.params_to_schedule(&[1.0, 0.5, 1.0, 0.5, 1.0, 0.5, 0.4]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&l, 2.0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,1090nm_current_A,1090nm_waveplate_transmission,1064nm_current_A");
        assert_eq!(lines.len(), 1 + 7);
        assert!(lines.last().unwrap().starts_with("3,10,0.5,5"));
    }
}
