//! Phenomenological stand-in for the apparatus: a truncated-evaporation
//! stepper, a synthetic bimodal absorption image, and fast analytic
//! benchmark landscapes.
//!
//! The stepper tracks atom number `N` and temperature `T` of a harmonically
//! trapped cloud whose depth `U(t)` is set by the three ramp channels. Each
//! step compresses/decompresses the cloud adiabatically (`T ∝ √U`), applies
//! one-body loss, and lets the cloud relax towards `T = U/η` at a rate set by
//! the elastic collision rate, losing atoms as `N ∝ T^{3/(η−2)}`. A cloud
//! whose depth falls below `hold_eta·T` spills out (failed shot).

use std::f64::consts::PI;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cost::{combine_runs, threshold_cost, AbsorptionImage, CostConfig, CostSample};
use crate::error::{Error, Result};
use crate::ramps::{RampLayout, RampSchedule};

const HBAR: f64 = 1.054_571_817e-34;
const K_B: f64 = 1.380_649e-23;

/// Final state of one simulated shot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudState {
    pub atom_number: f64,
    /// kelvin
    pub temperature: f64,
    pub condensate_fraction: f64,
}

impl CloudState {
    fn failed(temperature: f64) -> Self {
        Self { atom_number: 0.0, temperature, condensate_fraction: 0.0 }
    }

    pub fn is_failed(&self) -> bool {
        self.atom_number <= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// trap depth per amp of 1090 nm current at full waveplate transmission (μK/A)
    pub depth_1090_uk_per_amp: f64,
    /// trap depth per amp of 1064 nm current (μK/A)
    pub depth_1064_uk_per_amp: f64,
    /// depth the cloud is loaded at; the initial cloud sits at `T = U/η` there (μK)
    pub loading_depth_uk: f64,
    pub eta: f64,
    pub steps: usize,
    pub initial_atoms: f64,
    /// geometric-mean trap frequency at the loading depth (Hz)
    pub trap_freq_hz: f64,
    /// rethermalization rate of the freshly loaded cloud (1/s)
    pub rethermalization_rate: f64,
    /// one-body lifetime (s)
    pub lifetime_s: f64,
    /// shot fails once `U/T` drops below this during the ramp
    pub hold_eta: f64,
    /// shots ending with fewer atoms show no usable cloud
    pub min_atoms: f64,

    pub image_size: usize,
    /// thermal rms width per √μK after time of flight (pixels)
    pub thermal_width_px: f64,
    /// condensate radius for 10⁶ condensed atoms (pixels); scales as `N_c^{1/5}`
    pub condensate_radius_px: f64,
    /// optical depth × pixel area per atom
    pub od_per_atom: f64,
    /// diffuse background present whenever atoms survive
    pub halo_od: f64,
    /// extra diffuse background scaled by the thermal fraction
    pub halo_thermal_od: f64,
    pub saturation_od: f64,

    /// relative shot-to-shot spread of the loaded atom number
    pub atom_jitter: f64,
    pub pixel_noise: f64,
    pub rng_seed: u64,

    pub cost: CostConfig,
    /// normalized simple-mode parameters (controlled duration) of a ramp known
    /// to condense; located by a coarse grid scan of this model
    pub reference_ramp: Vec<f64>,
    /// cost below which a shot is taken to have condensed
    pub condensation_threshold: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            depth_1090_uk_per_amp: 8.0,
            depth_1064_uk_per_amp: 9.0,
            loading_depth_uk: 250.0,
            eta: 10.0,
            steps: 200,
            initial_atoms: 3.0e6,
            trap_freq_hz: 2200.0,
            rethermalization_rate: 40.0,
            lifetime_s: 20.0,
            hold_eta: 4.0,
            min_atoms: 4.0e5,
            image_size: 128,
            thermal_width_px: 8.0,
            condensate_radius_px: 3.0,
            od_per_atom: 5.0e-2,
            halo_od: 0.2,
            halo_thermal_od: 0.2,
            saturation_od: 3.0,
            atom_jitter: 0.1,
            pixel_noise: 0.02,
            rng_seed: 0,
            cost: CostConfig::default(),
            reference_ramp: vec![1.0, 0.25, 1.0, 0.25, 0.0, 0.0, 1.0],
            condensation_threshold: 0.40,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("depth_1090_uk_per_amp", self.depth_1090_uk_per_amp),
            ("depth_1064_uk_per_amp", self.depth_1064_uk_per_amp),
            ("loading_depth_uk", self.loading_depth_uk),
            ("initial_atoms", self.initial_atoms),
            ("trap_freq_hz", self.trap_freq_hz),
            ("rethermalization_rate", self.rethermalization_rate),
            ("lifetime_s", self.lifetime_s),
            ("hold_eta", self.hold_eta),
            ("min_atoms", self.min_atoms),
            ("thermal_width_px", self.thermal_width_px),
            ("condensate_radius_px", self.condensate_radius_px),
            ("od_per_atom", self.od_per_atom),
            ("saturation_od", self.saturation_od),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.eta > 2.0) {
            return Err(Error::Config(format!("eta must exceed 2, got {}", self.eta)));
        }
        if self.steps == 0 || self.image_size == 0 {
            return Err(Error::Config("steps and image_size must be >= 1".into()));
        }
        for (name, v) in [
            ("halo_od", self.halo_od),
            ("halo_thermal_od", self.halo_thermal_od),
            ("atom_jitter", self.atom_jitter),
            ("pixel_noise", self.pixel_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        self.cost.validate()
    }

    /// Same model with every noise source switched off.
    pub fn noiseless(&self) -> Self {
        Self { atom_jitter: 0.0, pixel_noise: 0.0, ..self.clone() }
    }

    fn depth(&self, channels: [f64; 3]) -> f64 {
        let [i1090, waveplate, i1064] = channels.map(|c| c.max(0.0));
        self.depth_1090_uk_per_amp * i1090 * waveplate + self.depth_1064_uk_per_amp * i1064
    }

    fn initial_temperature_uk(&self) -> f64 {
        self.loading_depth_uk / self.eta
    }

    /// Critical temperature (μK) of `n` atoms in a trap of depth `u` μK.
    pub fn critical_temperature_uk(&self, n: f64, u: f64) -> f64 {
        let omega = 2.0 * PI * self.trap_freq_hz * (u / self.loading_depth_uk).max(0.0).sqrt();
        0.94 * HBAR * omega * n.cbrt() / K_B * 1e6
    }
}

/// Fraction of a truncated Boltzmann distribution (3-D harmonic) above `e·k_B T`.
fn tail_atoms(e: f64) -> f64 {
    (-e).exp() * (1.0 + e + 0.5 * e * e)
}

/// Fraction of the energy carried above `e·k_B T`.
fn tail_energy(e: f64) -> f64 {
    (-e).exp() * (e * e * e + 3.0 * e * e + 6.0 * e + 6.0) / 6.0
}

pub fn simulate_evaporation(sched: &RampSchedule, cfg: &SimConfig) -> Result<CloudState> {
    simulate_with_atoms(sched, cfg, cfg.initial_atoms)
}

fn simulate_with_atoms(sched: &RampSchedule, cfg: &SimConfig, initial_atoms: f64) -> Result<CloudState> {
    let eta = cfg.eta;
    let t0 = cfg.initial_temperature_uk();
    let loss_exp = 3.0 / (eta - 2.0);
    let dt = sched.t_f / cfg.steps as f64;
    let depth_at = |k: usize| -> Result<f64> {
        let t = if k == cfg.steps { sched.t_f } else { (k as f64 * dt).min(sched.t_f) };
        Ok(cfg.depth(sched.eval(t)?))
    };

    let mut temp = t0;
    let mut u = depth_at(0)?;
    if u <= 0.0 {
        return Ok(CloudState::failed(temp * 1e-6));
    }
    let mut n = initial_atoms;
    // sudden transfer into a shallower trap spills the atoms above the new edge
    let cut = u / temp;
    if cut < eta {
        let keep = (1.0 - tail_atoms(cut)) / (1.0 - tail_atoms(eta));
        let keep_energy = (1.0 - tail_energy(cut)) / (1.0 - tail_energy(eta));
        n *= keep;
        temp *= keep_energy / keep;
    }

    for k in 1..=cfg.steps {
        let u_next = depth_at(k)?;
        if u_next <= 0.0 {
            return Ok(CloudState::failed(temp * 1e-6));
        }
        temp *= (u_next / u).sqrt();
        u = u_next;
        if u / temp < cfg.hold_eta {
            return Ok(CloudState::failed(temp * 1e-6));
        }
        let rate = cfg.rethermalization_rate
            * (n / cfg.initial_atoms)
            * (u / cfg.loading_depth_uk).powf(1.5)
            * (t0 / temp);
        n *= (-dt / cfg.lifetime_s).exp();
        let target = u / eta;
        if temp > target {
            let relaxed = target * ((temp / target).ln() * (-rate * dt).exp()).exp();
            n *= (relaxed / temp).powf(loss_exp);
            temp = relaxed;
        }
    }

    if n < cfg.min_atoms {
        return Ok(CloudState::failed(temp * 1e-6));
    }
    let tc = cfg.critical_temperature_uk(n, u);
    let fraction = if tc > 0.0 { (1.0 - (temp / tc).powi(3)).max(0.0) } else { 0.0 };
    Ok(CloudState { atom_number: n, temperature: temp * 1e-6, condensate_fraction: fraction })
}

/// Bimodal time-of-flight image: Gaussian thermal cloud, inverted-parabola
/// condensate and a diffuse halo, capped at the saturation depth, plus
/// Gaussian pixel noise drawn from `rng`.
fn render_with(cloud: &CloudState, cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<AbsorptionImage> {
    let size = cfg.image_size;
    let mut od = vec![0.0; size * size];
    if !cloud.is_failed() {
        let t_uk = cloud.temperature * 1e6;
        let n_th = (1.0 - cloud.condensate_fraction) * cloud.atom_number;
        let n_c = cloud.condensate_fraction * cloud.atom_number;
        let sigma = cfg.thermal_width_px * t_uk.sqrt();
        let thermal_peak = cfg.od_per_atom * n_th / (2.0 * PI * sigma * sigma);
        let radius = cfg.condensate_radius_px * (n_c / 1e6).powf(0.2);
        let condensate_peak =
            if radius > 0.0 { 2.5 * cfg.od_per_atom * n_c / (PI * radius * radius) } else { 0.0 };
        let halo = cfg.halo_od + cfg.halo_thermal_od * n_th / cloud.atom_number;
        let c = 0.5 * (size as f64 - 1.0);
        for y in 0..size {
            for x in 0..size {
                let r2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2);
                let mut v = halo + thermal_peak * (-0.5 * r2 / (sigma * sigma)).exp();
                if radius > 0.0 && r2 < radius * radius {
                    v += condensate_peak * (1.0 - r2 / (radius * radius)).powf(1.5);
                }
                od[y * size + x] = v;
            }
        }
    }
    if cfg.pixel_noise > 0.0 {
        let normal = Normal::new(0.0, cfg.pixel_noise).map_err(|e| Error::Config(e.to_string()))?;
        for v in &mut od {
            *v += normal.sample(rng);
        }
    }
    for v in &mut od {
        *v = v.clamp(0.0, cfg.saturation_od);
    }
    AbsorptionImage::new(size, size, od)
}

/// Renders `cloud` with pixel noise seeded by `cfg.rng_seed`.
pub fn render_image(cloud: &CloudState, cfg: &SimConfig) -> Result<AbsorptionImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    render_with(cloud, cfg, &mut rng)
}

/// One shot: jittered loading, evaporation, imaging and the threshold cost.
/// `None` when the shot shows no cloud.
fn single_shot(sched: &RampSchedule, cfg: &SimConfig, stream: u64) -> Result<Option<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(stream);
    let scale = if cfg.atom_jitter > 0.0 {
        let normal = Normal::new(1.0, cfg.atom_jitter).map_err(|e| Error::Config(e.to_string()))?;
        normal.sample(&mut rng).max(0.0)
    } else {
        1.0
    };
    let cloud = simulate_with_atoms(sched, cfg, cfg.initial_atoms * scale)?;
    let img = render_with(&cloud, cfg, &mut rng)?;
    match threshold_cost(&img, cfg.cost.od_lo, cfg.cost.od_hi) {
        Ok(c) => Ok(Some(c)),
        Err(Error::NoSignal) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs the parameters twice with independent noise and combines the shots.
pub fn run_experiment(x: &[f64], layout: &RampLayout, cfg: &SimConfig) -> Result<CostSample> {
    let sched = layout.params_to_schedule(x)?;
    let first = single_shot(&sched, cfg, 1)?;
    let second = single_shot(&sched, cfg, 2)?;
    Ok(combine_runs(first, second, &cfg.cost))
}

/// Registered analytic benchmark functions on `[0, 1]^M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Landscape {
    /// broad bowl with a deep, narrow, tilted well
    Valley,
    /// valley over all but the last coordinate
    Dummy,
    /// `Σ (x_j − 0.5)²`
    Bowl,
}

impl FromStr for Landscape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valley" => Ok(Self::Valley),
            "dummy" => Ok(Self::Dummy),
            "bowl" => Ok(Self::Bowl),
            other => Err(Error::Config(format!("unknown landscape {other:?}"))),
        }
    }
}

const VALLEY_DEPTH: f64 = 1.0;
const VALLEY_NARROW: f64 = 0.03;
const VALLEY_WIDE: f64 = 0.3;
const VALLEY_REST: f64 = 0.2;

/// Center of the valley's well along coordinate `j`.
pub fn valley_center(j: usize) -> f64 {
    0.3 + 0.4 * (0.618_033_988_75 * (j + 1) as f64).fract()
}

fn valley(x: &[f64]) -> f64 {
    let bowl: f64 = 0.5 * x.iter().map(|v| (v - 0.5).powi(2)).sum::<f64>();
    let d: Vec<f64> = x.iter().enumerate().map(|(j, v)| v - valley_center(j)).collect();
    let mut q = 0.0;
    if d.len() >= 2 {
        let across = (d[0] + d[1]) / 2f64.sqrt();
        let along = (d[0] - d[1]) / 2f64.sqrt();
        q += (across / VALLEY_NARROW).powi(2) + (along / VALLEY_WIDE).powi(2);
        q += d[2..].iter().map(|v| (v / VALLEY_REST).powi(2)).sum::<f64>();
    } else {
        q += d.iter().map(|v| (v / VALLEY_NARROW).powi(2)).sum::<f64>();
    }
    bowl - VALLEY_DEPTH * (-0.5 * q).exp()
}

impl Landscape {
    pub fn min_dim(&self) -> usize {
        match self {
            Landscape::Valley | Landscape::Bowl => 1,
            Landscape::Dummy => 2,
        }
    }

    /// Noise-free value.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        if x.len() < self.min_dim() {
            return Err(Error::InvalidInput(format!("{self:?} landscape needs at least {} coordinates", self.min_dim())));
        }
        Ok(match self {
            Landscape::Valley => valley(x),
            Landscape::Dummy => valley(&x[..x.len() - 1]),
            Landscape::Bowl => x.iter().map(|v| (v - 0.5).powi(2)).sum(),
        })
    }
}

/// Landscape value plus seeded Gaussian noise of standard deviation `noise`.
pub fn analytic_landscape(name: &str, x: &[f64], noise_seed: u64, noise: f64) -> Result<f64> {
    name.parse::<Landscape>()?.noisy(x, noise_seed, noise)
}

impl Landscape {
    /// Value plus seeded Gaussian noise of standard deviation `noise`.
    pub fn noisy(&self, x: &[f64], noise_seed: u64, noise: f64) -> Result<f64> {
        let base = self.value(x)?;
        if noise <= 0.0 {
            return Ok(base);
        }
        let normal = Normal::new(0.0, noise).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        Ok(base + normal.sample(&mut rng))
    }
}
