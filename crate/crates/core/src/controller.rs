//! The online loop: shared Nelder-Mead training runs, then either learner
//! proposals or a continued Nelder-Mead baseline, with every experiment
//! appended to a JSON-lines log and learner state snapshotted per record so
//! an interrupted run resumes bit-identically.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::acquisition::{leash_bounds, propose_parameters, AcquisitionConfig, Proposal, SweepSchedule};
use crate::cost::{CostConfig, CostSample};
use crate::ensemble::{EnsembleConfig, EnsembleState, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::gp::HyperBounds;
use crate::nelder_mead::{Bounds, NelderMead, NelderMeadOptions};
use crate::params::{ObservationSet, ParameterVector};
use crate::ramps::{RampLayout, RampMode};
use crate::sim::{run_experiment, Landscape, SimConfig};

pub const LOG_FILE: &str = "log.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const INPUT_FILE: &str = "exp_input.json";
pub const OUTPUT_FILE: &str = "exp_output.json";

pub const ENV_OUTPUT_DIR: &str = "MLOO_OUTPUT_DIR";
pub const ENV_ENDPOINT_DIR: &str = "MLOO_ENDPOINT_DIR";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Mloo,
    NelderMead,
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mloo" => Ok(Self::Mloo),
            "nm" | "nelder_mead" | "nelder-mead" => Ok(Self::NelderMead),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Where experiments are run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EndpointConfig {
    /// in-process evaporation simulator driven through the ramp layout
    Simulator,
    /// in-process analytic function of the normalized parameters
    Landscape { name: Landscape, dim: usize, noise: f64 },
    /// an external process speaking the request/response file protocol
    File {
        dir: PathBuf,
        #[serde(default = "default_timeout")]
        timeout_s: f64,
        #[serde(default = "default_poll")]
        poll_ms: u64,
    },
}

fn default_timeout() -> f64 {
    600.0
}

fn default_poll() -> u64 {
    50
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self::Simulator
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub optimizer: Optimizer,
    pub endpoint: EndpointConfig,
    /// ramp parameterization and physical bounds (simulator and file endpoints)
    pub ramps: RampLayout,
    pub sim: SimConfig,
    /// shared by every endpoint; overrides `sim.cost`
    pub cost: CostConfig,
    /// particle count `P`
    pub particles: usize,
    /// sweep cycle length `Q`
    pub sweep_cycle: usize,
    /// leash half-width in normalized units
    pub leash: f64,
    pub hyper_bounds: HyperBounds,
    pub restart_fraction: f64,
    pub acquisition: AcquisitionConfig,
    /// defaults to 20 for complex ramps and `2·M` otherwise
    pub training_runs: Option<usize>,
    /// experiments allowed after training
    pub max_experiments: usize,
    /// convergence cost; defaults to the simulator's condensation threshold
    pub threshold: Option<f64>,
    /// proposals the best cost must stay below threshold before stopping
    pub converge_after: usize,
    pub seed: u64,
    /// normalized start of the training simplex; seeded draw in `[0.25, 0.75]^M` if absent
    pub start: Option<Vec<f64>>,
    /// initial simplex offset of the online Nelder-Mead, as a fraction of the range
    pub nm_step: f64,
    pub nm_x_tol: f64,
    /// `None` keeps the log in memory only
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Mloo,
            endpoint: EndpointConfig::Simulator,
            ramps: RampLayout::default(),
            sim: SimConfig::default(),
            cost: CostConfig::default(),
            particles: 1,
            sweep_cycle: 6,
            leash: 0.2,
            hyper_bounds: HyperBounds::default(),
            restart_fraction: 0.25,
            acquisition: AcquisitionConfig::default(),
            training_runs: None,
            max_experiments: 100,
            threshold: None,
            converge_after: 3,
            seed: 0,
            start: None,
            nm_step: 0.1,
            nm_x_tol: 1e-3,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Applies `MLOO_OUTPUT_DIR` and `MLOO_ENDPOINT_DIR` when set.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(ENV_OUTPUT_DIR) {
            self.output_dir = Some(PathBuf::from(dir));
        }
        if let Some(dir) = std::env::var_os(ENV_ENDPOINT_DIR) {
            match &mut self.endpoint {
                EndpointConfig::File { dir: d, .. } => *d = PathBuf::from(dir),
                other => {
                    *other = EndpointConfig::File { dir: PathBuf::from(dir), timeout_s: default_timeout(), poll_ms: default_poll() }
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        match &self.endpoint {
            EndpointConfig::Landscape { dim, .. } => *dim,
            _ => self.ramps.dim(),
        }
    }

    pub fn training_count(&self) -> usize {
        self.training_runs.unwrap_or(match (&self.endpoint, self.ramps.mode) {
            (EndpointConfig::Landscape { .. }, _) => 2 * self.dim(),
            (_, RampMode::Complex) => 20,
            (_, RampMode::Simple) => 2 * self.dim(),
        })
    }

    pub fn threshold_value(&self) -> f64 {
        self.threshold.unwrap_or(self.sim.condensation_threshold)
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            particles: self.particles,
            bounds: self.hyper_bounds,
            restart_fraction: self.restart_fraction,
            ..EnsembleConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.training_count() < 2 {
            return Err(Error::Config("at least 2 training runs are required".into()));
        }
        if self.dim() == 0 {
            return Err(Error::Config("problem dimension must be >= 1".into()));
        }
        if !(self.leash > 0.0 && self.leash <= 1.0) {
            return Err(Error::Config(format!("leash {} outside (0, 1]", self.leash)));
        }
        if !(self.nm_step > 0.0 && self.nm_step <= 1.0) {
            return Err(Error::Config(format!("nm_step {} outside (0, 1]", self.nm_step)));
        }
        if let Some(s) = &self.start {
            crate::error::check_dim(self.dim(), s.len())?;
            ParameterVector::normalized(s.clone())?;
        }
        if let EndpointConfig::Landscape { name, dim, noise } = &self.endpoint {
            if *dim < name.min_dim() || !(noise.is_finite() && *noise >= 0.0) {
                return Err(Error::Config(format!("invalid landscape endpoint {name:?} with dim {dim}")));
            }
        }
        SweepSchedule::new(self.sweep_cycle)?;
        self.ramps.validate()?;
        self.sim.validate()?;
        self.cost.validate()?;
        self.ensemble_config().validate()
    }

    fn start_point(&self) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        match &self.start {
            Some(s) => s.clone(),
            None => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(self.seed, Stream::Start, 0));
                (0..self.dim()).map(|_| rng.random_range(0.25..=0.75)).collect()
            }
        }
    }

    fn physical(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.endpoint {
            EndpointConfig::Landscape { .. } => Ok(x.to_vec()),
            _ => self.ramps.to_physical(x),
        }
    }

    fn nm_options(&self) -> NelderMeadOptions {
        NelderMeadOptions { initial_step: self.nm_step, x_tol: self.nm_x_tol, f_tol: None, max_evals: usize::MAX }
    }
}

#[derive(Debug, Clone, Copy)]
enum Stream {
    Start = 1,
    Noise = 2,
    Proposal = 3,
    Ensemble = 4,
    Reinit = 5,
}

/// Independent 64-bit seed for `(seed, stream, index)`.
fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    let mut z = seed ^ (stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Something that turns parameters into a cost sample.
pub trait Experiment {
    /// `x` is normalized, `physical` the same point in hardware units.
    fn run(&mut self, run_index: u64, x: &[f64], physical: &[f64]) -> Result<CostSample>;
}

/// In-process simulator; each run index gets its own noise seed.
pub struct SimEndpoint {
    pub layout: RampLayout,
    pub sim: SimConfig,
    pub seed: u64,
}

impl Experiment for SimEndpoint {
    fn run(&mut self, run_index: u64, x: &[f64], _physical: &[f64]) -> Result<CostSample> {
        let sim = SimConfig { rng_seed: derive_seed(self.seed, Stream::Noise, run_index), ..self.sim.clone() };
        run_experiment(x, &self.layout, &sim)
    }
}

/// Analytic landscape evaluated twice with independent noise.
pub struct LandscapeEndpoint {
    pub landscape: Landscape,
    pub noise: f64,
    pub cost: CostConfig,
    pub seed: u64,
}

impl Experiment for LandscapeEndpoint {
    fn run(&mut self, run_index: u64, x: &[f64], _physical: &[f64]) -> Result<CostSample> {
        let base = derive_seed(self.seed, Stream::Noise, run_index);
        let a = self.landscape.noisy(x, base, self.noise)?;
        let b = self.landscape.noisy(x, base.wrapping_add(1), self.noise)?;
        Ok(crate::cost::combine_runs(Some(a), Some(b), &self.cost))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProtocolRequest {
    run_index: u64,
    params: Vec<f64>,
}

/// Reply read from `exp_output.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReply {
    pub run_index: u64,
    pub cost: f64,
    pub uncert: f64,
    pub bad: bool,
}

/// External experiment reached through request/response files in `dir`.
pub struct FileEndpoint {
    pub dir: PathBuf,
    pub timeout: Duration,
    pub poll: Duration,
    pub cost: CostConfig,
}

impl FileEndpoint {
    /// Writes the request, waits for a reply with the same run index and
    /// removes both files.
    pub fn experiment_protocol(&self, run_index: u64, physical: &[f64]) -> Result<ProtocolReply> {
        let input = self.dir.join(INPUT_FILE);
        let output = self.dir.join(OUTPUT_FILE);
        let tmp = self.dir.join(format!("{INPUT_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec(&ProtocolRequest { run_index, params: physical.to_vec() })?)?;
        fs::rename(&tmp, &input)?;

        let started = Instant::now();
        let text = loop {
            match fs::read_to_string(&output) {
                Ok(text) => break text,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    if started.elapsed() >= self.timeout {
                        let _ = fs::remove_file(&input);
                        return Err(Error::EndpointUnreachable(format!(
                            "no {} in {} after {:.1} s",
                            OUTPUT_FILE,
                            self.dir.display(),
                            self.timeout.as_secs_f64()
                        )));
                    }
                    std::thread::sleep(self.poll);
                }
                Err(e) => return Err(e.into()),
            }
        };
        fs::remove_file(&output)?;
        let _ = fs::remove_file(&input);
        let reply: ProtocolReply = serde_json::from_str(&text).map_err(|e| Error::Protocol {
            message: format!("malformed {OUTPUT_FILE}: {e}"),
            payload: Some(text.clone()),
        })?;
        if reply.run_index != run_index {
            return Err(Error::Protocol {
                message: format!("reply for run {} while waiting for run {run_index}", reply.run_index),
                payload: Some(text),
            });
        }
        Ok(reply)
    }
}

impl Experiment for FileEndpoint {
    fn run(&mut self, run_index: u64, _x: &[f64], physical: &[f64]) -> Result<CostSample> {
        let reply = self.experiment_protocol(run_index, physical)?;
        if reply.bad {
            return Ok(self.cost.default_sample());
        }
        if !(reply.cost.is_finite() && reply.uncert.is_finite()) {
            return Err(Error::Protocol { message: "non-finite cost or uncertainty".into(), payload: None });
        }
        Ok(CostSample {
            cost: reply.cost,
            uncert: reply.uncert.clamp(self.cost.u_min, self.cost.u_max),
            is_default: false,
            raw_costs: vec![reply.cost],
        })
    }
}

/// Builds the endpoint described by `cfg`.
pub fn make_endpoint(cfg: &RunConfig) -> Box<dyn Experiment> {
    match &cfg.endpoint {
        EndpointConfig::Simulator => Box::new(SimEndpoint {
            layout: cfg.ramps.clone(),
            sim: SimConfig { cost: cfg.cost, ..cfg.sim.clone() },
            seed: cfg.seed,
        }),
        EndpointConfig::Landscape { name, noise, .. } => {
            Box::new(LandscapeEndpoint { landscape: *name, noise: *noise, cost: cfg.cost, seed: cfg.seed })
        }
        EndpointConfig::File { dir, timeout_s, poll_ms } => Box::new(FileEndpoint {
            dir: dir.clone(),
            timeout: Duration::from_secs_f64(*timeout_s),
            poll: Duration::from_millis(*poll_ms),
            cost: cfg.cost,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Training,
    Mloo,
    NelderMead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub index: usize,
    pub phase: Phase,
    pub x: Vec<f64>,
    pub x_physical: Vec<f64>,
    pub cost: f64,
    pub uncert: f64,
    pub is_default: bool,
    pub raw_costs: Vec<f64>,
    /// sweep bias used for learner proposals
    pub bias: Option<f64>,
    /// seconds since the run (or its latest resume) started
    pub wall_time_s: f64,
    /// snapshot file relative to the output directory
    pub snapshot: Option<String>,
}

/// Learner state after a proposal, enough to continue identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub index: usize,
    /// sweep position for the next proposal
    pub sweep_index: usize,
    pub ensemble: EnsembleState,
    /// observations the ensemble was fitted on
    pub ensemble_observations: usize,
}

/// Append-only record of every experiment, mirrored to `log.jsonl` when
/// backed by a directory.
#[derive(Debug, Clone, Default)]
pub struct ObservationLog {
    records: Vec<LogRecord>,
    dir: Option<PathBuf>,
}

impl ObservationLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) the log in `dir`. A trailing partial line left by an
    /// interrupted write is discarded.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir.join(SNAPSHOT_DIR))?;
        let path = dir.join(LOG_FILE);
        let mut records = Vec::new();
        if path.exists() {
            let text = fs::read_to_string(&path)?;
            let complete = text.rfind('\n').map_or(0, |i| i + 1);
            if complete < text.len() {
                log::warn!("dropping partial trailing record in {}", path.display());
                OpenOptions::new().write(true).open(&path)?.set_len(complete as u64)?;
            }
            for (n, line) in BufReader::new(text[..complete].as_bytes()).lines().enumerate() {
                let line = line?;
                let rec: LogRecord = serde_json::from_str(&line).map_err(|e| Error::CorruptLog {
                    path: path.clone(),
                    message: format!("line {}: {e}", n + 1),
                })?;
                if rec.index != records.len() {
                    return Err(Error::CorruptLog {
                        path: path.clone(),
                        message: format!("line {} has index {}, expected {}", n + 1, rec.index, records.len()),
                    });
                }
                records.push(rec);
            }
        }
        Ok(Self { records, dir: Some(dir.to_path_buf()) })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn append(&mut self, rec: LogRecord) -> Result<()> {
        if rec.index != self.records.len() {
            return Err(Error::InvalidInput(format!("record index {} but log has {}", rec.index, self.records.len())));
        }
        if let Some(dir) = &self.dir {
            let mut line = serde_json::to_string(&rec)?;
            line.push('\n');
            let mut f = OpenOptions::new().create(true).append(true).open(dir.join(LOG_FILE))?;
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        self.records.push(rec);
        Ok(())
    }

    /// Observation set of the first `n` records.
    pub fn observations_upto(&self, n: usize) -> Result<ObservationSet> {
        let recs = &self.records[..n.min(self.records.len())];
        ObservationSet::new(
            recs.iter().map(|r| ParameterVector::new(r.x.clone())).collect::<Result<_>>()?,
            recs.iter().map(|r| r.cost).collect(),
            recs.iter().map(|r| r.uncert).collect(),
        )
    }

    pub fn observations(&self) -> Result<ObservationSet> {
        self.observations_upto(self.records.len())
    }

    /// Lowest-cost non-default record, earliest on ties; falls back to all
    /// records when every one is a default.
    pub fn best_index(&self) -> Option<usize> {
        let pick = |valid: bool| {
            self.records
                .iter()
                .filter(|r| !valid || !r.is_default)
                .min_by(|a, b| a.cost.total_cmp(&b.cost).then(a.index.cmp(&b.index)))
                .map(|r| r.index)
        };
        pick(true).or_else(|| pick(false))
    }

    /// Running minimum of non-default costs after each record.
    pub fn running_best(&self) -> Vec<Option<f64>> {
        let mut best: Option<f64> = None;
        self.records
            .iter()
            .map(|r| {
                if !r.is_default && best.is_none_or(|b| r.cost < b) {
                    best = Some(r.cost);
                }
                best
            })
            .collect()
    }

    fn write_snapshot(&self, snap: &Snapshot) -> Result<Option<String>> {
        let Some(dir) = &self.dir else { return Ok(None) };
        let rel = format!("{SNAPSHOT_DIR}/{:06}.json", snap.index);
        let tmp = dir.join(format!("{rel}.tmp"));
        fs::write(&tmp, serde_json::to_vec(snap)?)?;
        fs::rename(&tmp, dir.join(&rel))?;
        Ok(Some(rel))
    }

    pub fn read_snapshot(&self, rel: &str) -> Result<Snapshot> {
        let dir = self.dir.as_ref().ok_or_else(|| Error::InvalidInput("in-memory log has no snapshots".into()))?;
        let path = dir.join(rel);
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| Error::CorruptLog { path, message: e.to_string() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    Budget,
    /// the online simplex collapsed before reaching the threshold
    SimplexCollapsed,
    /// caller-imposed record limit (used to emulate interruptions)
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub optimizer: Optimizer,
    pub seed: u64,
    pub training_runs: usize,
    pub experiments: usize,
    pub converged: bool,
    pub stop: StopReason,
    /// post-training experiments until the best cost first fell below
    /// threshold (0 if training already did)
    pub experiments_to_threshold: Option<usize>,
    pub best_index: Option<usize>,
    pub best_cost: Option<f64>,
}

/// State carried through one optimization run.
pub struct Runner {
    cfg: RunConfig,
    experiment: Box<dyn Experiment>,
    log: ObservationLog,
    started: Instant,
    limit: Option<usize>,
}

impl Runner {
    /// Opens the configured output directory (resuming any log already there)
    /// or an in-memory log.
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let log = match &cfg.output_dir {
            Some(dir) => {
                let log = ObservationLog::open(dir)?;
                let cfg_path = dir.join(CONFIG_FILE);
                if !cfg_path.exists() {
                    fs::write(&cfg_path, serde_json::to_vec_pretty(&cfg)?)?;
                }
                log
            }
            None => ObservationLog::in_memory(),
        };
        let experiment = make_endpoint(&cfg);
        Ok(Self::with_parts(cfg, experiment, log))
    }

    /// Resumes the run stored in `dir` with the configuration saved there.
    pub fn resume(dir: &Path) -> Result<Self> {
        let mut cfg = RunConfig::from_json_file(&dir.join(CONFIG_FILE))?;
        cfg.output_dir = Some(dir.to_path_buf());
        Self::new(cfg)
    }

    pub fn with_parts(cfg: RunConfig, experiment: Box<dyn Experiment>, log: ObservationLog) -> Self {
        Self { cfg, experiment, log, started: Instant::now(), limit: None }
    }

    /// Stops after the log holds `n` records, as if the process were killed.
    pub fn stop_after(mut self, n: usize) -> Self {
        self.limit = Some(n);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn log(&self) -> &ObservationLog {
        &self.log
    }

    pub fn into_log(self) -> ObservationLog {
        self.log
    }

    fn interrupted(&self) -> bool {
        self.limit.is_some_and(|n| self.log.len() >= n)
    }

    fn execute(&mut self, x: &[f64], phase: Phase, bias: Option<f64>, snapshot: Option<Snapshot>) -> Result<&LogRecord> {
        let index = self.log.len();
        let physical = self.cfg.physical(x)?;
        let sample = self.experiment.run(index as u64, x, &physical)?;
        let snapshot = match snapshot {
            Some(s) => self.log.write_snapshot(&s)?,
            None => None,
        };
        self.log.append(LogRecord {
            index,
            phase,
            x: x.to_vec(),
            x_physical: physical,
            cost: sample.cost,
            uncert: sample.uncert,
            is_default: sample.is_default,
            raw_costs: sample.raw_costs,
            bias,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            snapshot,
        })?;
        Ok(self.log.records.last().expect("just appended"))
    }

    /// Rebuilds the online simplex by replaying every Nelder-Mead-driven record.
    fn replay_simplex(&self) -> Result<NelderMead> {
        let dim = self.cfg.dim();
        let mut nm = NelderMead::new(&self.cfg.start_point(), Bounds::unit(dim), self.cfg.nm_options())?;
        for rec in self.log.records.iter().filter(|r| r.phase != Phase::Mloo) {
            let x = nm.ask();
            if x != rec.x {
                return Err(Error::CorruptLog {
                    path: self.log.dir.clone().unwrap_or_default(),
                    message: format!("record {} does not match the replayed simplex point", rec.index),
                });
            }
            nm.tell(rec.cost);
        }
        Ok(nm)
    }

    /// Runs (or completes) the Nelder-Mead training runs and returns their observations.
    pub fn run_training(&mut self) -> Result<ObservationSet> {
        self.train()?;
        self.log.observations_upto(self.cfg.training_count().min(self.log.len()))
    }

    fn train(&mut self) -> Result<()> {
        let n_train = self.cfg.training_count();
        if self.log.len() < n_train {
            if self.log.records.iter().any(|r| r.phase != Phase::Training) {
                return Err(Error::CorruptLog {
                    path: self.log.dir.clone().unwrap_or_default(),
                    message: "optimizer records precede the end of training".into(),
                });
            }
            let mut nm = self.replay_simplex()?;
            while self.log.len() < n_train && !self.interrupted() {
                let x = nm.ask();
                let cost = self.execute(&x, Phase::Training, None, None)?.cost;
                nm.tell(cost);
            }
        }
        Ok(())
    }

    fn training_done(&self) -> bool {
        self.log.len() >= self.cfg.training_count()
    }

    fn stop_reason(&self) -> Option<StopReason> {
        if self.converged() {
            Some(StopReason::Converged)
        } else if self.log.len() >= self.cfg.training_count() + self.cfg.max_experiments {
            Some(StopReason::Budget)
        } else if self.interrupted() {
            Some(StopReason::Interrupted)
        } else {
            None
        }
    }

    /// True once the best non-default cost has been below threshold for
    /// `converge_after` consecutive post-training experiments.
    pub fn converged(&self) -> bool {
        let n_train = self.cfg.training_count();
        if self.log.len() <= n_train {
            return false;
        }
        let th = self.cfg.threshold_value();
        let best = self.log.running_best();
        let streak = best[n_train..].iter().rev().take_while(|b| b.is_some_and(|b| b < th)).count();
        streak >= self.cfg.converge_after.max(1)
    }

    fn new_ensemble(&self, stream: Stream, index: usize) -> Result<ParticleEnsemble> {
        ParticleEnsemble::new(self.cfg.ensemble_config(), derive_seed(self.cfg.seed, stream, index as u64))
    }

    fn restore_learner(&self) -> Result<(ParticleEnsemble, SweepSchedule)> {
        let last = self.log.records.iter().rev().find(|r| r.phase == Phase::Mloo);
        match last {
            None => Ok((self.new_ensemble(Stream::Ensemble, 0)?, SweepSchedule::new(self.cfg.sweep_cycle)?)),
            Some(rec) => {
                let rel = rec.snapshot.as_deref().ok_or_else(|| Error::CorruptLog {
                    path: self.log.dir.clone().unwrap_or_default(),
                    message: format!("learner record {} has no snapshot", rec.index),
                })?;
                let snap = self.log.read_snapshot(rel)?;
                let obs = self.log.observations_upto(snap.ensemble_observations)?;
                let ens = ParticleEnsemble::restore(self.cfg.ensemble_config(), &obs, &snap.ensemble)?;
                Ok((ens, SweepSchedule::at(self.cfg.sweep_cycle, snap.sweep_index)?))
            }
        }
    }

    fn propose(&self, ens: &ParticleEnsemble, b: f64, index: usize) -> Result<Proposal> {
        let center = self.log.best_index().expect("training produced records");
        let leash = leash_bounds(&ParameterVector::new(self.log.records[center].x.clone())?, self.cfg.leash)?;
        propose_parameters(ens, b, &leash, derive_seed(self.cfg.seed, Stream::Proposal, index as u64), &self.cfg.acquisition)
    }

    /// The learner loop: refresh, sweep, leash, propose, experiment, log.
    pub fn run_mloo(&mut self) -> Result<RunSummary> {
        self.train()?;
        if !self.training_done() {
            return self.summary(Some(StopReason::Interrupted));
        }
        if self.log.records.iter().any(|r| r.phase == Phase::NelderMead) {
            return Err(Error::Config("log belongs to a Nelder-Mead run".into()));
        }
        let (mut ens, mut sweep) = self.restore_learner()?;
        let reason = loop {
            if let Some(r) = self.stop_reason() {
                break r;
            }
            let index = self.log.len();
            let obs = self.log.observations()?;
            let b = sweep.next_bias();
            let proposal = match ens.refresh(&obs).and_then(|_| self.propose(&ens, b, index)) {
                Ok(p) => p,
                Err(e) => {
                    log::warn!("proposal {index} failed ({e}); reinitializing particles");
                    ens = self.new_ensemble(Stream::Reinit, index)?;
                    ens.refresh(&obs)?;
                    self.propose(&ens, b, index)?
                }
            };
            let snap = Snapshot {
                index,
                sweep_index: sweep.index(),
                ensemble: ens.state(),
                ensemble_observations: obs.len(),
            };
            let rec = self.execute(proposal.x.as_slice(), Phase::Mloo, Some(b), Some(snap))?;
            log::info!("run {index}: b={b:.2} cost={:.4} default={}", rec.cost, rec.is_default);
        };
        self.summary(Some(reason))
    }

    /// Continues the training simplex as the baseline optimizer.
    pub fn run_baseline(&mut self) -> Result<RunSummary> {
        self.train()?;
        if !self.training_done() {
            return self.summary(Some(StopReason::Interrupted));
        }
        if self.log.records.iter().any(|r| r.phase == Phase::Mloo) {
            return Err(Error::Config("log belongs to a learner run".into()));
        }
        let mut nm = self.replay_simplex()?;
        let reason = loop {
            if let Some(r) = self.stop_reason() {
                break r;
            }
            if nm.converged() {
                break StopReason::SimplexCollapsed;
            }
            let x = nm.ask();
            let cost = self.execute(&x, Phase::NelderMead, None, None)?.cost;
            nm.tell(cost);
        };
        self.summary(Some(reason))
    }

    /// Runs the configured optimizer to completion.
    pub fn run(&mut self) -> Result<RunSummary> {
        match self.cfg.optimizer {
            Optimizer::Mloo => self.run_mloo(),
            Optimizer::NelderMead => self.run_baseline(),
        }
    }

    pub fn experiments_to_threshold(&self) -> Option<usize> {
        let n_train = self.cfg.training_count();
        let th = self.cfg.threshold_value();
        let best = self.log.running_best();
        if best.get(n_train.saturating_sub(1)).copied().flatten().is_some_and(|b| b < th) {
            return Some(0);
        }
        best.iter().skip(n_train).position(|b| b.is_some_and(|b| b < th)).map(|p| p + 1)
    }

    fn summary(&self, stop: Option<StopReason>) -> Result<RunSummary> {
        let stop = stop.or_else(|| self.stop_reason()).unwrap_or(StopReason::Interrupted);
        let best_index = self.log.best_index();
        let summary = RunSummary {
            optimizer: self.cfg.optimizer,
            seed: self.cfg.seed,
            training_runs: self.cfg.training_count(),
            experiments: self.log.len(),
            converged: stop == StopReason::Converged,
            stop,
            experiments_to_threshold: self.experiments_to_threshold(),
            best_index,
            best_cost: best_index.map(|i| self.log.records[i].cost),
        };
        if let Some(dir) = &self.log.dir {
            fs::write(dir.join(SUMMARY_FILE), serde_json::to_vec_pretty(&summary)?)?;
        }
        Ok(summary)
    }
}

/// Reads every record of a log file without opening it for writing.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let f = File::open(path)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::CorruptLog {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", n + 1),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bowl_cfg(dim: usize) -> RunConfig {
        RunConfig {
            endpoint: EndpointConfig::Landscape { name: Landscape::Bowl, dim, noise: 0.0 },
            threshold: Some(1e-3),
            max_experiments: 10,
            ..RunConfig::default()
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, Stream::Noise, 0);
        assert_ne!(a, derive_seed(1, Stream::Noise, 1));
        assert_ne!(a, derive_seed(1, Stream::Proposal, 0));
        assert_ne!(a, derive_seed(2, Stream::Noise, 0));
    }

    #[test]
    fn training_counts() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.training_count(), 14);
        cfg.ramps.mode = RampMode::Complex;
        assert_eq!(cfg.dim(), 16);
        assert_eq!(cfg.training_count(), 20);
        cfg.training_runs = Some(1);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_budget_returns_training() {
        let cfg = RunConfig { max_experiments: 0, training_runs: Some(2), ..bowl_cfg(2) };
        let mut r = Runner::new(cfg).unwrap();
        let s = r.run_mloo().unwrap();
        assert_eq!(r.log().len(), 2);
        assert_eq!(s.stop, StopReason::Budget);
        assert!(r.log().records().iter().all(|rec| rec.phase == Phase::Training));
    }

    #[test]
    fn best_index_prefers_valid_then_earliest() {
        let mut log = ObservationLog::in_memory();
        for (i, (c, d)) in [(0.5, false), (0.1, true), (0.5, false), (0.3, false), (0.3, false)].iter().enumerate() {
            log.append(LogRecord {
                index: i,
                phase: Phase::Training,
                x: vec![0.5],
                x_physical: vec![0.5],
                cost: *c,
                uncert: 0.1,
                is_default: *d,
                raw_costs: vec![],
                bias: None,
                wall_time_s: 0.0,
                snapshot: None,
            })
            .unwrap();
        }
        assert_eq!(log.best_index(), Some(3));
        assert_eq!(log.running_best(), vec![Some(0.5), Some(0.5), Some(0.5), Some(0.3), Some(0.3)]);
    }
}
