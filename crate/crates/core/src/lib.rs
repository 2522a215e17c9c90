pub mod acquisition;
pub mod analysis;
pub mod benchmark;
pub mod controller;
pub mod cost;
pub mod ensemble;
pub mod error;
pub mod gp;
mod linalg;
pub mod nelder_mead;
pub mod params;
pub mod ramps;
pub mod sim;

pub use acquisition::{
    bias_value, leash_bounds, propose_parameters, AcquisitionConfig, LeashBox, Proposal, SweepSchedule,
    UncertaintyMeasure,
};
pub use cost::{combine_runs, threshold_cost, AbsorptionImage, CostConfig, CostSample};
pub use ensemble::{EnsembleConfig, Particle, ParticleEnsemble};
pub use error::{Error, Result};
pub use gp::{kernel_value, log_likelihood, FittedGp, HyperBounds, Hyperparameters};
pub use nelder_mead::{nm_optimize, Bounds, NelderMead, NelderMeadOptions, NelderMeadResult, Simplex};
pub use params::{ObservationSet, ParameterVector};
pub use ramps::{RampLayout, RampMode, RampSchedule};
pub use sim::{analytic_landscape, render_image, run_experiment, simulate_evaporation, CloudState, Landscape, SimConfig};
pub use controller::{
    EndpointConfig, Experiment, LogRecord, ObservationLog, Optimizer, Phase, RunConfig, RunSummary, Runner, StopReason,
};
pub use analysis::{cross_section_1d, cross_section_2d, sensitivity_ranking, CrossSection};
