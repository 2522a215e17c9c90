use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mloo::analysis::{best_point, fit_log};
use mloo::benchmark::{median, run_benchmark, to_threshold, write_summary_csv};
use mloo::controller::{read_log, CONFIG_FILE, LOG_FILE};
use mloo::{
    cross_section_1d, cross_section_2d, render_image, sensitivity_ranking, simulate_evaporation, threshold_cost,
    Optimizer, RunConfig, Runner, SimConfig,
};

#[derive(Parser)]
#[command(name = "mloo", version, about = "Online optimization of noisy experiments with a Gaussian-process learner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one optimization (learner or Nelder-Mead) against the configured endpoint.
    Optimize(OptimizeArgs),
    /// Paired learner / Nelder-Mead runs over a range of seeds.
    Benchmark(BenchmarkArgs),
    /// Evaluate a single parameter vector on the simulator.
    Simulate(SimulateArgs),
    /// Cross-sections and sensitivities from a finished log.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct OptimizeArgs {
    /// JSON run configuration; built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    optimizer: Option<Optimizer>,
    #[arg(long)]
    seed: Option<u64>,
    /// directory for the log, snapshots and summary
    #[arg(long, env = "MLOO_OUTPUT_DIR")]
    output: Option<PathBuf>,
    /// continue the run stored in this directory
    #[arg(long, conflicts_with_all = ["config", "optimizer", "seed", "output"])]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    /// summary CSV; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// comma-separated normalized parameters; the reference ramp when omitted
    #[arg(long, value_delimiter = ',')]
    params: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// write the rendered image as CSV
    #[arg(long)]
    image: Option<PathBuf>,
    /// write the control ramps as CSV
    #[arg(long)]
    ramps: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// log.jsonl or the run directory holding it
    #[arg(long)]
    log: PathBuf,
    #[arg(long, conflicts_with = "axes")]
    axis: Option<usize>,
    #[arg(long, value_delimiter = ',', num_args = 2)]
    axes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 51)]
    grid: usize,
    #[arg(long, default_value = "analysis")]
    out: PathBuf,
    /// particles for the post-hoc fit
    #[arg(long, default_value_t = 16)]
    particles: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_json_file(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    cfg.apply_env();
    Ok(cfg)
}

fn optimize(args: OptimizeArgs) -> Result<()> {
    let mut runner = match args.resume {
        Some(dir) => Runner::resume(&dir).with_context(|| format!("resuming {}", dir.display()))?,
        None => {
            let mut cfg = load_config(args.config.as_deref())?;
            if let Some(o) = args.optimizer {
                cfg.optimizer = o;
            }
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            if args.output.is_some() {
                cfg.output_dir = args.output;
            }
            Runner::new(cfg)?
        }
    };
    let summary = runner.run()?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn benchmark(args: BenchmarkArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let results = run_benchmark(&cfg, args.first_seed..args.first_seed + args.seeds)?;
    match &args.out {
        Some(p) => write_summary_csv(&results, fs::File::create(p)?)?,
        None => write_summary_csv(&results, std::io::stdout().lock())?,
    }
    let mloo: Vec<f64> = results.iter().map(|r| to_threshold(&r.mloo)).collect();
    let nm: Vec<f64> = results.iter().map(|r| to_threshold(&r.nelder_mead)).collect();
    eprintln!("median experiments to threshold: mloo {} nelder-mead {}", median(&mloo), median(&nm));
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let sim = SimConfig { rng_seed: args.seed, cost: cfg.cost, ..cfg.sim.clone() };
    let x = args.params.unwrap_or_else(|| sim.reference_ramp.clone());
    let x = if x.len() + 1 == cfg.ramps.dim() && cfg.ramps.dummy_index().is_some() {
        // allow omitting the unconnected slot
        let mut v = x;
        v.push(0.5);
        v
    } else {
        x
    };
    let sched = cfg.ramps.params_to_schedule(&x)?;
    if let Some(p) = &args.ramps {
        sched.write_csv(&cfg.ramps, 100.0, fs::File::create(p)?)?;
    }
    let cloud = simulate_evaporation(&sched, &sim)?;
    let sample = mloo::run_experiment(&x, &cfg.ramps, &sim)?;
    let image = render_image(&cloud, &sim)?;
    if let Some(p) = &args.image {
        image.write_csv(fs::File::create(p)?)?;
    }
    let single = threshold_cost(&image, sim.cost.od_lo, sim.cost.od_hi).ok();
    let out = serde_json::json!({
        "params": x,
        "physical": cfg.ramps.to_physical(&x)?,
        "cloud": cloud,
        "image_cost": single,
        "sample": sample,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let (log_path, run_dir) = if args.log.is_dir() {
        (args.log.join(LOG_FILE), Some(args.log.clone()))
    } else {
        (args.log.clone(), args.log.parent().map(Path::to_path_buf))
    };
    let records = read_log(&log_path).with_context(|| format!("reading {}", log_path.display()))?;
    if records.len() < 2 {
        bail!("{} holds {} records; at least 2 are needed", log_path.display(), records.len());
    }
    let cfg = match run_dir.map(|d| d.join(CONFIG_FILE)).filter(|p| p.exists()) {
        Some(p) => RunConfig::from_json_file(&p)?,
        None => RunConfig::default(),
    };
    let ens_cfg = mloo::EnsembleConfig { particles: args.particles, ..cfg.ensemble_config() };
    let ens = fit_log(&records, ens_cfg, args.seed)?;
    let anchor = best_point(&records)?;

    fs::create_dir_all(&args.out)?;
    let ranking = sensitivity_ranking(&ens)?;
    let mut f = fs::File::create(args.out.join("sensitivity.csv"))?;
    writeln!(f, "axis,sensitivity")?;
    for (axis, s) in &ranking {
        writeln!(f, "{axis},{s}")?;
        println!("x{axis}\t{s:.4}");
    }

    let dim = anchor.len();
    let write = |sec: mloo::CrossSection, stem: String| -> Result<()> {
        sec.write(&args.out, &stem, records.len(), args.particles, args.seed)?;
        Ok(())
    };
    match (args.axis, args.axes.as_deref()) {
        (Some(a), _) => write(cross_section_1d(&ens, &anchor, a, args.grid)?, format!("section_x{a}"))?,
        (None, Some([a, b])) => {
            write(cross_section_2d(&ens, &anchor, (*a, *b), args.grid)?, format!("section_x{a}_x{b}"))?
        }
        (None, Some(_)) => bail!("--axes takes exactly two indices"),
        (None, None) => {
            for a in 0..dim {
                write(cross_section_1d(&ens, &anchor, a, args.grid)?, format!("section_x{a}"))?;
            }
            let (a, b) = (ranking[0].0, ranking[1.min(dim - 1)].0);
            if a != b {
                write(cross_section_2d(&ens, &anchor, (a, b), args.grid)?, format!("section_x{a}_x{b}"))?;
            }
        }
    }
    eprintln!("wrote sections to {}", args.out.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Optimize(a) => optimize(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
    }
}
