//! Paired seeded comparisons of the learner against the Nelder-Mead baseline.
//! Both runs of a pair use the same seed, so their training prefixes match.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::controller::{Optimizer, RunConfig, RunSummary, Runner};
use crate::error::Result;

/// One seed's learner and baseline runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub seed: u64,
    pub mloo: RunSummary,
    pub nelder_mead: RunSummary,
}

/// Runs `base` in memory with the given optimizer and seed.
pub fn run_seeded(base: &RunConfig, optimizer: Optimizer, seed: u64) -> Result<(Runner, RunSummary)> {
    let cfg = RunConfig { optimizer, seed, output_dir: None, ..base.clone() };
    let mut runner = Runner::new(cfg)?;
    let summary = runner.run()?;
    Ok((runner, summary))
}

pub fn run_pair(base: &RunConfig, seed: u64) -> Result<PairResult> {
    let (_, mloo) = run_seeded(base, Optimizer::Mloo, seed)?;
    let (_, nelder_mead) = run_seeded(base, Optimizer::NelderMead, seed)?;
    Ok(PairResult { seed, mloo, nelder_mead })
}

pub fn run_benchmark(base: &RunConfig, seeds: impl IntoIterator<Item = u64>) -> Result<Vec<PairResult>> {
    seeds
        .into_iter()
        .map(|s| {
            let pair = run_pair(base, s)?;
            log::info!(
                "seed {s}: mloo {:?} vs nelder-mead {:?} experiments to threshold",
                pair.mloo.experiments_to_threshold,
                pair.nelder_mead.experiments_to_threshold
            );
            Ok(pair)
        })
        .collect()
}

/// Experiments-to-threshold with unconverged runs counted as `+∞`.
pub fn to_threshold(s: &RunSummary) -> f64 {
    s.experiments_to_threshold.map_or(f64::INFINITY, |n| n as f64)
}

/// Median of the values; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

pub fn write_summary_csv<W: Write>(results: &[PairResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "seed",
        "mloo_to_threshold",
        "mloo_best_cost",
        "mloo_experiments",
        "mloo_stop",
        "nm_to_threshold",
        "nm_best_cost",
        "nm_experiments",
        "nm_stop",
    ])?;
    let opt = |v: Option<usize>| v.map_or(String::new(), |n| n.to_string());
    let cost = |v: Option<f64>| v.map_or(String::new(), |c| format!("{c:.6}"));
    let stop = |s: &RunSummary| serde_json::to_value(s.stop).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
    for r in results {
        w.write_record([
            r.seed.to_string(),
            opt(r.mloo.experiments_to_threshold),
            cost(r.mloo.best_cost),
            r.mloo.experiments.to_string(),
            stop(&r.mloo),
            opt(r.nelder_mead.experiments_to_threshold),
            cost(r.nelder_mead.best_cost),
            r.nelder_mead.experiments.to_string(),
            stop(&r.nelder_mead),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[1.0, f64::INFINITY, f64::INFINITY]), f64::INFINITY);
        assert!(median(&[]).is_nan());
    }
}
