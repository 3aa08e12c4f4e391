//! A posteriori error bounds: the subsolution value is a lower bound, and the
//! Monte-Carlo cost of the feedback policy it induces is an upper estimate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bellman::ArgminMode;
use crate::model::LinearConvexProblem;
use crate::rng::Purpose;
use crate::solver::{self, SolveError};
use crate::subsolution::SubsolutionStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mc_paths: usize,
    /// Evaluation paths reuse this seed at every record (common random numbers).
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mc_paths: 10_000,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpperEstimate {
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRecord {
    pub iteration: usize,
    pub lower_bound: f64,
    pub upper_estimate: f64,
    pub upper_stderr: f64,
    pub gap: f64,
    /// `gap / lower_bound`; NaN unless the lower bound is positive.
    pub relative_gap: f64,
    pub cuts_total: usize,
    pub wall_millis: u64,
}

impl ConvergenceRecord {
    pub fn new(iteration: usize, lower_bound: f64, upper: UpperEstimate, cuts_total: usize, wall_millis: u64) -> Self {
        let gap = upper.mean - lower_bound;
        Self {
            iteration,
            lower_bound,
            upper_estimate: upper.mean,
            upper_stderr: upper.stderr,
            gap,
            relative_gap: relative_gap(lower_bound, gap),
            cuts_total,
            wall_millis,
        }
    }
}

fn relative_gap(lower: f64, gap: f64) -> f64 {
    if lower > 0.0 {
        gap / lower
    } else {
        f64::NAN
    }
}

/// Mean and standard error of the realised cost of the policy induced by
/// `stack`, over `paths` fresh noise sequences started from `x0`. A
/// deterministic problem has a single path with zero standard error.
pub fn estimate_upper(
    problem: &LinearConvexProblem,
    stack: &SubsolutionStack,
    x0: &[f64],
    paths: usize,
    seed: u64,
    mode: ArgminMode,
) -> Result<UpperEstimate, SolveError> {
    let n = problem.steps();
    if problem.noise.is_deterministic() {
        let cost = solver::rollout(problem, stack, x0, &vec![0; n], mode, None)?;
        return Ok(UpperEstimate { mean: cost, stderr: 0.0 });
    }
    let paths = paths.max(1);
    let costs = (0..paths as u64)
        .into_par_iter()
        .map(|k| {
            let draws = solver::draw_noise(problem, seed, Purpose::Evaluation, 0, k);
            solver::rollout(problem, stack, x0, &draws, mode, None)
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(mean_and_stderr(&costs))
}

pub(crate) fn mean_and_stderr(samples: &[f64]) -> UpperEstimate {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return UpperEstimate { mean, stderr: 0.0 };
    }
    let var = samples.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1.0);
    UpperEstimate {
        mean,
        stderr: (var / n).sqrt(),
    }
}

/// One row of the summary table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapRow {
    pub iteration: usize,
    pub lower_bound: f64,
    pub upper_estimate: f64,
    pub gap: f64,
    pub relative_gap: f64,
    pub wall_millis: u64,
}

pub fn gap_report(records: &[ConvergenceRecord]) -> Vec<GapRow> {
    records
        .iter()
        .map(|r| GapRow {
            iteration: r.iteration,
            lower_bound: r.lower_bound,
            upper_estimate: r.upper_estimate,
            gap: r.upper_estimate - r.lower_bound,
            relative_gap: relative_gap(r.lower_bound, r.upper_estimate - r.lower_bound),
            wall_millis: r.wall_millis,
        })
        .collect()
}
