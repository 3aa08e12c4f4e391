//! The forward/backward iteration: simulate trajectories under the current
//! subsolution, then add cuts along them from the horizon back to stage 0.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bellman::{self, ArgminMode, BellmanError, MAX_LATTICE_POINTS};
use crate::bounds::{self, ConvergenceRecord, EvalConfig};
use crate::linalg;
use crate::model::{LinearConvexProblem, ValidationReport};
use crate::rng::{self, Purpose};
use crate::subsolution::{SubsolutionError, SubsolutionStack};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid problem: {0}")]
    InvalidProblem(ValidationReport),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("numerical failure: {0}")]
    Bellman(#[from] BellmanError),
    #[error("numerical failure: {0}")]
    Subsolution(#[from] SubsolutionError),
    #[error("numerical failure: non-finite state at stage {stage}")]
    NonFiniteState { stage: usize },
}

impl SolveError {
    pub fn is_numerical(&self) -> bool {
        !matches!(self, SolveError::InvalidProblem(_) | SolveError::InvalidConfig(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub iterations: usize,
    /// Trajectories simulated per iteration.
    pub batch: usize,
    pub argmin: ArgminMode,
    pub seed: u64,
    pub record_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            batch: 1,
            argmin: ArgminMode::Hamiltonian,
            seed: 1,
            record_every: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, control_dim: usize) -> Result<(), SolveError> {
        if self.iterations == 0 {
            return Err(SolveError::InvalidConfig("iterations must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(SolveError::InvalidConfig("batch must be at least 1".into()));
        }
        if self.record_every == 0 {
            return Err(SolveError::InvalidConfig("record_every must be at least 1".into()));
        }
        if let ArgminMode::Grid { points_per_axis } = self.argmin {
            if points_per_axis == 0 {
                return Err(SolveError::InvalidConfig("grid_points must be positive".into()));
            }
            if self
                .argmin
                .lattice_size(control_dim)
                .is_none_or(|n| n > MAX_LATTICE_POINTS)
            {
                return Err(SolveError::InvalidConfig(format!(
                    "grid lattice {points_per_axis}^{control_dim} exceeds {MAX_LATTICE_POINTS} points"
                )));
            }
        }
        Ok(())
    }
}

/// One simulated path. `noise[j]` is the atom index used for the transition
/// from stage `j` to `j + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub noise: Vec<usize>,
    pub realized_cost: f64,
}

/// Atom indices for the `N` transitions of one trajectory, by inverse CDF.
pub fn draw_noise(problem: &LinearConvexProblem, seed: u64, purpose: Purpose, outer: u64, inner: u64) -> Vec<usize> {
    let n = problem.steps();
    if problem.noise.is_deterministic() {
        return vec![0; n];
    }
    let mut stream = rng::stream(seed, purpose, outer, inner);
    (0..n)
        .map(|_| problem.noise.atom_for_uniform(stream.gen::<f64>()))
        .collect()
}

/// Rolls the feedback policy forward, returning the realised cost. When
/// `path` is given the states and controls are recorded into it.
pub(crate) fn rollout(
    problem: &LinearConvexProblem,
    stack: &SubsolutionStack,
    x0: &[f64],
    noise_draws: &[usize],
    mode: ArgminMode,
    mut path: Option<&mut Trajectory>,
) -> Result<f64, SolveError> {
    let n = problem.steps();
    let d = problem.dims.d;
    let d1 = problem.dims.d1;
    let sqrt_h = problem.step.sqrt();
    let mut x = x0.to_vec();
    let mut next = vec![0.0; d];
    let mut noise_shift = vec![0.0; d];
    let mut cost = 0.0;
    for j in 0..n {
        let control = bellman::select_control(problem, stack.stage(j + 1), j, &x, mode)?;
        cost += problem.running_cost_unchecked(&x, &control);
        problem.drift_into(&x, &control, &mut next);
        if let (false, Some(c)) = (problem.noise.is_deterministic(), &problem.noise_gain) {
            let y = problem.noise.atom(noise_draws[j], d1);
            c.mul_vec_into(&y, &mut noise_shift);
            linalg::axpy(sqrt_h, &noise_shift, &mut next);
        }
        if !linalg::is_finite(&next) {
            return Err(SolveError::NonFiniteState { stage: j + 1 });
        }
        if let Some(p) = path.as_deref_mut() {
            p.controls.push(control);
            p.states.push(next.clone());
        }
        std::mem::swap(&mut x, &mut next);
    }
    cost += problem.terminal_value(&x);
    Ok(cost)
}

/// Simulates one trajectory under the policy induced by `stack`.
pub fn simulate_trajectory(
    problem: &LinearConvexProblem,
    stack: &SubsolutionStack,
    x0: &[f64],
    noise_draws: &[usize],
    mode: ArgminMode,
) -> Result<Trajectory, SolveError> {
    let n = problem.steps();
    if noise_draws.len() != n {
        return Err(SolveError::InvalidConfig(format!(
            "expected {n} noise draws, got {}",
            noise_draws.len()
        )));
    }
    if !linalg::is_finite(x0) {
        return Err(SolveError::NonFiniteState { stage: 0 });
    }
    let mut path = Trajectory {
        states: Vec::with_capacity(n + 1),
        controls: Vec::with_capacity(n),
        noise: noise_draws.to_vec(),
        realized_cost: 0.0,
    };
    path.states.push(x0.to_vec());
    path.realized_cost = rollout(problem, stack, x0, noise_draws, mode, Some(&mut path))?;
    Ok(path)
}

/// Adds one terminal tangent per trajectory at stage `N`, then walks back:
/// stage `j` receives one cut per trajectory computed against the already
/// updated stage `j + 1`. Cuts are appended in trajectory order.
pub fn update_subsolution(
    problem: &LinearConvexProblem,
    stack: &mut SubsolutionStack,
    trajectories: &[Trajectory],
    iteration_tag: usize,
    mode: ArgminMode,
) -> Result<(), SolveError> {
    let n = stack.horizon();
    for t in trajectories {
        let cut = bellman::terminal_cut(problem, &t.states[n]);
        stack.stage_mut(n).add_cut(cut.to_hyperplane(iteration_tag))?;
    }
    for j in (0..n).rev() {
        let (current, next) = stack.split_stage_mut(j);
        let cuts = trajectories
            .par_iter()
            .map(|t| bellman::minimize_stage(problem, next, j, &t.states[j], mode))
            .collect::<Result<Vec<_>, _>>()?;
        for cut in cuts {
            current.add_cut(cut.to_hyperplane(iteration_tag))?;
        }
    }
    Ok(())
}

/// Stateful driver for the iteration; `run` wraps it with record keeping.
pub struct Solver<'a> {
    problem: &'a LinearConvexProblem,
    config: SolverConfig,
    stack: SubsolutionStack,
    iteration: usize,
}

impl<'a> Solver<'a> {
    pub fn new(problem: &'a LinearConvexProblem, config: SolverConfig) -> Result<Self, SolveError> {
        let report = problem.validate();
        if !report.is_ok() {
            return Err(SolveError::InvalidProblem(report));
        }
        config.validate(problem.dims.d2)?;
        Ok(Self {
            problem,
            config,
            stack: SubsolutionStack::new(problem),
            iteration: 0,
        })
    }

    pub fn stack(&self) -> &SubsolutionStack {
        &self.stack
    }

    pub fn into_stack(self) -> SubsolutionStack {
        self.stack
    }

    /// Completed iterations.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Runs one round and returns the trajectories it simulated.
    pub fn iterate(&mut self) -> Result<Vec<Trajectory>, SolveError> {
        self.iteration += 1;
        let it = self.iteration as u64;
        let problem = self.problem;
        let cfg = self.config;
        let stack = &self.stack;
        let trajectories = (0..cfg.batch as u64)
            .into_par_iter()
            .map(|m| {
                let x0 = if problem.initial.is_dirac() {
                    problem.initial.reference_point()
                } else {
                    problem
                        .initial
                        .sample(&mut rng::stream(cfg.seed, Purpose::InitialState, it, m))
                };
                let draws = draw_noise(problem, cfg.seed, Purpose::TrainingNoise, it, m);
                simulate_trajectory(problem, stack, &x0, &draws, cfg.argmin)
            })
            .collect::<Result<Vec<_>, _>>()?;
        update_subsolution(problem, &mut self.stack, &trajectories, self.iteration, cfg.argmin)?;
        Ok(trajectories)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub stack: SubsolutionStack,
    pub records: Vec<ConvergenceRecord>,
}

/// Runs `config.iterations` rounds, recording bounds at the initial law's
/// reference point every `record_every` iterations and after the last one.
pub fn run(
    problem: &LinearConvexProblem,
    config: &SolverConfig,
    eval: &EvalConfig,
) -> Result<RunOutput, SolveError> {
    let start = Instant::now();
    let mut solver = Solver::new(problem, *config)?;
    if eval.mc_paths == 0 {
        return Err(SolveError::InvalidConfig("mc_paths must be at least 1".into()));
    }
    let x_ref = problem.initial.reference_point();
    let mut records = Vec::new();
    while solver.iteration() < config.iterations {
        solver.iterate()?;
        let n = solver.iteration();
        if n % config.record_every == 0 || n == config.iterations {
            let lower = solver.stack().eval(0, &x_ref);
            let upper = bounds::estimate_upper(problem, solver.stack(), &x_ref, eval.mc_paths, eval.seed, config.argmin)?;
            records.push(ConvergenceRecord::new(
                n,
                lower,
                upper,
                solver.stack().total_cuts(),
                start.elapsed().as_millis() as u64,
            ));
        }
    }
    Ok(RunOutput {
        stack: solver.into_stack(),
        records,
    })
}
