//! One-step Bellman operator over a max-of-hyperplanes continuation:
//! control selection, exact expectations over the noise atoms, and cuts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Matrix};
use crate::model::LinearConvexProblem;
use crate::subsolution::{Hyperplane, StageCuts};

/// Largest control lattice grid mode will enumerate.
pub const MAX_LATTICE_POINTS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BellmanError {
    #[error("non-finite value or slope at stage {stage}")]
    NonFinite { stage: usize },
    #[error("control lattice of {points}^{dim} points exceeds {MAX_LATTICE_POINTS}")]
    LatticeTooLarge { points: usize, dim: usize },
}

/// How the inner minimisation over the control ball is carried out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArgminMode {
    /// Closed-form minimiser of `c‖γ‖² + ⟨p, Bγ⟩` over the ball, with `p` the
    /// expected active slope at the zero-control successors, refined a few
    /// times by moving `p` to the candidate's successors.
    Hamiltonian,
    /// Enumeration over a regular lattice in `[-r, r]^{d2}` ∩ ball, plus the
    /// Hamiltonian candidate and `γ = 0`. With one control dimension the best
    /// lattice bracket is then refined to the exact minimiser.
    Grid { points_per_axis: usize },
}

impl ArgminMode {
    pub const DEFAULT_GRID_POINTS: usize = 21;

    pub fn grid() -> Self {
        ArgminMode::Grid {
            points_per_axis: Self::DEFAULT_GRID_POINTS,
        }
    }

    pub fn lattice_size(&self, d2: usize) -> Option<usize> {
        match self {
            ArgminMode::Hamiltonian => Some(0),
            ArgminMode::Grid { points_per_axis } => {
                let mut n: usize = 1;
                for _ in 0..d2 {
                    n = n.checked_mul(*points_per_axis)?;
                }
                Some(n)
            }
        }
    }
}

/// Result of one Bellman minimisation at an anchor state.
///
/// `value` is the cost achieved by `control` (running cost plus expected
/// continuation). `cut_value` is the intercept of the emitted hyperplane at
/// `anchor`; it equals `value` in Hamiltonian mode, and in grid mode it is
/// lowered by the certified optimality gap of `control` so that the cut stays
/// below the exact Bellman image.
#[derive(Debug, Clone, PartialEq)]
pub struct CutSample {
    pub stage: usize,
    pub anchor: Vec<f64>,
    pub control: Vec<f64>,
    pub value: f64,
    pub cut_value: f64,
    pub slope: Vec<f64>,
}

impl CutSample {
    pub fn to_hyperplane(&self, iteration_tag: usize) -> Hyperplane {
        Hyperplane::new(self.anchor.clone(), self.cut_value, self.slope.clone(), iteration_tag)
    }
}

/// Expected continuation value and expected active slope:
/// `Σ_k w_k·g(Ψ(x, γ, y_k))` and `Σ_k w_k·∇g(Ψ(x, γ, y_k))` for `g = next`.
pub fn expected_next_value(
    problem: &LinearConvexProblem,
    next: &StageCuts,
    _stage: usize,
    x: &[f64],
    control: &[f64],
) -> (f64, Vec<f64>) {
    let mut slope = vec![0.0; problem.dims.d];
    let value = expectation(problem, next, x, control, Some(&mut slope));
    (value, slope)
}

fn expectation(
    problem: &LinearConvexProblem,
    next: &StageCuts,
    x: &[f64],
    control: &[f64],
    slope_out: Option<&mut [f64]>,
) -> f64 {
    let d = problem.dims.d;
    let noise = &problem.noise;
    let atoms = noise.atom_count();
    let mut mean_successor = vec![0.0; d];
    problem.drift_into(x, control, &mut mean_successor);

    let floor = next.floor().unwrap_or(f64::NEG_INFINITY);
    let mut best = vec![floor; atoms];
    let mut best_idx = vec![usize::MAX; atoms];

    if noise.is_deterministic() {
        let (v, idx) = next.active(&mean_successor);
        best[0] = v;
        best_idx[0] = idx.unwrap_or(usize::MAX);
    } else {
        // Stages built outside a stack may lack the cached projection.
        let fallback: Option<Matrix> = match next.noise_projection() {
            Some(_) => None,
            None => problem.noise_projection(),
        };
        let mut offsets = vec![0.0; atoms];
        let mut scratch: Vec<f64>;
        // A cut that lies strictly below another cut (or the floor) at every
        // atom can never be active. Two bounds: against the floor and the
        // worst case of every cut, and against the cut highest at the mean
        // successor, whose slope is usually close.
        let amplitude = noise.amplitude();
        let bases: Vec<f64> = (0..next.len()).map(|i| next.cut_value_at(i, &mean_successor)).collect();
        let spreads: Vec<f64> = (0..next.len())
            .map(|i| next.noise_slope_l1(i).map_or(f64::INFINITY, |l1| amplitude * l1))
            .collect();
        let mut guaranteed = floor;
        let mut top = 0;
        for (i, (b, s)) in bases.iter().zip(&spreads).enumerate() {
            guaranteed = guaranteed.max(b - s);
            if *b > bases[top] {
                top = i;
            }
        }
        let tol = 1e-9 * (1.0 + guaranteed.abs());
        let cutoff = guaranteed - tol;
        let top_slope = if bases.is_empty() { None } else { next.noise_slope(top) };
        let dominated = |i: usize| -> bool {
            if bases[i] + spreads[i] < cutoff {
                return true;
            }
            match (top_slope, next.noise_slope(i)) {
                (Some(t), Some(s)) if i != top => {
                    let diff: f64 = s.iter().zip(t).map(|(a, b)| (a - b).abs()).sum();
                    bases[i] - bases[top] + amplitude * diff < -tol
                }
                _ => false,
            }
        };
        for i in 0..next.len() {
            let base = bases[i];
            if dominated(i) {
                continue;
            }
            let s = match next.noise_slope(i) {
                Some(s) => s,
                None => {
                    scratch = fallback
                        .as_ref()
                        .map(|m| m.mul_vec(next.cut_slope(i)))
                        .unwrap_or_else(|| vec![0.0; problem.dims.d1]);
                    &scratch
                }
            };
            noise.projections(s, &mut offsets);
            for k in 0..atoms {
                let v = base + offsets[k];
                if v > best[k] {
                    best[k] = v;
                    best_idx[k] = i;
                }
            }
        }
    }

    let mut value = 0.0;
    for (k, b) in best.iter().enumerate() {
        value += noise.weight(k) * b;
    }
    if let Some(slope) = slope_out {
        slope.iter_mut().for_each(|s| *s = 0.0);
        for (k, &i) in best_idx.iter().enumerate() {
            if i != usize::MAX {
                linalg::axpy(noise.weight(k), next.cut_slope(i), slope);
            }
        }
    }
    value
}

/// Minimiser of `γ ↦ c‖γ‖² + q·γ` over the closed ball of radius `r`.
/// With `c = 0` and `q = 0` every point is optimal and `0` is returned.
pub fn ball_argmin(c: f64, r: f64, q: &[f64]) -> Vec<f64> {
    let qn = linalg::norm(q);
    if qn == 0.0 {
        return vec![0.0; q.len()];
    }
    if c > 0.0 && qn / (2.0 * c) <= r {
        return q.iter().map(|v| -v / (2.0 * c)).collect();
    }
    q.iter().map(|v| -r * v / qn).collect()
}

/// Refinements of the closed-form control after the first one.
const HAMILTONIAN_REFINEMENTS: usize = 4;

/// Closed-form control from the slope at the zero-control successors, then
/// refined by recomputing the slope at the current candidate's successors.
/// The cheapest candidate wins, the earliest on ties.
fn hamiltonian_control(problem: &LinearConvexProblem, next: &StageCuts, x: &[f64]) -> Vec<f64> {
    let (c, r) = (problem.control_cost, problem.control_radius);
    let zero = vec![0.0; problem.dims.d2];
    let mut slope = vec![0.0; problem.dims.d];
    expectation(problem, next, x, &zero, Some(&mut slope));
    let mut candidate = ball_argmin(c, r, &problem.control_gain.tr_mul_vec(&slope));
    if next.is_empty() {
        return candidate;
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..=HAMILTONIAN_REFINEMENTS {
        let cost = problem.running_cost_unchecked(x, &candidate) + expectation(problem, next, x, &candidate, Some(&mut slope));
        if best.as_ref().is_none_or(|(_, b)| cost < *b) {
            best = Some((candidate.clone(), cost));
        }
        let refined = ball_argmin(c, r, &problem.control_gain.tr_mul_vec(&slope));
        if refined == candidate {
            break;
        }
        candidate = refined;
    }
    best.expect("at least one candidate").0
}

fn one_step_cost(problem: &LinearConvexProblem, next: &StageCuts, x: &[f64], control: &[f64]) -> f64 {
    problem.running_cost_unchecked(x, control) + expectation(problem, next, x, control, None)
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

fn lattice_axis(points: usize, r: f64) -> Vec<f64> {
    if points <= 1 {
        return vec![0.0];
    }
    (0..points)
        .map(|i| -r + 2.0 * r * i as f64 / (points - 1) as f64)
        .collect()
}

fn grid_control(
    problem: &LinearConvexProblem,
    next: &StageCuts,
    x: &[f64],
    points: usize,
) -> Result<Vec<f64>, BellmanError> {
    let d2 = problem.dims.d2;
    let r = problem.control_radius;
    let size = ArgminMode::Grid { points_per_axis: points }
        .lattice_size(d2)
        .filter(|&n| n <= MAX_LATTICE_POINTS)
        .ok_or(BellmanError::LatticeTooLarge { points, dim: d2 })?;

    let axis = lattice_axis(points, r);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut best_lattice: Option<(f64, Vec<f64>)> = None;
    let mut consider = |gamma: Vec<f64>, on_lattice: bool, best: &mut Option<(f64, Vec<f64>)>| {
        let cost = one_step_cost(problem, next, x, &gamma);
        let better = |slot: &Option<(f64, Vec<f64>)>| match slot {
            None => true,
            Some((c, g)) => cost < *c || (cost == *c && lex_less(&gamma, g)),
        };
        if on_lattice && better(&best_lattice) {
            best_lattice = Some((cost, gamma.clone()));
        }
        if better(best) {
            *best = Some((cost, gamma));
        }
    };

    let radius_tol = r * (1.0 + 1e-12);
    let mut index = vec![0usize; d2];
    for _ in 0..size {
        let gamma: Vec<f64> = index.iter().map(|&i| axis[i]).collect();
        if linalg::norm(&gamma) <= radius_tol {
            consider(gamma, true, &mut best);
        }
        for slot in index.iter_mut() {
            *slot += 1;
            if *slot < axis.len() {
                break;
            }
            *slot = 0;
        }
    }
    consider(hamiltonian_control(problem, next, x), false, &mut best);
    consider(vec![0.0; d2], false, &mut best);

    let (mut best_cost, mut best_gamma) = best.expect("candidate set contains γ = 0");
    if d2 == 1 {
        // Convex in γ: the exact minimiser lies within one spacing of the best
        // lattice point.
        let spacing = if points > 1 { 2.0 * r / (points - 1) as f64 } else { r };
        let centre = best_lattice.map_or(0.0, |(_, g)| g[0]);
        let lo = (centre - spacing).max(-r);
        let hi = (centre + spacing).min(r);
        let (g, c) = golden_section(|t| one_step_cost(problem, next, x, &[t]), lo, hi);
        if c < best_cost {
            best_cost = c;
            best_gamma = vec![g];
        }
    }
    let _ = best_cost;
    Ok(best_gamma)
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mut best = (c, fc);
    for t in [a, b, d] {
        let v = f(t);
        if v < best.1 {
            best = (t, v);
        }
    }
    best
}

/// Control chosen by the feedback policy induced by `next`.
pub fn select_control(
    problem: &LinearConvexProblem,
    next: &StageCuts,
    _stage: usize,
    x: &[f64],
    mode: ArgminMode,
) -> Result<Vec<f64>, BellmanError> {
    match mode {
        ArgminMode::Hamiltonian => Ok(hamiltonian_control(problem, next, x)),
        ArgminMode::Grid { points_per_axis } => grid_control(problem, next, x, points_per_axis),
    }
}

/// Minimises running cost plus expected continuation at `x` and returns the
/// resulting cut. The slope is `h∇f̄(x) + (I + hA)ᵀ·E[active slopes]` at the
/// chosen control.
pub fn minimize_stage(
    problem: &LinearConvexProblem,
    next: &StageCuts,
    stage: usize,
    x: &[f64],
    mode: ArgminMode,
) -> Result<CutSample, BellmanError> {
    let control = select_control(problem, next, stage, x, mode)?;
    let h = problem.step;
    let d = problem.dims.d;

    let mut expected_slope = vec![0.0; d];
    let continuation = expectation(problem, next, x, &control, Some(&mut expected_slope));
    let value = problem.running_cost_unchecked(x, &control) + continuation;

    let mut slope = expected_slope.clone();
    let a_t = problem.drift.tr_mul_vec(&expected_slope);
    linalg::axpy(h, &a_t, &mut slope);
    if !problem.state_cost.is_constant() {
        let grad = problem.state_cost.gradient(x);
        linalg::axpy(h, &grad, &mut slope);
    }

    let cut_value = match mode {
        ArgminMode::Hamiltonian => value,
        ArgminMode::Grid { .. } => value - certified_gap(problem, &expected_slope, &control),
    };

    if !value.is_finite() || !cut_value.is_finite() || !linalg::is_finite(&slope) {
        return Err(BellmanError::NonFinite { stage });
    }
    Ok(CutSample {
        stage,
        anchor: x.to_vec(),
        control,
        value,
        cut_value,
        slope,
    })
}

/// Upper bound on how far `control` is from optimal, from the joint convexity
/// of `(x, γ) ↦ f + E[w(Ψ)]`: with `q = Bᵀ·E[active slopes]` the objective is
/// bounded below by its linearisation plus `ch‖γ − γ*‖²`, whose minimum over
/// the ball is `ψ(u) − ψ(γ*)` for `ψ(γ) = h(c‖γ‖² + q·γ)`.
fn certified_gap(problem: &LinearConvexProblem, expected_slope: &[f64], control: &[f64]) -> f64 {
    let c = problem.control_cost;
    let h = problem.step;
    let q = problem.control_gain.tr_mul_vec(expected_slope);
    let psi = |g: &[f64]| h * (c * linalg::dot(g, g) + linalg::dot(&q, g));
    let best = ball_argmin(c, problem.control_radius, &q);
    (psi(control) - psi(&best)).max(0.0)
}

/// Tangent of the terminal cost at `x`, registered at stage `N`.
pub fn terminal_cut(problem: &LinearConvexProblem, x: &[f64]) -> CutSample {
    let value = problem.terminal_value(x);
    CutSample {
        stage: problem.steps(),
        anchor: x.to_vec(),
        control: vec![0.0; problem.dims.d2],
        value,
        cut_value: value,
        slope: problem.terminal_cost.gradient(x),
    }
}
