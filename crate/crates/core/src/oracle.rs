//! Ground truth for small instances: dense-grid value iteration (d ≤ 2) and
//! the closed-form radial value of the isotropic benchmark.

use thiserror::Error;

use crate::linalg;
use crate::model::LinearConvexProblem;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("oracle precondition violated: {0}")]
    Precondition(String),
    #[error("successor state {state:?} leaves the grid at stage {stage}")]
    OutsideGrid { stage: usize, state: Vec<f64> },
}

/// Stage-0 box and resolution. Later stages use boxes grown to contain every
/// successor of the previous one.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points_per_axis: usize,
    pub control_points: usize,
}

#[derive(Debug, Clone)]
pub struct ValueTable {
    boxes: Vec<(Vec<f64>, Vec<f64>)>,
    points: usize,
    values: Vec<Vec<f64>>,
}

impl ValueTable {
    pub fn stages(&self) -> usize {
        self.values.len()
    }

    pub fn stage_box(&self, j: usize) -> (&[f64], &[f64]) {
        (&self.boxes[j].0, &self.boxes[j].1)
    }

    /// Multilinear interpolation of `V(j, ·)`.
    pub fn value(&self, j: usize, x: &[f64]) -> Result<f64, OracleError> {
        interpolate(&self.boxes[j].0, &self.boxes[j].1, self.points, &self.values[j], x)
            .ok_or_else(|| OracleError::OutsideGrid {
                stage: j,
                state: x.to_vec(),
            })
    }
}

fn node_coord(lo: f64, hi: f64, points: usize, k: usize) -> f64 {
    lo + (hi - lo) * k as f64 / (points - 1) as f64
}

/// `None` when `x` is outside the box (beyond a relative slack of 1e-9).
fn interpolate(lo: &[f64], hi: &[f64], points: usize, values: &[f64], x: &[f64]) -> Option<f64> {
    let d = x.len();
    let mut base = [0usize; 2];
    let mut frac = [0.0f64; 2];
    for i in 0..d {
        let width = hi[i] - lo[i];
        let slack = 1e-9 * (1.0 + width);
        if x[i] < lo[i] - slack || x[i] > hi[i] + slack {
            return None;
        }
        let t = ((x[i] - lo[i]) / width * (points - 1) as f64).clamp(0.0, (points - 1) as f64);
        let k = (t.floor() as usize).min(points - 2);
        base[i] = k;
        frac[i] = t - k as f64;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << d) {
        let mut weight = 1.0;
        let mut flat = 0;
        let mut stride = 1;
        for i in 0..d {
            let up = (corner >> i) & 1;
            weight *= if up == 1 { frac[i] } else { 1.0 - frac[i] };
            flat += (base[i] + up) * stride;
            stride *= points;
        }
        if weight != 0.0 {
            acc += weight * values[flat];
        }
    }
    Some(acc)
}

/// Box containing `Ψ(box, ball, atoms)`.
fn successor_box(problem: &LinearConvexProblem, lo: &[f64], hi: &[f64], atoms: &[(Vec<f64>, f64)]) -> (Vec<f64>, Vec<f64>) {
    let d = problem.dims.d;
    let h = problem.step;
    let sqrt_h = h.sqrt();
    let centre: Vec<f64> = lo.iter().zip(hi).map(|(l, u)| 0.5 * (l + u)).collect();
    let half: Vec<f64> = lo.iter().zip(hi).map(|(l, u)| 0.5 * (u - l)).collect();
    let mut new_lo = vec![0.0; d];
    let mut new_hi = vec![0.0; d];
    for i in 0..d {
        let mut c = centre[i];
        let mut w = 0.0;
        for l in 0..d {
            let m = if i == l { 1.0 } else { 0.0 } + h * problem.drift.get(i, l);
            c += (m - if i == l { 1.0 } else { 0.0 }) * centre[l];
            w += m.abs() * half[l];
        }
        w += h * problem.control_radius * linalg::norm(problem.control_gain.row(i));
        let mut noise_hi: f64 = 0.0;
        let mut noise_lo: f64 = 0.0;
        if let Some(cg) = &problem.noise_gain {
            for (y, _) in atoms {
                let shift = sqrt_h * linalg::dot(cg.row(i), y);
                noise_hi = noise_hi.max(shift);
                noise_lo = noise_lo.min(shift);
            }
        }
        let pad = 1e-9 * (1.0 + c.abs() + w);
        new_lo[i] = c - w + noise_lo - pad;
        new_hi[i] = c + w + noise_hi + pad;
    }
    (new_lo, new_hi)
}

/// Backward recursion `V(N, ·) = F`, `V(j, x) = min_γ f + E[V(j+1, Ψ)]` on a
/// tensor grid, with the control minimised by lattice enumeration.
pub fn grid_value_iteration(problem: &LinearConvexProblem, spec: &GridSpec) -> Result<ValueTable, OracleError> {
    let dims = problem.dims;
    let report = problem.validate();
    if !report.is_ok() {
        return Err(OracleError::Precondition(report.to_string()));
    }
    if dims.d > 2 || dims.d2 > 2 || dims.d1 > 2 {
        return Err(OracleError::Precondition(format!(
            "grid oracle needs d, d1, d2 ≤ 2 (got {}, {}, {})",
            dims.d, dims.d1, dims.d2
        )));
    }
    if spec.points_per_axis < 2 || spec.control_points < 2 {
        return Err(OracleError::Precondition("grids need at least 2 points per axis".into()));
    }
    if spec.lo.len() != dims.d || spec.hi.len() != dims.d || spec.lo.iter().zip(&spec.hi).any(|(l, h)| l.partial_cmp(h) != Some(std::cmp::Ordering::Less)) {
        return Err(OracleError::Precondition("grid box must be a non-degenerate d-box".into()));
    }

    let n = problem.steps();
    let d = dims.d;
    let p = spec.points_per_axis;
    let atoms = problem.noise.atoms(dims.d1);

    let mut boxes = vec![(spec.lo.clone(), spec.hi.clone())];
    for _ in 0..n {
        let (lo, hi) = boxes.last().unwrap();
        boxes.push(successor_box(problem, lo, hi, &atoms));
    }

    let r = problem.control_radius;
    let axis: Vec<f64> = (0..spec.control_points).map(|k| node_coord(-r, r, spec.control_points, k)).collect();
    let controls: Vec<Vec<f64>> = match dims.d2 {
        1 => axis.iter().map(|&g| vec![g]).collect(),
        _ => axis
            .iter()
            .flat_map(|&a| axis.iter().map(move |&b| vec![a, b]))
            .filter(|g| linalg::norm(g) <= r * (1.0 + 1e-12))
            .collect(),
    };

    let nodes = p.pow(d as u32);
    let node_at = |lo: &[f64], hi: &[f64], flat: usize| -> Vec<f64> {
        let mut rem = flat;
        (0..d)
            .map(|i| {
                let k = rem % p;
                rem /= p;
                node_coord(lo[i], hi[i], p, k)
            })
            .collect()
    };

    let mut values = vec![Vec::new(); n + 1];
    values[n] = (0..nodes)
        .map(|k| problem.terminal_value(&node_at(&boxes[n].0, &boxes[n].1, k)))
        .collect();

    let sqrt_h = problem.step.sqrt();
    let noise_shifts: Vec<(Vec<f64>, f64)> = atoms
        .iter()
        .map(|(y, w)| {
            let shift = match &problem.noise_gain {
                Some(c) if !problem.noise.is_deterministic() => c.mul_vec(y).iter().map(|v| v * sqrt_h).collect(),
                _ => vec![0.0; d],
            };
            (shift, *w)
        })
        .collect();

    let mut drift = vec![0.0; d];
    let mut succ = vec![0.0; d];
    for j in (0..n).rev() {
        let (lo, hi) = (&boxes[j].0, &boxes[j].1);
        let (nlo, nhi) = (&boxes[j + 1].0, &boxes[j + 1].1);
        let next = &values[j + 1];
        let mut current = Vec::with_capacity(nodes);
        for k in 0..nodes {
            let x = node_at(lo, hi, k);
            let mut best = f64::INFINITY;
            for g in &controls {
                let mut v = problem.running_cost_unchecked(&x, g);
                problem.drift_into(&x, g, &mut drift);
                for (shift, w) in &noise_shifts {
                    for i in 0..d {
                        succ[i] = drift[i] + shift[i];
                    }
                    let cont = interpolate(nlo, nhi, p, next, &succ).ok_or_else(|| OracleError::OutsideGrid {
                        stage: j + 1,
                        state: succ.clone(),
                    })?;
                    v += w * cont;
                }
                best = best.min(v);
            }
            current.push(best);
        }
        values[j] = current;
    }
    Ok(ValueTable { boxes, points: p, values })
}

/// Value of the isotropic benchmark (`A = 0`, `B = I`, `f̄ ≡ 0`,
/// `F = 1 + ‖x‖²`) from a start at distance `norm` from the origin: the
/// optimal control moves radially at constant speed `a`, so the value is
/// `min_{a∈[0,r]} c·a²·T + 1 + max(norm − aT, 0)²`.
pub fn radial_oracle(norm: f64, horizon: f64, radius: f64, c: f64) -> f64 {
    let speed = radial_speed(norm, horizon, radius, c);
    let remaining = (norm - speed * horizon).max(0.0);
    c * speed * speed * horizon + 1.0 + remaining * remaining
}

/// Optimal constant speed for [`radial_oracle`].
pub fn radial_speed(norm: f64, horizon: f64, radius: f64, c: f64) -> f64 {
    let cap = radius.min(norm / horizon);
    if c > 0.0 {
        (norm / (c + horizon)).clamp(0.0, cap)
    } else {
        cap
    }
}

/// Whether `problem` has the structure [`radial_oracle`] assumes.
pub fn is_radial_instance(problem: &LinearConvexProblem) -> bool {
    let d = problem.dims.d;
    problem.dims.d2 == d
        && problem.noise.is_deterministic()
        && problem.drift.is_zero()
        && problem.control_gain == crate::linalg::Matrix::identity(d)
        && problem.state_cost.is_constant()
        && problem.state_cost.constant == 0.0
        && problem.terminal_cost == crate::model::ConvexQuadratic::isotropic(d, 1.0, 1.0)
        && problem.initial.is_dirac()
}
