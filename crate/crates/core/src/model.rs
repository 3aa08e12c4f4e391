//! Problem instances: affine dynamics driven by a control in a Euclidean ball,
//! convex quadratic costs, finite-support noise and an initial law.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Matrix};

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_FLOOR: f64 = -1e-10;
const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

fn check_len(what: &'static str, v: &[f64], expected: usize) -> Result<(), ModelError> {
    if v.len() != expected {
        return Err(ModelError::Dimension {
            what,
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

/// `x ↦ xᵀQx + qᵀx + q0` with `Q` symmetric positive semidefinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexQuadratic {
    pub quad: Matrix,
    pub linear: Vec<f64>,
    pub constant: f64,
}

impl ConvexQuadratic {
    pub fn new(quad: Matrix, linear: Vec<f64>, constant: f64) -> Self {
        Self {
            quad,
            linear,
            constant,
        }
    }

    pub fn zero(d: usize) -> Self {
        Self::constant(d, 0.0)
    }

    pub fn constant(d: usize, value: f64) -> Self {
        Self::new(Matrix::zeros(d, d), vec![0.0; d], value)
    }

    /// `scale·‖x‖² + constant`
    pub fn isotropic(d: usize, scale: f64, constant: f64) -> Self {
        Self::new(Matrix::scaled_identity(d, scale), vec![0.0; d], constant)
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn is_constant(&self) -> bool {
        self.quad.is_zero() && self.linear.iter().all(|&v| v == 0.0)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut quad = 0.0;
        for i in 0..x.len() {
            quad += x[i] * linalg::dot(self.quad.row(i), x);
        }
        quad + linalg::dot(&self.linear, x) + self.constant
    }

    /// Writes `2Qx + q`. Uses the symmetric part of `Q`, which is `Q` itself
    /// for validated instances.
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        for i in 0..d {
            let mut g = self.linear[i];
            for j in 0..d {
                g += (self.quad.get(i, j) + self.quad.get(j, i)) * x[j];
            }
            out[i] = g;
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.gradient_into(x, &mut g);
        g
    }

    /// Infimum over ℝᵈ; `-∞` when the linear term leaves the range of `Q`.
    pub fn infimum(&self) -> f64 {
        let d = self.dim();
        if d == 0 {
            return self.constant;
        }
        let sym = nalgebra::DMatrix::from_fn(d, d, |i, j| {
            0.5 * (self.quad.get(i, j) + self.quad.get(j, i))
        });
        let eig = sym.symmetric_eigen();
        let q = nalgebra::DVector::from_column_slice(&self.linear);
        let scale = eig.eigenvalues.amax().max(1.0);
        let mut inf = self.constant;
        for k in 0..d {
            let lambda = eig.eigenvalues[k];
            let qk = eig.eigenvectors.column(k).dot(&q);
            if lambda <= 1e-12 * scale {
                if qk.abs() > 1e-12 {
                    return f64::NEG_INFINITY;
                }
            } else {
                inf -= qk * qk / (4.0 * lambda);
            }
        }
        inf
    }

    fn check(&self, label: &str, d: usize, report: &mut ValidationReport) {
        if self.quad.rows() != d || self.quad.cols() != d || self.linear.len() != d {
            report.push(format!("{label} dimensions do not match state dimension {d}"));
            return;
        }
        if !linalg::is_finite(&self.linear) || !self.constant.is_finite() || !self.quad.to_rows().iter().all(|r| linalg::is_finite(r)) {
            report.push(format!("{label} has non-finite coefficients"));
            return;
        }
        if self.quad.max_asymmetry() > SYMMETRY_TOL {
            report.push(format!("{label} Q not symmetric"));
        }
        if self.quad.min_symmetric_eigenvalue() < PSD_FLOOR {
            report.push(format!("{label} not PSD"));
            return;
        }
        if self.infimum() < -1e-12 {
            report.push(format!("{label} takes negative values"));
        }
    }
}

/// Finite-support disturbance law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseModel {
    /// Deterministic dynamics: a single zero atom.
    None,
    /// Uniform on the `2^dim` sign vectors. Atom `k` has component `b` equal
    /// to `+1` when bit `b` of `k` is set and `-1` otherwise.
    RademacherProduct { dim: usize },
    Explicit {
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
}

impl NoiseModel {
    pub fn is_deterministic(&self) -> bool {
        matches!(self, NoiseModel::None)
    }

    pub fn atom_count(&self) -> usize {
        match self {
            NoiseModel::None => 1,
            NoiseModel::RademacherProduct { dim } => 1usize << dim,
            NoiseModel::Explicit { atoms, .. } => atoms.len(),
        }
    }

    pub fn weight(&self, k: usize) -> f64 {
        match self {
            NoiseModel::None => 1.0,
            NoiseModel::RademacherProduct { dim } => 0.5f64.powi(*dim as i32),
            NoiseModel::Explicit { weights, .. } => weights[k],
        }
    }

    /// Atom `k` as a `dim`-vector. The deterministic atom is the zero vector.
    pub fn atom(&self, k: usize, dim: usize) -> Vec<f64> {
        match self {
            NoiseModel::None => vec![0.0; dim],
            NoiseModel::RademacherProduct { dim } => (0..*dim)
                .map(|b| if (k >> b) & 1 == 1 { 1.0 } else { -1.0 })
                .collect(),
            NoiseModel::Explicit { atoms, .. } => atoms[k].clone(),
        }
    }

    pub fn atoms(&self, dim: usize) -> Vec<(Vec<f64>, f64)> {
        (0..self.atom_count())
            .map(|k| (self.atom(k, dim), self.weight(k)))
            .collect()
    }

    /// Largest absolute component over all atoms, so that `|s·y_k| ≤ amplitude·‖s‖₁`.
    pub fn amplitude(&self) -> f64 {
        match self {
            NoiseModel::None => 0.0,
            NoiseModel::RademacherProduct { .. } => 1.0,
            NoiseModel::Explicit { atoms, .. } => atoms.iter().flatten().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    /// Inverse-CDF lookup of `u ∈ [0, 1)` over the atom weights.
    pub fn atom_for_uniform(&self, u: f64) -> usize {
        let n = self.atom_count();
        match self {
            NoiseModel::None => 0,
            NoiseModel::RademacherProduct { .. } => ((u * n as f64) as usize).min(n - 1),
            NoiseModel::Explicit { weights, .. } => {
                let mut acc = 0.0;
                for (k, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        return k;
                    }
                }
                n - 1
            }
        }
    }

    /// Writes `s·y_k` for every atom `k`.
    pub(crate) fn projections(&self, s: &[f64], out: &mut [f64]) {
        match self {
            NoiseModel::None => out[0] = 0.0,
            NoiseModel::RademacherProduct { dim } => {
                // Sign vectors share prefixes: flipping bit b adds 2·s_b.
                out[0] = -s.iter().take(*dim).sum::<f64>();
                for b in 0..*dim {
                    let half = 1usize << b;
                    let delta = 2.0 * s[b];
                    for k in 0..half {
                        out[half + k] = out[k] + delta;
                    }
                }
            }
            NoiseModel::Explicit { atoms, .. } => {
                for (o, a) in out.iter_mut().zip(atoms) {
                    *o = linalg::dot(s, a);
                }
            }
        }
    }
}

/// Law of the initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialLaw {
    Dirac { x0: Vec<f64> },
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    FiniteSupport {
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
}

impl InitialLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            InitialLaw::Dirac { x0 } => x0.clone(),
            InitialLaw::UniformBox { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| if h > l { rng.gen_range(l..=h) } else { l })
                .collect(),
            InitialLaw::FiniteSupport { atoms, weights } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (a, w) in atoms.iter().zip(weights) {
                    acc += w;
                    if u < acc {
                        return a.clone();
                    }
                }
                atoms.last().cloned().unwrap_or_default()
            }
        }
    }

    /// The point at which lower and upper bounds are reported: the Dirac
    /// point, the box centre, or the weighted mean of the atoms.
    pub fn reference_point(&self) -> Vec<f64> {
        match self {
            InitialLaw::Dirac { x0 } => x0.clone(),
            InitialLaw::UniformBox { lo, hi } => {
                lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect()
            }
            InitialLaw::FiniteSupport { atoms, weights } => {
                let d = atoms.first().map_or(0, Vec::len);
                let mut mean = vec![0.0; d];
                for (a, &w) in atoms.iter().zip(weights) {
                    linalg::axpy(w, a, &mut mean);
                }
                mean
            }
        }
    }

    pub fn is_dirac(&self) -> bool {
        matches!(self, InitialLaw::Dirac { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// State dimension.
    pub d: usize,
    /// Noise dimension.
    pub d1: usize,
    /// Control dimension.
    pub d2: usize,
}

/// Euler-discretised linear-convex control problem
/// `X⁺ = X + (AX + Bγ)h + √h·C·ξ`, `γ ∈ B̄(0, r)`, running cost
/// `(c‖γ‖² + f̄(X))h` and terminal cost `F(X_N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConvexProblem {
    pub name: String,
    pub dims: Dims,
    pub drift: Matrix,
    pub control_gain: Matrix,
    pub noise_gain: Option<Matrix>,
    pub step: f64,
    pub horizon: f64,
    pub control_radius: f64,
    pub control_cost: f64,
    pub state_cost: ConvexQuadratic,
    pub terminal_cost: ConvexQuadratic,
    pub noise: NoiseModel,
    pub initial: InitialLaw,
}

/// Violated instance invariants; empty when the instance is accepted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.contains(needle))
    }

    fn push(&mut self, msg: impl Into<String>) {
        self.violations.push(msg.into());
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        write!(f, "{}", self.violations.join("; "))
    }
}

impl LinearConvexProblem {
    /// Number of time steps `N = T/h`, rounded to the nearest integer.
    pub fn steps(&self) -> usize {
        (self.horizon / self.step).round().max(0.0) as usize
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let Dims { d, d1, d2 } = self.dims;
        if d == 0 {
            report.push("state dimension d must be positive");
        }
        if d2 == 0 {
            report.push("control dimension d2 must be positive");
        }
        if self.drift.rows() != d || self.drift.cols() != d {
            report.push(format!("A must be {d}x{d}"));
        }
        if self.control_gain.rows() != d || self.control_gain.cols() != d2 {
            report.push(format!("B must be {d}x{d2}"));
        }
        if let Some(c) = &self.noise_gain {
            if c.rows() != d || c.cols() != d1 {
                report.push(format!("C must be {d}x{d1}"));
            }
        }
        let mats = [Some(&self.drift), Some(&self.control_gain), self.noise_gain.as_ref()];
        if mats
            .iter()
            .flatten()
            .any(|m| !m.to_rows().iter().all(|r| linalg::is_finite(r)))
        {
            report.push("dynamics matrices have non-finite entries");
        }

        if !(self.step.is_finite() && self.step > 0.0) {
            report.push("time step h must be positive");
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            report.push("horizon T must be positive");
        }
        if self.step > 0.0 && self.horizon > 0.0 {
            let n = self.steps();
            if n == 0 || (n as f64 * self.step - self.horizon).abs() > 1e-12 * self.horizon {
                report.push(format!(
                    "N·h ≠ T (h = {}, T = {})",
                    self.step, self.horizon
                ));
            }
        }
        if !(self.control_radius.is_finite() && self.control_radius > 0.0) {
            report.push("control radius r must be positive");
        }
        if !(self.control_cost.is_finite() && self.control_cost >= 0.0) {
            report.push("control cost c must be non-negative");
        }

        self.state_cost.check("state_cost", d, &mut report);
        self.terminal_cost.check("terminal_cost", d, &mut report);

        match &self.noise {
            NoiseModel::None => {}
            NoiseModel::RademacherProduct { dim } => {
                if *dim != d1 {
                    report.push(format!("rademacher noise dimension {dim} ≠ d1 = {d1}"));
                }
                if *dim == 0 || *dim > 20 {
                    report.push("rademacher noise dimension must be in 1..=20");
                }
            }
            NoiseModel::Explicit { atoms, weights } => {
                if atoms.is_empty() || atoms.len() != weights.len() {
                    report.push("noise atoms and weights must be non-empty and of equal length");
                } else {
                    check_weights("noise", weights, &mut report);
                    if atoms.iter().any(|a| a.len() != d1) {
                        report.push(format!("noise atoms must have dimension d1 = {d1}"));
                    }
                    if !atoms.iter().all(|a| linalg::is_finite(a)) {
                        report.push("noise atoms must be finite");
                    }
                }
            }
        }
        if !self.noise.is_deterministic() && self.noise_gain.is_none() {
            report.push("non-degenerate noise requires C");
        }

        match &self.initial {
            InitialLaw::Dirac { x0 } => {
                if x0.len() != d || !linalg::is_finite(x0) {
                    report.push(format!("initial x0 must be a finite {d}-vector"));
                }
            }
            InitialLaw::UniformBox { lo, hi } => {
                if lo.len() != d || hi.len() != d {
                    report.push(format!("initial box corners must be {d}-vectors"));
                } else if lo.iter().zip(hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l <= h)) {
                    report.push("initial box needs finite lo ≤ hi");
                }
            }
            InitialLaw::FiniteSupport { atoms, weights } => {
                if atoms.is_empty() || atoms.len() != weights.len() {
                    report.push("initial atoms and weights must be non-empty and of equal length");
                } else {
                    check_weights("initial", weights, &mut report);
                    if atoms.iter().any(|a| a.len() != d || !linalg::is_finite(a)) {
                        report.push(format!("initial atoms must be finite {d}-vectors"));
                    }
                }
            }
        }
        report
    }

    /// `x + (Ax + Bγ)h + √h·C·y`. An empty `y` means no noise.
    pub fn step_dynamics(
        &self,
        _stage: usize,
        x: &[f64],
        control: &[f64],
        noise: &[f64],
    ) -> Result<Vec<f64>, ModelError> {
        check_len("state", x, self.dims.d)?;
        check_len("control", control, self.dims.d2)?;
        if !noise.is_empty() {
            check_len("noise", noise, self.dims.d1)?;
        }
        let mut out = vec![0.0; self.dims.d];
        self.drift_into(x, control, &mut out);
        if !noise.is_empty() {
            if let Some(c) = &self.noise_gain {
                let cy = c.mul_vec(noise);
                linalg::axpy(self.step.sqrt(), &cy, &mut out);
            }
        }
        Ok(out)
    }

    /// Noise-free part of the successor: `x + (Ax + Bγ)h`.
    pub(crate) fn drift_into(&self, x: &[f64], control: &[f64], out: &mut [f64]) {
        let h = self.step;
        let d = self.dims.d;
        for i in 0..d {
            let ax = linalg::dot(self.drift.row(i), x);
            let bg = linalg::dot(self.control_gain.row(i), control);
            out[i] = x[i] + (ax + bg) * h;
        }
    }

    /// `(c‖γ‖² + f̄(x))·h`.
    pub fn running_cost(&self, _stage: usize, x: &[f64], control: &[f64]) -> Result<f64, ModelError> {
        check_len("state", x, self.dims.d)?;
        check_len("control", control, self.dims.d2)?;
        Ok(self.running_cost_unchecked(x, control))
    }

    pub(crate) fn running_cost_unchecked(&self, x: &[f64], control: &[f64]) -> f64 {
        let ctrl = self.control_cost * linalg::dot(control, control);
        let state = if self.state_cost.is_constant() {
            self.state_cost.constant
        } else {
            self.state_cost.value(x)
        };
        (ctrl + state) * self.step
    }

    pub fn terminal_value(&self, x: &[f64]) -> f64 {
        self.terminal_cost.value(x)
    }

    /// `√h·Cᵀ`, the map from a cut slope to its sensitivity to the noise atom.
    pub fn noise_projection(&self) -> Option<Matrix> {
        if self.noise.is_deterministic() {
            return None;
        }
        self.noise_gain
            .as_ref()
            .map(|c| c.transpose().scale(self.step.sqrt()))
    }
}

fn check_weights(label: &str, weights: &[f64], report: &mut ValidationReport) {
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        report.push(format!("{label} weights must be strictly positive"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        report.push(format!("{label} weights sum to {total}, not 1"));
    }
}
