//! TOML experiment files: one document describes the problem, the solver
//! settings and the evaluation settings.
//!
//! ```toml
//! name = "line"
//! T = 1.0
//! h = 0.1
//! A = [[0.0]]
//! B = [[1.0]]
//! C = [[0.5]]            # optional; omit with the noise table for a deterministic model
//!
//! [dims]
//! d = 1
//! d1 = 1                 # defaults to 0
//! d2 = 1
//!
//! [control]
//! radius = 1.0
//! cost_c = 0.5
//!
//! [state_cost]           # optional, defaults to zero
//! Q = [[1.0]]
//!
//! [terminal_cost]        # Q, q and q0 each default to zero
//! Q = [[1.0]]
//! q0 = 1.0
//!
//! [noise]                # kind = "none" | "rademacher" | "explicit" (atoms, weights)
//! kind = "rademacher"
//!
//! [initial]              # kind = "dirac" (x0) | "uniform_box" (lo, hi) | "finite_support" (atoms, weights)
//! kind = "dirac"
//! x0 = [1.0]
//!
//! [solver]               # every field optional
//! iterations = 20
//! batch = 1
//! seed = 1
//! record_every = 1
//! argmin = { mode = "hamiltonian", grid_points = 21 }
//!
//! [eval]                 # every field optional
//! mc_paths = 10000
//! seed = 7
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bellman::ArgminMode;
use crate::bounds::EvalConfig;
use crate::linalg::Matrix;
use crate::model::{ConvexQuadratic, Dims, InitialLaw, LinearConvexProblem, NoiseModel};
use crate::solver::SolverConfig;

/// A problem together with the settings to solve and evaluate it.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub problem: LinearConvexProblem,
    pub solver: SolverConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    name: String,
    #[serde(rename = "T")]
    horizon: f64,
    h: f64,
    #[serde(rename = "A")]
    drift: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    control_gain: Vec<Vec<f64>>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    noise_gain: Option<Vec<Vec<f64>>>,
    dims: DimsSection,
    control: ControlSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state_cost: Option<CostSection>,
    terminal_cost: CostSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise: Option<NoiseSection>,
    initial: InitialSection,
    #[serde(default)]
    solver: SolverSection,
    #[serde(default)]
    eval: EvalSection,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DimsSection {
    d: usize,
    #[serde(default)]
    d1: usize,
    d2: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlSection {
    radius: f64,
    cost_c: f64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostSection {
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    quad: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<Vec<f64>>,
    #[serde(default)]
    q0: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseSection {
    kind: NoiseKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    atoms: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum NoiseKind {
    None,
    Rademacher,
    Explicit,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialSection {
    kind: InitialKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    atoms: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum InitialKind {
    Dirac,
    UniformBox,
    FiniteSupport,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSection {
    #[serde(default = "defaults::iterations")]
    iterations: usize,
    #[serde(default = "defaults::batch")]
    batch: usize,
    #[serde(default = "defaults::seed")]
    seed: u64,
    #[serde(default = "defaults::record_every")]
    record_every: usize,
    #[serde(default)]
    argmin: ArgminSection,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            iterations: defaults::iterations(),
            batch: defaults::batch(),
            seed: defaults::seed(),
            record_every: defaults::record_every(),
            argmin: ArgminSection::default(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArgminSection {
    #[serde(default = "defaults::mode")]
    mode: ModeKind,
    #[serde(default = "defaults::grid_points")]
    grid_points: usize,
}

impl Default for ArgminSection {
    fn default() -> Self {
        Self {
            mode: defaults::mode(),
            grid_points: defaults::grid_points(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModeKind {
    Hamiltonian,
    Grid,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalSection {
    #[serde(default = "defaults::mc_paths")]
    mc_paths: usize,
    #[serde(default = "defaults::eval_seed")]
    seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            mc_paths: defaults::mc_paths(),
            seed: defaults::eval_seed(),
        }
    }
}

mod defaults {
    use super::ModeKind;

    pub fn iterations() -> usize {
        20
    }
    pub fn batch() -> usize {
        1
    }
    pub fn seed() -> u64 {
        1
    }
    pub fn record_every() -> usize {
        1
    }
    pub fn mode() -> ModeKind {
        ModeKind::Hamiltonian
    }
    pub fn grid_points() -> usize {
        crate::bellman::ArgminMode::DEFAULT_GRID_POINTS
    }
    pub fn mc_paths() -> usize {
        10_000
    }
    pub fn eval_seed() -> u64 {
        7
    }
}

/// Collects every problem found while assembling an experiment so that one
/// run reports all of them.
#[derive(Default)]
struct Problems(Vec<String>);

impl Problems {
    fn push(&mut self, msg: impl Into<String>) {
        self.0.push(msg.into());
    }

    fn matrix(&mut self, field: &str, rows: &[Vec<f64>], shape: (usize, usize)) -> Matrix {
        let (r, c) = shape;
        if rows.len() != r || rows.iter().any(|row| row.len() != c) {
            let got_cols = rows.first().map_or(0, Vec::len);
            self.push(format!(
                "{field}: expected a {r}×{c} matrix, got {}×{got_cols}{}",
                rows.len(),
                if rows.iter().any(|row| row.len() != got_cols) { " (ragged rows)" } else { "" }
            ));
            return Matrix::zeros(r, c);
        }
        if r == 0 {
            return Matrix::zeros(0, c);
        }
        Matrix::from_rows(rows).expect("shape checked")
    }

    fn vector(&mut self, field: &str, v: Vec<f64>, len: usize) -> Vec<f64> {
        if v.len() != len {
            self.push(format!("{field}: expected length {len}, got {}", v.len()));
            return vec![0.0; len];
        }
        v
    }

    fn required<T>(&mut self, field: &str, v: Option<T>) -> Option<T> {
        if v.is_none() {
            self.push(format!("{field} is required"));
        }
        v
    }
}

fn cost(p: &mut Problems, field: &str, section: CostSection, d: usize) -> ConvexQuadratic {
    let quad = match section.quad {
        Some(rows) => p.matrix(&format!("{field}.Q"), &rows, (d, d)),
        None => Matrix::zeros(d, d),
    };
    let linear = match section.q {
        Some(q) => p.vector(&format!("{field}.q"), q, d),
        None => vec![0.0; d],
    };
    ConvexQuadratic::new(quad, linear, section.q0)
}

fn position(span: Option<std::ops::Range<usize>>, text: &str) -> (usize, usize) {
    let offset = span.map_or(0, |s| s.start).min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |i| offset - i - 1) + 1;
    (line, column)
}

/// Parses and validates an experiment document.
pub fn parse_config(text: &str) -> Result<Experiment, ConfigError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| {
        let (line, column) = position(e.span(), text);
        ConfigError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    build(file)
}

fn build(file: ConfigFile) -> Result<Experiment, ConfigError> {
    let mut p = Problems::default();
    let dims = Dims {
        d: file.dims.d,
        d1: file.dims.d1,
        d2: file.dims.d2,
    };
    let d = dims.d;
    let drift = p.matrix("A", &file.drift, (d, d));
    let control_gain = p.matrix("B", &file.control_gain, (d, dims.d2));
    let noise_gain = file.noise_gain.map(|rows| p.matrix("C", &rows, (d, dims.d1)));

    let noise = match file.noise {
        None => {
            if noise_gain.is_some() && dims.d1 > 0 {
                NoiseModel::RademacherProduct { dim: dims.d1 }
            } else {
                NoiseModel::None
            }
        }
        Some(section) => match section.kind {
            NoiseKind::None => NoiseModel::None,
            NoiseKind::Rademacher => NoiseModel::RademacherProduct { dim: dims.d1 },
            NoiseKind::Explicit => {
                let atoms = p.required("noise.atoms", section.atoms).unwrap_or_default();
                let weights = p.required("noise.weights", section.weights).unwrap_or_default();
                if atoms.iter().any(|a| a.len() != dims.d1) {
                    p.push(format!("noise.atoms: every atom must have length d1 = {}", dims.d1));
                }
                NoiseModel::Explicit { atoms, weights }
            }
        },
    };

    let initial = match file.initial.kind {
        InitialKind::Dirac => {
            let x0 = p.required("initial.x0", file.initial.x0).unwrap_or_default();
            InitialLaw::Dirac {
                x0: p.vector("initial.x0", x0, d),
            }
        }
        InitialKind::UniformBox => {
            let lo = p.required("initial.lo", file.initial.lo).unwrap_or_default();
            let hi = p.required("initial.hi", file.initial.hi).unwrap_or_default();
            InitialLaw::UniformBox {
                lo: p.vector("initial.lo", lo, d),
                hi: p.vector("initial.hi", hi, d),
            }
        }
        InitialKind::FiniteSupport => {
            let atoms = p.required("initial.atoms", file.initial.atoms).unwrap_or_default();
            let weights = p.required("initial.weights", file.initial.weights).unwrap_or_default();
            if atoms.iter().any(|a| a.len() != d) {
                p.push(format!("initial.atoms: every atom must have length d = {d}"));
            }
            InitialLaw::FiniteSupport { atoms, weights }
        }
    };

    let state_cost = cost(&mut p, "state_cost", file.state_cost.unwrap_or_default(), d);
    let terminal_cost = cost(&mut p, "terminal_cost", file.terminal_cost, d);

    let solver = SolverConfig {
        iterations: file.solver.iterations,
        batch: file.solver.batch,
        seed: file.solver.seed,
        record_every: file.solver.record_every,
        argmin: match file.solver.argmin.mode {
            ModeKind::Hamiltonian => ArgminMode::Hamiltonian,
            ModeKind::Grid => ArgminMode::Grid {
                points_per_axis: file.solver.argmin.grid_points,
            },
        },
    };
    let eval = EvalConfig {
        mc_paths: file.eval.mc_paths,
        seed: file.eval.seed,
    };

    if !p.0.is_empty() {
        return Err(ConfigError::Invalid(p.0));
    }
    let experiment = Experiment {
        problem: LinearConvexProblem {
            name: file.name,
            dims,
            drift,
            control_gain,
            noise_gain,
            step: file.h,
            horizon: file.horizon,
            control_radius: file.control.radius,
            control_cost: file.control.cost_c,
            state_cost,
            terminal_cost,
            noise,
            initial,
        },
        solver,
        eval,
    };
    validate_experiment(&experiment)?;
    Ok(experiment)
}

/// Problem invariants plus solver and evaluation settings.
pub fn validate_experiment(experiment: &Experiment) -> Result<(), ConfigError> {
    let mut messages = experiment.problem.validate().violations;
    if let Err(e) = experiment.solver.validate(experiment.problem.dims.d2) {
        messages.push(format!("solver: {e}"));
    }
    if experiment.eval.mc_paths == 0 {
        messages.push("eval.mc_paths must be at least 1".into());
    }
    if messages.is_empty() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(messages))
    }
}

fn cost_section(c: &ConvexQuadratic) -> CostSection {
    CostSection {
        quad: Some(c.quad.to_rows()),
        q: Some(c.linear.clone()),
        q0: c.constant,
    }
}

/// Serialises an experiment so that [`parse_config`] rebuilds it exactly.
pub fn to_config_text(experiment: &Experiment) -> String {
    let p = &experiment.problem;
    let noise = match &p.noise {
        NoiseModel::None => NoiseSection {
            kind: NoiseKind::None,
            atoms: None,
            weights: None,
        },
        NoiseModel::RademacherProduct { .. } => NoiseSection {
            kind: NoiseKind::Rademacher,
            atoms: None,
            weights: None,
        },
        NoiseModel::Explicit { atoms, weights } => NoiseSection {
            kind: NoiseKind::Explicit,
            atoms: Some(atoms.clone()),
            weights: Some(weights.clone()),
        },
    };
    let mut initial = InitialSection {
        kind: InitialKind::Dirac,
        x0: None,
        lo: None,
        hi: None,
        atoms: None,
        weights: None,
    };
    match &p.initial {
        InitialLaw::Dirac { x0 } => initial.x0 = Some(x0.clone()),
        InitialLaw::UniformBox { lo, hi } => {
            initial.kind = InitialKind::UniformBox;
            initial.lo = Some(lo.clone());
            initial.hi = Some(hi.clone());
        }
        InitialLaw::FiniteSupport { atoms, weights } => {
            initial.kind = InitialKind::FiniteSupport;
            initial.atoms = Some(atoms.clone());
            initial.weights = Some(weights.clone());
        }
    }
    let (mode, grid_points) = match experiment.solver.argmin {
        ArgminMode::Hamiltonian => (ModeKind::Hamiltonian, ArgminMode::DEFAULT_GRID_POINTS),
        ArgminMode::Grid { points_per_axis } => (ModeKind::Grid, points_per_axis),
    };
    let file = ConfigFile {
        name: p.name.clone(),
        horizon: p.horizon,
        h: p.step,
        drift: p.drift.to_rows(),
        control_gain: p.control_gain.to_rows(),
        noise_gain: p.noise_gain.as_ref().map(Matrix::to_rows),
        dims: DimsSection {
            d: p.dims.d,
            d1: p.dims.d1,
            d2: p.dims.d2,
        },
        control: ControlSection {
            radius: p.control_radius,
            cost_c: p.control_cost,
        },
        state_cost: Some(cost_section(&p.state_cost)),
        terminal_cost: cost_section(&p.terminal_cost),
        noise: Some(noise),
        initial,
        solver: SolverSection {
            iterations: experiment.solver.iterations,
            batch: experiment.solver.batch,
            seed: experiment.solver.seed,
            record_every: experiment.solver.record_every,
            argmin: ArgminSection { mode, grid_points },
        },
        eval: EvalSection {
            mc_paths: experiment.eval.mc_paths,
            seed: experiment.eval.seed,
        },
    };
    toml::to_string(&file).expect("config structs always serialise")
}

/// Values that replace parts of a loaded experiment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub h: Option<f64>,
    pub c: Option<f64>,
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
    pub batch: Option<usize>,
    pub mc_paths: Option<usize>,
    pub argmin: Option<ArgminMode>,
    pub record_every: Option<usize>,
}

impl Overrides {
    /// Applies the overrides and re-validates.
    pub fn apply(&self, mut experiment: Experiment) -> Result<Experiment, ConfigError> {
        if let Some(h) = self.h {
            experiment.problem.step = h;
        }
        if let Some(c) = self.c {
            experiment.problem.control_cost = c;
        }
        if let Some(n) = self.iterations {
            experiment.solver.iterations = n;
            // stochastic presets record only at the end
            if experiment.solver.record_every > n {
                experiment.solver.record_every = n.max(1);
            }
        }
        if let Some(s) = self.seed {
            experiment.solver.seed = s;
        }
        if let Some(b) = self.batch {
            experiment.solver.batch = b;
        }
        if let Some(m) = self.mc_paths {
            experiment.eval.mc_paths = m;
        }
        if let Some(a) = self.argmin {
            experiment.solver.argmin = a;
        }
        if let Some(r) = self.record_every {
            experiment.solver.record_every = r;
        }
        validate_experiment(&experiment)?;
        Ok(experiment)
    }
}
