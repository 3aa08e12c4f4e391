//! The four benchmark instances: two deterministic (5-d and 10-d) and two
//! stochastic (5-d random walk and a 6-d particle with velocity).

use crate::bellman::ArgminMode;
use crate::bounds::EvalConfig;
use crate::config::Experiment;
use crate::linalg::Matrix;
use crate::model::{ConvexQuadratic, Dims, InitialLaw, LinearConvexProblem, NoiseModel};
use crate::solver::SolverConfig;

pub const HORIZON: f64 = 2.0;

pub const NAMES: [&str; 4] = ["example-6.1", "example-6.2", "example-6.3", "example-6.4"];

/// `(1, −√3, 2, 1, −1)`, with norm √10.
pub fn x0_5d() -> Vec<f64> {
    vec![1.0, -(3f64.sqrt()), 2.0, 1.0, -1.0]
}

pub fn x0_10d() -> Vec<f64> {
    vec![
        0.45251, -1.14480, -1.04310, 2.58810, -0.28219, 0.52325, 1.03390, -0.44980, -1.56190, -1.56260,
    ]
}

pub fn x0_6d() -> Vec<f64> {
    vec![1.0, -3.0, 2.0, 0.0, 0.0, 0.0]
}

/// `A = 0`, `B = I`, `f̄ ≡ 0`, `F(x) = 1 + ‖x‖²`, unit control ball, in any
/// dimension.
pub fn example_6_1_dim(d: usize, x0: Vec<f64>, h: f64, c: f64) -> LinearConvexProblem {
    LinearConvexProblem {
        name: "example-6.1".into(),
        dims: Dims { d, d1: 0, d2: d },
        drift: Matrix::zeros(d, d),
        control_gain: Matrix::identity(d),
        noise_gain: None,
        step: h,
        horizon: HORIZON,
        control_radius: 1.0,
        control_cost: c,
        state_cost: ConvexQuadratic::zero(d),
        terminal_cost: ConvexQuadratic::isotropic(d, 1.0, 1.0),
        noise: NoiseModel::None,
        initial: InitialLaw::Dirac { x0 },
    }
}

pub fn example_6_1(h: f64, c: f64) -> LinearConvexProblem {
    example_6_1_dim(5, x0_5d(), h, c)
}

/// Fully coupled drift `a_ij = 0.1·(−1)^{(i−1)(j−1)}` (1-based), d = 10.
pub fn example_6_2(h: f64, c: f64) -> LinearConvexProblem {
    let d = 10;
    let drift = Matrix::from_fn(d, d, |i, j| if (i * j) % 2 == 0 { 0.1 } else { -0.1 });
    LinearConvexProblem {
        name: "example-6.2".into(),
        drift,
        ..example_6_1_dim(d, x0_10d(), h, c)
    }
}

/// First example driven by `C = 0.25·I` and Rademacher noise.
pub fn example_6_3(h: f64, c: f64) -> LinearConvexProblem {
    LinearConvexProblem {
        name: "example-6.3".into(),
        dims: Dims { d: 5, d1: 5, d2: 5 },
        noise_gain: Some(Matrix::scaled_identity(5, 0.25)),
        noise: NoiseModel::RademacherProduct { dim: 5 },
        ..example_6_1(h, c)
    }
}

/// Particle in space: positions driven by velocities with friction 0.2,
/// control and noise acting on the velocities, `f̄ = ‖position‖²/2`,
/// `F ≡ 1`, control ball of radius 2, `c = 0.5`.
pub fn example_6_4(h: f64) -> LinearConvexProblem {
    let drift = Matrix::from_fn(6, 6, |i, j| match (i, j) {
        (0, 3) | (1, 4) | (2, 5) => 1.0,
        (3, 3) | (4, 4) | (5, 5) => -0.2,
        _ => 0.0,
    });
    let velocity_block = |s: f64| Matrix::from_fn(6, 3, |i, j| if i == j + 3 { s } else { 0.0 });
    LinearConvexProblem {
        name: "example-6.4".into(),
        dims: Dims { d: 6, d1: 3, d2: 3 },
        drift,
        control_gain: velocity_block(1.0),
        noise_gain: Some(velocity_block(0.25)),
        step: h,
        horizon: HORIZON,
        control_radius: 2.0,
        control_cost: 0.5,
        state_cost: ConvexQuadratic::new(Matrix::diagonal(&[0.5, 0.5, 0.5, 0.0, 0.0, 0.0]), vec![0.0; 6], 0.0),
        terminal_cost: ConvexQuadratic::constant(6, 1.0),
        noise: NoiseModel::RademacherProduct { dim: 3 },
        initial: InitialLaw::Dirac { x0: x0_6d() },
    }
}

/// Named preset with the solver and evaluation settings used for it.
pub fn experiment(name: &str) -> Option<Experiment> {
    let h = 0.01;
    let (problem, iterations, mc_paths) = match name {
        "example-6.1" => (example_6_1(h, 0.0), 20, 1),
        "example-6.2" => (example_6_2(h, 0.0), 20, 1),
        "example-6.3" => (example_6_3(h, 0.0), 200, 10_000),
        "example-6.4" => (example_6_4(h), 20, 10_000),
        _ => return None,
    };
    let record_every = if problem.noise.is_deterministic() { 1 } else { iterations };
    Some(Experiment {
        problem,
        solver: SolverConfig {
            iterations,
            batch: 1,
            argmin: ArgminMode::Hamiltonian,
            seed: 1,
            record_every,
        },
        eval: EvalConfig { mc_paths, seed: 7 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in NAMES {
            let e = experiment(name).unwrap();
            assert!(e.problem.validate().is_ok(), "{name}: {}", e.problem.validate());
            assert_eq!(e.problem.steps(), 200);
        }
        assert!(experiment("example-7").is_none());
    }

    #[test]
    fn coupled_drift_signs() {
        let p = example_6_2(0.01, 0.0);
        // 1-based (i, j) = (2, 2) has exponent 1, so the entry is negative.
        assert_eq!(p.drift.get(1, 1), -0.1);
        assert_eq!(p.drift.get(0, 5), 0.1);
        assert_eq!(p.drift.get(2, 3), 0.1);
        assert_eq!(p.drift.get(3, 5), -0.1);
    }

    #[test]
    fn initial_norm_is_sqrt_10() {
        let n: f64 = x0_5d().iter().map(|v| v * v).sum();
        assert!((n - 10.0).abs() < 1e-14);
    }
}
