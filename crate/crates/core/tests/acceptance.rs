//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subsol_core::bellman::ArgminMode;
use subsol_core::bounds::{estimate_upper, EvalConfig};
use subsol_core::config::Overrides;
use subsol_core::experiment::{run_experiment, RunOptions, CONVERGENCE_FILE};
use subsol_core::model::{ConvexQuadratic, Dims, InitialLaw, LinearConvexProblem, NoiseModel};
use subsol_core::oracle::{grid_value_iteration, radial_oracle, GridSpec};
use subsol_core::solver::{run, Solver, SolverConfig};
use subsol_core::subsolution::{StageCuts, SubsolutionStack};
use subsol_core::{presets, Matrix};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn hamiltonian(iterations: usize) -> SolverConfig {
    SolverConfig {
        iterations,
        record_every: iterations,
        ..SolverConfig::default()
    }
}

fn deterministic_eval() -> EvalConfig {
    EvalConfig { mc_paths: 1, seed: 7 }
}

/// Lower bound, gap and seconds of one run recorded at the end.
fn timed_run(problem: &LinearConvexProblem, config: &SolverConfig, eval: &EvalConfig) -> Result<(f64, f64, f64, f64), String> {
    let start = Instant::now();
    let out = run(problem, config, eval).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let last = out.records.last().ok_or("no records")?;
    Ok((last.lower_bound, last.gap, last.relative_gap, secs))
}

fn example_6_1_table() -> Outcome {
    let rho = 10f64.sqrt();
    let mut lines = Vec::new();
    let mut ok = true;
    for (c, gap_ok) in [
        (0.0, (|g: f64| g.abs() <= 1e-6) as fn(f64) -> bool),
        (0.5, |g: f64| g.abs() <= 1e-6),
        (1.5, |g: f64| (0.0..=5e-4).contains(&g)),
    ] {
        let p = presets::example_6_1(0.01, c);
        let (lower, gap, _, secs) = timed_run(&p, &hamiltonian(20), &deterministic_eval())?;
        let target = radial_oracle(rho, presets::HORIZON, 1.0, c);
        let this = (lower - target).abs() <= 5e-3 && gap_ok(gap) && secs <= 5.0;
        ok &= this;
        lines.push(format!("c={c}: lower {lower:.5} (target {target:.5}) gap {gap:.2e} {secs:.2}s"));
    }
    check(ok, lines.join(", "))
}

fn example_6_2_table() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (c, target) in [(0.0, 5.66), (0.5, 6.66), (1.5, 8.66)] {
        let p = presets::example_6_2(0.01, c);
        let (lower, gap, _, secs) = timed_run(&p, &hamiltonian(20), &deterministic_eval())?;
        let this = (lower - target).abs() <= 0.02 && gap.abs() <= 1e-3 && secs <= 5.0;
        ok &= this;
        lines.push(format!("c={c}: lower {lower:.4} gap {gap:.2e} {secs:.2}s"));
    }
    check(ok, lines.join(", "))
}

fn example_6_3_table() -> Outcome {
    let eval = EvalConfig { mc_paths: 10_000, seed: 7 };
    let mut lines = Vec::new();
    let mut ok = true;
    for (c, band, max_rel) in [(0.0, (2.20, 2.36), 0.35), (1.5, (5.05, 5.30), 0.18)] {
        let p = presets::example_6_3(0.01, c);
        let (lower, _, rel, secs) = timed_run(&p, &hamiltonian(200), &eval)?;
        let this = lower >= band.0 && lower <= band.1 && rel <= max_rel && secs <= 60.0;
        ok &= this;
        lines.push(format!("c={c}: lower {lower:.4} relative gap {:.2}% {secs:.1}s", 100.0 * rel));
    }
    check(ok, lines.join(", "))
}

fn example_6_4_table() -> Outcome {
    let p = presets::example_6_4(0.01);
    let eval = EvalConfig { mc_paths: 10_000, seed: 7 };
    let (lower, _, rel, secs) = timed_run(&p, &hamiltonian(20), &eval)?;
    check(
        (lower - 10.8).abs() <= 0.3 && rel <= 0.02 && secs <= 10.0,
        format!("lower {lower:.4} relative gap {:.2}% {secs:.2}s", 100.0 * rel),
    )
}

fn probes(rng: &mut ChaCha8Rng, centre: &[f64], spread: f64, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| centre.iter().map(|c| c + rng.gen_range(-spread..=spread)).collect())
        .collect()
}

fn monotone_over_iterations(problem: &LinearConvexProblem) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = problem.steps();
    let x0 = problem.initial.reference_point();
    let points: Vec<Vec<Vec<f64>>> = (0..=n).map(|_| probes(&mut rng, &x0, 3.0, 1000)).collect();
    let mut solver = Solver::new(problem, hamiltonian(50)).map_err(|e| e.to_string())?;
    let snapshot = |s: &SubsolutionStack| -> Vec<Vec<f64>> {
        points
            .iter()
            .enumerate()
            .map(|(j, ps)| ps.iter().map(|x| s.eval(j, x)).collect())
            .collect()
    };
    let mut before = snapshot(solver.stack());
    let mut worst = 0.0f64;
    for _ in 0..50 {
        solver.iterate().map_err(|e| e.to_string())?;
        let after = snapshot(solver.stack());
        for (b, a) in before.iter().flatten().zip(after.iter().flatten()) {
            worst = worst.max(b - a);
        }
        before = after;
    }
    Ok(worst)
}

fn monotonicity() -> Outcome {
    let a = monotone_over_iterations(&presets::example_6_1(0.01, 0.0))?;
    let b = monotone_over_iterations(&presets::example_6_3(0.01, 0.0))?;
    check(
        a <= 1e-10 && b <= 1e-10,
        format!("largest decrease: 6.1 {a:.1e}, 6.3 {b:.1e}"),
    )
}

/// `E[w(Ψ(x, γ, ξ))]` by direct evaluation at every successor.
fn continuation(problem: &LinearConvexProblem, stage: usize, next: &StageCuts, x: &[f64], control: &[f64]) -> f64 {
    let d1 = problem.dims.d1;
    problem
        .noise
        .atoms(d1)
        .iter()
        .map(|(y, w)| {
            let y: &[f64] = if problem.noise.is_deterministic() { &[] } else { y };
            let succ = problem.step_dynamics(stage, x, control, y).unwrap();
            w * next.eval(&succ)
        })
        .sum()
}

fn golden_min(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..90 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    f(lo).min(f(hi)).min(fc).min(fd)
}

/// Exact one-step minimum over the control ball for one or two control
/// dimensions; nested golden-section search is exact for convex objectives.
fn bellman_image(problem: &LinearConvexProblem, stage: usize, next: &StageCuts, x: &[f64]) -> f64 {
    let r = problem.control_radius;
    let objective = |g: &[f64]| problem.running_cost(stage, x, g).unwrap() + continuation(problem, stage, next, x, g);
    match problem.dims.d2 {
        1 => golden_min(-r, r, |g| objective(&[g])),
        2 => golden_min(-r, r, |g1| {
            let w = (r * r - g1 * g1).max(0.0).sqrt();
            golden_min(-w, w, |g2| objective(&[g1, g2]))
        }),
        _ => unreachable!("brute force limited to two control dimensions"),
    }
}

fn subsolution_inequality() -> Outcome {
    let problem = presets::example_6_1_dim(2, vec![1.0, -1.5], 0.1, 0.5);
    let config = SolverConfig {
        argmin: ArgminMode::Grid { points_per_axis: 21 },
        ..hamiltonian(50)
    };
    let mut solver = Solver::new(&problem, config).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = problem.steps();
    let mut worst = f64::NEG_INFINITY;
    let mut worst_terminal = f64::NEG_INFINITY;
    for checkpoint in [10, 50] {
        while solver.iteration() < checkpoint {
            solver.iterate().map_err(|e| e.to_string())?;
        }
        let stack = solver.stack();
        for j in 0..n {
            for x in probes(&mut rng, &[1.0, -1.5], 2.0, 200) {
                let excess = stack.eval(j, &x) - bellman_image(&problem, j, stack.stage(j + 1), &x);
                worst = worst.max(excess);
            }
        }
        for x in probes(&mut rng, &[1.0, -1.5], 2.0, 200) {
            worst_terminal = worst_terminal.max(stack.eval(n, &x) - problem.terminal_value(&x));
        }
    }
    check(
        worst <= 1e-7 && worst_terminal <= 1e-9,
        format!("max eval − Bellman {worst:.2e}, max eval − F {worst_terminal:.2e}"),
    )
}

fn line_problem(noisy: bool) -> LinearConvexProblem {
    LinearConvexProblem {
        name: "line".into(),
        dims: Dims {
            d: 1,
            d1: usize::from(noisy),
            d2: 1,
        },
        drift: Matrix::scaled_identity(1, -0.3),
        control_gain: Matrix::identity(1),
        noise_gain: noisy.then(|| Matrix::scaled_identity(1, 0.4)),
        step: 0.1,
        horizon: 1.0,
        control_radius: 0.8,
        control_cost: 0.4,
        state_cost: ConvexQuadratic::new(Matrix::scaled_identity(1, 0.5), vec![0.2], 0.1),
        terminal_cost: ConvexQuadratic::new(Matrix::scaled_identity(1, 2.0), vec![-1.0], 1.0),
        noise: if noisy {
            NoiseModel::RademacherProduct { dim: 1 }
        } else {
            NoiseModel::None
        },
        initial: InitialLaw::Dirac { x0: vec![1.5] },
    }
}

fn cut_validity() -> Outcome {
    let mut worst = f64::INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for noisy in [false, true] {
        let problem = line_problem(noisy);
        let config = SolverConfig {
            argmin: ArgminMode::Grid { points_per_axis: 7 },
            ..hamiltonian(15)
        };
        let mut solver = Solver::new(&problem, config).map_err(|e| e.to_string())?;
        for _ in 0..15 {
            solver.iterate().map_err(|e| e.to_string())?;
        }
        let stack = solver.stack();
        let n = problem.steps();
        for j in 0..n {
            for cut in stack.stage(j).cuts() {
                // the continuation the cut was computed against
                let mut next = StageCuts::new(j + 1, 1, stack.stage(j + 1).floor());
                for c in stack.stage(j + 1).cuts().iter().filter(|c| c.iteration_tag <= cut.iteration_tag) {
                    next.add_cut(c.clone()).unwrap();
                }
                for x in probes(&mut rng, &[1.5], 3.0, 500 / n + 1) {
                    worst = worst.min(bellman_image(&problem, j, &next, &x) - cut.eval(&x));
                }
            }
        }
    }
    check(worst >= -1e-7, format!("minimum slack {worst:.2e}"))
}

fn oracle_agreement() -> Outcome {
    let mut problem = presets::example_6_1_dim(1, vec![3.0], 0.01, 0.0);
    problem.name = "radial line".into();
    let out = run(&problem, &hamiltonian(50), &deterministic_eval()).map_err(|e| e.to_string())?;
    let lower = out.records.last().unwrap().lower_bound;
    let spec = GridSpec {
        lo: vec![2.5],
        hi: vec![3.5],
        points_per_axis: 2001,
        control_points: 201,
    };
    let table = grid_value_iteration(&problem, &spec).map_err(|e| e.to_string())?;
    let grid = table.value(0, &[3.0]).map_err(|e| e.to_string())?;
    let exact = radial_oracle(3.0, presets::HORIZON, 1.0, 0.0);
    check(
        (lower - grid).abs() <= 1e-2 && (grid - exact).abs() <= 1e-2,
        format!("solver {lower:.5}, grid {grid:.5}, closed form {exact:.5}"),
    )
}

fn stochastic_sanity() -> Outcome {
    // F(x) = x² + x after one unit Rademacher step: 0 or 2, mean 1.
    let problem = LinearConvexProblem {
        name: "toy".into(),
        dims: Dims { d: 1, d1: 1, d2: 1 },
        drift: Matrix::zeros(1, 1),
        control_gain: Matrix::zeros(1, 1),
        noise_gain: Some(Matrix::identity(1)),
        step: 1.0,
        horizon: 1.0,
        control_radius: 1.0,
        control_cost: 0.0,
        state_cost: ConvexQuadratic::zero(1),
        terminal_cost: ConvexQuadratic::new(Matrix::identity(1), vec![1.0], 0.0),
        noise: NoiseModel::RademacherProduct { dim: 1 },
        initial: InitialLaw::Dirac { x0: vec![0.0] },
    };
    let stack = SubsolutionStack::new(&problem);
    let mut hits = 0;
    for seed in 0..20 {
        let u = estimate_upper(&problem, &stack, &[0.0], 1000, seed, ArgminMode::Hamiltonian).map_err(|e| e.to_string())?;
        if (u.mean - 1.0).abs() <= 3.0 * u.stderr {
            hits += 1;
        }
    }
    check(hits >= 18, format!("{hits}/20 seeds within 3 stderr"))
}

fn determinism() -> Outcome {
    let experiment = Overrides {
        iterations: Some(20),
        mc_paths: Some(500),
        record_every: Some(5),
        ..Overrides::default()
    }
    .apply(presets::experiment("example-6.3").unwrap())
    .map_err(|e| e.to_string())?;
    let options = RunOptions {
        omit_timing: true,
        dump_cuts: false,
    };
    let mut files = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        run_experiment(&experiment, dir.path(), options).map_err(|e| e.to_string())?;
        files.push(std::fs::read(dir.path().join(CONVERGENCE_FILE)).map_err(|e| e.to_string())?);
    }
    check(files[0] == files[1], format!("{} bytes, identical: {}", files[0].len(), files[0] == files[1]))
}

fn control_convergence() -> Outcome {
    let problem = presets::example_6_1(0.01, 1.5);
    let mut solver = Solver::new(&problem, hamiltonian(50)).map_err(|e| e.to_string())?;
    let mut previous: Option<Vec<Vec<f64>>> = None;
    let mut worst = 0.0f64;
    for n in 1..=50 {
        let trajectories = solver.iterate().map_err(|e| e.to_string())?;
        let controls = trajectories[0].controls.clone();
        if n >= 46 {
            let prev = previous.as_ref().unwrap();
            for (a, b) in controls.iter().zip(prev) {
                let diff: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
                worst = worst.max(diff);
            }
        }
        previous = Some(controls);
    }
    check(worst <= 1e-6, format!("max control change over iterations 46–50: {worst:.2e}"))
}

fn scaling() -> Outcome {
    let time = |h: f64| -> Result<f64, String> { Ok(timed_run(&presets::example_6_1(h, 0.0), &hamiltonian(20), &deterministic_eval())?.3) };
    let coarse = time(0.01)?;
    let fine = time(0.001)?;
    let ratio = fine / coarse;
    check(ratio <= 15.0, format!("h=0.01 {coarse:.3}s, h=0.001 {fine:.3}s, ratio {ratio:.1}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 13] = [
        ("1 deterministic 5-d benchmark", example_6_1_table),
        ("2 deterministic 10-d coupled benchmark", example_6_2_table),
        ("3 stochastic 5-d benchmark", example_6_3_table),
        ("4 stochastic 6-d particle benchmark", example_6_4_table),
        ("5a monotone refinement", monotonicity),
        ("5b subsolution inequality", subsolution_inequality),
        ("5c cut validity", cut_validity),
        ("5d oracle agreement", oracle_agreement),
        ("5e stochastic sanity", stochastic_sanity),
        ("5f determinism", determinism),
        ("5g control convergence", control_convergence),
        ("6 scaling in the number of steps", scaling),
        ("config round trip of presets", || {
            let mut bad = Vec::new();
            for name in presets::NAMES {
                let e = presets::experiment(name).unwrap();
                if subsol_core::parse_config(&subsol_core::to_config_text(&e)).ok() != Some(e) {
                    bad.push(name);
                }
            }
            check(bad.is_empty(), format!("mismatches: {bad:?}"))
        }),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        match f() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
