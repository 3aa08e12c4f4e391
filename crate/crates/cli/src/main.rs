use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use subsol_core::config::{parse_config, to_config_text, ConfigError, Experiment, Overrides};
use subsol_core::experiment::{gap_table, run_experiment, ExperimentError, RunOptions};
use subsol_core::oracle::{self, GridSpec, OracleError};
use subsol_core::{presets, ArgminMode, Matrix};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_ORACLE: u8 = 4;
const EXIT_IO: u8 = 1;

#[derive(Parser)]
#[command(name = "subsol", version, about = "Max-of-hyperplanes subsolutions for linear-convex control problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the solver and write convergence.csv and summary.json
    Run(RunArgs),
    /// Reference values for small or radially symmetric instances
    Oracle(OracleArgs),
    /// List the built-in benchmark presets
    Presets {
        /// Print the named preset as a config file instead
        #[arg(long, value_name = "NAME")]
        emit: Option<String>,
    },
}

#[derive(Args)]
struct Source {
    /// Built-in preset (see `subsol presets`)
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    /// TOML experiment file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Time step
    #[arg(long)]
    h: Option<f64>,
    /// Control cost coefficient
    #[arg(long)]
    c: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Hamiltonian,
    Grid,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trajectories per iteration
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    mc_paths: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Lattice points per control axis in grid mode
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    record_every: Option<usize>,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also write every cut to cuts.csv
    #[arg(long)]
    dump_cuts: bool,
    /// Write 0 in the wall_millis column so repeated runs are byte-identical
    #[arg(long)]
    omit_timing: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    source: Source,
    /// Closed-form value of the isotropic benchmark at the initial state
    #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
    radial: bool,
    /// Dense-grid value iteration (state and control dimension at most 2)
    #[arg(long)]
    grid: bool,
    /// Grid points per state axis
    #[arg(long, default_value_t = 401)]
    points: usize,
    /// Lattice points per control axis
    #[arg(long, default_value_t = 101)]
    controls: usize,
    /// Half width of the initial grid box around the initial state
    #[arg(long, default_value_t = 0.5)]
    half_width: f64,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, e.to_string())
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let code = match &e {
            ExperimentError::Solve(s) if s.is_numerical() => EXIT_NUMERICAL,
            ExperimentError::Solve(_) => EXIT_CONFIG,
            ExperimentError::Io { .. } => EXIT_IO,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        let code = match e {
            OracleError::Precondition(_) => EXIT_ORACLE,
            OracleError::OutsideGrid { .. } => EXIT_NUMERICAL,
        };
        Failure::new(code, e.to_string())
    }
}

fn load(source: &Source) -> Result<Experiment, Failure> {
    let base = match (&source.preset, &source.config) {
        (Some(name), _) => presets::experiment(name).ok_or_else(|| {
            Failure::new(
                EXIT_CONFIG,
                format!("unknown preset {name:?}; expected one of {}", presets::NAMES.join(", ")),
            )
        })?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::new(EXIT_CONFIG, format!("reading {}: {e}", path.display())))?;
            parse_config(&text).map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display())))?
        }
        (None, None) => unreachable!("clap requires a source"),
    };
    Ok(Overrides {
        h: source.h,
        c: source.c,
        ..Overrides::default()
    }
    .apply(base)?)
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut experiment = load(&args.source)?;
    let argmin = match (args.mode, args.grid_points) {
        (Some(Mode::Hamiltonian), _) => Some(ArgminMode::Hamiltonian),
        (Some(Mode::Grid), points) | (None, points @ Some(_)) => Some(ArgminMode::Grid {
            points_per_axis: points.unwrap_or(ArgminMode::DEFAULT_GRID_POINTS),
        }),
        (None, None) => None,
    };
    experiment = Overrides {
        iterations: args.iters,
        seed: args.seed,
        batch: args.batch,
        mc_paths: args.mc_paths,
        argmin,
        record_every: args.record_every,
        ..Overrides::default()
    }
    .apply(experiment)?;
    let options = RunOptions {
        omit_timing: args.omit_timing,
        dump_cuts: args.dump_cuts,
    };
    let out = run_experiment(&experiment, &args.out, options)?;
    print!("{}", gap_table(&out.records));
    Ok(())
}

fn run_oracle(args: OracleArgs) -> Result<(), Failure> {
    let experiment = load(&args.source)?;
    let problem = &experiment.problem;
    let x0 = problem.initial.reference_point();
    if args.radial {
        if !oracle::is_radial_instance(problem) {
            return Err(Failure::new(
                EXIT_ORACLE,
                "radial oracle needs A = 0, B = I, no running state cost, F = 1 + |x|^2, no noise and a fixed initial state",
            ));
        }
        let norm = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let value = oracle::radial_oracle(norm, problem.horizon, problem.control_radius, problem.control_cost);
        println!("{value}");
        return Ok(());
    }
    let spec = GridSpec {
        lo: x0.iter().map(|v| v - args.half_width).collect(),
        hi: x0.iter().map(|v| v + args.half_width).collect(),
        points_per_axis: args.points,
        control_points: args.controls,
    };
    let table = oracle::grid_value_iteration(problem, &spec)?;
    println!("{}", table.value(0, &x0)?);
    Ok(())
}

fn format_matrix(out: &mut String, label: &str, m: &Matrix) {
    let _ = writeln!(out, "  {label} ({}x{}):", m.rows(), m.cols());
    for row in m.to_rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:6.2}")).collect();
        let _ = writeln!(out, "    [{}]", cells.join(" "));
    }
}

fn list_presets() -> String {
    let mut out = String::new();
    for name in presets::NAMES {
        let e = presets::experiment(name).expect("listed preset exists");
        let p = &e.problem;
        let _ = writeln!(
            out,
            "{name}: d={} d1={} d2={} T={} h={} r={} c={} iterations={} mc_paths={}",
            p.dims.d,
            p.dims.d1,
            p.dims.d2,
            p.horizon,
            p.step,
            p.control_radius,
            p.control_cost,
            e.solver.iterations,
            e.eval.mc_paths
        );
        format_matrix(&mut out, "A", &p.drift);
        format_matrix(&mut out, "B", &p.control_gain);
        if let Some(c) = &p.noise_gain {
            format_matrix(&mut out, "C", c);
        }
        let x0: Vec<String> = p.initial.reference_point().iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "  x0: ({})", x0.join(", "));
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Oracle(args) => run_oracle(args),
        Command::Presets { emit: None } => {
            print!("{}", list_presets());
            Ok(())
        }
        Command::Presets { emit: Some(name) } => match presets::experiment(&name) {
            Some(e) => {
                print!("{}", to_config_text(&e));
                Ok(())
            }
            None => Err(Failure::new(EXIT_CONFIG, format!("unknown preset {name:?}"))),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
