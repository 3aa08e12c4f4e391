//! Runs an experiment and writes its artifacts to a directory.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::bellman::ArgminMode;
use crate::bounds::{self, ConvergenceRecord};
use crate::config::Experiment;
use crate::report;
use crate::solver::{self, SolveError};

pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const CUTS_FILE: &str = "cuts.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Write `wall_millis` as 0 so repeated runs produce identical files.
    pub omit_timing: bool,
    pub dump_cuts: bool,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub name: String,
    pub dims: [usize; 3],
    pub horizon: f64,
    pub step: f64,
    pub control_cost: f64,
    pub argmin: String,
    pub iterations: usize,
    pub batch: usize,
    pub seed: u64,
    pub mc_paths: usize,
    pub reference_point: Vec<f64>,
    pub final_record: ConvergenceRecord,
}

pub struct ExperimentOutput {
    pub records: Vec<ConvergenceRecord>,
    pub summary: Summary,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), ExperimentError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn run_experiment(experiment: &Experiment, out_dir: &Path, options: RunOptions) -> Result<ExperimentOutput, ExperimentError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let problem = &experiment.problem;
    let out = solver::run(problem, &experiment.solver, &experiment.eval)?;
    let mut records = out.records;
    if options.omit_timing {
        for r in &mut records {
            r.wall_millis = 0;
        }
    }

    write_file(&out_dir.join(CONVERGENCE_FILE), |w| report::write_convergence_csv(w, &records))?;
    if options.dump_cuts {
        write_file(&out_dir.join(CUTS_FILE), |w| out.stack.write_cuts_csv(w))?;
    }

    let summary = Summary {
        name: problem.name.clone(),
        dims: [problem.dims.d, problem.dims.d1, problem.dims.d2],
        horizon: problem.horizon,
        step: problem.step,
        control_cost: problem.control_cost,
        argmin: match experiment.solver.argmin {
            ArgminMode::Hamiltonian => "hamiltonian".into(),
            ArgminMode::Grid { points_per_axis } => format!("grid({points_per_axis})"),
        },
        iterations: experiment.solver.iterations,
        batch: experiment.solver.batch,
        seed: experiment.solver.seed,
        mc_paths: experiment.eval.mc_paths,
        reference_point: problem.initial.reference_point(),
        final_record: *records.last().expect("at least one record"),
    };
    let summary_path = out_dir.join(SUMMARY_FILE);
    write_file(&summary_path, |w| {
        serde_json::to_writer_pretty(&mut *w, &summary).map_err(io::Error::from)?;
        writeln!(w)
    })?;
    Ok(ExperimentOutput { records, summary })
}

/// Renders the gap table for `records`.
pub fn gap_table(records: &[ConvergenceRecord]) -> String {
    let mut buf = Vec::new();
    report::write_gap_table(&mut buf, &bounds::gap_report(records)).expect("writing to memory");
    String::from_utf8(buf).expect("table is ascii")
}
