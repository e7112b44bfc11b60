//! Batch driver: parse a deck, equilibrate, run the schedule and write
//! the summary, optional VTK snapshots and the run log.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Parser;

use crate::deck::{build_case, parse_file, ParseOptions, Registry};
use crate::nonlinear::{run_schedule, NewtonConfig, SimulationError, TimestepControl};
use crate::output::{FieldSnapshot, OutputItem, OutputQueue, ReportSink, SummaryLayout, VtkLayout};
use crate::units::DAY;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_CONVERGENCE: i32 = 2;

#[derive(Debug, Clone, Parser)]
#[command(name = "blackoil", version, about = "Fully implicit three-phase black-oil reservoir simulator")]
pub struct Args {
    /// Input deck.
    pub deck: PathBuf,
    /// Mass-balance tolerance, as a reservoir-average saturation error.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance_mb: f64,
    /// Largest allowed local (per-cell) residual.
    #[arg(long, default_value_t = 1e-2)]
    pub tolerance_cnv: f64,
    /// Relative tolerance of the well equations.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance_wells: f64,
    /// Newton iterations before the time step is cut.
    #[arg(long, default_value_t = 15)]
    pub max_newton: usize,
    /// Largest saturation change per Newton iteration.
    #[arg(long, default_value_t = 0.2)]
    pub ds_max: f64,
    /// Largest relative pressure change per Newton iteration.
    #[arg(long, default_value_t = 0.25)]
    pub dp_max_rel: f64,
    /// First time step, days.
    #[arg(long, default_value_t = 1.0)]
    pub dt_init: f64,
    /// Smallest time step before the run aborts, days.
    #[arg(long, default_value_t = 1e-3)]
    pub dt_min: f64,
    /// Largest time step, days.
    #[arg(long, default_value_t = 365.0)]
    pub dt_max: f64,
    /// Directory for the summary, log and snapshots.
    #[arg(long, default_value = "output")]
    pub output_dir: PathBuf,
    /// Write a VTK snapshot of the cell fields at every report step.
    #[arg(long)]
    pub vtk: bool,
    /// Skip unknown keywords with a warning.
    #[arg(long)]
    pub lenient: bool,
    /// Write output on the stepping thread instead of a background thread.
    #[arg(long)]
    pub sync_output: bool,
}

impl Args {
    pub fn newton(&self) -> NewtonConfig {
        NewtonConfig {
            tol_mb: self.tolerance_mb,
            tol_cnv: self.tolerance_cnv,
            tol_wells: self.tolerance_wells,
            max_iterations: self.max_newton,
            ds_max: self.ds_max,
            dp_max_rel: self.dp_max_rel,
            ..NewtonConfig::default()
        }
    }

    pub fn steps(&self) -> TimestepControl {
        TimestepControl {
            dt_init: self.dt_init * DAY,
            dt_min: self.dt_min * DAY,
            dt_max: self.dt_max * DAY,
            ..TimestepControl::default()
        }
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Args::try_parse_from(args) {
        Ok(a) => run(&a),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}

fn case_name(deck: &Path) -> String {
    deck.file_stem()
        .map_or_else(|| "CASE".to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn run(args: &Args) -> i32 {
    let registry = Registry::bundled();
    let parsed = match parse_file(&args.deck, &registry, ParseOptions { lenient: args.lenient }) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    for w in &parsed.warnings {
        eprintln!("{w}");
    }
    let case = match build_case(&parsed.deck, &registry) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    let initial = match case.initial_state() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: initialization: {e}", args.deck.display());
            return EXIT_INPUT;
        }
    };
    let newton = args.newton();
    let steps = args.steps();
    if let Err(e) = newton.validate().and_then(|_| steps.validate()) {
        eprintln!("error: {e}");
        return EXIT_INPUT;
    }

    let base = case_name(&args.deck);
    let layout = SummaryLayout::new(case.summary.clone(), case.units);
    let vtk = args.vtk.then(|| VtkLayout::new(&case.grid_spec, &case.reservoir, case.units));
    let sink = match ReportSink::create(&args.output_dir, &base, layout, vtk.clone()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", args.output_dir.display());
            return EXIT_INPUT;
        }
    };
    let mut queue = if args.sync_output {
        OutputQueue::sync(sink)
    } else {
        OutputQueue::background(sink)
    };

    log::info!("running {} with {} report steps", args.deck.display(), case.schedule.len());
    let reservoir = &case.reservoir;
    let mut on_report = |rec: &crate::nonlinear::ReportRecord| {
        let snapshot = vtk.as_ref().map(|l| FieldSnapshot::from_record(reservoir, l, rec));
        queue.push(OutputItem {
            record: rec.clone(),
            snapshot,
        });
    };
    let outcome = run_schedule(reservoir, initial, &case.schedule, &newton, &steps, &mut on_report);
    let output = queue.finish();

    let (results, failure, code) = match outcome {
        Ok(r) => (r, None, EXIT_OK),
        Err(e) => {
            let code = match e {
                SimulationError::Config(_) => EXIT_INPUT,
                _ => EXIT_CONVERGENCE,
            };
            eprintln!("error: {}: {e}", args.deck.display());
            (Default::default(), Some(e.to_string()), code)
        }
    };
    let prt = args.output_dir.join(format!("{base}.PRT"));
    let written = File::create(&prt).and_then(|f| {
        let mut w = BufWriter::new(f);
        crate::output::write_prt(&mut w, &case, &results, failure.as_deref())?;
        w.flush()
    });
    for (what, r) in [("summary", output), ("log", written)] {
        if let Err(e) = r {
            eprintln!("error: writing {what} in {}: {e}", args.output_dir.display());
            if code == EXIT_OK {
                return EXIT_INPUT;
            }
        }
    }
    code
}
