//! Summary CSV, legacy VTK snapshots and the text run log.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;

use crate::deck::case::{SimCase, SummaryKind, SummaryVector};
use crate::grid::CartesianSpec;
use crate::model::Reservoir;
use crate::nonlinear::{ReportRecord, RunResults, WellReport};
use crate::units::{Dimension, UnitSystem};
use crate::wells::ControlMode;

/// Deterministic shortest round-trip formatting.
pub fn format_value(v: f64) -> String {
    format!("{v:e}")
}

/// Header names and per-report values of the requested summary vectors.
#[derive(Debug, Clone)]
pub struct SummaryLayout {
    pub vectors: Vec<SummaryVector>,
    pub units: UnitSystem,
}

impl SummaryLayout {
    pub fn new(vectors: Vec<SummaryVector>, units: UnitSystem) -> Self {
        Self { vectors, units }
    }

    pub fn header(&self) -> Vec<String> {
        std::iter::once("TIME".to_string())
            .chain(self.vectors.iter().map(|v| v.to_string()))
            .collect()
    }

    /// Time in days followed by every vector in deck units.
    pub fn row(&self, rec: &ReportRecord) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.vectors.len() + 1);
        row.push(self.units.from_si(Dimension::Time, rec.time));
        for v in &self.vectors {
            let si = match &v.well {
                Some(name) => rec
                    .wells
                    .iter()
                    .find(|w| &w.name == name)
                    .map_or(0.0, |w| well_value(v.kind, w)),
                None => match v.kind {
                    SummaryKind::Fpr => rec.field_pressure,
                    SummaryKind::Fopr => rec.wells.iter().map(|w| w.production()[1]).sum(),
                    _ => 0.0,
                },
            };
            row.push(self.units.from_si(v.kind.dimension(), si));
        }
        row
    }
}

fn well_value(kind: SummaryKind, w: &WellReport) -> f64 {
    match kind {
        SummaryKind::Wbhp => w.bhp,
        SummaryKind::Wopr => w.production()[1],
        SummaryKind::Wwpr => w.production()[0],
        SummaryKind::Wgpr => w.production()[2],
        SummaryKind::Wgor => w.gas_oil_ratio(),
        SummaryKind::Wwir => w.injection()[0],
        SummaryKind::Wgir => w.injection()[2],
        SummaryKind::Fopr | SummaryKind::Fpr => 0.0,
    }
}

/// CSV summary file, flushed after every row.
pub struct SummaryWriter<W: Write> {
    layout: SummaryLayout,
    csv: csv::Writer<W>,
}

impl<W: Write> SummaryWriter<W> {
    pub fn new(layout: SummaryLayout, out: W) -> io::Result<Self> {
        let mut csv = csv::Writer::from_writer(out);
        csv.write_record(layout.header())?;
        csv.flush()?;
        Ok(Self { layout, csv })
    }

    /// Appends one row; the initial state (index 0) is skipped.
    pub fn append(&mut self, rec: &ReportRecord) -> io::Result<()> {
        if rec.index == 0 {
            return Ok(());
        }
        let row = self.layout.row(rec);
        self.csv.write_record(row.iter().map(|v| format_value(*v)))?;
        self.csv.flush()
    }

    pub fn into_inner(self) -> io::Result<W> {
        self.csv.into_inner().map_err(|e| e.into_error())
    }
}

/// Axes of a rectilinear grid plus the active-cell map.
#[derive(Debug, Clone)]
pub struct VtkLayout {
    pub dims: [usize; 3],
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Elevation (negative depth), decreasing with k.
    pub z: Vec<f64>,
    /// Global index of each active cell.
    pub active_globals: Vec<usize>,
    pub units: UnitSystem,
}

impl VtkLayout {
    pub fn new(spec: &CartesianSpec, reservoir: &Reservoir, units: UnitSystem) -> Self {
        let [nx, ny, nz] = spec.dims;
        let g = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
        let axis = |n: usize, start: f64, size: &dyn Fn(usize) -> f64| {
            let mut v = vec![start];
            for i in 0..n {
                v.push(v[i] + size(i));
            }
            v
        };
        let len = |d: Dimension, v: f64| units.from_si(d, v);
        let x = axis(nx, 0.0, &|i| len(Dimension::Length, spec.dx[g(i, 0, 0)]));
        let y = axis(ny, 0.0, &|j| len(Dimension::Length, spec.dy[g(0, j, 0)]));
        let top = len(Dimension::Length, spec.tops[0]);
        let z = axis(nz, top, &|k| len(Dimension::Length, spec.dz[g(0, 0, k)]))
            .into_iter()
            .map(|d| -d)
            .collect();
        Self {
            dims: spec.dims,
            x,
            y,
            z,
            active_globals: reservoir.grid.cells().iter().map(|c| c.global).collect(),
            units,
        }
    }
}

/// Cell fields of one report step in output units, one value per global
/// cell; inactive cells hold zero.
#[derive(Debug, Clone)]
pub struct FieldSnapshot {
    pub index: usize,
    pub fields: Vec<(&'static str, Vec<f64>)>,
}

impl FieldSnapshot {
    pub fn from_record(reservoir: &Reservoir, layout: &VtkLayout, rec: &ReportRecord) -> Self {
        let n = layout.dims.iter().product();
        let names = ["PRESSURE", "SWAT", "SGAS", "SOIL", "RS", "ACTIVE"];
        let mut fields: Vec<(&'static str, Vec<f64>)> = names.iter().map(|&s| (s, vec![0.0; n])).collect();
        for (c, pv) in rec.cells.iter().enumerate() {
            let g = layout.active_globals[c];
            let s = reservoir.cell_values(*pv);
            let values = [
                layout.units.from_si(Dimension::Pressure, pv.po),
                s.saturation[0],
                s.saturation[2],
                s.saturation[1],
                layout.units.from_si(Dimension::GasDissolutionFactor, s.rgo),
                1.0,
            ];
            for (f, v) in fields.iter_mut().zip(values) {
                f.1[g] = v;
            }
        }
        Self {
            index: rec.index,
            fields,
        }
    }
}

/// Legacy ASCII VTK text of one snapshot.
pub fn vtk_string(layout: &VtkLayout, snap: &FieldSnapshot, title: &str) -> String {
    let mut s = String::new();
    let [nx, ny, nz] = layout.dims;
    s.push_str("# vtk DataFile Version 3.0\n");
    s.push_str(&format!("{title} report {}\n", snap.index));
    s.push_str("ASCII\nDATASET RECTILINEAR_GRID\n");
    s.push_str(&format!("DIMENSIONS {} {} {}\n", nx + 1, ny + 1, nz + 1));
    for (name, axis) in [("X", &layout.x), ("Y", &layout.y), ("Z", &layout.z)] {
        s.push_str(&format!("{name}_COORDINATES {} double\n", axis.len()));
        push_values(&mut s, axis);
    }
    s.push_str(&format!("CELL_DATA {}\n", nx * ny * nz));
    for (name, values) in &snap.fields {
        s.push_str(&format!("SCALARS {name} double 1\nLOOKUP_TABLE default\n"));
        push_values(&mut s, values);
    }
    s
}

fn push_values(s: &mut String, values: &[f64]) {
    for chunk in values.chunks(6) {
        let line: Vec<String> = chunk.iter().map(|v| format_value(*v)).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
}

pub fn vtk_file_name(base: &str, index: usize) -> String {
    format!("{base}_{index:04}.vtk")
}

pub fn write_vtk(dir: &Path, base: &str, layout: &VtkLayout, snap: &FieldSnapshot) -> io::Result<PathBuf> {
    let path = dir.join(vtk_file_name(base, snap.index));
    std::fs::write(&path, vtk_string(layout, snap, base))?;
    Ok(path)
}

/// Text report of a run: per-substep telemetry, control events and the
/// final material balance.
pub fn write_prt(out: &mut dyn Write, case: &SimCase, results: &RunResults, failure: Option<&str>) -> io::Result<()> {
    let u = case.units;
    writeln!(out, "RUN LOG")?;
    writeln!(
        out,
        "grid {:?}, {} active cells, {} report steps, units {}",
        case.reservoir.grid.dims(),
        case.reservoir.num_cells(),
        case.schedule.len(),
        u
    )?;
    writeln!(out)?;
    writeln!(
        out,
        "{:>6} {:>12} {:>12} {:>4} {:>6} {:>7} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}  status",
        "report", "time[d]", "dt[d]", "nwt", "lin", "switch", "MB_w", "MB_o", "MB_g", "CNV_w", "CNV_o", "CNV_g"
    )?;
    for s in &results.substeps {
        let m = &s.step.metrics;
        writeln!(
            out,
            "{:>6} {:>12.6} {:>12.6} {:>4} {:>6} {:>7} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e}  {}",
            s.report,
            s.time / crate::units::DAY,
            s.dt / crate::units::DAY,
            s.step.newton_iterations,
            s.step.linear_iterations,
            s.step.variable_switches.to_sg + s.step.variable_switches.to_rgo,
            m.mb[0],
            m.mb[1],
            m.mb[2],
            m.cnv[0],
            m.cnv[1],
            m.cnv[2],
            match (&s.step.failure, s.step.converged) {
                (Some(f), _) => format!("cut: {f}"),
                (None, true) => "ok".into(),
                (None, false) => "cut".into(),
            }
        )?;
    }
    writeln!(out)?;
    writeln!(out, "control events")?;
    for (t, e) in &results.control_events {
        let mode = |m: ControlMode| match m {
            ControlMode::Bhp => "BHP",
            ControlMode::Rate => "RATE",
        };
        writeln!(
            out,
            "  t = {:.6} d: well {} {} -> {}",
            t / crate::units::DAY,
            e.well,
            mode(e.switch.from),
            mode(e.switch.to)
        )?;
    }
    let sw = &results.variable_switches;
    writeln!(out, "variable switches: Rgo->Sg {}, Sg->Rgo {}", sw.to_sg, sw.to_rgo)?;
    let newton: usize = results.substeps.iter().map(|s| s.step.newton_iterations).sum();
    let linear: usize = results.substeps.iter().map(|s| s.step.linear_iterations).sum();
    writeln!(out, "total substeps {}, newton {newton}, linear {linear}", results.substeps.len())?;
    if !results.reports.is_empty() {
        let mb = results.material_balance_error(&case.reservoir);
        writeln!(out, "material balance error (w, o, g): {:.3e} {:.3e} {:.3e}", mb[0], mb[1], mb[2])?;
    }
    match failure {
        Some(f) => writeln!(out, "ABORTED: {f}")?,
        None => writeln!(out, "completed")?,
    }
    Ok(())
}

/// Where report output goes.
pub struct ReportSink {
    summary: SummaryWriter<BufWriter<File>>,
    vtk: Option<(PathBuf, String, VtkLayout)>,
}

impl ReportSink {
    pub fn create(dir: &Path, base: &str, layout: SummaryLayout, vtk: Option<VtkLayout>) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let file = File::create(dir.join(format!("{base}.csv")))?;
        Ok(Self {
            summary: SummaryWriter::new(layout, BufWriter::new(file))?,
            vtk: vtk.map(|l| (dir.to_path_buf(), base.to_string(), l)),
        })
    }

    fn write(&mut self, item: &OutputItem) -> io::Result<()> {
        self.summary.append(&item.record)?;
        if let (Some((dir, base, layout)), Some(snap)) = (&self.vtk, &item.snapshot) {
            write_vtk(dir, base, layout, snap)?;
        }
        Ok(())
    }

    fn finish(self) -> io::Result<()> {
        self.summary.into_inner()?.flush()
    }
}

/// One report handed to the writer; owned and never mutated afterwards.
pub struct OutputItem {
    pub record: ReportRecord,
    pub snapshot: Option<FieldSnapshot>,
}

/// Report writer running either inline or on a dedicated thread.
pub enum OutputQueue {
    Sync(ReportSink, Option<io::Error>),
    Background {
        sender: mpsc::Sender<OutputItem>,
        worker: thread::JoinHandle<io::Result<()>>,
    },
}

impl OutputQueue {
    pub fn sync(sink: ReportSink) -> Self {
        OutputQueue::Sync(sink, None)
    }

    pub fn background(mut sink: ReportSink) -> Self {
        let (sender, rx) = mpsc::channel::<OutputItem>();
        let worker = thread::spawn(move || {
            let mut first_error = None;
            for item in rx {
                if first_error.is_none() {
                    if let Err(e) = sink.write(&item) {
                        first_error = Some(e);
                    }
                }
            }
            let done = sink.finish();
            match first_error {
                Some(e) => Err(e),
                None => done,
            }
        });
        OutputQueue::Background { sender, worker }
    }

    pub fn push(&mut self, item: OutputItem) {
        match self {
            OutputQueue::Sync(sink, err) => {
                if err.is_none() {
                    if let Err(e) = sink.write(&item) {
                        *err = Some(e);
                    }
                }
            }
            OutputQueue::Background { sender, .. } => {
                // a closed channel means the worker died; its error surfaces in finish
                let _ = sender.send(item);
            }
        }
    }

    /// Waits for all queued output and reports the first I/O error.
    pub fn finish(self) -> io::Result<()> {
        match self {
            OutputQueue::Sync(sink, err) => {
                let done = sink.finish();
                match err {
                    Some(e) => Err(e),
                    None => done,
                }
            }
            OutputQueue::Background { sender, worker } => {
                drop(sender);
                worker
                    .join()
                    .unwrap_or_else(|_| Err(io::Error::other("output thread panicked")))
            }
        }
    }
}
