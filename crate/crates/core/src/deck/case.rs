use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

use super::parser::{Deck, Item, Keyword, Location, Record};
use super::schema::Registry;
use crate::equil::{equilibrate, EquilError, EquilRecord};
use crate::grid::{CartesianSpec, Grid, RockProps};
use crate::model::{PrimaryVariables, Reservoir};
use crate::nonlinear::{ReportStep, ScheduledWell};
use crate::pvt::{FluidSystem, LiveOilPvt, LiveOilRecord, OilPvt, SurfaceDensities, TabulatedPvt, WaterPvt};
use crate::satfunc::SatTables;
use crate::table::{Extrapolation, Table1D};
use crate::units::{Dimension, UnitSystem, PSI};
use crate::wells::{ControlMode, InjectedFluid, RateKind, WellConnection, WellControl, WellKind, WellSpec};

/// Producer BHP limit when WCONPROD leaves it out: one atmosphere.
const DEFAULT_PRODUCER_BHP: f64 = 101_325.0;
/// Injector BHP limit when WCONINJE leaves it out.
const DEFAULT_INJECTOR_BHP: f64 = 1.0e5 * PSI;

const SECTIONS: [&str; 8] = ["RUNSPEC", "GRID", "EDIT", "PROPS", "REGIONS", "SOLUTION", "SUMMARY", "SCHEDULE"];
const REQUIRED_SECTIONS: [&str; 5] = ["RUNSPEC", "GRID", "PROPS", "SOLUTION", "SCHEDULE"];

/// A semantic error in a deck, naming the keyword and record.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct CaseError {
    pub location: Location,
    pub keyword: String,
    /// 1-based record number.
    pub record: Option<usize>,
    pub message: String,
}

impl fmt::Display for CaseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.keyword)?;
        if let Some(r) = self.record {
            write!(f, " record {r}")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SummaryKind {
    Wbhp,
    Wopr,
    Wwpr,
    Wgpr,
    Wgor,
    Wwir,
    Wgir,
    Fopr,
    Fpr,
}

impl SummaryKind {
    pub fn from_keyword(name: &str) -> Option<Self> {
        use SummaryKind::*;
        Some(match name {
            "WBHP" => Wbhp,
            "WOPR" => Wopr,
            "WWPR" => Wwpr,
            "WGPR" => Wgpr,
            "WGOR" => Wgor,
            "WWIR" => Wwir,
            "WGIR" => Wgir,
            "FOPR" => Fopr,
            "FPR" => Fpr,
            _ => return None,
        })
    }

    pub fn keyword(self) -> &'static str {
        use SummaryKind::*;
        match self {
            Wbhp => "WBHP",
            Wopr => "WOPR",
            Wwpr => "WWPR",
            Wgpr => "WGPR",
            Wgor => "WGOR",
            Wwir => "WWIR",
            Wgir => "WGIR",
            Fopr => "FOPR",
            Fpr => "FPR",
        }
    }

    pub fn dimension(self) -> Dimension {
        use SummaryKind::*;
        match self {
            Wbhp | Fpr => Dimension::Pressure,
            Wopr | Wwpr | Wwir | Fopr => Dimension::LiquidSurfaceRate,
            Wgpr | Wgir => Dimension::GasSurfaceRate,
            Wgor => Dimension::GasDissolutionFactor,
        }
    }

    pub fn is_well(self) -> bool {
        !matches!(self, SummaryKind::Fopr | SummaryKind::Fpr)
    }
}

/// One requested summary time series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryVector {
    pub kind: SummaryKind,
    pub well: Option<String>,
}

impl fmt::Display for SummaryVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.well {
            Some(w) => write!(f, "{}:{}", self.kind.keyword(), w),
            None => f.write_str(self.kind.keyword()),
        }
    }
}

/// A deck resolved into everything a run needs, in SI units.
#[derive(Debug, Clone)]
pub struct SimCase {
    pub units: UnitSystem,
    /// Day, month and year of the start date.
    pub start: (i64, String, i64),
    pub grid_spec: CartesianSpec,
    pub reservoir: Reservoir,
    pub equil: EquilRecord,
    pub rsvd: Option<Table1D>,
    pub schedule: Vec<ReportStep>,
    pub summary: Vec<SummaryVector>,
    /// Dimensions used to convert each keyword's real values.
    pub unit_audit: BTreeMap<String, Vec<Dimension>>,
}

impl SimCase {
    pub fn reservoir(&self) -> &Reservoir {
        &self.reservoir
    }

    /// Equilibrated initial primary variables.
    pub fn initial_state(&self) -> Result<Vec<PrimaryVariables>, EquilError> {
        equilibrate(&self.reservoir, &self.equil, self.rsvd.as_ref())
    }

    /// Names of all wells appearing in the schedule, in order of first use.
    pub fn well_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for w in self.schedule.iter().flat_map(|s| &s.wells) {
            if !names.contains(&w.spec.name) {
                names.push(w.spec.name.clone());
            }
        }
        names
    }

    /// Human-readable description of the case with SI values.
    pub fn summary_dump(&self) -> String {
        let mut s = String::new();
        let g = &self.reservoir.grid;
        let [nx, ny, nz] = g.dims();
        let _ = writeln!(s, "UNITS {}", self.units);
        let _ = writeln!(s, "START {} {} {}", self.start.0, self.start.1, self.start.2);
        let _ = writeln!(s, "GRID {nx} {ny} {nz} active={} connections={}", g.num_cells(), g.connections().len());
        let pv: f64 = self.reservoir.pore_volumes().iter().sum();
        let _ = writeln!(s, "PORE_VOLUME {pv:.9e}");
        let t: f64 = g.connections().iter().map(|c| c.trans).fold(0.0, |a, b| a + b);
        let _ = writeln!(s, "TRANS_SUM {t:.9e}");
        let _ = writeln!(s, "OIL {}", if self.reservoir.has_dissolved_gas() { "LIVE" } else { "DEAD" });
        let d = &self.reservoir.fluid.densities;
        let _ = writeln!(s, "DENSITY {:.9e} {:.9e} {:.9e}", d.oil, d.water, d.gas);
        let r = &self.reservoir.rock;
        let _ = writeln!(s, "ROCK {:.9e} {:.9e}", r.reference_pressure, r.compressibility);
        let e = &self.equil;
        let _ = writeln!(
            s,
            "EQUIL {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e}",
            e.datum_depth, e.datum_pressure, e.woc_depth, e.woc_pc, e.goc_depth, e.goc_pc
        );
        let _ = writeln!(s, "RSVD {}", if self.rsvd.is_some() { "yes" } else { "no" });
        for (n, step) in self.schedule.iter().enumerate() {
            let _ = writeln!(s, "REPORT {} length={:.9e}", n + 1, step.length);
            for w in &step.wells {
                let c = &w.spec.control;
                let kind = match w.spec.kind {
                    WellKind::Producer => "PRODUCER".to_string(),
                    WellKind::Injector(f) => format!("INJECTOR {f:?}").to_uppercase(),
                };
                let _ = writeln!(
                    s,
                    "  WELL {} {} {} mode={:?} rate={:?} target={:.9e} bhp={:.9e} ref_depth={:.9e}",
                    w.spec.name,
                    if w.open { "OPEN" } else { "SHUT" },
                    kind,
                    c.mode,
                    c.rate_kind,
                    c.rate_target,
                    c.bhp_limit,
                    w.spec.ref_depth
                );
                for conn in &w.spec.connections {
                    let _ = writeln!(
                        s,
                        "    CONN cell={} trans={:.9e} depth={:.9e}",
                        conn.cell, conn.trans, conn.depth
                    );
                }
            }
        }
        let names: Vec<String> = self.summary.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "SUMMARY {}", names.join(" "));
        s
    }
}

struct Ctx<'a> {
    kw: &'a Keyword,
    units: UnitSystem,
}

impl Ctx<'_> {
    fn err(&self, record: Option<usize>, message: impl Into<String>) -> CaseError {
        CaseError {
            location: record
                .and_then(|r| self.kw.records.get(r - 1))
                .map_or_else(|| self.kw.location.clone(), |r| r.location.clone()),
            keyword: self.kw.name.clone(),
            record,
            message: message.into(),
        }
    }

    fn record(&self, r: usize) -> Result<&Record, CaseError> {
        self.kw.records.get(r).ok_or_else(|| self.err(None, "missing record"))
    }

    fn real(&self, r: usize, idx: usize, name: &str, dim: Dimension) -> Result<f64, CaseError> {
        let item = self.record(r)?.items.get(idx).and_then(Item::as_f64);
        item.map(|v| self.units.to_si(dim, v))
            .ok_or_else(|| self.err(Some(r + 1), format!("item {name} is required")))
    }

    fn opt_real(&self, r: usize, idx: usize, dim: Dimension) -> Option<f64> {
        self.kw.records[r].items.get(idx).and_then(Item::as_f64).map(|v| self.units.to_si(dim, v))
    }

    fn int(&self, r: usize, idx: usize, name: &str) -> Result<i64, CaseError> {
        self.record(r)?
            .items
            .get(idx)
            .and_then(Item::as_int)
            .ok_or_else(|| self.err(Some(r + 1), format!("item {name} is required")))
    }

    fn string(&self, r: usize, idx: usize, name: &str) -> Result<String, CaseError> {
        self.record(r)?
            .items
            .get(idx)
            .and_then(Item::as_str)
            .map(|s| s.trim().to_string())
            .ok_or_else(|| self.err(Some(r + 1), format!("item {name} is required")))
    }

    /// All data values of a record converted with cycling column dimensions.
    fn reals(&self, r: usize, skip: usize, columns: &[Dimension]) -> Result<Vec<f64>, CaseError> {
        let rec = self.record(r)?;
        rec.items[skip..]
            .iter()
            .enumerate()
            .map(|(k, it)| {
                let v = it
                    .as_f64()
                    .ok_or_else(|| self.err(Some(r + 1), format!("value {} is defaulted", skip + k + 1)))?;
                Ok(self.units.to_si(columns[k % columns.len()], v))
            })
            .collect()
    }

    fn rows<const N: usize>(&self, r: usize, skip: usize, columns: &[Dimension; N]) -> Result<Vec<[f64; N]>, CaseError> {
        let v = self.reals(r, skip, columns)?;
        if v.is_empty() || v.len() % N != 0 {
            return Err(self.err(Some(r + 1), format!("expected rows of {N} values, got {} values", v.len())));
        }
        Ok(v.chunks(N).map(|c| std::array::from_fn(|i| c[i])).collect())
    }

    fn array(&self, n: usize, dim: Dimension) -> Result<Vec<f64>, CaseError> {
        let v = self.reals(0, 0, &[dim])?;
        if v.len() != n {
            return Err(self.err(Some(1), format!("expected {n} values, got {}", v.len())));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone)]
struct WellState {
    name: String,
    head: (i64, i64),
    ref_depth: Option<f64>,
    /// `(global cell, connection)` in completion order.
    connections: Vec<(usize, WellConnection)>,
    control: Option<(WellKind, WellControl)>,
    open: bool,
}

/// Folds a stage-1 deck into a simulation case.
pub fn build_case(deck: &Deck, registry: &Registry) -> Result<SimCase, CaseError> {
    let mut section: Option<usize> = None;
    let mut seen = [false; SECTIONS.len()];
    let mut units: Option<UnitSystem> = None;
    let mut phases = (false, false, false);
    let mut disgas = false;
    let mut start = (1, "JAN".to_string(), 1983);
    let mut dims: Option<([usize; 3], &Keyword)> = None;
    let mut arrays: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut actnum: Option<Vec<bool>> = None;
    let mut nnc: Vec<(usize, usize, f64, Ctx)> = Vec::new();
    let mut pvtw = None;
    let mut pvdg = None;
    let mut pvdo = None;
    let mut pvto = None;
    let mut swof = None;
    let mut sgof = None;
    let mut rock = None;
    let mut density = None;
    let mut equil = None;
    let mut rsvd = None;
    let mut summary: Vec<SummaryVector> = Vec::new();
    let mut all_well_requests: Vec<SummaryKind> = Vec::new();
    let mut wells: Vec<WellState> = Vec::new();
    let mut schedule: Vec<ReportStep> = Vec::new();
    let mut audit: BTreeMap<String, Vec<Dimension>> = BTreeMap::new();
    let mut grid_cache: Option<(Grid, Vec<usize>)> = None;

    for kw in deck.iter() {
        let u = units.unwrap_or_default();
        let ctx = Ctx { kw, units: u };
        let schema = registry
            .get(&kw.name)
            .ok_or_else(|| ctx.err(None, "keyword is not supported"))?;
        if schema.section {
            let pos = SECTIONS
                .iter()
                .position(|s| *s == kw.name)
                .ok_or_else(|| ctx.err(None, "unknown section"))?;
            if section.is_some_and(|cur| pos <= cur) {
                return Err(ctx.err(None, "section out of order; expected RUNSPEC, GRID, EDIT, PROPS, REGIONS, SOLUTION, SUMMARY, SCHEDULE"));
            }
            if section.is_none() && pos != 0 {
                return Err(ctx.err(None, "deck must start with RUNSPEC"));
            }
            for (k, req) in SECTIONS.iter().enumerate().take(pos) {
                if !seen[k] && REQUIRED_SECTIONS.contains(req) {
                    return Err(ctx.err(None, format!("section {req} is missing")));
                }
            }
            seen[pos] = true;
            section = Some(pos);
            continue;
        }
        let Some(cur) = section else {
            return Err(ctx.err(None, "keyword before RUNSPEC"));
        };
        if !schema.allowed_in(SECTIONS[cur]) {
            return Err(ctx.err(None, format!("not allowed in section {}", SECTIONS[cur])));
        }
        let mut note = |dims: &[Dimension]| {
            audit.insert(kw.name.clone(), dims.to_vec());
        };

        match kw.name.as_str() {
            "FIELD" | "METRIC" => {
                let sys = if kw.name == "FIELD" { UnitSystem::Field } else { UnitSystem::Metric };
                if units.is_some_and(|s| s != sys) {
                    return Err(ctx.err(None, "conflicting unit systems"));
                }
                units = Some(sys);
            }
            "OIL" => phases.1 = true,
            "WATER" => phases.0 = true,
            "GAS" => phases.2 = true,
            "DISGAS" => disgas = true,
            "START" => start = (ctx.int(0, 0, "DAY")?, ctx.string(0, 1, "MONTH")?, ctx.int(0, 2, "YEAR")?),
            "DIMENS" => {
                let mut d = [0usize; 3];
                for (k, name) in ["NX", "NY", "NZ"].iter().enumerate() {
                    let v = ctx.int(0, k, name)?;
                    if v <= 0 {
                        return Err(ctx.err(Some(1), format!("{name} must be positive")));
                    }
                    d[k] = v as usize;
                }
                if d.iter().try_fold(1usize, |acc, &x| acc.checked_mul(x)).is_none_or(|n| n > 50_000_000) {
                    return Err(ctx.err(Some(1), "grid is too large"));
                }
                dims = Some((d, kw));
            }
            "DX" | "DY" | "DZ" | "TOPS" | "PERMX" | "PERMY" | "PERMZ" | "PORO" => {
                let (d, _) = dims.ok_or_else(|| ctx.err(None, "DIMENS must come first"))?;
                let n = d[0] * d[1] * d[2];
                let dim = if kw.name == "PORO" {
                    Dimension::Dimensionless
                } else if kw.name.starts_with("PERM") {
                    Dimension::Permeability
                } else {
                    Dimension::Length
                };
                let values = if kw.name == "TOPS" {
                    let v = ctx.reals(0, 0, &[dim])?;
                    if v.len() != n && v.len() != d[0] * d[1] {
                        return Err(ctx.err(Some(1), format!("expected {} or {n} values, got {}", d[0] * d[1], v.len())));
                    }
                    v
                } else {
                    ctx.array(n, dim)?
                };
                note(&[dim]);
                arrays.insert(schema_name(&kw.name), values);
            }
            "ACTNUM" => {
                let (d, _) = dims.ok_or_else(|| ctx.err(None, "DIMENS must come first"))?;
                let n = d[0] * d[1] * d[2];
                let items = &ctx.record(0)?.items;
                if items.len() != n {
                    return Err(ctx.err(Some(1), format!("expected {n} values, got {}", items.len())));
                }
                let mut act = Vec::with_capacity(n);
                for it in items {
                    match it.as_int() {
                        Some(0) => act.push(false),
                        Some(1) => act.push(true),
                        _ => return Err(ctx.err(Some(1), "values must be 0 or 1")),
                    }
                }
                actnum = Some(act);
            }
            "NNC" => {
                let (d, _) = dims.ok_or_else(|| ctx.err(None, "DIMENS must come first"))?;
                for r in 0..kw.records.len() {
                    let mut g = [0usize; 2];
                    for (side, gi) in g.iter_mut().enumerate() {
                        let ijk = [0, 1, 2].map(|a| ctx.int(r, 3 * side + a, ["I", "J", "K"][a]));
                        let ijk = [ijk[0].clone()?, ijk[1].clone()?, ijk[2].clone()?];
                        *gi = global_of(&ctx, r, d, ijk)?;
                    }
                    let t = ctx.real(r, 6, "TRAN", Dimension::Transmissibility)?;
                    nnc.push((g[0], g[1], t, Ctx { kw, units: u }));
                }
                note(&[Dimension::Transmissibility]);
            }
            "PVTW" => {
                let p = ctx.real(0, 0, "P_REF", Dimension::Pressure)?;
                let bw = ctx.real(0, 1, "BW", Dimension::WaterFvf)?;
                let cw = ctx.real(0, 2, "CW", Dimension::Compressibility)?;
                let mu = ctx.real(0, 3, "VISC", Dimension::Viscosity)?;
                let cv = ctx.real(0, 4, "VISCOSIBILITY", Dimension::Compressibility)?;
                note(&[Dimension::Pressure, Dimension::WaterFvf, Dimension::Compressibility, Dimension::Viscosity]);
                pvtw = Some(WaterPvt::new(p, bw, cw, mu, cv).map_err(|e| ctx.err(Some(1), e.to_string()))?);
            }
            "PVDG" | "PVDO" => {
                let fvf = if kw.name == "PVDG" { Dimension::GasFvf } else { Dimension::OilFvf };
                let cols = [Dimension::Pressure, fvf, Dimension::Viscosity];
                let rows = ctx.rows(0, 0, &cols)?;
                note(&cols);
                let table: &'static str = if kw.name == "PVDG" { "PVDG" } else { "PVDO" };
                let pvt = TabulatedPvt::new(table, &rows).map_err(|e| ctx.err(Some(1), e.to_string()))?;
                if kw.name == "PVDG" {
                    pvdg = Some(pvt);
                } else {
                    pvdo = Some((pvt, kw));
                }
            }
            "PVTO" => {
                let cols = [Dimension::Pressure, Dimension::OilFvf, Dimension::Viscosity];
                let mut recs = Vec::with_capacity(kw.records.len());
                for r in 0..kw.records.len() {
                    let rs = ctx.real(r, 0, "RS", Dimension::GasDissolutionFactor)?;
                    recs.push(LiveOilRecord {
                        rs,
                        rows: ctx.rows(r, 1, &cols)?,
                    });
                }
                note(&[Dimension::GasDissolutionFactor, cols[0], cols[1], cols[2]]);
                pvto = Some((LiveOilPvt::new(&recs).map_err(|e| ctx.err(None, e.to_string()))?, kw));
            }
            "SWOF" | "SGOF" => {
                let cols = [Dimension::Dimensionless, Dimension::Dimensionless, Dimension::Dimensionless, Dimension::Pressure];
                let rows = ctx.rows(0, 0, &cols)?;
                note(&cols);
                if kw.name == "SWOF" {
                    swof = Some((rows, kw));
                } else {
                    sgof = Some((rows, kw));
                }
            }
            "ROCK" => {
                rock = Some((
                    ctx.real(0, 0, "P_REF", Dimension::Pressure)?,
                    ctx.real(0, 1, "CR", Dimension::Compressibility)?,
                ));
                note(&[Dimension::Pressure, Dimension::Compressibility]);
            }
            "DENSITY" => {
                let oil = ctx.real(0, 0, "OIL", Dimension::Density)?;
                let water = ctx.real(0, 1, "WATER", Dimension::Density)?;
                let gas = ctx.real(0, 2, "GAS", Dimension::Density)?;
                if !(oil > 0.0 && water > 0.0 && gas > 0.0) {
                    return Err(ctx.err(Some(1), "densities must be positive"));
                }
                note(&[Dimension::Density]);
                density = Some(SurfaceDensities { water, oil, gas });
            }
            "EQUIL" => {
                let rec = EquilRecord {
                    datum_depth: ctx.real(0, 0, "DATUM_DEPTH", Dimension::Length)?,
                    datum_pressure: ctx.real(0, 1, "DATUM_PRESSURE", Dimension::Pressure)?,
                    woc_depth: ctx.real(0, 2, "OWC", Dimension::Length)?,
                    woc_pc: ctx.real(0, 3, "PC_OWC", Dimension::Pressure)?,
                    goc_depth: ctx.real(0, 4, "GOC", Dimension::Length)?,
                    goc_pc: ctx.real(0, 5, "PC_GOC", Dimension::Pressure)?,
                };
                if rec.goc_depth > rec.woc_depth {
                    return Err(ctx.err(Some(1), "gas-oil contact lies below the water-oil contact"));
                }
                note(&[Dimension::Length, Dimension::Pressure]);
                equil = Some(rec);
            }
            "RSVD" => {
                let cols = [Dimension::Length, Dimension::GasDissolutionFactor];
                let rows = ctx.rows(0, 0, &cols)?;
                note(&cols);
                let t = Table1D::new(
                    "RSVD",
                    rows.iter().map(|r| r[0]).collect(),
                    rows.iter().map(|r| r[1]).collect(),
                    Extrapolation::Constant,
                )
                .map_err(|e| ctx.err(Some(1), e.to_string()))?;
                rsvd = Some(t);
            }
            name if SummaryKind::from_keyword(name).is_some() => {
                let kind = SummaryKind::from_keyword(name).expect("matched");
                if !kind.is_well() {
                    push_unique(&mut summary, SummaryVector { kind, well: None });
                } else {
                    let names: Vec<String> = ctx
                        .record(0)?
                        .items
                        .iter()
                        .filter_map(|i| i.as_str().map(str::to_string))
                        .collect();
                    if names.is_empty() {
                        if !all_well_requests.contains(&kind) {
                            all_well_requests.push(kind);
                        }
                    }
                    for w in names {
                        push_unique(&mut summary, SummaryVector { kind, well: Some(w) });
                    }
                }
            }
            "WELSPECS" => {
                for r in 0..kw.records.len() {
                    let name = ctx.string(r, 0, "WELL")?;
                    let head = (ctx.int(r, 2, "I")?, ctx.int(r, 3, "J")?);
                    let ref_depth = ctx.opt_real(r, 4, Dimension::Length);
                    match wells.iter_mut().find(|w| w.name == name) {
                        Some(w) => {
                            w.head = head;
                            w.ref_depth = ref_depth;
                        }
                        None => wells.push(WellState {
                            name,
                            head,
                            ref_depth,
                            connections: Vec::new(),
                            control: None,
                            open: true,
                        }),
                    }
                }
            }
            "COMPDAT" => {
                let (d, _) = dims.ok_or_else(|| ctx.err(None, "DIMENS is missing"))?;
                if grid_cache.is_none() {
                    grid_cache = Some(build_grid(d, &arrays, &actnum, &nnc, &ctx)?);
                }
                let (grid, _) = grid_cache.as_ref().expect("built above");
                for r in 0..kw.records.len() {
                    let name = ctx.string(r, 0, "WELL")?;
                    let well = wells
                        .iter_mut()
                        .find(|w| w.name == name)
                        .ok_or_else(|| ctx.err(Some(r + 1), format!("well {name} is not defined by WELSPECS")))?;
                    let mut i = ctx.int(r, 1, "I")?;
                    let mut j = ctx.int(r, 2, "J")?;
                    if i == 0 {
                        i = well.head.0;
                    }
                    if j == 0 {
                        j = well.head.1;
                    }
                    let k1 = ctx.int(r, 3, "K1")?;
                    let k2 = ctx.int(r, 4, "K2")?;
                    if k2 < k1 {
                        return Err(ctx.err(Some(r + 1), "K2 is above K1"));
                    }
                    let status = ctx.string(r, 5, "STATUS")?.to_uppercase();
                    let open = match status.as_str() {
                        "OPEN" => true,
                        "SHUT" => false,
                        other => return Err(ctx.err(Some(r + 1), format!("unsupported connection status {other}"))),
                    };
                    let trans = if open {
                        let t = ctx.real(r, 7, "CF", Dimension::Transmissibility)?;
                        if !(t >= 0.0) {
                            return Err(ctx.err(Some(r + 1), "CF must be non-negative"));
                        }
                        t
                    } else {
                        0.0
                    };
                    for k in k1..=k2 {
                        let g = global_of(&ctx, r, d, [i, j, k])?;
                        well.connections.retain(|(c, _)| *c != g);
                        if !open {
                            continue;
                        }
                        let cell = grid
                            .active_of_global(g)
                            .ok_or_else(|| ctx.err(Some(r + 1), format!("connection ({i}, {j}, {k}) is in an inactive cell")))?;
                        well.connections.push((
                            g,
                            WellConnection {
                                cell,
                                trans,
                                depth: grid.cell(cell).depth,
                            },
                        ));
                    }
                }
                note(&[Dimension::Transmissibility]);
            }
            "WCONPROD" => {
                for r in 0..kw.records.len() {
                    let well = find_well(&ctx, r, &mut wells)?;
                    well.open = well_status(&ctx, r, 1)?;
                    let cmode = ctx.string(r, 2, "CMODE")?.to_uppercase();
                    let rate = |idx, dim| ctx.opt_real(r, idx, dim);
                    let limits = [
                        (RateKind::Oil, rate(3, Dimension::LiquidSurfaceRate)),
                        (RateKind::Water, rate(4, Dimension::LiquidSurfaceRate)),
                        (RateKind::Gas, rate(5, Dimension::GasSurfaceRate)),
                        (RateKind::Liquid, rate(6, Dimension::LiquidSurfaceRate)),
                    ];
                    let bhp = ctx.opt_real(r, 8, Dimension::Pressure).unwrap_or(DEFAULT_PRODUCER_BHP);
                    let control = match cmode.as_str() {
                        "ORAT" | "WRAT" | "GRAT" | "LRAT" => {
                            let k = ["ORAT", "WRAT", "GRAT", "LRAT"].iter().position(|m| *m == cmode).expect("matched");
                            let (rate_kind, target) = limits[k];
                            let target = target.ok_or_else(|| ctx.err(Some(r + 1), format!("{cmode} control needs a {cmode} value")))?;
                            if !(target >= 0.0) {
                                return Err(ctx.err(Some(r + 1), "rate target must be non-negative"));
                            }
                            WellControl {
                                mode: ControlMode::Rate,
                                rate_kind,
                                rate_target: target,
                                bhp_limit: bhp,
                            }
                        }
                        "BHP" => {
                            let (rate_kind, target) = limits
                                .iter()
                                .find_map(|(k, v)| v.map(|v| (*k, v)))
                                .unwrap_or((RateKind::Oil, f64::INFINITY));
                            WellControl {
                                mode: ControlMode::Bhp,
                                rate_kind,
                                rate_target: target,
                                bhp_limit: bhp,
                            }
                        }
                        other => return Err(ctx.err(Some(r + 1), format!("unsupported control mode {other}"))),
                    };
                    well.control = Some((WellKind::Producer, control));
                }
                note(&[Dimension::LiquidSurfaceRate, Dimension::GasSurfaceRate, Dimension::Pressure]);
            }
            "WCONINJE" => {
                for r in 0..kw.records.len() {
                    let ty = ctx.string(r, 1, "TYPE")?.to_uppercase();
                    let (fluid, rate_kind, dim) = match ty.as_str() {
                        "WATER" | "WAT" => (InjectedFluid::Water, RateKind::Water, Dimension::LiquidSurfaceRate),
                        "GAS" => (InjectedFluid::Gas, RateKind::Gas, Dimension::GasSurfaceRate),
                        other => return Err(ctx.err(Some(r + 1), format!("unsupported injector type {other}"))),
                    };
                    let well = find_well(&ctx, r, &mut wells)?;
                    well.open = well_status(&ctx, r, 2)?;
                    let cmode = ctx.string(r, 3, "CMODE")?.to_uppercase();
                    let target = ctx.opt_real(r, 4, dim);
                    let bhp = ctx.opt_real(r, 6, Dimension::Pressure).unwrap_or(DEFAULT_INJECTOR_BHP);
                    let (mode, target) = match cmode.as_str() {
                        "RATE" => (
                            ControlMode::Rate,
                            target.ok_or_else(|| ctx.err(Some(r + 1), "RATE control needs a RATE value"))?,
                        ),
                        "BHP" => (ControlMode::Bhp, target.unwrap_or(f64::INFINITY)),
                        other => return Err(ctx.err(Some(r + 1), format!("unsupported control mode {other}"))),
                    };
                    if !(target >= 0.0) {
                        return Err(ctx.err(Some(r + 1), "rate target must be non-negative"));
                    }
                    well.control = Some((
                        WellKind::Injector(fluid),
                        WellControl {
                            mode,
                            rate_kind,
                            rate_target: target,
                            bhp_limit: bhp,
                        },
                    ));
                }
                note(&[Dimension::LiquidSurfaceRate, Dimension::GasSurfaceRate, Dimension::Pressure]);
            }
            "TSTEP" => {
                let lengths = ctx.reals(0, 0, &[Dimension::Time])?;
                note(&[Dimension::Time]);
                let mut snapshot = Vec::new();
                for w in &wells {
                    let Some((kind, control)) = w.control else { continue };
                    if w.open && w.connections.is_empty() {
                        return Err(ctx.err(Some(1), format!("open well {} has no connections", w.name)));
                    }
                    let connections: Vec<WellConnection> = w.connections.iter().map(|(_, c)| *c).collect();
                    let ref_depth = w
                        .ref_depth
                        .unwrap_or_else(|| connections.iter().map(|c| c.depth).fold(f64::INFINITY, f64::min));
                    snapshot.push(ScheduledWell {
                        spec: WellSpec {
                            name: w.name.clone(),
                            kind,
                            ref_depth: if ref_depth.is_finite() { ref_depth } else { 0.0 },
                            connections,
                            control,
                        },
                        open: w.open,
                    });
                }
                for (k, &len) in lengths.iter().enumerate() {
                    if !(len > 0.0) {
                        return Err(ctx.err(Some(1), format!("step {} must be positive", k + 1)));
                    }
                    schedule.push(ReportStep {
                        length: len,
                        wells: snapshot.clone(),
                    });
                }
            }
            _ => {}
        }
    }

    let last = Keyword {
        name: "END".into(),
        records: vec![],
        location: deck.keywords.last().map_or_else(
            || Location {
                file: "deck".into(),
                line: 0,
            },
            |k| k.location.clone(),
        ),
    };
    let end = Ctx {
        kw: &last,
        units: units.unwrap_or_default(),
    };
    for (k, s) in SECTIONS.iter().enumerate() {
        if REQUIRED_SECTIONS.contains(s) && !seen[k] {
            return Err(end.err(None, format!("section {s} is missing")));
        }
    }
    if phases != (true, true, true) {
        return Err(end.err(None, "only three-phase decks (OIL, WATER and GAS) are supported"));
    }
    let (d, dims_kw) = dims.ok_or_else(|| end.err(None, "DIMENS is missing"))?;
    let dims_ctx = Ctx {
        kw: dims_kw,
        units: units.unwrap_or_default(),
    };
    let (grid, _) = match grid_cache {
        Some(g) => g,
        None => build_grid(d, &arrays, &actnum, &nnc, &dims_ctx)?,
    };
    let active_globals: Vec<usize> = grid.cells().iter().map(|c| c.global).collect();
    let perm = perm_global(&arrays, &dims_ctx)?;
    let poro = arrays.get("PORO").ok_or_else(|| dims_ctx.err(None, "PORO is missing"))?;
    let (p_ref, cr) = rock.ok_or_else(|| end.err(None, "ROCK is missing"))?;
    let rock = RockProps::new(
        active_globals.iter().map(|&g| perm[g]).collect(),
        active_globals.iter().map(|&g| poro[g]).collect(),
        cr,
        p_ref,
    )
    .map_err(|e| dims_ctx.err(None, e.to_string()))?;

    let water = pvtw.ok_or_else(|| end.err(None, "PVTW is missing"))?;
    let gas = pvdg.ok_or_else(|| end.err(None, "PVDG is missing"))?;
    let oil = if disgas {
        let (live, _) = pvto.ok_or_else(|| end.err(None, "DISGAS needs PVTO"))?;
        OilPvt::Live(live)
    } else {
        if let Some((_, kw)) = pvto {
            return Err(Ctx { kw, units: end.units }.err(None, "PVTO needs DISGAS in RUNSPEC"));
        }
        let (dead, _) = pvdo.ok_or_else(|| end.err(None, "PVDO is missing"))?;
        OilPvt::Dead(dead)
    };
    let densities = density.ok_or_else(|| end.err(None, "DENSITY is missing"))?;
    let (swof, swof_kw) = swof.ok_or_else(|| end.err(None, "SWOF is missing"))?;
    let (sgof, _) = sgof.ok_or_else(|| end.err(None, "SGOF is missing"))?;
    let sat = SatTables::new(&swof, &sgof).map_err(|e| {
        Ctx {
            kw: swof_kw,
            units: end.units,
        }
        .err(None, e.to_string())
    })?;
    let equil = equil.ok_or_else(|| end.err(None, "EQUIL is missing"))?;

    let mut names_in_order: Vec<String> = Vec::new();
    for w in schedule.iter().flat_map(|s| &s.wells) {
        if !names_in_order.contains(&w.spec.name) {
            names_in_order.push(w.spec.name.clone());
        }
    }
    let mut expanded = Vec::new();
    for v in summary {
        if let Some(w) = &v.well {
            if !wells.iter().any(|s| &s.name == w) {
                return Err(end.err(None, format!("summary vector {v} names an undefined well")));
            }
        }
        push_unique(&mut expanded, v);
    }
    for kind in all_well_requests {
        for w in &names_in_order {
            push_unique(&mut expanded, SummaryVector { kind, well: Some(w.clone()) });
        }
    }
    expanded.sort_by(|a, b| (a.kind, &a.well).cmp(&(b.kind, &b.well)));

    let spec = cartesian_spec(d, &arrays, &actnum, &dims_ctx)?;
    Ok(SimCase {
        units: units.unwrap_or_default(),
        start,
        grid_spec: spec,
        reservoir: Reservoir::new(
            grid,
            rock,
            FluidSystem {
                water,
                oil,
                gas,
                densities,
            },
            sat,
        ),
        equil,
        rsvd,
        schedule,
        summary: expanded,
        unit_audit: audit,
    })
}

fn schema_name(name: &str) -> &'static str {
    match name {
        "DX" => "DX",
        "DY" => "DY",
        "DZ" => "DZ",
        "TOPS" => "TOPS",
        "PERMX" => "PERMX",
        "PERMY" => "PERMY",
        "PERMZ" => "PERMZ",
        _ => "PORO",
    }
}

fn push_unique(v: &mut Vec<SummaryVector>, s: SummaryVector) {
    if !v.contains(&s) {
        v.push(s);
    }
}

fn find_well<'w>(ctx: &Ctx, r: usize, wells: &'w mut [WellState]) -> Result<&'w mut WellState, CaseError> {
    let name = ctx.string(r, 0, "WELL")?;
    wells
        .iter_mut()
        .find(|w| w.name == name)
        .ok_or_else(|| ctx.err(Some(r + 1), format!("well {name} is not defined by WELSPECS")))
}

fn well_status(ctx: &Ctx, r: usize, idx: usize) -> Result<bool, CaseError> {
    match ctx.string(r, idx, "STATUS")?.to_uppercase().as_str() {
        "OPEN" => Ok(true),
        "SHUT" | "STOP" => Ok(false),
        other => Err(ctx.err(Some(r + 1), format!("unsupported well status {other}"))),
    }
}

fn global_of(ctx: &Ctx, r: usize, d: [usize; 3], ijk: [i64; 3]) -> Result<usize, CaseError> {
    for a in 0..3 {
        if ijk[a] < 1 || ijk[a] as usize > d[a] {
            return Err(ctx.err(
                Some(r + 1),
                format!("cell ({}, {}, {}) is outside the grid", ijk[0], ijk[1], ijk[2]),
            ));
        }
    }
    let [i, j, k] = ijk.map(|v| v as usize - 1);
    Ok(i + d[0] * (j + d[1] * k))
}

fn cartesian_spec(
    d: [usize; 3],
    arrays: &BTreeMap<&str, Vec<f64>>,
    actnum: &Option<Vec<bool>>,
    ctx: &Ctx,
) -> Result<CartesianSpec, CaseError> {
    let get = |name: &str| {
        arrays
            .get(name)
            .cloned()
            .ok_or_else(|| ctx.err(None, format!("{name} is missing")))
    };
    Ok(CartesianSpec {
        dims: d,
        dx: get("DX")?,
        dy: get("DY")?,
        dz: get("DZ")?,
        tops: get("TOPS")?,
        active: actnum.clone(),
    })
}

fn perm_global(arrays: &BTreeMap<&str, Vec<f64>>, ctx: &Ctx) -> Result<Vec<[f64; 3]>, CaseError> {
    let kx = arrays.get("PERMX").ok_or_else(|| ctx.err(None, "PERMX is missing"))?;
    let ky = arrays.get("PERMY").unwrap_or(kx);
    let kz = arrays.get("PERMZ").unwrap_or(kx);
    Ok((0..kx.len()).map(|g| [kx[g], ky[g], kz[g]]).collect())
}

fn build_grid(
    d: [usize; 3],
    arrays: &BTreeMap<&str, Vec<f64>>,
    actnum: &Option<Vec<bool>>,
    nnc: &[(usize, usize, f64, Ctx)],
    ctx: &Ctx,
) -> Result<(Grid, Vec<usize>), CaseError> {
    let spec = cartesian_spec(d, arrays, actnum, ctx)?;
    let perm = perm_global(arrays, ctx)?;
    let mut grid = Grid::build_cartesian(&spec, &perm).map_err(|e| ctx.err(None, e.to_string()))?;
    for (a, b, t, nctx) in nnc {
        let (Some(ia), Some(ib)) = (grid.active_of_global(*a), grid.active_of_global(*b)) else {
            return Err(nctx.err(None, "connection touches an inactive cell"));
        };
        grid.add_nnc(ia, ib, *t).map_err(|e| nctx.err(None, e.to_string()))?;
    }
    let globals = grid.cells().iter().map(|c| c.global).collect();
    Ok((grid, globals))
}
