//! Newton iteration, update chopping and adaptive time stepping.

use thiserror::Error;

use crate::linalg::{bicgstab, BlockVector, Ilu0, LinalgError, SolverConfig, Vec3};
use crate::model::{
    convergence_metrics, AssembledSystem, ConvergenceMetrics, PrimaryVariables, Reservoir, XMeaning,
    SWITCH_EPSILON,
};
use crate::wells::{
    schur_preconditioner_matrix, schur_rhs, ControlMode, ControlSwitch, SchurOperator, Well, WellBlocks,
    WellError, WellKind, WellSpec,
};

/// Control switches allowed per well within one time step before the
/// mode is frozen.
const MAX_SWITCHES_PER_STEP: usize = 4;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("time step fell below the minimum of {dt_min} s at t = {time} s in report step {report}: {reason}")]
    TimestepUnderflow {
        time: f64,
        dt_min: f64,
        report: usize,
        reason: String,
    },
    #[error(transparent)]
    Well(#[from] WellError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub tol_mb: f64,
    pub tol_cnv: f64,
    pub tol_wells: f64,
    pub max_iterations: usize,
    /// Largest saturation change per iteration.
    pub ds_max: f64,
    /// Largest pressure change per iteration relative to the pressure.
    pub dp_max_rel: f64,
    pub linear: SolverConfig,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol_mb: 1e-6,
            tol_cnv: 1e-2,
            tol_wells: 1e-4,
            max_iterations: 15,
            ds_max: 0.2,
            dp_max_rel: 0.25,
            linear: SolverConfig::default(),
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let positive = [
            ("tol_mb", self.tol_mb),
            ("tol_cnv", self.tol_cnv),
            ("tol_wells", self.tol_wells),
            ("ds_max", self.ds_max),
            ("dp_max_rel", self.dp_max_rel),
            ("linear tolerance", self.linear.tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimulationError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iterations == 0 || self.linear.max_iterations == 0 {
            return Err(SimulationError::Config("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// Adaptive step controls, seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimestepControl {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub growth: f64,
    pub cut: f64,
}

impl Default for TimestepControl {
    fn default() -> Self {
        let day = crate::units::DAY;
        Self {
            dt_init: day,
            dt_min: 1e-3 * day,
            dt_max: 365.0 * day,
            growth: 2.0,
            cut: 0.5,
        }
    }
}

impl TimestepControl {
    pub fn validate(&self) -> Result<(), SimulationError> {
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return Err(SimulationError::Config(format!(
                "need 0 < dt_min <= dt_init <= dt_max, got {} / {} / {}",
                self.dt_min, self.dt_init, self.dt_max
            )));
        }
        if !(self.cut > 0.0 && self.cut < 1.0 && self.growth > 1.0) {
            return Err(SimulationError::Config(format!(
                "need 0 < cut < 1 < growth, got cut {} growth {}",
                self.cut, self.growth
            )));
        }
        Ok(())
    }
}

/// Cell unknowns and open wells.
#[derive(Debug, Clone)]
pub struct SimState {
    pub cells: Vec<PrimaryVariables>,
    pub wells: Vec<Well>,
}

/// Phase-boundary crossings during one update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VariableSwitches {
    pub to_sg: usize,
    pub to_rgo: usize,
}

impl std::ops::AddAssign for VariableSwitches {
    fn add_assign(&mut self, o: Self) {
        self.to_sg += o.to_sg;
        self.to_rgo += o.to_rgo;
    }
}

/// Applies the Newton increment `y -= dx` to every cell with the
/// saturation chop, the relative pressure limit and truncation at the
/// phase boundary, then re-interprets `x` where the boundary was crossed.
pub fn newton_update(
    reservoir: &Reservoir,
    cells: &mut [PrimaryVariables],
    dx: &BlockVector,
    config: &NewtonConfig,
) -> VariableSwitches {
    let mut switches = VariableSwitches::default();
    for (pv, d) in cells.iter_mut().zip(&dx.0) {
        let dp_max = config.dp_max_rel * pv.po.abs();
        let dp = d[0].clamp(-dp_max, dp_max);

        let dsw = d[1];
        let dsg = if pv.meaning == XMeaning::Sg { d[2] } else { 0.0 };
        let largest = dsw.abs().max(dsg.abs()).max((dsw + dsg).abs());
        let chop = if largest > config.ds_max { config.ds_max / largest } else { 1.0 };

        pv.po -= dp;
        pv.sw = (pv.sw - chop * dsw).clamp(0.0, 1.0);
        match pv.meaning {
            XMeaning::Sg => {
                let sg = pv.x - chop * dsg;
                pv.x = sg.max(-2.0 * SWITCH_EPSILON).min(1.0 - pv.sw);
            }
            XMeaning::Rgo => {
                let rs: f64 = reservoir.fluid.oil.saturated_rs(pv.po);
                pv.x = (pv.x - d[2]).clamp(0.0, rs * (1.0 + 2.0 * SWITCH_EPSILON));
            }
        }

        let before = pv.meaning;
        *pv = reservoir.switch_variables(*pv);
        if pv.meaning == XMeaning::Sg {
            pv.x = pv.x.min(1.0 - pv.sw);
        }
        match (before, pv.meaning) {
            (XMeaning::Rgo, XMeaning::Sg) => switches.to_sg += 1,
            (XMeaning::Sg, XMeaning::Rgo) => switches.to_rgo += 1,
            _ => {}
        }
    }
    switches
}

/// A control mode change during a step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlEvent {
    pub well: String,
    pub switch: ControlSwitch,
}

#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub converged: bool,
    pub newton_iterations: usize,
    pub linear_iterations: usize,
    pub metrics: ConvergenceMetrics,
    /// Largest scaled well residual.
    pub well_residual: f64,
    pub variable_switches: VariableSwitches,
    pub control_events: Vec<ControlEvent>,
    pub failure: Option<String>,
}

/// Reusable storage for the Newton loop.
#[derive(Debug, Clone)]
pub struct Workspace {
    system: AssembledSystem,
}

impl Workspace {
    pub fn new(reservoir: &Reservoir) -> Result<Self, LinalgError> {
        Ok(Self {
            system: AssembledSystem::new(reservoir)?,
        })
    }
}

fn largest_well_residual(wells: &[Well], blocks: &[WellBlocks]) -> f64 {
    wells
        .iter()
        .zip(blocks)
        .map(|(w, b)| {
            let (balance, control) = w.residual_norms(&b.r);
            balance.max(control)
        })
        .fold(0.0, f64::max)
}

fn check_controls(state: &mut SimState, counts: &mut [usize], events: &mut Vec<ControlEvent>) -> bool {
    let mut any = false;
    for (w, count) in state.wells.iter_mut().zip(counts.iter_mut()) {
        if *count >= MAX_SWITCHES_PER_STEP {
            continue;
        }
        if let Some(switch) = w.switch_control() {
            log::info!("well {}: control {:?} -> {:?}", w.name(), switch.from, switch.to);
            *count += 1;
            any = true;
            events.push(ControlEvent {
                well: w.name().to_string(),
                switch,
            });
        }
    }
    any
}

/// One implicit step of length `dt` from `state0`. The input is never
/// modified; on failure the report says why and no state is returned.
pub fn solve_timestep(
    reservoir: &Reservoir,
    state0: &SimState,
    dt: f64,
    config: &NewtonConfig,
    workspace: &mut Workspace,
) -> (Option<SimState>, StepReport) {
    let mut report = StepReport::default();
    let mut state = state0.clone();
    let start_values: Vec<_> = state.cells.iter().map(|&pv| reservoir.cell_values(pv)).collect();
    let start_acc: Vec<[f64; 3]> = start_values.iter().map(|s| s.accumulation).collect();
    for w in &mut state.wells {
        w.begin_step(reservoir, &start_values);
    }
    let mut switch_counts = vec![0usize; state.wells.len()];
    let sys = &mut workspace.system;

    for it in 0..=config.max_iterations {
        let states: Vec<_> = state.cells.iter().map(|&pv| reservoir.cell_state(pv)).collect();
        reservoir.assemble(&states, &start_acc, dt, sys);
        let mut blocks = Vec::with_capacity(state.wells.len());
        for w in &state.wells {
            match w.assemble(reservoir, &states, dt, sys) {
                Ok(b) => blocks.push(b),
                Err(e) => {
                    report.failure = Some(e.to_string());
                    return (None, report);
                }
            }
        }
        let values: Vec<_> = states.iter().map(|s| s.values()).collect();
        let fvf = reservoir.average_fvf(&values);
        report.metrics = convergence_metrics(&sys.residual, reservoir.pore_volumes(), dt, fvf);
        report.well_residual = largest_well_residual(&state.wells, &blocks);
        let finite = report.metrics.mb.iter().chain(&report.metrics.cnv).all(|v| v.is_finite())
            && report.well_residual.is_finite();
        if !finite {
            report.failure = Some(format!("non-finite residual at iteration {it}"));
            return (None, report);
        }
        log::debug!(
            "  newton {it}: mb {:?} cnv {:?} wells {:.3e}",
            report.metrics.mb,
            report.metrics.cnv,
            report.well_residual
        );
        if report.metrics.converged(config.tol_mb, config.tol_cnv) && report.well_residual < config.tol_wells {
            // a converged state must also honour every inactive constraint
            if !check_controls(&mut state, &mut switch_counts, &mut report.control_events) {
                report.converged = true;
                report.newton_iterations = it;
                return (Some(state), report);
            }
            continue;
        }
        if it == config.max_iterations {
            break;
        }

        // equations in reservoir volumes before the linear solve
        let scale = Vec3::new(fvf[0], fvf[1], fvf[2]);
        sys.jacobian.scale_rows(&scale);
        for r in &mut sys.residual.0 {
            r.component_mul_assign(&scale);
        }
        for b in &mut blocks {
            for c in &mut b.c {
                for (row, s) in scale.iter().enumerate() {
                    c.row_mut(row).scale_mut(*s);
                }
            }
        }

        let precond_matrix = schur_preconditioner_matrix(&sys.jacobian, &blocks);
        let ilu = match Ilu0::factor(&precond_matrix) {
            Ok(ilu) => ilu,
            Err(e) => {
                report.failure = Some(e.to_string());
                return (None, report);
            }
        };
        let rhs = schur_rhs(&sys.residual, &blocks);
        let op = SchurOperator {
            a: &sys.jacobian,
            wells: &blocks,
        };
        let mut dx = BlockVector::zeros(rhs.len());
        let stats = bicgstab(&op, &ilu, &rhs, &mut dx, &config.linear);
        report.linear_iterations += stats.iterations;
        if !stats.converged {
            report.failure = Some(format!(
                "linear solver stopped at relative residual {:.3e} after {} iterations",
                stats.relative_residual, stats.iterations
            ));
            return (None, report);
        }
        report.variable_switches += newton_update(reservoir, &mut state.cells, &dx, config);
        for (w, b) in state.wells.iter_mut().zip(&blocks) {
            w.apply_update(&b.recover(&dx), config.dp_max_rel);
        }
        check_controls(&mut state, &mut switch_counts, &mut report.control_events);
    }
    report.newton_iterations = config.max_iterations;
    report.failure = Some(format!("no convergence in {} Newton iterations", config.max_iterations));
    (None, report)
}

/// A well as defined for one report step.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledWell {
    pub spec: WellSpec,
    pub open: bool,
}

/// Interval of the schedule with the well definitions in force.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportStep {
    /// Length, s.
    pub length: f64,
    pub wells: Vec<ScheduledWell>,
}

/// Surface rates and pressure of one well at the end of a report step.
#[derive(Debug, Clone, PartialEq)]
pub struct WellReport {
    pub name: String,
    pub kind: WellKind,
    pub mode: ControlMode,
    pub bhp: f64,
    /// Surface rates, positive for production, m3/s.
    pub rates: [f64; 3],
}

impl WellReport {
    pub fn production(&self) -> [f64; 3] {
        self.rates.map(|q| q.max(0.0))
    }

    pub fn injection(&self) -> [f64; 3] {
        self.rates.map(|q| (-q).max(0.0))
    }

    pub fn gas_oil_ratio(&self) -> f64 {
        let p = self.production();
        if p[1] > 0.0 {
            p[2] / p[1]
        } else {
            0.0
        }
    }
}

/// Snapshot at a report boundary; index 0 is the initial state.
#[derive(Debug, Clone)]
pub struct ReportRecord {
    pub index: usize,
    pub time: f64,
    pub cells: Vec<PrimaryVariables>,
    pub wells: Vec<WellReport>,
    /// Pore-volume weighted oil pressure, Pa.
    pub field_pressure: f64,
}

#[derive(Debug, Clone)]
pub struct SubstepLog {
    pub report: usize,
    /// Time at the end of the attempt, s.
    pub time: f64,
    pub dt: f64,
    pub step: StepReport,
}

/// Everything a run produced.
#[derive(Debug, Clone, Default)]
pub struct RunResults {
    pub reports: Vec<ReportRecord>,
    /// Every attempted substep, failed ones included.
    pub substeps: Vec<SubstepLog>,
    pub control_events: Vec<(f64, ControlEvent)>,
    pub variable_switches: VariableSwitches,
    /// Cumulative surface volumes leaving the reservoir through well
    /// connections, injection negative, m3.
    pub cumulative_outflow: [f64; 3],
    pub initial_in_place: [f64; 3],
}

impl RunResults {
    /// `|in-place change + net outflow| / initial in-place` per component.
    pub fn material_balance_error(&self, reservoir: &Reservoir) -> [f64; 3] {
        let last = match self.reports.last() {
            Some(r) => r,
            None => return [0.0; 3],
        };
        let now = reservoir.in_place(&last.cells);
        std::array::from_fn(|a| {
            let scale = self.initial_in_place[a].abs().max(f64::MIN_POSITIVE);
            (now[a] - self.initial_in_place[a] + self.cumulative_outflow[a]).abs() / scale
        })
    }
}

pub fn field_pressure(reservoir: &Reservoir, cells: &[PrimaryVariables]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (pv, &vol) in cells.iter().zip(reservoir.pore_volumes()) {
        num += vol * pv.po;
        den += vol;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn report_record(reservoir: &Reservoir, index: usize, time: f64, state: &SimState) -> ReportRecord {
    ReportRecord {
        index,
        time,
        cells: state.cells.clone(),
        wells: state
            .wells
            .iter()
            .map(|w| WellReport {
                name: w.name().to_string(),
                kind: w.spec.kind,
                mode: w.mode,
                bhp: w.vars.bhp,
                rates: w.vars.surface_rates(),
            })
            .collect(),
        field_pressure: field_pressure(reservoir, &state.cells),
    }
}

/// Opens, updates or closes wells to match a report step's definitions.
fn apply_well_events(reservoir: &Reservoir, state: &mut SimState, step: &ReportStep) -> Result<(), WellError> {
    let values: Vec<_> = state.cells.iter().map(|&pv| reservoir.cell_values(pv)).collect();
    let mut wells = Vec::with_capacity(step.wells.len());
    for sw in step.wells.iter().filter(|w| w.open) {
        let existing = state.wells.iter().position(|w| w.spec.name == sw.spec.name);
        let well = match existing {
            Some(i) if state.wells[i].spec.connections == sw.spec.connections && state.wells[i].spec.kind == sw.spec.kind => {
                let mut w = state.wells.swap_remove(i);
                if w.spec.control != sw.spec.control {
                    w.set_control(sw.spec.control);
                }
                w.spec.ref_depth = sw.spec.ref_depth;
                w
            }
            _ => Well::new(sw.spec.clone(), reservoir, &values)?,
        };
        wells.push(well);
    }
    state.wells = wells;
    Ok(())
}

/// Advances through all report steps. `on_report` sees the initial
/// state and the state at every report boundary as soon as it exists.
pub fn run_schedule(
    reservoir: &Reservoir,
    initial: Vec<PrimaryVariables>,
    schedule: &[ReportStep],
    newton: &NewtonConfig,
    steps: &TimestepControl,
    on_report: &mut dyn FnMut(&ReportRecord),
) -> Result<RunResults, SimulationError> {
    newton.validate()?;
    steps.validate()?;
    let mut workspace = Workspace::new(reservoir)?;
    let mut state = SimState {
        cells: initial,
        wells: Vec::new(),
    };
    let mut results = RunResults {
        initial_in_place: reservoir.in_place(&state.cells),
        ..Default::default()
    };
    if let Some(first) = schedule.first() {
        apply_well_events(reservoir, &mut state, first)?;
    }
    let initial_record = report_record(reservoir, 0, 0.0, &state);
    on_report(&initial_record);
    results.reports.push(initial_record);

    let mut time = 0.0;
    let mut dt_next = steps.dt_init;
    for (k, step) in schedule.iter().enumerate() {
        let report = k + 1;
        apply_well_events(reservoir, &mut state, step)?;
        let end = time + step.length;
        while time < end {
            let remaining = end - time;
            let mut dt = dt_next.min(remaining);
            let limited = dt < dt_next;
            let mut failed = false;
            let accepted = loop {
                let (next, step_report) = solve_timestep(reservoir, &state, dt, newton, &mut workspace);
                let ok = next.is_some();
                let reason = step_report.failure.clone();
                log::info!(
                    "report {report} t = {:.4} d dt = {:.4} d: {} newton {} linear {} mb {:?} cnv {:?}",
                    (time + dt) / crate::units::DAY,
                    dt / crate::units::DAY,
                    if ok { "ok" } else { "FAILED" },
                    step_report.newton_iterations,
                    step_report.linear_iterations,
                    step_report.metrics.mb,
                    step_report.metrics.cnv,
                );
                results.substeps.push(SubstepLog {
                    report,
                    time: time + dt,
                    dt,
                    step: step_report,
                });
                if let Some(s) = next {
                    break s;
                }
                failed = true;
                dt *= steps.cut;
                if dt < steps.dt_min {
                    return Err(SimulationError::TimestepUnderflow {
                        time,
                        dt_min: steps.dt_min,
                        report,
                        reason: reason.unwrap_or_default(),
                    });
                }
            };
            let log_entry = &results.substeps.last().expect("logged").step;
            results.variable_switches += log_entry.variable_switches;
            for e in &log_entry.control_events {
                results.control_events.push((time + dt, e.clone()));
            }
            let values: Vec<_> = accepted.cells.iter().map(|&pv| reservoir.cell_values(pv)).collect();
            for w in &accepted.wells {
                for q in w.connection_rates(&values) {
                    for a in 0..3 {
                        results.cumulative_outflow[a] += q[a] * dt;
                    }
                }
            }
            state = accepted;
            time = if dt == remaining { end } else { time + dt };
            dt_next = if limited && !failed {
                dt_next
            } else {
                (dt * steps.growth).min(steps.dt_max)
            };
        }
        let record = report_record(reservoir, report, time, &state);
        on_report(&record);
        results.reports.push(record);
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{CartesianSpec, Grid, RockProps};
    use crate::model::tests::{live_fluid, reservoir, sat_tables_si};
    use crate::units::{BAR, DAY, MILLIDARCY};
    use crate::wells::{RateKind, WellConnection, WellControl};

    fn pv(po: f64, sw: f64, x: f64, meaning: XMeaning) -> PrimaryVariables {
        PrimaryVariables::new(po, sw, x, meaning)
    }

    #[test]
    fn zero_increment_is_identity() {
        let res = reservoir([2, 1, 1]);
        let mut cells = vec![pv(200.0 * BAR, 0.3, 0.1, XMeaning::Sg), pv(150.0 * BAR, 0.4, 50.0, XMeaning::Rgo)];
        let before = cells.clone();
        let s = newton_update(&res, &mut cells, &BlockVector::zeros(2), &NewtonConfig::default());
        assert_eq!(cells, before);
        assert_eq!(s, VariableSwitches::default());
    }

    #[test]
    fn saturation_change_is_chopped() {
        let res = reservoir([1, 1, 1]);
        let mut cells = vec![pv(200.0 * BAR, 0.3, 0.1, XMeaning::Sg)];
        // y -= dx, so dx = -0.5 requests +0.5 in s_w
        let dx = BlockVector::from_flat(&[0.0, -0.5, 0.0]);
        newton_update(&res, &mut cells, &dx, &NewtonConfig::default());
        assert!((cells[0].sw - 0.5).abs() < 1e-15);
        assert_eq!(cells[0].x, 0.1);
    }

    #[test]
    fn chop_scales_both_saturations_together() {
        let res = reservoir([1, 1, 1]);
        let mut cells = vec![pv(200.0 * BAR, 0.3, 0.3, XMeaning::Sg)];
        let dx = BlockVector::from_flat(&[0.0, -0.4, 0.2]);
        newton_update(&res, &mut cells, &dx, &NewtonConfig::default());
        // largest change 0.4 scaled to 0.2: sw +0.2, sg -0.1
        assert!((cells[0].sw - 0.5).abs() < 1e-15);
        assert!((cells[0].x - 0.2).abs() < 1e-15);
    }

    #[test]
    fn pressure_change_is_limited() {
        let res = reservoir([1, 1, 1]);
        let mut cells = vec![pv(200.0 * BAR, 0.3, 0.1, XMeaning::Sg)];
        let dx = BlockVector::from_flat(&[-150.0 * BAR, 0.0, 0.0]);
        newton_update(&res, &mut cells, &dx, &NewtonConfig::default());
        assert!((cells[0].po - 250.0 * BAR).abs() < 1e-6);
    }

    #[test]
    fn gas_disappearing_switches_to_dissolved_ratio() {
        let res = reservoir([1, 1, 1]);
        let p = 200.0 * BAR;
        let mut cells = vec![pv(p, 0.3, 0.05, XMeaning::Sg)];
        let dx = BlockVector::from_flat(&[0.0, 0.0, 0.45]);
        let s = newton_update(&res, &mut cells, &dx, &NewtonConfig::default());
        assert_eq!(cells[0].meaning, XMeaning::Rgo);
        let rs: f64 = res.fluid.oil.saturated_rs(p);
        assert!((cells[0].x - rs * (1.0 - crate::model::SWITCH_BACKOFF)).abs() < 1e-12);
        assert_eq!(s.to_rgo, 1);
    }

    #[test]
    fn overshooting_dissolved_ratio_lands_on_boundary() {
        let res = reservoir([1, 1, 1]);
        let p = 200.0 * BAR;
        let rs: f64 = res.fluid.oil.saturated_rs(p);
        let mut cells = vec![pv(p, 0.3, 0.9 * rs, XMeaning::Rgo)];
        let dx = BlockVector::from_flat(&[0.0, 0.0, -5.0 * rs]);
        let s = newton_update(&res, &mut cells, &dx, &NewtonConfig::default());
        assert_eq!(cells[0].meaning, XMeaning::Sg);
        assert_eq!(cells[0].x, crate::model::SWITCH_BACKOFF);
        assert_eq!(s.to_sg, 1);
    }

    #[test]
    fn iterates_stay_physical() {
        use rand::{Rng, SeedableRng};
        let res = reservoir([1, 1, 1]);
        let mut rng = rand::rngs::StdRng::seed_from_u64(17);
        for _ in 0..500 {
            let sw = rng.gen_range(0.0..1.0);
            let mut cells = vec![if rng.gen_bool(0.5) {
                pv(rng.gen_range(50.0..300.0) * BAR, sw, rng.gen_range(0.0..1.0 - sw), XMeaning::Sg)
            } else {
                pv(rng.gen_range(50.0..300.0) * BAR, sw, rng.gen_range(0.0..100.0), XMeaning::Rgo)
            }];
            let dx = BlockVector::from_flat(&[
                rng.gen_range(-100.0..100.0) * BAR,
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-200.0..200.0),
            ]);
            newton_update(&res, &mut cells, &dx, &NewtonConfig::default());
            let c = cells[0];
            assert!((0.0..=1.0).contains(&c.sw));
            match c.meaning {
                XMeaning::Sg => assert!(c.x <= 1.0 - c.sw && c.x >= -2.0 * SWITCH_EPSILON),
                XMeaning::Rgo => {
                    let rs: f64 = res.fluid.oil.saturated_rs(c.po);
                    assert!(c.x >= 0.0 && c.x <= rs * (1.0 + SWITCH_EPSILON));
                }
            }
        }
    }

    fn slug() -> (Reservoir, Vec<PrimaryVariables>) {
        // two horizontal cells, water pushed from the wet cell into the dry one
        let spec = CartesianSpec::uniform([2, 1, 1], [10.0, 10.0, 10.0], 1000.0);
        let perm = vec![[100.0 * MILLIDARCY; 3]; 2];
        let grid = Grid::build_cartesian(&spec, &perm).unwrap();
        let rock = RockProps::new(perm, vec![0.2; 2], 1e-9, 200.0 * BAR).unwrap();
        let res = Reservoir::new(grid, rock, live_fluid(), sat_tables_si());
        let rs: f64 = res.fluid.oil.saturated_rs(200.0 * BAR);
        let cells = vec![
            pv(201.0 * BAR, 0.8, 0.9 * rs, XMeaning::Rgo),
            pv(200.0 * BAR, 0.2, 0.9 * rs, XMeaning::Rgo),
        ];
        (res, cells)
    }

    #[test]
    fn water_slug_conserves_mass() {
        let (res, cells) = slug();
        let before = res.in_place(&cells);
        let state = SimState { cells, wells: vec![] };
        let mut ws = Workspace::new(&res).unwrap();
        let cfg = NewtonConfig::default();
        let (next, report) = solve_timestep(&res, &state, 5.0 * DAY, &cfg, &mut ws);
        let next = next.unwrap_or_else(|| panic!("{report:?}"));
        assert!(report.newton_iterations >= 1);
        assert!(next.cells[1].sw > 0.2);
        let after = res.in_place(&next.cells);
        let total_pv: f64 = res.pore_volumes().iter().sum();
        let values: Vec<_> = next.cells.iter().map(|&p| res.cell_values(p)).collect();
        let fvf = res.average_fvf(&values);
        for a in 0..3 {
            assert!((after[a] - before[a]).abs() * fvf[a] < cfg.tol_mb * total_pv, "component {a}");
        }
    }

    #[test]
    fn failed_step_leaves_state_untouched() {
        let (res, cells) = slug();
        let state = SimState { cells, wells: vec![] };
        let copy = state.cells.clone();
        let mut ws = Workspace::new(&res).unwrap();
        let cfg = NewtonConfig {
            max_iterations: 1,
            tol_cnv: 1e-12,
            tol_mb: 1e-15,
            ..Default::default()
        };
        let (next, report) = solve_timestep(&res, &state, 50.0 * DAY, &cfg, &mut ws);
        assert!(next.is_none());
        assert!(!report.converged && report.failure.is_some());
        assert_eq!(state.cells, copy);
    }

    #[test]
    fn steady_state_takes_no_iterations() {
        let (res, mut cells) = slug();
        cells[0] = cells[1];
        let state = SimState { cells, wells: vec![] };
        let mut ws = Workspace::new(&res).unwrap();
        let (next, report) = solve_timestep(&res, &state, DAY, &NewtonConfig::default(), &mut ws);
        assert_eq!(report.newton_iterations, 0);
        assert_eq!(next.unwrap().cells, state.cells);
    }

    fn producer(res: &Reservoir, rate: f64, bhp: f64) -> WellSpec {
        WellSpec {
            name: "P".into(),
            kind: WellKind::Producer,
            ref_depth: res.grid.cells()[0].depth,
            connections: vec![WellConnection {
                cell: 0,
                trans: 1e-12,
                depth: res.grid.cells()[0].depth,
            }],
            control: WellControl {
                mode: ControlMode::Rate,
                rate_kind: RateKind::Oil,
                rate_target: rate,
                bhp_limit: bhp,
            },
        }
    }

    #[test]
    fn schedule_hits_report_boundaries_and_grows_steps() {
        let (res, mut cells) = slug();
        cells[0] = cells[1];
        let well = ScheduledWell {
            spec: producer(&res, 1.0 / DAY, 50.0 * BAR),
            open: true,
        };
        let schedule = vec![
            ReportStep {
                length: 10.0 * DAY,
                wells: vec![well.clone()],
            },
            ReportStep {
                length: 5.0 * DAY,
                wells: vec![ScheduledWell { open: false, ..well }],
            },
        ];
        let mut seen = Vec::new();
        let results = run_schedule(
            &res,
            cells,
            &schedule,
            &NewtonConfig::default(),
            &TimestepControl::default(),
            &mut |r| seen.push(r.time),
        )
        .unwrap();
        assert_eq!(seen, vec![0.0, 10.0 * DAY, 15.0 * DAY]);
        let dts: Vec<f64> = results.substeps.iter().filter(|s| s.report == 1).map(|s| s.dt).collect();
        assert!(dts.windows(2).all(|w| w[1] >= w[0] || (w[1] - 10.0 * DAY).abs() > 0.0));
        assert!((dts.iter().sum::<f64>() - 10.0 * DAY).abs() < 1e-6);
        assert_eq!(results.reports[1].wells.len(), 1);
        assert!((results.reports[1].wells[0].rates[1] - 1.0 / DAY).abs() < 1e-4 / DAY);
        assert!(results.reports[2].wells.is_empty());
        for e in results.material_balance_error(&res) {
            assert!(e < 1e-5, "{e}");
        }
    }

    #[test]
    fn underflow_is_reported() {
        let (res, cells) = slug();
        let schedule = vec![ReportStep {
            length: 10.0 * DAY,
            wells: vec![],
        }];
        let cfg = NewtonConfig {
            max_iterations: 1,
            tol_mb: 1e-30,
            tol_cnv: 1e-30,
            ..Default::default()
        };
        let err = run_schedule(&res, cells, &schedule, &cfg, &TimestepControl::default(), &mut |_| {}).unwrap_err();
        assert!(matches!(err, SimulationError::TimestepUnderflow { report: 1, .. }));
    }

    #[test]
    fn invalid_controls_rejected() {
        let bad = TimestepControl {
            dt_min: 2.0 * DAY,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TimestepControl {
            growth: 0.9,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(NewtonConfig {
            tol_mb: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
