//! Hydrostatic equilibrium initialization.
//!
//! Phase pressures follow `dp/dz = rho(z, p) g`, integrated with classical
//! Runge-Kutta from the datum (for the phase whose zone contains it) and
//! from the contacts for the other phases. Saturations come from inverting
//! the capillary pressure curves at each cell center.

use thiserror::Error;

use crate::model::{PrimaryVariables, Reservoir, XMeaning, SWITCH_EPSILON};
use crate::pvt::Phase;
use crate::satfunc::CapillaryCurve;
use crate::table::Table1D;

/// Largest RK4 step, m.
const MAX_STEP: f64 = 0.5;
const MIN_STEPS: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum EquilError {
    #[error("gas-oil contact at {goc} m lies below the water-oil contact at {woc} m")]
    ContactOrder { goc: f64, woc: f64 },
    #[error("non-finite pressure while integrating the {phase} column")]
    NonFinite { phase: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilRecord {
    pub datum_depth: f64,
    pub datum_pressure: f64,
    pub woc_depth: f64,
    /// `p_cow` at the water-oil contact.
    pub woc_pc: f64,
    pub goc_depth: f64,
    /// `p_cog` at the gas-oil contact.
    pub goc_pc: f64,
}

/// Integrates `dp/dz = f(z, p)` from `z_from` to `z_to` with
/// `max(20, ceil(|dz| / 0.5 m))` classical RK4 steps.
pub fn integrate_phase_pressure(
    gradient: impl Fn(f64, f64) -> f64,
    z_from: f64,
    p_from: f64,
    z_to: f64,
) -> f64 {
    let dz = z_to - z_from;
    if dz == 0.0 {
        return p_from;
    }
    let n = MIN_STEPS.max((dz.abs() / MAX_STEP).ceil() as usize);
    integrate_steps(gradient, z_from, p_from, z_to, n)
}

pub fn integrate_steps(gradient: impl Fn(f64, f64) -> f64, z_from: f64, p_from: f64, z_to: f64, n: usize) -> f64 {
    let h = (z_to - z_from) / n as f64;
    let mut p = p_from;
    for k in 0..n {
        let z = z_from + k as f64 * h;
        let k1 = gradient(z, p);
        let k2 = gradient(z + 0.5 * h, p + 0.5 * h * k1);
        let k3 = gradient(z + 0.5 * h, p + 0.5 * h * k2);
        let k4 = gradient(z + h, p + h * k3);
        p += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    p
}

/// Largest `s` with `pc(s) >= target` for a non-increasing curve.
fn invert_decreasing(table: &Table1D, target: f64) -> f64 {
    let (s, pc) = (table.xs(), table.ys());
    let n = s.len();
    if pc[0] < target {
        return s[0];
    }
    if pc[n - 1] >= target {
        return s[n - 1];
    }
    let i = (0..n - 1).rev().find(|&i| pc[i] >= target).unwrap();
    s[i] + (target - pc[i]) * (s[i + 1] - s[i]) / (pc[i + 1] - pc[i])
}

/// Supremum of `s` with `pc(s) < target` for a non-decreasing curve.
fn invert_increasing(table: &Table1D, target: f64) -> f64 {
    let (s, pc) = (table.xs(), table.ys());
    let n = s.len();
    if pc[0] >= target {
        return s[0];
    }
    if pc[n - 1] < target {
        return s[n - 1];
    }
    let i = (0..n - 1).find(|&i| pc[i + 1] >= target).unwrap();
    s[i] + (target - pc[i]) * (s[i + 1] - s[i]) / (pc[i + 1] - pc[i])
}

/// Phase pressure columns of an equilibrium region.
pub struct PressureColumns<'a> {
    reservoir: &'a Reservoir,
    rsvd: Option<&'a Table1D>,
    /// Anchor `(depth, pressure)` of each phase.
    anchors: [(f64, f64); 3],
    goc_depth: f64,
}

impl<'a> PressureColumns<'a> {
    pub fn new(reservoir: &'a Reservoir, record: &EquilRecord, rsvd: Option<&'a Table1D>) -> Result<Self, EquilError> {
        if record.goc_depth > record.woc_depth {
            return Err(EquilError::ContactOrder {
                goc: record.goc_depth,
                woc: record.woc_depth,
            });
        }
        let mut cols = Self {
            reservoir,
            rsvd,
            anchors: [(record.datum_depth, record.datum_pressure); 3],
            goc_depth: record.goc_depth,
        };
        let z = record.datum_depth;
        let (w, o, g) = (Phase::Water, Phase::Oil, Phase::Gas);
        if z >= record.woc_depth {
            let pw = cols.pressure(w, record.woc_depth)?;
            cols.anchors[o.index()] = (record.woc_depth, pw + record.woc_pc);
            let po = cols.pressure(o, record.goc_depth)?;
            cols.anchors[g.index()] = (record.goc_depth, po + record.goc_pc);
        } else if z >= record.goc_depth {
            let po = cols.pressure(o, record.woc_depth)?;
            cols.anchors[w.index()] = (record.woc_depth, po - record.woc_pc);
            let po = cols.pressure(o, record.goc_depth)?;
            cols.anchors[g.index()] = (record.goc_depth, po + record.goc_pc);
        } else {
            let pg = cols.pressure(g, record.goc_depth)?;
            cols.anchors[o.index()] = (record.goc_depth, pg - record.goc_pc);
            let po = cols.pressure(o, record.woc_depth)?;
            cols.anchors[w.index()] = (record.woc_depth, po - record.woc_pc);
        }
        Ok(cols)
    }

    /// Dissolved gas ratio of oil at depth `z` and oil pressure `p`: the
    /// depth table capped by saturation below the gas cap, saturated within it.
    pub fn oil_rgo(&self, z: f64, p: f64) -> f64 {
        let rs: f64 = self.reservoir.fluid.oil.saturated_rs(p);
        match self.rsvd {
            Some(t) if z >= self.goc_depth => t.eval(z).min(rs),
            _ => rs,
        }
    }

    pub fn density(&self, phase: Phase, z: f64, p: f64) -> f64 {
        let fluid = &self.reservoir.fluid;
        match phase {
            Phase::Water => fluid.water_density(p),
            Phase::Oil => fluid.oil_density(p, Some(self.oil_rgo(z, p))),
            Phase::Gas => fluid.gas_density(p),
        }
    }

    pub fn pressure(&self, phase: Phase, z: f64) -> Result<f64, EquilError> {
        let (z0, p0) = self.anchors[phase.index()];
        let g = self.reservoir.gravity;
        let p = integrate_phase_pressure(|zz, p| self.density(phase, zz, p) * g, z0, p0, z);
        if p.is_finite() {
            Ok(p)
        } else {
            Err(EquilError::NonFinite { phase: phase.name() })
        }
    }
}

/// Initial primary variables of every active cell.
pub fn equilibrate(
    reservoir: &Reservoir,
    record: &EquilRecord,
    rsvd: Option<&Table1D>,
) -> Result<Vec<PrimaryVariables>, EquilError> {
    let cols = PressureColumns::new(reservoir, record, rsvd)?;
    let sat = &reservoir.sat;
    let pcow = sat.capillary_table(CapillaryCurve::OilWater);
    let pcog = sat.capillary_table(CapillaryCurve::OilGas);
    let live = reservoir.has_dissolved_gas();
    reservoir
        .grid
        .cells()
        .iter()
        .map(|cell| {
            let z = cell.depth;
            let po = cols.pressure(Phase::Oil, z)?;
            let pw = cols.pressure(Phase::Water, z)?;
            let pg = cols.pressure(Phase::Gas, z)?;
            let sw = invert_decreasing(pcow, po - pw).clamp(0.0, 1.0);
            let sg = invert_increasing(pcog, pg - po).clamp(0.0, 1.0 - sw);
            // the cell honors the pressure column of the zone it lies in
            let po = if z >= record.woc_depth {
                pw + pcow.eval(sw)
            } else if z < record.goc_depth {
                pg - pcog.eval(sg)
            } else {
                po
            };
            Ok(if sg > 0.0 || !live || 1.0 - sw <= SWITCH_EPSILON {
                PrimaryVariables::new(po, sw, sg, XMeaning::Sg)
            } else {
                PrimaryVariables::new(po, sw, cols.oil_rgo(z, po), XMeaning::Rgo)
            })
        })
        .collect()
}
