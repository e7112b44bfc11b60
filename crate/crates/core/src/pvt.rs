//! Black-oil PVT: constant-compressibility water, dead or live oil, dry gas.
//!
//! Tables are given in terms of formation volume factors `B` and stored as
//! shrinkage factors `b = 1/B`. All interpolation is piecewise linear in `b`
//! and `mu`; below a table the first value is held, above it the last
//! segment is continued.

use thiserror::Error;

use crate::autodiff::Scalar;
use crate::table::{Extrapolation, Table1D, TableError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Water = 0,
    Oil = 1,
    Gas = 2,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Water, Phase::Oil, Phase::Gas];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Water => "water",
            Phase::Oil => "oil",
            Phase::Gas => "gas",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PvtError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("{table}: non-positive {what} at row {row}")]
    NonPositive {
        table: &'static str,
        what: &'static str,
        row: usize,
    },
    #[error("{table}: dissolved gas ratio decreases at record {row}")]
    RsDecreasing { table: &'static str, row: usize },
    #[error("{table}: record {row} has no rows")]
    EmptyRecord { table: &'static str, row: usize },
}

/// Surface densities in kg/m3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceDensities {
    pub water: f64,
    pub oil: f64,
    pub gas: f64,
}

impl SurfaceDensities {
    pub fn of(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Water => self.water,
            Phase::Oil => self.oil,
            Phase::Gas => self.gas,
        }
    }
}

/// Water with constant compressibility and viscosibility.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterPvt {
    pub reference_pressure: f64,
    /// `B_w` at the reference pressure.
    pub reference_fvf: f64,
    pub compressibility: f64,
    pub reference_viscosity: f64,
    pub viscosibility: f64,
}

impl WaterPvt {
    pub fn new(
        reference_pressure: f64,
        reference_fvf: f64,
        compressibility: f64,
        reference_viscosity: f64,
        viscosibility: f64,
    ) -> Result<Self, PvtError> {
        if !(reference_fvf > 0.0) {
            return Err(PvtError::NonPositive {
                table: "PVTW",
                what: "formation volume factor",
                row: 0,
            });
        }
        if !(reference_viscosity > 0.0) {
            return Err(PvtError::NonPositive {
                table: "PVTW",
                what: "viscosity",
                row: 0,
            });
        }
        Ok(Self {
            reference_pressure,
            reference_fvf,
            compressibility,
            reference_viscosity,
            viscosibility,
        })
    }

    /// `(b_w, mu_w)` at water pressure `p`.
    ///
    /// `b_w = b_ref (1 + X + X^2/2)` with `X = c_w (p - p_ref)`, and
    /// `mu_w = mu_ref (1 + X + X^2/2) / (1 + Y + Y^2/2)` with
    /// `Y = (c_w - c_mu)(p - p_ref)`.
    pub fn props<S: Scalar>(&self, p: S) -> (S, S) {
        let dp = p - self.reference_pressure;
        let x = dp * self.compressibility;
        let series_x = x * (x * 0.5 + 1.0) + 1.0;
        let b = series_x * (1.0 / self.reference_fvf);
        let y = dp * (self.compressibility - self.viscosibility);
        let series_y = y * (y * 0.5 + 1.0) + 1.0;
        let mu = series_x / series_y * self.reference_viscosity;
        (b, mu)
    }
}

/// Tabulated `b(p)` and `mu(p)`; used for dead oil and dry gas.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedPvt {
    b: Table1D,
    mu: Table1D,
}

impl TabulatedPvt {
    /// Rows of `(p, B, mu)`.
    pub fn new(table: &'static str, rows: &[[f64; 3]]) -> Result<Self, PvtError> {
        for (row, r) in rows.iter().enumerate() {
            if !(r[1] > 0.0) {
                return Err(PvtError::NonPositive {
                    table,
                    what: "formation volume factor",
                    row,
                });
            }
            if !(r[2] > 0.0) {
                return Err(PvtError::NonPositive {
                    table,
                    what: "viscosity",
                    row,
                });
            }
        }
        let p: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let ext = Extrapolation::ConstantBelowLinearAbove;
        Ok(Self {
            b: Table1D::new(
                format!("{table} b"),
                p.clone(),
                rows.iter().map(|r| 1.0 / r[1]).collect(),
                ext,
            )?,
            mu: Table1D::new(format!("{table} mu"), p, rows.iter().map(|r| r[2]).collect(), ext)?,
        })
    }

    pub fn props<S: Scalar>(&self, p: S) -> (S, S) {
        (self.b.eval(p), self.mu.eval(p))
    }

    pub fn pressures(&self) -> &[f64] {
        self.b.xs()
    }
}

pub type DeadOilPvt = TabulatedPvt;
pub type DryGasPvt = TabulatedPvt;

/// One PVTO record: dissolved gas ratio and rows `(p, B_o, mu_o)`, the first
/// row being the saturated (bubble point) state.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveOilRecord {
    pub rs: f64,
    pub rows: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
struct UndersaturatedBranch {
    rs: f64,
    p_bub: f64,
    b_bub: f64,
    mu_bub: f64,
    b: Table1D,
    mu: Table1D,
}

/// Live oil with dissolved gas.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveOilPvt {
    rs_sat: Table1D,
    b_sat: Table1D,
    mu_sat: Table1D,
    branches: Vec<UndersaturatedBranch>,
}

impl LiveOilPvt {
    pub fn new(records: &[LiveOilRecord]) -> Result<Self, PvtError> {
        const T: &str = "PVTO";
        if records.is_empty() {
            return Err(TableError::Empty { name: T.into() }.into());
        }
        for (row, rec) in records.iter().enumerate() {
            if rec.rows.is_empty() {
                return Err(PvtError::EmptyRecord { table: T, row });
            }
            if row > 0 && rec.rs < records[row - 1].rs {
                return Err(PvtError::RsDecreasing { table: T, row });
            }
            for r in &rec.rows {
                if !(r[1] > 0.0) {
                    return Err(PvtError::NonPositive {
                        table: T,
                        what: "formation volume factor",
                        row,
                    });
                }
                if !(r[2] > 0.0) {
                    return Err(PvtError::NonPositive {
                        table: T,
                        what: "viscosity",
                        row,
                    });
                }
            }
        }

        let p_bub: Vec<f64> = records.iter().map(|r| r.rows[0][0]).collect();
        let ext = Extrapolation::ConstantBelowLinearAbove;
        let rs_sat = Table1D::new("PVTO rs", p_bub.clone(), records.iter().map(|r| r.rs).collect(), ext)?;
        let b_sat = Table1D::new(
            "PVTO saturated b",
            p_bub.clone(),
            records.iter().map(|r| 1.0 / r.rows[0][1]).collect(),
            ext,
        )?;
        let mu_sat = Table1D::new(
            "PVTO saturated mu",
            p_bub,
            records.iter().map(|r| r.rows[0][2]).collect(),
            ext,
        )?;

        // Records without undersaturated rows borrow the relative shape of the
        // nearest record above (else below) that has them.
        let donors: Vec<usize> = (0..records.len()).filter(|&i| records[i].rows.len() > 1).collect();
        let mut branches = Vec::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            let rows: Vec<[f64; 3]> = if rec.rows.len() > 1 || donors.is_empty() {
                rec.rows.clone()
            } else {
                let d = donors
                    .iter()
                    .copied()
                    .find(|&d| d > i)
                    .unwrap_or(*donors.last().unwrap());
                let donor = &records[d].rows;
                let sat = rec.rows[0];
                let base = donor[0];
                std::iter::once(sat)
                    .chain(donor[1..].iter().map(|r| {
                        [
                            sat[0] + (r[0] - base[0]),
                            sat[1] * r[1] / base[1],
                            sat[2] * r[2] / base[2],
                        ]
                    }))
                    .collect()
            };
            let p: Vec<f64> = rows.iter().map(|r| r[0]).collect();
            branches.push(UndersaturatedBranch {
                rs: rec.rs,
                p_bub: rows[0][0],
                b_bub: 1.0 / rows[0][1],
                mu_bub: rows[0][2],
                b: Table1D::new(
                    format!("PVTO branch {i} b"),
                    p.clone(),
                    rows.iter().map(|r| 1.0 / r[1]).collect(),
                    Extrapolation::Linear,
                )?,
                mu: Table1D::new(
                    format!("PVTO branch {i} mu"),
                    p,
                    rows.iter().map(|r| r[2]).collect(),
                    Extrapolation::Linear,
                )?,
            });
        }
        Ok(Self {
            rs_sat,
            b_sat,
            mu_sat,
            branches,
        })
    }

    /// Dissolution capacity `r_s(p)`.
    pub fn saturated_rs<S: Scalar>(&self, p: S) -> S {
        self.rs_sat.eval(p)
    }

    pub fn bubble_point_pressures(&self) -> &[f64] {
        self.rs_sat.xs()
    }

    pub fn saturated_rs_nodes(&self) -> &[f64] {
        self.rs_sat.ys()
    }

    /// `(b_o, mu_o)`; when `saturated` the ratio `r_go` is ignored.
    pub fn props<S: Scalar>(&self, p: S, r_go: S, saturated: bool) -> (S, S) {
        if saturated {
            return (self.b_sat.eval(p), self.mu_sat.eval(p));
        }
        let rv = r_go.value();
        let n = self.branches.len();
        if n == 1 {
            let br = &self.branches[0];
            return (br.b.eval(p), br.mu.eval(p));
        }
        // Bracketing pair, extrapolating with the end pairs. Each branch is
        // read at the same distance above its own bubble point and
        // normalised by its saturated value, so r_go = r_s(p) reproduces the
        // saturated curve between nodes as well as at them.
        let upper = self.branches.partition_point(|br| br.rs <= rv).clamp(1, n - 1);
        let (lo, hi) = (&self.branches[upper - 1], &self.branches[upper]);
        if rv > self.branches[n - 1].rs || rv < self.branches[0].rs {
            log::debug!("PVTO: dissolved gas ratio {rv:e} outside tabulated range");
        }
        let w = (r_go - lo.rs) / (hi.rs - lo.rs);
        let one_minus_w = -w + 1.0;
        let p_bub = w * (hi.p_bub - lo.p_bub) + lo.p_bub;
        let dp = p - p_bub;
        let shape = |br: &UndersaturatedBranch| {
            let q = dp + br.p_bub;
            (br.b.eval(q) / br.b_bub, br.mu.eval(q) / br.mu_bub)
        };
        let (fb_lo, fm_lo) = shape(lo);
        let (fb_hi, fm_hi) = shape(hi);
        let b_bub = w * (hi.b_bub - lo.b_bub) + lo.b_bub;
        let mu_bub = w * (hi.mu_bub - lo.mu_bub) + lo.mu_bub;
        let b = b_bub * (fb_lo * one_minus_w + fb_hi * w);
        let mu = mu_bub * (fm_lo * one_minus_w + fm_hi * w);
        (b, mu)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OilPvt {
    Dead(DeadOilPvt),
    Live(LiveOilPvt),
}

impl OilPvt {
    pub fn is_live(&self) -> bool {
        matches!(self, OilPvt::Live(_))
    }

    pub fn saturated_rs<S: Scalar>(&self, p: S) -> S {
        match self {
            OilPvt::Dead(_) => S::from_f64(0.0),
            OilPvt::Live(live) => live.saturated_rs(p),
        }
    }

    pub fn props<S: Scalar>(&self, p: S, r_go: S, saturated: bool) -> (S, S) {
        match self {
            OilPvt::Dead(dead) => dead.props(p),
            OilPvt::Live(live) => live.props(p, r_go, saturated),
        }
    }
}

/// Complete single-region fluid description.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidSystem {
    pub water: WaterPvt,
    pub oil: OilPvt,
    pub gas: DryGasPvt,
    pub densities: SurfaceDensities,
}

impl FluidSystem {
    /// Reservoir density of `phase` from its shrinkage factor.
    pub fn phase_density<S: Scalar>(&self, phase: Phase, b: S, r_go: S) -> S {
        phase_density(&self.densities, phase, b, r_go)
    }

    /// Oil density at saturated or given dissolved gas.
    pub fn oil_density<S: Scalar>(&self, p: S, r_go: Option<S>) -> S {
        let rs = self.oil.saturated_rs(p);
        let (r, saturated) = match r_go {
            Some(r) if r.value() < rs.value() => (r, false),
            _ => (rs, true),
        };
        let (b, _) = self.oil.props(p, r, saturated);
        self.phase_density(Phase::Oil, b, r)
    }

    pub fn water_density<S: Scalar>(&self, p: S) -> S {
        let (b, _) = self.water.props(p);
        self.phase_density(Phase::Water, b, S::from_f64(0.0))
    }

    pub fn gas_density<S: Scalar>(&self, p: S) -> S {
        let (b, _) = self.gas.props(p);
        self.phase_density(Phase::Gas, b, S::from_f64(0.0))
    }
}

/// `rho_w = b_w rho_Sw`, `rho_o = b_o (rho_So + r_go rho_Sg)`, `rho_g = b_g rho_Sg`.
pub fn phase_density<S: Scalar>(densities: &SurfaceDensities, phase: Phase, b: S, r_go: S) -> S {
    match phase {
        Phase::Water => b * densities.water,
        Phase::Oil => b * (r_go * densities.gas + densities.oil),
        Phase::Gas => b * densities.gas,
    }
}
