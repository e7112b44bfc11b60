//! Relative permeability and capillary pressure from two-phase tables.
//!
//! The water-oil table is indexed by `s_w`, the gas-oil table by `s_g`
//! (with connate water present). Three-phase oil relative permeability
//! combines the two oil curves assuming the water and gas zones of a cell are
//! segregated.

use thiserror::Error;

use crate::autodiff::Scalar;
use crate::table::{Extrapolation, Table1D, TableError};

/// Below this weight the segregation formula falls back to the water-oil curve.
pub const SEGREGATION_EPSILON: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum SatFuncError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("{table}: saturation {value} at row {row} outside [0, 1]")]
    SaturationRange {
        table: &'static str,
        row: usize,
        value: f64,
    },
    #[error("{table}: relative permeability {value} at row {row} outside [0, 1]")]
    RelpermRange {
        table: &'static str,
        row: usize,
        value: f64,
    },
    #[error("{table}: column '{column}' is not {expected} at row {row}")]
    NotMonotone {
        table: &'static str,
        column: &'static str,
        expected: &'static str,
        row: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelPermCurve {
    /// `k_rw(s_w)`
    Water,
    /// `k_row(s_w)` from the water-oil table
    OilInWater,
    /// `k_rg(s_g)`
    Gas,
    /// `k_rog(s_g)` from the gas-oil table
    OilInGas,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapillaryCurve {
    /// `p_cow(s_w) = p_o - p_w`
    OilWater,
    /// `p_cog(s_g) = p_g - p_o`
    OilGas,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SatTables {
    krw: Table1D,
    krow: Table1D,
    pcow: Table1D,
    krg: Table1D,
    krog: Table1D,
    pcog: Table1D,
}

fn check_rows(
    table: &'static str,
    rows: &[[f64; 4]],
    columns: [&'static str; 3],
    increasing: [bool; 3],
) -> Result<(), SatFuncError> {
    for (row, r) in rows.iter().enumerate() {
        if !(0.0..=1.0).contains(&r[0]) {
            return Err(SatFuncError::SaturationRange {
                table,
                row,
                value: r[0],
            });
        }
        for &kr in &r[1..3] {
            if !(0.0..=1.0).contains(&kr) {
                return Err(SatFuncError::RelpermRange {
                    table,
                    row,
                    value: kr,
                });
            }
        }
        if row == 0 {
            continue;
        }
        let prev = rows[row - 1];
        for c in 0..3 {
            let ok = if increasing[c] {
                r[c + 1] >= prev[c + 1]
            } else {
                r[c + 1] <= prev[c + 1]
            };
            if !ok {
                return Err(SatFuncError::NotMonotone {
                    table,
                    column: columns[c],
                    expected: if increasing[c] {
                        "non-decreasing"
                    } else {
                        "non-increasing"
                    },
                    row,
                });
            }
        }
    }
    Ok(())
}

fn column(table: &str, name: &str, rows: &[[f64; 4]], c: usize) -> Result<Table1D, TableError> {
    Table1D::new(
        format!("{table} {name}"),
        rows.iter().map(|r| r[0]).collect(),
        rows.iter().map(|r| r[c]).collect(),
        Extrapolation::Constant,
    )
}

impl SatTables {
    /// `swof` rows are `(s_w, k_rw, k_row, p_cow)`, `sgof` rows are
    /// `(s_g, k_rg, k_rog, p_cog)`.
    pub fn new(swof: &[[f64; 4]], sgof: &[[f64; 4]]) -> Result<Self, SatFuncError> {
        check_rows("SWOF", swof, ["krw", "krow", "pcow"], [true, false, false])?;
        check_rows("SGOF", sgof, ["krg", "krog", "pcog"], [true, false, true])?;
        Ok(Self {
            krw: column("SWOF", "krw", swof, 1)?,
            krow: column("SWOF", "krow", swof, 2)?,
            pcow: column("SWOF", "pcow", swof, 3)?,
            krg: column("SGOF", "krg", sgof, 1)?,
            krog: column("SGOF", "krog", sgof, 2)?,
            pcog: column("SGOF", "pcog", sgof, 3)?,
        })
    }

    /// Connate water saturation, the first water-oil table entry.
    pub fn swco(&self) -> f64 {
        self.krw.first_x()
    }

    pub fn sw_max(&self) -> f64 {
        self.krw.last_x()
    }

    pub fn sg_max(&self) -> f64 {
        self.krg.last_x()
    }

    fn curve(&self, which: RelPermCurve) -> &Table1D {
        match which {
            RelPermCurve::Water => &self.krw,
            RelPermCurve::OilInWater => &self.krow,
            RelPermCurve::Gas => &self.krg,
            RelPermCurve::OilInGas => &self.krog,
        }
    }

    /// Table lookup, clamped to the table's saturation range.
    pub fn relperm_two_phase<S: Scalar>(&self, which: RelPermCurve, s: S) -> S {
        self.curve(which).eval(s)
    }

    /// `k_row` as a function of oil saturation in the water-oil system.
    pub fn krow_of_so<S: Scalar>(&self, so: S) -> S {
        self.krow.eval(-so + 1.0)
    }

    /// `k_rog` as a function of oil saturation in the gas-oil-connate water system.
    pub fn krog_of_so<S: Scalar>(&self, so: S) -> S {
        self.krog.eval(-so + (1.0 - self.swco()))
    }

    /// Three-phase oil relative permeability,
    /// `((s_w - s_wco) k_row(s_o) + s_g k_rog(s_o)) / (s_w - s_wco + s_g)`.
    pub fn kro_three_phase<S: Scalar>(&self, sw: S, sg: S, so: S) -> S {
        let krow = self.krow_of_so(so);
        let zero = S::from_f64(0.0);
        let w_water = (sw - self.swco()).max(zero);
        let w_gas = sg.max(zero);
        let denom = w_water + w_gas;
        if denom.value() < SEGREGATION_EPSILON {
            return krow;
        }
        let krog = self.krog_of_so(so);
        (w_water * krow + w_gas * krog) / denom
    }

    pub fn capillary<S: Scalar>(&self, which: CapillaryCurve, s: S) -> S {
        match which {
            CapillaryCurve::OilWater => self.pcow.eval(s),
            CapillaryCurve::OilGas => self.pcog.eval(s),
        }
    }

    pub fn capillary_table(&self, which: CapillaryCurve) -> &Table1D {
        match which {
            CapillaryCurve::OilWater => &self.pcow,
            CapillaryCurve::OilGas => &self.pcog,
        }
    }
}
