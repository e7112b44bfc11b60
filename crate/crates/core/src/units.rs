//! Unit systems of input decks and their conversion to SI.
//!
//! Every quantity inside the simulator is SI. Deck values are converted once,
//! when the simulation case is built, and converted back only when results
//! are written.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const FEET: f64 = 0.3048;
pub const PSI: f64 = 6894.757_293_168_361;
pub const BAR: f64 = 1.0e5;
pub const DAY: f64 = 86_400.0;
pub const CENTIPOISE: f64 = 1.0e-3;
pub const MILLIDARCY: f64 = 9.869_233e-16;
pub const STB: f64 = 0.158_987_294_928;
/// One thousand standard cubic feet.
pub const MSCF: f64 = 28.316_846_592;
pub const POUND: f64 = 0.453_592_37;
pub const GRAVITY: f64 = 9.806_65;

/// Physical dimension of a deck item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Dimensionless,
    Length,
    Pressure,
    Compressibility,
    Permeability,
    Viscosity,
    Density,
    Time,
    LiquidSurfaceRate,
    GasSurfaceRate,
    GasDissolutionFactor,
    OilFvf,
    WaterFvf,
    GasFvf,
    Transmissibility,
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use Dimension::*;
        Ok(match s {
            "1" | "Dimensionless" => Dimensionless,
            "Length" => Length,
            "Pressure" => Pressure,
            "Compressibility" => Compressibility,
            "Permeability" => Permeability,
            "Viscosity" => Viscosity,
            "Density" => Density,
            "Time" => Time,
            "LiquidSurfaceRate" => LiquidSurfaceRate,
            "GasSurfaceRate" => GasSurfaceRate,
            "GasDissolutionFactor" => GasDissolutionFactor,
            "OilFvf" => OilFvf,
            "WaterFvf" => WaterFvf,
            "GasFvf" => GasFvf,
            "Transmissibility" => Transmissibility,
            other => return Err(format!("unknown dimension '{other}'")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnitSystem {
    #[default]
    Field,
    Metric,
}

impl fmt::Display for UnitSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitSystem::Field => write!(f, "FIELD"),
            UnitSystem::Metric => write!(f, "METRIC"),
        }
    }
}

impl UnitSystem {
    /// SI value of one deck unit of `dim`.
    pub fn factor(self, dim: Dimension) -> f64 {
        use Dimension::*;
        match self {
            UnitSystem::Field => match dim {
                Dimensionless | OilFvf | WaterFvf => 1.0,
                Length => FEET,
                Pressure => PSI,
                Compressibility => 1.0 / PSI,
                Permeability => MILLIDARCY,
                Viscosity => CENTIPOISE,
                Density => POUND / (FEET * FEET * FEET),
                Time => DAY,
                LiquidSurfaceRate => STB / DAY,
                GasSurfaceRate => MSCF / DAY,
                GasDissolutionFactor => MSCF / STB,
                GasFvf => STB / MSCF,
                Transmissibility => CENTIPOISE * STB / (DAY * PSI),
            },
            UnitSystem::Metric => match dim {
                Dimensionless | OilFvf | WaterFvf | GasFvf | GasDissolutionFactor => 1.0,
                Length => 1.0,
                Pressure => BAR,
                Compressibility => 1.0 / BAR,
                Permeability => MILLIDARCY,
                Viscosity => CENTIPOISE,
                Density => 1.0,
                Time => DAY,
                LiquidSurfaceRate | GasSurfaceRate => 1.0 / DAY,
                Transmissibility => CENTIPOISE / (DAY * BAR),
            },
        }
    }

    pub fn to_si(self, dim: Dimension, value: f64) -> f64 {
        value * self.factor(dim)
    }

    pub fn from_si(self, dim: Dimension, value: f64) -> f64 {
        value / self.factor(dim)
    }

    /// Unit label used in output headers.
    pub fn label(self, dim: Dimension) -> &'static str {
        use Dimension::*;
        match (self, dim) {
            (_, Dimensionless) => "",
            (UnitSystem::Field, Length) => "FT",
            (UnitSystem::Field, Pressure) => "PSIA",
            (UnitSystem::Field, Time) | (UnitSystem::Metric, Time) => "DAYS",
            (UnitSystem::Field, LiquidSurfaceRate) => "STB/DAY",
            (UnitSystem::Field, GasSurfaceRate) => "MSCF/DAY",
            (UnitSystem::Field, GasDissolutionFactor) => "MSCF/STB",
            (UnitSystem::Metric, Length) => "M",
            (UnitSystem::Metric, Pressure) => "BARSA",
            (UnitSystem::Metric, LiquidSurfaceRate) => "SM3/DAY",
            (UnitSystem::Metric, GasSurfaceRate) => "SM3/DAY",
            (UnitSystem::Metric, GasDissolutionFactor) => "SM3/SM3",
            _ => "",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_round_trip_is_exact_to_rounding() {
        let dims = [
            Dimension::Length,
            Dimension::Pressure,
            Dimension::Compressibility,
            Dimension::Permeability,
            Dimension::Viscosity,
            Dimension::Density,
            Dimension::Time,
            Dimension::LiquidSurfaceRate,
            Dimension::GasSurfaceRate,
            Dimension::GasDissolutionFactor,
            Dimension::GasFvf,
            Dimension::Transmissibility,
        ];
        for sys in [UnitSystem::Field, UnitSystem::Metric] {
            for dim in dims {
                for v in [1.0, 4800.0, 0.0533, 1.27, 3.0e-6, 1e5] {
                    let back = sys.from_si(dim, sys.to_si(dim, v));
                    assert!((back - v).abs() <= 1e-12 * v.abs(), "{dim:?} {v} {back}");
                }
            }
        }
    }

    #[test]
    fn known_conversions() {
        let f = UnitSystem::Field;
        assert!((f.to_si(Dimension::Pressure, 14.7) - 101_352.93).abs() < 0.01);
        assert!((f.to_si(Dimension::Density, 62.428) - 1000.0).abs() < 0.01);
        // 1 Mscf/stb is about 178.1 sm3/sm3.
        assert!((f.to_si(Dimension::GasDissolutionFactor, 1.0) - 178.107_6).abs() < 1e-3);
    }
}
