//! Hydrostatic initialization of a column with a gas cap and an aquifer.

use blackoil::deck::{build_case, parse_str, MemoryResolver, ParseOptions, Registry};
use blackoil::units::{Dimension, UnitSystem};

const DECK: &str = "RUNSPEC
DIMENS
 1 1 12 /
OIL
WATER
GAS
DISGAS
FIELD
GRID
DX
 12*500 /
DY
 12*500 /
DZ
 12*15 /
TOPS
 7000 /
PORO
 12*0.2 /
PERMX
 12*100 /
PROPS
PVTW
 4000 1.02 3E-6 0.4 0 /
ROCK
 4000 4E-6 /
SWOF
 0.15 0    1   6
 0.4  0.05 0.4 2
 0.7  0.3  0.05 0.5
 1.0  1.0  0   0 /
SGOF
 0    0    1   0
 0.4  0.3  0.1 0.5
 0.85 1    0   1 /
DENSITY
 50 64 0.06 /
PVDG
 1000 2.8  0.014
 5000 0.65 0.031 /
PVTO
 0.4 1000 1.25 1.0 /
 1.4 5000 1.7  0.5
     7000 1.66 0.6 /
/
SOLUTION
EQUIL
 7090 4000 7140 0 7045 0 /
SCHEDULE
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reg = Registry::bundled();
    let deck = parse_str(DECK, "COLUMN.DATA", &reg, &MemoryResolver::default(), ParseOptions::default())?.deck;
    let case = build_case(&deck, &reg)?;
    let state = case.initial_state()?;
    let field = UnitSystem::Field;
    println!("{:>8} {:>9} {:>6} {:>6} {:>6} {:>7}", "depth ft", "po psia", "Sw", "So", "Sg", "Rs");
    for (pv, cell) in state.iter().zip(case.reservoir.grid.cells()) {
        let s = case.reservoir.cell_values(*pv);
        println!(
            "{:>8.1} {:>9.2} {:>6.3} {:>6.3} {:>6.3} {:>7.3}",
            field.from_si(Dimension::Length, cell.depth),
            field.from_si(Dimension::Pressure, pv.po),
            s.saturation[0],
            s.saturation[1],
            s.saturation[2],
            field.from_si(Dimension::GasDissolutionFactor, s.rgo),
        );
    }
    Ok(())
}
