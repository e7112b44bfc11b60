//! Live-oil properties from a deck: saturated and undersaturated branches.

use std::path::Path;

use blackoil::deck::{build_case, parse_file, ParseOptions, Registry};
use blackoil::units::{Dimension, UnitSystem};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reg = Registry::bundled();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("decks/SPE1.DATA");
    let case = build_case(&parse_file(&path, &reg, ParseOptions::default())?.deck, &reg)?;
    let oil = &case.reservoir.fluid.oil;
    let field = UnitSystem::Field;

    println!("{:>8} {:>10} {:>8} {:>8}", "p psia", "Rs", "Bo", "mu_o cP");
    for p_psi in [500.0, 1500.0, 2500.0, 3500.0, 4500.0] {
        let p = field.to_si(Dimension::Pressure, p_psi);
        let rs: f64 = oil.saturated_rs(p);
        let (b, mu) = oil.props(p, rs, true);
        println!(
            "{p_psi:>8.0} {:>10.4} {:>8.4} {:>8.4}",
            field.from_si(Dimension::GasDissolutionFactor, rs),
            1.0 / b,
            field.from_si(Dimension::Viscosity, mu)
        );
    }

    // oil holding the gas dissolved at 4014.7 psia, compressed above it
    let rs = field.to_si(Dimension::GasDissolutionFactor, 1.27);
    println!("undersaturated, Rs = 1.27 Mscf/stb:");
    for p_psi in [4014.7, 6000.0, 8000.0] {
        let (b, mu) = oil.props(field.to_si(Dimension::Pressure, p_psi), rs, false);
        println!("{p_psi:>8.1} Bo {:.4} mu_o {:.4}", 1.0 / b, field.from_si(Dimension::Viscosity, mu));
    }
    Ok(())
}
