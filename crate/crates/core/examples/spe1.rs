//! Runs the bundled SPE1 deck and prints a yearly table of field pressure
//! and producer behaviour.

use std::path::Path;
use std::time::Instant;

use blackoil::deck::{build_case, parse_file, ParseOptions, Registry};
use blackoil::nonlinear::{run_schedule, NewtonConfig, TimestepControl};
use blackoil::units::{Dimension, UnitSystem, DAY};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reg = Registry::bundled();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("decks/SPE1.DATA");
    let case = build_case(&parse_file(&path, &reg, ParseOptions::default())?.deck, &reg)?;
    let field = UnitSystem::Field;
    let start = Instant::now();

    println!("{:>6} {:>9} {:>9} {:>9} {:>7}", "day", "FPR", "WBHP", "WOPR", "WGOR");
    let mut on_report = |rec: &blackoil::nonlinear::ReportRecord| {
        let Some(prod) = rec.wells.iter().find(|w| w.name == "PROD") else { return };
        if rec.index % 7 != 0 {
            return;
        }
        println!(
            "{:>6.0} {:>9.1} {:>9.1} {:>9.1} {:>7.3}",
            rec.time / DAY,
            field.from_si(Dimension::Pressure, rec.field_pressure),
            field.from_si(Dimension::Pressure, prod.bhp),
            field.from_si(Dimension::LiquidSurfaceRate, prod.production()[1]),
            field.from_si(Dimension::GasDissolutionFactor, prod.gas_oil_ratio()),
        );
    };
    let results = run_schedule(
        case.reservoir(),
        case.initial_state()?,
        &case.schedule,
        &NewtonConfig::default(),
        &TimestepControl::default(),
        &mut on_report,
    )?;

    for (t, e) in &results.control_events {
        println!("day {:.1}: {} {:?} -> {:?}", t / DAY, e.well, e.switch.from, e.switch.to);
    }
    let newton: usize = results.substeps.iter().map(|s| s.step.newton_iterations).sum();
    println!(
        "{} substeps, {newton} Newton iterations, {} cells gained free gas, balance error {:.1e}, {:.2} s",
        results.substeps.len(),
        results.variable_switches.to_sg,
        results.material_balance_error(case.reservoir()).iter().fold(0.0f64, |a, b| a.max(*b)),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
