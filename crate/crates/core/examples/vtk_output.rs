//! Writes the equilibrated SPE1 state as a legacy VTK file.

use std::path::Path;

use blackoil::deck::{build_case, parse_file, ParseOptions, Registry};
use blackoil::nonlinear::{field_pressure, ReportRecord};
use blackoil::output::{write_vtk, FieldSnapshot, VtkLayout};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reg = Registry::bundled();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("decks/SPE1.DATA");
    let case = build_case(&parse_file(&path, &reg, ParseOptions::default())?.deck, &reg)?;
    let cells = case.initial_state()?;
    let record = ReportRecord {
        index: 0,
        time: 0.0,
        field_pressure: field_pressure(case.reservoir(), &cells),
        cells,
        wells: Vec::new(),
    };
    let layout = VtkLayout::new(&case.grid_spec, case.reservoir(), case.units);
    let snapshot = FieldSnapshot::from_record(case.reservoir(), &layout, &record);
    let out = std::env::temp_dir();
    let file = write_vtk(&out, "SPE1", &layout, &snapshot)?;
    println!("wrote {}", file.display());
    Ok(())
}
