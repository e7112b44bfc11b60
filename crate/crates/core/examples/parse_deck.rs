//! Parses a deck (SPE1 unless a path is given), prints the normalized
//! keyword listing and the resolved case in SI units.

use std::path::PathBuf;

use blackoil::deck::{build_case, parse_file, ParseOptions, Registry};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("decks/SPE1.DATA"));
    let reg = Registry::bundled();
    let parsed = parse_file(&path, &reg, ParseOptions::default())?;
    for w in &parsed.warnings {
        eprintln!("{w}");
    }
    println!("{}", parsed.deck.pretty(&reg));
    let case = build_case(&parsed.deck, &reg)?;
    print!("{}", case.summary_dump());
    Ok(())
}
