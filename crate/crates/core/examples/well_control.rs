//! A rate-controlled producer that cannot deliver its target switches to
//! its bottom-hole pressure limit.

use blackoil::deck::{build_case, parse_str, MemoryResolver, ParseOptions, Registry};
use blackoil::nonlinear::{run_schedule, NewtonConfig, TimestepControl};
use blackoil::units::{Dimension, UnitSystem, DAY};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/decks/MINI.DATA"))?
        .replace("DX\n  100 /\nDY\n  100 /", "DX\n  2000 /\nDY\n  2000 /")
        .replace("'ORAT' 10 4* 500", "'ORAT' 300 4* 2500")
        .replace("TSTEP\n  10 /", "TSTEP\n  10*30 /");
    let reg = Registry::bundled();
    let deck = parse_str(&text, "MINI.DATA", &reg, &MemoryResolver::default(), ParseOptions::default())?.deck;
    let case = build_case(&deck, &reg)?;
    let field = UnitSystem::Field;
    let results = run_schedule(
        case.reservoir(),
        case.initial_state()?,
        &case.schedule,
        &NewtonConfig::default(),
        &TimestepControl::default(),
        &mut |rec| {
            for w in &rec.wells {
                println!(
                    "day {:>4.0}: {} {:?} bhp {:.2} psia, oil {:.2} stb/d",
                    rec.time / DAY,
                    w.name,
                    w.mode,
                    field.from_si(Dimension::Pressure, w.bhp),
                    field.from_si(Dimension::LiquidSurfaceRate, w.production()[1])
                );
            }
        },
    )?;
    for (t, e) in &results.control_events {
        println!("switch at day {:.3}: {:?} -> {:?}", t / DAY, e.switch.from, e.switch.to);
    }
    Ok(())
}
