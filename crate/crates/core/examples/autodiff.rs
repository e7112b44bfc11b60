//! Forward-mode derivatives of a small expression in three variables.

use blackoil::autodiff::{Elementary, Eval3};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = Eval3::variable(2.0e7, 0)?;
    let sw = Eval3::variable(0.3, 1)?;
    let sg = Eval3::variable(0.1, 2)?;

    // compressible oil volume times a power-law relative permeability
    let b = (p * 1e-9 - 0.02).exp();
    let so = 1.0 - sw - sg;
    let kr = so.apply(Elementary::Powf(2.5))?;
    let f = b * kr;

    println!("f        = {:.6e}", f.value());
    for (i, name) in ["p", "sw", "sg"].iter().enumerate() {
        println!("df/d{name:<3} = {:.6e}", f.derivative(i));
    }

    match Eval3::constant(-1.0).apply(Elementary::Ln) {
        Ok(_) => unreachable!(),
        Err(e) => println!("checked ln(-1): {e}"),
    }
    Ok(())
}
