//! Cartesian grid geometry and two-point transmissibilities.

use blackoil::grid::{half_transmissibility, transmissibility, CartesianSpec, Grid};
use blackoil::units::{FEET, MILLIDARCY};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let t = half_transmissibility(1.0, [0.5; 3], [1.0, 0.5, 0.5], [1.0, 0.0, 0.0], [1.0; 3])?;
    println!("unit cube: t = {t}, T = {}", transmissibility(t, t));

    let spec = CartesianSpec::layered([3, 1, 2], 100.0 * FEET, 100.0 * FEET, &[10.0 * FEET, 30.0 * FEET], 2500.0);
    let perm = [
        [100.0, 100.0, 10.0],
        [100.0, 100.0, 10.0],
        [100.0, 100.0, 10.0],
        [400.0, 400.0, 40.0],
        [400.0, 400.0, 40.0],
        [400.0, 400.0, 40.0],
    ]
    .map(|k| k.map(|v| v * MILLIDARCY));
    let grid = Grid::build_cartesian(&spec, &perm)?;
    for c in grid.connections() {
        println!("{:?} {:?}: T = {:.4e} m3, dz = {:+.2} m", c.kind, c.cells, c.trans, c.dz);
    }
    Ok(())
}
