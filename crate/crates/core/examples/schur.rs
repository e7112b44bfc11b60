//! Eliminating a well from a one-cell coupled system and recovering its
//! unknowns afterwards.

use blackoil::linalg::{Block, BlockCsr, BlockVector, LinearOperator};
use blackoil::wells::{recover_well_solution, schur_rhs, SchurOperator, WellBlocks};
use nalgebra::{Matrix3x4, Matrix4, Matrix4x3, Vector4};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a = BlockCsr::from_triplets(1, &[(0, 0, Block::identity() * 2.0)])?;
    let mut b = Matrix4x3::zeros();
    b[(0, 0)] = 1.0;
    let mut c = Matrix3x4::zeros();
    c[(0, 0)] = 1.0;
    let d = Matrix4::from_diagonal(&Vector4::new(4.0, 1.0, 1.0, 1.0));
    let well = WellBlocks::new("W", vec![0], vec![b], vec![c], d, Vector4::new(2.0, 0.0, 0.0, 0.0))?;
    let wells = [well];

    let r_r = BlockVector::from_flat(&[1.0, 0.0, 0.0]);
    let rhs = schur_rhs(&r_r, &wells);
    let op = SchurOperator { a: &a, wells: &wells };
    let mut unit = BlockVector::from_flat(&[1.0, 0.0, 0.0]);
    let mut s = BlockVector::zeros(1);
    op.apply(&unit, &mut s);
    println!("reduced coefficient {} and right-hand side {}", s[0][0], rhs[0][0]);

    unit[0][0] = rhs[0][0] / s[0][0];
    unit[0][1] = rhs[0][1] / 2.0;
    unit[0][2] = rhs[0][2] / 2.0;
    let x_w = recover_well_solution(&unit, &wells[0]);
    println!("x_r = {:.6} (2/7), x_w = {:.6} (3/7)", unit[0][0], x_w[0]);
    Ok(())
}
