//! ILU0-preconditioned BiCGStab on a block Laplacian.

use blackoil::linalg::{bicgstab, Block, BlockCsr, BlockVector, IdentityPreconditioner, Ilu0, SolverConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (nx, ny) = (30, 30);
    let id = |i: usize, j: usize| i + nx * j;
    let mut triplets = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let mut diag = Block::identity() * 4.0;
            diag[(0, 1)] = 0.5;
            diag[(2, 0)] = -0.3;
            triplets.push((id(i, j), id(i, j), diag));
            let coupling = -Block::identity();
            if i > 0 {
                triplets.push((id(i, j), id(i - 1, j), coupling));
            }
            if i + 1 < nx {
                triplets.push((id(i, j), id(i + 1, j), coupling));
            }
            if j > 0 {
                triplets.push((id(i, j), id(i, j - 1), coupling));
            }
            if j + 1 < ny {
                triplets.push((id(i, j), id(i, j + 1), coupling));
            }
        }
    }
    let a = BlockCsr::from_triplets(nx * ny, &triplets)?;
    let rhs = BlockVector::from_flat(&(0..3 * nx * ny).map(|k| ((k % 7) as f64 - 3.0) * 0.1).collect::<Vec<_>>());
    let cfg = SolverConfig {
        tolerance: 1e-10,
        max_iterations: 1000,
    };

    let mut x = BlockVector::zeros(nx * ny);
    let plain = bicgstab(&a, &IdentityPreconditioner, &rhs, &mut x, &cfg);
    let mut x = BlockVector::zeros(nx * ny);
    let ilu = Ilu0::factor(&a)?;
    let pre = bicgstab(&a, &ilu, &rhs, &mut x, &cfg);
    println!("unpreconditioned: {} iterations, residual {:.1e}", plain.iterations, plain.relative_residual);
    println!("ILU0:             {} iterations, residual {:.1e}", pre.iterations, pre.relative_residual);
    Ok(())
}
