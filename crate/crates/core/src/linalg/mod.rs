//! Block-sparse linear algebra: 3x3 block CSR storage, ILU0 and BiCGStab.

mod bicgstab;
mod bsr;
mod ilu;

pub use bicgstab::{bicgstab, IdentityPreconditioner, LinearOperator, Preconditioner, SolveStats, SolverConfig};
pub use bsr::{Block, BlockCsr, BlockVector, LinalgError, Vec3};
pub use ilu::Ilu0;
