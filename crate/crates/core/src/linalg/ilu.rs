use super::bicgstab::Preconditioner;
use super::bsr::{Block, BlockCsr, BlockVector, LinalgError, Vec3};

/// Block ILU(0): `L` and `U` share the sparsity of the factored matrix.
/// The strictly lower blocks hold `L` (unit block diagonal implied), the
/// upper blocks hold `U`, and the inverted diagonal of `U` is kept apart.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    lu: BlockCsr,
    diag_inv: Vec<Block>,
}

impl Ilu0 {
    pub fn factor(a: &BlockCsr) -> Result<Self, LinalgError> {
        let mut lu = a.clone();
        let n = lu.num_rows();
        let mut diag_inv = vec![Block::zeros(); n];
        for i in 0..n {
            let range = lu.row_range(i);
            for kk in range.clone() {
                let k = lu.cols()[kk];
                if k >= i {
                    break;
                }
                let l_ik = lu.blocks()[kk] * diag_inv[k];
                lu.blocks_mut()[kk] = l_ik;
                // a_ij -= l_ik u_kj for j > k present in both rows
                for jj in (kk + 1)..range.end {
                    let j = lu.cols()[jj];
                    if let Some(kj) = lu.position(k, j) {
                        let u_kj = lu.blocks()[kj];
                        lu.blocks_mut()[jj] -= l_ik * u_kj;
                    }
                }
            }
            let d = lu.blocks()[lu.diag_position(i)];
            diag_inv[i] = d
                .try_inverse()
                .filter(|inv| inv.iter().all(|v| v.is_finite()))
                .ok_or(LinalgError::SingularPivot { row: i })?;
        }
        Ok(Self { lu, diag_inv })
    }

    pub fn num_blocks(&self) -> usize {
        self.lu.num_blocks()
    }

    /// Solves `L U z = r`.
    pub fn solve(&self, r: &BlockVector, z: &mut BlockVector) {
        let n = self.lu.num_rows();
        let cols = self.lu.cols();
        let blocks = self.lu.blocks();
        for i in 0..n {
            let mut acc = r[i];
            for k in self.lu.row_range(i) {
                if cols[k] >= i {
                    break;
                }
                acc -= blocks[k] * z[cols[k]];
            }
            z[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc: Vec3 = z[i];
            for k in (self.lu.diag_position(i) + 1)..self.lu.row_range(i).end {
                acc -= blocks[k] * z[cols[k]];
            }
            z[i] = self.diag_inv[i] * acc;
        }
    }
}

impl Preconditioner for Ilu0 {
    fn apply(&self, r: &BlockVector, z: &mut BlockVector) {
        self.solve(r, z);
    }
}
