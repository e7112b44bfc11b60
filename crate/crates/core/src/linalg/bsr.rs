use std::ops::{Index, IndexMut};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

pub type Block = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected} rows, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("row {row} has no diagonal block")]
    MissingDiagonal { row: usize },
    #[error("column index {col} out of range in row {row}")]
    BadColumn { row: usize, col: usize },
    #[error("singular pivot block in row {row}")]
    SingularPivot { row: usize },
}

/// One 3-vector per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector(pub Vec<Vec3>);

impl BlockVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![Vec3::zeros(); n])
    }

    pub fn from_flat(values: &[f64]) -> Self {
        assert_eq!(values.len() % 3, 0, "flat length must be a multiple of 3");
        Self(
            values
                .chunks_exact(3)
                .map(|c| Vec3::new(c[0], c[1], c[2]))
                .collect(),
        )
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|v| [v[0], v[1], v[2]]).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a.dot(b)).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn fill_zero(&mut self) {
        self.0.iter_mut().for_each(|v| *v = Vec3::zeros());
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Self) {
        for (s, x) in self.0.iter_mut().zip(&x.0) {
            *s += a * x;
        }
    }

    pub fn copy_from(&mut self, other: &Self) {
        self.0.copy_from_slice(&other.0);
    }
}

impl Index<usize> for BlockVector {
    type Output = Vec3;
    fn index(&self, i: usize) -> &Vec3 {
        &self.0[i]
    }
}

impl IndexMut<usize> for BlockVector {
    fn index_mut(&mut self, i: usize) -> &mut Vec3 {
        &mut self.0[i]
    }
}

/// Square block matrix in compressed row storage with 3x3 blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCsr {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    blocks: Vec<Block>,
    diag: Vec<usize>,
}

impl BlockCsr {
    /// Zero matrix with the given sparsity; `neighbors[i]` lists the
    /// off-diagonal columns of row `i`. The diagonal is always added.
    pub fn from_pattern(neighbors: &[Vec<usize>]) -> Result<Self, LinalgError> {
        let n = neighbors.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut diag = Vec::with_capacity(n);
        row_ptr.push(0);
        for (row, nb) in neighbors.iter().enumerate() {
            let mut r: Vec<usize> = nb.clone();
            r.push(row);
            r.sort_unstable();
            r.dedup();
            if let Some(&col) = r.iter().find(|&&c| c >= n) {
                return Err(LinalgError::BadColumn { row, col });
            }
            let start = cols.len();
            diag.push(start + r.iter().position(|&c| c == row).unwrap());
            cols.extend(r);
            row_ptr.push(cols.len());
        }
        let nnz = cols.len();
        Ok(Self {
            row_ptr,
            cols,
            blocks: vec![Block::zeros(); nnz],
            diag,
        })
    }

    /// Matrix from explicit `(row, col, block)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, entries: &[(usize, usize, Block)]) -> Result<Self, LinalgError> {
        let mut nb = vec![Vec::new(); n];
        for &(r, c, _) in entries {
            if r >= n {
                return Err(LinalgError::Dimension { expected: n, got: r + 1 });
            }
            nb[r].push(c);
        }
        let mut m = Self::from_pattern(&nb)?;
        for (r, c, b) in entries {
            m.add_block(*r, *c, b);
        }
        Ok(m)
    }

    pub fn num_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn num_blocks(&self) -> usize {
        self.cols.len()
    }

    pub fn row_range(&self, row: usize) -> std::ops::Range<usize> {
        self.row_ptr[row]..self.row_ptr[row + 1]
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block] {
        &mut self.blocks
    }

    pub fn diag_position(&self, row: usize) -> usize {
        self.diag[row]
    }

    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let r = self.row_range(row);
        self.cols[r.clone()]
            .binary_search(&col)
            .ok()
            .map(|k| r.start + k)
    }

    pub fn block(&self, row: usize, col: usize) -> Option<&Block> {
        self.position(row, col).map(|k| &self.blocks[k])
    }

    /// Adds `b` to block `(row, col)`, which must be in the pattern.
    pub fn add_block(&mut self, row: usize, col: usize, b: &Block) {
        let k = self
            .position(row, col)
            .unwrap_or_else(|| panic!("block ({row}, {col}) outside sparsity pattern"));
        self.blocks[k] += b;
    }

    pub fn set_zero(&mut self) {
        self.blocks.iter_mut().for_each(|b| *b = Block::zeros());
    }

    pub fn spmv(&self, x: &BlockVector) -> Result<BlockVector, LinalgError> {
        let mut y = BlockVector::zeros(self.num_rows());
        self.spmv_into(x, &mut y)?;
        Ok(y)
    }

    pub fn spmv_into(&self, x: &BlockVector, y: &mut BlockVector) -> Result<(), LinalgError> {
        let n = self.num_rows();
        for got in [x.len(), y.len()] {
            if got != n {
                return Err(LinalgError::Dimension { expected: n, got });
            }
        }
        for row in 0..n {
            let mut acc = Vec3::zeros();
            for k in self.row_range(row) {
                acc += self.blocks[k] * x[self.cols[k]];
            }
            y[row] = acc;
        }
        Ok(())
    }

    /// Scales the three equations of every row by `s`.
    pub fn scale_rows(&mut self, s: &Vec3) {
        let d = Block::from_diagonal(s);
        for b in &mut self.blocks {
            *b = d * *b;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.num_rows();
        let mut m = DMatrix::zeros(3 * n, 3 * n);
        for row in 0..n {
            for k in self.row_range(row) {
                let c = self.cols[k];
                m.fixed_view_mut::<3, 3>(3 * row, 3 * c)
                    .copy_from(&self.blocks[k]);
            }
        }
        m
    }
}

impl From<&BlockVector> for DVector<f64> {
    fn from(v: &BlockVector) -> Self {
        DVector::from_vec(v.to_flat())
    }
}
