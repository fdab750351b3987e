//! Row-orthonormal restriction / prolongation between consecutive levels.
//!
//! Every supported operator is *block averaging*: coarse index `j` owns a
//! disjoint set of fine indices and `R[j, b] = 1/sqrt(m_j)` for each fine index
//! `b` in the block (`m_j` is the block size). Such an operator satisfies
//! `R Rᵀ = I` by construction, the prolongation is exactly `Rᵀ`, and the level
//! norms reduce to the Euclidean norm.
//!
//! The block structure is also what makes the pulled-back nonsmooth term on
//! the coarse level separable (see [`crate::prox`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransferError {
    #[error("1D averaging needs an even fine dimension, got {0}")]
    OddDimension(usize),
    #[error("coarsening ratio {ratio} does not divide fine size {n}")]
    RatioMismatch { n: usize, ratio: usize },
    #[error("fine index {0} appears in more than one block")]
    OverlappingBlocks(usize),
    #[error("fine index {index} out of range for dimension {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("block {0} is empty")]
    EmptyBlock(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dimension must be positive")]
    ZeroDimension,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransferKind {
    Avg1D,
    Tensor2D,
    Generic,
}

/// Run-config descriptor: `{"type":"avg1d"}` or `{"type":"tensor2d","ratio":2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum TransferSpec {
    Avg1d,
    Tensor2d { ratio: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferOperator {
    n_fine: usize,
    n_coarse: usize,
    kind: TransferKind,
    // CSR layout: fine indices of block j are block_idx[block_ptr[j]..block_ptr[j+1]]
    block_ptr: Vec<usize>,
    block_idx: Vec<usize>,
    weights: Vec<f64>,
    owner: Vec<Option<usize>>,
}

impl TransferOperator {
    /// Pairwise averaging `(2j, 2j+1) -> j` with weight `1/sqrt(2)`.
    pub fn avg_1d(n_fine: usize) -> Result<Self, TransferError> {
        if n_fine == 0 {
            return Err(TransferError::ZeroDimension);
        }
        if n_fine % 2 != 0 {
            return Err(TransferError::OddDimension(n_fine));
        }
        let blocks: Vec<Vec<usize>> = (0..n_fine / 2).map(|j| vec![2 * j, 2 * j + 1]).collect();
        Self::build(n_fine, blocks, TransferKind::Avg1D)
    }

    /// `R1D ⊗ R1D` for an `n × n` row-major grid where each 1D factor averages
    /// `ratio` consecutive points with weight `1/sqrt(ratio)`.
    pub fn tensor_2d(n_fine_1d: usize, ratio: usize) -> Result<Self, TransferError> {
        if n_fine_1d == 0 || ratio == 0 {
            return Err(TransferError::ZeroDimension);
        }
        if n_fine_1d % ratio != 0 {
            return Err(TransferError::RatioMismatch { n: n_fine_1d, ratio });
        }
        let nc = n_fine_1d / ratio;
        let mut blocks = Vec::with_capacity(nc * nc);
        for jy in 0..nc {
            for jx in 0..nc {
                let mut block = Vec::with_capacity(ratio * ratio);
                for a in 0..ratio {
                    for b in 0..ratio {
                        block.push((jy * ratio + a) * n_fine_1d + jx * ratio + b);
                    }
                }
                blocks.push(block);
            }
        }
        Self::build(n_fine_1d * n_fine_1d, blocks, TransferKind::Tensor2D)
    }

    /// Arbitrary disjoint blocks; fine indices outside every block are
    /// annihilated by `R` and never touched by `Rᵀ`.
    pub fn from_blocks(n_fine: usize, blocks: Vec<Vec<usize>>) -> Result<Self, TransferError> {
        Self::build(n_fine, blocks, TransferKind::Generic)
    }

    fn build(
        n_fine: usize,
        blocks: Vec<Vec<usize>>,
        kind: TransferKind,
    ) -> Result<Self, TransferError> {
        if n_fine == 0 || blocks.is_empty() {
            return Err(TransferError::ZeroDimension);
        }
        let mut owner = vec![None; n_fine];
        let mut block_ptr = Vec::with_capacity(blocks.len() + 1);
        let mut block_idx = Vec::with_capacity(n_fine);
        let mut weights = Vec::with_capacity(blocks.len());
        block_ptr.push(0);
        for (j, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(TransferError::EmptyBlock(j));
            }
            for &b in block {
                if b >= n_fine {
                    return Err(TransferError::IndexOutOfRange { index: b, n: n_fine });
                }
                if owner[b].is_some() {
                    return Err(TransferError::OverlappingBlocks(b));
                }
                owner[b] = Some(j);
                block_idx.push(b);
            }
            block_ptr.push(block_idx.len());
            weights.push(1.0 / (block.len() as f64).sqrt());
        }
        Ok(Self {
            n_fine,
            n_coarse: blocks.len(),
            kind,
            block_ptr,
            block_idx,
            weights,
            owner,
        })
    }

    pub fn n_fine(&self) -> usize {
        self.n_fine
    }

    pub fn n_coarse(&self) -> usize {
        self.n_coarse
    }

    pub fn kind(&self) -> TransferKind {
        self.kind
    }

    /// Fine indices averaged by coarse index `j`.
    pub fn block(&self, j: usize) -> &[usize] {
        &self.block_idx[self.block_ptr[j]..self.block_ptr[j + 1]]
    }

    /// Common entry value `1/sqrt(m)` of block `j`.
    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    /// Coarse index owning fine index `b`, if any.
    pub fn owner(&self, b: usize) -> Option<usize> {
        self.owner[b]
    }

    pub fn restrict(&self, x_fine: &[f64]) -> Result<Vec<f64>, TransferError> {
        check_dim(self.n_fine, x_fine.len())?;
        Ok((0..self.n_coarse)
            .map(|j| self.weights[j] * self.block(j).iter().map(|&b| x_fine[b]).sum::<f64>())
            .collect())
    }

    pub fn prolong(&self, x_coarse: &[f64]) -> Result<Vec<f64>, TransferError> {
        check_dim(self.n_coarse, x_coarse.len())?;
        let mut out = vec![0.0; self.n_fine];
        for (j, &yj) in x_coarse.iter().enumerate() {
            let v = self.weights[j] * yj;
            for &b in self.block(j) {
                out[b] = v;
            }
        }
        Ok(out)
    }

    /// `max |R Rᵀ − I|`, accumulated sparsely over the nonzero pattern.
    pub fn gram_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut row = vec![0.0; self.n_coarse];
        let mut touched = Vec::new();
        for j in 0..self.n_coarse {
            let wj = self.weights[j];
            for &b in self.block(j) {
                // column b of R has a single nonzero, at its owner
                if let Some(k) = self.owner[b] {
                    if row[k] == 0.0 {
                        touched.push(k);
                    }
                    row[k] += wj * self.weights[k];
                }
            }
            for &k in &touched {
                let target = if k == j { 1.0 } else { 0.0 };
                worst = worst.max((row[k] - target).abs());
                row[k] = 0.0;
            }
            if !touched.contains(&j) {
                worst = worst.max(1.0);
            }
            touched.clear();
        }
        worst
    }

    /// Dense `n_coarse × n_fine` matrix, for testing on small sizes.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n_fine]; self.n_coarse];
        for (j, row) in m.iter_mut().enumerate() {
            for &b in self.block(j) {
                row[b] = self.weights[j];
            }
        }
        m
    }
}

impl TransferSpec {
    /// Build the operator for a fine level with `n_fine` unknowns.
    pub fn build(&self, n_fine: usize) -> Result<TransferOperator, TransferError> {
        match *self {
            TransferSpec::Avg1d => TransferOperator::avg_1d(n_fine),
            TransferSpec::Tensor2d { ratio } => {
                let side = (n_fine as f64).sqrt().round() as usize;
                if side * side != n_fine {
                    return Err(TransferError::DimensionMismatch {
                        expected: side * side,
                        got: n_fine,
                    });
                }
                TransferOperator::tensor_2d(side, ratio)
            }
        }
    }

    pub fn coarse_dim(&self, n_fine: usize) -> usize {
        match *self {
            TransferSpec::Avg1d => n_fine / 2,
            TransferSpec::Tensor2d { ratio } => n_fine / (ratio * ratio),
        }
    }
}

fn check_dim(expected: usize, got: usize) -> Result<(), TransferError> {
    if expected != got {
        Err(TransferError::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}
