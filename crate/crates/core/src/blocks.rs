//! Block structure of the coordinate space.

use crate::error::{Error, Result};

/// Partition of the d coordinates into M contiguous blocks of sizes (d_1, ..., d_M).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockStructure {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    total_dim: usize,
}

impl BlockStructure {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Construction("at least one block required".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Construction("block dimensions must be positive".into()));
        }
        let mut offsets = Vec::with_capacity(dims.len());
        let mut acc = 0;
        for &d in &dims {
            offsets.push(acc);
            acc += d;
        }
        Ok(Self { dims, offsets, total_dim: acc })
    }

    /// All blocks of size one: M = d.
    pub fn scalar(d: usize) -> Self {
        Self::new(vec![1; d]).expect("d >= 1")
    }

    pub fn num_blocks(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn block_dim(&self, m: usize) -> usize {
        self.dims[m]
    }

    pub fn offset(&self, m: usize) -> usize {
        self.offsets[m]
    }

    /// Coordinate index range of block m.
    pub fn range(&self, m: usize) -> std::ops::Range<usize> {
        self.offsets[m]..self.offsets[m] + self.dims[m]
    }

    /// Coordinate indices covered by the given blocks, in ascending order.
    pub fn indices_of(&self, blocks: &[usize]) -> Vec<usize> {
        let mut out = Vec::new();
        for &m in blocks {
            out.extend(self.range(m));
        }
        out.sort_unstable();
        out
    }

    /// Coordinate indices outside the given blocks, in ascending order.
    pub fn complement_indices(&self, blocks: &[usize]) -> Vec<usize> {
        let keep: std::collections::HashSet<usize> =
            blocks.iter().flat_map(|&m| self.range(m)).collect();
        (0..self.total_dim).filter(|i| !keep.contains(i)).collect()
    }

    /// True if all blocks are one-dimensional.
    pub fn all_scalar(&self) -> bool {
        self.dims.iter().all(|&d| d == 1)
    }
}
