use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fixed-capacity FIFO of unit-norm key embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    data: Array2<f32>,
    cursor: usize,
    len: usize,
}

const NORM_TOLERANCE: f32 = 1e-5;

impl MemoryBank {
    pub fn empty(capacity: usize, dim: usize) -> Self {
        Self { data: Array2::zeros((capacity, dim)), cursor: 0, len: 0 }
    }

    /// A full bank of random unit vectors, so the loss has negatives from
    /// the first step. The cursor starts at 0, so these are evicted first.
    pub fn random<R: Rng>(capacity: usize, dim: usize, rng: &mut R) -> Self {
        let mut bank = Self::empty(capacity, dim);
        for mut row in bank.data.rows_mut() {
            loop {
                row.mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal) as f32);
                let norm = row.dot(&row).sqrt();
                if norm > 1e-3 {
                    row.mapv_inplace(|v| v / norm);
                    break;
                }
            }
        }
        bank.len = capacity;
        bank
    }

    pub fn capacity(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends rows in order, overwriting the oldest entries once full.
    pub fn enqueue(&mut self, batch: ArrayView2<'_, f32>) -> Result<()> {
        if batch.ncols() != self.dim() {
            return Err(Error::ShapeMismatch(format!("bank holds {}-d vectors, got {}", self.dim(), batch.ncols())));
        }
        if self.capacity() == 0 {
            return Ok(());
        }
        for (i, row) in batch.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::OutOfRange(format!("bank entry {i} has norm {norm}")));
            }
        }
        for row in batch.rows() {
            self.data.row_mut(self.cursor).assign(&row);
            self.cursor = (self.cursor + 1) % self.capacity();
            self.len = (self.len + 1).min(self.capacity());
        }
        Ok(())
    }

    /// Stored vectors, oldest first.
    pub fn ordered(&self) -> Array2<f32> {
        if self.len < self.capacity() {
            self.data.slice(s![..self.len, ..]).to_owned()
        } else {
            let tail = self.data.slice(s![self.cursor.., ..]);
            let head = self.data.slice(s![..self.cursor, ..]);
            ndarray::concatenate(ndarray::Axis(0), &[tail, head]).expect("same width")
        }
    }

    /// Occupied rows as a `(len, dim)` tensor in storage order, which is
    /// all the loss needs.
    pub fn tensor(&self) -> Tensor<f32> {
        Tensor::from_array(self.data.slice(s![..self.len, ..]).to_owned().into_dyn())
    }

    pub fn raw(&self) -> ArrayView2<'_, f32> {
        self.data.view()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub(crate) fn from_parts(data: Array2<f32>, cursor: usize, len: usize) -> Result<Self> {
        if cursor >= data.nrows().max(1) || len > data.nrows() {
            return Err(Error::OutOfRange(format!("bank cursor {cursor} / len {len} vs capacity {}", data.nrows())));
        }
        Ok(Self { data, cursor, len })
    }
}
