//! Dense row-major `f64` matrix with an optional gradient buffer.

use crate::error::{MwError, Result};

/// A dense matrix of 64-bit floats in row-major layout.
///
/// A tensor optionally carries a gradient buffer of the same shape; the
/// buffer is present exactly when `requires_grad` is set. Gradients are
/// accumulated additively by [`super::Graph::backward`] and reset by the
/// caller via [`Tensor::zero_grad`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// All-zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            requires_grad: false,
            grad: None,
        }
    }

    /// Matrix with every entry set to `value`.
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
            requires_grad: false,
            grad: None,
        }
    }

    /// Builds a tensor from a row-major buffer; errors if the length does
    /// not equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(MwError::dim(
                "from_vec",
                format!(
                    "buffer of {} values cannot fill a {}x{} matrix",
                    data.len(),
                    rows,
                    cols
                ),
            ));
        }
        Ok(Tensor {
            rows,
            cols,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// Builds a tensor from explicit rows; errors on ragged input or an
    /// empty row set.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(MwError::dim("from_rows", "no rows given"));
        };
        let cols = first.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(MwError::dim(
                    "from_rows",
                    format!("row 0 has {} columns but row {} has {}", cols, i, row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Tensor {
            rows: rows.len(),
            cols,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// Marks the tensor trainable, allocating a zeroed gradient buffer.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self.grad = Some(vec![0.0; self.data.len()]);
        self
    }

    /// Strips trainability and any gradient buffer, keeping the values.
    pub(crate) fn detached(mut self) -> Self {
        self.requires_grad = false;
        self.grad = None;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `(rows, cols)` pair, convenient for error messages.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    /// Borrow row `r` as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        debug_assert!(r < self.rows);
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// The gradient buffer, present iff the tensor requires gradients.
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Resets the gradient buffer (if any) to zero.
    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Adds `contrib` into the gradient buffer; a no-op for frozen tensors.
    pub(crate) fn accumulate_grad(&mut self, contrib: &[f64]) {
        if let Some(g) = self.grad.as_mut() {
            debug_assert_eq!(g.len(), contrib.len());
            for (gi, ci) in g.iter_mut().zip(contrib) {
                *gi += ci;
            }
        }
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Glorot-uniform initialisation: entries drawn uniformly from
    /// `±sqrt(6 / (rows + cols))`, treating rows as fan-in and columns as
    /// fan-out. Deterministic given the generator state.
    pub fn glorot_uniform<R: rand::Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Tensor {
            rows,
            cols,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// Identity matrix (used for adapter initialisation).
    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.set(i, i, 1.0);
        }
        t
    }
}
