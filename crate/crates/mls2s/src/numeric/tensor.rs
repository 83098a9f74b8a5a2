//! Dense double-precision tensors.
//!
//! Everything the model computes on is a small dense 2-D matrix, stored
//! row-major. Parameters additionally carry a same-shape gradient buffer;
//! activations and constants do not.

use crate::error::{Error, Result};
use rand::Rng;

/// Dense row-major tensor. Practically always 2-D (`rows x cols`);
/// scalars are `1x1`.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl PartialEq for Tensor {
    /// Value equality: shape and data. Gradient buffers are scratch state
    /// and do not participate.
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Contract(format!(
                "tensor shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            shape: vec![rows, cols],
            data: vec![0.0; rows * cols],
            grad: None,
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Tensor {
            shape: vec![rows, cols],
            data: vec![1.0; rows * cols],
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![v],
            grad: None,
        }
    }

    /// Build from nested rows; rows must have equal lengths.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Input("ragged rows in tensor literal".into()));
            }
            data.extend_from_slice(row);
        }
        Tensor::matrix(r, c, data)
    }

    /// Identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Entries drawn uniformly from `[-bound, bound]`.
    pub fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Tensor {
            shape: vec![rows, cols],
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    /// Allocate a zeroed gradient buffer, turning this tensor into a
    /// trainable parameter.
    pub fn with_grad(mut self) -> Self {
        self.grad = Some(vec![0.0; self.data.len()]);
        self
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Add `delta` into the gradient buffer (allocating it if absent).
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.data.len());
        let g = self
            .grad
            .get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    /// Extract one column as an `n x 1` tensor.
    pub fn column(&self, c: usize) -> Tensor {
        let n = self.rows();
        let data = (0..n).map(|r| self.get(r, c)).collect();
        Tensor {
            shape: vec![n, 1],
            data,
            grad: None,
        }
    }

    /// Extract a half-open column range `[start, end)`.
    pub fn columns(&self, start: usize, end: usize) -> Tensor {
        let n = self.rows();
        let w = end - start;
        let mut data = Vec::with_capacity(n * w);
        for r in 0..n {
            for c in start..end {
                data.push(self.get(r, c));
            }
        }
        Tensor {
            shape: vec![n, w],
            data,
            grad: None,
        }
    }

    /// Stack `n x 1` columns left to right into an `n x k` matrix.
    pub fn from_columns(cols: &[Tensor]) -> Result<Tensor> {
        let n = cols
            .first()
            .ok_or_else(|| Error::Contract("from_columns needs at least one column".into()))?
            .rows();
        let k = cols.len();
        let mut out = Tensor::zeros(n, k);
        for (c, col) in cols.iter().enumerate() {
            if col.rows() != n || col.cols() != 1 {
                return Err(Error::Shape {
                    op: "from_columns",
                    lhs: vec![n, 1],
                    rhs: col.shape().to_vec(),
                });
            }
            for r in 0..n {
                out.set(r, c, col.get(r, 0));
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
