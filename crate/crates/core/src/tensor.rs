use crate::error::{Error, Result};

/// Dense row-major f64 tensor. Only rank 1 and rank 2 are used by the model;
/// rank 3 appears for convolution kernels. No broadcasting, no views: every
/// op copies into a fresh buffer, which keeps gradient bookkeeping simple.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn filled(shape: &[usize], v: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![v; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {:?} wants {} values, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Rows of a rank-2 tensor (or the length of a rank-1 tensor).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a rank-2 tensor; 1 for rank-1.
    pub fn cols(&self) -> usize {
        if self.rank() >= 2 { self.shape[1] } else { 1 }
    }

    /// Number of frames a prediction tensor spans: columns for rank 2,
    /// one frame for rank 1.
    pub fn frames(&self) -> usize {
        if self.rank() >= 2 { self.shape[1] } else { 1 }
    }

    pub fn at(&self, i: usize) -> f64 {
        self.data[i]
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        self.data[r * cols + c] = v;
    }

    /// Copy of column `c` of a rank-2 tensor.
    pub fn col(&self, c: usize) -> Vec<f64> {
        let (rows, cols) = (self.shape[0], self.shape[1]);
        (0..rows).map(|r| self.data[r * cols + c]).collect()
    }

    pub fn set_col(&mut self, c: usize, v: &[f64]) {
        let (rows, cols) = (self.shape[0], self.shape[1]);
        debug_assert_eq!(v.len(), rows);
        for r in 0..rows {
            self.data[r * cols + c] = v[r];
        }
    }

    /// Copy of columns [start, start+len) of a rank-2 tensor.
    pub fn cols_slice(&self, start: usize, len: usize) -> Tensor {
        assert_eq!(self.rank(), 2, "cols_slice needs rank 2");
        let (r, c) = (self.rows(), self.cols());
        assert!(start + len <= c, "cols_slice [{start}, {}) out of {c}", start + len);
        let mut out = Tensor::zeros(&[r, len]);
        for i in 0..r {
            let src = &self.data[i * c + start..i * c + start + len];
            out.data[i * len..(i + 1) * len].copy_from_slice(src);
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// max_i |a_i - b_i|; the tensors must have identical shape.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape, b.shape, "max_abs_diff on mismatched shapes");
    a.data
        .iter()
        .zip(&b.data)
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
