//! Dense row-major f64 tensor. Deliberately minimal: shape bookkeeping,
//! flat data access, and the handful of structural ops the engine needs.
//! All numeric kernels (conv, softmax, entropy, ...) live with their callers
//! and work on the flat slices.

use crate::error::{Error, Result};

/// Row-major dense tensor. The last axis is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and matching flat data.
    ///
    /// Every extent must be positive and the data length must equal the
    /// product of extents.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Argument(format!(
                "tensor shape {shape:?} has a zero extent"
            )));
        }
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::Shape {
                context: "Tensor::new".into(),
                expected: format!("{numel} values for shape {shape:?}"),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    /// Strides in elements for each axis (row-major).
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    /// Same data, different shape. The element count must be preserved.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    /// Contiguous slice covering index `i` of the outermost axis.
    ///
    /// For a `[F, C, K, K]` weight tensor this is filter `i`.
    pub fn outer_slice(&self, i: usize) -> &[f64] {
        let outer = self.shape[0];
        assert!(i < outer, "outer index {i} out of range {outer}");
        let stride = self.data.len() / outer;
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn outer_slice_mut(&mut self, i: usize) -> &mut [f64] {
        let outer = self.shape[0];
        assert!(i < outer, "outer index {i} out of range {outer}");
        let stride = self.data.len() / outer;
        &mut self.data[i * stride..(i + 1) * stride]
    }

    /// True when every entry is finite (no NaN / infinity).
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
