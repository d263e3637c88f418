//! Dense double-precision tensors and flat parameter vectors.
//!
//! Tensors are row-major with an explicit shape. A scalar has the empty
//! shape `[]` and exactly one value. Everything is `f64`: the meta-gradient
//! finite-difference checks in this workspace need the headroom.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, validating the element count and finiteness.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Shape {
                op: "Tensor::new",
                expected: format!("{expected} values for shape {shape:?}"),
                actual: format!("{} values", values.len()),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "Tensor::new" });
        }
        Ok(Tensor { shape, values })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            values: vec![v],
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn full(shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: vec![v; n],
        }
    }

    /// Row-major matrix from a flat slice.
    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    /// One-hot row matrix: row i has a 1.0 at `labels[i]`.
    pub fn one_hot(labels: &[usize], classes: usize) -> Result<Self> {
        let mut values = vec![0.0; labels.len() * classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(Error::Data(format!(
                    "example {i}: label {y} out of range for {classes} classes"
                )));
            }
            values[i * classes + y] = 1.0;
        }
        Tensor::new(vec![labels.len(), classes], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    /// The single value of a scalar-like tensor.
    pub fn item(&self) -> Result<f64> {
        if self.values.len() == 1 {
            Ok(self.values[0])
        } else {
            Err(Error::Contract(format!(
                "item() on non-scalar tensor of shape {:?}",
                self.shape
            )))
        }
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        match self.shape.as_slice() {
            [n, _] => *n,
            _ => 1,
        }
    }

    /// Columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        match self.shape.as_slice() {
            [_, m] => *m,
            [m] => *m,
            _ => 1,
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols() + col]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.cols();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Flat view over an ordered set of parameter tensors.
///
/// Flatten-then-unflatten is the identity on every constituent tensor; the
/// shapes are kept alongside the values so the round trip is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    shapes: Vec<Vec<usize>>,
}

impl ParamVector {
    pub fn flatten(tensors: &[Tensor]) -> Self {
        let mut values = Vec::new();
        let mut shapes = Vec::with_capacity(tensors.len());
        for t in tensors {
            values.extend_from_slice(t.values());
            shapes.push(t.shape().to_vec());
        }
        ParamVector { values, shapes }
    }

    pub fn from_values(values: Vec<f64>, shapes: Vec<Vec<usize>>) -> Result<Self> {
        let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        if total != values.len() {
            return Err(Error::Shape {
                op: "ParamVector::from_values",
                expected: format!("{total} values"),
                actual: format!("{} values", values.len()),
            });
        }
        Ok(ParamVector { values, shapes })
    }

    pub fn unflatten(&self) -> Vec<Tensor> {
        let mut out = Vec::with_capacity(self.shapes.len());
        let mut offset = 0;
        for shape in &self.shapes {
            let n: usize = shape.iter().product();
            let values = self.values[offset..offset + n].to_vec();
            offset += n;
            out.push(Tensor {
                shape: shape.clone(),
                values,
            });
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector {
            values: vec![0.0; self.values.len()],
            shapes: self.shapes.clone(),
        }
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, c: f64) -> Self {
        ParamVector {
            values: self.values.iter().map(|v| v * c).collect(),
            shapes: self.shapes.clone(),
        }
    }

    /// self + alpha * other, elementwise.
    pub fn axpy(&self, alpha: f64, other: &ParamVector) -> Self {
        ParamVector {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + alpha * b)
                .collect(),
            shapes: self.shapes.clone(),
        }
    }

    pub fn add(&self, other: &ParamVector) -> Self {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &ParamVector) -> Self {
        self.axpy(-1.0, other)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tensor_rejects_bad_length() {
        assert!(Tensor::new(vec![2, 2], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn tensor_rejects_non_finite() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn scalar_has_empty_shape() {
        let t = Tensor::scalar(3.5);
        assert!(t.shape().is_empty());
        assert_eq!(t.item().unwrap(), 3.5);
    }

    #[test]
    fn one_hot_places_exactly_one() {
        let t = Tensor::one_hot(&[1, 0], 3).unwrap();
        assert_eq!(t.values(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(Tensor::one_hot(&[3], 3).is_err());
    }

    proptest! {
        #[test]
        fn flatten_unflatten_identity(
            a in proptest::collection::vec(-10.0f64..10.0, 1..8),
            b in proptest::collection::vec(-10.0f64..10.0, 4..16),
        ) {
            let t1 = Tensor::new(vec![a.len()], a.clone()).unwrap();
            let rows = b.len() / 2;
            let t2 = Tensor::matrix(rows, 2, b[..rows * 2].to_vec()).unwrap();
            let pv = ParamVector::flatten(&[t1.clone(), t2.clone()]);
            let back = pv.unflatten();
            prop_assert_eq!(back.len(), 2);
            prop_assert_eq!(&back[0], &t1);
            prop_assert_eq!(&back[1], &t2);
            prop_assert_eq!(pv.dim(), t1.len() + t2.len());
        }
    }
}
