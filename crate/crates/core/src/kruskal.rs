//! Weighted sum of rank-one tensors: one factor matrix per mode plus a weight
//! vector.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::tensor::{FactorMatrix, SparseTensor};

/// Largest dense reconstruction produced without explicit coordinates.
pub const DEFAULT_RECONSTRUCTION_CAP: usize = 100_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct KruskalModel {
    pub factors: Vec<FactorMatrix>,
    pub lambda: DVector<f64>,
}

impl KruskalModel {
    pub fn new(factors: Vec<FactorMatrix>, lambda: DVector<f64>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one factor".into()));
        }
        let rank = lambda.len();
        for f in &factors {
            if f.ncols() != rank {
                return Err(Error::ColumnCountMismatch { left: rank, right: f.ncols() });
            }
        }
        Ok(Self { factors, lambda })
    }

    /// Model with unit weights.
    pub fn from_factors(factors: Vec<FactorMatrix>) -> Result<Self> {
        let rank = factors.first().map_or(0, |f| f.ncols());
        Self::new(factors, DVector::from_element(rank, 1.0))
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn ndims(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    /// Rescales every factor column to unit norm and moves the scale into
    /// `lambda`. A negative weight is made positive by flipping the matching
    /// column of the first factor.
    pub fn normalize(&self) -> Result<Self> {
        for (mode, f) in self.factors.iter().enumerate() {
            for (column, col) in f.column_iter().enumerate() {
                if col.norm() == 0.0 {
                    return Err(Error::ZeroComponent { mode, column });
                }
            }
        }
        let mut out = self.clone();
        out.normalize_in_place();
        Ok(out)
    }

    /// Normalization tolerant of zero columns, which are left untouched.
    pub(crate) fn normalize_in_place(&mut self) {
        for f in &mut self.factors {
            for (r, mut col) in f.column_iter_mut().enumerate() {
                let norm = col.norm();
                if norm > 0.0 && norm != 1.0 {
                    col /= norm;
                    self.lambda[r] *= norm;
                }
            }
        }
        for r in 0..self.rank() {
            if self.lambda[r] < 0.0 {
                self.lambda[r] = -self.lambda[r];
                self.factors[0].column_mut(r).neg_mut();
            }
        }
    }

    /// Flips column signs so the largest-magnitude entry of each first-factor
    /// column is positive, compensating in the second factor.
    pub fn canonicalize_signs(&mut self) {
        if self.ndims() < 2 {
            return;
        }
        for r in 0..self.rank() {
            let col = self.factors[0].column(r);
            let pivot = col
                .iter()
                .copied()
                .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
            if pivot < 0.0 {
                self.factors[0].column_mut(r).neg_mut();
                self.factors[1].column_mut(r).neg_mut();
            }
        }
    }

    /// Reorders components so new column `j` is old column `perm[j]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.rank() {
            return Err(Error::ColumnCountMismatch { left: self.rank(), right: perm.len() });
        }
        let factors = self.factors.iter().map(|f| f.select_columns(perm)).collect();
        let lambda = DVector::from_iterator(perm.len(), perm.iter().map(|&p| self.lambda[p]));
        Ok(Self { factors, lambda })
    }

    /// Model value at one coordinate.
    pub fn value_at(&self, coord: &[usize]) -> f64 {
        (0..self.rank())
            .map(|r| {
                self.factors
                    .iter()
                    .zip(coord)
                    .fold(self.lambda[r], |acc, (f, &i)| acc * f[(i, r)])
            })
            .sum()
    }

    /// Model values at the given coordinates.
    pub fn values_at(&self, coords: &[Vec<usize>]) -> Result<Vec<f64>> {
        let dims = self.dims();
        coords
            .iter()
            .map(|c| {
                if c.len() != dims.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "coordinate of length {} for a {}-mode model",
                        c.len(),
                        dims.len()
                    )));
                }
                for (mode, (&index, &size)) in c.iter().zip(&dims).enumerate() {
                    if index >= size {
                        return Err(Error::IndexOutOfRange { mode, index, size });
                    }
                }
                Ok(self.value_at(c))
            })
            .collect()
    }

    /// Full reconstruction, refused when the dense size exceeds `cap`.
    pub fn reconstruct(&self, cap: usize) -> Result<SparseTensor> {
        let dims = self.dims();
        let entries = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .unwrap_or(usize::MAX);
        if entries > cap {
            return Err(Error::ReconstructionTooLarge { entries, cap });
        }
        let n = dims.len();
        let mut data = vec![0.0; entries];
        let mut coord = vec![0usize; n];
        for v in data.iter_mut() {
            *v = self.value_at(&coord);
            for (m, idx) in coord.iter_mut().enumerate() {
                *idx += 1;
                if *idx < dims[m] {
                    break;
                }
                *idx = 0;
            }
        }
        SparseTensor::from_dense(dims, &data)
    }

    /// Element-wise product of all factor Gram matrices, skipping `skip`.
    pub(crate) fn gram_hadamard(&self, skip: Option<usize>) -> FactorMatrix {
        let r = self.rank();
        let mut v = FactorMatrix::from_element(r, r, 1.0);
        for (m, f) in self.factors.iter().enumerate() {
            if Some(m) != skip {
                v.component_mul_assign(&(f.transpose() * f));
            }
        }
        v
    }

    /// Squared Frobenius norm of the represented tensor.
    pub fn norm_squared(&self) -> f64 {
        let v = self.gram_hadamard(None);
        self.lambda.dot(&(&v * &self.lambda))
    }

    /// Inner product with a sparse tensor of the same shape.
    pub fn inner_product(&self, x: &SparseTensor) -> Result<f64> {
        self.check_shape(x)?;
        Ok(x.iter().map(|(c, v)| v * self.value_at(c)).sum())
    }

    pub(crate) fn check_shape(&self, x: &SparseTensor) -> Result<()> {
        if self.dims() != x.dims() {
            return Err(Error::ShapeMismatch(format!(
                "model dims {:?} vs tensor dims {:?}",
                self.dims(),
                x.dims()
            )));
        }
        Ok(())
    }
}
