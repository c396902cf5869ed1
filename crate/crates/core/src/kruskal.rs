//! CP models `⟦λ; A^(1), ..., A^(N)⟧`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{DenseTensor, Shape, SparseSamples};

/// Factor matrix `A^(n)` of size `I_n × R`.
pub type FactorMatrix = DMatrix<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct KruskalModel {
    factors: Vec<FactorMatrix>,
    lambda: Vec<f64>,
}

/// Result of [`KruskalModel::normalize`].
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub model: KruskalModel,
    /// Components whose weight came out as zero. Any zero column of such a
    /// component is replaced by the first standard basis vector.
    pub zero_components: Vec<usize>,
}

impl KruskalModel {
    pub fn new(factors: Vec<FactorMatrix>, lambda: Vec<f64>) -> Result<Self> {
        let first = factors
            .first()
            .ok_or_else(|| Error::InvalidShape("model needs at least one factor".into()))?;
        let rank = first.ncols();
        if rank == 0 {
            return Err(Error::InvalidParameter("rank must be at least 1".into()));
        }
        for (n, f) in factors.iter().enumerate() {
            if f.ncols() != rank {
                return Err(Error::ShapeMismatch(format!(
                    "factor {n} has {} columns, expected {rank}",
                    f.ncols()
                )));
            }
            if f.nrows() == 0 {
                return Err(Error::InvalidShape(format!("factor {n} has no rows")));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("factor {n}")));
            }
        }
        if lambda.len() != rank {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for rank {rank}",
                lambda.len()
            )));
        }
        if lambda.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidParameter(
                "weights must be finite and nonnegative".into(),
            ));
        }
        Ok(KruskalModel { factors, lambda })
    }

    /// Model with unit weights.
    pub fn from_factors(factors: Vec<FactorMatrix>) -> Result<Self> {
        let rank = factors.first().map_or(0, |f| f.ncols());
        KruskalModel::new(factors, vec![1.0; rank])
    }

    pub fn zeros(shape: &Shape, rank: usize) -> Result<Self> {
        let factors = shape
            .dims()
            .iter()
            .map(|&d| DMatrix::zeros(d, rank))
            .collect();
        KruskalModel::new(factors, vec![0.0; rank])
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn ndims(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.factors.iter().map(|f| f.nrows()).collect())
            .expect("factor row counts are positive")
    }

    pub fn factors(&self) -> &[FactorMatrix] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &FactorMatrix {
        &self.factors[mode]
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn into_parts(self) -> (Vec<FactorMatrix>, Vec<f64>) {
        (self.factors, self.lambda)
    }

    /// `‖⟦λ; A^(1), ..., A^(N)⟧‖` from the factor Gram matrices, without
    /// forming the tensor.
    pub fn norm(&self) -> f64 {
        let r = self.rank();
        let mut g = DMatrix::from_fn(r, r, |i, j| self.lambda[i] * self.lambda[j]);
        for f in &self.factors {
            g.component_mul_assign(&(f.transpose() * f));
        }
        g.sum().max(0.0).sqrt()
    }

    /// Number of free variables `R Σ I_n` when weights are held at one.
    pub fn num_vars(&self) -> usize {
        self.rank() * self.factors.iter().map(|f| f.nrows()).sum::<usize>()
    }

    /// Dense tensor with entries `Σ_r λ_r ∏_n A^(n)[i_n, r]`.
    pub fn full(&self) -> DenseTensor {
        let shape = self.shape();
        let mut data = vec![0.0; shape.numel()];
        kernels::full_raw(&self.factors, Some(&self.lambda), &mut data);
        DenseTensor::from_raw(shape, data)
    }

    /// Model values at `Q` coordinates given back to back in `indices`.
    /// Weights are applied explicitly.
    pub fn values_at(&self, indices: &[usize]) -> Result<Vec<f64>> {
        let shape = self.shape();
        let n = self.ndims();
        if indices.len() % n != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} index entries is not a multiple of {n}",
                indices.len()
            )));
        }
        if let Some(idx) = indices.chunks_exact(n).find(|idx| !shape.contains(idx)) {
            return Err(Error::IndexOutOfRange(format!("{idx:?} in shape {shape}")));
        }
        let q = indices.len() / n;
        let mut z = vec![0.0; q];
        let mut u = vec![0.0; q];
        kernels::values_at_raw(indices, &self.factors, Some(&self.lambda), &mut z, &mut u);
        Ok(z)
    }

    pub fn values_at_samples(&self, s: &SparseSamples) -> Result<Vec<f64>> {
        if s.shape() != &self.shape() {
            return Err(Error::ShapeMismatch(format!(
                "model shape {} vs samples shape {}",
                self.shape(),
                s.shape()
            )));
        }
        self.values_at(s.indices())
    }

    /// Same tensor with the weights multiplied into the first factor.
    pub fn absorb_lambda(&self) -> KruskalModel {
        let mut factors = self.factors.clone();
        for (r, &l) in self.lambda.iter().enumerate() {
            factors[0].column_mut(r).scale_mut(l);
        }
        KruskalModel {
            factors,
            lambda: vec![1.0; self.rank()],
        }
    }

    /// Appends all-zero components until the rank reaches `rank`.
    pub fn padded(&self, rank: usize) -> KruskalModel {
        if rank <= self.rank() {
            return self.clone();
        }
        let factors = self
            .factors
            .iter()
            .map(|f| f.clone().resize_horizontally(rank, 0.0))
            .collect();
        let mut lambda = self.lambda.clone();
        lambda.resize(rank, 0.0);
        KruskalModel { factors, lambda }
    }

    /// Unit-norm columns with the magnitude moved into `λ`.
    ///
    /// Sign convention: in modes 2..N each column is flipped so that its
    /// largest-magnitude entry is positive; the mode-1 column takes the
    /// compensating sign so the represented tensor is unchanged.
    pub fn normalize(&self) -> Normalized {
        let mut factors = self.factors.clone();
        let mut lambda = self.lambda.clone();
        let mut zero_components = Vec::new();
        for r in 0..self.rank() {
            let mut weight = lambda[r];
            let mut zero = weight == 0.0;
            for f in factors.iter_mut() {
                let norm = f.column(r).norm();
                if norm == 0.0 {
                    zero = true;
                    let mut col = f.column_mut(r);
                    col.fill(0.0);
                    col[0] = 1.0;
                } else {
                    f.column_mut(r).unscale_mut(norm);
                    weight *= norm;
                }
            }
            let mut negative = false;
            for f in factors.iter_mut().skip(1) {
                let col = f.column(r);
                let peak = col.iter().copied().fold(0.0f64, |acc, v| {
                    if v.abs() > acc.abs() {
                        v
                    } else {
                        acc
                    }
                });
                if peak < 0.0 {
                    f.column_mut(r).neg_mut();
                    negative = !negative;
                }
            }
            if negative {
                factors[0].column_mut(r).neg_mut();
            }
            if zero {
                weight = 0.0;
                zero_components.push(r);
            }
            lambda[r] = weight;
        }
        Normalized {
            model: KruskalModel { factors, lambda },
            zero_components,
        }
    }

    /// Factors stacked column-major, mode by mode (weights excluded).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.num_vars());
        for f in &self.factors {
            x.extend_from_slice(f.as_slice());
        }
        x
    }

    /// Inverse of [`KruskalModel::to_vec`], with unit weights.
    pub fn from_vec(shape: &Shape, rank: usize, x: &[f64]) -> Result<Self> {
        if x.len() != rank * shape.sum() {
            return Err(Error::ShapeMismatch(format!(
                "{} variables for rank {rank} and shape {shape}",
                x.len()
            )));
        }
        let mut off = 0;
        let factors = shape
            .dims()
            .iter()
            .map(|&d| {
                let m = DMatrix::from_column_slice(d, rank, &x[off..off + d * rank]);
                off += d * rank;
                m
            })
            .collect();
        KruskalModel::from_factors(factors)
    }
}

/// Copies a packed variable vector into preallocated factor matrices.
pub(crate) fn unpack_into(x: &[f64], factors: &mut [FactorMatrix]) {
    let mut off = 0;
    for f in factors.iter_mut() {
        let len = f.len();
        f.as_mut_slice().copy_from_slice(&x[off..off + len]);
        off += len;
    }
}
