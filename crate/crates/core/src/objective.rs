//! Weighted least-squares CP objective `f_W` and its gradient.
//!
//! With `Y = W ∗ X`, `Z = W ∗ ⟦A^(1), ..., A^(N)⟧` and `T = Y − Z`,
//!
//! ```text
//! f  = ½ ‖T‖²  = ½ γ − ⟨Y, Z⟩ + ½ ‖Z‖²,     γ = ‖Y‖²
//! G^(n) = −T_(n) · A^(−n)
//! ```
//!
//! The model weights are held at one: the variables are the raw factor
//! matrices, packed as in [`KruskalModel::to_vec`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernels;
use crate::kruskal::{unpack_into, FactorMatrix, KruskalModel};
use crate::tensor::{DenseTensor, Shape, SparseSamples};

/// A differentiable objective over packed factor variables.
pub trait Objective {
    fn shape(&self) -> &Shape;
    fn rank(&self) -> usize;

    fn num_vars(&self) -> usize {
        self.rank() * self.shape().sum()
    }

    /// Returns `f(x)` and writes `∇f(x)` into `grad`.
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

fn factor_buffers(shape: &Shape, rank: usize) -> Vec<FactorMatrix> {
    shape.dims().iter().map(|&d| DMatrix::zeros(d, rank)).collect()
}

fn pack_negated(grads: &[FactorMatrix], out: &mut [f64]) {
    let mut off = 0;
    for g in grads {
        for (o, v) in out[off..off + g.len()].iter_mut().zip(g.as_slice()) {
            *o = -v;
        }
        off += g.len();
    }
}

/// Dense-path workspace. Holds `Y`, the mask, and one tensor-sized buffer.
pub struct DenseObjective {
    shape: Shape,
    rank: usize,
    y: Vec<f64>,
    w: Vec<f64>,
    gamma: f64,
    t: Vec<f64>,
    factors: Vec<FactorMatrix>,
    grads: Vec<FactorMatrix>,
}

impl DenseObjective {
    /// `w` must be binary with the shape of `x`.
    pub fn new(x: &DenseTensor, w: &DenseTensor, rank: usize) -> Result<Self> {
        if x.shape() != w.shape() {
            return Err(Error::ShapeMismatch(format!(
                "data shape {} vs weight shape {}",
                x.shape(),
                w.shape()
            )));
        }
        if rank == 0 {
            return Err(Error::InvalidParameter("rank must be at least 1".into()));
        }
        w.check_binary()?;
        let y: Vec<f64> = x.data().iter().zip(w.data()).map(|(a, b)| a * b).collect();
        let gamma = y.iter().map(|v| v * v).sum();
        let shape = x.shape().clone();
        Ok(DenseObjective {
            t: vec![0.0; y.len()],
            factors: factor_buffers(&shape, rank),
            grads: factor_buffers(&shape, rank),
            w: w.data().to_vec(),
            y,
            gamma,
            shape,
            rank,
        })
    }

    /// `γ = ‖W ∗ X‖²`.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Objective for DenseObjective {
    fn shape(&self) -> &Shape {
        &self.shape
    }

    fn rank(&self) -> usize {
        self.rank
    }

    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        unpack_into(x, &mut self.factors);
        kernels::full_raw(&self.factors, None, &mut self.t);
        let mut f = 0.0;
        for ((t, y), w) in self.t.iter_mut().zip(&self.y).zip(&self.w) {
            *t = y - w * *t;
            f += *t * *t;
        }
        for (n, g) in self.grads.iter_mut().enumerate() {
            kernels::mttkrp_dense_raw(&self.t, self.shape.dims(), &self.factors, n, g);
        }
        pack_negated(&self.grads, grad);
        0.5 * f
    }
}

/// Sparse-path workspace. Auxiliary storage is `O(Q + R Σ I_n)`.
pub struct SparseObjective<'a> {
    samples: &'a SparseSamples,
    rank: usize,
    gamma: f64,
    t: Vec<f64>,
    u: Vec<f64>,
    factors: Vec<FactorMatrix>,
    grads: Vec<FactorMatrix>,
}

impl<'a> SparseObjective<'a> {
    pub fn new(samples: &'a SparseSamples, rank: usize) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidParameter("rank must be at least 1".into()));
        }
        let q = samples.len();
        let shape = samples.shape();
        Ok(SparseObjective {
            samples,
            rank,
            gamma: samples.values().iter().map(|v| v * v).sum(),
            t: vec![0.0; q],
            u: vec![0.0; q],
            factors: factor_buffers(shape, rank),
            grads: factor_buffers(shape, rank),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Objective for SparseObjective<'_> {
    fn shape(&self) -> &Shape {
        self.samples.shape()
    }

    fn rank(&self) -> usize {
        self.rank
    }

    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        unpack_into(x, &mut self.factors);
        let idx = self.samples.indices();
        kernels::values_at_raw(idx, &self.factors, None, &mut self.t, &mut self.u);
        let mut f = 0.0;
        for (t, y) in self.t.iter_mut().zip(self.samples.values()) {
            *t = y - *t;
            f += *t * *t;
        }
        for (n, g) in self.grads.iter_mut().enumerate() {
            kernels::mttkrp_coords_raw(idx, &self.t, &self.factors, n, &mut self.u, g);
        }
        pack_negated(&self.grads, grad);
        0.5 * f
    }
}

fn unpack_grads(shape: &Shape, rank: usize, g: &[f64]) -> Vec<FactorMatrix> {
    let mut out = factor_buffers(shape, rank);
    unpack_into(g, &mut out);
    out
}

fn check_shape(model: &KruskalModel, shape: &Shape) -> Result<()> {
    if &model.shape() != shape {
        return Err(Error::ShapeMismatch(format!(
            "model shape {} vs data shape {shape}",
            model.shape()
        )));
    }
    Ok(())
}

/// `(f, [G^(1), ..., G^(N)])` from dense data and a binary weight tensor.
/// Any weights of `model` are folded into its first factor.
pub fn objective_grad_dense(
    x: &DenseTensor,
    w: &DenseTensor,
    model: &KruskalModel,
) -> Result<(f64, Vec<FactorMatrix>)> {
    check_shape(model, x.shape())?;
    let mut obj = DenseObjective::new(x, w, model.rank())?;
    let xv = model.absorb_lambda().to_vec();
    let mut g = vec![0.0; xv.len()];
    let f = obj.eval(&xv, &mut g);
    Ok((f, unpack_grads(x.shape(), model.rank(), &g)))
}

/// Sparse counterpart of [`objective_grad_dense`]; the result equals the
/// dense one on the zero-filled densification of `s`.
pub fn objective_grad_sparse(s: &SparseSamples, model: &KruskalModel) -> Result<(f64, Vec<FactorMatrix>)> {
    check_shape(model, s.shape())?;
    let mut obj = SparseObjective::new(s, model.rank())?;
    let xv = model.absorb_lambda().to_vec();
    let mut g = vec![0.0; xv.len()];
    let f = obj.eval(&xv, &mut g);
    Ok((f, unpack_grads(s.shape(), model.rank(), &g)))
}
