//! Multilinear kernels: Khatri-Rao product, model evaluation and MTTKRP.
//!
//! The `*_raw` functions work on plain slices and preallocated outputs so
//! the objective can call them on every evaluation without allocating
//! tensor-sized storage. The public wrappers validate their arguments.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};

use crate::error::{Error, Result};
use crate::kruskal::KruskalModel;
use crate::tensor::{DenseTensor, SparseSamples};

/// Column-wise Kronecker product `M_1 ⊙ M_2 ⊙ ... ⊙ M_K`.
///
/// The row index of the last matrix varies fastest, so
/// `khatri_rao(&[C, B])` is the `C ⊙ B` that appears in `X_(1) = A (C ⊙ B)ᵀ`.
pub fn khatri_rao(mats: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = mats
        .first()
        .ok_or_else(|| Error::InvalidParameter("khatri_rao needs at least one matrix".into()))?;
    let rank = first.ncols();
    if let Some(m) = mats.iter().find(|m| m.ncols() != rank) {
        return Err(Error::ShapeMismatch(format!(
            "khatri_rao column counts {} and {}",
            rank,
            m.ncols()
        )));
    }
    Ok(khatri_rao_cols(mats.iter().copied(), rank))
}

/// Khatri-Rao product of an iterator of matrices with `rank` columns; the
/// empty product is a `1 × rank` matrix of ones.
pub(crate) fn khatri_rao_cols<'a>(
    mats: impl Iterator<Item = &'a DMatrix<f64>> + Clone,
    rank: usize,
) -> DMatrix<f64> {
    let rows: usize = mats.clone().map(|m| m.nrows()).product();
    let mut out = DMatrix::zeros(rows, rank);
    let mut cur = Vec::with_capacity(rows);
    let mut next = Vec::with_capacity(rows);
    for r in 0..rank {
        cur.clear();
        cur.push(1.0);
        for m in mats.clone() {
            next.clear();
            let col = m.column(r);
            for &a in &cur {
                next.extend(col.iter().map(|&b| a * b));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        out.column_mut(r).copy_from_slice(&cur);
    }
    out
}

/// `A^(−n) = A^(N) ⊙ ... ⊙ A^(n+1) ⊙ A^(n−1) ⊙ ... ⊙ A^(1)`.
pub fn khatri_rao_except(factors: &[DMatrix<f64>], mode: usize) -> DMatrix<f64> {
    let rank = factors.first().map_or(0, |f| f.ncols());
    khatri_rao_cols(
        factors
            .iter()
            .enumerate()
            .rev()
            .filter(move |&(m, _)| m != mode)
            .map(|(_, f)| f),
        rank,
    )
}

/// Writes `⟦λ; A^(1), ..., A^(N)⟧` into `out` (dense linearization).
pub(crate) fn full_raw(factors: &[DMatrix<f64>], lambda: Option<&[f64]>, out: &mut [f64]) {
    let rank = factors[0].ncols();
    let rows = factors[0].nrows();
    let rest = out.len() / rows;
    let mut lead = factors[0].clone();
    if let Some(l) = lambda {
        for (r, &lr) in l.iter().enumerate() {
            lead.column_mut(r).scale_mut(lr);
        }
    }
    let kt = khatri_rao_cols(factors[1..].iter().rev(), rank).transpose();
    let mut view = DMatrixViewMut::from_slice(out, rows, rest);
    view.gemm(1.0, &lead, &kt, 0.0);
}

/// Model values at `Q` coordinates, accumulated one rank-one term at a time.
///
/// `u` is scratch of length `Q`; for each term it is built as the Hadamard
/// product of the expanded vectors `v^(n)_q = A^(n)[i_q^(n), r]`, each
/// gathered and applied in a single pass so no more than one expanded
/// vector is live at once.
pub(crate) fn values_at_raw(
    indices: &[usize],
    factors: &[DMatrix<f64>],
    lambda: Option<&[f64]>,
    z: &mut [f64],
    u: &mut [f64],
) {
    let ndims = factors.len();
    let rank = factors[0].ncols();
    z.fill(0.0);
    for r in 0..rank {
        u.fill(lambda.map_or(1.0, |l| l[r]));
        for (n, f) in factors.iter().enumerate() {
            let col = f.column(r);
            let col = col.as_slice();
            for (uq, idx) in u.iter_mut().zip(indices.chunks_exact(ndims)) {
                *uq *= col[idx[n]];
            }
        }
        for (zq, uq) in z.iter_mut().zip(u.iter()) {
            *zq += uq;
        }
    }
}

/// Sparse MTTKRP: `out[j, r] = Σ_{q: i_q^(n) = j} t_q ∏_{m≠n} A^(m)[i_q^(m), r]`.
///
/// Accumulation runs in index order, so results do not depend on
/// scheduling. `u` is scratch of length `Q`.
pub(crate) fn mttkrp_coords_raw(
    indices: &[usize],
    t: &[f64],
    factors: &[DMatrix<f64>],
    mode: usize,
    u: &mut [f64],
    out: &mut DMatrix<f64>,
) {
    let ndims = factors.len();
    let rank = factors[0].ncols();
    out.fill(0.0);
    for r in 0..rank {
        u.copy_from_slice(t);
        for (m, f) in factors.iter().enumerate() {
            if m == mode {
                continue;
            }
            let col = f.column(r);
            let col = col.as_slice();
            for (uq, idx) in u.iter_mut().zip(indices.chunks_exact(ndims)) {
                *uq *= col[idx[m]];
            }
        }
        let mut g = out.column_mut(r);
        for (uq, idx) in u.iter().zip(indices.chunks_exact(ndims)) {
            g[idx[mode]] += uq;
        }
    }
}

/// Dense MTTKRP `T_(n) · A^(−n)` without forming the unfolding.
///
/// The data is viewed as `left × I_n × right` blocks; each contiguous
/// `left × I_n` slab is multiplied by the Khatri-Rao product of the lower
/// modes and scaled by the matching row of the upper-mode product.
pub(crate) fn mttkrp_dense_raw(
    data: &[f64],
    dims: &[usize],
    factors: &[DMatrix<f64>],
    mode: usize,
    out: &mut DMatrix<f64>,
) {
    let rank = factors[0].ncols();
    let rows = dims[mode];
    let left: usize = dims[..mode].iter().product();
    let right: usize = dims[mode + 1..].iter().product();
    let upper = khatri_rao_cols(factors[mode + 1..].iter().rev(), rank);
    if mode == 0 {
        let t = DMatrixView::from_slice(data, rows, right);
        out.gemm(1.0, &t, &upper, 0.0);
        return;
    }
    let lower = khatri_rao_cols(factors[..mode].iter().rev(), rank);
    out.fill(0.0);
    let mut buf = DMatrix::zeros(rows, rank);
    for (rt, slab) in data.chunks_exact(left * rows).enumerate() {
        let slab = DMatrixView::from_slice(slab, left, rows);
        buf.gemm_tr(1.0, &slab, &lower, 0.0);
        for r in 0..rank {
            let s = upper[(rt, r)];
            if s != 0.0 {
                out.column_mut(r).axpy(s, &buf.column(r), 1.0);
            }
        }
    }
}

fn check_model_shape(model: &KruskalModel, dims: &[usize]) -> Result<()> {
    if model.shape().dims() != dims {
        return Err(Error::ShapeMismatch(format!(
            "model shape {} vs data shape {:?}",
            model.shape(),
            dims
        )));
    }
    Ok(())
}

/// `T_(n) · (A^(N) ⊙ ... ⊙ A^(n+1) ⊙ A^(n−1) ⊙ ... ⊙ A^(1))`.
///
/// The model weights `λ` are not applied; fold them into a factor first
/// if they are not all one.
pub fn mttkrp_dense(t: &DenseTensor, model: &KruskalModel, mode: usize) -> Result<DMatrix<f64>> {
    t.shape().check_mode(mode)?;
    check_model_shape(model, t.shape().dims())?;
    let mut out = DMatrix::zeros(t.shape().dim(mode), model.rank());
    mttkrp_dense_raw(t.data(), t.shape().dims(), model.factors(), mode, &mut out);
    Ok(out)
}

/// Sparse counterpart of [`mttkrp_dense`] over the stored entries of `s`;
/// equal to [`mttkrp_dense`] applied to the zero-filled densification.
pub fn mttkrp_sparse(s: &SparseSamples, model: &KruskalModel, mode: usize) -> Result<DMatrix<f64>> {
    s.shape().check_mode(mode)?;
    check_model_shape(model, s.shape().dims())?;
    let mut out = DMatrix::zeros(s.shape().dim(mode), model.rank());
    let mut u = vec![0.0; s.len()];
    mttkrp_coords_raw(s.indices(), s.values(), model.factors(), mode, &mut u, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn single_matrix_is_itself() {
        let a = mat(3, 2, &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(khatri_rao(&[&a]).unwrap(), a);
    }

    #[test]
    fn hand_kronecker_two_by_two() {
        let a = mat(2, 2, &[1., 1., 1., 1.]);
        let b = mat(2, 2, &[1., 2., 3., 4.]);
        let kr = khatri_rao(&[&a, &b]).unwrap();
        // column r = a_r ⊗ b_r = [b_r; b_r]
        let expected = mat(4, 2, &[1., 2., 3., 4., 1., 2., 3., 4.]);
        assert_eq!(kr, expected);

        let c = mat(2, 2, &[2., 0., -1., 3.]);
        let kr = khatri_rao(&[&c, &b]).unwrap();
        let expected = mat(4, 2, &[2., 0., 6., 0., -1., 6., -3., 12.]);
        assert_eq!(kr, expected);
    }

    #[test]
    fn column_mismatch() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::zeros(2, 3);
        assert!(matches!(khatri_rao(&[&a, &b]), Err(Error::ShapeMismatch(_))));
        assert!(khatri_rao(&[]).is_err());
    }

    #[test]
    fn zero_tensor_mttkrp() {
        let model = KruskalModel::from_factors(vec![
            DMatrix::from_element(3, 2, 1.0),
            DMatrix::from_element(2, 2, 1.0),
            DMatrix::from_element(2, 2, 1.0),
        ])
        .unwrap();
        let t = DenseTensor::zeros(model.shape());
        for n in 0..3 {
            assert_eq!(mttkrp_dense(&t, &model, n).unwrap(), DMatrix::zeros(model.shape().dim(n), 2));
        }
        let s = SparseSamples::from_dense(&t);
        assert_eq!(mttkrp_sparse(&s, &model, 1).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn matrix_case_reduces_to_product() {
        let a = mat(3, 2, &[1., 2., 3., 4., 5., 6.]);
        let b = mat(4, 2, &[1., 0., 0., 1., 2., -1., 0.5, 3.]);
        let model = KruskalModel::from_factors(vec![a.clone(), b.clone()]).unwrap();
        let t = DenseTensor::new(
            Shape::new(vec![3, 4]).unwrap(),
            (0..12).map(|v| (v as f64).sin()).collect(),
        )
        .unwrap();
        let tm = DMatrix::from_column_slice(3, 4, t.data());
        assert!((mttkrp_dense(&t, &model, 0).unwrap() - &tm * &b).abs().max() < 1e-14);
        assert!((mttkrp_dense(&t, &model, 1).unwrap() - tm.transpose() * &a).abs().max() < 1e-14);
    }

    #[test]
    fn single_entry_sparse_mttkrp() {
        let a = mat(3, 2, &[1., 2., 3., 4., 5., 6.]);
        let b = mat(2, 2, &[0.5, -1., 2., 3.]);
        let c = mat(2, 2, &[1., 1., -2., 4.]);
        let model = KruskalModel::from_factors(vec![a, b.clone(), c.clone()]).unwrap();
        let s = SparseSamples::new(model.shape(), vec![2, 1, 0], vec![1.5]).unwrap();
        let g = mttkrp_sparse(&s, &model, 0).unwrap();
        for r in 0..2 {
            assert_eq!(g[(2, r)], 1.5 * b[(1, r)] * c[(0, r)]);
            assert_eq!(g[(0, r)], 0.0);
            assert_eq!(g[(1, r)], 0.0);
        }
    }

    #[test]
    fn sparse_mode_out_of_range() {
        let model = KruskalModel::from_factors(vec![DMatrix::from_element(2, 1, 1.0); 3]).unwrap();
        let s = SparseSamples::new(model.shape(), vec![0, 0, 0], vec![1.0]).unwrap();
        assert!(matches!(mttkrp_sparse(&s, &model, 3), Err(Error::BadMode { .. })));
    }
}
