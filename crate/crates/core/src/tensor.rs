//! Dense and coordinate-format tensors.
//!
//! Dense values are stored with mode 1 varying fastest: the entry at
//! zero-based index `(i_1, ..., i_N)` lives at
//! `i_1 + I_1 * (i_2 + I_2 * (i_3 + ...))`. Mode-`n` matricization places
//! `i_n` on the rows and orders the columns with the remaining modes,
//! lower modes fastest. With this layout `X_(1)` is a plain column-major
//! view of the data.
//!
//! Modes are zero-based throughout the library.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extents `(I_1, ..., I_N)` of a tensor.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape(Vec<usize>);

impl TryFrom<Vec<usize>> for Shape {
    type Error = Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Shape::new(dims)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.0
    }
}

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidShape("a tensor needs at least one mode".into()));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidShape(format!("extent of mode {pos} is zero")));
        }
        let shape = Shape(dims);
        if shape.numel_checked().is_none() {
            return Err(Error::InvalidShape(format!(
                "element count of {:?} overflows",
                shape.0
            )));
        }
        Ok(shape)
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn ndims(&self) -> usize {
        self.0.len()
    }

    pub fn dim(&self, mode: usize) -> usize {
        self.0[mode]
    }

    /// Total number of entries, `∏ I_n`.
    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn numel_checked(&self) -> Option<usize> {
        self.0.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
    }

    pub fn check_mode(&self, mode: usize) -> Result<()> {
        if mode < self.ndims() {
            Ok(())
        } else {
            Err(Error::BadMode {
                mode,
                ndims: self.ndims(),
            })
        }
    }

    pub fn contains(&self, idx: &[usize]) -> bool {
        idx.len() == self.ndims() && idx.iter().zip(&self.0).all(|(&i, &d)| i < d)
    }

    /// Linear position of a (zero-based) multi-index.
    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert!(self.contains(idx));
        idx.iter()
            .zip(&self.0)
            .rev()
            .fold(0usize, |acc, (&i, &d)| acc * d + i)
    }

    /// Inverse of [`Shape::linear_index`].
    pub fn multi_index(&self, mut lin: usize, out: &mut [usize]) {
        for (o, &d) in out.iter_mut().zip(&self.0) {
            *o = lin % d;
            lin /= d;
        }
    }

    /// Product of the extents of all modes before `mode`.
    pub(crate) fn left_size(&self, mode: usize) -> usize {
        self.0[..mode].iter().product()
    }

    /// Product of the extents of all modes after `mode`.
    pub(crate) fn right_size(&self, mode: usize) -> usize {
        self.0[mode + 1..].iter().product()
    }

    /// Sum of extents, `Σ I_n`.
    pub fn sum(&self) -> usize {
        self.0.iter().sum()
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

/// Canonical order for coordinates: lexicographic with the last mode
/// slowest, which coincides with the order of dense linear positions.
pub fn cmp_coords(a: &[usize], b: &[usize]) -> Ordering {
    a.iter().rev().cmp(b.iter().rev())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape {shape}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("dense value at position {pos}")));
        }
        Ok(DenseTensor { shape, data })
    }

    pub(crate) fn from_raw(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.numel());
        DenseTensor { shape, data }
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.numel();
        DenseTensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn ones(shape: Shape) -> Self {
        let n = shape.numel();
        DenseTensor {
            shape,
            data: vec![1.0; n],
        }
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut idx = vec![0; shape.ndims()];
        let data = (0..shape.numel())
            .map(|lin| {
                shape.multi_index(lin, &mut idx);
                f(&idx)
            })
            .collect();
        DenseTensor { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.shape.linear_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let lin = self.shape.linear_index(idx);
        self.data[lin] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn check_same_shape(&self, other: &DenseTensor) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{} vs {}",
                self.shape, other.shape
            )))
        }
    }

    /// Frobenius norm `sqrt(Σ x²)`.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &DenseTensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn hadamard(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.check_same_shape(other)?;
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    /// `‖W ∗ X‖`.
    pub fn weighted_norm(&self, weights: &DenseTensor) -> Result<f64> {
        self.check_same_shape(weights)?;
        Ok(self
            .data
            .iter()
            .zip(&weights.data)
            .map(|(x, w)| (w * x) * (w * x))
            .sum::<f64>()
            .sqrt())
    }

    /// Mode-`mode` unfolding, an `I_n × ∏_{m≠n} I_m` matrix.
    pub fn matricize(&self, mode: usize) -> Result<DMatrix<f64>> {
        self.shape.check_mode(mode)?;
        let rows = self.shape.dim(mode);
        let left = self.shape.left_size(mode);
        let right = self.shape.right_size(mode);
        let mut m = DMatrix::zeros(rows, left * right);
        for r in 0..right {
            for i in 0..rows {
                let src = left * (i + rows * r);
                for l in 0..left {
                    m[(i, l + left * r)] = self.data[src + l];
                }
            }
        }
        Ok(m)
    }

    /// Inverse of [`DenseTensor::matricize`].
    pub fn fold(m: &DMatrix<f64>, shape: Shape, mode: usize) -> Result<DenseTensor> {
        shape.check_mode(mode)?;
        let rows = shape.dim(mode);
        let left = shape.left_size(mode);
        let right = shape.right_size(mode);
        if m.nrows() != rows || m.ncols() != left * right {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} matrix cannot fold into mode {mode} of {shape}",
                m.nrows(),
                m.ncols()
            )));
        }
        let mut data = vec![0.0; shape.numel()];
        for r in 0..right {
            for i in 0..rows {
                let dst = left * (i + rows * r);
                for l in 0..left {
                    data[dst + l] = m[(i, l + left * r)];
                }
            }
        }
        DenseTensor::new(shape, data)
    }

    /// Checks that every entry is 0 or 1.
    pub fn check_binary(&self) -> Result<()> {
        match self.data.iter().find(|&&w| w != 0.0 && w != 1.0) {
            Some(&w) => Err(Error::NonBinaryWeights(w)),
            None => Ok(()),
        }
    }
}

/// Known entries of an incomplete tensor in coordinate form.
///
/// Index tuples are zero-based, unique, and kept in canonical order
/// (see [`cmp_coords`]). Presence of an index stands for weight 1; every
/// absent index is missing.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSamples {
    shape: Shape,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSamples {
    /// `indices` holds `Q` tuples back to back (`Q * N` entries).
    pub fn new(shape: Shape, indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n = shape.ndims();
        if indices.len() != values.len() * n {
            return Err(Error::ShapeMismatch(format!(
                "{} index entries for {} values of a {n}-way tensor",
                indices.len(),
                values.len()
            )));
        }
        if values.is_empty() {
            return Err(Error::InvalidParameter("no known entries".into()));
        }
        for (q, idx) in indices.chunks_exact(n).enumerate() {
            if !shape.contains(idx) {
                return Err(Error::IndexOutOfRange(format!("{idx:?} in shape {shape}")));
            }
            if q > 0 {
                match cmp_coords(&indices[(q - 1) * n..q * n], idx) {
                    Ordering::Less => {}
                    Ordering::Equal => return Err(Error::DuplicateIndex(idx.to_vec())),
                    Ordering::Greater => return Err(Error::Unsorted(q)),
                }
            }
        }
        if let Some(q) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("value of entry {q}")));
        }
        Ok(SparseSamples {
            shape,
            indices,
            values,
        })
    }

    /// Sorts arbitrary `(index, value)` pairs into canonical order.
    /// Duplicate indices are rejected.
    pub fn from_entries(shape: Shape, mut entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        entries.sort_by(|a, b| cmp_coords(&a.0, &b.0));
        let mut indices = Vec::with_capacity(entries.len() * shape.ndims());
        let mut values = Vec::with_capacity(entries.len());
        for (idx, v) in entries {
            if idx.len() != shape.ndims() {
                return Err(Error::ShapeMismatch(format!(
                    "index {idx:?} for a {}-way tensor",
                    shape.ndims()
                )));
            }
            indices.extend_from_slice(&idx);
            values.push(v);
        }
        SparseSamples::new(shape, indices, values)
    }

    /// Entries of `x` where `w == 1`.
    pub fn from_dense_masked(x: &DenseTensor, w: &DenseTensor) -> Result<Self> {
        x.check_same_shape(w)?;
        w.check_binary()?;
        let shape = x.shape().clone();
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut idx = vec![0; shape.ndims()];
        for (lin, (&xv, &wv)) in x.data.iter().zip(&w.data).enumerate() {
            if wv == 1.0 {
                shape.multi_index(lin, &mut idx);
                indices.extend_from_slice(&idx);
                values.push(xv);
            }
        }
        SparseSamples::new(shape, indices, values)
    }

    /// Every entry of a dense tensor.
    pub fn from_dense(x: &DenseTensor) -> Self {
        let w = DenseTensor::ones(x.shape().clone());
        SparseSamples::from_dense_masked(x, &w).expect("dense tensor is valid")
    }

    pub(crate) fn from_raw(shape: Shape, indices: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(indices.len(), values.len() * shape.ndims());
        SparseSamples {
            shape,
            indices,
            values,
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn ndims(&self) -> usize {
        self.shape.ndims()
    }

    /// Number of known entries `Q`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, q: usize) -> &[usize] {
        let n = self.ndims();
        &self.indices[q * n..(q + 1) * n]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> {
        self.indices
            .chunks_exact(self.ndims())
            .zip(self.values.iter().copied())
    }

    /// Same index set with new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} indices",
                values.len(),
                self.values.len()
            )));
        }
        if let Some(q) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("value of entry {q}")));
        }
        Ok(SparseSamples {
            shape: self.shape.clone(),
            indices: self.indices.clone(),
            values,
        })
    }

    /// `‖y‖`, which equals `‖W ∗ X‖`.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Zero-filled data tensor and binary weight tensor.
    pub fn densify(&self) -> (DenseTensor, DenseTensor) {
        let mut x = DenseTensor::zeros(self.shape.clone());
        let mut w = DenseTensor::zeros(self.shape.clone());
        for (idx, v) in self.iter() {
            let lin = self.shape.linear_index(idx);
            x.data[lin] = v;
            w.data[lin] = 1.0;
        }
        (x, w)
    }

    /// Number of known entries in each slab of `mode`.
    pub fn slab_counts(&self, mode: usize) -> Result<Vec<usize>> {
        self.shape.check_mode(mode)?;
        let mut counts = vec![0; self.shape.dim(mode)];
        for idx in self.indices.chunks_exact(self.ndims()) {
            counts[idx[mode]] += 1;
        }
        Ok(counts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(d: &[usize]) -> Shape {
        Shape::new(d.to_vec()).unwrap()
    }

    fn seq(d: &[usize]) -> DenseTensor {
        let s = shape(d);
        let n = s.numel();
        DenseTensor::new(s, (1..=n).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn shape_rejects_zero_extent() {
        assert!(Shape::new(vec![2, 0, 3]).is_err());
        assert!(Shape::new(vec![]).is_err());
    }

    #[test]
    fn linear_index_is_mode_one_fastest() {
        let s = shape(&[2, 3, 4]);
        assert_eq!(s.linear_index(&[1, 0, 0]), 1);
        assert_eq!(s.linear_index(&[0, 1, 0]), 2);
        assert_eq!(s.linear_index(&[0, 0, 1]), 6);
        let mut idx = [0; 3];
        s.multi_index(23, &mut idx);
        assert_eq!(idx, [1, 2, 3]);
    }

    #[test]
    fn norm_of_ones() {
        let x = DenseTensor::ones(shape(&[2, 2, 2]));
        assert!((x.norm() - 8f64.sqrt()).abs() < 1e-15);
        assert_eq!(DenseTensor::zeros(shape(&[2, 2, 2])).norm(), 0.0);
    }

    #[test]
    fn inner_shape_mismatch() {
        let a = DenseTensor::ones(shape(&[2, 2]));
        let b = DenseTensor::ones(shape(&[2, 3]));
        assert!(matches!(a.inner(&b), Err(Error::ShapeMismatch(_))));
        assert!(a.hadamard(&b).is_err());
        assert!(a.weighted_norm(&b).is_err());
    }

    #[test]
    fn hadamard_identities() {
        let x = seq(&[2, 3, 2]);
        let ones = DenseTensor::ones(x.shape().clone());
        let zero = DenseTensor::zeros(x.shape().clone());
        assert_eq!(x.hadamard(&ones).unwrap(), x);
        assert_eq!(x.hadamard(&zero).unwrap(), zero);
    }

    #[test]
    fn mode_one_unfolding_of_two_cube() {
        let x = seq(&[2, 2, 2]);
        let m = x.matricize(0).unwrap();
        let expected = DMatrix::from_row_slice(2, 4, &[1., 3., 5., 7., 2., 4., 6., 8.]);
        assert_eq!(m, expected);
    }

    #[test]
    fn unfoldings_follow_fiber_definition() {
        // Enumerate mode-n fibers directly: column j collects the entries
        // with all other indices fixed, lower modes varying fastest.
        let x = seq(&[3, 4, 2]);
        let dims = [3, 4, 2];
        for n in 0..3 {
            let m = x.matricize(n).unwrap();
            let others: Vec<usize> = (0..3).filter(|&k| k != n).collect();
            let mut col = 0;
            for b in 0..dims[others[1]] {
                for a in 0..dims[others[0]] {
                    for i in 0..dims[n] {
                        let mut idx = [0; 3];
                        idx[n] = i;
                        idx[others[0]] = a;
                        idx[others[1]] = b;
                        assert_eq!(m[(i, col)], x.get(&idx));
                    }
                    col += 1;
                }
            }
        }
    }

    #[test]
    fn matricize_bad_mode() {
        let x = seq(&[2, 2, 2]);
        assert!(matches!(x.matricize(3), Err(Error::BadMode { .. })));
    }

    #[test]
    fn sparse_rejects_duplicates_and_disorder() {
        let s = shape(&[2, 2]);
        let dup = SparseSamples::new(s.clone(), vec![0, 1, 0, 1], vec![1.0, 2.0]);
        assert!(matches!(dup, Err(Error::DuplicateIndex(_))));
        let unsorted = SparseSamples::new(s.clone(), vec![0, 1, 1, 0], vec![1.0, 2.0]);
        assert!(matches!(unsorted, Err(Error::Unsorted(1))));
        let oob = SparseSamples::new(s.clone(), vec![2, 0], vec![1.0]);
        assert!(matches!(oob, Err(Error::IndexOutOfRange(_))));
        let dup = SparseSamples::from_entries(s, vec![(vec![1, 1], 1.0), (vec![1, 1], 2.0)]);
        assert!(matches!(dup, Err(Error::DuplicateIndex(_))));
    }

    #[test]
    fn sparse_order_matches_linear_order() {
        let s = shape(&[3, 2, 2]);
        let entries = vec![
            (vec![0, 0, 1], 1.0),
            (vec![2, 1, 0], 2.0),
            (vec![1, 0, 0], 3.0),
        ];
        let sp = SparseSamples::from_entries(s.clone(), entries).unwrap();
        let lins: Vec<usize> = (0..sp.len()).map(|q| s.linear_index(sp.index(q))).collect();
        assert_eq!(lins, vec![1, 5, 6]);
    }

    #[test]
    fn densify_round_trip() {
        let x = seq(&[3, 2, 2]);
        let mut w = DenseTensor::ones(x.shape().clone());
        w.set(&[1, 1, 0], 0.0);
        w.set(&[2, 0, 1], 0.0);
        let sp = SparseSamples::from_dense_masked(&x, &w).unwrap();
        assert_eq!(sp.len(), 10);
        let (xd, wd) = sp.densify();
        assert_eq!(wd, w);
        assert_eq!(xd, x.hadamard(&w).unwrap());
        assert!((sp.norm() - x.weighted_norm(&w).unwrap()).abs() < 1e-12);
    }
}
