//! Seeded synthetic problems and starting points.
//!
//! Every random artifact draws from its own ChaCha8 stream keyed by
//! `(seed, stream)`, so for a fixed seed the truth model does not change
//! when the missing fraction, pattern or noise level does.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels;
use crate::kruskal::{FactorMatrix, KruskalModel};
use crate::tensor::{DenseTensor, Shape, SparseSamples};

const MASK_RETRIES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Factors,
    Noise,
    Mask,
    NvecsPad,
    /// Random starting point number `k`.
    InitRandom(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Factors => 1,
            Stream::Noise => 2,
            Stream::Mask => 3,
            Stream::NvecsPad => 4,
            Stream::InitRandom(k) => 1000 + k,
        }
    }
}

pub fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream.id());
    r
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> FactorMatrix {
    DMatrix::from_fn(rows, cols, |_, _| normal(rng))
}

/// Number of missing entries for fraction `m` of `total`, i.e. `⌊m·total⌋`
/// with products that land within rounding of an integer snapped to it.
pub fn missing_count(m: f64, total: usize) -> usize {
    let x = m * total as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.max(1.0) {
        r as usize
    } else {
        x.floor() as usize
    }
}

fn check_fraction(m: f64) -> Result<()> {
    if !(0.0..1.0).contains(&m) {
        return Err(Error::InvalidParameter(format!("missing fraction {m} not in [0, 1)")));
    }
    Ok(())
}

/// Standard normal factors with unit columns and `λ = 1`.
pub fn gen_factors(shape: &Shape, rank: usize, seed: u64) -> Result<KruskalModel> {
    if rank == 0 {
        return Err(Error::InvalidParameter("rank must be at least 1".into()));
    }
    let mut r = rng(seed, Stream::Factors);
    let factors = shape
        .dims()
        .iter()
        .map(|&d| {
            let mut a = normal_matrix(d, rank, &mut r);
            for mut c in a.column_iter_mut() {
                let n = c.norm();
                c.unscale_mut(n);
            }
            a
        })
        .collect();
    KruskalModel::from_factors(factors)
}

fn noise_scale(signal: f64, noise: f64, eta: f64) -> Result<f64> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise level {eta}")));
    }
    if signal == 0.0 {
        return Err(Error::InvalidParameter("cannot scale noise to a zero signal".into()));
    }
    Ok(eta * signal / noise)
}

/// `X = Y + η (‖Y‖ / ‖N‖) N` with `N` standard normal over the whole grid.
pub fn add_noise_dense(y: &DenseTensor, eta: f64, seed: u64) -> Result<DenseTensor> {
    if eta == 0.0 {
        return Ok(y.clone());
    }
    let mut r = rng(seed, Stream::Noise);
    let n: Vec<f64> = (0..y.data().len()).map(|_| normal(&mut r)).collect();
    let nn = n.iter().map(|v| v * v).sum::<f64>().sqrt();
    let s = noise_scale(y.norm(), nn, eta)?;
    let data = y.data().iter().zip(&n).map(|(a, b)| a + s * b).collect();
    DenseTensor::new(y.shape().clone(), data)
}

/// Sparse counterpart of [`add_noise_dense`]: noise only on the known
/// entries, scaled by their clean norm.
pub fn add_noise_sparse(y: &SparseSamples, eta: f64, seed: u64) -> Result<SparseSamples> {
    if eta == 0.0 {
        return Ok(y.clone());
    }
    let mut r = rng(seed, Stream::Noise);
    let n: Vec<f64> = (0..y.len()).map(|_| normal(&mut r)).collect();
    let nn = n.iter().map(|v| v * v).sum::<f64>().sqrt();
    let s = noise_scale(y.norm(), nn, eta)?;
    y.with_values(y.values().iter().zip(&n).map(|(a, b)| a + s * b).collect())
}

/// True if every slab of every mode holds at least one nonzero of `w`.
pub fn covers_all_slices(w: &DenseTensor) -> bool {
    let shape = w.shape();
    let mut counts: Vec<Vec<usize>> = shape.dims().iter().map(|&d| vec![0; d]).collect();
    let mut idx = vec![0; shape.ndims()];
    for (lin, &v) in w.data().iter().enumerate() {
        if v != 0.0 {
            shape.multi_index(lin, &mut idx);
            for (c, &i) in counts.iter_mut().zip(&idx) {
                c[i] += 1;
            }
        }
    }
    counts.iter().all(|c| c.iter().all(|&k| k > 0))
}

fn samples_cover_all_slices(s: &SparseSamples) -> bool {
    (0..s.ndims()).all(|n| s.slab_counts(n).map_or(false, |c| c.iter().all(|&k| k > 0)))
}

fn check_coverable(known: usize, shape: &Shape) -> Result<()> {
    let need = shape.dims().iter().copied().max().unwrap_or(1);
    if known < need {
        return Err(Error::Infeasible(format!(
            "{known} known entries cannot cover every slice of {shape}"
        )));
    }
    Ok(())
}

/// Binary mask with exactly `⌊M ∏ I_n⌋` zeros placed uniformly at random,
/// resampled until every slice of every mode has a known entry.
pub fn gen_missing_random(shape: &Shape, m: f64, seed: u64) -> Result<DenseTensor> {
    check_fraction(m)?;
    let total = shape.numel();
    let missing = missing_count(m, total);
    check_coverable(total - missing, shape)?;
    let mut r = rng(seed, Stream::Mask);
    for _ in 0..MASK_RETRIES {
        let mut data = vec![1.0; total];
        for i in index::sample(&mut r, total, missing) {
            data[i] = 0.0;
        }
        let w = DenseTensor::new(shape.clone(), data)?;
        if covers_all_slices(&w) {
            return Ok(w);
        }
    }
    Err(Error::Infeasible(format!(
        "no slice-covering mask for {shape} at M={m} after {MASK_RETRIES} draws"
    )))
}

/// Missing mode-3 fibers: an `I × J` pattern with `⌊M I J⌋` zeros and no
/// all-zero row or column, repeated along the third mode.
pub fn gen_missing_fibers(shape: &Shape, m: f64, seed: u64) -> Result<DenseTensor> {
    check_fraction(m)?;
    if shape.ndims() != 3 {
        return Err(Error::InvalidShape(format!("missing fibers need 3 modes, got {shape}")));
    }
    let (ni, nj) = (shape.dim(0), shape.dim(1));
    let plane = Shape::new(vec![ni, nj])?;
    let missing = missing_count(m, ni * nj);
    check_coverable(ni * nj - missing, &plane)?;
    let mut r = rng(seed, Stream::Mask);
    for _ in 0..MASK_RETRIES {
        let mut p = vec![1.0; ni * nj];
        for i in index::sample(&mut r, ni * nj, missing) {
            p[i] = 0.0;
        }
        let p = DenseTensor::new(plane.clone(), p)?;
        if covers_all_slices(&p) {
            let k = shape.dim(2);
            let data = (0..k).flat_map(|_| p.data().iter().copied()).collect();
            return DenseTensor::new(shape.clone(), data);
        }
    }
    Err(Error::Infeasible(format!(
        "no covering fiber pattern for {shape} at M={m} after {MASK_RETRIES} draws"
    )))
}

/// `q` distinct sorted values from `0..total` using `O(q)` memory.
fn sample_distinct_sorted(r: &mut ChaCha8Rng, total: usize, q: usize) -> Vec<usize> {
    if 2 * q > total {
        let mut v = index::sample(r, total, q).into_vec();
        v.sort_unstable();
        return v;
    }
    let mut v = Vec::with_capacity(q);
    while v.len() < q {
        let need = q - v.len();
        v.extend((0..need).map(|_| r.random_range(0..total)));
        v.sort_unstable();
        v.dedup();
    }
    v
}

/// Large sparse instance whose truth and noise are only ever evaluated at
/// the `(1 − M) ∏ I_n` known indices.
pub fn gen_large_sparse(shape: &Shape, m: f64, rank: usize, eta: f64, seed: u64) -> Result<ProblemInstance> {
    check_fraction(m)?;
    let total = shape
        .numel_checked()
        .ok_or_else(|| Error::InvalidShape(format!("index count of {shape} overflows")))?;
    let q = total - missing_count(m, total);
    check_coverable(q, shape)?;
    let truth = gen_factors(shape, rank, seed)?;
    let mut r = rng(seed, Stream::Mask);
    let ndims = shape.ndims();
    for _ in 0..MASK_RETRIES {
        let lin = sample_distinct_sorted(&mut r, total, q);
        let mut indices = vec![0; q * ndims];
        for (l, idx) in lin.iter().zip(indices.chunks_exact_mut(ndims)) {
            shape.multi_index(*l, idx);
        }
        drop(lin);
        let mut z = vec![0.0; q];
        let mut u = vec![0.0; q];
        kernels::values_at_raw(&indices, truth.factors(), Some(truth.lambda()), &mut z, &mut u);
        drop(u);
        let clean = SparseSamples::from_raw(shape.clone(), indices, z);
        if !samples_cover_all_slices(&clean) {
            continue;
        }
        let samples = add_noise_sparse(&clean, eta, seed)?;
        return Ok(ProblemInstance {
            spec: InstanceSpec {
                shape: shape.clone(),
                rank,
                noise: eta,
                missing: m,
                pattern: Pattern::Entries,
                storage: Storage::Sparse,
                seed,
            },
            truth,
            observed: Observed::Sparse(samples),
        });
    }
    Err(Error::Infeasible(format!(
        "no slice-covering index set for {shape} at M={m} after {MASK_RETRIES} draws"
    )))
}

/// Gram matrix `X_(n) X_(n)ᵀ` of a dense tensor without forming `X_(n)`.
fn gram_dense(x: &DenseTensor, mode: usize) -> DMatrix<f64> {
    let dims = x.shape().dims();
    let rows = dims[mode];
    let left: usize = dims[..mode].iter().product();
    let mut g = DMatrix::zeros(rows, rows);
    if left == 1 {
        let right = x.data().len() / rows;
        let m = nalgebra::DMatrixView::from_slice(x.data(), rows, right);
        g.gemm(1.0, &m, &m.transpose(), 0.0);
        return g;
    }
    for slab in x.data().chunks_exact(left * rows) {
        let s = nalgebra::DMatrixView::from_slice(slab, left, rows);
        g.gemm_tr(1.0, &s, &s, 1.0);
    }
    g
}

/// Gram matrix of the zero-filled mode-`n` unfolding of sparse data.
fn gram_sparse(s: &SparseSamples, mode: usize) -> DMatrix<f64> {
    let dims = s.shape().dims();
    let ndims = dims.len();
    let rows = dims[mode];
    // Column of the unfolding for each entry, then group entries by column.
    let mut entries: Vec<(usize, usize, f64)> = s
        .iter()
        .map(|(idx, v)| {
            let mut col = 0;
            for m in (0..ndims).rev() {
                if m != mode {
                    col = col * dims[m] + idx[m];
                }
            }
            (col, idx[mode], v)
        })
        .collect();
    entries.sort_unstable_by_key(|e| (e.0, e.1));
    let mut g = DMatrix::zeros(rows, rows);
    for group in entries.chunk_by(|a, b| a.0 == b.0) {
        for &(_, i, a) in group {
            for &(_, j, b) in group {
                g[(i, j)] += a * b;
            }
        }
    }
    g
}

fn flip_to_peak_positive(a: &mut FactorMatrix) {
    for mut c in a.column_iter_mut() {
        let peak = c.iter().copied().fold(0.0f64, |p, v| if v.abs() > p.abs() { v } else { p });
        if peak < 0.0 {
            c.neg_mut();
        }
    }
}

/// Leading `rank` eigenvectors of a symmetric matrix, padded with
/// random unit vectors when fewer than `rank` eigenvalues are numerically
/// positive.
fn leading_vectors(g: DMatrix<f64>, rank: usize, r: &mut ChaCha8Rng) -> FactorMatrix {
    let rows = g.nrows();
    let eig = SymmetricEigen::new(g);
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = order.first().map_or(0.0, |&i| eig.eigenvalues[i].max(0.0));
    let mut a = DMatrix::zeros(rows, rank);
    let mut filled = 0;
    for &i in order.iter().take(rank) {
        if top == 0.0 || eig.eigenvalues[i] <= 1e-12 * top {
            break;
        }
        a.set_column(filled, &eig.eigenvectors.column(i));
        filled += 1;
    }
    flip_to_peak_positive(&mut a);
    for c in filled..rank {
        let mut v: nalgebra::DVector<f64> = nalgebra::DVector::from_fn(rows, |_, _| normal(r));
        let n = v.norm();
        v.unscale_mut(n);
        a.set_column(c, &v);
    }
    a
}

/// Observed data in either storage form, missing entries zero-filled.
#[derive(Clone, Copy, Debug)]
pub enum DataRef<'a> {
    Dense { x: &'a DenseTensor, w: &'a DenseTensor },
    Sparse(&'a SparseSamples),
}

impl DataRef<'_> {
    pub fn shape(&self) -> &Shape {
        match self {
            DataRef::Dense { x, .. } => x.shape(),
            DataRef::Sparse(s) => s.shape(),
        }
    }
}

/// Leading left singular vectors of each zero-filled unfolding, taken as
/// eigenvectors of `G = X_(n) X_(n)ᵀ`. With a fraction `p` of the entries
/// known, the diagonal of `G` is first scaled down to `p · diag(G)`, which
/// removes the bias that sampling puts on it; fully observed data is
/// unaffected. Columns beyond the numerical rank (including every column
/// past `I_n`) are seeded random unit vectors.
///
/// Signs: every column except in mode 1 has its largest-magnitude entry
/// positive; mode-1 columns are oriented so that `⟨X, a_r ∘ b_r ∘ ...⟩ ≥ 0`.
pub fn init_nvecs(data: DataRef<'_>, rank: usize, seed: u64) -> Result<KruskalModel> {
    if rank == 0 {
        return Err(Error::InvalidParameter("rank must be at least 1".into()));
    }
    let mut r = rng(seed, Stream::NvecsPad);
    let ndims = data.shape().ndims();
    let filled;
    let dense = match data {
        DataRef::Dense { x, w } => {
            filled = x.hadamard(w)?;
            Some(&filled)
        }
        DataRef::Sparse(_) => None,
    };
    let known = match data {
        DataRef::Dense { w, .. } => w.data().iter().filter(|&&v| v != 0.0).count(),
        DataRef::Sparse(s) => s.len(),
    };
    let p = known as f64 / data.shape().numel() as f64;
    let mut factors: Vec<FactorMatrix> = (0..ndims)
        .map(|n| {
            let mut g = match (dense, data) {
                (Some(x), _) => gram_dense(x, n),
                (None, DataRef::Sparse(s)) => gram_sparse(s, n),
                (None, DataRef::Dense { .. }) => unreachable!(),
            };
            for i in 0..g.nrows() {
                g[(i, i)] *= p;
            }
            leading_vectors(g, rank, &mut r)
        })
        .collect();
    // Singular vectors have no intrinsic sign. Orient each component so
    // that it correlates nonnegatively with the data: a component of the
    // wrong sign can only flip by shrinking through zero.
    let mut m = DMatrix::zeros(factors[0].nrows(), rank);
    match (dense, data) {
        (Some(x), _) => kernels::mttkrp_dense_raw(x.data(), x.shape().dims(), &factors, 0, &mut m),
        (None, DataRef::Sparse(s)) => {
            let mut u = vec![0.0; s.len()];
            kernels::mttkrp_coords_raw(s.indices(), s.values(), &factors, 0, &mut u, &mut m);
        }
        (None, DataRef::Dense { .. }) => unreachable!(),
    }
    for c in 0..rank {
        if factors[0].column(c).dot(&m.column(c)) < 0.0 {
            factors[0].column_mut(c).neg_mut();
        }
    }
    KruskalModel::from_factors(factors)
}

/// Standard normal factors for random start `start`.
pub fn init_random_start(shape: &Shape, rank: usize, seed: u64, start: u64) -> Result<KruskalModel> {
    if rank == 0 {
        return Err(Error::InvalidParameter("rank must be at least 1".into()));
    }
    let mut r = rng(seed, Stream::InitRandom(start));
    let factors = shape.dims().iter().map(|&d| normal_matrix(d, rank, &mut r)).collect();
    KruskalModel::from_factors(factors)
}

/// Standard normal factors, deterministic in `seed`.
pub fn init_random(shape: &Shape, rank: usize, seed: u64) -> Result<KruskalModel> {
    init_random_start(shape, rank, seed, 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    /// Individual entries missing at random.
    Entries,
    /// Whole mode-3 fibers missing.
    Fibers,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Storage {
    Dense,
    /// Generated directly in coordinate form; nothing tensor-sized is formed.
    Sparse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub shape: Shape,
    pub rank: usize,
    pub noise: f64,
    pub missing: f64,
    pub pattern: Pattern,
    pub storage: Storage,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Observed {
    /// Full noisy tensor (hidden entries included) and the binary mask.
    Dense { x: DenseTensor, w: DenseTensor },
    Sparse(SparseSamples),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    pub spec: InstanceSpec,
    pub truth: KruskalModel,
    pub observed: Observed,
}

impl ProblemInstance {
    pub fn data(&self) -> DataRef<'_> {
        match &self.observed {
            Observed::Dense { x, w } => DataRef::Dense { x, w },
            Observed::Sparse(s) => DataRef::Sparse(s),
        }
    }

    /// Known entries in coordinate form.
    pub fn samples(&self) -> Result<SparseSamples> {
        match &self.observed {
            Observed::Dense { x, w } => SparseSamples::from_dense_masked(x, w),
            Observed::Sparse(s) => Ok(s.clone()),
        }
    }

    pub fn known(&self) -> usize {
        match &self.observed {
            Observed::Dense { w, .. } => w.data().iter().filter(|&&v| v != 0.0).count(),
            Observed::Sparse(s) => s.len(),
        }
    }
}

/// Builds the instance described by `spec`.
pub fn gen_instance(spec: &InstanceSpec) -> Result<ProblemInstance> {
    match spec.storage {
        Storage::Sparse => {
            if spec.pattern != Pattern::Entries {
                return Err(Error::InvalidParameter(
                    "sparse generation supports randomly missing entries only".into(),
                ));
            }
            gen_large_sparse(&spec.shape, spec.missing, spec.rank, spec.noise, spec.seed)
        }
        Storage::Dense => {
            let truth = gen_factors(&spec.shape, spec.rank, spec.seed)?;
            let w = match spec.pattern {
                Pattern::Entries => gen_missing_random(&spec.shape, spec.missing, spec.seed)?,
                Pattern::Fibers => gen_missing_fibers(&spec.shape, spec.missing, spec.seed)?,
            };
            let x = add_noise_dense(&truth.full(), spec.noise, spec.seed)?;
            Ok(ProblemInstance {
                spec: spec.clone(),
                truth,
                observed: Observed::Dense { x, w },
            })
        }
    }
}
