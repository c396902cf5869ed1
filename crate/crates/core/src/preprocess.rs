//! Data preprocessing that only looks at known entries.

use crate::error::{Error, Result};
use crate::tensor::SparseSamples;

/// Output of [`center_ignore_missing`].
#[derive(Clone, Debug, PartialEq)]
pub struct Centered {
    pub samples: SparseSamples,
    /// Mean of the known entries of each mode-`n` slab.
    pub means: Vec<f64>,
}

/// Subtracts from every known entry the mean of the known entries that
/// share its mode-`mode` index.
pub fn center_ignore_missing(s: &SparseSamples, mode: usize) -> Result<Centered> {
    let counts = s.slab_counts(mode)?;
    if let Some(index) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptySlab { mode, index });
    }
    let mut sums = vec![0.0; counts.len()];
    for (idx, v) in s.iter() {
        sums[idx[mode]] += v;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    let values = s.iter().map(|(idx, v)| v - means[idx[mode]]).collect();
    Ok(Centered {
        samples: s.with_values(values)?,
        means,
    })
}

/// Adds the slab means back to values produced for centered data.
pub fn uncenter(indices: &[usize], ndims: usize, values: &mut [f64], mode: usize, means: &[f64]) {
    for (v, idx) in values.iter_mut().zip(indices.chunks_exact(ndims)) {
        *v += means[idx[mode]];
    }
}

/// `x ← log(1 + x)` on every known entry.
pub fn log1p(s: &SparseSamples) -> Result<SparseSamples> {
    if let Some(v) = s.values().iter().find(|&&v| v <= -1.0) {
        return Err(Error::InvalidParameter(format!("log1p of {v}")));
    }
    s.with_values(s.values().iter().map(|v| v.ln_1p()).collect())
}
