//! Multi-start CP-WOPT fitting.

use serde::{Deserialize, Serialize};

use crate::datagen::{init_nvecs, init_random_start, DataRef};
use crate::error::{Error, Result};
use crate::kruskal::KruskalModel;
use crate::objective::{DenseObjective, Objective, SparseObjective};
use crate::optimizer::{ncg_minimize_observed, OptConfig, OptResult, StepInfo};
use crate::tensor::SparseSamples;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Dense,
    Sparse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub rank: usize,
    pub starts: usize,
    pub seed: u64,
    pub variant: Variant,
    pub opt: OptConfig,
}

impl FitConfig {
    pub fn new(rank: usize, starts: usize, seed: u64, variant: Variant) -> Self {
        FitConfig {
            rank,
            starts,
            seed,
            variant,
            opt: OptConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidParameter("rank must be at least 1".into()));
        }
        if self.starts == 0 {
            return Err(Error::InvalidParameter("starts must be at least 1".into()));
        }
        self.opt.validate()
    }
}

/// Outcome of one starting point.
#[derive(Clone, Debug, PartialEq)]
pub struct StartRecord {
    pub start: usize,
    pub result: Option<OptResult>,
    /// Normalized final model; `None` when the start was discarded.
    pub model: Option<KruskalModel>,
    pub error: Option<String>,
}

impl StartRecord {
    pub(crate) fn finished(start: usize, result: OptResult, model: KruskalModel) -> Self {
        if !result.f.is_finite() {
            return StartRecord {
                start,
                result: Some(result),
                model: None,
                error: Some("non-finite objective".into()),
            };
        }
        StartRecord {
            start,
            result: Some(result),
            model: Some(model),
            error: None,
        }
    }

    pub(crate) fn failed(start: usize, error: String) -> Self {
        StartRecord {
            start,
            result: None,
            model: None,
            error: Some(error),
        }
    }

    fn f(&self) -> Option<f64> {
        self.model.as_ref()?;
        self.result.as_ref().map(|r| r.f)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutput {
    /// Normalized model of the best start.
    pub best: KruskalModel,
    pub best_start: usize,
    pub starts: Vec<StartRecord>,
}

impl FitOutput {
    /// Picks the retained start with the lowest final objective, the
    /// earliest one on ties.
    pub fn from_records(starts: Vec<StartRecord>) -> Result<Self> {
        let mut best: Option<(usize, f64)> = None;
        for (k, rec) in starts.iter().enumerate() {
            if let Some(f) = rec.f() {
                if best.is_none_or(|(_, b)| f < b) {
                    best = Some((k, f));
                }
            }
        }
        let (k, _) = best.ok_or(Error::AllStartsFailed(starts.len()))?;
        Ok(FitOutput {
            best: starts[k].model.clone().expect("retained start has a model"),
            best_start: starts[k].start,
            starts,
        })
    }
}

/// `(‖y‖, Q)` over the known entries.
fn known_norm(data: DataRef<'_>) -> (f64, usize) {
    match data {
        DataRef::Dense { x, w } => {
            let (mut ss, mut q) = (0.0, 0);
            for (&v, &wv) in x.data().iter().zip(w.data()) {
                if wv != 0.0 {
                    ss += v * v;
                    q += 1;
                }
            }
            (ss.sqrt(), q)
        }
        DataRef::Sparse(s) => (s.norm(), s.len()),
    }
}

/// Multiplies every factor by the same constant so that `‖⟦A⟧‖ = target`.
pub fn scale_to_norm(model: &KruskalModel, target: f64) -> KruskalModel {
    let norm = model.norm();
    if norm == 0.0 || target == 0.0 || !target.is_finite() {
        return model.clone();
    }
    let s = (target / norm).powf(1.0 / model.ndims() as f64);
    let (factors, lambda) = model.clone().into_parts();
    KruskalModel::new(factors.into_iter().map(|f| f * s).collect(), lambda).expect("scaling keeps the model valid")
}

/// The shared start sequence: start 0 from the leading singular vectors of
/// each unfolding, start `k ≥ 1` from standard normal factors on stream `k`.
///
/// Random starts are rescaled by one constant so that the model norm matches
/// the known-entry norm extrapolated to the full grid, `‖y‖ (∏ I_n / Q)^½`.
pub fn starting_points(data: DataRef<'_>, rank: usize, starts: usize, seed: u64) -> Result<Vec<KruskalModel>> {
    let mut out = Vec::with_capacity(starts);
    if starts > 0 {
        out.push(init_nvecs(data, rank, seed)?);
    }
    let (norm, q) = known_norm(data);
    let total = data.shape().dims().iter().map(|&d| d as f64).product::<f64>();
    let target = if q == 0 { 0.0 } else { norm * (total / q as f64).sqrt() };
    for k in 1..starts {
        let m = init_random_start(data.shape(), rank, seed, k as u64)?;
        out.push(scale_to_norm(&m, target));
    }
    Ok(out)
}

/// Runs CP-WOPT from the shared start sequence.
pub fn fit_cpwopt(data: DataRef<'_>, cfg: &FitConfig) -> Result<FitOutput> {
    cfg.validate()?;
    let starts = starting_points(data, cfg.rank, cfg.starts, cfg.seed)?;
    fit_cpwopt_from(data, cfg.variant, &starts, &cfg.opt, |_, _| {})
}

/// Runs CP-WOPT from the given starting points, reporting each accepted
/// line-search step as `(start, step)`.
///
/// A start is discarded only when it ends on a non-finite objective; the
/// fit fails only if every start is discarded.
pub fn fit_cpwopt_from(
    data: DataRef<'_>,
    variant: Variant,
    starts: &[KruskalModel],
    opt: &OptConfig,
    mut observer: impl FnMut(usize, &StepInfo),
) -> Result<FitOutput> {
    opt.validate()?;
    let rank = starts
        .first()
        .ok_or_else(|| Error::InvalidParameter("no starting points".into()))?
        .rank();
    for s in starts {
        if s.rank() != rank || &s.shape() != data.shape() {
            return Err(Error::ShapeMismatch(format!(
                "start of shape {} rank {} for data {} rank {rank}",
                s.shape(),
                s.rank(),
                data.shape()
            )));
        }
    }
    let records = match (variant, data) {
        (Variant::Dense, DataRef::Dense { x, w }) => {
            run_starts(&mut DenseObjective::new(x, w, rank)?, starts, opt, &mut observer)
        }
        (Variant::Dense, DataRef::Sparse(s)) => {
            let (x, w) = s.densify();
            run_starts(&mut DenseObjective::new(&x, &w, rank)?, starts, opt, &mut observer)
        }
        (Variant::Sparse, DataRef::Sparse(s)) => {
            run_starts(&mut SparseObjective::new(s, rank)?, starts, opt, &mut observer)
        }
        (Variant::Sparse, DataRef::Dense { x, w }) => {
            let s = SparseSamples::from_dense_masked(x, w)?;
            run_starts(&mut SparseObjective::new(&s, rank)?, starts, opt, &mut observer)
        }
    };
    FitOutput::from_records(records)
}

fn run_starts(
    obj: &mut dyn Objective,
    starts: &[KruskalModel],
    opt: &OptConfig,
    observer: &mut dyn FnMut(usize, &StepInfo),
) -> Vec<StartRecord> {
    let shape = obj.shape().clone();
    let rank = obj.rank();
    starts
        .iter()
        .enumerate()
        .map(|(k, init)| {
            let x0 = init.absorb_lambda().to_vec();
            let (x, result) = ncg_minimize_observed(|x, g| obj.eval(x, g), x0, opt, |s| observer(k, s));
            if !result.f.is_finite() {
                return StartRecord::finished(k, result, init.clone());
            }
            match KruskalModel::from_vec(&shape, rank, &x) {
                Ok(m) => StartRecord::finished(k, result, m.normalize().model),
                Err(e) => StartRecord::failed(k, e.to_string()),
            }
        })
        .collect()
}
