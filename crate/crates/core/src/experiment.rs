//! Running the compared methods on generated instances and summarizing
//! factor match scores across instances.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::{DataRef, Pattern, ProblemInstance};
use crate::em_als::{fit_em_als, EmAlsConfig};
use crate::error::{Error, Result};
use crate::evaluation::fms;
use crate::fit::{fit_cpwopt_from, starting_points, FitOutput, StartRecord, Variant};
use crate::optimizer::{OptConfig, StepInfo, StopReason};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    CpwoptDense,
    CpwoptSparse,
    EmAls,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::CpwoptDense, Method::CpwoptSparse, Method::EmAls];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::CpwoptDense => "cpwopt-dense",
            Method::CpwoptSparse => "cpwopt-sparse",
            Method::EmAls => "em-als",
        }
    }

    /// Whether the method needs the data as a dense tensor.
    pub fn is_dense(self) -> bool {
        self != Method::CpwoptSparse
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }
}

/// Settings shared by every method run in an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSettings {
    pub opt: OptConfig,
    /// Sweep cap for EM-ALS.
    pub em_max_iters: usize,
}

impl Default for MethodSettings {
    fn default() -> Self {
        MethodSettings {
            opt: OptConfig::default(),
            em_max_iters: EmAlsConfig::default().max_iters,
        }
    }
}

/// Fits `data` with `method` from the shared start sequence for `seed`.
/// Dense methods densify coordinate data first.
pub fn fit_method(
    data: DataRef<'_>,
    method: Method,
    rank: usize,
    starts: usize,
    seed: u64,
    settings: &MethodSettings,
) -> Result<FitOutput> {
    fit_method_observed(data, method, rank, starts, seed, settings, |_, _| {})
}

/// [`fit_method`] that reports CP-WOPT line-search steps as `(start, step)`.
pub fn fit_method_observed(
    data: DataRef<'_>,
    method: Method,
    rank: usize,
    starts: usize,
    seed: u64,
    settings: &MethodSettings,
    observer: impl FnMut(usize, &StepInfo),
) -> Result<FitOutput> {
    if starts == 0 {
        return Err(Error::InvalidParameter("starts must be at least 1".into()));
    }
    let inits = starting_points(data, rank, starts, seed)?;
    match method {
        Method::CpwoptDense => fit_cpwopt_from(data, Variant::Dense, &inits, &settings.opt, observer),
        Method::CpwoptSparse => fit_cpwopt_from(data, Variant::Sparse, &inits, &settings.opt, observer),
        Method::EmAls => {
            let cfg = EmAlsConfig {
                rank,
                max_iters: settings.em_max_iters,
                rel_f_tol: settings.opt.rel_f_tol,
                seed,
            };
            match data {
                DataRef::Dense { x, w } => fit_em_als(x, w, &cfg, &inits),
                DataRef::Sparse(s) => {
                    let (x, w) = s.densify();
                    fit_em_als(&x, &w, &cfg, &inits)
                }
            }
        }
    }
}

/// One `(instance, method, start)` result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub shape: Vec<usize>,
    pub missing: f64,
    pub pattern: Pattern,
    pub instance: usize,
    pub seed: u64,
    pub method: Method,
    pub start: usize,
    pub f: Option<f64>,
    pub stop_reason: Option<StopReason>,
    pub iterations: Option<usize>,
    pub fevals: Option<usize>,
    pub seconds: Option<f64>,
    /// Score of this start's own model against the truth.
    pub fms: Option<f64>,
    /// Score of the best model (lowest objective) among starts `0..=start`.
    pub cumulative_best_fms: Option<f64>,
    pub error: Option<String>,
}

pub struct MethodRun {
    pub output: FitOutput,
    pub records: Vec<RunRecord>,
    /// Wall time of the whole method run, start generation included.
    pub seconds: f64,
}

/// Runs `method` on `inst` from the shared start sequence seeded by the
/// instance seed, scoring every start against the truth.
pub fn run_method(
    inst: &ProblemInstance,
    instance: usize,
    method: Method,
    starts: usize,
    settings: &MethodSettings,
) -> Result<MethodRun> {
    run_method_observed(inst, instance, method, starts, settings, |_, _| {})
}

/// [`run_method`] that reports CP-WOPT line-search steps as `(start, step)`.
pub fn run_method_observed(
    inst: &ProblemInstance,
    instance: usize,
    method: Method,
    starts: usize,
    settings: &MethodSettings,
    observer: impl FnMut(usize, &StepInfo),
) -> Result<MethodRun> {
    let timer = Instant::now();
    let spec = &inst.spec;
    let output = fit_method_observed(inst.data(), method, spec.rank, starts, spec.seed, settings, observer)?;
    let seconds = timer.elapsed().as_secs_f64();
    let mut records = Vec::with_capacity(output.starts.len());
    let mut best: Option<(f64, Option<f64>)> = None;
    for rec in &output.starts {
        let own = match &rec.model {
            Some(m) => Some(fms(&inst.truth, m)?.fms),
            None => None,
        };
        if let (Some(_), Some(r)) = (&rec.model, &rec.result) {
            if best.is_none_or(|(f, _)| r.f < f) {
                best = Some((r.f, own));
            }
        }
        records.push(record(inst, instance, method, rec, own, best.and_then(|b| b.1)));
    }
    Ok(MethodRun {
        output,
        records,
        seconds,
    })
}

fn record(
    inst: &ProblemInstance,
    instance: usize,
    method: Method,
    rec: &StartRecord,
    fms: Option<f64>,
    cumulative_best_fms: Option<f64>,
) -> RunRecord {
    let r = rec.result.as_ref();
    RunRecord {
        shape: inst.spec.shape.dims().to_vec(),
        missing: inst.spec.missing,
        pattern: inst.spec.pattern,
        instance,
        seed: inst.spec.seed,
        method,
        start: rec.start,
        f: r.map(|r| r.f),
        stop_reason: r.map(|r| r.stop_reason),
        iterations: r.map(|r| r.iterations),
        fevals: r.map(|r| r.fevals),
        seconds: r.map(|r| r.seconds),
        fms,
        cumulative_best_fms,
        error: rec.error.clone(),
    }
}

/// Five-number summary; quartiles interpolate linearly between order
/// statistics at position `p (n − 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `None` for an empty sample. NaNs are rejected.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Summary {
        n: v.len(),
        min: v[0],
        q25: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q75: quantile(&v, 0.75),
        max: v[v.len() - 1],
    })
}

/// Aggregates for one `(shape, missing, pattern, method)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub shape: Vec<usize>,
    pub missing: f64,
    pub pattern: Pattern,
    pub method: Method,
    pub instances: usize,
    /// Entry `k` summarizes the cumulative-best score after `k + 1` starts
    /// over the instances that reached that start.
    pub cumulative_fms: Vec<Option<Summary>>,
    /// Summed start times per instance.
    pub seconds: Option<Summary>,
    /// Starts ending on the relative-change or gradient test.
    pub converged: usize,
    pub failed: usize,
    pub runs: usize,
}

/// Groups records by cell in order of first appearance. The result depends
/// only on `records`.
pub fn aggregate(records: &[RunRecord]) -> Vec<CellSummary> {
    let mut cells: Vec<(CellSummary, Vec<&RunRecord>)> = Vec::new();
    for r in records {
        let pos = cells.iter().position(|(c, _)| {
            c.shape == r.shape && c.missing == r.missing && c.pattern == r.pattern && c.method == r.method
        });
        let idx = pos.unwrap_or_else(|| {
            cells.push((
                CellSummary {
                    shape: r.shape.clone(),
                    missing: r.missing,
                    pattern: r.pattern,
                    method: r.method,
                    instances: 0,
                    cumulative_fms: Vec::new(),
                    seconds: None,
                    converged: 0,
                    failed: 0,
                    runs: 0,
                },
                Vec::new(),
            ));
            cells.len() - 1
        });
        cells[idx].1.push(r);
    }
    cells
        .into_iter()
        .map(|(mut cell, recs)| {
            let mut instances: Vec<usize> = recs.iter().map(|r| r.instance).collect();
            instances.sort_unstable();
            instances.dedup();
            let max_start = recs.iter().map(|r| r.start).max().unwrap_or(0);
            cell.instances = instances.len();
            cell.cumulative_fms = (0..=max_start)
                .map(|k| {
                    let vals: Vec<f64> = recs
                        .iter()
                        .filter(|r| r.start == k)
                        .filter_map(|r| r.cumulative_best_fms)
                        .collect();
                    summarize(&vals)
                })
                .collect();
            let times: Vec<f64> = instances
                .iter()
                .map(|&i| recs.iter().filter(|r| r.instance == i).filter_map(|r| r.seconds).sum())
                .collect();
            cell.seconds = summarize(&times);
            cell.runs = recs.len();
            cell.converged = recs
                .iter()
                .filter(|r| r.stop_reason.is_some_and(|s| s.converged()))
                .count();
            cell.failed = recs.iter().filter(|r| r.error.is_some()).count();
            cell
        })
        .collect()
}
