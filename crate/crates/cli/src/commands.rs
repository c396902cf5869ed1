use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use cpwopt::datagen::{gen_instance, DataRef, InstanceSpec, Observed, Storage};
use cpwopt::evaluation::{fms, rho};
use cpwopt::experiment::{aggregate, fit_method, run_method, CellSummary, Method, MethodSettings, RunRecord, Summary};
use cpwopt::optimizer::StopReason;
use cpwopt::preprocess::{center_ignore_missing, log1p};
use cpwopt::{Error, KruskalModel, Result, SparseSamples};
use serde::{Deserialize, Serialize};

use crate::io::{self, Manifest, Preprocess};
use crate::{BenchArgs, CompleteArgs, EvalArgs, FitArgs, GenArgs, OptArgs};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))
}

/// Writes the files of one instance into `dir`.
pub fn write_instance(dir: &Path, spec: &InstanceSpec) -> Result<Manifest> {
    create_dir(dir)?;
    let inst = gen_instance(spec)?;
    let manifest = Manifest::new(spec.clone());
    io::write_tensor(&dir.join(&manifest.tensor), &inst.samples()?, false)?;
    io::write_model(&dir.join(&manifest.truth), &inst.truth, Preprocess::default())?;
    if let (Some(name), Observed::Dense { x, w }) = (&manifest.holdout, &inst.observed) {
        let hidden = w.map(|v| 1.0 - v);
        io::write_tensor(&dir.join(name), &SparseSamples::from_dense_masked(x, &hidden)?, false)?;
    }
    io::write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn gen(a: &GenArgs) -> Result<()> {
    if let Some(path) = &a.manifest {
        let manifest: Manifest = io::read_json(path)?;
        write_instance(&a.out, &manifest.instance)?;
        println!("regenerated {} in {}", manifest.instance.shape, a.out.display());
        return Ok(());
    }
    let shape = a.dims.clone().expect("clap requires dims without a manifest");
    for i in 0..a.instances {
        let spec = InstanceSpec {
            shape: shape.clone(),
            rank: a.rank,
            noise: a.noise,
            missing: a.missing,
            pattern: a.pattern.into(),
            storage: a.storage.into(),
            seed: a.seed + i as u64,
        };
        let dir = a.out.join(format!("instance-{i:03}"));
        write_instance(&dir, &spec)?;
        println!("{}", dir.display());
    }
    Ok(())
}

fn settings(o: &OptArgs) -> Result<MethodSettings> {
    let mut s = MethodSettings::default();
    if let Some(v) = o.max_iters {
        s.opt.max_iters = v;
        s.em_max_iters = v;
    }
    if let Some(v) = o.ftol {
        s.opt.rel_f_tol = v;
    }
    if let Some(v) = o.gtol {
        s.opt.grad_tol = v;
    }
    if let Some(v) = o.max_fevals {
        s.opt.max_fevals = v;
    }
    s.opt.validate()?;
    if s.em_max_iters == 0 {
        return Err(Error::InvalidParameter("max-iters must be at least 1".into()));
    }
    Ok(s)
}

/// Rough working-set size in bytes of fitting `samples` with `method`.
pub fn memory_estimate(samples: &SparseSamples, method: Method, rank: usize) -> u64 {
    let shape = samples.shape();
    let n = shape.ndims() as u64;
    let q = samples.len() as u64;
    let factors: u64 = shape.dims().iter().map(|&d| d as u64 * rank as u64).sum::<u64>() * 8;
    let grams: u64 = shape.dims().iter().map(|&d| (d as u64).pow(2)).max().unwrap_or(0) * 8 * 3;
    let base = q * 8 * (n + 6) + 6 * factors + grams;
    if method.is_dense() {
        let numel = shape.dims().iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
        numel.map_or(u64::MAX, |m| base.saturating_add(m.saturating_mul(8 * 6)))
    } else {
        base
    }
}

/// Per-start entry of `result.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub start: usize,
    pub f: Option<f64>,
    pub grad_norm: Option<f64>,
    pub stop_reason: Option<StopReason>,
    pub iterations: Option<usize>,
    pub fevals: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: Method,
    pub shape: Vec<usize>,
    pub known: usize,
    pub rank: usize,
    pub starts: usize,
    pub seed: u64,
    pub settings: MethodSettings,
    pub preprocess: Preprocess,
    pub best_start: usize,
    pub f: f64,
    pub records: Vec<StartSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub start_seconds: Vec<Option<f64>>,
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let timer = Instant::now();
    let method: Method = a.method.into();
    let settings = settings(&a.opt)?;
    if a.rank == 0 || a.starts == 0 {
        return Err(Error::InvalidParameter("rank and starts must be at least 1".into()));
    }
    let mut samples = io::read_tensor(&a.input)?.samples;
    let mut pre = Preprocess::default();
    if a.log1p {
        samples = log1p(&samples)?;
        pre.log1p = true;
    }
    if let Some(mode) = a.center_mode {
        if mode == 0 || mode > samples.ndims() {
            return Err(Error::InvalidParameter(format!(
                "center-mode {mode} is not a mode of a {}-way tensor (modes are 1-based)",
                samples.ndims()
            )));
        }
        let c = center_ignore_missing(&samples, mode - 1)?;
        samples = c.samples;
        pre.center_mode = Some(mode);
        pre.means = c.means;
    }
    let need = memory_estimate(&samples, method, a.rank);
    if need > a.memory_budget {
        return Err(Error::Infeasible(format!(
            "{method} on a {} tensor needs about {need} bytes, over the memory budget of {} bytes; \
             use cpwopt-sparse or raise --memory-budget",
            samples.shape(),
            a.memory_budget
        )));
    }
    let out = fit_method(DataRef::Sparse(&samples), method, a.rank, a.starts, a.seed, &settings)?;
    create_dir(&a.out)?;
    io::write_model(&a.out.join("model.json"), &out.best, pre.clone())?;
    let records: Vec<StartSummary> = out
        .starts
        .iter()
        .map(|s| {
            let r = s.result.as_ref();
            StartSummary {
                start: s.start,
                f: r.map(|r| r.f),
                grad_norm: r.and_then(|r| r.grad_norm),
                stop_reason: r.map(|r| r.stop_reason),
                iterations: r.map(|r| r.iterations),
                fevals: r.map(|r| r.fevals),
                error: s.error.clone(),
            }
        })
        .collect();
    let best = &records[out.best_start];
    let result = FitResult {
        method,
        shape: samples.shape().dims().to_vec(),
        known: samples.len(),
        rank: a.rank,
        starts: a.starts,
        seed: a.seed,
        settings,
        preprocess: pre,
        best_start: out.best_start,
        f: best.f.expect("the best start has an objective"),
        records: records.clone(),
    };
    io::write_json(&a.out.join("result.json"), &result)?;
    io::write_jsonl(&a.out.join("starts.jsonl"), &records)?;
    let timings = Timings {
        total_seconds: timer.elapsed().as_secs_f64(),
        start_seconds: out.starts.iter().map(|s| s.result.as_ref().map(|r| r.seconds)).collect(),
    };
    io::write_json(&a.out.join("timings.json"), &timings)?;
    println!(
        "{method}: best start {} of {}, f = {:e}, {}",
        out.best_start + 1,
        a.starts,
        result.f,
        best.stop_reason.map_or("failed", |s| s.as_str())
    );
    Ok(())
}

/// Model values at flat 0-based `indices`, on the scale of the input data.
pub fn predict(model: &KruskalModel, pre: &Preprocess, indices: &[usize]) -> Result<Vec<f64>> {
    let mut values = model.values_at(indices)?;
    pre.invert(indices, model.ndims(), &mut values);
    Ok(values)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fms: Option<f64>,
    /// 1-based computed component matched to each true component.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assignment: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub congruences: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tcs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

pub fn evaluate(a: &EvalArgs) -> Result<EvalReport> {
    if a.truth.is_none() && a.holdout.is_none() && a.data.is_none() {
        return Err(Error::InvalidParameter("give at least one of --truth, --holdout, --data".into()));
    }
    let (model, pre) = io::read_model(&a.model)?;
    let mut report = EvalReport::default();
    if let Some(path) = &a.truth {
        let (truth, _) = io::read_model(path)?;
        let s = fms(&truth, &model)?;
        report.fms = Some(s.fms);
        report.assignment = Some(s.assignment.iter().map(|k| k + 1).collect());
        report.congruences = Some(s.congruences);
    }
    if let Some(path) = &a.holdout {
        let h = io::read_tensor(path)?.samples;
        if h.shape() != &model.shape() {
            return Err(Error::ShapeMismatch(format!("holdout {} vs model {}", h.shape(), model.shape())));
        }
        let pred = predict(&model, &pre, h.indices())?;
        let num: f64 = h.values().iter().zip(&pred).map(|(y, p)| (y - p).powi(2)).sum();
        let den: f64 = h.values().iter().map(|y| y * y).sum();
        if den == 0.0 {
            return Err(Error::InvalidParameter("held-out entries are all zero".into()));
        }
        report.tcs = Some((num / den).sqrt());
    }
    if let Some(path) = &a.data {
        let d = io::read_tensor(path)?.samples;
        if d.shape() != &model.shape() {
            return Err(Error::ShapeMismatch(format!("data {} vs model {}", d.shape(), model.shape())));
        }
        let m = 1.0 - d.len() as f64 / d.shape().numel() as f64;
        report.rho = Some(rho(d.shape(), model.rank(), m)?);
    }
    Ok(report)
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.6}"))
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let report = evaluate(a)?;
    if a.table {
        println!("{:>10} {:>10} {:>10}", "fms", "tcs", "rho");
        println!(
            "{:>10} {:>10} {:>10}",
            opt_cell(report.fms),
            opt_cell(report.tcs),
            opt_cell(report.rho)
        );
    } else {
        println!("{}", serde_json::to_string(&report).map_err(|e| Error::Io(e.to_string()))?);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub sizes: Vec<Vec<usize>>,
    pub rank: usize,
    pub missing: Vec<f64>,
    pub pattern: cpwopt::datagen::Pattern,
    pub noise: f64,
    pub instances: usize,
    pub starts: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub settings: MethodSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub spec: BenchSpec,
    pub cells: Vec<CellSummary>,
}

fn error_record(spec: &InstanceSpec, instance: usize, method: Method, e: &Error) -> RunRecord {
    RunRecord {
        shape: spec.shape.dims().to_vec(),
        missing: spec.missing,
        pattern: spec.pattern,
        instance,
        seed: spec.seed,
        method,
        start: 0,
        f: None,
        stop_reason: None,
        iterations: None,
        fevals: None,
        seconds: None,
        fms: None,
        cumulative_best_fms: None,
        error: Some(e.to_string()),
    }
}

/// Runs every `(size, missing, instance, method)` combination in a fixed
/// order. Failures are recorded, not raised.
pub fn bench_records(spec: &BenchSpec, mut progress: impl FnMut(&str)) -> Vec<RunRecord> {
    let mut records = Vec::new();
    for dims in &spec.sizes {
        for &m in &spec.missing {
            for i in 0..spec.instances {
                let inst_spec = InstanceSpec {
                    shape: cpwopt::Shape::new(dims.clone()).expect("validated sizes"),
                    rank: spec.rank,
                    noise: spec.noise,
                    missing: m,
                    pattern: spec.pattern,
                    storage: Storage::Dense,
                    seed: spec.seed + i as u64,
                };
                let inst = match gen_instance(&inst_spec) {
                    Ok(inst) => inst,
                    Err(e) => {
                        records.extend(spec.methods.iter().map(|&method| error_record(&inst_spec, i, method, &e)));
                        continue;
                    }
                };
                for &method in &spec.methods {
                    match run_method(&inst, i, method, spec.starts, &spec.settings) {
                        Ok(run) => records.extend(run.records),
                        Err(e) => records.push(error_record(&inst_spec, i, method, &e)),
                    }
                }
                progress(&format!("{} M={m} instance {}/{}", inst_spec.shape, i + 1, spec.instances));
            }
        }
    }
    records
}

fn fmt_summary_cell(s: &Option<Summary>) -> String {
    match s {
        Some(s) => format!("{:.4} [{:.4}, {:.4}]", s.median, s.q25, s.q75),
        None => "-".into(),
    }
}

/// Plain-text table: one row per cell, medians with quartiles of the
/// cumulative-best factor match score after each number of starts.
pub fn bench_table(cells: &[CellSummary]) -> String {
    let starts = cells.iter().map(|c| c.cumulative_fms.len()).max().unwrap_or(0);
    let mut out = String::new();
    write!(out, "{:<12} {:>6} {:<8} {:<14} {:>5}", "size", "M", "pattern", "method", "n").unwrap();
    for k in 1..=starts {
        write!(out, " {:>24}", format!("fms after {k}")).unwrap();
    }
    writeln!(out, " {:>10} {:>9}", "median s", "converged").unwrap();
    for c in cells {
        let size: Vec<String> = c.shape.iter().map(|d| d.to_string()).collect();
        write!(
            out,
            "{:<12} {:>6} {:<8} {:<14} {:>5}",
            size.join("x"),
            c.missing,
            io::pattern_name(c.pattern),
            c.method.as_str(),
            c.instances
        )
        .unwrap();
        for k in 0..starts {
            write!(out, " {:>24}", fmt_summary_cell(&c.cumulative_fms.get(k).cloned().flatten())).unwrap();
        }
        writeln!(
            out,
            " {:>10} {:>9}",
            c.seconds.as_ref().map_or("-".into(), |s| format!("{:.2}", s.median)),
            format!("{}/{}", c.converged, c.runs)
        )
        .unwrap();
    }
    out
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    if a.instances == 0 || a.starts == 0 || a.rank == 0 || a.methods.is_empty() || a.missing.is_empty() || a.sizes.is_empty() {
        return Err(Error::InvalidParameter(
            "instances, starts, rank, methods, missing and sizes must be non-empty".into(),
        ));
    }
    let spec = BenchSpec {
        sizes: a.sizes.iter().map(|s| s.dims().to_vec()).collect(),
        rank: a.rank,
        missing: a.missing.clone(),
        pattern: a.pattern.into(),
        noise: a.noise,
        instances: a.instances,
        starts: a.starts,
        methods: a.methods.iter().map(|&m| m.into()).collect(),
        seed: a.seed,
        settings: settings(&a.opt)?,
    };
    create_dir(&a.out)?;
    let records = bench_records(&spec, |msg| eprintln!("{msg}"));
    io::write_jsonl(&a.out.join("records.jsonl"), &records)?;
    let cells = aggregate(&records);
    let table = bench_table(&cells);
    io::write_json(&a.out.join("report.json"), &BenchReport { spec, cells })?;
    fs::write(a.out.join("report.txt"), &table).map_err(|e| Error::Io(e.to_string()))?;
    print!("{table}");
    Ok(())
}

pub fn complete(a: &CompleteArgs) -> Result<()> {
    let data = io::read_tensor(&a.input)?.samples;
    let (model, pre) = io::read_model(&a.model)?;
    let shape = data.shape();
    if shape != &model.shape() {
        return Err(Error::ShapeMismatch(format!("data {shape} vs model {}", model.shape())));
    }
    let n = shape.ndims();
    let indices = match &a.indices {
        Some(path) => io::read_indices(path, shape)?,
        None => {
            let total = shape
                .numel_checked()
                .ok_or_else(|| Error::Infeasible(format!("cannot enumerate the entries of {shape}")))?;
            let missing = total - data.len();
            let need = (missing as u64).saturating_mul(8 * (n as u64 + 1));
            if need > a.memory_budget {
                return Err(Error::Infeasible(format!(
                    "{missing} missing entries need about {need} bytes, over the memory budget of {} bytes; \
                     pass --indices",
                    a.memory_budget
                )));
            }
            let mut out = Vec::with_capacity(missing * n);
            let mut known = data.iter().peekable();
            let mut idx = vec![0; n];
            for lin in 0..total {
                shape.multi_index(lin, &mut idx);
                if known.peek().is_some_and(|(k, _)| *k == idx.as_slice()) {
                    known.next();
                } else {
                    out.extend_from_slice(&idx);
                }
            }
            out
        }
    };
    let values = predict(&model, &pre, &indices)?;
    let mut text = String::new();
    let mut emit = |w: &mut dyn Write| -> Result<()> {
        let mut w = BufWriter::new(w);
        for (idx, v) in indices.chunks_exact(n.max(1)).zip(&values) {
            text.clear();
            for i in idx {
                write!(text, "{} ", i + 1).expect("writing to a String");
            }
            write!(text, "{v:?}").expect("writing to a String");
            writeln!(w, "{text}")?;
        }
        w.flush()?;
        Ok(())
    };
    match &a.out {
        Some(path) => {
            let mut f = fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            emit(&mut f)
        }
        None => emit(&mut std::io::stdout().lock()),
    }
}
