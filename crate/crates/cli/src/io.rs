//! File formats.
//!
//! Tensor files are text. `#` starts a comment and blank lines are ignored.
//! The header is `ndims N` followed by `dims I_1 ... I_N`. In coordinate
//! form each further line is `i_1 ... i_N value` with 1-based indices and
//! missing entries simply absent. A `dense` line after the header switches
//! to dense form: exactly `∏ I_n` values follow, whitespace separated, with
//! the first index varying fastest, and `nan` marks a missing entry.
//!
//! Model files are JSON, see [`ModelFile`].

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use cpwopt::datagen::{InstanceSpec, Pattern, Storage};
use cpwopt::tensor::cmp_coords;
use cpwopt::{Error, FactorMatrix, KruskalModel, Result, Shape, SparseSamples};
use serde::{Deserialize, Serialize};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse().map_err(|_| parse_err(line, format!("bad {what} {tok:?}")))
}

/// Lines with comments stripped, numbered from 1, blank lines dropped.
fn content_lines(reader: impl BufRead) -> impl Iterator<Item = Result<(usize, String)>> {
    reader.lines().enumerate().filter_map(|(k, line)| match line {
        Err(e) => Some(Err(Error::from(e))),
        Ok(l) => {
            let body = l.split('#').next().unwrap_or("").trim();
            (!body.is_empty()).then(|| Ok((k + 1, body.to_string())))
        }
    })
}

/// Parses a 1-based index tuple into a 0-based one.
fn parse_index(toks: &[&str], shape: &Shape, line: usize) -> Result<Vec<usize>> {
    toks.iter()
        .zip(shape.dims())
        .enumerate()
        .map(|(n, (t, &d))| {
            let i: usize = parse_num(t, line, "index")?;
            if i == 0 || i > d {
                return Err(parse_err(line, format!("index {i} outside 1..={d} in mode {}", n + 1)));
            }
            Ok(i - 1)
        })
        .collect()
}

fn parse_header(lines: &mut impl Iterator<Item = Result<(usize, String)>>) -> Result<Shape> {
    let (l1, first) = lines.next().ok_or_else(|| parse_err(1, "empty file"))??;
    let toks: Vec<&str> = first.split_whitespace().collect();
    if toks.len() != 2 || toks[0] != "ndims" {
        return Err(parse_err(l1, "expected `ndims N`"));
    }
    let ndims: usize = parse_num(toks[1], l1, "ndims")?;
    let (l2, second) = lines.next().ok_or_else(|| parse_err(l1 + 1, "missing `dims` line"))??;
    let toks: Vec<&str> = second.split_whitespace().collect();
    if toks.first() != Some(&"dims") || toks.len() != ndims + 1 {
        return Err(parse_err(l2, format!("expected `dims` with {ndims} sizes")));
    }
    let dims = toks[1..]
        .iter()
        .map(|t| parse_num(t, l2, "dimension"))
        .collect::<Result<Vec<usize>>>()?;
    Shape::new(dims).map_err(|e| parse_err(l2, e.to_string()))
}

/// A tensor file in memory: the known entries plus the form it was stored in.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub samples: SparseSamples,
    pub dense: bool,
}

pub fn read_tensor(path: &Path) -> Result<TensorFile> {
    let file = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_tensor(BufReader::new(file))
}

pub fn parse_tensor(reader: impl BufRead) -> Result<TensorFile> {
    let mut lines = content_lines(reader).peekable();
    let shape = parse_header(&mut lines)?;
    let n = shape.ndims();
    let dense = matches!(lines.peek(), Some(Ok((_, l))) if l == "dense");
    if dense {
        let (ld, _) = lines.next().expect("peeked")?;
        let total = shape
            .numel_checked()
            .ok_or_else(|| parse_err(ld, "dense tensor too large"))?;
        let mut idx = vec![0; n];
        let (mut indices, mut values) = (Vec::new(), Vec::new());
        let mut lin = 0;
        let mut last = ld;
        for item in lines {
            let (l, body) = item?;
            last = l;
            for tok in body.split_whitespace() {
                if lin == total {
                    return Err(parse_err(l, format!("more than {total} values")));
                }
                let v: f64 = parse_num(tok, l, "value")?;
                if v.is_infinite() {
                    return Err(parse_err(l, "infinite value"));
                }
                if !v.is_nan() {
                    shape.multi_index(lin, &mut idx);
                    indices.extend_from_slice(&idx);
                    values.push(v);
                }
                lin += 1;
            }
        }
        if lin != total {
            return Err(parse_err(last, format!("{lin} values for {total} entries")));
        }
        let samples = SparseSamples::new(shape, indices, values).map_err(|e| parse_err(last, e.to_string()))?;
        return Ok(TensorFile { samples, dense: true });
    }
    let mut entries = Vec::new();
    for item in lines {
        let (l, body) = item?;
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.len() != n + 1 {
            return Err(parse_err(l, format!("expected {n} indices and a value")));
        }
        let idx = parse_index(&toks[..n], &shape, l)?;
        let v: f64 = parse_num(toks[n], l, "value")?;
        if !v.is_finite() {
            return Err(parse_err(l, "non-finite value"));
        }
        entries.push((idx, v, l));
    }
    entries.sort_by(|a, b| cmp_coords(&a.0, &b.0).then(a.2.cmp(&b.2)));
    if let Some(pair) = entries.windows(2).find(|p| p[0].0 == p[1].0) {
        return Err(parse_err(pair[1].2, format!("duplicate of the entry on line {}", pair[0].2)));
    }
    let samples = SparseSamples::from_entries(shape, entries.into_iter().map(|(i, v, _)| (i, v)).collect())?;
    Ok(TensorFile { samples, dense: false })
}

fn push_value(out: &mut String, v: f64) {
    if v.is_nan() {
        out.push_str("nan");
    } else {
        write!(out, "{v:?}").expect("writing to a String");
    }
}

/// Writes `samples` in coordinate form, or in dense form with `nan` for
/// missing entries. Values are printed so that they read back exactly.
pub fn write_tensor(path: &Path, samples: &SparseSamples, dense: bool) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    write_tensor_to(&mut w, samples, dense)?;
    w.flush()?;
    Ok(())
}

pub fn write_tensor_to(w: &mut impl Write, samples: &SparseSamples, dense: bool) -> Result<()> {
    let shape = samples.shape();
    let dims: Vec<String> = shape.dims().iter().map(|d| d.to_string()).collect();
    writeln!(w, "ndims {}", shape.ndims())?;
    writeln!(w, "dims {}", dims.join(" "))?;
    let mut line = String::new();
    if dense {
        writeln!(w, "dense")?;
        let total = shape
            .numel_checked()
            .ok_or_else(|| Error::Infeasible(format!("dense output of {shape}")))?;
        let mut known = samples.iter().peekable();
        let mut idx = vec![0; shape.ndims()];
        for lin in 0..total {
            shape.multi_index(lin, &mut idx);
            line.clear();
            match known.peek() {
                Some((i, v)) if *i == idx.as_slice() => {
                    push_value(&mut line, *v);
                    known.next();
                }
                _ => line.push_str("nan"),
            }
            writeln!(w, "{line}")?;
        }
        return Ok(());
    }
    for (idx, v) in samples.iter() {
        line.clear();
        for i in idx {
            write!(line, "{} ", i + 1).expect("writing to a String");
        }
        push_value(&mut line, v);
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Reads 1-based index tuples, one per line, into flat 0-based indices.
pub fn read_indices(path: &Path, shape: &Shape) -> Result<Vec<usize>> {
    let file = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_indices(BufReader::new(file), shape)
}

pub fn parse_indices(reader: impl BufRead, shape: &Shape) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for item in content_lines(reader) {
        let (l, body) = item?;
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.len() != shape.ndims() {
            return Err(parse_err(l, format!("expected {} indices", shape.ndims())));
        }
        out.extend(parse_index(&toks, shape, l)?);
    }
    Ok(out)
}

/// Transformations applied to the data before fitting; predictions are
/// mapped back through them in reverse.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    #[serde(default)]
    pub log1p: bool,
    /// 1-based mode whose slab means were removed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_mode: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub means: Vec<f64>,
}

impl Preprocess {
    pub fn is_identity(&self) -> bool {
        !self.log1p && self.center_mode.is_none()
    }

    /// Maps model values at `indices` back to the scale of the input data.
    pub fn invert(&self, indices: &[usize], ndims: usize, values: &mut [f64]) {
        if let Some(mode) = self.center_mode {
            cpwopt::preprocess::uncenter(indices, ndims, values, mode - 1, &self.means);
        }
        if self.log1p {
            for v in values.iter_mut() {
                *v = v.exp_m1();
            }
        }
    }
}

/// Model file contents. Factor matrices are stored row by row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub shape: Vec<usize>,
    pub rank: usize,
    pub lambda: Vec<f64>,
    pub factors: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Preprocess::is_identity")]
    pub preprocess: Preprocess,
}

impl ModelFile {
    pub fn from_model(m: &KruskalModel, preprocess: Preprocess) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            shape: m.shape().dims().to_vec(),
            rank: m.rank(),
            lambda: m.lambda().to_vec(),
            factors: m
                .factors()
                .iter()
                .map(|f| f.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
            preprocess,
        }
    }

    pub fn to_model(&self) -> Result<KruskalModel> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(parse_err(0, format!("unsupported model format_version {}", self.format_version)));
        }
        let bad = |msg: String| parse_err(0, msg);
        if self.factors.len() != self.shape.len() || self.lambda.len() != self.rank {
            return Err(bad("factor or lambda count does not match shape and rank".into()));
        }
        let mut factors: Vec<FactorMatrix> = Vec::with_capacity(self.shape.len());
        for (n, (rows, &d)) in self.factors.iter().zip(&self.shape).enumerate() {
            if rows.len() != d || rows.iter().any(|r| r.len() != self.rank) {
                return Err(bad(format!("factor {} is not {d}x{}", n + 1, self.rank)));
            }
            factors.push(FactorMatrix::from_fn(d, self.rank, |i, j| rows[i][j]));
        }
        let model = KruskalModel::new(factors, self.lambda.clone())?;
        if let Some(mode) = self.preprocess.center_mode {
            if mode == 0 || mode > self.shape.len() || self.preprocess.means.len() != self.shape[mode - 1] {
                return Err(bad("preprocess centering does not match the shape".into()));
            }
        }
        Ok(model)
    }
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| parse_err(e.line(), e.to_string()))
}

pub fn write_model(path: &Path, model: &KruskalModel, preprocess: Preprocess) -> Result<()> {
    write_json(path, &ModelFile::from_model(model, preprocess))
}

pub fn read_model(path: &Path) -> Result<(KruskalModel, Preprocess)> {
    let file: ModelFile = read_json(path)?;
    let model = file.to_model()?;
    Ok((model, file.preprocess))
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Io(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| serde_json::from_str(l).map_err(|e| parse_err(k + 1, e.to_string())))
        .collect()
}

/// Everything needed to regenerate one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub generator: String,
    pub instance: InstanceSpec,
    /// Known entries.
    pub tensor: String,
    pub truth: String,
    /// Noisy values of the hidden entries, when the instance has a dense grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<String>,
}

impl Manifest {
    pub fn new(instance: InstanceSpec) -> Self {
        let holdout = (instance.storage == Storage::Dense && instance.missing > 0.0).then(|| "holdout.txt".to_string());
        Manifest {
            format_version: MANIFEST_FORMAT_VERSION,
            generator: format!("cpwopt {}", env!("CARGO_PKG_VERSION")),
            instance,
            tensor: "tensor.txt".into(),
            truth: "truth.json".into(),
            holdout,
        }
    }
}

/// Parses `50x40x30`.
pub fn parse_dims(s: &str) -> std::result::Result<Shape, String> {
    let dims = s
        .split(['x', 'X', ','])
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("bad dimension {t:?} in {s:?}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Shape::new(dims).map_err(|e| e.to_string())
}

pub fn pattern_name(p: Pattern) -> &'static str {
    match p {
        Pattern::Entries => "entries",
        Pattern::Fibers => "fibers",
    }
}
