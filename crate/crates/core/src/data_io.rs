//! Datasets (synthetic, svmlight, CSV) and trace serialization.
//!
//! # Synthetic generator
//!
//! All draws come from one SplitMix64 stream seeded with `seed`
//! (`rand_xoshiro::SplitMix64::seed_from_u64`). From a raw 64-bit output `u`:
//!
//! * open uniform: `((u >> 11) + 0.5) · 2⁻⁵³`, in `(0, 1)`;
//! * closed uniform: `(u >> 11) · 2⁻⁵³`, in `[0, 1)`;
//! * standard normals: Box–Muller on two open uniforms `(u1, u2)`, giving
//!   `R cos(2π u2)` then `R sin(2π u2)` with `R = sqrt(−2 ln u1)`. A block of
//!   `m` normals consumes `ceil(m/2)` pairs; an odd leftover is dropped;
//! * Laplace(0, 1): from an open uniform `v`, `ln(2v)` if `v < ½`, else `−ln(2(1 − v))`.
//!
//! Draw order: the `n·p` entries of `X` column by column, then `β*` (`p` Laplace
//! draws), then a partial Fisher–Yates shuffle choosing the `⌊zero_frac·p⌋`
//! zeroed coordinates (`j = i + ⌊closed_uniform · (p − i)⌋` for `i = 0, 1, …`),
//! then the `n` noise normals. Finally `y = Xβ* + noise_sd · noise`.

use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ShapeBuilder};
use rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{DesignMatrix, Problem, Storage};
use crate::solver::{PathTrace, RunResult};

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TargetColumn {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    CsvDense { path: PathBuf, target: TargetColumn, header: bool },
    SvmLight(PathBuf),
    Synthetic { n: usize, p: usize, zero_frac: f64, noise_sd: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub source: DataSource,
    pub normalize_columns: bool,
}

impl DatasetSpec {
    /// Short human-readable label for trace metadata.
    pub fn label(&self) -> String {
        let base = match &self.source {
            DataSource::CsvDense { path, .. } => format!("csv:{}", path.display()),
            DataSource::SvmLight(path) => format!("svmlight:{}", path.display()),
            DataSource::Synthetic { n, p, zero_frac, noise_sd, seed } => {
                format!("synthetic:{n}x{p}:zero_frac={zero_frac}:noise={noise_sd}:seed={seed}")
            }
        };
        if self.normalize_columns {
            format!("{base}:normalized")
        } else {
            base
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self.source {
            DataSource::Synthetic { seed, .. } => Some(seed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub problem: Problem,
    /// Generating coefficients (synthetic data only).
    pub beta_star: Option<Array1<f64>>,
    /// Columns with zero norm, left untouched by normalization.
    pub zero_columns: Vec<usize>,
}

pub fn load(spec: &DatasetSpec) -> Result<Dataset> {
    let (x, y, beta_star) = match &spec.source {
        DataSource::Synthetic { n, p, zero_frac, noise_sd, seed } => {
            let (x, y, b) = synthetic_parts(*n, *p, *zero_frac, *noise_sd, *seed)?;
            (x, y, Some(b))
        }
        DataSource::SvmLight(path) => {
            let (x, y) = read_svmlight(path)?;
            (x, y, None)
        }
        DataSource::CsvDense { path, target, header } => {
            let (x, y) = read_csv(path, target, *header)?;
            (x, y, None)
        }
    };
    finish_dataset(x, y, beta_star, spec.normalize_columns)
}

fn finish_dataset(mut x: DesignMatrix, y: Array1<f64>, beta_star: Option<Array1<f64>>, normalize: bool) -> Result<Dataset> {
    let zero_columns = if normalize {
        x.normalize_columns()
    } else {
        (0..x.p()).filter(|&j| x.col_norm(j) == 0.0).collect()
    };
    Ok(Dataset { problem: Problem::new(x, y)?, beta_star, zero_columns })
}

fn open_uniform(rng: &mut SplitMix64) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * TWO_POW_M53
}

fn closed_uniform(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 * TWO_POW_M53
}

fn normal_block(rng: &mut SplitMix64, m: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m + 1);
    while out.len() < m {
        let u1 = open_uniform(rng);
        let u2 = open_uniform(rng);
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        out.push(radius * angle.cos());
        out.push(radius * angle.sin());
    }
    out.truncate(m);
    out
}

fn laplace(rng: &mut SplitMix64) -> f64 {
    let v = open_uniform(rng);
    if v < 0.5 {
        (2.0 * v).ln()
    } else {
        -(2.0 * (1.0 - v)).ln()
    }
}

fn synthetic_parts(
    n: usize,
    p: usize,
    zero_frac: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<(DesignMatrix, Array1<f64>, Array1<f64>)> {
    if n == 0 || p == 0 {
        return Err(Error::arg("synthetic data needs n, p >= 1"));
    }
    if !(0.0..=1.0).contains(&zero_frac) {
        return Err(Error::arg(format!("zero_frac must lie in [0, 1], got {zero_frac}")));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::arg(format!("noise level must be finite and nonnegative, got {noise_sd}")));
    }
    let mut rng = SplitMix64::seed_from_u64(seed);
    let entries = normal_block(&mut rng, n * p);
    let x = Array2::from_shape_vec((n, p).f(), entries).map_err(|e| Error::arg(e.to_string()))?;
    let mut beta: Vec<f64> = (0..p).map(|_| laplace(&mut rng)).collect();
    let k = (zero_frac * p as f64).floor() as usize;
    let mut perm: Vec<usize> = (0..p).collect();
    for i in 0..k {
        let j = i + (closed_uniform(&mut rng) * (p - i) as f64) as usize;
        perm.swap(i, j.min(p - 1));
    }
    for &j in &perm[..k] {
        beta[j] = 0.0;
    }
    let noise = normal_block(&mut rng, n);
    let x = DesignMatrix::dense(x)?;
    let fit = x.mul_vec(&beta);
    let y: Array1<f64> = fit.iter().zip(&noise).map(|(f, e)| f + noise_sd * e).collect();
    Ok((x, y, Array1::from(beta)))
}

/// `X` standard Gaussian, `β*` Laplace with `⌊zero_frac·p⌋` zeros, `y = Xβ* + noise_sd·ε`.
pub fn generate_synthetic(n: usize, p: usize, zero_frac: f64, noise_sd: f64, seed: u64) -> Result<Problem> {
    Ok(generate_synthetic_dataset(n, p, zero_frac, noise_sd, seed)?.problem)
}

pub fn generate_synthetic_dataset(n: usize, p: usize, zero_frac: f64, noise_sd: f64, seed: u64) -> Result<Dataset> {
    let (x, y, b) = synthetic_parts(n, p, zero_frac, noise_sd, seed)?;
    finish_dataset(x, y, Some(b), false)
}

/// Parses svmlight text: `label idx:val ...`, 1-based strictly increasing
/// indices, `#` starts a comment. `qid:` tokens are ignored.
pub fn parse_svmlight(text: &str) -> Result<(DesignMatrix, Array1<f64>)> {
    let mut labels = Vec::new();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut p = 0;
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| Error::Parse { line: line_no, msg: format!("bad label '{label_tok}'") })?;
        if !label.is_finite() {
            return Err(Error::Data(format!("non-finite label on line {line_no}")));
        }
        let row = labels.len();
        let mut last = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::Parse { line: line_no, msg: format!("expected idx:val, got '{tok}'") })?;
            if idx == "qid" {
                continue;
            }
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::Parse { line: line_no, msg: format!("bad feature index '{idx}'") })?;
            if idx == 0 {
                return Err(Error::Parse { line: line_no, msg: "feature indices are 1-based".into() });
            }
            if idx <= last {
                return Err(Error::Parse { line: line_no, msg: format!("index {idx} not increasing") });
            }
            last = idx;
            let val: f64 = val
                .parse()
                .map_err(|_| Error::Parse { line: line_no, msg: format!("bad value '{val}'") })?;
            if !val.is_finite() {
                return Err(Error::Data(format!("non-finite value on line {line_no}")));
            }
            p = p.max(idx);
            if val != 0.0 {
                triplets.push((row, idx - 1, val));
            }
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Data("no samples found".into()));
    }
    let n = labels.len();
    let p = p.max(1);
    triplets.sort_by_key(|&(i, j, _)| (j, i));
    let mut indptr = vec![0usize; p + 1];
    for &(_, j, _) in &triplets {
        indptr[j + 1] += 1;
    }
    for j in 0..p {
        indptr[j + 1] += indptr[j];
    }
    let indices = triplets.iter().map(|t| t.0).collect();
    let values = triplets.iter().map(|t| t.2).collect();
    let x = DesignMatrix::sparse_csc(n, p, indptr, indices, values)?;
    Ok((x, Array1::from(labels)))
}

pub fn read_svmlight(path: &Path) -> Result<(DesignMatrix, Array1<f64>)> {
    parse_svmlight(&fs::read_to_string(path)?)
}

pub fn load_svmlight(path: &Path, normalize: bool) -> Result<Dataset> {
    let (x, y) = read_svmlight(path)?;
    finish_dataset(x, y, None, normalize)
}

/// Writes `(X, y)` in svmlight format with shortest round-trip decimals.
pub fn write_svmlight(path: &Path, x: &DesignMatrix, y: &Array1<f64>) -> Result<()> {
    if y.len() != x.n() {
        return Err(Error::Dimension { what: "labels", expected: x.n(), got: y.len() });
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); x.n()];
    for j in 0..x.p() {
        for (i, v) in x.column_entries(j) {
            rows[i].push((j, v));
        }
    }
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for (label, row) in y.iter().zip(&rows) {
        write!(out, "{label}")?;
        for (j, v) in row {
            write!(out, " {}:{v}", j + 1)?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path, target: &TargetColumn, header: bool) -> Result<(DesignMatrix, Array1<f64>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(header).trim(csv::Trim::All).from_path(path)?;
    let target_idx = match target {
        TargetColumn::Index(i) => *i,
        TargetColumn::Name(name) => {
            if !header {
                return Err(Error::arg("a target column name needs --header"));
            }
            reader
                .headers()?
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::arg(format!("no column named '{name}'")))?
        }
    };
    let mut width = None;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if width.is_none() {
            if target_idx >= record.len() {
                return Err(Error::arg(format!("target column {target_idx} out of range ({} columns)", record.len())));
            }
            width = Some(record.len());
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse { line, msg: format!("bad number '{field}' in column {c}") })?;
            if !v.is_finite() {
                return Err(Error::Data(format!("non-finite value on line {line}")));
            }
            if c == target_idx {
                labels.push(v);
            } else {
                values.push(v);
            }
        }
    }
    let width = width.ok_or_else(|| Error::Data("no samples found".into()))?;
    let n = labels.len();
    let x = DesignMatrix::from_row_major(n, width - 1, &values)?;
    Ok((x, Array1::from(labels)))
}

pub fn load_csv(path: &Path, target: &TargetColumn, header: bool, normalize: bool) -> Result<Dataset> {
    let (x, y) = read_csv(path, target, header)?;
    finish_dataset(x, y, None, normalize)
}

/// JSON formatter printing every float with 17 significant digits.
struct FullPrecision<'a>(serde_json::ser::PrettyFormatter<'a>);

impl serde_json::ser::Formatter for FullPrecision<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn trace_to_string(trace: &PathTrace) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision(Default::default()));
    trace.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

pub fn write_trace(result: &RunResult, path: &Path) -> Result<()> {
    fs::write(path, trace_to_string(&result.trace)?)?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<PathTrace> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Dense row-major copy of the design (for small data and tests).
pub fn to_row_major(x: &DesignMatrix) -> Vec<f64> {
    let (n, p) = (x.n(), x.p());
    let mut out = vec![0.0; n * p];
    match x.storage() {
        Storage::Dense(a) => {
            for ((i, j), v) in a.indexed_iter() {
                out[i * p + j] = *v;
            }
        }
        Storage::Sparse(_) => {
            for j in 0..p {
                for (i, v) in x.column_entries(j) {
                    out[i * p + j] = v;
                }
            }
        }
    }
    out
}
