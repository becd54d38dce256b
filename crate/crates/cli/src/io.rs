//! CSV matrices in, CSV solutions and JSON Lines traces out.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use dpngs::linalg::{LinalgError, SymmetricMatrix};
use dpngs::IterationRecord;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest asymmetry accepted in a covariance file before symmetrizing.
pub const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged { line: u64, expected: usize, found: usize },
    #[error("file contains no data rows")]
    Empty,
    #[error("covariance must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("covariance is not symmetric: |S[{i},{j}] - S[{j},{i}]| = {gap:e}")]
    NotSymmetric { i: usize, j: usize, gap: f64 },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("expected a {expected:?} dataset")]
    WrongKind { expected: DatasetKind },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("trace serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

impl IoError {
    /// True for failures of the file system rather than of the content.
    pub fn is_io(&self) -> bool {
        matches!(self, IoError::File { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Samples,
    Covariance,
}

/// A dense matrix read from disk: `rows` samples or covariance rows by `cols` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<Vec<f64>>,
}

impl Dataset {
    /// Checks shape and symmetry, then symmetrizes.
    pub fn covariance_matrix(&self) -> Result<SymmetricMatrix, IoError> {
        if self.kind != DatasetKind::Covariance {
            return Err(IoError::WrongKind { expected: DatasetKind::Covariance });
        }
        square_symmetric(&self.values)
    }
}

/// Parses a square, symmetric (within [`SYMMETRY_TOL`]) matrix.
pub fn square_symmetric(values: &[Vec<f64>]) -> Result<SymmetricMatrix, IoError> {
    let rows = values.len();
    let cols = values.first().map_or(0, Vec::len);
    if rows != cols {
        return Err(IoError::NotSquare { rows, cols });
    }
    for i in 0..rows {
        for j in (i + 1)..rows {
            let gap = (values[i][j] - values[j][i]).abs();
            if gap > SYMMETRY_TOL {
                return Err(IoError::NotSymmetric { i, j, gap });
            }
        }
    }
    Ok(SymmetricMatrix::from_rows(values)?)
}

fn file_error(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.display().to_string(), source }
}

pub fn load_matrix_csv(path: &Path, kind: DatasetKind) -> Result<Dataset, IoError> {
    let file = File::open(path).map_err(file_error(path))?;
    parse_matrix_csv(file, kind).map_err(|e| match e {
        IoError::File { source, .. } => IoError::File { path: path.display().to_string(), source },
        other => other,
    })
}

/// Reads comma-separated rows. A first row that does not parse as numbers is
/// taken as a header and skipped.
pub fn parse_matrix_csv<R: Read>(reader: R, kind: DatasetKind) -> Result<Dataset, IoError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut values: Vec<Vec<f64>> = Vec::new();
    let mut first = true;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            match e.into_kind() {
                csv::ErrorKind::Io(source) => IoError::File { path: String::new(), source },
                other => IoError::Parse { line, message: format!("{other:?}") },
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if first => {
                first = false;
                continue;
            }
            Err(e) => return Err(IoError::Parse { line, message: e.to_string() }),
        };
        first = false;
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(IoError::Parse { line, message: format!("non-finite value in column {}", c + 1) });
        }
        if let Some(prev) = values.first() {
            if prev.len() != row.len() {
                return Err(IoError::Ragged { line, expected: prev.len(), found: row.len() });
            }
        }
        values.push(row);
    }
    if values.is_empty() {
        return Err(IoError::Empty);
    }
    Ok(Dataset { kind, rows: values.len(), cols: values[0].len(), values })
}

/// Sample covariance around the mean, normalized by `1/m`, or `1/(m-1)` when `unbiased`.
pub fn empirical_covariance(samples: &Dataset, unbiased: bool) -> Result<SymmetricMatrix, IoError> {
    if samples.kind != DatasetKind::Samples {
        return Err(IoError::WrongKind { expected: DatasetKind::Samples });
    }
    let m = samples.rows;
    if m < 2 {
        return Err(IoError::TooFewSamples(m));
    }
    let p = samples.cols;
    let mut mean = vec![0.0; p];
    for row in &samples.values {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);

    let mut cov = vec![vec![0.0; p]; p];
    let mut centered = vec![0.0; p];
    for row in &samples.values {
        for k in 0..p {
            centered[k] = row[k] - mean[k];
        }
        for i in 0..p {
            for j in i..p {
                cov[i][j] += centered[i] * centered[j];
            }
        }
    }
    let denom = if unbiased { (m - 1) as f64 } else { m as f64 };
    for i in 0..p {
        for j in i..p {
            cov[i][j] /= denom;
            cov[j][i] = cov[i][j];
        }
    }
    Ok(SymmetricMatrix::from_rows(&cov)?)
}

/// Shortest representation that parses back to the same `f64`.
fn format_value(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

pub fn write_matrix_csv<W: Write>(mut out: W, m: &SymmetricMatrix) -> io::Result<()> {
    for i in 0..m.dim() {
        let row: Vec<String> = (0..m.dim()).map(|j| format_value(m.get(i, j))).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()
}

pub fn save_matrix_csv(path: &Path, m: &SymmetricMatrix) -> Result<(), IoError> {
    let file = File::create(path).map_err(file_error(path))?;
    write_matrix_csv(BufWriter::new(file), m).map_err(file_error(path))
}

/// One line of the trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub inner_iters: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    pub elapsed_ms: f64,
}

impl From<&IterationRecord> for TraceRecord {
    fn from(r: &IterationRecord) -> Self {
        Self {
            iter: r.iter,
            lambda: r.lambda,
            alpha: r.alpha,
            inner_iters: r.inner_iters,
            objective: r.objective,
            elapsed_ms: r.elapsed.as_secs_f64() * 1e3,
        }
    }
}

pub fn write_trace_jsonl<W: Write>(mut out: W, trace: &[IterationRecord]) -> Result<(), IoError> {
    for r in trace {
        serde_json::to_writer(&mut out, &TraceRecord::from(r))?;
        writeln!(out).map_err(|source| IoError::File { path: String::new(), source })?;
    }
    out.flush().map_err(|source| IoError::File { path: String::new(), source })
}

pub fn save_trace_jsonl(path: &Path, trace: &[IterationRecord]) -> Result<(), IoError> {
    let file = File::create(path).map_err(file_error(path))?;
    write_trace_jsonl(BufWriter::new(file), trace).map_err(|e| match e {
        IoError::File { source, .. } => IoError::File { path: path.display().to_string(), source },
        other => other,
    })
}

pub fn read_trace_jsonl(text: &str) -> Result<Vec<TraceRecord>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}
