//! Plain-text dataset files and report writers.
//!
//! * response: one number per line;
//! * covariates: CSV with `n` rows and `m` columns, optional header row;
//! * matrices: a first line `p q`, then `n` CSV lines holding `vec(M_i)`
//!   (column-major, `p·q` values).
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! save followed by a load reproduces every value bit for bit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{Family, MatrixDataset};
use crate::numkit::{self, DenseMatrix};

/// Paths of the three dataset files; `covariates` is optional.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub response: PathBuf,
    pub matrices: PathBuf,
    pub covariates: Option<PathBuf>,
}

impl DatasetPaths {
    /// `response.txt`, `matrices.txt` and (when `with_covariates`) `covariates.csv` inside `dir`.
    pub fn in_dir(dir: &Path, with_covariates: bool) -> Self {
        Self {
            response: dir.join("response.txt"),
            matrices: dir.join("matrices.txt"),
            covariates: with_covariates.then(|| dir.join("covariates.csv")),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn parse_error(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, column, message: message.into() }
}

fn parse_number(path: &Path, line: usize, column: usize, field: &str) -> Result<f64> {
    let field = field.trim();
    let v: f64 = field
        .parse()
        .map_err(|_| parse_error(path, line, column, format!("`{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_error(path, line, column, format!("`{field}` is not finite")));
    }
    Ok(v)
}

/// Non-blank lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty())
}

fn read_response(path: &Path, family: Option<Family>) -> Result<Vec<f64>> {
    let text = read(path)?;
    let mut y = Vec::new();
    for (line, raw) in content_lines(&text) {
        let v = parse_number(path, line, 1, raw)?;
        if family == Some(Family::Logistic) && v != 0.0 && v != 1.0 {
            return Err(parse_error(path, line, 1, format!("logistic responses must be 0 or 1, found {v}")));
        }
        y.push(v);
    }
    Ok(y)
}

fn read_matrices(path: &Path) -> Result<Vec<DenseMatrix>> {
    let text = read(path)?;
    let mut lines = content_lines(&text);
    let (hline, header) = lines.next().ok_or_else(|| parse_error(path, 1, 1, "missing `p q` header"))?;
    let dims: Vec<&str> = header.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
    if dims.len() != 2 {
        return Err(parse_error(path, hline, 1, format!("expected the header `p q`, found `{header}`")));
    }
    let mut pq = [0usize; 2];
    for (k, d) in dims.iter().enumerate() {
        pq[k] = d
            .parse()
            .ok()
            .filter(|&v: &usize| v > 0)
            .ok_or_else(|| parse_error(path, hline, k + 1, format!("`{d}` is not a positive integer")))?;
    }
    let (p, q) = (pq[0], pq[1]);
    let mut mats = Vec::new();
    for (line, raw) in lines {
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != p * q {
            return Err(parse_error(path, line, fields.len().min(p * q) + 1, format!("expected {} values (p·q), found {}", p * q, fields.len())));
        }
        let mut values = Vec::with_capacity(p * q);
        for (c, f) in fields.iter().enumerate() {
            values.push(parse_number(path, line, c + 1, f)?);
        }
        mats.push(numkit::unvec(&values, p, q));
    }
    Ok(mats)
}

fn read_covariates(path: &Path) -> Result<DenseMatrix> {
    let text = read(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (k, (line, raw)) in content_lines(&text).enumerate() {
        let fields: Vec<&str> = raw.split(',').collect();
        if k == 0 && fields.iter().all(|f| f.trim().parse::<f64>().is_err()) {
            width = Some(fields.len());
            continue;
        }
        if let Some(w) = width {
            if fields.len() != w {
                return Err(parse_error(path, line, fields.len().min(w) + 1, format!("expected {w} columns, found {}", fields.len())));
            }
        }
        width = Some(fields.len());
        let mut row = Vec::with_capacity(fields.len());
        for (c, f) in fields.iter().enumerate() {
            row.push(parse_number(path, line, c + 1, f)?);
        }
        rows.push(row);
    }
    let m = width.unwrap_or(0);
    Ok(DenseMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]))
}

/// Reads and validates a dataset. With `family = Some(Logistic)` the
/// response must be 0/1.
pub fn load_dataset(paths: &DatasetPaths, family: Option<Family>) -> Result<MatrixDataset> {
    let y = read_response(&paths.response, family)?;
    let mats = read_matrices(&paths.matrices)?;
    if mats.len() != y.len() {
        return Err(Error::Dimension(format!(
            "{} has {} responses but {} has {} matrices",
            paths.response.display(),
            y.len(),
            paths.matrices.display(),
            mats.len()
        )));
    }
    let z = match &paths.covariates {
        Some(path) => {
            let z = read_covariates(path)?;
            if z.nrows() != y.len() {
                return Err(Error::Dimension(format!(
                    "{} has {} rows but there are {} responses",
                    path.display(),
                    z.nrows(),
                    y.len()
                )));
            }
            Some(z)
        }
        None => None,
    };
    MatrixDataset::new(y, z, mats)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| Error::Io { path: parent.to_path_buf(), source })?;
    }
    let mut f = fs::File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    f.write_all(contents.as_bytes()).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn join_numbers<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    values.map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Writes the dataset files. Covariates are written only when the dataset
/// has them and `paths.covariates` is set.
pub fn save_dataset(data: &MatrixDataset, paths: &DatasetPaths) -> Result<()> {
    let mut response = String::new();
    for v in data.y().iter() {
        response.push_str(&format!("{v}\n"));
    }
    write_file(&paths.response, &response)?;

    let mut mats = format!("{} {}\n", data.p(), data.q());
    for m in data.mats() {
        mats.push_str(&join_numbers(m.iter()));
        mats.push('\n');
    }
    write_file(&paths.matrices, &mats)?;

    if let (Some(path), true) = (&paths.covariates, data.has_confounders()) {
        let header = (1..=data.m()).map(|j| format!("z{j}")).collect::<Vec<_>>().join(",");
        let mut text = format!("{header}\n");
        for i in 0..data.n() {
            text.push_str(&join_numbers(data.z_row(i).iter()));
            text.push('\n');
        }
        write_file(path, &text)?;
    }
    Ok(())
}

/// A rectangular table written as CSV, numbers in shortest round-trip form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header).expect("writing to memory");
        for row in &self.rows {
            w.write_record(row).expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("flushing to memory")).expect("CSV output is UTF-8")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_csv_string())
    }
}

/// Writes `value` as pretty JSON next to a CSV output.
pub fn write_metadata(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    text.push('\n');
    write_file(path, &text)
}

/// `out.csv` → `out.meta.json`.
pub fn metadata_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Formats an optional number, empty when absent.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
