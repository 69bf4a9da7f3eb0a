//! Plain-text formats for graphs, labels, features, splits, embeddings and
//! CSV reports.
//!
//! * edges: one whitespace-separated `u v` pair per line
//! * labels: one integer per line, line `i` is node `i`
//! * features / embeddings: header `N D`, then `N` rows of `D` numbers
//! * splits: lines of `<train|valid|test> id id ...`
//!
//! `#` starts a comment in every input format; blank lines are ignored.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{build_graph, LabeledGraph};
use crate::tensor::Matrix;

/// Significant digits used when printing embeddings and checkpoints.
pub const EMBEDDING_DIGITS: usize = 17;
/// Significant digits used in CSV reports.
pub const REPORT_DIGITS: usize = 12;

/// Paths making up one dataset on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetBundle {
    pub graph: PathBuf,
    pub labels: PathBuf,
    pub features: Option<PathBuf>,
    pub split: Option<PathBuf>,
}

/// Disjoint train / validation / test node lists.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Errors if a node id repeats across or within splits, or is out of range.
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut seen = vec![false; num_nodes];
        for &u in self.train.iter().chain(&self.valid).chain(&self.test) {
            if u >= num_nodes {
                return Err(Error::NodeCountMismatch {
                    what: format!("split entry {u}"),
                    expected: num_nodes,
                    found: u + 1,
                });
            }
            if seen[u] {
                return Err(Error::OverlappingSplits(u));
            }
            seen[u] = true;
        }
        Ok(())
    }

    /// Seeded random partition; whatever is not train or valid becomes test.
    pub fn random(num_nodes: usize, train_frac: f64, valid_frac: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_frac)
            || !(0.0..=1.0).contains(&valid_frac)
            || train_frac + valid_frac > 1.0
        {
            return Err(Error::InvalidParameter(format!(
                "split fractions {train_frac} + {valid_frac} must lie in [0, 1]"
            )));
        }
        let mut order: Vec<usize> = (0..num_nodes).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (train_frac * num_nodes as f64).round() as usize;
        let n_valid = ((valid_frac * num_nodes as f64).round() as usize).min(num_nodes - n_train);
        let mut train = order[..n_train].to_vec();
        let mut valid = order[n_train..n_train + n_valid].to_vec();
        let mut test = order[n_train + n_valid..].to_vec();
        train.sort_unstable();
        valid.sort_unstable();
        test.sort_unstable();
        Ok(Splits { train, valid, test })
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_string(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Non-empty lines with comments stripped, paired with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_token<T: std::str::FromStr>(path: &Path, line: usize, token: &str) -> Result<T> {
    token
        .parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse {token:?}")))
}

pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = read_to_string(path)?;
    let mut edges = Vec::new();
    for (line, content) in content_lines(&text) {
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(parse_err(path, line, "expected two node ids"));
        }
        edges.push((
            parse_token(path, line, tokens[0])?,
            parse_token(path, line, tokens[1])?,
        ));
    }
    Ok(edges)
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read_to_string(path)?;
    content_lines(&text)
        .map(|(line, content)| parse_token(path, line, content))
        .collect()
}

/// Reads an `N D` header followed by `N` dense rows.
pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let text = read_to_string(path)?;
    let mut lines = content_lines(&text);
    let (line, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "missing \"N D\" header"))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(parse_err(path, line, "header must be \"N D\""));
    }
    let rows: usize = parse_token(path, line, dims[0])?;
    let cols: usize = parse_token(path, line, dims[1])?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (line, content) in lines {
        if seen == rows {
            return Err(parse_err(path, line, format!("more than {rows} rows")));
        }
        let before = data.len();
        for token in content.split_whitespace() {
            data.push(parse_token::<f64>(path, line, token)?);
        }
        if data.len() - before != cols {
            return Err(parse_err(
                path,
                line,
                format!("expected {cols} values, found {}", data.len() - before),
            ));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(parse_err(
            path,
            text.lines().count(),
            format!("header declares {rows} rows, file has {seen}"),
        ));
    }
    Matrix::from_vec(rows, cols, data)
}

pub fn read_splits(path: &Path) -> Result<Splits> {
    let text = read_to_string(path)?;
    let mut splits = Splits::default();
    for (line, content) in content_lines(&text) {
        let mut tokens = content.split_whitespace();
        let name = tokens.next().unwrap_or_default();
        let target = match name {
            "train" => &mut splits.train,
            "valid" => &mut splits.valid,
            "test" => &mut splits.test,
            other => {
                return Err(parse_err(
                    path,
                    line,
                    format!("unknown split {other:?}, expected train/valid/test"),
                ))
            }
        };
        for token in tokens {
            target.push(parse_token(path, line, token)?);
        }
    }
    Ok(splits)
}

/// Loads a bundle and builds the graph. The node count comes from the label file.
pub fn load_bundle(
    bundle: &DatasetBundle,
    add_self_loops: bool,
) -> Result<(LabeledGraph, Option<Splits>)> {
    let edges = read_edge_list(&bundle.graph)?;
    let labels = read_labels(&bundle.labels)?;
    let n = labels.len();
    if let Some(max_id) = edges.iter().map(|&(u, v)| u.max(v)).max() {
        if max_id >= n {
            return Err(Error::NodeCountMismatch {
                what: format!("label file {}", bundle.labels.display()),
                expected: max_id + 1,
                found: n,
            });
        }
    }
    let features = match &bundle.features {
        Some(path) => {
            let x = read_matrix(path)?;
            if x.rows() != n {
                return Err(Error::NodeCountMismatch {
                    what: format!("feature file {}", path.display()),
                    expected: n,
                    found: x.rows(),
                });
            }
            Some(x)
        }
        None => None,
    };
    let graph = build_graph(&edges, &labels, None, features, add_self_loops)?;
    let splits = match &bundle.split {
        Some(path) => {
            let s = read_splits(path)?;
            s.validate(n)?;
            Some(s)
        }
        None => None,
    };
    Ok((graph, splits))
}

/// Writes the non-loop edges of `g`, one `u v` pair per line with `u < v`.
pub fn write_edge_list(g: &LabeledGraph, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (u, v) in g.edge_list() {
        if u != v {
            out.push_str(&format!("{u} {v}\n"));
        }
    }
    write_string(path, &out)
}

pub fn write_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut out = String::with_capacity(labels.len() * 3);
    for l in labels {
        out.push_str(&format!("{l}\n"));
    }
    write_string(path, &out)
}

pub fn write_splits(splits: &Splits, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (name, ids) in [
        ("train", &splits.train),
        ("valid", &splits.valid),
        ("test", &splits.test),
    ] {
        out.push_str(name);
        for id in ids {
            out.push_str(&format!(" {id}"));
        }
        out.push('\n');
    }
    write_string(path, &out)
}

/// Writes a matrix as an `N D` header plus rows at full round-trip precision.
pub fn write_matrix(m: &Matrix, path: &Path) -> Result<()> {
    write_string(path, &matrix_to_string(m))
}

pub(crate) fn matrix_to_string(m: &Matrix) -> String {
    let mut out = format!("{} {}\n", m.rows(), m.cols());
    for r in 0..m.rows() {
        let row: Vec<String> = m
            .row(r)
            .iter()
            .map(|&v| format_sig(v, EMBEDDING_DIGITS))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_embeddings(h: &Matrix, path: &Path) -> Result<()> {
    write_matrix(h, path)
}

pub fn read_embeddings(path: &Path) -> Result<Matrix> {
    read_matrix(path)
}

/// Formats `v` with `digits` significant digits in the style of C's `%g`.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "NaN".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exponent) = sci.split_once('e').expect("scientific format");
    let exponent: i32 = exponent.parse().expect("exponent");
    if exponent < -5 || exponent >= digits as i32 {
        let mantissa = trim_fraction(mantissa);
        return format!("{mantissa}e{exponent}");
    }
    let decimals = (digits as i32 - 1 - exponent).max(0) as usize;
    trim_fraction(&format!("{v:.decimals$}")).to_string()
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Named numeric columns of equal length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub columns: Vec<(String, Vec<f64>)>,
}

impl Report {
    pub fn new() -> Self {
        Report::default()
    }

    pub fn with_column(mut self, name: impl Into<String>, values: Vec<f64>) -> Self {
        self.columns.push((name.into(), values));
        self
    }

    pub fn num_rows(&self) -> usize {
        self.columns.first().map_or(0, |(_, v)| v.len())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    /// CSV text with a header row; columns keep their insertion order.
    pub fn to_csv(&self) -> Result<String> {
        let rows = self.num_rows();
        if let Some((name, v)) = self.columns.iter().find(|(_, v)| v.len() != rows) {
            return Err(Error::InvalidParameter(format!(
                "column {name} has {} rows, expected {rows}",
                v.len()
            )));
        }
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let header: Vec<&str> = self.columns.iter().map(|(n, _)| n.as_str()).collect();
        writer.write_record(&header).map_err(csv_err)?;
        for r in 0..rows {
            let record: Vec<String> = self
                .columns
                .iter()
                .map(|(_, v)| format_sig(v[r], REPORT_DIGITS))
                .collect();
            writer.write_record(&record).map_err(csv_err)?;
        }
        let bytes = writer.into_inner().map_err(|e| csv_err(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidParameter(format!("csv: {e}"))
}

pub fn write_csv_report(report: &Report, path: &Path) -> Result<()> {
    write_string(path, &report.to_csv()?)
}

pub fn read_csv_report(path: &Path) -> Result<Report> {
    let text = read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let mut columns: Vec<(String, Vec<f64>)> = headers
        .iter()
        .map(|h| (h.to_string(), Vec::new()))
        .collect();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, i + 2, e.to_string()))?;
        for ((_, col), field) in columns.iter_mut().zip(record.iter()) {
            col.push(parse_token(path, i + 2, field)?);
        }
    }
    Ok(Report { columns })
}

/// Parses `key = value` lines; `#` comments and blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (line, content) in content_lines(text) {
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
            path: PathBuf::from("<config>"),
            line,
            message: format!("expected key=value, got {content:?}"),
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}
