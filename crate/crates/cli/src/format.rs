//! On-disk formats. All files are UTF-8, `\n`-terminated, comma-delimited.
//!
//! Scores (`*.scores.csv`):
//!
//! ```text
//! #cpuq-scores v1 k=<K>
//! <p_0>,<p_1>,...,<p_{K-1}>        one row per sample
//! ```
//!
//! Labels (`*.labels.csv`):
//!
//! ```text
//! #cpuq-labels v1 k=<K>
//! <label>                          zero-based, one per line
//! ```
//!
//! Dropout stacks:
//!
//! ```text
//! #cpuq-mcd v1 k=<K> t=<T>
//! <p_0>,...,<p_{K-1}>              T consecutive lines per sample
//! ```
//!
//! Result tables (predictions, evaluation, sweeps, comparisons, histograms):
//!
//! ```text
//! #cpuq-<kind> v1 [k=<K>]
//! # manifest-sha256=<hex>
//! <column>,<column>,...
//! <value>,<value>,...
//! ```
//!
//! Reals are written in the shortest form that parses back to the same
//! `f64`; `inf` and `NaN` are spelled that way.

use std::fs;
use std::io::Write;
use std::path::Path;

use cpuq_core::conformal::fmt_f64;
use cpuq_core::{LabeledScores, PredictionSet, SampleStack, ScoreMatrix};

use crate::error::CliError;

pub const FORMAT_VERSION: &str = "v1";

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let display = path.display().to_string();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::env::current_dir().map_err(|e| CliError::io(&display, e))?,
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| CliError::io(&display, e))?;
    tmp.write_all(bytes)
        .map_err(|e| CliError::io(&display, e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| CliError::io(&display, e))?;
    tmp.persist(path)
        .map_err(|e| CliError::io(&display, e.error))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))
}

fn data_err(path: &str, line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{path}:{line}: {msg}"))
}

/// Parsed `#cpuq-<kind> v1 key=value ...` header line.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub kind: String,
    pub fields: Vec<(String, String)>,
}

impl Header {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn usize_field(&self, key: &str, path: &str) -> Result<usize, CliError> {
        self.get(key)
            .ok_or_else(|| data_err(path, 1, format!("header lacks {key}=")))?
            .parse()
            .map_err(|_| data_err(path, 1, format!("bad {key}= in header")))
    }
}

pub fn header_line(kind: &str, fields: &[(&str, String)]) -> String {
    let mut s = format!("#cpuq-{kind} {FORMAT_VERSION}");
    for (k, v) in fields {
        s.push_str(&format!(" {k}={v}"));
    }
    s.push('\n');
    s
}

fn parse_header(text: &str, expect_kind: &str, path: &str) -> Result<Header, CliError> {
    let first = text
        .lines()
        .next()
        .ok_or_else(|| data_err(path, 1, "empty file"))?;
    let mut parts = first.split_whitespace();
    let tag = parts.next().unwrap_or("");
    let kind = tag
        .strip_prefix("#cpuq-")
        .ok_or_else(|| data_err(path, 1, "missing #cpuq- header"))?;
    if kind != expect_kind {
        return Err(data_err(
            path,
            1,
            format!("expected a {expect_kind} file, found {kind}"),
        ));
    }
    match parts.next() {
        Some(FORMAT_VERSION) => {}
        other => {
            return Err(data_err(
                path,
                1,
                format!("unsupported format version {}", other.unwrap_or("<none>")),
            ))
        }
    }
    let fields = parts
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| data_err(path, 1, format!("bad header field `{p}`")))
        })
        .collect::<Result<_, _>>()?;
    Ok(Header {
        kind: kind.to_string(),
        fields,
    })
}

/// Body lines after the header, skipping `#` comments and blank lines; yields
/// 1-based line numbers.
fn body_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_f64(s: &str, path: &str, line: usize) -> Result<f64, CliError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| data_err(path, line, format!("`{s}` is not a number")))
}

fn join_f64(row: &[f64]) -> String {
    row.iter()
        .map(|&v| fmt_f64(v))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn emit_scores(m: &ScoreMatrix) -> String {
    let mut out = header_line("scores", &[("k", m.k_classes().to_string())]);
    for row in m.rows() {
        out.push_str(&join_f64(row));
        out.push('\n');
    }
    out
}

pub fn parse_scores(text: &str, path: &str) -> Result<ScoreMatrix, CliError> {
    let header = parse_header(text, "scores", path)?;
    let k = header.usize_field("k", path)?;
    let mut flat = Vec::new();
    for (line, l) in body_lines(text) {
        let row: Vec<f64> = l
            .split(',')
            .map(|s| parse_f64(s, path, line))
            .collect::<Result<_, _>>()?;
        if row.len() != k {
            return Err(data_err(
                path,
                line,
                format!("{} columns, header declares k={k}", row.len()),
            ));
        }
        flat.extend(row);
    }
    ScoreMatrix::from_flat(k, flat).map_err(|e| CliError::Data(format!("{path}: {e}")))
}

pub fn emit_labels(labels: &[usize], k: usize) -> String {
    let mut out = header_line("labels", &[("k", k.to_string())]);
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    out
}

/// Returns the declared class count and the labels.
pub fn parse_labels(text: &str, path: &str) -> Result<(usize, Vec<usize>), CliError> {
    let header = parse_header(text, "labels", path)?;
    let k = header.usize_field("k", path)?;
    let labels = body_lines(text)
        .map(|(line, l)| {
            let v: usize = l
                .parse()
                .map_err(|_| data_err(path, line, format!("`{l}` is not a label index")))?;
            if v >= k {
                return Err(data_err(path, line, format!("label {v} >= k={k}")));
            }
            Ok(v)
        })
        .collect::<Result<_, _>>()?;
    Ok((k, labels))
}

pub fn join_labeled(
    scores: ScoreMatrix,
    k_labels: usize,
    labels: Vec<usize>,
) -> Result<LabeledScores, CliError> {
    if k_labels != scores.k_classes() {
        return Err(CliError::Data(format!(
            "labels declare k={k_labels}, scores have k={}",
            scores.k_classes()
        )));
    }
    Ok(LabeledScores::new(scores, labels)?)
}

pub fn emit_mcd(stacks: &[SampleStack]) -> String {
    let k = stacks.first().map(|s| s.k_classes()).unwrap_or(0);
    let t = stacks.first().map(|s| s.n_passes()).unwrap_or(0);
    let mut out = header_line("mcd", &[("k", k.to_string()), ("t", t.to_string())]);
    for s in stacks {
        for p in s.passes() {
            out.push_str(&join_f64(p));
            out.push('\n');
        }
    }
    out
}

pub fn parse_mcd(text: &str, path: &str) -> Result<Vec<SampleStack>, CliError> {
    let header = parse_header(text, "mcd", path)?;
    let k = header.usize_field("k", path)?;
    let t = header.usize_field("t", path)?;
    if t == 0 {
        return Err(data_err(path, 1, "t must be >= 1"));
    }
    let mut rows = Vec::new();
    for (line, l) in body_lines(text) {
        let row: Vec<f64> = l
            .split(',')
            .map(|s| parse_f64(s, path, line))
            .collect::<Result<_, _>>()?;
        if row.len() != k {
            return Err(data_err(
                path,
                line,
                format!("{} columns, header declares k={k}", row.len()),
            ));
        }
        rows.push(row);
    }
    if rows.len() % t != 0 {
        return Err(CliError::Data(format!(
            "{path}: {} rows is not a multiple of t={t}",
            rows.len()
        )));
    }
    rows.chunks(t)
        .map(|c| SampleStack::from_rows(c).map_err(|e| CliError::Data(format!("{path}: {e}"))))
        .collect()
}

/// One row of a predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub predicted: usize,
    pub set: PredictionSet,
}

pub const PREDICTION_COLUMNS: &str = "index,predicted,k_star,uncertainty,members";

pub fn emit_predictions(records: &[PredictionRecord], k: usize, manifest_hash: &str) -> String {
    let mut out = header_line("predictions", &[("k", k.to_string())]);
    out.push_str(&format!("# manifest-sha256={manifest_hash}\n"));
    out.push_str(PREDICTION_COLUMNS);
    out.push('\n');
    for (i, r) in records.iter().enumerate() {
        let members = r
            .set
            .members()
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&format!(
            "{i},{},{},{},{members}\n",
            r.predicted,
            r.set.k_star(),
            fmt_f64(r.set.uncertainty())
        ));
    }
    out
}

pub fn parse_predictions(
    text: &str,
    path: &str,
) -> Result<(usize, Vec<PredictionRecord>), CliError> {
    let header = parse_header(text, "predictions", path)?;
    let k = header.usize_field("k", path)?;
    let mut lines = body_lines(text);
    match lines.next() {
        Some((_, cols)) if cols == PREDICTION_COLUMNS => {}
        Some((line, _)) => return Err(data_err(path, line, "unexpected column header")),
        None => return Err(data_err(path, 2, "missing column header")),
    }
    let mut records = Vec::new();
    for (line, l) in lines {
        let fields: Vec<&str> = l.splitn(5, ',').collect();
        if fields.len() < 4 {
            return Err(data_err(path, line, "expected 5 fields"));
        }
        let idx: usize = fields[0]
            .parse()
            .map_err(|_| data_err(path, line, "bad index"))?;
        if idx != records.len() {
            return Err(data_err(path, line, format!("index {idx} out of sequence")));
        }
        let predicted: usize = fields[1]
            .parse()
            .map_err(|_| data_err(path, line, "bad predicted label"))?;
        let k_star: usize = fields[2]
            .parse()
            .map_err(|_| data_err(path, line, "bad k_star"))?;
        let members: Vec<usize> = fields
            .get(4)
            .copied()
            .unwrap_or("")
            .split_whitespace()
            .map(|m| {
                m.parse()
                    .map_err(|_| data_err(path, line, format!("bad member `{m}`")))
            })
            .collect::<Result<_, _>>()?;
        if members.len() != k_star || predicted >= k {
            return Err(data_err(
                path,
                line,
                "k_star/members/predicted inconsistent",
            ));
        }
        let set = PredictionSet::new(members, k)
            .ok_or_else(|| data_err(path, line, "invalid set members"))?;
        let u = parse_f64(fields[3], path, line)?;
        if u.to_bits() != set.uncertainty().to_bits() {
            return Err(data_err(
                path,
                line,
                "uncertainty does not equal k_star / k",
            ));
        }
        records.push(PredictionRecord { predicted, set });
    }
    Ok((k, records))
}

/// Generic result table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub kind: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(kind: &str, columns: &[&str]) -> Self {
        Self {
            kind: kind.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn emit(&self, manifest_hash: &str) -> String {
        let mut out = header_line(&self.kind, &[]);
        out.push_str(&format!("# manifest-sha256={manifest_hash}\n"));
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, kind: &str, path: &str) -> Result<Self, CliError> {
        parse_header(text, kind, path)?;
        let mut lines = body_lines(text);
        let (_, cols) = lines
            .next()
            .ok_or_else(|| data_err(path, 2, "missing column header"))?;
        let columns: Vec<String> = cols.split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (line, l) in lines {
            let row: Vec<String> = l.split(',').map(str::to_string).collect();
            if row.len() != columns.len() {
                return Err(data_err(path, line, "column count mismatch"));
            }
            rows.push(row);
        }
        Ok(Self {
            kind: kind.to_string(),
            columns,
            rows,
        })
    }

    /// Value in column `col` of the row whose first cell is `key`.
    pub fn lookup(&self, key: &str, col: &str) -> Option<&str> {
        let c = self.columns.iter().position(|x| x == col)?;
        self.rows
            .iter()
            .find(|r| r[0] == key)
            .map(|r| r[c].as_str())
    }
}

/// Embedded manifest hash of a result file, if present.
pub fn manifest_hash_of(text: &str) -> Option<&str> {
    text.lines()
        .find_map(|l| l.strip_prefix("# manifest-sha256="))
}
