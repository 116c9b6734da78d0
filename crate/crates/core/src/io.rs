//! On-disk formats.
//!
//! Embedding tables are line-oriented text: a `PGFA-EMB1 d=<d> n=<n>` header
//! followed by `id,label,x1,...,xd` rows. Floats are written in shortest
//! round-trip form, so write-then-read is bit exact.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::prototype::PrototypeReport;
use crate::vmf::TheoremReport;

pub const TABLE_MAGIC: &str = "PGFA-EMB1";
pub const PROTOTYPE_REPORT_MAGIC: &str = "PGFA-PROTO1";

fn parse_error(path: &Path, line: usize, column: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        reason: reason.into(),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn check_field(kind: &str, value: &str) -> Result<()> {
    if value.is_empty() || value.contains([',', '\n', '\r']) {
        return Err(Error::InvalidConfig(format!(
            "{kind} `{value}` must be non-empty and free of commas and newlines"
        )));
    }
    Ok(())
}

pub fn format_embedding_table(table: &EmbeddingTable) -> Result<String> {
    let mut out = format!("{TABLE_MAGIC} d={} n={}\n", table.dim(), table.len());
    for i in 0..table.len() {
        check_field("id", &table.ids()[i])?;
        check_field("label", &table.labels()[i])?;
        out.push_str(&table.ids()[i]);
        out.push(',');
        out.push_str(&table.labels()[i]);
        for x in table.row(i) {
            write!(out, ",{x}").expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_embedding_table(path: &Path, table: &EmbeddingTable) -> Result<()> {
    write_text(path, &format_embedding_table(table)?)
}

fn parse_header(path: &Path, line: &str) -> Result<(usize, usize)> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(TABLE_MAGIC) {
        return Err(parse_error(
            path,
            1,
            1,
            format!("expected `{TABLE_MAGIC}` header"),
        ));
    }
    let mut field = |key: &str, column: usize| -> Result<usize> {
        parts
            .next()
            .and_then(|p| p.strip_prefix(key))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_error(path, 1, column, format!("expected `{key}<integer>`")))
    };
    let d = field("d=", 2)?;
    let n = field("n=", 3)?;
    Ok((d, n))
}

pub fn parse_embedding_table(path: &Path, text: &str) -> Result<EmbeddingTable> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(Error::EmptyDataset);
    };
    let (d, n) = parse_header(path, header)?;
    if d == 0 {
        return Err(parse_error(path, 1, 2, "dimension must be >= 1"));
    }
    let mut ids = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n * d);
    let mut seen = HashSet::with_capacity(n);
    for (idx, line) in lines {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 2 {
            return Err(parse_error(
                path,
                line_no,
                fields.len().min(d + 2),
                format!(
                    "expected {} values, found {}",
                    d,
                    fields.len().saturating_sub(2)
                ),
            ));
        }
        let id = fields[0].trim();
        if id.is_empty() || !seen.insert(id.to_string()) {
            return Err(parse_error(
                path,
                line_no,
                1,
                format!("empty or duplicate id `{id}`"),
            ));
        }
        let label = fields[1].trim();
        if label.is_empty() {
            return Err(parse_error(path, line_no, 2, "empty label"));
        }
        for (j, raw) in fields[2..].iter().enumerate() {
            let x: f64 = raw.trim().parse().map_err(|_| {
                parse_error(path, line_no, j + 3, format!("`{raw}` is not a number"))
            })?;
            if !x.is_finite() {
                return Err(parse_error(path, line_no, j + 3, "non-finite value"));
            }
            values.push(x);
        }
        ids.push(id.to_string());
        labels.push(label.to_string());
    }
    if ids.len() != n {
        return Err(parse_error(
            path,
            1,
            3,
            format!("header declares {n} rows, file has {}", ids.len()),
        ));
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let data = Array2::from_shape_vec((n, d), values).expect("row widths checked");
    EmbeddingTable::new(ids, labels, data)
}

pub fn read_embedding_table(path: &Path) -> Result<EmbeddingTable> {
    parse_embedding_table(path, &read_text(path)?)
}

/// Seen/unseen class lists of one fold, stored as TOML.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    #[serde(default)]
    pub fold: u32,
    pub seen: Vec<String>,
    pub unseen: Vec<String>,
}

impl SplitManifest {
    pub fn validate(&self) -> Result<()> {
        let seen: HashSet<&str> = self.seen.iter().map(String::as_str).collect();
        if let Some(both) = self.unseen.iter().find(|c| seen.contains(c.as_str())) {
            return Err(Error::InvalidConfig(format!(
                "class `{both}` is both seen and unseen"
            )));
        }
        if self.unseen.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "zero-shot evaluation needs at least two unseen classes, got {}",
                self.unseen.len()
            )));
        }
        Ok(())
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let manifest: Self = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| {
                    let before = &text[..s.start];
                    let line = before.matches('\n').count() + 1;
                    let column = s.start - before.rfind('\n').map_or(0, |p| p + 1) + 1;
                    (line, column)
                })
                .unwrap_or((1, 1));
            parse_error(path, line, column, e.message().to_string())
        })?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(path, &read_text(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// Partitions rows into seen and unseen classes.
pub fn apply_split(
    table: &EmbeddingTable,
    manifest: &SplitManifest,
) -> Result<(EmbeddingTable, EmbeddingTable)> {
    manifest.validate()?;
    let seen: HashSet<&str> = manifest.seen.iter().map(String::as_str).collect();
    let unseen: HashSet<&str> = manifest.unseen.iter().map(String::as_str).collect();
    if let Some(label) = table
        .labels()
        .iter()
        .find(|l| !seen.contains(l.as_str()) && !unseen.contains(l.as_str()))
    {
        return Err(Error::UnassignedLabel(label.clone()));
    }
    Ok((
        table.filter_by_label(|l| seen.contains(l)),
        table.filter_by_label(|l| unseen.contains(l)),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub row_id: String,
    pub pseudo_label: String,
    pub final_label: String,
    pub entropy: f64,
}

pub const LABELS_HEADER: &str = "row_id,pseudo_label,final_label,entropy";

pub fn format_labels_csv(rows: &[LabelRow]) -> String {
    let mut out = format!("{LABELS_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.row_id, r.pseudo_label, r.final_label, r.entropy
        )
        .expect("string write");
    }
    out
}

pub fn parse_labels_csv(path: &Path, text: &str) -> Result<Vec<LabelRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == LABELS_HEADER => {}
        _ => {
            return Err(parse_error(
                path,
                1,
                1,
                format!("expected header `{LABELS_HEADER}`"),
            ))
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(idx, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(parse_error(
                    path,
                    idx + 1,
                    f.len().min(4),
                    "expected 4 fields",
                ));
            }
            let entropy = f[3].trim().parse().map_err(|_| {
                parse_error(path, idx + 1, 4, format!("`{}` is not a number", f[3]))
            })?;
            Ok(LabelRow {
                row_id: f[0].to_string(),
                pseudo_label: f[1].to_string(),
                final_label: f[2].to_string(),
                entropy,
            })
        })
        .collect()
}

pub fn format_prototype_report(report: &PrototypeReport) -> String {
    let mut out = format!(
        "{PROTOTYPE_REPORT_MAGIC}\nstrategy={}\nalpha={}\nrows={}\nclass,support,filtered,fallback\n",
        report.config.strategy,
        report.config.alpha,
        report.pseudo_labels.len(),
    );
    for (k, class) in report.classes.iter().enumerate() {
        let filtered = report
            .filtered_sizes
            .as_ref()
            .map_or_else(|| "-".to_string(), |f| f[k].to_string());
        writeln!(
            out,
            "{class},{},{filtered},{}",
            report.support_sizes[k], report.fallback[k]
        )
        .expect("string write");
    }
    out
}

/// Per-class `(support, filtered, fallback)` read back from a report.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeReportRow {
    pub class: String,
    pub support: usize,
    pub filtered: Option<usize>,
    pub fallback: bool,
}

pub fn parse_prototype_report(path: &Path, text: &str) -> Result<Vec<PrototypeReportRow>> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some(PROTOTYPE_REPORT_MAGIC) {
        return Err(parse_error(path, 1, 1, "missing prototype report magic"));
    }
    let mut lines = lines.skip_while(|(_, l)| !l.starts_with("class,"));
    lines.next();
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(idx, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = |col: usize| parse_error(path, idx + 1, col, "malformed report row");
            if f.len() != 4 {
                return Err(bad(1));
            }
            Ok(PrototypeReportRow {
                class: f[0].to_string(),
                support: f[1].parse().map_err(|_| bad(2))?,
                filtered: if f[2] == "-" {
                    None
                } else {
                    Some(f[2].parse().map_err(|_| bad(3))?)
                },
                fallback: f[3].parse().map_err(|_| bad(4))?,
            })
        })
        .collect()
}

pub fn format_loss_trace(trace: &[f64]) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for (i, l) in trace.iter().enumerate() {
        writeln!(out, "{},{l}", i + 1).expect("string write");
    }
    out
}

pub fn format_theorem_csv(report: &TheoremReport) -> String {
    let mut out = String::from("n,trial,agreement,mean_resultant_length,a_d_reference\n");
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.n, r.trial, r.agreement, r.mean_resultant_length, r.a_d_reference
        )
        .expect("string write");
    }
    out
}

/// `dir/name`, creating `dir` when needed.
pub fn output_path(dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir.join(name))
}
