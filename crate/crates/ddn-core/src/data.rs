//! Datasets and their on-disk text formats.
//!
//! A dataset file is line-oriented UTF-8:
//!
//! ```text
//! #ddn v1 d=<d> n=<n>
//! <id>\t<f_1,...,f_d>\t<l_1,...,l_n>
//! ```
//!
//! Fields are TAB-separated; features are comma-separated floats (the field
//! is empty when `d = 0`); labels are comma-separated `0`/`1`. Blank lines
//! are skipped. Floats are written in scientific notation with 17
//! significant digits, so a save/load cycle reproduces every value bitwise.
//!
//! Prediction files carry per-example marginal probabilities:
//!
//! ```text
//! #ddn-pred v1 n=<n>
//! <id>\t<p_1,...,p_n>
//! ```

use crate::error::{Error, Result};
use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// One labeled example: a raw feature vector and a binary label vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
}

/// An in-memory dataset with homogeneous dimensions.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub feature_dim: usize,
    pub label_count: usize,
    pub examples: Vec<Example>,
    /// Optional display names for the labels; not carried by the file format.
    pub label_names: Option<Vec<String>>,
}

impl Dataset {
    /// Empty dataset of the given shape. `label_count` must be positive;
    /// `feature_dim` may be zero (label-only data).
    pub fn new(feature_dim: usize, label_count: usize) -> Result<Self> {
        if label_count == 0 {
            return Err(Error::Validation("label_count must be >= 1".into()));
        }
        Ok(Dataset {
            feature_dim,
            label_count,
            examples: Vec::new(),
            label_names: None,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Appends an example after checking shape, label domain, id syntax and
    /// id uniqueness (uniqueness is O(n) here; the bulk path is `load`).
    pub fn push(&mut self, ex: Example) -> Result<()> {
        validate_id(&ex.id)?;
        if ex.features.len() != self.feature_dim {
            return Err(Error::Dimension(format!(
                "example {:?} has {} features, dataset expects {}",
                ex.id,
                ex.features.len(),
                self.feature_dim
            )));
        }
        if ex.labels.len() != self.label_count {
            return Err(Error::Dimension(format!(
                "example {:?} has {} labels, dataset expects {}",
                ex.id,
                ex.labels.len(),
                self.label_count
            )));
        }
        if ex.labels.iter().any(|&l| l > 1) {
            return Err(Error::Validation(format!(
                "example {:?} has a label outside {{0,1}}",
                ex.id
            )));
        }
        if !ex.features.iter().all(|f| f.is_finite()) {
            return Err(Error::Validation(format!(
                "example {:?} has a non-finite feature",
                ex.id
            )));
        }
        if self.examples.iter().any(|e| e.id == ex.id) {
            return Err(Error::Validation(format!("duplicate example id {:?}", ex.id)));
        }
        self.examples.push(ex);
        Ok(())
    }

    /// Label rows as a dense matrix (one `Vec<u8>` per example).
    pub fn label_rows(&self) -> Vec<Vec<u8>> {
        self.examples.iter().map(|e| e.labels.clone()).collect()
    }

    /// Reads a dataset file. All format violations carry a 1-based line
    /// number.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines().enumerate();

        let (d, n) = loop {
            match lines.next() {
                None => return Err(parse_err(path, 1, "missing header line")),
                Some((idx, line)) => {
                    let line = line.map_err(|e| Error::io(path, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break parse_dataset_header(&line).map_err(|msg| parse_err(path, idx + 1, &msg))?;
                }
            }
        };
        let mut ds = Dataset::new(d, n).map_err(|e| parse_err(path, 1, &e.to_string()))?;
        let mut seen: HashSet<String> = HashSet::new();

        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(parse_err(
                    path,
                    lineno,
                    &format!("expected 3 TAB-separated fields, found {}", fields.len()),
                ));
            }
            let id = fields[0];
            validate_id(id).map_err(|e| parse_err(path, lineno, &e.to_string()))?;
            if !seen.insert(id.to_string()) {
                return Err(parse_err(path, lineno, &format!("duplicate example id {id:?}")));
            }
            let features =
                parse_floats(fields[1], d).map_err(|msg| parse_err(path, lineno, &msg))?;
            let labels = parse_labels(fields[2], n).map_err(|msg| parse_err(path, lineno, &msg))?;
            ds.examples.push(Example {
                id: id.to_string(),
                features,
                labels,
            });
        }
        Ok(ds)
    }

    /// Writes the dataset in the format read by [`Dataset::load`].
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "#ddn v1 d={} n={}", self.feature_dim, self.label_count).unwrap();
        for ex in &self.examples {
            out.push_str(&ex.id);
            out.push('\t');
            out.push_str(&format_floats(&ex.features));
            out.push('\t');
            let labels: Vec<&str> = ex.labels.iter().map(|&l| if l == 1 { "1" } else { "0" }).collect();
            out.push_str(&labels.join(","));
            out.push('\n');
        }
        write_atomic(path, out.as_bytes())
    }
}

/// Per-example marginal probabilities, as carried by a prediction file.
#[derive(Debug, Clone)]
pub struct Predictions {
    pub label_count: usize,
    pub ids: Vec<String>,
    pub probs: Vec<Vec<f64>>,
}

impl Predictions {
    pub fn new(label_count: usize) -> Self {
        Predictions {
            label_count,
            ids: Vec::new(),
            probs: Vec::new(),
        }
    }

    pub fn push(&mut self, id: String, probs: Vec<f64>) {
        assert_eq!(probs.len(), self.label_count, "prediction width mismatch");
        self.ids.push(id);
        self.probs.push(probs);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "#ddn-pred v1 n={}", self.label_count).unwrap();
        for (id, row) in self.ids.iter().zip(&self.probs) {
            writeln!(out, "{}\t{}", id, format_floats(row)).unwrap();
        }
        write_atomic(path, out.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines().enumerate();

        let n = loop {
            match lines.next() {
                None => return Err(parse_err(path, 1, "missing header line")),
                Some((idx, line)) => {
                    let line = line.map_err(|e| Error::io(path, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break parse_pred_header(&line).map_err(|msg| parse_err(path, idx + 1, &msg))?;
                }
            }
        };
        let mut preds = Predictions::new(n);
        let mut seen: HashSet<String> = HashSet::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(parse_err(
                    path,
                    lineno,
                    &format!("expected 2 TAB-separated fields, found {}", fields.len()),
                ));
            }
            validate_id(fields[0]).map_err(|e| parse_err(path, lineno, &e.to_string()))?;
            if !seen.insert(fields[0].to_string()) {
                return Err(parse_err(path, lineno, &format!("duplicate example id {:?}", fields[0])));
            }
            let row = parse_floats(fields[1], n).map_err(|msg| parse_err(path, lineno, &msg))?;
            preds.ids.push(fields[0].to_string());
            preds.probs.push(row);
        }
        Ok(preds)
    }
}

/// Scientific notation with 17 significant digits: enough that parsing the
/// text recovers the exact f64 bits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn format_floats(xs: &[f64]) -> String {
    xs.iter().map(|&x| format_float(x)).collect::<Vec<_>>().join(",")
}

fn parse_dataset_header(line: &str) -> std::result::Result<(usize, usize), String> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "#ddn" {
        return Err(format!("bad header {line:?}, expected \"#ddn v1 d=<d> n=<n>\""));
    }
    if parts[1] != "v1" {
        return Err(format!("unsupported dataset format version {:?}", parts[1]));
    }
    let d = parse_kv(parts[2], "d")?;
    let n = parse_kv(parts[3], "n")?;
    Ok((d, n))
}

fn parse_pred_header(line: &str) -> std::result::Result<usize, String> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "#ddn-pred" {
        return Err(format!("bad header {line:?}, expected \"#ddn-pred v1 n=<n>\""));
    }
    if parts[1] != "v1" {
        return Err(format!("unsupported prediction format version {:?}", parts[1]));
    }
    parse_kv(parts[2], "n")
}

fn parse_kv(field: &str, key: &str) -> std::result::Result<usize, String> {
    match field.strip_prefix(key).and_then(|r| r.strip_prefix('=')) {
        Some(v) => v.parse::<usize>().map_err(|_| format!("bad {key} value {v:?}")),
        None => Err(format!("expected {key}=<int>, found {field:?}")),
    }
}

fn parse_floats(field: &str, expect: usize) -> std::result::Result<Vec<f64>, String> {
    if expect == 0 {
        return if field.is_empty() {
            Ok(Vec::new())
        } else {
            Err(format!("expected empty feature field for d=0, found {field:?}"))
        };
    }
    let parts: Vec<&str> = field.split(',').collect();
    if parts.len() != expect {
        return Err(format!("expected {expect} comma-separated values, found {}", parts.len()));
    }
    let mut out = Vec::with_capacity(expect);
    for p in parts {
        let v: f64 = p.parse().map_err(|_| format!("bad float {p:?}"))?;
        if !v.is_finite() {
            return Err(format!("non-finite value {p:?}"));
        }
        out.push(v);
    }
    Ok(out)
}

fn parse_labels(field: &str, expect: usize) -> std::result::Result<Vec<u8>, String> {
    let parts: Vec<&str> = field.split(',').collect();
    if parts.len() != expect {
        return Err(format!("expected {expect} comma-separated labels, found {}", parts.len()));
    }
    parts
        .iter()
        .map(|p| match *p {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            other => Err(format!("label must be 0 or 1, found {other:?}")),
        })
        .collect()
}

fn validate_id(id: &str) -> Result<()> {
    if id.is_empty() {
        return Err(Error::Validation("empty example id".into()));
    }
    if id.chars().any(|c| c == '\t' || c == '\n' || c == '\r') {
        return Err(Error::Validation(format!(
            "example id {id:?} contains a TAB or newline"
        )));
    }
    Ok(())
}

fn parse_err(path: &Path, line: usize, msg: &str) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.to_string(),
    }
}

/// Writes via a temp file + rename so readers never observe a half-written
/// file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp.partial");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
