//! File formats: headerless numeric CSV for matrices, votes, labels and bounds,
//! and a JSON object for signal metadata.
//!
//! Signal metadata looks like `{"n_classes": 3, "0": 2, "1": 0, "2": 1}`: every
//! signal index maps to the class it votes on.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde_json::{Map, Value};

use crate::constraints::BoundVector;
use crate::data::{FeatureMatrix, LabeledEval, WeakSignalSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Headerless CSV of decimals; every row must have the same width.
pub fn read_matrix_csv<T: Scalar>(path: &Path) -> Result<Array2<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::parse(
                    path,
                    format!("row {} has {} columns, expected {w}", line + 1, record.len()),
                ))
            }
            _ => {}
        }
        for field in record.iter() {
            let v = T::parse_decimal(field)
                .ok_or_else(|| Error::parse(path, format!("row {}: `{field}` is not a number", line + 1)))?;
            values.push(v);
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| Error::parse(path, "file is empty"))?;
    Array2::from_shape_vec((rows, width), values).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_matrix_csv<T: Scalar>(path: &Path, m: ArrayView2<'_, T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut line = String::new();
    for row in m.rows() {
        line.clear();
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            line.push_str(&v.to_f64_lossy().to_string());
        }
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_features<T: Scalar>(path: &Path) -> Result<FeatureMatrix<T>> {
    FeatureMatrix::new(read_matrix_csv(path)?)
}

/// Per-signal target classes and the number of classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalMeta {
    pub n_classes: usize,
    pub signal_class: Vec<usize>,
}

impl SignalMeta {
    pub fn binary(n_signals: usize) -> Self {
        Self {
            n_classes: 2,
            signal_class: vec![1; n_signals],
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: Map<String, Value> = serde_json::from_str(text)?;
        let mut n_classes = None;
        let mut classes = BTreeMap::new();
        for (key, value) in &map {
            let v = value
                .as_u64()
                .ok_or_else(|| Error::invalid(format!("metadata value for `{key}` must be a non-negative integer")))?
                as usize;
            if key == "n_classes" {
                n_classes = Some(v);
            } else {
                let idx: usize = key
                    .parse()
                    .map_err(|_| Error::invalid(format!("metadata key `{key}` is neither a signal index nor n_classes")))?;
                classes.insert(idx, v);
            }
        }
        let n_classes = n_classes.ok_or_else(|| Error::invalid("metadata is missing n_classes"))?;
        let signal_class: Vec<usize> = classes.values().copied().collect();
        if classes.keys().copied().ne(0..classes.len()) {
            return Err(Error::invalid("signal indices in metadata must be 0..m without gaps"));
        }
        Ok(Self {
            n_classes,
            signal_class,
        })
    }

    pub fn to_json(&self) -> String {
        let mut map = Map::new();
        map.insert("n_classes".into(), Value::from(self.n_classes));
        for (i, &k) in self.signal_class.iter().enumerate() {
            map.insert(i.to_string(), Value::from(k));
        }
        serde_json::to_string_pretty(&Value::Object(map)).expect("metadata serializes")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Votes CSV (`-1` = abstain) plus metadata.
pub fn read_signals<T: Scalar>(path: &Path, meta: &SignalMeta) -> Result<WeakSignalSet<T>> {
    let raw = read_matrix_csv(path)?;
    WeakSignalSet::from_sentinel(&raw, meta.signal_class.clone(), meta.n_classes)
        .map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_signals<T: Scalar>(path: &Path, signals: &WeakSignalSet<T>) -> Result<()> {
    write_matrix_csv(path, signals.to_sentinel().view())
}

/// One integer class index per line.
pub fn read_labels(path: &Path, n_classes: usize) -> Result<LabeledEval> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: usize = line
            .parse()
            .map_err(|_| Error::parse(path, format!("line {}: `{line}` is not a class index", n + 1)))?;
        labels.push(v);
    }
    LabeledEval::new(labels, n_classes).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_labels(path: &Path, labels: &LabeledEval) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 2);
    for l in labels.labels() {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One non-negative bound per line.
pub fn read_bounds<T: Scalar>(path: &Path) -> Result<BoundVector<T>> {
    let m = read_matrix_csv::<T>(path)?;
    if m.ncols() != 1 {
        return Err(Error::parse(path, "bounds file must have one value per line"));
    }
    BoundVector::new(m.into_raw_vec_and_offset().0).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_bounds<T: Scalar>(path: &Path, bounds: &BoundVector<T>) -> Result<()> {
    let col = Array2::from_shape_vec((bounds.len(), 1), bounds.as_slice().to_vec()).expect("column shape");
    write_matrix_csv(path, col.view())
}
