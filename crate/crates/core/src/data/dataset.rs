use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::fmt_f64;

/// Multi-channel input series and one output series recorded under one working condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionDataset {
    name: String,
    /// L rows (time) by J columns (channels).
    inputs: DMatrix<f64>,
    output: DVector<f64>,
    channel_names: Vec<String>,
    output_name: String,
    /// Set when `name` does not follow the `<COND><speed>-<idx>` convention.
    name_warning: bool,
}

/// Parsed form of a dataset name such as `BR30-1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetName {
    pub condition: String,
    pub speed: u32,
    pub index: u32,
}

impl DatasetName {
    pub fn parse(name: &str) -> Option<Self> {
        let (head, idx) = name.rsplit_once('-')?;
        let index = parse_digits(idx)?;
        let split = head.find(|c: char| c.is_ascii_digit())?;
        let (condition, speed) = head.split_at(split);
        if condition.is_empty() || !condition.chars().all(|c| c.is_ascii_alphabetic()) {
            return None;
        }
        Some(DatasetName {
            condition: condition.to_string(),
            speed: parse_digits(speed)?,
            index,
        })
    }
}

fn parse_digits(s: &str) -> Option<u32> {
    if s.is_empty() || !s.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

impl ConditionDataset {
    pub fn new(
        name: impl Into<String>,
        inputs: DMatrix<f64>,
        output: DVector<f64>,
    ) -> Result<Self> {
        let channels = (1..=inputs.ncols()).map(|j| format!("s{j}")).collect();
        Self::with_names(name, inputs, output, channels, "y".to_string())
    }

    pub fn with_names(
        name: impl Into<String>,
        inputs: DMatrix<f64>,
        output: DVector<f64>,
        channel_names: Vec<String>,
        output_name: String,
    ) -> Result<Self> {
        let name = name.into();
        if inputs.nrows() != output.len() {
            return Err(Error::Dimension(format!(
                "dataset {name}: {} input rows but {} output samples",
                inputs.nrows(),
                output.len()
            )));
        }
        if inputs.ncols() == 0 || inputs.nrows() == 0 {
            return Err(Error::InvalidInput(format!(
                "dataset {name}: needs at least one channel and one sample"
            )));
        }
        if channel_names.len() != inputs.ncols() {
            return Err(Error::Dimension(format!(
                "dataset {name}: {} channel names for {} channels",
                channel_names.len(),
                inputs.ncols()
            )));
        }
        if let Some(pos) = inputs.iter().chain(output.iter()).position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "dataset {name}: non-finite value at flat position {pos}"
            )));
        }
        let name_warning = DatasetName::parse(&name).is_none();
        if name_warning {
            warn!("dataset name {name:?} does not follow the <COND><speed>-<idx> convention");
        }
        Ok(ConditionDataset {
            name,
            inputs,
            output,
            channel_names,
            output_name,
            name_warning,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Condition key shared by the estimation/validation/evaluation datasets of one condition:
    /// the name with its trailing `-<idx>` removed.
    pub fn condition_key(&self) -> &str {
        condition_key(&self.name)
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn output(&self) -> &DVector<f64> {
        &self.output
    }

    pub fn sample_count(&self) -> usize {
        self.output.len()
    }

    pub fn channel_count(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn output_name(&self) -> &str {
        &self.output_name
    }

    pub fn name_warning(&self) -> bool {
        self.name_warning
    }

    /// Writes the dataset in the `t,<channels...>,<output>` CSV layout.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut buf = String::new();
        buf.push('t');
        for c in &self.channel_names {
            buf.push(',');
            buf.push_str(c);
        }
        buf.push(',');
        buf.push_str(&self.output_name);
        buf.push('\n');
        for t in 0..self.sample_count() {
            buf.push_str(&t.to_string());
            for j in 0..self.channel_count() {
                buf.push(',');
                buf.push_str(&fmt_f64(self.inputs[(t, j)]));
            }
            buf.push(',');
            buf.push_str(&fmt_f64(self.output[t]));
            buf.push('\n');
        }
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn condition_key(name: &str) -> &str {
    match name.rsplit_once('-') {
        Some((head, idx)) if !head.is_empty() && parse_digits(idx).is_some() => head,
        _ => name,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Estimation,
    Validation,
    Evaluation,
}

/// One manifest record: which file holds which dataset, and how to read its columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub file: PathBuf,
    pub role: Role,
    pub channels: Vec<String>,
    pub output: String,
}

/// Reads a manifest JSON array; relative `file` paths are resolved against the manifest's
/// directory.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut seen = HashMap::new();
    for (i, e) in entries.iter_mut().enumerate() {
        if let Some(prev) = seen.insert(e.name.clone(), i) {
            return Err(Error::InvalidInput(format!(
                "manifest {}: dataset name {:?} appears in entries {} and {}",
                path.display(),
                e.name,
                prev,
                i
            )));
        }
        if e.channels.is_empty() {
            return Err(Error::InvalidInput(format!(
                "manifest {}: entry {:?} declares no channels",
                path.display(),
                e.name
            )));
        }
        if e.file.is_relative() {
            e.file = base.join(&e.file);
        }
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = serde_json::to_string_pretty(entries)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads the dataset described by `entry` from the CSV at `path`.
pub fn load_dataset(path: &Path, entry: &ManifestEntry) -> Result<ConditionDataset> {
    let ingest = |row: usize, column: &str, message: String| Error::Ingestion {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message,
    };

    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut records = reader.records();

    let header = match records.next() {
        None => return Err(ingest(1, "-", "empty file".into())),
        Some(r) => r.map_err(|e| ingest(1, "-", e.to_string()))?,
    };
    let header: Vec<String> = header.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("t") {
        return Err(ingest(1, "t", "first header column must be `t`".into()));
    }
    let mut index = HashMap::new();
    for (col, name) in header.iter().enumerate() {
        if name.is_empty() {
            return Err(ingest(1, &format!("#{}", col + 1), "empty header name".into()));
        }
        if index.insert(name.as_str(), col).is_some() {
            return Err(ingest(1, name, "duplicate header".into()));
        }
    }
    let locate = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| ingest(1, name, "missing header".into()))
    };
    let channel_cols = entry
        .channels
        .iter()
        .map(|c| locate(c))
        .collect::<Result<Vec<_>>>()?;
    let output_col = locate(&entry.output)?;

    let width = header.len();
    let mut inputs: Vec<f64> = Vec::new();
    let mut output: Vec<f64> = Vec::new();
    for (i, record) in records.enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| ingest(row, "-", e.to_string()))?;
        if record.len() != width {
            return Err(ingest(
                row,
                "-",
                format!("ragged row: {} fields, header has {width}", record.len()),
            ));
        }
        let cell = |col: usize| -> Result<f64> {
            let raw = &record[col];
            let v: f64 = raw
                .parse()
                .map_err(|_| ingest(row, &header[col], format!("non-numeric cell {raw:?}")))?;
            if !v.is_finite() {
                return Err(ingest(row, &header[col], format!("non-finite cell {raw:?}")));
            }
            Ok(v)
        };
        for &c in &channel_cols {
            inputs.push(cell(c)?);
        }
        output.push(cell(output_col)?);
    }
    if output.is_empty() {
        return Err(ingest(2, "-", "no data rows".into()));
    }

    let l = output.len();
    let inputs = DMatrix::from_row_slice(l, channel_cols.len(), &inputs);
    ConditionDataset::with_names(
        entry.name.clone(),
        inputs,
        DVector::from_vec(output),
        entry.channels.clone(),
        entry.output.clone(),
    )
}
