//! Embedding datasets and their on-disk formats.
//!
//! Two formats are supported:
//!
//! * CSV: one row per point, comma separated, with an optional trailing
//!   integer label column.
//! * Binary: little-endian header `"DPGE"`, `u32` version (= 1), `u64` n,
//!   `u64` d, `u8` has_labels; then n·d row-major `f64` values; then n `u32`
//!   labels when present.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{contract, Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"DPGE";
pub const BINARY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Binary,
}

impl Format {
    /// `.csv` / `.tsv`-less guess from the extension; anything else is binary.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

/// n points in R^d, stored row-major, with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    data: Vec<f64>,
    n: usize,
    d: usize,
    labels: Option<Vec<u32>>,
}

impl EmbeddingDataset {
    pub fn new(data: Vec<f64>, d: usize, labels: Option<Vec<u32>>) -> Result<Self> {
        if d == 0 {
            return Err(Error::Shape("dimension must be at least 1".into()));
        }
        if data.is_empty() {
            return Err(Error::Shape("dataset has no rows".into()));
        }
        if !data.len().is_multiple_of(d) {
            return Err(Error::Shape(format!(
                "{} values do not form rows of dimension {d}",
                data.len()
            )));
        }
        let n = data.len() / d;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse {
                row: i / d,
                msg: format!("non-finite value {}", data[i]),
            });
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Shape(format!("{} labels for {n} rows", l.len())));
            }
        }
        Ok(Self { data, n, d, labels })
    }

    /// Builds a dataset from row vectors.
    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<u32>>) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::Shape(format!(
                "row {i} has dimension {}, expected {d}",
                rows[i].len()
            )));
        }
        Self::new(rows.concat(), d, labels)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    /// Row-major view of all coordinates.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    /// Number of classes implied by the labels (max label + 1).
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m as usize + 1))
    }

    pub fn with_labels(self, labels: Option<Vec<u32>>) -> Result<Self> {
        Self::new(self.data, self.d, labels)
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::new(data, self.d, labels)
    }

    /// Stacks datasets of equal dimension; labels are kept only if all carry them.
    pub fn concat(parts: &[EmbeddingDataset]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::Shape("nothing to concatenate".into()));
        };
        let d = first.d;
        if parts.iter().any(|p| p.d != d) {
            return Err(Error::Shape("dimension mismatch in concatenation".into()));
        }
        let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        let labels = if parts.iter().all(|p| p.labels.is_some()) {
            Some(
                parts
                    .iter()
                    .flat_map(|p| p.labels.as_ref().unwrap().iter().copied())
                    .collect(),
            )
        } else {
            None
        };
        Self::new(data, d, labels)
    }
}

/// Partitions a labelled dataset by class, ascending by label, preserving row order.
pub fn split_by_label(ds: &EmbeddingDataset) -> Result<Vec<(u32, EmbeddingDataset)>> {
    let Some(labels) = ds.labels() else {
        return contract("split_by_label requires labels");
    };
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
        .into_iter()
        .map(|c| {
            let idx: Vec<usize> = (0..ds.len()).filter(|&i| labels[i] == c).collect();
            Ok((c, ds.select(&idx)?))
        })
        .collect()
}

pub fn load_dataset(path: &Path, format: Format, csv_labels: bool) -> Result<EmbeddingDataset> {
    match format {
        Format::Csv => load_csv(File::open(path)?, csv_labels),
        Format::Binary => load_binary(BufReader::new(File::open(path)?)),
    }
}

pub fn save_dataset(ds: &EmbeddingDataset, path: &Path, format: Format) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        Format::Csv => write_csv(ds, &mut out)?,
        Format::Binary => write_binary(ds, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

pub fn load_csv<R: Read>(reader: R, labelled: bool) -> Result<EmbeddingDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Shape(format!(
                    "row {row} has {} columns, expected {w}",
                    record.len()
                )))
            }
            _ => {}
        }
        let n_values = if labelled {
            if record.len() < 2 {
                return Err(Error::Shape(format!(
                    "row {row} needs at least one value and a label"
                )));
            }
            record.len() - 1
        } else {
            record.len()
        };
        for field in record.iter().take(n_values) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("invalid number {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    msg: format!("non-finite value {field:?}"),
                });
            }
            data.push(v);
        }
        if labelled {
            let field = &record[n_values];
            labels.push(field.parse::<u32>().map_err(|_| Error::Parse {
                row,
                msg: format!("invalid label {field:?}"),
            })?);
        }
    }
    let Some(width) = width else {
        return Err(Error::Shape("empty CSV input".into()));
    };
    let d = if labelled { width - 1 } else { width };
    EmbeddingDataset::new(data, d, labelled.then_some(labels))
}

pub fn write_csv<W: Write>(ds: &EmbeddingDataset, out: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let mut fields: Vec<String> = Vec::with_capacity(ds.dim() + 1);
    for (i, row) in ds.rows().enumerate() {
        fields.clear();
        // `Display` for f64 prints the shortest string that round-trips exactly.
        fields.extend(row.iter().map(|v| v.to_string()));
        if let Some(l) = ds.labels() {
            fields.push(l[i].to_string());
        }
        wtr.write_record(&fields).map_err(io_err)?;
    }
    wtr.flush()?;
    Ok(())
}

fn io_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

pub fn write_binary<W: Write>(ds: &EmbeddingDataset, mut out: W) -> Result<()> {
    out.write_all(BINARY_MAGIC)?;
    out.write_all(&BINARY_VERSION.to_le_bytes())?;
    out.write_all(&(ds.n as u64).to_le_bytes())?;
    out.write_all(&(ds.d as u64).to_le_bytes())?;
    out.write_all(&[u8::from(ds.labels.is_some())])?;
    for v in &ds.data {
        out.write_all(&v.to_le_bytes())?;
    }
    if let Some(labels) = &ds.labels {
        for l in labels {
            out.write_all(&l.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_binary<R: Read>(mut input: R) -> Result<EmbeddingDataset> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    if buf.is_empty() {
        return Err(Error::Shape("empty binary input".into()));
    }
    let header_len = 4 + 4 + 8 + 8 + 1;
    if buf.len() < header_len {
        return Err(Error::Parse {
            row: 0,
            msg: "truncated header".into(),
        });
    }
    if &buf[..4] != BINARY_MAGIC {
        return Err(Error::Parse {
            row: 0,
            msg: "bad magic".into(),
        });
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != BINARY_VERSION {
        return Err(Error::Parse {
            row: 0,
            msg: format!("unsupported version {version}"),
        });
    }
    let n = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(buf[16..24].try_into().unwrap()) as usize;
    let has_labels = match buf[24] {
        0 => false,
        1 => true,
        other => {
            return Err(Error::Parse {
                row: 0,
                msg: format!("invalid label flag {other}"),
            })
        }
    };
    let body = &buf[header_len..];
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(8))
        .and_then(|b| b.checked_add(if has_labels { n * 4 } else { 0 }))
        .ok_or_else(|| Error::Shape("header sizes overflow".into()))?;
    if body.len() != expected {
        return Err(Error::Shape(format!(
            "body has {} bytes, header implies {expected}",
            body.len()
        )));
    }
    let (values, label_bytes) = body.split_at(n * d * 8);
    let data: Vec<f64> = values
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let labels = has_labels.then(|| {
        label_bytes
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect()
    });
    EmbeddingDataset::new(data, d, labels)
}
