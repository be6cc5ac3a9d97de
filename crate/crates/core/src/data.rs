//! Binary record datasets: loading, validation, writing and Poisson
//! subsampling. One record is one individual and the unit of privacy.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::Rng;

use crate::{Error, Result};

/// Default cut-off for binarizing dense 0..=255 data.
pub const DEFAULT_BINARIZE_THRESHOLD: u8 = 127;

/// A length-m indicator vector over the item universe.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryRecord {
    bits: Vec<u8>,
}

impl BinaryRecord {
    /// Builds a record from 0/1 entries. Records must contain at least one item.
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        let record = Self::possibly_empty(bits)?;
        if record.is_empty() {
            return Err(Error::Validation("record has no items".into()));
        }
        Ok(record)
    }

    /// Like [`BinaryRecord::new`] but accepts the all-zero vector. Generated
    /// samples may legitimately be empty.
    pub fn possibly_empty(bits: Vec<u8>) -> Result<Self> {
        if let Some(bad) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Validation(format!("entry {bad} is not binary")));
        }
        Ok(Self { bits })
    }

    /// Builds a record of dimension `m` with ones at `items`.
    pub fn from_items(m: usize, items: &[usize]) -> Result<Self> {
        let mut bits = vec![0u8; m];
        for &i in items {
            if i >= m {
                return Err(Error::Range {
                    line: 0,
                    index: i,
                    m,
                });
            }
            bits[i] = 1;
        }
        Self::new(bits)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn dim(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// Indices of the items present in the record, ascending.
    pub fn items(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1)
            .map(|(i, _)| i)
    }

    /// Number of items, i.e. the L1 norm.
    pub fn l1(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }
}

/// A dataset of records over a universe of `m` items, with optional class
/// labels that only evaluation code reads.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDataset {
    m: usize,
    records: Vec<BinaryRecord>,
    labels: Option<Vec<i64>>,
}

impl BinaryDataset {
    pub fn new(m: usize, records: Vec<BinaryRecord>) -> Result<Self> {
        if m == 0 {
            return Err(Error::Validation("dimension m must be at least 1".into()));
        }
        if let Some((i, r)) = records.iter().enumerate().find(|(_, r)| r.dim() != m) {
            return Err(Error::Validation(format!(
                "record {i} has dimension {} but m={m}",
                r.dim()
            )));
        }
        Ok(Self {
            m,
            records,
            labels: None,
        })
    }

    /// Attaches one label per record.
    pub fn with_labels(mut self, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != self.records.len() {
            return Err(Error::Validation(format!(
                "{} labels for {} records",
                labels.len(),
                self.records.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[BinaryRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &BinaryRecord {
        &self.records[i]
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    /// The largest record L1 norm.
    pub fn max_l1(&self) -> usize {
        self.records.iter().map(BinaryRecord::l1).max().unwrap_or(0)
    }

    /// A new dataset holding the records at `indices` (labels dropped).
    pub fn subset(&self, indices: &[usize]) -> BinaryDataset {
        BinaryDataset {
            m: self.m,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            labels: None,
        }
    }

    /// Per-item frequency of ones.
    pub fn marginals(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.m];
        for r in &self.records {
            for i in r.items() {
                counts[i] += 1;
            }
        }
        let n = self.records.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }

    /// Serializes in the sparse item-list format.
    pub fn to_sparse_string(&self) -> String {
        let mut out = format!("m={}\n", self.m);
        for r in &self.records {
            let mut first = true;
            for i in r.items() {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{i}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_sparse(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_sparse_string())?;
        Ok(())
    }
}

/// On-disk layouts accepted by [`load_records`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    /// `m=<int>` header, then one line of strictly increasing item indices per record.
    SparseItems,
    /// Headerless CSV of numbers in [0, 255], one row per record.
    DenseCsv,
}

/// Loads and validates a dataset. Dense cells strictly above
/// `binarize_threshold` become 1.
pub fn load_records(path: &Path, format: Format, binarize_threshold: u8) -> Result<BinaryDataset> {
    let file = fs::File::open(path)?;
    match format {
        Format::SparseItems => parse_sparse(file, false),
        Format::DenseCsv => parse_dense(file, binarize_threshold),
    }
}

/// Loads a sparse file that may contain empty records (synthetic output).
pub fn load_synthetic(path: &Path) -> Result<BinaryDataset> {
    parse_sparse(fs::File::open(path)?, true)
}

pub fn parse_sparse<R: Read>(reader: R, allow_empty: bool) -> Result<BinaryDataset> {
    let mut lines = BufReader::new(reader).lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing `m=<int>` header".into(),
            })
        }
    };
    let m: usize = header
        .trim()
        .strip_prefix("m=")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("expected `m=<int>`, found {header:?}"),
        })?;
    if m == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "m must be at least 1".into(),
        });
    }

    let mut records = Vec::new();
    for (offset, line) in lines.enumerate() {
        let line_no = offset + 2;
        let line = line?;
        let mut bits = vec![0u8; m];
        let mut prev: Option<usize> = None;
        for tok in line.split_whitespace() {
            let idx: usize = tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad item index {tok:?}"),
            })?;
            if idx >= m {
                return Err(Error::Range {
                    line: line_no,
                    index: idx,
                    m,
                });
            }
            if prev.is_some_and(|p| idx <= p) {
                return Err(Error::Parse {
                    line: line_no,
                    message: "item indices must be strictly increasing".into(),
                });
            }
            prev = Some(idx);
            bits[idx] = 1;
        }
        if prev.is_none() && !allow_empty {
            return Err(Error::Validation(format!("line {line_no}: empty record")));
        }
        records.push(BinaryRecord { bits });
    }
    BinaryDataset::new(m, records)
}

pub fn parse_dense<R: Read>(reader: R, binarize_threshold: u8) -> Result<BinaryDataset> {
    let mut records = Vec::new();
    let mut m = None;
    for (offset, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = offset + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut bits = Vec::new();
        for cell in line.split(',') {
            let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad cell {cell:?}"),
            })?;
            if !(0.0..=255.0).contains(&value) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("cell {value} outside [0, 255]"),
                });
            }
            bits.push(u8::from(value > binarize_threshold as f64));
        }
        match m {
            None => m = Some(bits.len()),
            Some(m) if m != bits.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {m} columns, found {}", bits.len()),
                })
            }
            _ => {}
        }
        let record = BinaryRecord::new(bits)
            .map_err(|e| Error::Validation(format!("line {line_no}: {e}")))?;
        records.push(record);
    }
    let m = m.ok_or_else(|| Error::Validation("dense file has no rows".into()))?;
    BinaryDataset::new(m, records)
}

/// Reads one integer label per line.
pub fn load_labels(path: &Path) -> Result<Vec<i64>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("bad label {l:?}"),
            })
        })
        .collect()
}

/// A Poisson-subsampled batch.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub indices: Vec<usize>,
    pub records: Vec<&'a BinaryRecord>,
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Includes each record independently with probability `q`.
pub fn sample_batch<'a, R: Rng + ?Sized>(dataset: &'a BinaryDataset, q: f64, rng: &mut R) -> Batch<'a> {
    let mut indices = Vec::new();
    for i in 0..dataset.len() {
        if rng.random::<f64>() < q {
            indices.push(i);
        }
    }
    let records = indices.iter().map(|&i| dataset.record(i)).collect();
    Batch { indices, records }
}
