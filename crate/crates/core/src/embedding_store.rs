//! Embedding vectors and matrices, plus their on-disk forms.
//!
//! Binary layout (`EMB1`):
//!
//! ```text
//! offset 0   4 bytes   magic  b"EMB1"
//! offset 4   8 bytes   header length H, u64 little-endian
//! offset 12  H bytes   JSON header {"dim","rows","dtype":"f32","endianness":"little","labels"}
//! offset 12+H          rows*dim f32 little-endian, row-major
//! ```
//!
//! Values are held as `f64` in memory and quantized to `f32` on write.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inversion::TrajectoryRecord;
use crate::linalg;

pub const MAGIC: [u8; 4] = *b"EMB1";

/// Column set of the trajectory CSV, in order.
pub const TRAJECTORY_COLUMNS: [&str; 8] = [
    "step",
    "loss_total",
    "loss_ovi",
    "loss_mahalanobis",
    "loss_neighbor",
    "sim_target",
    "sim_anchor",
    "sim_reference",
];

/// Dense, finite, non-empty embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("embedding dimension must be positive".into()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { row: 0 });
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.values)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        linalg::dot(&self.values, &other.values)
    }

    /// The vector after a round trip through `f32`.
    pub fn quantized(&self) -> Self {
        Self {
            values: self.values.iter().map(|&v| v as f32 as f64).collect(),
        }
    }

    pub fn to_matrix(&self) -> EmbeddingMatrix {
        EmbeddingMatrix {
            rows: 1,
            dim: self.dim(),
            data: self.values.clone(),
            labels: None,
        }
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Row-major stack of embeddings sharing one dimension, optionally labelled.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
    labels: Option<Vec<String>>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("embedding dimension must be positive".into()));
        }
        if data.len() != rows * dim {
            return Err(Error::Shape(format!(
                "{} values do not form {rows} rows of dimension {dim}",
                data.len()
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != rows {
                return Err(Error::Shape(format!("{} labels for {rows} rows", labels.len())));
            }
        }
        if let Some(row) = first_non_finite_row(&data, dim) {
            return Err(Error::NonFinite { row });
        }
        Ok(Self {
            rows,
            dim,
            data,
            labels,
        })
    }

    pub fn from_rows(rows: &[EmbeddingVector]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.dim())
            .ok_or(Error::TooFewRows { needed: 1, actual: 0 })?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: r.dim(),
                });
            }
            data.extend_from_slice(r.as_slice());
        }
        Self::new(rows.len(), dim, data, None)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_vector(&self, i: usize) -> EmbeddingVector {
        EmbeddingVector {
            values: self.row(i).to_vec(),
        }
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn quantized(&self) -> Self {
        Self {
            data: self.data.iter().map(|&v| v as f32 as f64).collect(),
            ..self.clone()
        }
    }
}

fn first_non_finite_row(data: &[f64], dim: usize) -> Option<usize> {
    data.iter().position(|v| !v.is_finite()).map(|i| i / dim)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingFileHeader {
    pub dim: usize,
    pub rows: usize,
    pub dtype: String,
    pub endianness: String,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
}

impl EmbeddingFileHeader {
    fn for_matrix(m: &EmbeddingMatrix) -> Self {
        Self {
            dim: m.dim,
            rows: m.rows,
            dtype: "f32".into(),
            endianness: "little".into(),
            labels: m.labels.clone(),
        }
    }
}

/// Encodes a matrix into the `EMB1` byte layout.
pub fn encode_matrix(m: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(m.data.len() * 4);
    for (i, &v) in m.data.iter().enumerate() {
        let q = v as f32;
        if !q.is_finite() {
            return Err(Error::NonFinite { row: i / m.dim });
        }
        payload.extend_from_slice(&q.to_le_bytes());
    }
    let header = serde_json::to_vec(&EmbeddingFileHeader::for_matrix(m))?;
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        return Err(Error::BadMagic { found });
    }
    if bytes.len() < 12 {
        return Err(Error::BadHeader("file ends inside the header length".into()));
    }
    let header_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
    let header_end = 12u64
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or_else(|| Error::BadHeader(format!("header length {header_len} exceeds file size")))?
        as usize;
    let header: EmbeddingFileHeader =
        serde_json::from_slice(&bytes[12..header_end]).map_err(|e| Error::BadHeader(e.to_string()))?;
    if header.dtype != "f32" || header.endianness != "little" {
        return Err(Error::BadHeader(format!(
            "unsupported dtype {}/{}",
            header.dtype, header.endianness
        )));
    }
    let payload = &bytes[header_end..];
    let expected = (header.rows as u64)
        .checked_mul(header.dim as u64)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::BadHeader("rows*dim overflows".into()))?;
    if payload.len() as u64 != expected {
        return Err(Error::PayloadLength {
            expected,
            actual: payload.len() as u64,
        });
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    EmbeddingMatrix::new(header.rows, header.dim, data, header.labels)
}

pub fn write_matrix(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_matrix(m)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes)
}

/// Reads the first row of an embedding file as a vector.
pub fn read_vector(path: impl AsRef<Path>) -> Result<EmbeddingVector> {
    read_row(path, 0)
}

pub fn read_row(path: impl AsRef<Path>, row: usize) -> Result<EmbeddingVector> {
    let m = read_matrix(path)?;
    if row >= m.rows() {
        return Err(Error::TooFewRows {
            needed: row + 1,
            actual: m.rows(),
        });
    }
    Ok(m.row_vector(row))
}

pub fn write_vector(v: &EmbeddingVector, path: impl AsRef<Path>) -> Result<()> {
    write_matrix(&v.to_matrix(), path)
}

/// Parses comma-separated rows. With `labels`, the first field of each
/// line is taken as the row label. Blank lines are skipped.
pub fn parse_csv(text: &str, labels: bool) -> Result<EmbeddingMatrix> {
    read_csv_from(text.as_bytes(), labels)
}

pub fn read_csv(path: impl AsRef<Path>, labels: bool) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_from(BufReader::new(file), labels)
}

fn read_csv_from(reader: impl BufRead, with_labels: bool) -> Result<EmbeddingMatrix> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    let mut rows = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Csv {
            line: line_no,
            message: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        if with_labels {
            labels.push(fields.next().unwrap_or_default().to_string());
        }
        let start = data.len();
        for field in fields {
            let v: f64 = field.parse().map_err(|_| Error::Csv {
                line: line_no,
                message: format!("malformed number `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    line: line_no,
                    message: format!("non-finite value `{field}`"),
                });
            }
            data.push(v);
        }
        let width = data.len() - start;
        match dim {
            None if width == 0 => {
                return Err(Error::Csv {
                    line: line_no,
                    message: "row has no values".into(),
                })
            }
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(Error::Csv {
                    line: line_no,
                    message: format!("expected {d} values, found {width}"),
                })
            }
            Some(_) => {}
        }
        rows += 1;
    }
    let dim = dim.ok_or(Error::Csv {
        line: 0,
        message: "no rows".into(),
    })?;
    EmbeddingMatrix::new(rows, dim, data, with_labels.then_some(labels))
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn format_trajectory(records: &[TrajectoryRecord]) -> String {
    let mut out = TRAJECTORY_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step,
            r.loss_total,
            r.loss_ovi,
            opt_field(r.loss_mahalanobis),
            opt_field(r.loss_neighbor),
            r.sim_target,
            opt_field(r.sim_anchor),
            opt_field(r.sim_reference),
        ));
    }
    out
}

pub fn write_trajectory(records: &[TrajectoryRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(format_trajectory(records).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
