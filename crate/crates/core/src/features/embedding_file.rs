//! Little-endian matrix container keyed by sample id.
//!
//! Layout:
//!
//! ```text
//! 0   magic "UPTM"
//! 4   version      u32 (1)
//! 8   dtype        u32 (0 = f32, 1 = f64)
//! 12  rows         u32 total rows over all records
//! 16  cols         u32
//! 20  n_records    u32
//! 24  index        n_records × (id_len u32, id bytes, row_start u32, row_count u32)
//! ..  payload      rows × cols values, row-major
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"UPTM";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;
pub const DTYPE_F64: u32 = 1;
const HEADER_LEN: usize = 24;

/// What to do when a requested id is absent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingPolicy {
    #[default]
    Error,
    Zeros,
}

impl std::str::FromStr for MissingPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(MissingPolicy::Error),
            "zeros" => Ok(MissingPolicy::Zeros),
            _ => Err(Error::config(format!("missing-id policy must be error or zeros, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
struct Record {
    id: String,
    row_start: usize,
    row_count: usize,
    entry_offset: usize,
}

/// A fully decoded container.
#[derive(Clone, Debug)]
pub struct EmbeddingFile {
    dtype: u32,
    rows: usize,
    cols: usize,
    records: Vec<Record>,
    index: HashMap<String, usize>,
    payload: Vec<f64>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::format(
                self.bytes.len() as u64,
                format!(
                    "truncated {what}: expected {end} bytes, found {}",
                    self.bytes.len()
                ),
            ));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }
}

impl EmbeddingFile {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { offset, msg } => Error::Format {
                offset,
                msg: format!("{}: {msg}", path.display()),
            },
            other => other,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated header: expected {HEADER_LEN} bytes, found {}", bytes.len()),
            ));
        }
        if c.take(4, "magic")? != MAGIC {
            return Err(Error::format(0, "bad magic, expected \"UPTM\""));
        }
        let version = c.u32("header")?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let dtype = c.u32("header")?;
        let width = match dtype {
            DTYPE_F32 => 4,
            DTYPE_F64 => 8,
            _ => return Err(Error::format(8, format!("unknown dtype code {dtype}"))),
        };
        let rows = c.u32("header")? as usize;
        let cols = c.u32("header")? as usize;
        let n_records = c.u32("header")? as usize;
        if cols == 0 {
            return Err(Error::format(16, "column count is zero"));
        }

        let mut records = Vec::with_capacity(n_records.min(1 << 20));
        let mut index = HashMap::new();
        for _ in 0..n_records {
            let entry_offset = c.pos;
            let id_len = c.u32("index")? as usize;
            let id = std::str::from_utf8(c.take(id_len, "index")?)
                .map_err(|_| Error::format(entry_offset as u64 + 4, "record id is not UTF-8"))?
                .to_string();
            let row_start = c.u32("index")? as usize;
            let row_count = c.u32("index")? as usize;
            if row_count == 0 || row_start + row_count > rows {
                return Err(Error::format(
                    entry_offset as u64,
                    format!("record {id:?} rows {row_start}..{} outside 0..{rows}", row_start + row_count),
                ));
            }
            if index.insert(id.clone(), records.len()).is_some() {
                return Err(Error::format(entry_offset as u64, format!("duplicate record id {id:?}")));
            }
            records.push(Record {
                id,
                row_start,
                row_count,
                entry_offset,
            });
        }

        let payload_start = c.pos;
        let expected = payload_start + rows * cols * width;
        if bytes.len() < expected {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated payload: expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        if bytes.len() > expected {
            return Err(Error::format(
                expected as u64,
                format!("trailing data: expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let raw = &bytes[payload_start..];
        let payload = match dtype {
            DTYPE_F32 => raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
            _ => raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        };
        Ok(EmbeddingFile {
            dtype,
            rows,
            cols,
            records,
            index,
            payload,
        })
    }

    pub fn dtype(&self) -> u32 {
        self.dtype
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// The stored `[rows×cols]` matrix of `id`, if present.
    pub fn get(&self, id: &str) -> Option<Tensor> {
        let r = &self.records[*self.index.get(id)?];
        let s = r.row_start * self.cols;
        let data = self.payload[s..s + r.row_count * self.cols].to_vec();
        Some(Tensor::new(vec![r.row_count, self.cols], data).expect("validated on read"))
    }

    /// Loads `id` checking its width (and height, when `expected_rows` is
    /// given). A missing id under [`MissingPolicy::Zeros`] yields zeros.
    pub fn load(
        &self,
        id: &str,
        expected_cols: usize,
        expected_rows: Option<usize>,
        policy: MissingPolicy,
    ) -> Result<Tensor> {
        if self.cols != expected_cols {
            return Err(Error::format(
                16,
                format!(
                    "record {id:?} has {} columns, expected {expected_cols}",
                    self.cols
                ),
            ));
        }
        let Some(&i) = self.index.get(id) else {
            return match (policy, expected_rows) {
                (MissingPolicy::Zeros, Some(rows)) => {
                    log::warn!("embedding id {id:?} missing; substituting zeros");
                    Ok(Tensor::zeros(&[rows, expected_cols]))
                }
                (MissingPolicy::Zeros, None) => Err(Error::usage(
                    "zero fallback needs the expected row count",
                )),
                (MissingPolicy::Error, _) => Err(Error::input(format!("embedding id {id:?} not found"))),
            };
        };
        let r = &self.records[i];
        if let Some(rows) = expected_rows {
            if r.row_count != rows {
                return Err(Error::format(
                    r.entry_offset as u64,
                    format!("record {id:?} has {} rows, expected {rows}", r.row_count),
                ));
            }
        }
        Ok(self.get(id).expect("indexed"))
    }
}

/// Accumulates records and serializes them in insertion order.
#[derive(Clone, Debug)]
pub struct EmbeddingWriter {
    dtype: u32,
    cols: Option<usize>,
    records: Vec<(String, Tensor)>,
    seen: HashMap<String, ()>,
}

impl EmbeddingWriter {
    pub fn new(dtype: u32) -> Result<Self> {
        if dtype != DTYPE_F32 && dtype != DTYPE_F64 {
            return Err(Error::usage(format!("unknown dtype code {dtype}")));
        }
        Ok(EmbeddingWriter {
            dtype,
            cols: None,
            records: Vec::new(),
            seen: HashMap::new(),
        })
    }

    /// Appends a `[rows×cols]` matrix (rank-1 tensors are one column).
    pub fn push(&mut self, id: impl Into<String>, t: &Tensor) -> Result<()> {
        let id = id.into();
        let (rows, cols) = match t.shape() {
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            s => return Err(Error::shape("embedding_writer", format!("expected a matrix, got {s:?}"))),
        };
        if let Some(c0) = self.cols {
            if c0 != cols {
                return Err(Error::Dimension {
                    op: "embedding_writer",
                    lhs: vec![c0],
                    rhs: vec![cols],
                });
            }
        }
        if self.seen.insert(id.clone(), ()).is_some() {
            return Err(Error::usage(format!("duplicate record id {id:?}")));
        }
        self.cols = Some(cols);
        let t = Tensor::new(vec![rows, cols], t.data().to_vec())?;
        self.records.push((id, t));
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let cols = self.cols.ok_or_else(|| Error::usage("no records to write"))?;
        let rows: usize = self.records.iter().map(|(_, t)| t.shape()[0]).sum();
        let u32_of = |v: usize, what: &str| -> Result<u32> {
            u32::try_from(v).map_err(|_| Error::usage(format!("{what} {v} exceeds u32")))
        };
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.dtype, u32_of(rows, "rows")?, u32_of(cols, "cols")?, u32_of(self.records.len(), "records")?] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut start = 0;
        for (id, t) in &self.records {
            out.extend_from_slice(&u32_of(id.len(), "id length")?.to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.extend_from_slice(&u32_of(start, "row start")?.to_le_bytes());
            out.extend_from_slice(&u32_of(t.shape()[0], "row count")?.to_le_bytes());
            start += t.shape()[0];
        }
        for (_, t) in &self.records {
            for &v in t.data() {
                if self.dtype == DTYPE_F32 {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                } else {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }
}
