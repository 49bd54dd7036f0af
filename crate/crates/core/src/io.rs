//! File formats for tensors, targets and splits.
//!
//! Tensor files are little-endian throughout:
//!
//! ```text
//! "SPGP" | u32 version (=1) | u32 ndim (=3) | u64 N | u64 P | u64 M | N*P*M f64
//! ```
//!
//! Targets are a CSV with header `id,tm,n_mut`, splits a JSON object with
//! keys `kind`, `seed`, `train`, `validation`, `test`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::{EmbeddingTensor, SplitSpec, TargetTable};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"SPGP";
pub const TENSOR_VERSION: u32 = 1;
pub const TENSOR_HEADER_LEN: usize = 4 + 4 + 4 + 3 * 8;

pub fn encode_tensor(tensor: &EmbeddingTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(TENSOR_HEADER_LEN + tensor.values().len() * 8);
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&3u32.to_le_bytes());
    for d in [tensor.n_sequences(), tensor.n_positions(), tensor.n_dims()] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in tensor.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<EmbeddingTensor> {
    if bytes.len() < TENSOR_HEADER_LEN {
        return Err(Error::Truncated {
            expected: TENSOR_HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[0..4] != TENSOR_MAGIC {
        return Err(Error::Format("bad tensor magic".into()));
    }
    let version = read_u32(&bytes[4..8]);
    if version != TENSOR_VERSION {
        return Err(Error::Version {
            found: version,
            expected: TENSOR_VERSION,
        });
    }
    let ndim = read_u32(&bytes[8..12]);
    if ndim != 3 {
        return Err(Error::Format(format!("expected ndim 3, found {ndim}")));
    }
    let dims: Vec<usize> = (0..3)
        .map(|i| {
            let v = read_u64(&bytes[12 + 8 * i..20 + 8 * i]);
            usize::try_from(v).map_err(|_| Error::Format(format!("dimension {v} too large")))
        })
        .collect::<Result<_>>()?;
    let count = dims[0]
        .checked_mul(dims[1])
        .and_then(|v| v.checked_mul(dims[2]))
        .ok_or_else(|| Error::Format("declared dimensions overflow".into()))?;
    let payload = &bytes[TENSOR_HEADER_LEN..];
    let expected = count
        .checked_mul(8)
        .ok_or_else(|| Error::Format("declared dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingTensor::new(dims[0], dims[1], dims[2], values)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<EmbeddingTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

pub fn write_tensor(tensor: &EmbeddingTensor, path: impl AsRef<Path>) -> Result<()> {
    // EmbeddingTensor can only be constructed finite; re-check in case the
    // invariant is ever loosened.
    if tensor.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("refusing to write non-finite tensor".into()));
    }
    write_bytes(path.as_ref(), &encode_tensor(tensor))
}

pub fn parse_targets(text: &str) -> Result<TargetTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("target csv header: {e}")))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "tm", "n_mut"] {
        return Err(Error::Format(format!(
            "target csv header must be id,tm,n_mut, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut counts = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("target csv row {}: {e}", row + 1)))?;
        let id = record[0].to_string();
        let tm: f64 = record[1]
            .parse()
            .map_err(|_| Error::Data(format!("row {}: unparseable tm {:?}", row + 1, &record[1])))?;
        let n_mut: i64 = record[2].parse().map_err(|_| {
            Error::Data(format!("row {}: unparseable n_mut {:?}", row + 1, &record[2]))
        })?;
        if n_mut < 0 {
            return Err(Error::Data(format!("row {}: negative n_mut {n_mut}", row + 1)));
        }
        let n_mut = u32::try_from(n_mut)
            .map_err(|_| Error::Data(format!("row {}: n_mut {n_mut} too large", row + 1)))?;
        ids.push(id);
        values.push(tm);
        counts.push(n_mut);
    }
    TargetTable::new(ids, values, counts)
}

pub fn read_targets(path: impl AsRef<Path>) -> Result<TargetTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_targets(&text)
}

pub fn format_targets(table: &TargetTable) -> String {
    let mut out = String::from("id,tm,n_mut\n");
    for ((id, v), c) in table.ids.iter().zip(&table.values).zip(&table.mutation_counts) {
        out.push_str(&format!("{id},{v:?},{c}\n"));
    }
    out
}

pub fn write_targets(table: &TargetTable, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), format_targets(table).as_bytes())
}

pub fn read_split(path: impl AsRef<Path>) -> Result<SplitSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("split json: {e}")))
}

pub fn write_split(split: &SplitSpec, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(split).expect("split serializes");
    text.push('\n');
    write_bytes(path.as_ref(), text.as_bytes())
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b[..4].try_into().unwrap())
}

pub(crate) fn read_u64(b: &[u8]) -> u64 {
    u64::from_le_bytes(b[..8].try_into().unwrap())
}
