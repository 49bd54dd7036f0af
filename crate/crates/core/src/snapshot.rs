//! Trained-model snapshots.
//!
//! ```text
//! "SPGM" | u32 version | u64 header_len | header JSON
//!        | f64 blocks: mask params, features, targets, cholesky factor, trace
//!        | u32 CRC32 of everything before it
//! ```
//!
//! All integers and floats are little-endian. Reals in the header are
//! written as shortest round-trip decimal strings, so a loaded model predicts
//! bit-identically to the one that was saved.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpHyperparams, GpPosterior, KernelKind};
use crate::io::{read_u32, read_u64, write_bytes};
use crate::pooling::{MaskHead, MaskVariant};
use crate::train::{TraceRow, TrainedModel};

pub const MODEL_MAGIC: &[u8; 4] = b"SPGM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Dims {
    n_train: usize,
    n_positions: usize,
    n_dims: usize,
    n_mask: usize,
    n_trace: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Hypers {
    log_sigma_f2: String,
    log_sigma_l: String,
    log_sigma_eps2: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    variant: MaskVariant,
    kernel: KernelKind,
    dims: Dims,
    hypers: Hypers,
    prior_scale: Option<String>,
    jitter: String,
    y_mean: String,
    y_scale: String,
    objective: String,
    restricted: bool,
}

fn dec(v: f64) -> String {
    format!("{v:?}")
}

fn parse_dec(field: &str, s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Format(format!("header field {field}: bad decimal {s:?}")))
}

pub fn encode_model(model: &TrainedModel) -> Vec<u8> {
    let post = &model.posterior;
    let hp = post.hypers();
    let n = model.n_train();
    let header = Header {
        variant: model.head.variant(),
        kernel: post.kind(),
        dims: Dims {
            n_train: n,
            n_positions: model.n_positions,
            n_dims: model.n_dims,
            n_mask: model.head.n_params(),
            n_trace: model.trace.len(),
        },
        hypers: Hypers {
            log_sigma_f2: dec(hp.log_sigma_f2),
            log_sigma_l: dec(hp.log_sigma_l),
            log_sigma_eps2: dec(hp.log_sigma_eps2),
        },
        prior_scale: model.head.prior_scale().map(dec),
        jitter: dec(post.jitter()),
        y_mean: dec(model.y_mean),
        y_scale: dec(model.y_scale),
        objective: dec(model.objective),
        restricted: model.restricted,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");

    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);

    let mut push = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    model.head.raw_params().iter().copied().for_each(&mut push);
    let x = post.features();
    for i in 0..x.nrows() {
        for d in 0..x.ncols() {
            push(x[(i, d)]);
        }
    }
    post.targets().iter().copied().for_each(&mut push);
    let l = post.factor();
    for i in 0..n {
        for j in 0..n {
            push(l[(i, j)]);
        }
    }
    for row in &model.trace {
        push(row.iter as f64);
        push(row.objective);
        push(row.grad_norm);
    }

    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<TrainedModel> {
    const PREFIX: usize = 4 + 4 + 8;
    if bytes.len() < PREFIX + 4 {
        return Err(Error::Truncated {
            expected: PREFIX + 4,
            found: bytes.len(),
        });
    }
    if &bytes[0..4] != MODEL_MAGIC {
        return Err(Error::Format("bad model magic".into()));
    }
    let version = read_u32(&bytes[4..8]);
    if version != MODEL_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let body_len = bytes.len() - 4;
    let stored = read_u32(&bytes[body_len..]);
    let computed = crc32fast::hash(&bytes[..body_len]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let header_len = usize::try_from(read_u64(&bytes[8..16]))
        .map_err(|_| Error::Format("header length too large".into()))?;
    let header_end = PREFIX
        .checked_add(header_len)
        .filter(|&e| e <= body_len)
        .ok_or(Error::Truncated {
            expected: PREFIX.saturating_add(header_len),
            found: body_len,
        })?;
    let header: Header = serde_json::from_slice(&bytes[PREFIX..header_end])
        .map_err(|e| Error::Format(format!("model header: {e}")))?;

    let d = &header.dims;
    let n_values = d.n_mask + d.n_train * d.n_dims + d.n_train + d.n_train * d.n_train + 3 * d.n_trace;
    let payload = &bytes[header_end..body_len];
    if payload.len() != n_values * 8 {
        return Err(Error::Truncated {
            expected: n_values * 8,
            found: payload.len(),
        });
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |k: usize| -> Vec<f64> { values.by_ref().take(k).collect() };

    let raw = take(d.n_mask);
    let features = DMatrix::from_row_slice(d.n_train, d.n_dims, &take(d.n_train * d.n_dims));
    let targets = DVector::from_vec(take(d.n_train));
    let factor = DMatrix::from_row_slice(d.n_train, d.n_train, &take(d.n_train * d.n_train));
    let trace_vals = take(3 * d.n_trace);
    let trace = trace_vals
        .chunks_exact(3)
        .map(|c| TraceRow {
            iter: c[0] as usize,
            objective: c[1],
            grad_norm: c[2],
        })
        .collect();

    let prior_scale = header
        .prior_scale
        .as_deref()
        .map(|s| parse_dec("prior_scale", s))
        .transpose()?;
    let head = MaskHead::new(header.variant, raw, prior_scale)?;
    if header.variant != MaskVariant::Mean && head.n_params() != d.n_positions {
        return Err(Error::Format(format!(
            "mask has {} parameters for {} positions",
            head.n_params(),
            d.n_positions
        )));
    }
    let hypers = GpHyperparams::new(
        parse_dec("log_sigma_f2", &header.hypers.log_sigma_f2)?,
        parse_dec("log_sigma_l", &header.hypers.log_sigma_l)?,
        parse_dec("log_sigma_eps2", &header.hypers.log_sigma_eps2)?,
    )?;
    let posterior = GpPosterior::from_factor(
        features,
        targets,
        hypers,
        header.kernel,
        factor,
        parse_dec("jitter", &header.jitter)?,
    );
    Ok(TrainedModel {
        posterior,
        head,
        n_positions: d.n_positions,
        n_dims: d.n_dims,
        y_mean: parse_dec("y_mean", &header.y_mean)?,
        y_scale: parse_dec("y_scale", &header.y_scale)?,
        objective: parse_dec("objective", &header.objective)?,
        trace,
        restricted: header.restricted,
    })
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_model(model))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

/// CRC32 stored at the end of an encoded snapshot.
pub fn snapshot_checksum(bytes: &[u8]) -> Option<u32> {
    (bytes.len() >= 4).then(|| read_u32(&bytes[bytes.len() - 4..]))
}
