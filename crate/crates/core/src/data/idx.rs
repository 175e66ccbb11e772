//! IDX tensors: a 4-byte big-endian magic, one 4-byte big-endian size per
//! dimension, then raw unsigned bytes.

use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<u32>,
}

impl IdxHeader {
    pub fn count(&self) -> usize {
        self.dims[0] as usize
    }

    /// Elements per item (pixels per image, 1 per label).
    pub fn item_len(&self) -> usize {
        self.dims[1..].iter().map(|&d| d as usize).product()
    }

    fn payload_len(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

/// Parsed tensor. Image bytes are scaled to `[0, 1]`; label bytes are kept
/// as their integer values.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxTensor {
    pub header: IdxHeader,
    pub data: Vec<f64>,
}

impl IdxTensor {
    pub fn item(&self, i: usize) -> &[f64] {
        let len = self.header.item_len();
        &self.data[i * len..(i + 1) * len]
    }
}

fn dim_count(magic: u32) -> Option<usize> {
    match magic {
        IMAGE_MAGIC => Some(3),
        LABEL_MAGIC => Some(1),
        _ => None,
    }
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(bytes.len() as u64, format!("truncated {what}")))
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    let magic = be_u32(bytes, 0, "magic number")?;
    let ndims = dim_count(magic).ok_or_else(|| {
        Error::format(
            0,
            format!("unknown IDX magic {magic}; expected {IMAGE_MAGIC} or {LABEL_MAGIC}"),
        )
    })?;
    let dims = (0..ndims)
        .map(|k| be_u32(bytes, 4 + 4 * k, "dimension sizes"))
        .collect::<Result<Vec<_>>>()?;
    let header = IdxHeader { magic, dims };
    let start = 4 + 4 * ndims;
    let len = header.payload_len();
    let end = start + len;
    if bytes.len() < end {
        return Err(Error::format(
            bytes.len() as u64,
            format!("payload truncated: expected {len} bytes after the header"),
        ));
    }
    if bytes.len() > end {
        return Err(Error::format(end as u64, "trailing bytes after payload"));
    }
    let payload = &bytes[start..end];
    let data = if magic == IMAGE_MAGIC {
        payload.iter().map(|&b| f64::from(b) / 255.0).collect()
    } else {
        payload.iter().map(|&b| f64::from(b)).collect()
    };
    Ok(IdxTensor { header, data })
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    parse_idx(&std::fs::read(path)?)
}

pub fn encode_idx(magic: u32, dims: &[u32], payload: &[u8]) -> Result<Vec<u8>> {
    let ndims =
        dim_count(magic).ok_or_else(|| Error::domain(format!("unknown IDX magic {magic}")))?;
    if dims.len() != ndims {
        return Err(Error::domain(format!(
            "magic {magic} takes {ndims} dimensions, got {}",
            dims.len()
        )));
    }
    let want: usize = dims.iter().map(|&d| d as usize).product();
    if payload.len() != want {
        return Err(Error::domain(format!(
            "payload has {} bytes, dims imply {want}",
            payload.len()
        )));
    }
    let mut out = Vec::with_capacity(4 + 4 * ndims + want);
    out.extend_from_slice(&magic.to_be_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn write_idx(path: impl AsRef<Path>, magic: u32, dims: &[u32], payload: &[u8]) -> Result<()> {
    std::fs::write(path, encode_idx(magic, dims, payload)?)?;
    Ok(())
}
