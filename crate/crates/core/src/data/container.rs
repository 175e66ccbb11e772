//! Versioned binary dataset container. Layout documented in
//! `docs/dataset-format.md`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MetaDataset, Provenance, Samples, TaskData};
use crate::error::{Error, Result};

pub const CONTAINER_HEADER: &str = "METAPAC-DATASET v1";

#[derive(Serialize, Deserialize)]
struct Descriptor {
    input_dim: usize,
    output_dim: usize,
    tasks: usize,
    m: usize,
    provenance: Provenance,
}

pub fn save_dataset(path: impl AsRef<Path>, data: &MetaDataset) -> Result<()> {
    std::fs::write(path, encode(data)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<MetaDataset> {
    decode(&std::fs::read(path)?)
}

fn encode(data: &MetaDataset) -> Result<Vec<u8>> {
    let desc = Descriptor {
        input_dim: data.input_dim,
        output_dim: data.output_dim,
        tasks: data.n(),
        m: data.m(),
        provenance: data.provenance.clone(),
    };
    let json = serde_json::to_vec(&desc).map_err(|e| Error::domain(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(CONTAINER_HEADER.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &data.tasks {
        out.extend_from_slice(&(t.train.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.test.rows() as u64).to_le_bytes());
        for s in [&t.train, &t.test] {
            for v in s.features().iter().chain(s.targets()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.bytes.len() as u64,
                format!("truncated {what}"),
            )),
        }
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let len = count
            .checked_mul(8)
            .ok_or_else(|| Error::format(self.pos as u64, format!("{what} length overflows")))?;
        let b = self.take(len, what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn decode(bytes: &[u8]) -> Result<MetaDataset> {
    let line_end = bytes.iter().take(64).position(|&b| b == b'\n');
    let header = line_end.map(|e| String::from_utf8_lossy(&bytes[..e]).into_owned());
    if header.as_deref() != Some(CONTAINER_HEADER) {
        let found = header.unwrap_or_else(|| "no header line".to_string());
        return Err(Error::format(
            0,
            format!("unsupported schema version: expected '{CONTAINER_HEADER}', found '{found}'"),
        ));
    }
    let mut r = Reader {
        bytes,
        pos: line_end.expect("checked") + 1,
    };
    let desc_at = r.pos as u64;
    let json_len = r.u64("descriptor length")? as usize;
    let desc: Descriptor = serde_json::from_slice(r.take(json_len, "descriptor")?)
        .map_err(|e| Error::format(desc_at + 8, format!("bad descriptor: {e}")))?;
    if desc.input_dim == 0 || desc.output_dim == 0 || desc.tasks == 0 {
        return Err(Error::format(
            desc_at + 8,
            "descriptor has zero dimensions or tasks",
        ));
    }
    let mut tasks = Vec::with_capacity(desc.tasks);
    for i in 0..desc.tasks {
        let at = r.pos as u64;
        let train_rows = r.u64("task header")? as usize;
        let test_rows = r.u64("task header")? as usize;
        if train_rows != desc.m {
            return Err(Error::format(
                at,
                format!(
                    "task {i} has {train_rows} training rows; every task must have m = {}",
                    desc.m
                ),
            ));
        }
        let mut read = |rows: usize| -> Result<Samples> {
            let x = r.f64s(rows * desc.input_dim, "features")?;
            let y = r.f64s(rows * desc.output_dim, "targets")?;
            Samples::new(desc.input_dim, desc.output_dim, x, y)
        };
        let train = read(train_rows)?;
        let test = read(test_rows)?;
        tasks.push(TaskData { train, test });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            r.pos as u64,
            "trailing bytes after the last task",
        ));
    }
    MetaDataset::new(tasks, desc.provenance)
}
