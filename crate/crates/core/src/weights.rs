//! Named, ordered parameter storage and its on-disk container.
//!
//! File layout, all little-endian:
//!
//! ```text
//! lowlight-weights v1 tensors=<count> blob_bytes=<len>\n
//! <name> <d0>x<d1>x...x<dk> <byte_offset>\n      (one line per tensor)
//! blob\n
//! <raw f32 data, little-endian, tensors back to back>
//! ```
//!
//! Offsets are relative to the first byte after the `blob` line. Loading
//! validates the header, uniqueness, offsets and the blob length before
//! returning anything.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "lowlight-weights v1";

#[derive(Debug, Clone, Default)]
pub struct WeightStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl WeightStore {
    pub fn new() -> WeightStore {
        WeightStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::WeightManifest(format!("duplicate tensor name `{name}`")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = *self.index.get(name)?;
        Some(&mut self.entries[i].1)
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count, summed from the stored shapes.
    pub fn total_params(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut manifest = String::new();
        let mut offset = 0usize;
        let blob_bytes: usize = self.entries.iter().map(|(_, t)| t.numel() * 4).sum();
        manifest.push_str(&format!(
            "{MAGIC} tensors={} blob_bytes={}\n",
            self.entries.len(),
            blob_bytes
        ));
        for (name, t) in &self.entries {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            manifest.push_str(&format!("{name} {} {offset}\n", dims.join("x")));
            offset += t.numel() * 4;
        }
        manifest.push_str("blob\n");

        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        file.write_all(manifest.as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut blob = Vec::with_capacity(blob_bytes);
        for (_, t) in &self.entries {
            for &v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        file.write_all(&blob)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<WeightStore> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&bytes)
    }

    fn parse(bytes: &[u8]) -> Result<WeightStore> {
        // Split the text manifest from the binary blob at the `blob` line.
        let mut lines: Vec<(usize, &[u8])> = Vec::new();
        let mut start = 0usize;
        let mut blob_start = None;
        for (i, &b) in bytes.iter().enumerate() {
            if b == b'\n' {
                let line = &bytes[start..i];
                if line == b"blob" {
                    blob_start = Some(i + 1);
                    break;
                }
                lines.push((start, line));
                start = i + 1;
            }
        }
        let blob_start =
            blob_start.ok_or_else(|| Error::WeightManifest("missing `blob` marker".into()))?;
        let blob = &bytes[blob_start..];

        let mut iter = lines.iter();
        let (_, header) = iter
            .next()
            .ok_or_else(|| Error::WeightManifest("empty manifest".into()))?;
        let header = std::str::from_utf8(header)
            .map_err(|_| Error::WeightManifest("header is not utf-8".into()))?;
        let mut parts = header.split_whitespace();
        let magic = format!(
            "{} {}",
            parts.next().unwrap_or(""),
            parts.next().unwrap_or("")
        );
        if magic != MAGIC {
            return Err(Error::WeightManifest(format!("bad magic `{magic}`")));
        }
        let tensors = parse_kv(parts.next(), "tensors")?;
        let blob_bytes = parse_kv(parts.next(), "blob_bytes")?;
        if blob.len() < blob_bytes {
            return Err(Error::WeightTruncated {
                expected: blob_bytes,
                got: blob.len(),
            });
        }

        let mut store = WeightStore::new();
        let mut expected_offset = 0usize;
        for (_, line) in iter {
            let line = std::str::from_utf8(line)
                .map_err(|_| Error::WeightManifest("manifest line is not utf-8".into()))?;
            let mut cols = line.split_whitespace();
            let name = cols
                .next()
                .ok_or_else(|| Error::WeightManifest(format!("malformed line `{line}`")))?;
            let dims = cols
                .next()
                .ok_or_else(|| Error::WeightManifest(format!("missing dims on `{line}`")))?;
            let offset: usize = cols
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::WeightManifest(format!("bad offset on `{line}`")))?;
            let shape: Vec<usize> = dims
                .split('x')
                .map(|d| {
                    d.parse::<usize>()
                        .map_err(|_| Error::WeightManifest(format!("bad dims `{dims}`")))
                })
                .collect::<Result<_>>()?;
            if offset != expected_offset {
                return Err(Error::WeightManifest(format!(
                    "tensor `{name}` at offset {offset}, expected {expected_offset} (overlap or gap)"
                )));
            }
            let numel: usize = shape.iter().product();
            let end = offset + numel * 4;
            if end > blob_bytes {
                return Err(Error::WeightTruncated {
                    expected: end,
                    got: blob_bytes,
                });
            }
            let mut data = Vec::with_capacity(numel);
            for i in 0..numel {
                let at = offset + i * 4;
                data.push(f32::from_le_bytes([
                    blob[at],
                    blob[at + 1],
                    blob[at + 2],
                    blob[at + 3],
                ]));
            }
            store.insert(name.to_string(), Tensor::from_vec(&shape, data)?)?;
            expected_offset = end;
        }
        if store.len() != tensors {
            return Err(Error::WeightManifest(format!(
                "manifest announces {tensors} tensors, found {}",
                store.len()
            )));
        }
        if expected_offset != blob_bytes {
            return Err(Error::WeightManifest(format!(
                "manifest covers {expected_offset} bytes, header says {blob_bytes}"
            )));
        }
        Ok(store)
    }
}

fn parse_kv(part: Option<&str>, key: &str) -> Result<usize> {
    let part = part.ok_or_else(|| Error::WeightManifest(format!("missing `{key}=`")))?;
    let (k, v) = part
        .split_once('=')
        .ok_or_else(|| Error::WeightManifest(format!("missing `{key}=`")))?;
    if k != key {
        return Err(Error::WeightManifest(format!("expected `{key}=`, got `{k}=`")));
    }
    v.parse()
        .map_err(|_| Error::WeightManifest(format!("bad value for `{key}`")))
}
