//! Versioned model container.
//!
//! Layout, little-endian:
//!
//! | field        | encoding                                        |
//! |--------------|-------------------------------------------------|
//! | magic        | 8 bytes `IDTCKPT\n`                             |
//! | version      | u32 (currently 1)                               |
//! | float width  | u32, 4 or 8                                     |
//! | header       | u64 length, then `key = value` UTF-8 text       |
//! | tensor count | u32                                             |
//! | tensor       | u32 name length, name, u32 rows, u32 cols, data |
//!
//! The header echoes the decoder configuration (`decoder.*`), the capacity
//! `K`, and whatever the writer adds (training config, step counter).
//! Optimizer moments are stored as extra tensors named `adam.m.<param>` and
//! `adam.v.<param>`.

use std::path::Path;

use ndarray::Array2;

use crate::decoder::{DecoderConfig, IdModel};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::real::Real;

pub const MAGIC: &[u8; 8] = b"IDTCKPT\n";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: IdModel<T>,
    /// Free-form metadata; `decoder.*` and `capacity` are managed here.
    pub meta: KvFile,
    /// First and second Adam moments, when saved for resumption.
    pub moments: Option<(IdModel<T>, IdModel<T>)>,
}

impl<T: Real> Checkpoint<T> {
    pub fn new(model: IdModel<T>) -> Self {
        Self {
            model,
            meta: KvFile::default(),
            moments: None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut header = self.meta.clone();
        header.set("capacity", self.model.capacity().to_string());
        header.set("precision", T::NAME);
        self.model.config.write_kv(&mut header, "decoder.");
        let text = header.render();

        let mut tensors: Vec<(String, &Array2<T>)> = self.model.params();
        if let Some((m, v)) = &self.moments {
            tensors.extend(m.params().into_iter().map(|(n, p)| (format!("adam.m.{n}"), p)));
            tensors.extend(v.params().into_iter().map(|(n, p)| (format!("adam.v.{n}"), p)));
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(T::BYTES as u32).to_le_bytes());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, p) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(p.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(p.ncols() as u32).to_le_bytes());
            for &v in p.iter() {
                v.write_le(&mut out);
            }
        }
        out
    }

    /// Decode a container written at either precision, converting to `T`.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let width = r.u32()? as usize;
        if width != 4 && width != 8 {
            return Err(Error::Checkpoint(format!("unsupported float width {width}")));
        }
        let header_len = r.u64()? as usize;
        let text = std::str::from_utf8(r.take(header_len)?)
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        let mut meta = KvFile::parse(text, Path::new("<checkpoint header>"))?;
        let capacity: usize = meta
            .parsed("capacity")?
            .ok_or_else(|| Error::Checkpoint("header lacks `capacity`".into()))?;
        let mut config = DecoderConfig::default();
        config.apply_kv(&meta, "decoder.")?;
        config.validate()?;
        let mut model = IdModel::<T>::init(&config, capacity)?;
        let mut m = model.zeros_like();
        let mut v = model.zeros_like();
        let mut have_moments = false;

        let count = r.u32()?;
        let mut filled = 0usize;
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(rows * cols * width)?;
            let (target, base) = if let Some(b) = name.strip_prefix("adam.m.") {
                have_moments = true;
                (&mut m, b)
            } else if let Some(b) = name.strip_prefix("adam.v.") {
                have_moments = true;
                (&mut v, b)
            } else {
                filled += 1;
                (&mut model, name.as_str())
            };
            let mut params = target.params_mut();
            let (_, slot) = params
                .iter_mut()
                .find(|(n, _)| n == base)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{name}`")))?;
            if slot.dim() != (rows, cols) {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` is {rows}x{cols}, model expects {}x{}",
                    slot.nrows(),
                    slot.ncols()
                )));
            }
            for (dst, src) in slot.iter_mut().zip(raw.chunks_exact(width)) {
                *dst = match width {
                    4 => T::of(f32::read_le(src) as f64),
                    _ => T::of(f64::read_le(src)),
                };
            }
        }
        if filled != model.params().len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {filled}",
                model.params().len()
            )));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        for key in ["capacity", "precision"] {
            meta.remove(key);
        }
        let decoder_keys: Vec<String> = meta.keys().filter(|k| k.starts_with("decoder.")).map(String::from).collect();
        for k in decoder_keys {
            meta.remove(&k);
        }
        Ok(Self {
            model,
            meta,
            moments: have_moments.then_some((m, v)),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Checkpoint(reason) => Error::Checkpoint(format!("{}: {reason}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
