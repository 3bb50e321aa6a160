//! On-disk corpus layout.
//!
//! A corpus directory holds `corpus.ini` (sequence names, lengths and feature
//! width) and, per sequence, a MOTChallenge text file `<name>.txt` plus a
//! binary feature sidecar `<name>.feat` whose rows follow the text lines.
//!
//! Sidecar layout, little-endian:
//!
//! | offset | size | field                       |
//! |--------|------|-----------------------------|
//! | 0      | 4    | magic `IDTF`                |
//! | 4      | 4    | version (u32, currently 1)  |
//! | 8      | 4    | feature_dim (u32)           |
//! | 12     | 8    | count (u64)                 |
//! | 20     | ...  | count × feature_dim f32     |

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::mot::{self, MotRecord};
use crate::scene::{Detection, LabeledDetection, LabeledSequence};

pub const FEATURE_MAGIC: &[u8; 4] = b"IDTF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;
pub const INDEX_FILE: &str = "corpus.ini";

pub fn sequence_name(index: usize) -> String {
    format!("seq{index:04}")
}

pub fn encode_features(feature_dim: usize, rows: &[&[f32]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + rows.len() * feature_dim * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(feature_dim as u32).to_le_bytes());
    out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
    for row in rows {
        debug_assert_eq!(row.len(), feature_dim);
        for v in *row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decode a sidecar. Returns `(feature_dim, rows)`.
pub fn decode_features(path: &Path, bytes: &[u8]) -> Result<(usize, Vec<Vec<f32>>)> {
    let fail = |offset: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(fail(0, "bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| fail(12, "count overflows".into()))?;
    if bytes.len() != expected {
        return Err(fail(
            bytes.len().min(expected),
            format!("payload length {} does not match header ({expected})", bytes.len()),
        ));
    }
    let rows = bytes[HEADER_LEN..]
        .chunks_exact(4 * dim.max(1))
        .take(count)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect::<Vec<Vec<f32>>>();
    let rows = if dim == 0 { vec![Vec::new(); count] } else { rows };
    Ok((dim, rows))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write one sequence as `<dir>/<name>.txt` + `<dir>/<name>.feat`.
pub fn write_sequence(dir: &Path, name: &str, seq: &LabeledSequence) -> Result<Vec<PathBuf>> {
    let mut records = Vec::with_capacity(seq.num_detections());
    let mut rows: Vec<&[f32]> = Vec::with_capacity(seq.num_detections());
    for (t, frame) in seq.frames.iter().enumerate() {
        for d in frame {
            if d.detection.feature.len() != seq.feature_dim {
                return Err(Error::dim(
                    format!("feature of {name} frame {t}"),
                    seq.feature_dim,
                    d.detection.feature.len(),
                ));
            }
            records.push(MotRecord {
                frame: t as u32 + 1,
                id: d.gt_id.map_or(-1, i64::from),
                bbox: d.detection.bbox,
                conf: d.detection.confidence,
            });
            rows.push(&d.detection.feature);
        }
    }
    let txt = dir.join(format!("{name}.txt"));
    let feat = dir.join(format!("{name}.feat"));
    write_bytes(&txt, mot::render(&records).as_bytes())?;
    write_bytes(&feat, &encode_features(seq.feature_dim, &rows))?;
    Ok(vec![txt, feat])
}

pub fn read_sequence(
    dir: &Path,
    name: &str,
    num_frames: usize,
    feature_dim: usize,
) -> Result<LabeledSequence> {
    let txt = dir.join(format!("{name}.txt"));
    let feat = dir.join(format!("{name}.feat"));
    let text = String::from_utf8(read_bytes(&txt)?).map_err(|e| Error::Format {
        path: txt.clone(),
        offset: e.utf8_error().valid_up_to() as u64,
        reason: "not UTF-8".into(),
    })?;
    let records = mot::parse_all(&text).map_err(|(offset, reason)| Error::Format {
        path: txt.clone(),
        offset,
        reason,
    })?;
    let (dim, features) = decode_features(&feat, &read_bytes(&feat)?)?;
    if dim != feature_dim {
        return Err(Error::Format {
            path: feat,
            offset: 8,
            reason: format!("feature_dim {dim} does not match corpus index ({feature_dim})"),
        });
    }
    if features.len() != records.len() {
        return Err(Error::Format {
            path: feat,
            offset: 12,
            reason: format!(
                "count {} does not match {} text records",
                features.len(),
                records.len()
            ),
        });
    }
    let mut frames = vec![Vec::new(); num_frames];
    for (rec, feature) in records.into_iter().zip(features) {
        let t = rec.frame as usize - 1;
        if t >= num_frames {
            return Err(Error::Format {
                path: txt.clone(),
                offset: 0,
                reason: format!("frame {} beyond sequence length {num_frames}", rec.frame),
            });
        }
        let gt_id = match rec.id {
            -1 => None,
            id if id >= 1 && id <= u32::MAX as i64 => Some(id as u32),
            id => {
                return Err(Error::Format {
                    path: txt.clone(),
                    offset: 0,
                    reason: format!("invalid track id {id}"),
                })
            }
        };
        frames[t].push(LabeledDetection {
            detection: Detection {
                bbox: rec.bbox,
                confidence: rec.conf,
                feature,
            },
            gt_id,
        });
    }
    Ok(LabeledSequence {
        feature_dim,
        frames,
    })
}

/// Write a corpus into `dir` (created if missing). Returns every file written.
pub fn write_dataset(seqs: &[LabeledSequence], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let feature_dim = seqs.first().map_or(0, |s| s.feature_dim);
    let mut index = KvFile::default();
    index.set("count", seqs.len().to_string());
    index.set("feature_dim", feature_dim.to_string());
    let mut written = Vec::new();
    for (i, seq) in seqs.iter().enumerate() {
        if seq.feature_dim != feature_dim {
            return Err(Error::dim("corpus feature_dim", feature_dim, seq.feature_dim));
        }
        let name = sequence_name(i);
        written.extend(write_sequence(dir, &name, seq)?);
        index.set(&name, seq.num_frames().to_string());
    }
    let index_path = dir.join(INDEX_FILE);
    write_bytes(&index_path, index.render().as_bytes())?;
    written.insert(0, index_path);
    Ok(written)
}

/// Sequence names and lengths listed in a corpus index, in order.
pub fn read_index(dir: &Path) -> Result<(usize, Vec<(String, usize)>)> {
    let path = dir.join(INDEX_FILE);
    let kv = KvFile::load(&path)?;
    let field = |key: &str| -> Result<usize> {
        kv.get(key)
            .ok_or_else(|| Error::Format {
                path: path.clone(),
                offset: 0,
                reason: format!("missing `{key}`"),
            })?
            .parse()
            .map_err(|_| Error::Format {
                path: path.clone(),
                offset: 0,
                reason: format!("`{key}` is not a count"),
            })
    };
    let count = field("count")?;
    let dim = field("feature_dim")?;
    let seqs = (0..count)
        .map(|i| {
            let name = sequence_name(i);
            field(&name).map(|n| (name, n))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((dim, seqs))
}

pub fn read_dataset(dir: &Path) -> Result<Vec<LabeledSequence>> {
    let (dim, seqs) = read_index(dir)?;
    seqs.iter()
        .map(|(name, n)| read_sequence(dir, name, *n, dim))
        .collect()
}
