//! MOTChallenge text records: `frame,id,x,y,w,h,conf,-1,-1,-1`.

use std::fmt::Write as _;

use crate::geometry::BBox;

/// One line of a MOTChallenge ground-truth or result file. Frames are 1-based;
/// `id == -1` marks an unlabeled detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotRecord {
    pub frame: u32,
    pub id: i64,
    pub bbox: BBox,
    pub conf: f64,
}

impl MotRecord {
    pub fn to_line(&self) -> String {
        let mut s = String::with_capacity(64);
        let b = &self.bbox;
        // `{}` on floats prints the shortest string that round-trips exactly.
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},-1,-1,-1",
            self.frame, self.id, b.x, b.y, b.w, b.h, self.conf
        );
        s
    }

    /// Parse one line. On failure returns the byte column of the offending field.
    pub fn parse(line: &str) -> Result<MotRecord, (usize, String)> {
        let mut fields = Vec::with_capacity(10);
        let mut col = 0;
        for part in line.split(',') {
            fields.push((col, part.trim()));
            col += part.len() + 1;
        }
        if fields.len() < 7 {
            return Err((0, format!("expected at least 7 fields, found {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64, (usize, String)> {
            let (c, s) = fields[i];
            s.parse::<f64>()
                .map_err(|_| (c, format!("field {} is not a number: {s:?}", i + 1)))
        };
        let (c0, f0) = fields[0];
        let frame = f0
            .parse::<u32>()
            .map_err(|_| (c0, format!("frame is not a positive integer: {f0:?}")))?;
        if frame == 0 {
            return Err((c0, "frames are 1-based".into()));
        }
        let (c1, f1) = fields[1];
        let id = f1
            .parse::<i64>()
            .or_else(|_| f1.parse::<f64>().map(|v| v as i64))
            .map_err(|_| (c1, format!("id is not an integer: {f1:?}")))?;
        Ok(MotRecord {
            frame,
            id,
            bbox: BBox::new(num(2)?, num(3)?, num(4)?, num(5)?),
            conf: num(6)?,
        })
    }
}

/// Render records, one per line, in the given order.
pub fn render(records: &[MotRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

/// Parse a whole file body. Errors carry the byte offset from the start of `text`.
pub fn parse_all(text: &str) -> Result<Vec<MotRecord>, (u64, String)> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let body = line.trim_end_matches(['\n', '\r']);
        if !body.trim().is_empty() && !body.trim_start().starts_with('#') {
            let rec = MotRecord::parse(body).map_err(|(c, m)| (offset + c as u64, m))?;
            out.push(rec);
        }
        offset += line.len() as u64;
    }
    Ok(out)
}
