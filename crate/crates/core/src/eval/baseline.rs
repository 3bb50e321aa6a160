//! Appearance-only tracker: cosine similarity between a detection embedding
//! and the mean embedding of each trajectory over the last `T` frames.

use std::collections::{BTreeMap, VecDeque};

use ndarray::Array2;

use super::hungarian::hungarian;
use crate::error::{Error, Result};
use crate::mot::MotRecord;
use crate::scene::Detection;

#[derive(Debug, Clone, PartialEq)]
pub struct ReidConfig {
    pub similarity_threshold: f64,
    pub window: usize,
    pub use_hungarian: bool,
    pub lambda_det: f64,
    pub lambda_new: f64,
    pub miss_tolerance: usize,
}

impl Default for ReidConfig {
    fn default() -> Self {
        Self {
            similarity_threshold: 0.1,
            window: 29,
            use_hungarian: true,
            lambda_det: 0.3,
            lambda_new: 0.6,
            miss_tolerance: 30,
        }
    }
}

struct Trajectory {
    id: u64,
    last_seen: i64,
    /// `(frame, unit embedding)`.
    bank: VecDeque<(i64, Vec<f64>)>,
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v
    } else {
        v.into_iter().map(|x| x / n).collect()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Pairs `(detection, trajectory)` with similarity above `threshold`.
/// Greedy takes the most similar free pair repeatedly; ties go to lower
/// indices.
pub fn assign_by_similarity(sim: &Array2<f64>, threshold: f64, use_hungarian: bool) -> Result<Vec<(usize, usize)>> {
    if use_hungarian {
        let cost = sim.mapv(|s| 1.0 - s);
        return Ok(hungarian(&cost)?.into_iter().filter(|&(i, j)| sim[(i, j)] > threshold).collect());
    }
    let mut cells: Vec<(usize, usize)> = (0..sim.nrows())
        .flat_map(|i| (0..sim.ncols()).map(move |j| (i, j)))
        .filter(|&(i, j)| sim[(i, j)] > threshold)
        .collect();
    cells.sort_by(|a, b| sim[*b].total_cmp(&sim[*a]).then(a.cmp(b)));
    let mut used_r = vec![false; sim.nrows()];
    let mut used_c = vec![false; sim.ncols()];
    let mut out = Vec::new();
    for (i, j) in cells {
        if !used_r[i] && !used_c[j] {
            used_r[i] = true;
            used_c[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Track a sequence with embeddings from `encode`.
pub fn reid_baseline_tracker(
    frames: &[Vec<Detection>],
    encode: &dyn Fn(&[f32]) -> Vec<f64>,
    config: &ReidConfig,
) -> Result<Vec<MotRecord>> {
    if config.window == 0 {
        return Err(Error::config("T", "window must span at least one frame"));
    }
    let mut tracks: Vec<Trajectory> = Vec::new();
    let mut next_id = 1u64;
    let mut out = Vec::new();
    for (t, dets) in frames.iter().enumerate() {
        let t = t as i64;
        for tr in &mut tracks {
            while tr.bank.front().is_some_and(|(f, _)| *f < t - config.window as i64) {
                tr.bank.pop_front();
            }
        }
        tracks.retain(|tr| !tr.bank.is_empty() && t - tr.last_seen <= config.miss_tolerance as i64);
        let kept: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].confidence > config.lambda_det).collect();
        let emb: Vec<Vec<f64>> = kept.iter().map(|&i| unit(encode(&dets[i].feature))).collect();
        let means: Vec<Vec<f64>> = tracks
            .iter()
            .map(|tr| {
                let mut m = vec![0.0; tr.bank[0].1.len()];
                for (_, e) in &tr.bank {
                    for (a, b) in m.iter_mut().zip(e) {
                        *a += b;
                    }
                }
                m
            })
            .collect();
        let sim = Array2::from_shape_fn((emb.len(), means.len()), |(i, j)| cosine(&emb[i], &means[j]));
        let pairs = assign_by_similarity(&sim, config.similarity_threshold, config.use_hungarian)?;
        let mut owner: Vec<Option<usize>> = vec![None; kept.len()];
        for (i, j) in pairs {
            owner[i] = Some(j);
        }
        let mut rows = Vec::new();
        for (i, &d) in kept.iter().enumerate() {
            let j = match owner[i] {
                Some(j) => j,
                None if dets[d].confidence > config.lambda_new => {
                    tracks.push(Trajectory {
                        id: next_id,
                        last_seen: t,
                        bank: VecDeque::new(),
                    });
                    next_id += 1;
                    tracks.len() - 1
                }
                None => continue,
            };
            let tr = &mut tracks[j];
            tr.last_seen = t;
            tr.bank.push_back((t, emb[i].clone()));
            rows.push(MotRecord {
                frame: t as u32 + 1,
                id: tr.id as i64,
                bbox: dets[d].bbox,
                conf: dets[d].confidence,
            });
        }
        rows.sort_by_key(|r| r.id);
        out.extend(rows);
    }
    Ok(out)
}

/// Frames covered by each output id.
pub fn ids_by_track(records: &[MotRecord]) -> BTreeMap<i64, Vec<u32>> {
    let mut m: BTreeMap<i64, Vec<u32>> = BTreeMap::new();
    for r in records {
        m.entry(r.id).or_default().push(r.frame);
    }
    m
}
