//! Clip sampling, in-context label assignment, trajectory augmentation and
//! supervision targets.

use std::collections::BTreeMap;

use ndarray::{s, Array2};
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::decoder::{DecodeInput, IdModel};
use crate::error::{Error, Result};
use crate::id_core::{Label, Word};
use crate::real::Real;
use crate::scene::{LabeledDetection, LabeledSequence};

/// `T + 1` frames drawn at a constant interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub frames: Vec<Vec<LabeledDetection>>,
    /// Sequence frame index of each clip frame.
    pub times: Vec<i64>,
    pub interval: usize,
}

impl Clip {
    /// Ground-truth ids present anywhere in the clip, ascending.
    pub fn tracks(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.frames.iter().flatten().filter_map(|d| d.gt_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// One historical token before it is turned into a `2C` tracklet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryToken {
    /// Clip frame index.
    pub frame: usize,
    /// Index of the detection within its frame.
    pub det: usize,
    pub track: u32,
    pub word: Label,
}

/// Draw `window + 1` frames from `seq`. Returns `None` when the sequence is
/// too short even at interval 1; long intervals shrink to fit.
pub fn sample_clip(
    seq: &LabeledSequence,
    window: usize,
    interval_range: (usize, usize),
    rng: &mut ChaCha8Rng,
) -> Option<Clip> {
    let n = seq.num_frames();
    if window == 0 || n < window + 1 {
        return None;
    }
    let drawn = rng.random_range(interval_range.0..=interval_range.1);
    let interval = drawn.min((n - 1) / window).max(1);
    let span = window * interval;
    let start = rng.random_range(0..n - span);
    let times: Vec<i64> = (0..=window).map(|i| (start + i * interval) as i64).collect();
    Some(Clip {
        frames: times.iter().map(|&t| seq.frames[t as usize].clone()).collect(),
        times,
        interval,
    })
}

/// Injective random map from the clip's trajectories into `1..=K`.
pub fn assign_training_labels(clip: &Clip, capacity: usize, rng: &mut ChaCha8Rng) -> Result<BTreeMap<u32, Label>> {
    let tracks = clip.tracks();
    if tracks.len() > capacity {
        return Err(Error::Capacity { capacity });
    }
    let picks = index::sample(rng, capacity, tracks.len());
    Ok(tracks.into_iter().zip(picks.iter().map(|i| i as Label + 1)).collect())
}

/// Ground-truth memory of the first `T` clip frames, ordered by frame.
pub fn build_window(clip: &Clip, labels: &BTreeMap<u32, Label>) -> Vec<MemoryToken> {
    let mut out = Vec::new();
    for (frame, dets) in clip.frames[..clip.frames.len() - 1].iter().enumerate() {
        for (det, d) in dets.iter().enumerate() {
            if let Some(track) = d.gt_id {
                out.push(MemoryToken {
                    frame,
                    det,
                    track,
                    word: labels[&track],
                });
            }
        }
    }
    out
}

/// Drop each historical token independently with probability `lambda_occ`.
pub fn augment_occlusion(window: &mut Vec<MemoryToken>, lambda_occ: f64, rng: &mut ChaCha8Rng) {
    if lambda_occ <= 0.0 {
        return;
    }
    window.retain(|_| !rng.random_bool(lambda_occ.min(1.0)));
}

/// For each frame holding at least two tokens, with probability `lambda_sw`
/// exchange the ID words of one uniformly chosen pair. Returns the number of
/// swaps performed.
pub fn augment_swap(window: &mut [MemoryToken], lambda_sw: f64, rng: &mut ChaCha8Rng) -> usize {
    if lambda_sw <= 0.0 {
        return 0;
    }
    let mut swaps = 0;
    let mut lo = 0;
    while lo < window.len() {
        let frame = window[lo].frame;
        let hi = lo + window[lo..].iter().take_while(|t| t.frame == frame).count();
        if hi - lo >= 2 && rng.random_bool(lambda_sw.min(1.0)) {
            let pair = index::sample(rng, hi - lo, 2);
            let (a, b) = (lo + pair.index(0), lo + pair.index(1));
            let wa = window[a].word;
            window[a].word = window[b].word;
            window[b].word = wa;
            swaps += 1;
        }
        lo = hi;
    }
    swaps
}

/// Logit column each detection of clip frame `t` is supervised towards:
/// `k - 1` for a trajectory with history in `window`, the special column `K`
/// otherwise (or `None` when newborns are not supervised), and `None` for
/// false positives.
pub fn id_targets(
    clip: &Clip,
    t: usize,
    labels: &BTreeMap<u32, Label>,
    window: &[MemoryToken],
    capacity: usize,
    supervise_newborns: bool,
) -> Vec<Option<usize>> {
    clip.frames[t]
        .iter()
        .map(|d| {
            let track = d.gt_id?;
            if window.iter().any(|m| m.track == track && m.frame < t) {
                Some(labels[&track] as usize - 1)
            } else if supervise_newborns {
                Some(capacity)
            } else {
                None
            }
        })
        .collect()
}

/// Decoder input for a whole clip: queries are every detection in frames
/// `1..=T`, memory is `window`. Times are sequence frame indices so gaps match
/// inference. Returns the input and the target of every query row.
pub fn clip_input<T: Real>(
    model: &IdModel<T>,
    clip: &Clip,
    labels: &BTreeMap<u32, Label>,
    window: &[MemoryToken],
    supervise_newborns: bool,
) -> Result<(DecodeInput<T>, Vec<Option<usize>>)> {
    let c = model.config.feature_dim;
    let k = model.capacity();
    let dict = &model.dictionary;
    let special = dict.word(Word::Special);
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut query_times = Vec::new();
    for t in 1..clip.frames.len() {
        targets.extend(id_targets(clip, t, labels, window, k, supervise_newborns));
        for d in &clip.frames[t] {
            rows.push(&d.detection.feature);
            query_times.push(clip.times[t]);
        }
    }
    let mut queries = Array2::zeros((rows.len(), 2 * c));
    for (i, f) in rows.iter().enumerate() {
        if f.len() != c {
            return Err(Error::dim("detection feature", c, f.len()));
        }
        for (dst, &v) in queries.slice_mut(s![i, ..c]).iter_mut().zip(f.iter()) {
            *dst = T::of(v as f64);
        }
        queries.slice_mut(s![i, c..]).assign(&special);
    }
    let mut memory = Array2::zeros((window.len(), 2 * c));
    for (i, m) in window.iter().enumerate() {
        let f = &clip.frames[m.frame][m.det].detection.feature;
        for (dst, &v) in memory.slice_mut(s![i, ..c]).iter_mut().zip(f.iter()) {
            *dst = T::of(v as f64);
        }
        memory.slice_mut(s![i, c..]).assign(&dict.word(Word::Label(m.word)));
    }
    let input = DecodeInput {
        queries,
        query_words: vec![Word::Special; query_times.len()],
        query_times,
        memory,
        memory_times: window.iter().map(|m| clip.times[m.frame]).collect(),
        memory_words: window.iter().map(|m| Word::Label(m.word)).collect(),
    };
    Ok((input, targets))
}
