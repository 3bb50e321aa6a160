//! Online tracking: threshold, decode against the trajectory window, assign
//! labels, spawn newborns, update state.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::decoder::{decode, IdModel};
use crate::error::{Error, Result};
use crate::eval::hungarian;
use crate::id_core::{attach_special, form_tracklet, Label, TrackerState, TrajectoryWindow, Word};
use crate::kv::KvFile;
use crate::mot::MotRecord;
use crate::real::Real;
use crate::scene::Detection;

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    pub lambda_det: f64,
    pub lambda_new: f64,
    pub lambda_id: f64,
    pub use_hungarian: bool,
    pub miss_tolerance: usize,
    /// Only currently active labels compete for a detection.
    pub restrict_to_active: bool,
    /// Remove the newborn class from the softmax. When it stays, a detection
    /// whose most likely class is the newborn class is left unassigned.
    pub mask_special: bool,
    /// Apply `lambda_new` to dedup losers too (they become newborns
    /// unconditionally otherwise).
    pub strict_newborns: bool,
    /// Window span `T` in frames.
    pub window: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            lambda_det: 0.3,
            lambda_new: 0.6,
            lambda_id: 0.2,
            use_hungarian: false,
            miss_tolerance: 30,
            restrict_to_active: true,
            mask_special: false,
            strict_newborns: false,
            window: 29,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_det", self.lambda_det),
            ("lambda_new", self.lambda_new),
            ("lambda_id", self.lambda_id),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(name, format!("{v} is not in [0, 1]")));
            }
        }
        if self.window == 0 {
            return Err(Error::config("T", "window must span at least one frame"));
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, kv: &KvFile) -> Result<()> {
        kv.apply("lambda_det", &mut self.lambda_det)?;
        kv.apply("lambda_new", &mut self.lambda_new)?;
        kv.apply("lambda_id", &mut self.lambda_id)?;
        kv.apply_bool("use_hungarian", &mut self.use_hungarian)?;
        kv.apply("miss_tolerance", &mut self.miss_tolerance)?;
        kv.apply_bool("restrict_to_active", &mut self.restrict_to_active)?;
        kv.apply_bool("mask_special", &mut self.mask_special)?;
        kv.apply_bool("strict_newborns", &mut self.strict_newborns)?;
        kv.apply("T", &mut self.window)?;
        Ok(())
    }

    pub fn write_kv(&self, kv: &mut KvFile) {
        kv.set("lambda_det", self.lambda_det.to_string());
        kv.set("lambda_new", self.lambda_new.to_string());
        kv.set("lambda_id", self.lambda_id.to_string());
        kv.set("use_hungarian", self.use_hungarian.to_string());
        kv.set("miss_tolerance", self.miss_tolerance.to_string());
        kv.set("restrict_to_active", self.restrict_to_active.to_string());
        kv.set("mask_special", self.mask_special.to_string());
        kv.set("strict_newborns", self.strict_newborns.to_string());
        kv.set("T", self.window.to_string());
    }
}

/// Outcome for one kept detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assigned {
    /// Index into the frame's detection list.
    pub index: usize,
    pub external_id: u64,
    pub label: Label,
    /// Probability of the chosen label (0 for newborns without a decode).
    pub probability: f64,
    pub newborn: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameAssignment {
    pub entries: Vec<Assigned>,
}

/// Per-detection decision before label acquisition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    Match { label: Label, probability: f64 },
    Newborn,
    Drop,
}

/// Normalised class probabilities per detection over `K + 1` columns, with
/// masked columns at exactly zero.
pub fn masked_probabilities<T: Real>(
    logits: &Array2<T>,
    active: &[Label],
    restrict_to_active: bool,
    mask_special: bool,
) -> Array2<f64> {
    let k = logits.ncols() - 1;
    let mut allowed = vec![!restrict_to_active; k + 1];
    for &l in active {
        allowed[l as usize - 1] = true;
    }
    allowed[k] = !mask_special;
    let mut probs = Array2::zeros(logits.dim());
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row
            .iter()
            .zip(&allowed)
            .filter(|(_, &a)| a)
            .fold(f64::NEG_INFINITY, |m, (v, _)| m.max(v.f64()));
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut z = 0.0;
        for (j, v) in row.iter().enumerate() {
            if allowed[j] {
                let e = (v.f64() - max).exp();
                probs[(i, j)] = e;
                z += e;
            }
        }
        probs.row_mut(i).mapv_inplace(|p| p / z);
    }
    probs
}

/// Greedy or Hungarian label choice plus dedup. `probs` is `N × (K + 1)`
/// from [`masked_probabilities`]; `confidences` are the detections' scores.
pub fn decide(probs: &Array2<f64>, confidences: &[f64], active: &[Label], config: &InferenceConfig) -> Result<Vec<Decision>> {
    let n = probs.nrows();
    let k = probs.ncols() - 1;
    let newborn_or_drop = |c: f64| if c > config.lambda_new { Decision::Newborn } else { Decision::Drop };
    let mut out: Vec<Decision> = confidences.iter().map(|&c| newborn_or_drop(c)).collect();
    if active.is_empty() || n == 0 {
        return Ok(out);
    }
    if config.use_hungarian {
        // Columns: active labels, then one newborn column per detection that
        // only its own row may use.
        let a = active.len();
        let mut cost = Array2::from_elem((n, a + n), 1.0);
        for i in 0..n {
            for (c, &l) in active.iter().enumerate() {
                cost[(i, c)] = 1.0 - probs[(i, l as usize - 1)];
            }
            cost[(i, a + i)] = 1.0 - probs[(i, k)];
        }
        for (i, c) in hungarian(&cost)? {
            if c < a && probs[(i, active[c] as usize - 1)] > config.lambda_id {
                out[i] = Decision::Match {
                    label: active[c],
                    probability: probs[(i, active[c] as usize - 1)],
                };
            }
        }
        return Ok(out);
    }
    let mut claims: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let row = probs.row(i);
        // Lowest index wins ties; the newborn column is last.
        let (best, p) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, &p)| if p > acc.1 { (j, p) } else { acc });
        // An inactive label owns no trajectory to continue.
        let label = best as Label + 1;
        if best < k && p > config.lambda_id && active.contains(&label) {
            out[i] = Decision::Match { label, probability: p };
            claims.entry(label).or_default().push(i);
        }
    }
    for (_, dets) in claims {
        let winner = dets
            .iter()
            .copied()
            .fold(dets[0], |w, i| if confidences[i] > confidences[w] { i } else { w });
        for i in dets.into_iter().filter(|&i| i != winner) {
            out[i] = if config.strict_newborns {
                newborn_or_drop(confidences[i])
            } else {
                Decision::Newborn
            };
        }
    }
    Ok(out)
}

/// Process frame `t`; frames must be fed in increasing order.
pub fn track_frame<T: Real>(
    detections: &[Detection],
    state: &mut TrackerState,
    window: &mut TrajectoryWindow<T>,
    model: &IdModel<T>,
    config: &InferenceConfig,
    t: i64,
) -> Result<FrameAssignment> {
    window.prune(t)?;
    let kept: Vec<usize> = (0..detections.len())
        .filter(|&i| detections[i].confidence > config.lambda_det)
        .collect();
    let features: Vec<Vec<T>> = kept
        .iter()
        .map(|&i| detections[i].feature.iter().map(|&v| T::of(v as f64)).collect())
        .collect();
    let confidences: Vec<f64> = kept.iter().map(|&i| detections[i].confidence).collect();
    let active: Vec<Label> = state.active().iter().copied().collect();

    let mut decisions: Vec<Decision> = confidences
        .iter()
        .map(|&c| if c > config.lambda_new { Decision::Newborn } else { Decision::Drop })
        .collect();
    if !kept.is_empty() && !window.is_empty() {
        let queries = features
            .iter()
            .map(|f| attach_special(f, &model.dictionary, t))
            .collect::<Result<Vec<_>>>()?;
        let memory: Vec<_> = window
            .labels()
            .flat_map(|l| window.tracklets(l).into_iter().flatten().cloned())
            .collect();
        let logits = decode(model, &queries, &memory, t)?;
        let probs = masked_probabilities(&logits, &active, config.restrict_to_active, config.mask_special);
        decisions = decide(&probs, &confidences, &active, config)?;
    }

    let mut entries = Vec::new();
    for (j, d) in decisions.iter().enumerate() {
        let (label, probability, newborn) = match *d {
            Decision::Match { label, probability } => (label, probability, false),
            Decision::Newborn => {
                let (label, _) = state.acquire_label()?;
                window.open(label);
                (label, 0.0, true)
            }
            Decision::Drop => continue,
        };
        state.mark_seen(label, t)?;
        entries.push(Assigned {
            index: kept[j],
            external_id: state.external_id(label).expect("active label has an external id"),
            label,
            probability,
            newborn,
        });
    }

    window.prune(t + 1)?;
    for (e, j) in entries.iter().zip(
        decisions
            .iter()
            .enumerate()
            .filter(|(_, d)| !matches!(d, Decision::Drop))
            .map(|(j, _)| j),
    ) {
        let word = model.dictionary.word(Word::Label(e.label));
        window.push(e.label, form_tracklet(&features[j], word.as_slice().unwrap(), t, Word::Label(e.label))?)?;
    }
    state.expire_stale(window, t);
    Ok(FrameAssignment { entries })
}

/// Tracker state for one sequence.
pub struct Tracker<'m, T> {
    pub model: &'m IdModel<T>,
    pub config: InferenceConfig,
    pub state: TrackerState,
    pub window: TrajectoryWindow<T>,
    next_frame: i64,
}

impl<'m, T: Real> Tracker<'m, T> {
    pub fn new(model: &'m IdModel<T>, config: InferenceConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            state: TrackerState::new(model.capacity(), config.miss_tolerance),
            window: TrajectoryWindow::new(config.window),
            model,
            config,
            next_frame: 0,
        })
    }

    pub fn step(&mut self, detections: &[Detection]) -> Result<FrameAssignment> {
        let t = self.next_frame;
        self.next_frame += 1;
        track_frame(detections, &mut self.state, &mut self.window, self.model, &self.config, t)
    }
}

/// Track every frame and return MOT records sorted by `(frame, id)`.
pub fn run_sequence<T: Real>(
    frames: &[Vec<Detection>],
    model: &IdModel<T>,
    config: &InferenceConfig,
) -> Result<Vec<MotRecord>> {
    let c = model.config.feature_dim;
    if let Some(d) = frames.iter().flatten().find(|d| d.feature.len() != c) {
        return Err(Error::Checkpoint(format!(
            "model expects {c}-dimensional features, sequence has {}",
            d.feature.len()
        )));
    }
    let mut tracker = Tracker::new(model, config.clone())?;
    let mut out = Vec::new();
    for (t, dets) in frames.iter().enumerate() {
        let mut rows: Vec<MotRecord> = tracker
            .step(dets)?
            .entries
            .iter()
            .map(|a| MotRecord {
                frame: t as u32 + 1,
                id: a.external_id as i64,
                bbox: dets[a.index].bbox,
                conf: dets[a.index].confidence,
            })
            .collect();
        rows.sort_by_key(|r| r.id);
        out.extend(rows);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::DecoderConfig;
    use crate::geometry::BBox;
    use ndarray::array;

    fn det(conf: f64, f: f32) -> Detection {
        Detection {
            bbox: BBox::new(0.0, 0.0, 10.0, 10.0),
            confidence: conf,
            feature: vec![f; 4],
        }
    }

    fn model() -> IdModel<f64> {
        let cfg = DecoderConfig {
            feature_dim: 4,
            num_layers: 1,
            num_heads: 2,
            max_rel_offset: 3,
            ..DecoderConfig::default()
        };
        IdModel::init(&cfg, 6).unwrap()
    }

    #[test]
    fn reference_thresholds_are_default() {
        let c = InferenceConfig::default();
        assert_eq!((c.lambda_det, c.lambda_new, c.lambda_id), (0.3, 0.6, 0.2));
    }

    #[test]
    fn first_frame_spawns_confident_detections() {
        let m = model();
        let mut tr = Tracker::new(&m, InferenceConfig::default()).unwrap();
        let out = tr.step(&[det(0.9, 1.0), det(0.7, 2.0), det(0.4, 3.0)]).unwrap();
        let ids: Vec<(usize, u64, bool)> = out.entries.iter().map(|a| (a.index, a.external_id, a.newborn)).collect();
        assert_eq!(ids, vec![(0, 1, true), (1, 2, true)]);
    }

    #[test]
    fn dedup_keeps_most_confident() {
        let probs = array![
            [0.0, 0.0, 0.0, 0.9, 0.1],
            [0.0, 0.0, 0.0, 0.8, 0.2]
        ];
        let cfg = InferenceConfig::default();
        let d = decide(&probs, &[0.95, 0.85], &[4], &cfg).unwrap();
        assert_eq!(d[0], Decision::Match { label: 4, probability: 0.9 });
        assert_eq!(d[1], Decision::Newborn);
        let strict = InferenceConfig {
            strict_newborns: true,
            lambda_new: 0.9,
            ..cfg
        };
        assert_eq!(decide(&probs, &[0.95, 0.85], &[4], &strict).unwrap()[1], Decision::Drop);
    }

    #[test]
    fn unrestricted_argmax_on_inactive_label_is_not_a_match() {
        let probs = array![[0.1, 0.7, 0.2]];
        let cfg = InferenceConfig {
            restrict_to_active: false,
            ..InferenceConfig::default()
        };
        assert_eq!(decide(&probs, &[0.9], &[1], &cfg).unwrap()[0], Decision::Newborn);
        assert_eq!(decide(&probs, &[0.5], &[1], &cfg).unwrap()[0], Decision::Drop);
    }

    #[test]
    fn hungarian_beats_greedy_on_crafted_matrix() {
        // Columns: labels 1, 2, then the newborn class.
        let probs = array![[0.9, 0.8, 0.0], [0.85, 0.1, 0.0]];
        let cfg = InferenceConfig {
            use_hungarian: true,
            ..InferenceConfig::default()
        };
        let d = decide(&probs, &[0.9, 0.9], &[1, 2], &cfg).unwrap();
        assert_eq!(d[0], Decision::Match { label: 2, probability: 0.8 });
        assert_eq!(d[1], Decision::Match { label: 1, probability: 0.85 });
        let greedy = decide(&probs, &[0.9, 0.8], &[1, 2], &InferenceConfig::default()).unwrap();
        assert_eq!(greedy[0], Decision::Match { label: 1, probability: 0.9 });
        assert_eq!(greedy[1], Decision::Newborn);
    }

    #[test]
    fn newborn_class_win_leaves_detection_unassigned() {
        let probs = array![[0.3, 0.7], [0.3, 0.7]];
        let d = decide(&probs, &[0.9, 0.5], &[1], &InferenceConfig::default()).unwrap();
        assert_eq!(d, vec![Decision::Newborn, Decision::Drop]);
    }

    #[test]
    fn masking_renormalises_over_allowed_columns() {
        let logits = array![[1.0, 2.0, 3.0, 0.5]];
        let p = masked_probabilities(&logits, &[1, 3], true, true);
        assert_eq!(p[(0, 1)], 0.0);
        assert_eq!(p[(0, 3)], 0.0);
        assert!((p[(0, 0)] + p[(0, 2)] - 1.0).abs() < 1e-12);
        let all = masked_probabilities(&logits, &[], false, false);
        assert!((all.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn raising_det_threshold_never_keeps_more() {
        let m = model();
        let frame: Vec<Detection> = (0..5).map(|i| det(i as f64 / 5.0, i as f32)).collect();
        let mut prev = usize::MAX;
        for th in [0.0, 0.2, 0.4, 0.6, 0.8] {
            let cfg = InferenceConfig {
                lambda_det: th,
                lambda_new: 0.0,
                ..InferenceConfig::default()
            };
            let n = Tracker::new(&m, cfg).unwrap().step(&frame).unwrap().entries.len();
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn empty_sequence_gives_no_records() {
        assert!(run_sequence::<f64>(&[], &model(), &InferenceConfig::default()).unwrap().is_empty());
    }
}
