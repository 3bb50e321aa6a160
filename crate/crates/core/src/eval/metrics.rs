use std::collections::BTreeMap;

use ndarray::Array2;

use super::hungarian::hungarian;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::mot::MotRecord;

/// Cost for pairs below the IoU threshold; dominates any sum of valid costs.
const INVALID: f64 = 1e6;

/// Per-frame CLEAR matching.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameMatch {
    /// `(prediction id, ground-truth id)`.
    pub pairs: Vec<(i64, i64)>,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Hungarian matching on `1 - IoU` restricted to pairs with IoU ≥ `threshold`.
pub fn match_frame(preds: &[(i64, BBox)], gts: &[(i64, BBox)], threshold: f64) -> FrameMatch {
    let mut cost = Array2::from_elem((preds.len(), gts.len()), INVALID);
    for (i, (_, p)) in preds.iter().enumerate() {
        for (j, (_, g)) in gts.iter().enumerate() {
            let iou = p.iou(g);
            if iou >= threshold {
                cost[(i, j)] = 1.0 - iou;
            }
        }
    }
    let pairs: Vec<(i64, i64)> = hungarian(&cost)
        .expect("costs are finite")
        .into_iter()
        .filter(|&(i, j)| cost[(i, j)] < INVALID)
        .map(|(i, j)| (preds[i].0, gts[j].0))
        .collect();
    FrameMatch {
        false_positives: preds.len() - pairs.len(),
        false_negatives: gts.len() - pairs.len(),
        pairs,
    }
}

/// Counts from which every reported metric derives; sums across sequences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub gt: usize,
    pub predictions: usize,
    pub matches: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub id_switches: usize,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
    /// Ground-truth detections after each track's first appearance.
    pub later_detections: usize,
    /// Of those, the ones carrying the id given at first appearance.
    pub consistent: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.gt += o.gt;
        self.predictions += o.predictions;
        self.matches += o.matches;
        self.false_positives += o.false_positives;
        self.false_negatives += o.false_negatives;
        self.id_switches += o.id_switches;
        self.idtp += o.idtp;
        self.idfp += o.idfp;
        self.idfn += o.idfn;
        self.later_detections += o.later_detections;
        self.consistent += o.consistent;
    }
}

impl Counts {
    pub fn idf1(&self) -> Result<f64> {
        let denom = 2 * self.idtp + self.idfp + self.idfn;
        if self.gt == 0 || denom == 0 {
            return Err(Error::UndefinedMetric("IDF1 needs ground truth".into()));
        }
        Ok(2.0 * self.idtp as f64 / denom as f64)
    }

    pub fn mota(&self) -> Result<f64> {
        if self.gt == 0 {
            return Err(Error::UndefinedMetric("MOTA needs ground truth".into()));
        }
        Ok(1.0 - (self.false_negatives + self.false_positives + self.id_switches) as f64 / self.gt as f64)
    }

    pub fn association_accuracy(&self) -> f64 {
        if self.later_detections == 0 {
            1.0
        } else {
            self.consistent as f64 / self.later_detections as f64
        }
    }
}

fn by_frame(records: &[MotRecord]) -> BTreeMap<u32, Vec<(i64, BBox)>> {
    let mut out: BTreeMap<u32, Vec<(i64, BBox)>> = BTreeMap::new();
    for r in records {
        out.entry(r.frame).or_default().push((r.id, r.bbox));
    }
    out
}

/// Evaluate one sequence. Ground-truth rows with id `-1` (false positives)
/// are ignored.
pub fn evaluate_sequence(gt: &[MotRecord], pred: &[MotRecord], threshold: f64) -> Counts {
    let gt: Vec<MotRecord> = gt.iter().filter(|r| r.id >= 0).cloned().collect();
    let gt_frames = by_frame(&gt);
    let pred_frames = by_frame(pred);
    let frames: Vec<u32> = gt_frames.keys().chain(pred_frames.keys()).copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let empty = Vec::new();
    let mut c = Counts {
        gt: gt.len(),
        predictions: pred.len(),
        ..Default::default()
    };
    let mut last_match: BTreeMap<i64, i64> = BTreeMap::new();
    let mut first_id: BTreeMap<i64, Option<i64>> = BTreeMap::new();
    // Frame-level overlaps between whole tracks for the identity measures.
    let mut overlap: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    for f in frames {
        let g = gt_frames.get(&f).unwrap_or(&empty);
        let p = pred_frames.get(&f).unwrap_or(&empty);
        let m = match_frame(p, g, threshold);
        c.matches += m.pairs.len();
        c.false_positives += m.false_positives;
        c.false_negatives += m.false_negatives;
        let matched: BTreeMap<i64, i64> = m.pairs.iter().map(|&(pi, gi)| (gi, pi)).collect();
        for (&gi, &pi) in &matched {
            if let Some(prev) = last_match.insert(gi, pi) {
                if prev != pi {
                    c.id_switches += 1;
                }
            }
        }
        for (gi, _) in g {
            match first_id.get(gi) {
                None => {
                    first_id.insert(*gi, matched.get(gi).copied());
                }
                Some(first) => {
                    c.later_detections += 1;
                    if first.is_some() && matched.get(gi).copied() == *first {
                        c.consistent += 1;
                    }
                }
            }
        }
        for (pi, pb) in p {
            for (gi, gb) in g {
                if pb.iou(gb) >= threshold {
                    *overlap.entry((*gi, *pi)).or_default() += 1;
                }
            }
        }
    }
    c.idtp = identity_matching(&overlap);
    c.idfp = c.predictions - c.idtp;
    c.idfn = c.gt - c.idtp;
    c
}

/// Largest total overlap over one-to-one track pairings.
fn identity_matching(overlap: &BTreeMap<(i64, i64), usize>) -> usize {
    let mut gts: Vec<i64> = overlap.keys().map(|k| k.0).collect();
    gts.dedup();
    let mut preds: Vec<i64> = overlap.keys().map(|k| k.1).collect();
    preds.sort_unstable();
    preds.dedup();
    if gts.is_empty() {
        return 0;
    }
    let cost = Array2::from_shape_fn((gts.len(), preds.len()), |(i, j)| {
        -(overlap.get(&(gts[i], preds[j])).copied().unwrap_or(0) as f64)
    });
    hungarian(&cost)
        .expect("costs are finite")
        .into_iter()
        .map(|(i, j)| overlap.get(&(gts[i], preds[j])).copied().unwrap_or(0))
        .sum()
}

pub fn idf1(gt: &[MotRecord], pred: &[MotRecord], threshold: f64) -> Result<f64> {
    evaluate_sequence(gt, pred, threshold).idf1()
}

pub fn mota(gt: &[MotRecord], pred: &[MotRecord], threshold: f64) -> Result<f64> {
    evaluate_sequence(gt, pred, threshold).mota()
}

pub fn id_switches(gt: &[MotRecord], pred: &[MotRecord], threshold: f64) -> usize {
    evaluate_sequence(gt, pred, threshold).id_switches
}

pub fn association_accuracy(gt: &[MotRecord], pred: &[MotRecord], threshold: f64) -> f64 {
    evaluate_sequence(gt, pred, threshold).association_accuracy()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceReport {
    pub name: String,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub idf1: f64,
    pub mota: f64,
    pub id_switches: usize,
    pub association_accuracy: f64,
    pub total: Counts,
    pub sequences: Vec<SequenceReport>,
}

impl EvalReport {
    pub fn from_sequences(sequences: Vec<SequenceReport>) -> Result<Self> {
        let mut total = Counts::default();
        for s in &sequences {
            total += s.counts;
        }
        Ok(Self {
            idf1: total.idf1()?,
            mota: total.mota()?,
            id_switches: total.id_switches,
            association_accuracy: total.association_accuracy(),
            total,
            sequences,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "IDF1 {:.4}\nMOTA {:.4}\nIDSW {}\nassociation_accuracy {:.4}\n",
            self.idf1, self.mota, self.id_switches, self.association_accuracy
        );
        for s in &self.sequences {
            let c = &s.counts;
            out.push_str(&format!(
                "{}: IDF1 {} MOTA {} IDSW {} AA {:.4}\n",
                s.name,
                c.idf1().map_or("n/a".to_string(), |v| format!("{v:.4}")),
                c.mota().map_or("n/a".to_string(), |v| format!("{v:.4}")),
                c.id_switches,
                c.association_accuracy()
            ));
        }
        out
    }

    pub const CSV_HEADER: &'static str =
        "sequence,idf1,mota,id_switches,association_accuracy,gt,fp,fn,idtp,idfp,idfn";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        let row = |name: &str, c: &Counts| {
            format!(
                "{name},{},{},{},{},{},{},{},{},{},{}\n",
                c.idf1().unwrap_or(f64::NAN),
                c.mota().unwrap_or(f64::NAN),
                c.id_switches,
                c.association_accuracy(),
                c.gt,
                c.false_positives,
                c.false_negatives,
                c.idtp,
                c.idfp,
                c.idfn
            )
        };
        for s in &self.sequences {
            out.push_str(&row(&s.name, &s.counts));
        }
        out.push_str(&row("all", &self.total));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(frame: u32, id: i64, x: f64) -> MotRecord {
        MotRecord {
            frame,
            id,
            bbox: BBox::new(x, 0.0, 10.0, 10.0),
            conf: 1.0,
        }
    }

    fn two_tracks(swap_from: Option<u32>) -> (Vec<MotRecord>, Vec<MotRecord>) {
        let mut gt = Vec::new();
        let mut pred = Vec::new();
        for f in 1..=4 {
            gt.push(rec(f, 1, 0.0));
            gt.push(rec(f, 2, 100.0));
            let swapped = swap_from.is_some_and(|s| f >= s);
            pred.push(rec(f, if swapped { 20 } else { 10 }, 0.0));
            pred.push(rec(f, if swapped { 10 } else { 20 }, 100.0));
        }
        (gt, pred)
    }

    #[test]
    fn perfect_tracking() {
        let (gt, pred) = two_tracks(None);
        let c = evaluate_sequence(&gt, &pred, 0.5);
        assert_eq!(c.idf1().unwrap(), 1.0);
        assert_eq!(c.mota().unwrap(), 1.0);
        assert_eq!(c.id_switches, 0);
        assert_eq!(c.association_accuracy(), 1.0);
    }

    #[test]
    fn swap_at_frame_three() {
        let (gt, pred) = two_tracks(Some(3));
        let c = evaluate_sequence(&gt, &pred, 0.5);
        assert_eq!(c.id_switches, 2);
        assert!((c.mota().unwrap() - 0.75).abs() < 1e-12);
        assert!((c.idf1().unwrap() - 0.5).abs() < 1e-12);
        // Frames 2..4 of both tracks: only frame 2 keeps the first id.
        assert!((c.association_accuracy() - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn fresh_ids_every_frame() {
        let gt: Vec<MotRecord> = (1..=3).map(|f| rec(f, 1, 0.0)).collect();
        let pred: Vec<MotRecord> = (1..=3).map(|f| rec(f, f as i64, 0.0)).collect();
        assert_eq!(association_accuracy(&gt, &pred, 0.5), 0.0);
    }

    #[test]
    fn frame_matching_edges() {
        let a = vec![(1, BBox::new(0.0, 0.0, 10.0, 10.0)), (2, BBox::new(50.0, 0.0, 10.0, 10.0))];
        let m = match_frame(&a, &a, 0.5);
        assert_eq!((m.pairs.len(), m.false_positives, m.false_negatives), (2, 0, 0));
        let far = vec![(9, BBox::new(500.0, 500.0, 10.0, 10.0))];
        let m = match_frame(&far, &a, 0.5);
        assert_eq!((m.pairs.len(), m.false_positives, m.false_negatives), (0, 1, 2));
    }

    #[test]
    fn zero_ground_truth_is_undefined() {
        assert!(matches!(idf1(&[], &[rec(1, 1, 0.0)], 0.5), Err(Error::UndefinedMetric(_))));
        assert!(matches!(mota(&[], &[], 0.5), Err(Error::UndefinedMetric(_))));
    }
}
