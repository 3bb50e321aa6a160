use std::collections::{BTreeMap, VecDeque};

use ndarray::Array2;

use super::{Label, Tracklet, Word};
use crate::error::{Error, Result};
use crate::real::Real;

/// Tracklets of every live label over the last `span` frames.
///
/// At time `t` the window holds frames `t - span ..= t - 1`; observations for
/// frame `t` are pushed after the window advances to `t + 1`.
#[derive(Debug, Clone)]
pub struct TrajectoryWindow<T> {
    span: i64,
    now: i64,
    tracks: BTreeMap<Label, VecDeque<Tracklet<T>>>,
}

/// Window contents flattened into decoder memory, ordered by frame then label.
#[derive(Debug, Clone)]
pub struct Memory<T> {
    pub tokens: Array2<T>,
    pub times: Vec<i64>,
    pub words: Vec<Word>,
}

impl<T: Real> TrajectoryWindow<T> {
    pub fn new(span: usize) -> Self {
        Self {
            span: span as i64,
            now: 0,
            tracks: BTreeMap::new(),
        }
    }

    pub fn span(&self) -> usize {
        self.span as usize
    }

    pub fn now(&self) -> i64 {
        self.now
    }

    pub fn open(&mut self, label: Label) {
        self.tracks.entry(label).or_default();
    }

    /// Forget a label and its tracklets.
    pub fn close(&mut self, label: Label) {
        self.tracks.remove(&label);
    }

    pub fn contains(&self, label: Label) -> bool {
        self.tracks.contains_key(&label)
    }

    pub fn push(&mut self, label: Label, tracklet: Tracklet<T>) -> Result<()> {
        if tracklet.frame != self.now - 1 {
            return Err(Error::State(format!(
                "tracklet for frame {} pushed at time {} (expected frame {})",
                tracklet.frame,
                self.now,
                self.now - 1
            )));
        }
        let list = self
            .tracks
            .get_mut(&label)
            .ok_or_else(|| Error::State(format!("push to unknown label {label}")))?;
        if list.back().is_some_and(|last| last.frame >= tracklet.frame) {
            return Err(Error::State(format!(
                "label {label} already has a tracklet at frame {}",
                tracklet.frame
            )));
        }
        list.push_back(tracklet);
        Ok(())
    }

    /// Advance to time `t` and drop everything older than `t - span`.
    pub fn prune(&mut self, t: i64) -> Result<()> {
        if t < self.now {
            return Err(Error::State(format!("window cannot move back from {} to {t}", self.now)));
        }
        self.now = t;
        let oldest = t - self.span;
        for list in self.tracks.values_mut() {
            while list.front().is_some_and(|tr| tr.frame < oldest) {
                list.pop_front();
            }
        }
        Ok(())
    }

    pub fn tracklets(&self, label: Label) -> Option<&VecDeque<Tracklet<T>>> {
        self.tracks.get(&label)
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        self.tracks.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.tracks.values().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn memory(&self) -> Memory<T> {
        let mut items: Vec<(i64, Label, &Tracklet<T>)> = self
            .tracks
            .iter()
            .flat_map(|(&l, list)| list.iter().map(move |tr| (tr.frame, l, tr)))
            .collect();
        items.sort_by_key(|&(f, l, _)| (f, l));
        let width = items.first().map_or(0, |(_, _, tr)| tr.as_slice().len());
        let mut tokens = Array2::zeros((items.len(), width));
        for (mut row, (_, _, tr)) in tokens.rows_mut().into_iter().zip(&items) {
            row.as_slice_mut().unwrap().copy_from_slice(tr.as_slice());
        }
        Memory {
            tokens,
            times: items.iter().map(|(f, _, _)| *f).collect(),
            words: items.iter().map(|(_, _, tr)| tr.source).collect(),
        }
    }
}
