use super::{IdDictionary, Label};
use crate::error::{Error, Result};
use crate::real::Real;

/// Which dictionary row fills the identity half of a tracklet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Word {
    Label(Label),
    Special,
}

/// Object feature concatenated with an ID word: `[feature (C) | word (C)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet<T> {
    data: Vec<T>,
    pub source: Word,
    pub frame: i64,
}

impl<T: Real> Tracklet<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Half width `C`.
    pub fn dim(&self) -> usize {
        self.data.len() / 2
    }

    pub fn feature(&self) -> &[T] {
        &self.data[..self.dim()]
    }

    pub fn word(&self) -> &[T] {
        &self.data[self.dim()..]
    }
}

pub fn form_tracklet<T: Real>(feature: &[T], word: &[T], frame: i64, source: Word) -> Result<Tracklet<T>> {
    if feature.len() != word.len() {
        return Err(Error::dim("tracklet word", feature.len(), word.len()));
    }
    let mut data = Vec::with_capacity(2 * feature.len());
    data.extend_from_slice(feature);
    data.extend_from_slice(word);
    Ok(Tracklet { data, source, frame })
}

/// Current-frame tracklet: the feature paired with the special word.
pub fn attach_special<T: Real>(feature: &[T], dict: &IdDictionary<T>, frame: i64) -> Result<Tracklet<T>> {
    if feature.len() != dict.dim() {
        return Err(Error::dim("feature vs dictionary", dict.dim(), feature.len()));
    }
    let word = dict.word(Word::Special);
    form_tracklet(feature, word.as_slice().expect("standard layout"), frame, Word::Special)
}
