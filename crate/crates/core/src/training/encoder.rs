//! Linear embedding encoders trained with the re-id or contrastive objective,
//! for the cosine-similarity baseline trackers.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{contra_objective, reid_objective};
use super::{sample_clip, Objective};
use crate::error::{Error, Result};
use crate::scene::LabeledSequence;

/// `embedding = feature · weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder {
    pub weight: Array2<f64>,
}

impl LinearEncoder {
    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Array2::eye(dim),
        }
    }

    pub fn encode(&self, feature: &[f32]) -> Vec<f64> {
        let x = Array1::from_iter(feature.iter().map(|&v| v as f64));
        x.dot(&self.weight).to_vec()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub objective: Objective,
    pub window: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub seed: u64,
}

/// Plain SGD on one clip per sequence per epoch. The re-id objective uses a
/// corpus-wide class per (sequence, track) with a jointly trained linear head.
pub fn train_encoder(corpus: &[LabeledSequence], config: &EncoderConfig) -> Result<LinearEncoder> {
    let dim = corpus
        .first()
        .map(|s| s.feature_dim)
        .ok_or_else(|| Error::Input("empty corpus".into()))?;
    let mut enc = LinearEncoder::identity(dim);
    let mut class_of = std::collections::BTreeMap::new();
    for (s, seq) in corpus.iter().enumerate() {
        for id in seq.frames.iter().flatten().filter_map(|d| d.gt_id) {
            let next = class_of.len();
            class_of.entry((s, id)).or_insert(next);
        }
    }
    let mut head = Array2::<f64>::zeros((dim, class_of.len().max(1)));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.epochs {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut rng);
        for s in order {
            let Some(clip) = sample_clip(&corpus[s], config.window, (1, 1), &mut rng) else {
                continue;
            };
            let dets: Vec<(usize, u32, &Vec<f32>)> = clip
                .frames
                .iter()
                .enumerate()
                .flat_map(|(t, f)| f.iter().filter_map(move |d| d.gt_id.map(|id| (t, id, &d.detection.feature))))
                .collect();
            if dets.len() < 2 {
                continue;
            }
            let x = Array2::from_shape_fn((dets.len(), dim), |(i, j)| dets[i].2[j] as f64);
            let e = x.dot(&enc.weight);
            let de = match config.objective {
                Objective::ReId => {
                    let classes: Vec<usize> = dets.iter().map(|d| class_of[&(s, d.1)]).collect();
                    let logits = e.dot(&head);
                    let (_, dlogits) = reid_objective(&logits, &classes);
                    let dhead = e.t().dot(&dlogits);
                    let de = dlogits.dot(&head.t());
                    head.scaled_add(-config.learning_rate, &dhead);
                    de
                }
                Objective::Contra => {
                    let ids: Vec<u32> = dets.iter().map(|d| d.1).collect();
                    let frames: Vec<i64> = dets.iter().map(|d| d.0 as i64).collect();
                    contra_objective(&e, &ids, &frames, config.temperature).1
                }
                Objective::IdPred => return Err(Error::config("objective", "encoders train with re_id or contra")),
            };
            enc.weight.scaled_add(-config.learning_rate, &x.t().dot(&de));
        }
    }
    Ok(enc)
}
