//! The ID decoder: a pre-norm transformer decoder whose queries are current
//! detections (feature + special word) and whose memory is the trajectory
//! window (feature + ID word, offset by a learned per-gap encoding), followed
//! by a linear `K + 1`-way classification head.

mod engine;
pub mod ops;
mod params;

use ndarray::{Array2, ArrayView1};
use rand_chacha::ChaCha8Rng;

pub use engine::{backward, forward, DecodeInput, Tape};
pub use params::{Attention, DecoderLayer, DecoderWeights, Head, IdModel, LayerNorm, Linear};

use crate::error::{Error, Result};
use crate::id_core::Tracklet;
use crate::kv::KvFile;
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    /// `C`; tokens are `2C` wide.
    pub feature_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    /// Hidden width of the feedforward block; `0` means four times the model width.
    pub ff_width: usize,
    /// Largest distinguishable time gap (`T`); longer gaps share the last row.
    pub max_rel_offset: usize,
    pub self_attention: bool,
    /// Project `2C` tokens down to `C` before the first layer.
    pub input_projection: bool,
    pub dropout: f64,
    pub dict_init_sigma: f64,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            feature_dim: 256,
            num_layers: 6,
            num_heads: 8,
            ff_width: 0,
            max_rel_offset: 29,
            self_attention: true,
            input_projection: false,
            dropout: 0.0,
            dict_init_sigma: 0.02,
            seed: 0,
        }
    }
}

impl DecoderConfig {
    pub fn model_width(&self) -> usize {
        if self.input_projection {
            self.feature_dim
        } else {
            2 * self.feature_dim
        }
    }

    pub fn ff_width(&self) -> usize {
        if self.ff_width == 0 {
            4 * self.model_width()
        } else {
            self.ff_width
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim", "must be positive"));
        }
        if self.num_layers == 0 {
            return Err(Error::config("num_layers", "need at least one layer"));
        }
        if self.num_heads == 0 || self.model_width() % self.num_heads != 0 {
            return Err(Error::config(
                "num_heads",
                format!("model width {} is not divisible by {} heads", self.model_width(), self.num_heads),
            ));
        }
        if self.max_rel_offset == 0 {
            return Err(Error::config("max_rel_offset", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if !(self.dict_init_sigma.is_finite() && self.dict_init_sigma >= 0.0) {
            return Err(Error::config("dict_init_sigma", "must be finite and non-negative"));
        }
        Ok(())
    }

    /// Write every field as `prefix.name = value`.
    pub fn write_kv(&self, kv: &mut KvFile, prefix: &str) {
        let mut put = |k: &str, v: String| kv.set(&format!("{prefix}{k}"), v);
        put("feature_dim", self.feature_dim.to_string());
        put("num_layers", self.num_layers.to_string());
        put("num_heads", self.num_heads.to_string());
        put("ff_width", self.ff_width.to_string());
        put("max_rel_offset", self.max_rel_offset.to_string());
        put("self_attention", self.self_attention.to_string());
        put("input_projection", self.input_projection.to_string());
        put("dropout", self.dropout.to_string());
        put("dict_init_sigma", self.dict_init_sigma.to_string());
        put("seed", self.seed.to_string());
    }

    /// Overwrite fields present as `prefix.name` in `kv`.
    pub fn apply_kv(&mut self, kv: &KvFile, prefix: &str) -> Result<()> {
        let key = |k: &str| format!("{prefix}{k}");
        kv.apply(&key("feature_dim"), &mut self.feature_dim)?;
        kv.apply(&key("num_layers"), &mut self.num_layers)?;
        kv.apply(&key("num_heads"), &mut self.num_heads)?;
        kv.apply(&key("ff_width"), &mut self.ff_width)?;
        kv.apply(&key("max_rel_offset"), &mut self.max_rel_offset)?;
        kv.apply_bool(&key("self_attention"), &mut self.self_attention)?;
        kv.apply_bool(&key("input_projection"), &mut self.input_projection)?;
        kv.apply(&key("dropout"), &mut self.dropout)?;
        kv.apply(&key("dict_init_sigma"), &mut self.dict_init_sigma)?;
        kv.apply(&key("seed"), &mut self.seed)?;
        Ok(())
    }
}

/// Row of the relative-encoding table for a positive time gap, clamped to the
/// last row.
pub fn relative_encoding<T: Real>(delta_t: i64, table: &Array2<T>) -> Result<ArrayView1<'_, T>> {
    if delta_t <= 0 {
        return Err(Error::TemporalOrder(delta_t));
    }
    let row = (delta_t as usize).min(table.nrows() - 1);
    Ok(table.row(row))
}

/// Classify current-frame tracklets at time `t` against historical tracklets.
/// Returns `N × (K + 1)` logits.
pub fn decode<T: Real>(
    model: &IdModel<T>,
    queries: &[Tracklet<T>],
    memory: &[Tracklet<T>],
    t: i64,
) -> Result<Array2<T>> {
    if memory.is_empty() {
        return Err(Error::EmptyMemory);
    }
    let width = 2 * model.config.feature_dim;
    let mut order: Vec<usize> = (0..memory.len()).collect();
    order.sort_by_key(|&i| memory[i].frame);
    let mut mem = Array2::zeros((memory.len(), width));
    for (row, &i) in order.iter().enumerate() {
        let tr = &memory[i];
        if tr.frame >= t {
            return Err(Error::TemporalOrder(t - tr.frame));
        }
        if tr.as_slice().len() != width {
            return Err(Error::dim("memory tracklet", width, tr.as_slice().len()));
        }
        mem.row_mut(row).as_slice_mut().unwrap().copy_from_slice(tr.as_slice());
    }
    let mut q = Array2::zeros((queries.len(), width));
    for (row, tr) in queries.iter().enumerate() {
        if tr.as_slice().len() != width {
            return Err(Error::dim("query tracklet", width, tr.as_slice().len()));
        }
        q.row_mut(row).as_slice_mut().unwrap().copy_from_slice(tr.as_slice());
    }
    let input = DecodeInput {
        queries: q,
        query_times: vec![t; queries.len()],
        query_words: queries.iter().map(|tr| tr.source).collect(),
        memory: mem,
        memory_times: order.iter().map(|&i| memory[i].frame).collect(),
        memory_words: order.iter().map(|&i| memory[i].source).collect(),
    };
    forward(model, &input, None).map(|(logits, _)| logits)
}

/// One batched pass over queries from many frames; each frame only sees
/// strictly earlier memory. Returns logits grouped by query time, in order.
pub fn parallel_training_forward<T: Real>(
    model: &IdModel<T>,
    input: &DecodeInput<T>,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<(Vec<(i64, Array2<T>)>, Array2<T>, Tape<T>)> {
    let (logits, tape) = forward(model, input, dropout)?;
    let mut out: Vec<(i64, Array2<T>)> = Vec::new();
    let mut lo = 0;
    let times = &input.query_times;
    while lo < times.len() {
        let hi = lo + times[lo..].iter().take_while(|&&t| t == times[lo]).count();
        out.push((times[lo], logits.slice(ndarray::s![lo..hi, ..]).to_owned()));
        lo = hi;
    }
    Ok((out, logits, tape))
}

/// Backpropagate `dlogits` and check every gradient is finite.
pub fn gradient<T: Real>(
    model: &IdModel<T>,
    input: &DecodeInput<T>,
    tape: &Tape<T>,
    dlogits: &Array2<T>,
) -> Result<IdModel<T>> {
    let g = backward(model, input, tape, dlogits);
    match g.first_non_finite() {
        Some(name) => Err(Error::Numeric { name }),
        None => Ok(g),
    }
}
