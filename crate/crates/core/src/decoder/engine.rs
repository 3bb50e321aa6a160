//! Batched decoder forward pass with a recorded tape, and its exact backward.
//!
//! Queries are processed together regardless of their time stamps. Masks are
//! structural: a query at time `t` only reads memory rows with time `< t`, and
//! self-attention only mixes queries sharing a time stamp. Because masked
//! entries are skipped rather than set to a large negative number, batched and
//! per-frame evaluation perform identical arithmetic for each query.

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ops::{self, axpy, dot, gelu, gelu_grad, LnCache};
use super::params::{Attention, IdModel};
use crate::error::{Error, Result};
use crate::id_core::Word;
use crate::real::Real;

/// Decoder input: query tokens and memory tokens (both `2C` wide) with times.
///
/// Rows must be sorted by time. `*_words` record which dictionary row fills
/// each token's identity half so gradients can reach the dictionary.
#[derive(Debug, Clone)]
pub struct DecodeInput<T> {
    pub queries: Array2<T>,
    pub query_times: Vec<i64>,
    pub query_words: Vec<Word>,
    pub memory: Array2<T>,
    pub memory_times: Vec<i64>,
    pub memory_words: Vec<Word>,
}

impl<T: Real> DecodeInput<T> {
    /// Assemble tokens from raw features and dictionary rows.
    pub fn from_features(
        model: &IdModel<T>,
        query_features: &[&[T]],
        query_times: Vec<i64>,
        memory_features: &[&[T]],
        memory_words: Vec<Word>,
        memory_times: Vec<i64>,
    ) -> Result<Self> {
        let c = model.config.feature_dim;
        let dict = &model.dictionary;
        let build = |feats: &[&[T]], words: &[Word]| -> Result<Array2<T>> {
            let mut out = Array2::zeros((feats.len(), 2 * c));
            for (i, (f, w)) in feats.iter().zip(words).enumerate() {
                if f.len() != c {
                    return Err(Error::dim("token feature", c, f.len()));
                }
                out.slice_mut(s![i, ..c]).assign(&ndarray::ArrayView1::from(*f));
                out.slice_mut(s![i, c..]).assign(&dict.word(*w));
            }
            Ok(out)
        };
        let query_words = vec![Word::Special; query_features.len()];
        Ok(Self {
            queries: build(query_features, &query_words)?,
            query_times,
            query_words,
            memory: build(memory_features, &memory_words)?,
            memory_times,
            memory_words,
        })
    }

    /// Refill every token's identity half from `model`'s dictionary.
    pub fn refresh_words(&mut self, model: &IdModel<T>) {
        let c = model.config.feature_dim;
        for (i, w) in self.query_words.iter().enumerate() {
            self.queries.slice_mut(s![i, c..]).assign(&model.dictionary.word(*w));
        }
        for (i, w) in self.memory_words.iter().enumerate() {
            self.memory.slice_mut(s![i, c..]).assign(&model.dictionary.word(*w));
        }
    }

    pub fn validate(&self, token_width: usize) -> Result<()> {
        let (n, m) = (self.queries.nrows(), self.memory.nrows());
        if self.queries.ncols() != token_width {
            return Err(Error::dim("query tokens", token_width, self.queries.ncols()));
        }
        if m > 0 && self.memory.ncols() != token_width {
            return Err(Error::dim("memory tokens", token_width, self.memory.ncols()));
        }
        if self.query_times.len() != n || self.query_words.len() != n {
            return Err(Error::dim("query metadata", n, self.query_times.len().min(self.query_words.len())));
        }
        if self.memory_times.len() != m || self.memory_words.len() != m {
            return Err(Error::dim("memory metadata", m, self.memory_times.len().min(self.memory_words.len())));
        }
        if !self.query_times.windows(2).all(|w| w[0] <= w[1]) {
            return Err(Error::Input("query rows must be sorted by time".into()));
        }
        if !self.memory_times.windows(2).all(|w| w[0] <= w[1]) {
            return Err(Error::Input("memory rows must be sorted by time".into()));
        }
        Ok(())
    }
}

struct Layout {
    /// Memory prefix visible to each query.
    visible: Vec<usize>,
    /// Offset of each query's cross-attention probabilities.
    cross_off: Vec<usize>,
    /// Self-attention group `[lo, hi)` of each query.
    group: Vec<(usize, usize)>,
    self_off: Vec<usize>,
    /// Clamped gap index for each (query, visible memory) pair, flattened like `cross_off`.
    gap: Vec<u32>,
}

impl Layout {
    fn new<T>(input: &DecodeInput<T>, max_gap: usize, heads: usize) -> Self {
        let n = input.query_times.len();
        let mut visible = Vec::with_capacity(n);
        let mut cross_off = Vec::with_capacity(n);
        let mut gap = Vec::new();
        let mut acc = 0;
        for &t in &input.query_times {
            let hi = input.memory_times.partition_point(|&tau| tau < t);
            visible.push(hi);
            cross_off.push(acc * heads);
            acc += hi;
            gap.extend(
                input.memory_times[..hi]
                    .iter()
                    .map(|&tau| ((t - tau) as usize).min(max_gap) as u32),
            );
        }
        let mut group = Vec::with_capacity(n);
        let mut self_off = Vec::with_capacity(n);
        let mut lo = 0;
        let mut acc = 0;
        while lo < n {
            let mut hi = lo;
            while hi < n && input.query_times[hi] == input.query_times[lo] {
                hi += 1;
            }
            for _ in lo..hi {
                group.push((lo, hi));
                self_off.push(acc * heads);
                acc += hi - lo;
            }
            lo = hi;
        }
        Self {
            visible,
            cross_off,
            group,
            self_off,
            gap,
        }
    }

    fn gap_offset(&self, i: usize, heads: usize) -> usize {
        self.cross_off[i] / heads
    }
}

struct SelfCache<T> {
    ln: LnCache<T>,
    h: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<T>,
    ctx: Array2<T>,
    drop: Option<Array2<T>>,
}

struct CrossCache<T> {
    ln: LnCache<T>,
    h: Array2<T>,
    q: Array2<T>,
    mk: Array2<T>,
    mv: Array2<T>,
    rk: Array2<T>,
    rv: Array2<T>,
    probs: Vec<T>,
    ctx: Array2<T>,
    drop: Option<Array2<T>>,
}

struct FfCache<T> {
    ln: LnCache<T>,
    h: Array2<T>,
    pre: Array2<T>,
    act: Array2<T>,
    drop: Option<Array2<T>>,
}

struct LayerCache<T> {
    self_attn: Option<SelfCache<T>>,
    cross: CrossCache<T>,
    ff: FfCache<T>,
}

/// Everything the backward pass needs from one forward pass.
pub struct Tape<T> {
    layout: Layout,
    mem: Array2<T>,
    layers: Vec<LayerCache<T>>,
    final_ln: LnCache<T>,
    final_y: Array2<T>,
}

struct Dropout<'a> {
    rate: f64,
    rng: &'a mut ChaCha8Rng,
}

fn dropout_mask<T: Real>(drop: &mut Option<Dropout<'_>>, shape: (usize, usize)) -> Option<Array2<T>> {
    let d = drop.as_mut()?;
    if d.rate <= 0.0 {
        return None;
    }
    let keep = T::of(1.0 / (1.0 - d.rate));
    Some(Array2::from_shape_fn(shape, |_| {
        if d.rng.random_bool(d.rate) {
            T::zero()
        } else {
            keep
        }
    }))
}

fn apply_mask<T: Real>(x: &mut Array2<T>, mask: &Option<Array2<T>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

/// Run the decoder. `dropout` is `(rate, rng)` during training, `None` otherwise.
pub fn forward<T: Real>(
    model: &IdModel<T>,
    input: &DecodeInput<T>,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<(Array2<T>, Tape<T>)> {
    let cfg = &model.config;
    input.validate(2 * cfg.feature_dim)?;
    let w = &model.weights;
    let heads = cfg.num_heads;
    let d = cfg.model_width();
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let layout = Layout::new(input, cfg.max_rel_offset, heads);
    let mut drop = dropout.map(|(rate, rng)| Dropout { rate, rng });

    let (mut x, mem) = match &w.input_proj {
        Some(p) => (
            ops::linear(&input.queries, p),
            if input.memory.nrows() > 0 {
                ops::linear(&input.memory, p)
            } else {
                Array2::zeros((0, d))
            },
        ),
        None => (
            input.queries.clone(),
            if input.memory.nrows() > 0 {
                input.memory.clone()
            } else {
                Array2::zeros((0, d))
            },
        ),
    };
    let n = x.nrows();
    let mut layers = Vec::with_capacity(w.layers.len());
    for layer in &w.layers {
        let self_cache = match &layer.self_attn {
            Some((norm, attn)) => {
                let (h, ln) = ops::layer_norm(&x, norm);
                let (out, mut c) = self_attention(&h, attn, &layout, heads, scale);
                let mut out = ops::linear(&out, &attn.o);
                let mask = dropout_mask(&mut drop, out.dim());
                apply_mask(&mut out, &mask);
                x += &out;
                c.ln = ln;
                c.h = h;
                c.drop = mask;
                Some(c)
            }
            None => None,
        };

        let (h, ln) = ops::layer_norm(&x, &layer.cross_norm);
        let attn = &layer.cross_attn;
        let q = ops::linear(&h, &attn.q);
        let mk = ops::linear(&mem, &attn.k);
        let mv = ops::linear(&mem, &attn.v);
        let rk = w.rel_enc.dot(&attn.k.weight);
        let rv = w.rel_enc.dot(&attn.v.weight);
        let (ctx, probs) = cross_attention(&q, &mk, &mv, &rk, &rv, &layout, heads, scale);
        let mut out = ops::linear(&ctx, &attn.o);
        let mask = dropout_mask(&mut drop, out.dim());
        apply_mask(&mut out, &mask);
        x += &out;
        let cross = CrossCache {
            ln,
            h,
            q,
            mk,
            mv,
            rk,
            rv,
            probs,
            ctx,
            drop: mask,
        };

        let (h, ln) = ops::layer_norm(&x, &layer.ff_norm);
        let pre = ops::linear(&h, &layer.ff_in);
        let act = pre.mapv(gelu);
        let mut out = ops::linear(&act, &layer.ff_out);
        let mask = dropout_mask(&mut drop, out.dim());
        apply_mask(&mut out, &mask);
        x += &out;
        layers.push(LayerCache {
            self_attn: self_cache,
            cross,
            ff: FfCache {
                ln,
                h,
                pre,
                act,
                drop: mask,
            },
        });
    }
    let (y, final_ln) = ops::layer_norm(&x, &w.final_norm);
    let logits = y.dot(&w.head.weight.t()) + &w.head.bias;
    debug_assert_eq!(logits.nrows(), n);
    Ok((
        logits,
        Tape {
            layout,
            mem,
            layers,
            final_ln,
            final_y: y,
        },
    ))
}

fn self_attention<T: Real>(
    h: &Array2<T>,
    attn: &Attention<T>,
    layout: &Layout,
    heads: usize,
    scale: T,
) -> (Array2<T>, SelfCache<T>) {
    let q = ops::linear(h, &attn.q);
    let k = ops::linear(h, &attn.k);
    let v = ops::linear(h, &attn.v);
    let (n, d) = q.dim();
    let dh = d / heads;
    let total = layout.self_off.last().map_or(0, |&o| o + heads * (layout.group[n - 1].1 - layout.group[n - 1].0));
    let mut probs = vec![T::zero(); total];
    let mut ctx = Array2::zeros((n, d));
    let (qs, ks, vs) = (q.as_slice().unwrap(), k.as_slice().unwrap(), v.as_slice().unwrap());
    {
        let cs = ctx.as_slice_mut().unwrap();
        for i in 0..n {
            let (lo, hi) = layout.group[i];
            let len = hi - lo;
            for hd in 0..heads {
                let qi = &qs[i * d + hd * dh..i * d + (hd + 1) * dh];
                let base = layout.self_off[i] + hd * len;
                let p = &mut probs[base..base + len];
                for (jj, j) in (lo..hi).enumerate() {
                    p[jj] = dot(qi, &ks[j * d + hd * dh..j * d + (hd + 1) * dh]) * scale;
                }
                ops::softmax_in_place(p);
                let out = &mut cs[i * d + hd * dh..i * d + (hd + 1) * dh];
                for (jj, j) in (lo..hi).enumerate() {
                    axpy(p[jj], &vs[j * d + hd * dh..j * d + (hd + 1) * dh], out);
                }
            }
        }
    }
    let cache = SelfCache {
        ln: LnCache {
            xhat: Array2::zeros((0, 0)),
            inv_std: Vec::new(),
        },
        h: Array2::zeros((0, 0)),
        q,
        k,
        v,
        probs,
        ctx: ctx.clone(),
        drop: None,
    };
    (ctx, cache)
}

#[allow(clippy::too_many_arguments)]
fn cross_attention<T: Real>(
    q: &Array2<T>,
    mk: &Array2<T>,
    mv: &Array2<T>,
    rk: &Array2<T>,
    rv: &Array2<T>,
    layout: &Layout,
    heads: usize,
    scale: T,
) -> (Array2<T>, Vec<T>) {
    let (n, d) = q.dim();
    let dh = d / heads;
    let gaps = rk.nrows();
    let total = layout.cross_off.last().map_or(0, |&o| o + heads * layout.visible[n - 1]);
    let mut probs = vec![T::zero(); total];
    let mut ctx = Array2::zeros((n, d));
    let qs = q.as_slice().unwrap();
    let (mks, mvs) = (mk.as_slice().unwrap_or(&[]), mv.as_slice().unwrap_or(&[]));
    let (rks, rvs) = (rk.as_slice().unwrap(), rv.as_slice().unwrap());
    let cs = ctx.as_slice_mut().unwrap();
    let mut qr = vec![T::zero(); gaps];
    let mut mass = vec![T::zero(); gaps];
    for i in 0..n {
        let len = layout.visible[i];
        if len == 0 {
            continue;
        }
        let gap = &layout.gap[layout.gap_offset(i, heads)..layout.gap_offset(i, heads) + len];
        for hd in 0..heads {
            let col = hd * dh..(hd + 1) * dh;
            let qi = &qs[i * d + col.start..i * d + col.end];
            for (g, v) in qr.iter_mut().enumerate() {
                *v = dot(qi, &rks[g * d + col.start..g * d + col.end]);
            }
            let base = layout.cross_off[i] + hd * len;
            let p = &mut probs[base..base + len];
            for j in 0..len {
                p[j] = (dot(qi, &mks[j * d + col.start..j * d + col.end]) + qr[gap[j] as usize]) * scale;
            }
            ops::softmax_in_place(p);
            mass.iter_mut().for_each(|m| *m = T::zero());
            let out = &mut cs[i * d + col.start..i * d + col.end];
            for j in 0..len {
                axpy(p[j], &mvs[j * d + col.start..j * d + col.end], out);
                mass[gap[j] as usize] += p[j];
            }
            for (g, &m) in mass.iter().enumerate() {
                if m != T::zero() {
                    axpy(m, &rvs[g * d + col.start..g * d + col.end], out);
                }
            }
        }
    }
    (ctx, probs)
}

/// Gradients of every parameter given `dlogits = ∂loss/∂logits`.
pub fn backward<T: Real>(
    model: &IdModel<T>,
    input: &DecodeInput<T>,
    tape: &Tape<T>,
    dlogits: &Array2<T>,
) -> IdModel<T> {
    let cfg = &model.config;
    let w = &model.weights;
    let heads = cfg.num_heads;
    let d = cfg.model_width();
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let layout = &tape.layout;
    let mut g = model.zeros_like();

    // head
    ndarray::linalg::general_mat_mul(T::one(), &dlogits.t(), &tape.final_y, T::one(), &mut g.weights.head.weight);
    g.weights.head.bias += &dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dy = dlogits.dot(&w.head.weight);
    let mut dx = ops::layer_norm_backward(&dy, &tape.final_ln, &w.final_norm, &mut g.weights.final_norm);
    let mut dmem = Array2::<T>::zeros(tape.mem.dim());
    let mut drel = Array2::<T>::zeros(w.rel_enc.dim());

    for (li, (layer, cache)) in w.layers.iter().zip(&tape.layers).enumerate().rev() {
        let gl = &mut g.weights.layers[li];

        // feedforward
        let mut dbranch = dx.clone();
        apply_mask(&mut dbranch, &cache.ff.drop);
        let dact = ops::linear_backward(&cache.ff.act, &dbranch, &layer.ff_out, &mut gl.ff_out);
        let mut dpre = dact;
        ndarray::Zip::from(&mut dpre)
            .and(&cache.ff.pre)
            .for_each(|dp, &p| *dp *= gelu_grad(p));
        let dh_ff = ops::linear_backward(&cache.ff.h, &dpre, &layer.ff_in, &mut gl.ff_in);
        dx += &ops::layer_norm_backward(&dh_ff, &cache.ff.ln, &layer.ff_norm, &mut gl.ff_norm);

        // cross-attention
        let c = &cache.cross;
        let attn = &layer.cross_attn;
        let mut dbranch = dx.clone();
        apply_mask(&mut dbranch, &c.drop);
        let dctx = ops::linear_backward(&c.ctx, &dbranch, &attn.o, &mut gl.cross_attn.o);
        let (dq, dmk, dmv, drk, drv) = cross_attention_backward(&dctx, c, layout, heads, dh, scale);
        let dh_cross = ops::linear_backward(&c.h, &dq, &attn.q, &mut gl.cross_attn.q);
        if tape.mem.nrows() > 0 {
            dmem += &ops::linear_backward(&tape.mem, &dmk, &attn.k, &mut gl.cross_attn.k);
            dmem += &ops::linear_backward(&tape.mem, &dmv, &attn.v, &mut gl.cross_attn.v);
        }
        // relative encodings enter the projections without the bias
        ndarray::linalg::general_mat_mul(T::one(), &w.rel_enc.t(), &drk, T::one(), &mut gl.cross_attn.k.weight);
        ndarray::linalg::general_mat_mul(T::one(), &w.rel_enc.t(), &drv, T::one(), &mut gl.cross_attn.v.weight);
        drel += &drk.dot(&attn.k.weight.t());
        drel += &drv.dot(&attn.v.weight.t());
        dx += &ops::layer_norm_backward(&dh_cross, &c.ln, &layer.cross_norm, &mut gl.cross_norm);

        // self-attention
        if let (Some((norm, attn)), Some(sc)) = (&layer.self_attn, &cache.self_attn) {
            let (gnorm, gattn) = gl.self_attn.as_mut().expect("gradient mirrors model");
            let mut dbranch = dx.clone();
            apply_mask(&mut dbranch, &sc.drop);
            let dctx = ops::linear_backward(&sc.ctx, &dbranch, &attn.o, &mut gattn.o);
            let (dq, dk, dv) = self_attention_backward(&dctx, sc, layout, heads, dh, scale);
            let mut dh_self = ops::linear_backward(&sc.h, &dq, &attn.q, &mut gattn.q);
            dh_self += &ops::linear_backward(&sc.h, &dk, &attn.k, &mut gattn.k);
            dh_self += &ops::linear_backward(&sc.h, &dv, &attn.v, &mut gattn.v);
            dx += &ops::layer_norm_backward(&dh_self, &sc.ln, norm, gnorm);
        }
    }
    g.weights.rel_enc += &drel;

    let (dq_tok, dm_tok) = match (&w.input_proj, g.weights.input_proj.as_mut()) {
        (Some(p), Some(gp)) => {
            let dq_tok = ops::linear_backward(&input.queries, &dx, p, gp);
            let dm_tok = if input.memory.nrows() > 0 {
                ops::linear_backward(&input.memory, &dmem, p, gp)
            } else {
                Array2::zeros((0, 2 * cfg.feature_dim))
            };
            (dq_tok, dm_tok)
        }
        _ => (dx, dmem),
    };
    let c = cfg.feature_dim;
    let dict = &model.dictionary;
    for (row, word) in dq_tok.rows().into_iter().zip(&input.query_words) {
        let r = dict.row_of(*word);
        let mut target = g.dictionary.words.row_mut(r);
        target += &row.slice(s![c..]);
    }
    for (row, word) in dm_tok.rows().into_iter().zip(&input.memory_words) {
        let r = dict.row_of(*word);
        let mut target = g.dictionary.words.row_mut(r);
        target += &row.slice(s![c..]);
    }
    g
}

type CrossGrads<T> = (Array2<T>, Array2<T>, Array2<T>, Array2<T>, Array2<T>);

fn cross_attention_backward<T: Real>(
    dctx: &Array2<T>,
    c: &CrossCache<T>,
    layout: &Layout,
    heads: usize,
    dh: usize,
    scale: T,
) -> CrossGrads<T> {
    let (n, d) = c.q.dim();
    let gaps = c.rk.nrows();
    let mut dq = Array2::<T>::zeros((n, d));
    let mut dmk = Array2::<T>::zeros(c.mk.dim());
    let mut dmv = Array2::<T>::zeros(c.mv.dim());
    let mut drk = Array2::<T>::zeros(c.rk.dim());
    let mut drv = Array2::<T>::zeros(c.rv.dim());
    let qs = c.q.as_slice().unwrap();
    let (mks, mvs) = (c.mk.as_slice().unwrap_or(&[]), c.mv.as_slice().unwrap_or(&[]));
    let (rks, rvs) = (c.rk.as_slice().unwrap(), c.rv.as_slice().unwrap());
    let dcs = dctx.as_slice().unwrap();
    let dqs = dq.as_slice_mut().unwrap();
    let dmks = dmk.as_slice_mut().unwrap_or(&mut []);
    let dmvs = dmv.as_slice_mut().unwrap_or(&mut []);
    let drks = drk.as_slice_mut().unwrap();
    let drvs = drv.as_slice_mut().unwrap();
    let mut dov = vec![T::zero(); gaps];
    let mut mass = vec![T::zero(); gaps];
    let mut ds_mass = vec![T::zero(); gaps];
    let mut ds = Vec::new();
    for i in 0..n {
        let len = layout.visible[i];
        if len == 0 {
            continue;
        }
        let goff = layout.gap_offset(i, heads);
        let gap = &layout.gap[goff..goff + len];
        for hd in 0..heads {
            let col = hd * dh..(hd + 1) * dh;
            let qi = &qs[i * d + col.start..i * d + col.end];
            let dout = &dcs[i * d + col.start..i * d + col.end];
            let base = layout.cross_off[i] + hd * len;
            let p = &c.probs[base..base + len];
            for (g, v) in dov.iter_mut().enumerate() {
                *v = dot(dout, &rvs[g * d + col.start..g * d + col.end]);
            }
            mass.iter_mut().for_each(|m| *m = T::zero());
            ds_mass.iter_mut().for_each(|m| *m = T::zero());
            ds.clear();
            let mut weighted = T::zero();
            for j in 0..len {
                let gj = gap[j] as usize;
                let dp = dot(dout, &mvs[j * d + col.start..j * d + col.end]) + dov[gj];
                axpy(p[j], dout, &mut dmvs[j * d + col.start..j * d + col.end]);
                mass[gj] += p[j];
                weighted += p[j] * dp;
                ds.push(dp);
            }
            for (g, &m) in mass.iter().enumerate() {
                if m != T::zero() {
                    axpy(m, dout, &mut drvs[g * d + col.start..g * d + col.end]);
                }
            }
            let dqi = &mut dqs[i * d + col.start..i * d + col.end];
            for j in 0..len {
                let s = p[j] * (ds[j] - weighted) * scale;
                let gj = gap[j] as usize;
                axpy(s, &mks[j * d + col.start..j * d + col.end], dqi);
                axpy(s, qi, &mut dmks[j * d + col.start..j * d + col.end]);
                ds_mass[gj] += s;
            }
            for (g, &m) in ds_mass.iter().enumerate() {
                if m != T::zero() {
                    axpy(m, &rks[g * d + col.start..g * d + col.end], dqi);
                    axpy(m, qi, &mut drks[g * d + col.start..g * d + col.end]);
                }
            }
        }
    }
    (dq, dmk, dmv, drk, drv)
}

fn self_attention_backward<T: Real>(
    dctx: &Array2<T>,
    c: &SelfCache<T>,
    layout: &Layout,
    heads: usize,
    dh: usize,
    scale: T,
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let (n, d) = c.q.dim();
    let mut dq = Array2::<T>::zeros((n, d));
    let mut dk = Array2::<T>::zeros((n, d));
    let mut dv = Array2::<T>::zeros((n, d));
    let (qs, ks, vs) = (c.q.as_slice().unwrap(), c.k.as_slice().unwrap(), c.v.as_slice().unwrap());
    let dcs = dctx.as_slice().unwrap();
    let dqs = dq.as_slice_mut().unwrap();
    let dks = dk.as_slice_mut().unwrap();
    let dvs = dv.as_slice_mut().unwrap();
    let mut dp = Vec::new();
    for i in 0..n {
        let (lo, hi) = layout.group[i];
        let len = hi - lo;
        for hd in 0..heads {
            let col = hd * dh..(hd + 1) * dh;
            let dout = &dcs[i * d + col.start..i * d + col.end];
            let base = layout.self_off[i] + hd * len;
            let p = &c.probs[base..base + len];
            dp.clear();
            let mut weighted = T::zero();
            for (jj, j) in (lo..hi).enumerate() {
                let v = dot(dout, &vs[j * d + col.start..j * d + col.end]);
                axpy(p[jj], dout, &mut dvs[j * d + col.start..j * d + col.end]);
                weighted += p[jj] * v;
                dp.push(v);
            }
            for (jj, j) in (lo..hi).enumerate() {
                let s = p[jj] * (dp[jj] - weighted) * scale;
                axpy(s, &ks[j * d + col.start..j * d + col.end], &mut dqs[i * d + col.start..i * d + col.end]);
                axpy(s, &qs[i * d + col.start..i * d + col.end], &mut dks[j * d + col.start..j * d + col.end]);
            }
        }
    }
    (dq, dk, dv)
}
