//! Parameter containers. Gradients reuse the same structures.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::DecoderConfig;
use crate::error::{Error, Result};
use crate::id_core::IdDictionary;
use crate::real::Real;

fn gaussian<T: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sigma: f64) -> Array2<T> {
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    Array2::from_shape_fn((rows, cols), |_| T::of(n.sample(rng)))
}

/// `y = x · weight + bias` with `weight: in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array2<T>,
}

impl<T: Real> Linear<T> {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: gaussian(rng, fan_in, fan_out, (1.0 / fan_in as f64).sqrt()),
            bias: Array2::zeros((1, fan_out)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Array2<T>,
    pub beta: Array2<T>,
}

impl<T: Real> LayerNorm<T> {
    fn init(width: usize) -> Self {
        Self {
            gamma: Array2::ones((1, width)),
            beta: Array2::zeros((1, width)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
}

impl<T: Real> Attention<T> {
    fn init(rng: &mut ChaCha8Rng, width: usize) -> Self {
        Self {
            q: Linear::init(rng, width, width),
            k: Linear::init(rng, width, width),
            v: Linear::init(rng, width, width),
            o: Linear::init(rng, width, width),
        }
    }
}

/// One decoder block: optional self-attention, cross-attention, feedforward.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer<T> {
    pub self_attn: Option<(LayerNorm<T>, Attention<T>)>,
    pub cross_norm: LayerNorm<T>,
    pub cross_attn: Attention<T>,
    pub ff_norm: LayerNorm<T>,
    pub ff_in: Linear<T>,
    pub ff_out: Linear<T>,
}

/// Classification head, `weight: (K + 1) × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<T> {
    pub weight: Array2<T>,
    pub bias: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights<T> {
    /// Learned offset per time gap, rows `0..=max_rel_offset`.
    pub rel_enc: Array2<T>,
    pub input_proj: Option<Linear<T>>,
    pub layers: Vec<DecoderLayer<T>>,
    pub final_norm: LayerNorm<T>,
    pub head: Head<T>,
}

impl<T: Real> DecoderWeights<T> {
    pub fn init(config: &DecoderConfig, capacity: usize) -> Result<Self> {
        config.validate()?;
        if capacity == 0 {
            return Err(Error::config("K", "must be at least 1"));
        }
        let d = config.model_width();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_dec0de);
        let rel_enc = gaussian(&mut rng, config.max_rel_offset + 1, d, 0.02);
        let input_proj = config
            .input_projection
            .then(|| Linear::init(&mut rng, 2 * config.feature_dim, d));
        let layers = (0..config.num_layers)
            .map(|_| DecoderLayer {
                self_attn: config
                    .self_attention
                    .then(|| (LayerNorm::init(d), Attention::init(&mut rng, d))),
                cross_norm: LayerNorm::init(d),
                cross_attn: Attention::init(&mut rng, d),
                ff_norm: LayerNorm::init(d),
                ff_in: Linear::init(&mut rng, d, config.ff_width()),
                ff_out: Linear::init(&mut rng, config.ff_width(), d),
            })
            .collect();
        Ok(Self {
            rel_enc,
            input_proj,
            layers,
            final_norm: LayerNorm::init(d),
            head: Head {
                weight: gaussian(&mut rng, capacity + 1, d, (1.0 / d as f64).sqrt()),
                bias: Array2::zeros((1, capacity + 1)),
            },
        })
    }
}

/// Everything that trains: ID dictionary plus decoder weights.
#[derive(Debug, Clone, PartialEq)]
pub struct IdModel<T> {
    pub config: DecoderConfig,
    pub dictionary: IdDictionary<T>,
    pub weights: DecoderWeights<T>,
}

macro_rules! visit_linear {
    ($f:expr, $prefix:expr, $lin:expr, $($m:tt)*) => {
        $f(format!("{}.weight", $prefix), & $($m)* $lin.weight);
        $f(format!("{}.bias", $prefix), & $($m)* $lin.bias);
    };
}

macro_rules! visit_norm {
    ($f:expr, $prefix:expr, $n:expr, $($m:tt)*) => {
        $f(format!("{}.gamma", $prefix), & $($m)* $n.gamma);
        $f(format!("{}.beta", $prefix), & $($m)* $n.beta);
    };
}

macro_rules! visit_attn {
    ($f:expr, $prefix:expr, $a:expr, $($m:tt)*) => {
        visit_linear!($f, format!("{}.q", $prefix), $a.q, $($m)*);
        visit_linear!($f, format!("{}.k", $prefix), $a.k, $($m)*);
        visit_linear!($f, format!("{}.v", $prefix), $a.v, $($m)*);
        visit_linear!($f, format!("{}.o", $prefix), $a.o, $($m)*);
    };
}

macro_rules! visit_all {
    ($self:expr, $f:expr, $iter:ident, $($m:tt)*) => {{
        $f("dictionary.words".to_string(), & $($m)* $self.dictionary.words);
        let w = & $($m)* $self.weights;
        $f("rel_enc".to_string(), & $($m)* w.rel_enc);
        if let Some(p) = & $($m)* w.input_proj {
            visit_linear!($f, "input_proj", p, $($m)*);
        }
        for (i, l) in w.layers.$iter().enumerate() {
            if let Some((n, a)) = & $($m)* l.self_attn {
                visit_norm!($f, format!("layers.{i}.self_norm"), n, $($m)*);
                visit_attn!($f, format!("layers.{i}.self_attn"), a, $($m)*);
            }
            visit_norm!($f, format!("layers.{i}.cross_norm"), l.cross_norm, $($m)*);
            visit_attn!($f, format!("layers.{i}.cross_attn"), l.cross_attn, $($m)*);
            visit_norm!($f, format!("layers.{i}.ff_norm"), l.ff_norm, $($m)*);
            visit_linear!($f, format!("layers.{i}.ff_in"), l.ff_in, $($m)*);
            visit_linear!($f, format!("layers.{i}.ff_out"), l.ff_out, $($m)*);
        }
        visit_norm!($f, "final_norm", w.final_norm, $($m)*);
        visit_linear!($f, "head", w.head, $($m)*);
    }};
}

impl<T: Real> IdModel<T> {
    /// Fresh model; the dictionary and decoder draw from independent seeded streams.
    pub fn init(config: &DecoderConfig, capacity: usize) -> Result<Self> {
        let weights = DecoderWeights::init(config, capacity)?;
        let dictionary = IdDictionary::new(capacity, config.feature_dim, config.dict_init_sigma, config.seed)?;
        Ok(Self {
            config: config.clone(),
            dictionary,
            weights,
        })
    }

    pub fn capacity(&self) -> usize {
        self.dictionary.capacity()
    }

    /// All parameters in a fixed order with dotted names.
    pub fn params<'a>(&'a self) -> Vec<(String, &'a Array2<T>)> {
        let mut out = Vec::new();
        let mut f = |name: String, p: &'a Array2<T>| out.push((name, p));
        visit_all!(self, f, iter,);
        out
    }

    pub fn params_mut<'a>(&'a mut self) -> Vec<(String, &'a mut Array2<T>)> {
        let mut out = Vec::new();
        let mut f = |name: String, p: &'a mut Array2<T>| out.push((name, p));
        visit_all!(self, f, iter_mut, mut);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, p) in z.params_mut() {
            p.fill(T::zero());
        }
        z
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    /// `self += alpha * other`; shapes must match.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        for ((_, a), (_, b)) in self.params_mut().into_iter().zip(other.params()) {
            a.scaled_add(alpha, b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for (_, p) in self.params_mut() {
            p.mapv_inplace(|v| v * s);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.params()
            .iter()
            .flat_map(|(_, p)| p.iter())
            .map(|v| v.f64() * v.f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Name of the first parameter holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<String> {
        self.params()
            .into_iter()
            .find(|(_, p)| p.iter().any(|v| !v.is_finite()))
            .map(|(n, _)| n)
    }

    /// Convert every parameter to another precision.
    pub fn cast<U: Real>(&self) -> IdModel<U> {
        let conv = |a: &Array2<T>| a.mapv(|v| U::of(v.f64()));
        let lin = |l: &Linear<T>| Linear {
            weight: conv(&l.weight),
            bias: conv(&l.bias),
        };
        let norm = |n: &LayerNorm<T>| LayerNorm {
            gamma: conv(&n.gamma),
            beta: conv(&n.beta),
        };
        let attn = |a: &Attention<T>| Attention {
            q: lin(&a.q),
            k: lin(&a.k),
            v: lin(&a.v),
            o: lin(&a.o),
        };
        let w = &self.weights;
        IdModel {
            config: self.config.clone(),
            dictionary: IdDictionary {
                words: conv(&self.dictionary.words),
            },
            weights: DecoderWeights {
                rel_enc: conv(&w.rel_enc),
                input_proj: w.input_proj.as_ref().map(lin),
                layers: w
                    .layers
                    .iter()
                    .map(|l| DecoderLayer {
                        self_attn: l.self_attn.as_ref().map(|(n, a)| (norm(n), attn(a))),
                        cross_norm: norm(&l.cross_norm),
                        cross_attn: attn(&l.cross_attn),
                        ff_norm: norm(&l.ff_norm),
                        ff_in: lin(&l.ff_in),
                        ff_out: lin(&l.ff_out),
                    })
                    .collect(),
                final_norm: norm(&w.final_norm),
                head: Head {
                    weight: conv(&w.head.weight),
                    bias: conv(&w.head.bias),
                },
            },
        }
    }
}
