//! Synthetic multi-object sequences with identity-bearing appearance features.
//!
//! Every object carries a unit-norm identity latent; each visible frame emits
//! one detection whose feature is the latent plus isotropic gaussian noise.
//! Objects move with a perturbed constant-velocity model that reflects at the
//! arena walls, get occluded for random spans, and are born and die at
//! configurable per-frame rates. False positives carry random unit features.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::kv::KvFile;
use crate::par::{self, ExecMode};

const LATENT_RETRIES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub num_frames: usize,
    pub max_objects: usize,
    pub feature_dim: usize,
    pub appearance_noise_sigma: f64,
    pub identity_min_separation: f64,
    pub occlusion_prob_per_frame: f64,
    pub occlusion_duration_range: (usize, usize),
    pub birth_prob_per_frame: f64,
    pub death_prob_per_frame: f64,
    pub false_positive_rate: f64,
    pub confidence_range: (f64, f64),
    pub arena_size: (f64, f64),
    pub velocity_sigma: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_frames: 60,
            max_objects: 8,
            feature_dim: 32,
            appearance_noise_sigma: 0.1,
            identity_min_separation: 0.5,
            occlusion_prob_per_frame: 0.05,
            occlusion_duration_range: (2, 6),
            birth_prob_per_frame: 0.05,
            death_prob_per_frame: 0.01,
            false_positive_rate: 0.0,
            confidence_range: (0.7, 1.0),
            arena_size: (1920.0, 1080.0),
            velocity_sigma: 1.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn apply_kv(&mut self, kv: &KvFile) -> Result<()> {
        kv.apply("num_frames", &mut self.num_frames)?;
        kv.apply("max_objects", &mut self.max_objects)?;
        kv.apply("feature_dim", &mut self.feature_dim)?;
        kv.apply("appearance_noise_sigma", &mut self.appearance_noise_sigma)?;
        kv.apply("identity_min_separation", &mut self.identity_min_separation)?;
        kv.apply("occlusion_prob_per_frame", &mut self.occlusion_prob_per_frame)?;
        kv.apply_pair("occlusion_duration_range", &mut self.occlusion_duration_range)?;
        kv.apply("birth_prob_per_frame", &mut self.birth_prob_per_frame)?;
        kv.apply("death_prob_per_frame", &mut self.death_prob_per_frame)?;
        kv.apply("false_positive_rate", &mut self.false_positive_rate)?;
        kv.apply_pair("confidence_range", &mut self.confidence_range)?;
        kv.apply_pair("arena_size", &mut self.arena_size)?;
        kv.apply("velocity_sigma", &mut self.velocity_sigma)?;
        kv.apply("seed", &mut self.seed)?;
        Ok(())
    }

    pub fn write_kv(&self, kv: &mut KvFile) {
        let pair = |a: String, b: String| format!("[{a}, {b}]");
        kv.set("num_frames", self.num_frames.to_string());
        kv.set("max_objects", self.max_objects.to_string());
        kv.set("feature_dim", self.feature_dim.to_string());
        kv.set("appearance_noise_sigma", self.appearance_noise_sigma.to_string());
        kv.set("identity_min_separation", self.identity_min_separation.to_string());
        kv.set("occlusion_prob_per_frame", self.occlusion_prob_per_frame.to_string());
        let (d0, d1) = self.occlusion_duration_range;
        kv.set("occlusion_duration_range", pair(d0.to_string(), d1.to_string()));
        kv.set("birth_prob_per_frame", self.birth_prob_per_frame.to_string());
        kv.set("death_prob_per_frame", self.death_prob_per_frame.to_string());
        kv.set("false_positive_rate", self.false_positive_rate.to_string());
        let (c0, c1) = self.confidence_range;
        kv.set("confidence_range", pair(c0.to_string(), c1.to_string()));
        let (w, h) = self.arena_size;
        kv.set("arena_size", pair(w.to_string(), h.to_string()));
        kv.set("velocity_sigma", self.velocity_sigma.to_string());
        kv.set("seed", self.seed.to_string());
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::config(name, format!("probability {p} outside [0, 1]")))
            }
        };
        prob("occlusion_prob_per_frame", self.occlusion_prob_per_frame)?;
        prob("birth_prob_per_frame", self.birth_prob_per_frame)?;
        prob("death_prob_per_frame", self.death_prob_per_frame)?;
        if self.feature_dim < 2 {
            return Err(Error::config("feature_dim", "must be at least 2"));
        }
        let (dmin, dmax) = self.occlusion_duration_range;
        if dmin < 1 || dmax < dmin {
            return Err(Error::config(
                "occlusion_duration_range",
                format!("need 1 <= min <= max, got [{dmin}, {dmax}]"),
            ));
        }
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be finite and non-negative, got {v}")))
            }
        };
        nonneg("appearance_noise_sigma", self.appearance_noise_sigma)?;
        nonneg("identity_min_separation", self.identity_min_separation)?;
        nonneg("false_positive_rate", self.false_positive_rate)?;
        nonneg("velocity_sigma", self.velocity_sigma)?;
        let (lo, hi) = self.confidence_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::config(
                "confidence_range",
                format!("need 0 <= lo <= hi <= 1, got [{lo}, {hi}]"),
            ));
        }
        let (aw, ah) = self.arena_size;
        if !(aw > 0.0 && ah > 0.0 && aw.is_finite() && ah.is_finite()) {
            return Err(Error::config("arena_size", "both sides must be positive"));
        }
        Ok(())
    }
}

/// One observed object in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
    pub feature: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDetection {
    pub detection: Detection,
    /// Ground-truth track, `None` for false positives.
    pub gt_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledSequence {
    pub feature_dim: usize,
    /// One entry per frame, including frames without detections.
    pub frames: Vec<Vec<LabeledDetection>>,
}

impl LabeledSequence {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_detections(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackState {
    pub frame: usize,
    pub bbox: BBox,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTrack {
    pub track_id: u32,
    pub identity_latent: Vec<f64>,
    pub states: Vec<TrackState>,
}

struct LiveObject {
    track: usize,
    bbox: BBox,
    vx: f64,
    vy: f64,
    occluded_for: usize,
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn sample_latent(
    rng: &mut ChaCha8Rng,
    dim: usize,
    min_sep: f64,
    existing: &[GroundTruthTrack],
) -> Result<Vec<f64>> {
    for _ in 0..LATENT_RETRIES {
        let v = random_unit(rng, dim);
        if existing
            .iter()
            .all(|t| distance(&t.identity_latent, &v) >= min_sep)
        {
            return Ok(v);
        }
    }
    Err(Error::Generation(format!(
        "could not place identity latent {} with separation {min_sep} in dimension {dim} after {LATENT_RETRIES} tries",
        existing.len() + 1
    )))
}

fn spawn(
    rng: &mut ChaCha8Rng,
    config: &SceneConfig,
    tracks: &mut Vec<GroundTruthTrack>,
) -> Result<LiveObject> {
    let latent = sample_latent(
        rng,
        config.feature_dim,
        config.identity_min_separation,
        tracks,
    )?;
    let (aw, ah) = config.arena_size;
    let w = rng.random_range(0.02..0.05) * aw;
    let h = (w * rng.random_range(1.5..3.0)).min(ah * 0.9);
    let x = rng.random_range(0.0..(aw - w).max(1e-9));
    let y = rng.random_range(0.0..(ah - h).max(1e-9));
    let v0 = 4.0 * config.velocity_sigma;
    let (vx, vy) = if v0 > 0.0 {
        let n = Normal::new(0.0, v0).expect("finite sigma");
        (n.sample(rng), n.sample(rng))
    } else {
        (0.0, 0.0)
    };
    tracks.push(GroundTruthTrack {
        track_id: tracks.len() as u32 + 1,
        identity_latent: latent,
        states: Vec::new(),
    });
    Ok(LiveObject {
        track: tracks.len() - 1,
        bbox: BBox::new(x, y, w, h),
        vx,
        vy,
        occluded_for: 0,
    })
}

fn reflect(pos: f64, vel: f64, size: f64, extent: f64) -> (f64, f64) {
    let hi = (extent - size).max(0.0);
    let mut p = pos;
    let mut v = vel;
    if p < 0.0 {
        p = -p;
        v = -v;
    }
    if p > hi {
        p = 2.0 * hi - p;
        v = -v;
    }
    (p.clamp(0.0, hi), v)
}

/// Generate one sequence along with the ground-truth tracks behind it.
pub fn generate_sequence_with_tracks(
    config: &SceneConfig,
) -> Result<(LabeledSequence, Vec<GroundTruthTrack>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tracks: Vec<GroundTruthTrack> = Vec::new();
    let mut live: Vec<LiveObject> = Vec::new();
    let (aw, ah) = config.arena_size;
    let (clo, chi) = config.confidence_range;
    let (dmin, dmax) = config.occlusion_duration_range;
    let noise = Normal::new(0.0, config.appearance_noise_sigma).expect("validated sigma");
    let jitter = Normal::new(0.0, config.velocity_sigma).expect("validated sigma");
    let fp_count = (config.false_positive_rate > 0.0)
        .then(|| Poisson::new(config.false_positive_rate).expect("validated rate"));

    let initial = if config.max_objects == 0 {
        0
    } else {
        rng.random_range(config.max_objects.div_ceil(2)..=config.max_objects)
    };
    for _ in 0..initial {
        live.push(spawn(&mut rng, config, &mut tracks)?);
    }

    let mut frames = Vec::with_capacity(config.num_frames);
    for t in 0..config.num_frames {
        if t > 0 {
            live.retain(|_| !rng.random_bool(config.death_prob_per_frame));
            if live.len() < config.max_objects && rng.random_bool(config.birth_prob_per_frame) {
                live.push(spawn(&mut rng, config, &mut tracks)?);
            }
        }
        let mut dets = Vec::new();
        for obj in live.iter_mut() {
            if t > 0 && !tracks[obj.track].states.is_empty() {
                obj.vx += jitter.sample(&mut rng);
                obj.vy += jitter.sample(&mut rng);
                let (x, vx) = reflect(obj.bbox.x + obj.vx, obj.vx, obj.bbox.w, aw);
                let (y, vy) = reflect(obj.bbox.y + obj.vy, obj.vy, obj.bbox.h, ah);
                obj.bbox.x = x;
                obj.bbox.y = y;
                obj.vx = vx;
                obj.vy = vy;
            }
            let visible = if obj.occluded_for > 0 {
                obj.occluded_for -= 1;
                false
            } else if rng.random_bool(config.occlusion_prob_per_frame) {
                obj.occluded_for = rng.random_range(dmin..=dmax) - 1;
                false
            } else {
                true
            };
            let track = &mut tracks[obj.track];
            track.states.push(TrackState {
                frame: t,
                bbox: obj.bbox,
                visible,
            });
            if visible {
                let feature = track
                    .identity_latent
                    .iter()
                    .map(|&l| (l + noise.sample(&mut rng)) as f32)
                    .collect();
                let confidence = if chi > clo {
                    rng.random_range(clo..=chi)
                } else {
                    clo
                };
                dets.push(LabeledDetection {
                    detection: Detection {
                        bbox: obj.bbox,
                        confidence,
                        feature,
                    },
                    gt_id: Some(track.track_id),
                });
            }
        }
        if let Some(dist) = &fp_count {
            let n = dist.sample(&mut rng) as usize;
            for _ in 0..n {
                let w = rng.random_range(0.02..0.05) * aw;
                let h = (w * rng.random_range(1.5..3.0)).min(ah * 0.9);
                let bbox = BBox::new(
                    rng.random_range(0.0..(aw - w).max(1e-9)),
                    rng.random_range(0.0..(ah - h).max(1e-9)),
                    w,
                    h,
                );
                let feature = random_unit(&mut rng, config.feature_dim)
                    .into_iter()
                    .map(|v| v as f32)
                    .collect();
                dets.push(LabeledDetection {
                    detection: Detection {
                        bbox,
                        confidence: rng.random_range(0.0..=1.0),
                        feature,
                    },
                    gt_id: None,
                });
            }
        }
        // Detector output order carries no identity information.
        dets.shuffle(&mut rng);
        frames.push(dets);
    }
    Ok((
        LabeledSequence {
            feature_dim: config.feature_dim,
            frames,
        },
        tracks,
    ))
}

pub fn generate_sequence(config: &SceneConfig) -> Result<LabeledSequence> {
    generate_sequence_with_tracks(config).map(|(s, _)| s)
}

/// Sequence `i` uses seed `base_seed + i`.
pub fn generate_corpus(
    config: &SceneConfig,
    n_sequences: usize,
    base_seed: u64,
    mode: ExecMode,
) -> Result<Vec<LabeledSequence>> {
    if n_sequences == 0 {
        return Err(Error::config("n_sequences", "must be at least 1"));
    }
    config.validate()?;
    par::map_range(mode, n_sequences, |i| {
        let mut cfg = config.clone();
        cfg.seed = base_seed.wrapping_add(i as u64);
        generate_sequence(&cfg)
    })
    .into_iter()
    .collect()
}
