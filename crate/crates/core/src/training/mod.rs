//! Supervised in-context ID training on labelled clips.

mod clip;
pub mod encoder;
mod loss;
mod optim;

use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use clip::{
    assign_training_labels, augment_occlusion, augment_swap, build_window, clip_input, id_targets, sample_clip, Clip,
    MemoryToken,
};
pub use loss::{contra_objective, id_loss, reid_objective, total_loss, LossComponents, LossWeights};
pub use optim::Adam;

use crate::checkpoint::Checkpoint;
use crate::decoder::{gradient, parallel_training_forward, DecoderConfig, IdModel};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::par::{self, ExecMode};
use crate::real::Real;
use crate::scene::LabeledSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    IdPred,
    ReId,
    Contra,
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "id_pred" => Ok(Objective::IdPred),
            "re_id" => Ok(Objective::ReId),
            "contra" => Ok(Objective::Contra),
            other => Err(format!("unknown objective {other:?}")),
        }
    }
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::IdPred => "id_pred",
            Objective::ReId => "re_id",
            Objective::Contra => "contra",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Window length; clips hold `T + 1` frames.
    pub window: usize,
    pub interval_range: (usize, usize),
    pub lambda_occ: f64,
    pub lambda_sw: f64,
    pub weights: LossWeights,
    pub learning_rate: f64,
    /// Epochs at whose start the learning rate drops tenfold.
    pub decay_epochs: Vec<usize>,
    pub total_epochs: usize,
    pub batch_size: usize,
    /// Clips drawn from each sequence per epoch.
    pub clips_per_sequence: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub objective: Objective,
    /// Number of ID labels `K`.
    pub capacity: usize,
    /// Train newborn detections towards the special class (otherwise they are
    /// left out of the loss).
    pub supervise_newborns: bool,
    /// Save a checkpoint every this many epochs (0 disables periodic saves).
    pub checkpoint_every: usize,
    /// Use 64-bit floats for training.
    pub double_precision: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            window: 29,
            interval_range: (1, 4),
            lambda_occ: 0.5,
            lambda_sw: 0.5,
            weights: LossWeights::default(),
            learning_rate: 1e-4,
            decay_epochs: vec![5, 9],
            total_epochs: 10,
            batch_size: 8,
            clips_per_sequence: 1,
            grad_clip_norm: 0.1,
            seed: 0,
            objective: Objective::IdPred,
            capacity: 50,
            supervise_newborns: true,
            checkpoint_every: 1,
            double_precision: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::config("T", "clip_len = T + 1 must be at least 2"));
        }
        let (lo, hi) = self.interval_range;
        if lo == 0 || lo > hi {
            return Err(Error::config("interval_range", format!("[{lo}, {hi}] is not a valid range")));
        }
        for (name, p) in [("lambda_occ", self.lambda_occ), ("lambda_sw", self.lambda_sw)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(name, format!("{p} is not a probability")));
            }
        }
        total_loss(&LossComponents::default(), &self.weights)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.clips_per_sequence == 0 {
            return Err(Error::config("clips_per_sequence", "must be positive"));
        }
        if !(self.grad_clip_norm >= 0.0) {
            return Err(Error::config("grad_clip_norm", "must be non-negative"));
        }
        if self.capacity == 0 {
            return Err(Error::config("capacity", "need at least one label"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let drops = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.learning_rate * 0.1f64.powi(drops as i32)
    }

    pub fn apply_kv(&mut self, kv: &KvFile) -> Result<()> {
        kv.apply("T", &mut self.window)?;
        kv.apply_pair("interval_range", &mut self.interval_range)?;
        kv.apply("lambda_occ", &mut self.lambda_occ)?;
        kv.apply("lambda_sw", &mut self.lambda_sw)?;
        kv.apply("lambda_cls", &mut self.weights.cls)?;
        kv.apply("lambda_L1", &mut self.weights.l1)?;
        kv.apply("lambda_giou", &mut self.weights.giou)?;
        kv.apply("lambda_id", &mut self.weights.id)?;
        kv.apply("learning_rate", &mut self.learning_rate)?;
        if let Some(v) = kv.list("decay_epochs")? {
            self.decay_epochs = v;
        }
        kv.apply("total_epochs", &mut self.total_epochs)?;
        kv.apply("batch_size", &mut self.batch_size)?;
        kv.apply("clips_per_sequence", &mut self.clips_per_sequence)?;
        kv.apply("grad_clip_norm", &mut self.grad_clip_norm)?;
        kv.apply("seed", &mut self.seed)?;
        kv.apply("capacity", &mut self.capacity)?;
        kv.apply_bool("supervise_newborns", &mut self.supervise_newborns)?;
        kv.apply("checkpoint_every", &mut self.checkpoint_every)?;
        if let Some(o) = kv.get("objective") {
            self.objective = o.parse().map_err(|e: String| Error::config("objective", e))?;
        }
        if let Some(p) = kv.get("precision") {
            self.double_precision = match p {
                "32" | "f32" => false,
                "64" | "f64" => true,
                other => return Err(Error::config("precision", format!("expected 32 or 64, got {other:?}"))),
            };
        }
        Ok(())
    }

    pub fn write_kv(&self, kv: &mut KvFile) {
        kv.set("T", self.window.to_string());
        kv.set("interval_range", format!("[{}, {}]", self.interval_range.0, self.interval_range.1));
        kv.set("lambda_occ", self.lambda_occ.to_string());
        kv.set("lambda_sw", self.lambda_sw.to_string());
        kv.set("lambda_cls", self.weights.cls.to_string());
        kv.set("lambda_L1", self.weights.l1.to_string());
        kv.set("lambda_giou", self.weights.giou.to_string());
        kv.set("lambda_id", self.weights.id.to_string());
        kv.set("learning_rate", self.learning_rate.to_string());
        let decay: Vec<String> = self.decay_epochs.iter().map(|e| e.to_string()).collect();
        kv.set("decay_epochs", format!("[{}]", decay.join(", ")));
        kv.set("total_epochs", self.total_epochs.to_string());
        kv.set("batch_size", self.batch_size.to_string());
        kv.set("clips_per_sequence", self.clips_per_sequence.to_string());
        kv.set("grad_clip_norm", self.grad_clip_norm.to_string());
        kv.set("seed", self.seed.to_string());
        kv.set("objective", self.objective.as_str());
        kv.set("capacity", self.capacity.to_string());
        kv.set("supervise_newborns", self.supervise_newborns.to_string());
        kv.set("checkpoint_every", self.checkpoint_every.to_string());
        kv.set("precision", if self.double_precision { "64" } else { "32" });
    }
}

/// One optimizer step as written to the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

impl StepRecord {
    pub fn to_line(&self) -> String {
        format!("{} {} {} {}", self.step, self.loss, self.lr, self.grad_norm)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub mode: ExecMode,
    /// Where periodic and final checkpoints go.
    pub checkpoint_path: Option<PathBuf>,
    /// Stop after this many optimizer steps (for smoke runs).
    pub max_steps: Option<u64>,
}

/// Loss and gradient of one clip.
pub fn clip_gradient<T: Real>(
    model: &IdModel<T>,
    seq: &LabeledSequence,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(f64, IdModel<T>)>> {
    let Some(clip) = sample_clip(seq, config.window, config.interval_range, rng) else {
        return Ok(None);
    };
    let labels = match assign_training_labels(&clip, model.capacity(), rng) {
        Ok(l) => l,
        Err(Error::Capacity { .. }) => {
            log::warn!("clip with more trajectories than labels skipped");
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    let mut window = build_window(&clip, &labels);
    augment_occlusion(&mut window, config.lambda_occ, rng);
    augment_swap(&mut window, config.lambda_sw, rng);
    let (input, targets) = clip_input(model, &clip, &labels, &window, config.supervise_newborns)?;
    if targets.iter().all(Option::is_none) {
        return Ok(None);
    }
    let dropout = model.config.dropout;
    let drop = (dropout > 0.0).then_some((dropout, &mut *rng));
    let (_, logits, tape) = parallel_training_forward(model, &input, drop)?;
    let (l_id, dlogits) = id_loss(&logits, &targets);
    let components = LossComponents {
        id: l_id,
        ..Default::default()
    };
    let loss = total_loss(&components, &config.weights)?;
    let dlogits = dlogits.mapv(|v| v * T::of(config.weights.id));
    let grads = gradient(model, &input, &tape, &dlogits)?;
    Ok(Some((loss, grads)))
}

/// Per-clip RNG, independent of batching and thread scheduling.
fn clip_rng(seed: u64, epoch: usize, position: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | position as u64);
    rng
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub records: Vec<StepRecord>,
}

fn snapshot<T: Real>(model: &IdModel<T>, adam: &Adam<T>, config: &TrainConfig, epoch: usize) -> Checkpoint<T> {
    let mut ck = Checkpoint::new(model.clone());
    config.write_kv(&mut ck.meta);
    ck.meta.set("epoch", epoch.to_string());
    ck.meta.set("step", adam.step.to_string());
    ck.meta.set("optimizer", "adam");
    ck.meta.set("adam_beta1", adam.beta1.to_string());
    ck.meta.set("adam_beta2", adam.beta2.to_string());
    ck.meta.set("adam_eps", adam.eps.to_string());
    ck.moments = Some((adam.m.clone(), adam.v.clone()));
    ck
}

/// Train from scratch, or continue from `resume` (which must come from an
/// epoch boundary). `on_step` sees every optimizer step as it happens.
pub fn train<T: Real>(
    corpus: &[LabeledSequence],
    config: &TrainConfig,
    decoder: &DecoderConfig,
    resume: Option<Checkpoint<T>>,
    options: &TrainOptions,
    on_step: &mut dyn FnMut(&StepRecord) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    decoder.validate()?;
    if config.objective != Objective::IdPred {
        return Err(Error::config(
            "objective",
            "the decoder trains with id_pred; use training::encoder for re_id and contra",
        ));
    }
    let usable: Vec<&LabeledSequence> = corpus
        .iter()
        .filter(|s| {
            let ok = s.num_frames() > config.window;
            if !ok {
                log::warn!("sequence with {} frames is shorter than T + 1; excluded", s.num_frames());
            }
            ok
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::Input("no sequence is long enough for a clip".into()));
    }

    let (mut model, mut adam, start_epoch) = match resume {
        Some(ck) => {
            let epoch: usize = ck.meta.parsed("epoch")?.unwrap_or(0);
            let step: u64 = ck.meta.parsed("step")?.unwrap_or(0);
            let mut adam = Adam::new(&ck.model);
            adam.step = step;
            if let Some((m, v)) = ck.moments {
                adam.m = m;
                adam.v = v;
            }
            (ck.model, adam, epoch)
        }
        None => {
            let model = IdModel::<T>::init(decoder, config.capacity)?;
            let adam = Adam::new(&model);
            (model, adam, 0)
        }
    };

    let mut last_good: Option<PathBuf> = None;
    let mut records = Vec::new();
    let mode = options.mode;
    'epochs: for epoch in start_epoch..config.total_epochs {
        let lr = config.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..usable.len() * config.clips_per_sequence)
            .map(|i| i % usable.len())
            .collect();
        let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0bad_5eed);
        shuffle.set_stream(epoch as u64);
        order.shuffle(&mut shuffle);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            if options.max_steps.is_some_and(|m| adam.step >= m) {
                break 'epochs;
            }
            let positions: Vec<(usize, usize)> =
                batch.iter().enumerate().map(|(i, &s)| (b * config.batch_size + i, s)).collect();
            let results = par::map(mode, &positions, |&(pos, s)| {
                let mut rng = clip_rng(config.seed, epoch, pos);
                clip_gradient(&model, usable[s], config, &mut rng)
            });
            let mut grads = model.zeros_like();
            let mut loss = 0.0;
            let mut used = 0usize;
            for r in results {
                if let Some((l, g)) = r.map_err(|e| match e {
                    Error::Numeric { .. } => Error::Divergence {
                        step: adam.step,
                        last_good: last_good.clone(),
                    },
                    other => other,
                })? {
                    loss += l;
                    grads.axpy(T::one(), &g);
                    used += 1;
                }
            }
            if used == 0 {
                continue;
            }
            loss /= used as f64;
            grads.scale(T::of(1.0 / used as f64));
            let grad_norm = grads.l2_norm();
            if !loss.is_finite() || !grad_norm.is_finite() {
                return Err(Error::Divergence {
                    step: adam.step,
                    last_good,
                });
            }
            if config.grad_clip_norm > 0.0 && grad_norm > config.grad_clip_norm {
                grads.scale(T::of(config.grad_clip_norm / grad_norm));
            }
            adam.update(&mut model, &grads, lr);
            let rec = StepRecord {
                step: adam.step,
                epoch,
                loss,
                lr,
                grad_norm,
            };
            on_step(&rec)?;
            records.push(rec);
        }
        if let Some(path) = &options.checkpoint_path {
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                snapshot(&model, &adam, config, epoch + 1).save(path)?;
                last_good = Some(path.clone());
            }
        }
    }
    let epochs_done = if options.max_steps.is_some_and(|m| adam.step >= m) {
        records.last().map_or(start_epoch, |r| r.epoch)
    } else {
        config.total_epochs.max(start_epoch)
    };
    let checkpoint = snapshot(&model, &adam, config, epochs_done);
    if let Some(path) = &options.checkpoint_path {
        checkpoint.save(path)?;
    }
    Ok(TrainOutcome { checkpoint, records })
}
