use std::path::{Path, PathBuf};

use idtrack::decoder::DecoderConfig;
use idtrack::inference::InferenceConfig;
use idtrack::kv::KvFile;
use idtrack::ExecMode;

use crate::error::{CliError, CliResult};

pub mod ablate;
pub mod eval;
pub mod synth;
pub mod track;
pub mod train;

/// Settings shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Context {
    pub workdir: PathBuf,
    /// 64-bit arithmetic and sequential execution.
    pub deterministic: bool,
    /// Replaces the config file's `seed`.
    pub seed_override: Option<u64>,
}

impl Context {
    pub fn new(workdir: impl Into<PathBuf>) -> Self {
        Self {
            workdir: workdir.into(),
            deterministic: false,
            seed_override: None,
        }
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        self.workdir.join(p)
    }

    pub fn mode(&self) -> ExecMode {
        if self.deterministic {
            ExecMode::Sequential
        } else {
            ExecMode::Parallel
        }
    }

    /// Load a config file and resolve its seed. The returned file carries the
    /// resolved `seed`, so manifests record what actually ran.
    pub fn load_config(&self, path: &Path) -> CliResult<(KvFile, u64)> {
        let full = self.path(path);
        if !full.is_file() {
            return Err(CliError::config(format!("config file not found: {}", full.display())));
        }
        let mut kv = KvFile::load(&full).map_err(|e| CliError::config(e.to_string()))?;
        let file_seed: Option<u64> = kv.parsed("seed").map_err(|e| CliError::config(e.to_string()))?;
        let seed = self.seed_override.or(file_seed).unwrap_or(0);
        kv.set("seed", seed.to_string());
        Ok((kv, seed))
    }

    pub fn optional_config(&self, path: Option<&Path>) -> CliResult<(KvFile, Option<u64>)> {
        match path {
            Some(p) => self.load_config(p).map(|(kv, s)| (kv, Some(s))),
            None => Ok((KvFile::default(), self.seed_override)),
        }
    }
}

/// `decoder.*` keys over the defaults, seeded from the run seed unless
/// `decoder.seed` is given.
pub fn decoder_config(kv: &KvFile, seed: u64, feature_dim: usize) -> CliResult<DecoderConfig> {
    let mut cfg = DecoderConfig {
        feature_dim,
        seed,
        ..DecoderConfig::default()
    };
    cfg.apply_kv(kv, "decoder.")?;
    if cfg.feature_dim != feature_dim {
        return Err(CliError::data(format!(
            "decoder.feature_dim = {} but the data has {feature_dim}-dimensional features",
            cfg.feature_dim
        )));
    }
    Ok(cfg)
}

/// Command-line overrides for the inference thresholds.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct InferenceFlags {
    #[arg(long = "lambda-det")]
    pub lambda_det: Option<f64>,
    #[arg(long = "lambda-new")]
    pub lambda_new: Option<f64>,
    #[arg(long = "lambda-id")]
    pub lambda_id: Option<f64>,
    /// Use Hungarian assignment instead of greedy argmax.
    #[arg(long)]
    pub hungarian: bool,
    #[arg(long = "miss-tolerance")]
    pub miss_tolerance: Option<usize>,
}

/// `track.*` keys, then flags. `T` defaults to the training window.
pub fn inference_config(kv: &KvFile, flags: &InferenceFlags, window: Option<usize>) -> CliResult<InferenceConfig> {
    let mut cfg = InferenceConfig::default();
    if let Some(t) = window {
        cfg.window = t;
    }
    cfg.apply_kv(&kv.section("track."))?;
    if let Some(v) = flags.lambda_det {
        cfg.lambda_det = v;
    }
    if let Some(v) = flags.lambda_new {
        cfg.lambda_new = v;
    }
    if let Some(v) = flags.lambda_id {
        cfg.lambda_id = v;
    }
    if flags.hungarian {
        cfg.use_hungarian = true;
    }
    if let Some(v) = flags.miss_tolerance {
        cfg.miss_tolerance = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
    std::fs::write(path, contents).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_config_values() {
        let kv = KvFile::parse("track.lambda_det = 0.5\ntrack.use_hungarian = false\nlambda_id = 9\n", Path::new("c")).unwrap();
        let flags = InferenceFlags {
            lambda_det: Some(0.1),
            hungarian: true,
            ..InferenceFlags::default()
        };
        let cfg = inference_config(&kv, &flags, Some(7)).unwrap();
        assert_eq!(cfg.lambda_det, 0.1);
        assert!(cfg.use_hungarian);
        assert_eq!(cfg.window, 7);
        // Unprefixed `lambda_id` is the training loss weight, not the threshold.
        assert_eq!(cfg.lambda_id, InferenceConfig::default().lambda_id);
    }

    #[test]
    fn seed_override_wins() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("c.ini"), "seed = 5\n").unwrap();
        let mut ctx = Context::new(dir.path());
        assert_eq!(ctx.load_config(Path::new("c.ini")).unwrap().1, 5);
        ctx.seed_override = Some(9);
        let (kv, seed) = ctx.load_config(Path::new("c.ini")).unwrap();
        assert_eq!((seed, kv.get("seed")), (9, Some("9")));
        let err = ctx.load_config(Path::new("missing.ini")).unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("missing.ini"));
    }
}
