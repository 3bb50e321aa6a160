use std::path::{Path, PathBuf};

use idtrack::dataset::write_dataset;
use idtrack::kv::KvFile;
use idtrack::scene::{generate_corpus, SceneConfig};

use super::Context;
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;

/// `scene.*` keys over the defaults.
pub fn scene_config(kv: &KvFile, prefix: &str) -> CliResult<SceneConfig> {
    let mut cfg = SceneConfig::default();
    cfg.apply_kv(&kv.section(prefix))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Generate `sequences` scenes (sequence `i` seeded with `seed + i`) into `out`.
pub fn cmd_synth(ctx: &Context, config: &Path, out: &Path) -> CliResult<Vec<PathBuf>> {
    let (kv, seed) = ctx.load_config(config)?;
    let out_dir = ctx.path(out);
    let manifest = Manifest::begin(&out_dir, "synth", seed, &kv, &[("config", &ctx.path(config)), ("out", &out_dir)])?;
    let mut manifest = manifest;
    let result = (|| {
        let scene = scene_config(&kv, "scene.")?;
        let count: usize = kv
            .parsed("sequences")
            .map_err(|e| CliError::config(e.to_string()))?
            .unwrap_or(20);
        let corpus = generate_corpus(&scene, count, seed, ctx.mode())?;
        let files = write_dataset(&corpus, &out_dir)?;
        log::info!("wrote {count} sequences to {}", out_dir.display());
        Ok(files)
    })();
    if let Ok(files) = &result {
        manifest.add_all(files.iter().cloned());
    }
    manifest.finish(result)
}
