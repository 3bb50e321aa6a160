//! Run manifests: `manifest.ini` in every output directory.
//!
//! The file is written with `status = running` before a subcommand does any
//! work and rewritten at the end with the outcome, the finish time and a
//! sha256 per emitted artifact (`artifact.<relative path> = <hex>`).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use idtrack::kv::KvFile;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.ini";

pub struct Manifest {
    dir: PathBuf,
    kv: KvFile,
    artifacts: Vec<PathBuf>,
}

fn now() -> String {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
        .to_string()
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    /// Create `dir` and write the initial manifest.
    pub fn begin(
        dir: &Path,
        subcommand: &str,
        seed: u64,
        config: &KvFile,
        paths: &[(&str, &Path)],
    ) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
        let mut kv = KvFile::default();
        kv.set("subcommand", subcommand);
        kv.set("seed", seed.to_string());
        kv.set("status", "running");
        kv.set("started", now());
        for (name, p) in paths {
            kv.set(&format!("path.{name}"), p.display().to_string());
        }
        kv.merge_prefixed("config.", config);
        let m = Self {
            dir: dir.to_path_buf(),
            kv,
            artifacts: Vec::new(),
        };
        m.write()?;
        Ok(m)
    }

    fn write(&self) -> CliResult<()> {
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, self.kv.render()).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
    }

    /// Merge resolved settings discovered during the run.
    pub fn record_config(&mut self, config: &KvFile) {
        self.kv.merge_prefixed("config.", config);
    }

    pub fn add(&mut self, path: impl Into<PathBuf>) {
        let path = path.into();
        if !self.artifacts.contains(&path) {
            self.artifacts.push(path);
        }
    }

    pub fn add_all(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        for p in paths {
            self.add(p);
        }
    }

    /// Record the outcome and artifact checksums, then rewrite the file.
    pub fn finish<T>(mut self, outcome: CliResult<T>) -> CliResult<T> {
        self.kv.set("finished", now());
        match &outcome {
            Ok(_) => self.kv.set("status", "ok"),
            Err(e) => {
                self.kv.set("status", "failed");
                self.kv.set("exit_code", e.code.to_string());
                self.kv.set("error", e.message.replace('\n', " "));
            }
        }
        let mut artifacts = std::mem::take(&mut self.artifacts);
        artifacts.sort();
        for p in artifacts.iter().filter(|p| p.exists()) {
            let rel = p.strip_prefix(&self.dir).unwrap_or(p);
            self.kv.set(&format!("artifact.{}", rel.display()), sha256_file(p)?);
        }
        self.write()?;
        outcome
    }
}

/// Artifacts listed in `dir/manifest.ini` whose current checksum differs
/// (or which are missing).
pub fn verify(dir: &Path) -> CliResult<Vec<String>> {
    let kv = KvFile::load(&dir.join(MANIFEST_FILE)).map_err(CliError::from)?;
    let mut bad = Vec::new();
    for (k, v) in kv.section("artifact.").entries() {
        let path = dir.join(k);
        if !path.exists() || sha256_file(&path)? != *v {
            bad.push(k.clone());
        }
    }
    Ok(bad)
}
