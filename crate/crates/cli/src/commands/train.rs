use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use idtrack::checkpoint::Checkpoint;
use idtrack::dataset::read_dataset;
use idtrack::decoder::DecoderConfig;
use idtrack::scene::LabeledSequence;
use idtrack::training::{train, StepRecord, TrainConfig, TrainOptions};
use idtrack::{ExecMode, Real};

use super::{decoder_config, write_file, Context};
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use crate::plot::{line_chart, Series};

pub const MODEL_FILE: &str = "model.ckpt";
pub const PERIODIC_FILE: &str = "checkpoint.ckpt";
pub const METRICS_FILE: &str = "metrics.log";
pub const LOSS_PLOT: &str = "loss.svg";
const METRICS_HEADER: &str = "# step loss lr grad_norm";

/// Train on `corpus`, streaming step records into `log`. Returns the final
/// checkpoint encoded at the requested precision.
pub fn train_model<T: Real>(
    corpus: &[LabeledSequence],
    cfg: &TrainConfig,
    dec: &DecoderConfig,
    resume: Option<&Path>,
    options: &TrainOptions,
    log: &mut dyn FnMut(&StepRecord) -> idtrack::Result<()>,
) -> CliResult<Vec<u8>> {
    let resume = resume.map(Checkpoint::<T>::load).transpose()?;
    let out = train::<T>(corpus, cfg, dec, resume, options, log)?;
    Ok(out.checkpoint.encode())
}

pub struct TrainArgs<'a> {
    pub config: &'a Path,
    pub data: &'a Path,
    pub out: &'a Path,
    pub resume: Option<&'a Path>,
    pub max_steps: Option<u64>,
}

/// Parse `step loss lr grad_norm` lines back into (step, loss) points.
fn loss_points(text: &str) -> Vec<(f64, f64)> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| {
            let mut it = l.split_whitespace();
            Some((it.next()?.parse().ok()?, it.next()?.parse().ok()?))
        })
        .collect()
}

pub fn cmd_train(ctx: &Context, args: &TrainArgs) -> CliResult<PathBuf> {
    let (kv, seed) = ctx.load_config(args.config)?;
    let data = ctx.path(args.data);
    let out = ctx.path(args.out);
    let resume = args.resume.map(|p| ctx.path(p));
    let mut paths = vec![("config", ctx.path(args.config)), ("data", data.clone()), ("out", out.clone())];
    if let Some(r) = &resume {
        paths.push(("resume", r.clone()));
    }
    let path_refs: Vec<(&str, &Path)> = paths.iter().map(|(n, p)| (*n, p.as_path())).collect();
    let mut manifest = Manifest::begin(&out, "train", seed, &kv, &path_refs)?;
    let metrics = out.join(METRICS_FILE);
    let result = (|| {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv(&kv)?;
        cfg.seed = seed;
        if ctx.deterministic {
            cfg.double_precision = true;
        }
        cfg.validate()?;
        let corpus = read_dataset(&data)?;
        let dim = corpus.first().map(|s| s.feature_dim).ok_or_else(|| CliError::data("empty corpus"))?;
        let dec = decoder_config(&kv, seed, dim)?;
        let options = TrainOptions {
            mode: if ctx.deterministic { ExecMode::Sequential } else { ctx.mode() },
            checkpoint_path: Some(out.join(PERIODIC_FILE)),
            max_steps: args.max_steps,
        };

        let file = if resume.is_some() && metrics.exists() {
            OpenOptions::new().append(true).open(&metrics)
        } else {
            File::create(&metrics).and_then(|mut f| writeln!(f, "{METRICS_HEADER}").map(|_| f))
        }
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", metrics.display())))?;
        let mut writer = BufWriter::new(file);
        let mut log = |r: &StepRecord| {
            writeln!(writer, "{}", r.to_line()).map_err(|e| idtrack::Error::Io {
                path: metrics.clone(),
                source: e,
            })
        };
        let trained = if cfg.double_precision {
            train_model::<f64>(&corpus, &cfg, &dec, resume.as_deref(), &options, &mut log)
        } else {
            train_model::<f32>(&corpus, &cfg, &dec, resume.as_deref(), &options, &mut log)
        };
        writer
            .flush()
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", metrics.display())))?;
        let bytes = trained?;
        let model = write_file(&out.join(MODEL_FILE), bytes)?;

        let text = std::fs::read_to_string(&metrics).unwrap_or_default();
        let svg = line_chart("training loss", "step", "loss", &[Series::new("loss", loss_points(&text))]);
        write_file(&out.join(LOSS_PLOT), svg)?;
        Ok(model)
    })();
    manifest.add_all(
        [MODEL_FILE, PERIODIC_FILE, METRICS_FILE, LOSS_PLOT]
            .iter()
            .map(|f| out.join(f)),
    );
    manifest.finish(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_lines_parse_back() {
        let text = format!("{METRICS_HEADER}\n1 0.5 0.001 2\n2 0.25 0.001 1\nbroken\n");
        assert_eq!(loss_points(&text), vec![(1.0, 0.5), (2.0, 0.25)]);
    }
}
