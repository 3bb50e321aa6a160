use std::path::{Path, PathBuf};

use idtrack::checkpoint::Checkpoint;
use idtrack::dataset::{read_dataset, read_index};
use idtrack::decoder::IdModel;
use idtrack::inference::{run_sequence, InferenceConfig};
use idtrack::mot::{self, MotRecord};
use idtrack::scene::{Detection, LabeledSequence};
use idtrack::{ExecMode, Real};

use super::{inference_config, write_file, Context, InferenceFlags};
use crate::error::CliResult;
use crate::manifest::Manifest;

pub fn detections(seq: &LabeledSequence) -> Vec<Vec<Detection>> {
    seq.frames
        .iter()
        .map(|f| f.iter().map(|d| d.detection.clone()).collect())
        .collect()
}

/// Ground-truth records of a labelled sequence; false positives are omitted.
pub fn ground_truth(seq: &LabeledSequence) -> Vec<MotRecord> {
    seq.frames
        .iter()
        .enumerate()
        .flat_map(|(t, f)| {
            f.iter().filter_map(move |d| {
                d.gt_id.map(|id| MotRecord {
                    frame: t as u32 + 1,
                    id: id as i64,
                    bbox: d.detection.bbox,
                    conf: d.detection.confidence,
                })
            })
        })
        .collect()
}

/// Run the tracker over every sequence, independently per sequence.
pub fn track_corpus<T: Real>(
    model: &IdModel<T>,
    corpus: &[LabeledSequence],
    cfg: &InferenceConfig,
    mode: ExecMode,
) -> CliResult<Vec<Vec<MotRecord>>> {
    let results = idtrack::map(mode, corpus, |seq| run_sequence(&detections(seq), model, cfg));
    Ok(results.into_iter().collect::<idtrack::Result<Vec<_>>>()?)
}

pub struct TrackArgs<'a> {
    pub checkpoint: &'a Path,
    pub data: &'a Path,
    pub out: &'a Path,
    pub config: Option<&'a Path>,
    pub flags: &'a InferenceFlags,
}

fn run<T: Real>(
    ckpt: &Path,
    corpus: &[LabeledSequence],
    kv: &idtrack::kv::KvFile,
    flags: &InferenceFlags,
    mode: ExecMode,
) -> CliResult<(InferenceConfig, Vec<Vec<MotRecord>>)> {
    let ck = Checkpoint::<T>::load(ckpt)?;
    let window = ck.meta.parsed::<usize>("T")?;
    let cfg = inference_config(kv, flags, window)?;
    let results = track_corpus(&ck.model, corpus, &cfg, mode)?;
    Ok((cfg, results))
}

pub fn cmd_track(ctx: &Context, args: &TrackArgs) -> CliResult<Vec<PathBuf>> {
    let (mut kv, seed) = ctx.optional_config(args.config)?;
    let ckpt = ctx.path(args.checkpoint);
    let data = ctx.path(args.data);
    let out = ctx.path(args.out);
    let mut paths = vec![("checkpoint", ckpt.clone()), ("data", data.clone()), ("out", out.clone())];
    if let Some(c) = args.config {
        paths.push(("config", ctx.path(c)));
    }
    let path_refs: Vec<(&str, &Path)> = paths.iter().map(|(n, p)| (*n, p.as_path())).collect();
    let mut manifest = Manifest::begin(&out, "track", seed.unwrap_or(0), &kv, &path_refs)?;
    let result = (|| {
        let (_, names) = read_index(&data)?;
        let corpus = read_dataset(&data)?;
        let (cfg, results) = if ctx.deterministic {
            run::<f64>(&ckpt, &corpus, &kv, args.flags, ctx.mode())?
        } else {
            run::<f32>(&ckpt, &corpus, &kv, args.flags, ctx.mode())?
        };
        let mut resolved = idtrack::kv::KvFile::default();
        cfg.write_kv(&mut resolved);
        kv.merge_prefixed("track.", &resolved);
        names
            .iter()
            .zip(&results)
            .map(|((name, _), recs)| write_file(&out.join(format!("{name}.txt")), mot::render(recs)))
            .collect::<CliResult<Vec<_>>>()
    })();
    if let Ok(files) = &result {
        manifest.add_all(files.iter().cloned());
    }
    manifest.record_config(&kv);
    manifest.finish(result)
}
