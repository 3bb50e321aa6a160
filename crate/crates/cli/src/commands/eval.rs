use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use idtrack::dataset::read_index;
use idtrack::eval::{evaluate_sequence, EvalReport, SequenceReport};
use idtrack::mot::{self, MotRecord};

use super::{write_file, Context};
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use crate::plot::{line_chart, Series};

pub const REPORT_FILE: &str = "report.txt";
pub const CSV_FILE: &str = "metrics.csv";
pub const PLOT_FILE: &str = "eval.svg";

pub fn read_mot(path: &Path) -> CliResult<Vec<MotRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    mot::parse_all(&text).map_err(|(offset, reason)| CliError::data(format!("{} at byte {offset}: {reason}", path.display())))
}

/// Sequence names of `*.txt` result files in `dir`.
fn result_names(dir: &Path) -> CliResult<BTreeSet<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::data(format!("cannot list {}: {e}", dir.display())))?;
    let mut names = BTreeSet::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::data(e.to_string()))?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem() {
                names.insert(stem.to_string_lossy().into_owned());
            }
        }
    }
    Ok(names)
}

/// Score result files against a corpus. Every GT sequence needs a result file
/// and vice versa.
pub fn evaluate_dirs(results: &Path, gt: &Path, iou_threshold: f64) -> CliResult<EvalReport> {
    let (_, seqs) = read_index(gt)?;
    let gt_names: BTreeSet<String> = seqs.iter().map(|(n, _)| n.clone()).collect();
    let found = result_names(results)?;
    let orphans: Vec<String> = found
        .symmetric_difference(&gt_names)
        .map(|n| if gt_names.contains(n) { format!("{n} (no result)") } else { format!("{n} (no ground truth)") })
        .collect();
    if !orphans.is_empty() {
        return Err(CliError::data(format!("unmatched sequences: {}", orphans.join(", "))));
    }
    let mut reports = Vec::new();
    for (name, _) in &seqs {
        let gt_recs = read_mot(&gt.join(format!("{name}.txt")))?;
        let pred = read_mot(&results.join(format!("{name}.txt")))?;
        reports.push(SequenceReport {
            name: name.clone(),
            counts: evaluate_sequence(&gt_recs, &pred, iou_threshold),
        });
    }
    Ok(EvalReport::from_sequences(reports)?)
}

pub fn cmd_eval(ctx: &Context, results: &Path, gt: &Path, out: &Path, iou_threshold: f64) -> CliResult<EvalReport> {
    let (results, gt, out) = (ctx.path(results), ctx.path(gt), ctx.path(out));
    let mut kv = idtrack::kv::KvFile::default();
    kv.set("iou_threshold", iou_threshold.to_string());
    let mut manifest = Manifest::begin(
        &out,
        "eval",
        ctx.seed_override.unwrap_or(0),
        &kv,
        &[("results", &results), ("gt", &gt), ("out", &out)],
    )?;
    let result = (|| {
        let report = evaluate_dirs(&results, &gt, iou_threshold)?;
        let mut files: Vec<PathBuf> = Vec::new();
        files.push(write_file(&out.join(REPORT_FILE), report.to_text())?);
        files.push(write_file(&out.join(CSV_FILE), report.to_csv())?);
        let per_seq = |f: &dyn Fn(&SequenceReport) -> f64| -> Vec<(f64, f64)> {
            report.sequences.iter().enumerate().map(|(i, s)| (i as f64, f(s))).collect()
        };
        let svg = line_chart(
            "per-sequence metrics",
            "sequence index",
            "value",
            &[
                Series::new("IDF1", per_seq(&|s| s.counts.idf1().unwrap_or(f64::NAN))),
                Series::new("MOTA", per_seq(&|s| s.counts.mota().unwrap_or(f64::NAN))),
                Series::new("association accuracy", per_seq(&|s| s.counts.association_accuracy())),
            ],
        );
        files.push(write_file(&out.join(PLOT_FILE), svg)?);
        print!("{}", report.to_text());
        Ok((report, files))
    })();
    match result {
        Ok((report, files)) => {
            manifest.add_all(files);
            manifest.finish(Ok(report))
        }
        Err(e) => manifest.finish(Err(e)),
    }
}
