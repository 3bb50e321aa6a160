//! Grid ablations: self-attention, Hungarian matching, augmentation and the
//! λ_occ / λ_sw sweep. Each distinct training setting is trained once; the
//! Hungarian toggle only changes inference.

use std::path::{Path, PathBuf};

use idtrack::checkpoint::Checkpoint;
use idtrack::eval::{evaluate_sequence, EvalReport, SequenceReport};
use idtrack::kv::{parse_bool, KvFile};
use idtrack::scene::{generate_corpus, LabeledSequence};
use idtrack::training::{TrainConfig, TrainOptions};
use idtrack::Real;

use super::synth::scene_config;
use super::track::{ground_truth, track_corpus};
use super::train::train_model;
use super::{decoder_config, inference_config, write_file, Context, InferenceFlags};
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use crate::plot::{line_chart, Series};

pub const CSV_FILE: &str = "ablation.csv";
/// Test sequences are seeded from `seed + TEST_SEED_OFFSET`.
const TEST_SEED_OFFSET: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setting {
    pub self_attention: bool,
    pub hungarian: bool,
    pub augmentation: bool,
    pub lambda_occ: f64,
    pub lambda_sw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub setting: Setting,
    pub idf1: f64,
    pub mota: f64,
    pub id_switches: usize,
    pub association_accuracy: f64,
}

impl AblationRow {
    pub const CSV_HEADER: &'static str =
        "self_attention,hungarian,augmentation,lambda_occ,lambda_sw,idf1,mota,id_switches,association_accuracy";

    pub fn to_csv(&self) -> String {
        let s = &self.setting;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            s.self_attention,
            s.hungarian,
            s.augmentation,
            s.lambda_occ,
            s.lambda_sw,
            self.idf1,
            self.mota,
            self.id_switches,
            self.association_accuracy
        )
    }

    pub fn parse_csv(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 9 {
            return None;
        }
        Some(Self {
            setting: Setting {
                self_attention: parse_bool(f[0])?,
                hungarian: parse_bool(f[1])?,
                augmentation: parse_bool(f[2])?,
                lambda_occ: f[3].parse().ok()?,
                lambda_sw: f[4].parse().ok()?,
            },
            idf1: f[5].parse().ok()?,
            mota: f[6].parse().ok()?,
            id_switches: f[7].parse().ok()?,
            association_accuracy: f[8].parse().ok()?,
        })
    }
}

fn grid<T: std::str::FromStr + Copy>(kv: &KvFile, key: &str, default: T) -> CliResult<Vec<T>> {
    let v = kv.list(key)?.unwrap_or_else(|| vec![default]);
    if v.is_empty() {
        return Err(CliError::config(format!("`{key}` must list at least one value")));
    }
    Ok(v)
}

fn bool_grid(kv: &KvFile, key: &str, default: bool) -> CliResult<Vec<bool>> {
    match kv.get(key) {
        None => Ok(vec![default]),
        Some(v) => v
            .trim_matches(|c| c == '[' || c == ']')
            .split(',')
            .map(|s| parse_bool(s.trim()).ok_or_else(|| CliError::config(format!("`{key}`: not a boolean list: {v:?}"))))
            .collect(),
    }
}

/// Cartesian product of the grid lists, in a fixed nesting order.
pub fn settings(kv: &KvFile, base: &TrainConfig, self_attention: bool, hungarian: bool) -> CliResult<Vec<Setting>> {
    let mut out = Vec::new();
    for &sa in &bool_grid(kv, "ablate.self_attention", self_attention)? {
        for &aug in &bool_grid(kv, "ablate.augmentation", true)? {
            for &occ in &grid(kv, "ablate.lambda_occ", base.lambda_occ)? {
                for &sw in &grid(kv, "ablate.lambda_sw", base.lambda_sw)? {
                    for &h in &bool_grid(kv, "ablate.hungarian", hungarian)? {
                        out.push(Setting {
                            self_attention: sa,
                            hungarian: h,
                            augmentation: aug,
                            lambda_occ: occ,
                            lambda_sw: sw,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

fn score(test: &[LabeledSequence], results: &[Vec<idtrack::mot::MotRecord>]) -> CliResult<EvalReport> {
    let reports = test
        .iter()
        .zip(results)
        .enumerate()
        .map(|(i, (seq, pred))| SequenceReport {
            name: idtrack::dataset::sequence_name(i),
            counts: evaluate_sequence(&ground_truth(seq), pred, 0.5),
        })
        .collect();
    Ok(EvalReport::from_sequences(reports)?)
}

struct Plan<'a> {
    ctx: &'a Context,
    kv: &'a KvFile,
    base: TrainConfig,
    seed: u64,
    train_set: Vec<LabeledSequence>,
    test_set: Vec<LabeledSequence>,
}

impl Plan<'_> {
    fn run_group<T: Real>(&self, group: &[Setting]) -> CliResult<Vec<AblationRow>> {
        let first = group[0];
        let mut cfg = self.base.clone();
        if first.augmentation {
            cfg.lambda_occ = first.lambda_occ;
            cfg.lambda_sw = first.lambda_sw;
        } else {
            cfg.lambda_occ = 0.0;
            cfg.lambda_sw = 0.0;
        }
        let mut dec = decoder_config(self.kv, self.seed, self.train_set[0].feature_dim)?;
        dec.self_attention = first.self_attention;
        let options = TrainOptions {
            mode: self.ctx.mode(),
            ..TrainOptions::default()
        };
        let bytes = train_model::<T>(&self.train_set, &cfg, &dec, None, &options, &mut |_| Ok(()))?;
        let model = Checkpoint::<T>::decode(&bytes)?.model;
        let mut rows = Vec::new();
        for s in group {
            let flags = InferenceFlags {
                hungarian: s.hungarian,
                ..InferenceFlags::default()
            };
            let mut inf = inference_config(self.kv, &flags, Some(cfg.window))?;
            inf.use_hungarian = s.hungarian;
            let results = track_corpus(&model, &self.test_set, &inf, self.ctx.mode())?;
            let report = score(&self.test_set, &results)?;
            log::info!("{s:?}: IDF1 {:.4}", report.idf1);
            rows.push(AblationRow {
                setting: *s,
                idf1: report.idf1,
                mota: report.mota,
                id_switches: report.id_switches,
                association_accuracy: report.association_accuracy,
            });
        }
        Ok(rows)
    }
}

/// Metric-vs-hyperparameter curves over rows that differ only in `param`.
fn sweep_plot(rows: &[AblationRow], param: &str, get: fn(&Setting) -> f64) -> Option<String> {
    let anchor = rows.first()?.setting;
    let without = |s: &Setting| {
        let mut s = *s;
        match param {
            "lambda_occ" => s.lambda_occ = 0.0,
            _ => s.lambda_sw = 0.0,
        }
        s
    };
    let picked: Vec<&AblationRow> = rows.iter().filter(|r| without(&r.setting) == without(&anchor)).collect();
    if picked.len() < 2 {
        return None;
    }
    let series = |name: &str, f: fn(&AblationRow) -> f64| {
        Series::new(name, picked.iter().map(|r| (get(&r.setting), f(r))).collect())
    };
    Some(line_chart(
        &format!("metrics vs {param}"),
        param,
        "value",
        &[
            series("IDF1", |r| r.idf1),
            series("MOTA", |r| r.mota),
            series("association accuracy", |r| r.association_accuracy),
        ],
    ))
}

pub fn cmd_ablate(ctx: &Context, config: &Path, out: &Path) -> CliResult<Vec<AblationRow>> {
    let (kv, seed) = ctx.load_config(config)?;
    let out_dir = ctx.path(out);
    let mut manifest = Manifest::begin(&out_dir, "ablate", seed, &kv, &[("config", &ctx.path(config)), ("out", &out_dir)])?;
    let result = (|| {
        let mut base = TrainConfig::default();
        base.apply_kv(&kv)?;
        base.seed = seed;
        if ctx.deterministic {
            base.double_precision = true;
        }
        base.validate()?;
        let train_scene = scene_config(&kv, "scene.")?;
        let mut test_scene = train_scene.clone();
        test_scene.apply_kv(&kv.section("test_scene."))?;
        test_scene.validate()?;
        let count = |key: &str, default: usize| -> CliResult<usize> {
            Ok(kv.parsed(key).map_err(|e| CliError::config(e.to_string()))?.unwrap_or(default))
        };
        let train_set = generate_corpus(&train_scene, count("ablate.train_sequences", 50)?, seed, ctx.mode())?;
        let test_set = generate_corpus(
            &test_scene,
            count("ablate.test_sequences", 10)?,
            seed + TEST_SEED_OFFSET,
            ctx.mode(),
        )?;
        let dec = decoder_config(&kv, seed, train_scene.feature_dim)?;
        let inf = inference_config(&kv, &InferenceFlags::default(), Some(base.window))?;
        let all = settings(&kv, &base, dec.self_attention, inf.use_hungarian)?;

        let plan = Plan {
            ctx,
            kv: &kv,
            base,
            seed,
            train_set,
            test_set,
        };
        // Settings differing only in the Hungarian toggle share one model.
        let mut rows = Vec::new();
        let mut start = 0;
        while start < all.len() {
            let key = |s: &Setting| (s.self_attention, s.augmentation, s.lambda_occ.to_bits(), s.lambda_sw.to_bits());
            let end = start + all[start..].iter().take_while(|s| key(s) == key(&all[start])).count();
            let group = &all[start..end];
            rows.extend(if plan.base.double_precision {
                plan.run_group::<f64>(group)?
            } else {
                plan.run_group::<f32>(group)?
            });
            start = end;
        }

        let mut files: Vec<PathBuf> = Vec::new();
        let mut csv = String::from(AblationRow::CSV_HEADER);
        csv.push('\n');
        for r in &rows {
            csv.push_str(&r.to_csv());
            csv.push('\n');
        }
        files.push(write_file(&out_dir.join(CSV_FILE), &csv)?);
        for (param, get) in [
            ("lambda_occ", (|s: &Setting| s.lambda_occ) as fn(&Setting) -> f64),
            ("lambda_sw", |s: &Setting| s.lambda_sw),
        ] {
            if let Some(svg) = sweep_plot(&rows, param, get) {
                files.push(write_file(&out_dir.join(format!("ablation_{param}.svg")), svg)?);
            }
        }
        print!("{csv}");
        Ok((rows, files))
    })();
    match result {
        Ok((rows, files)) => {
            manifest.add_all(files);
            manifest.finish(Ok(rows))
        }
        Err(e) => manifest.finish(Err(e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_lossless() {
        let row = AblationRow {
            setting: Setting {
                self_attention: true,
                hungarian: false,
                augmentation: true,
                lambda_occ: 0.1 + 0.2,
                lambda_sw: 1.0 / 3.0,
            },
            idf1: 0.912_345_678_901_234_5,
            mota: -0.25,
            id_switches: 17,
            association_accuracy: std::f64::consts::FRAC_1_SQRT_2,
        };
        assert_eq!(AblationRow::parse_csv(&row.to_csv()), Some(row));
        assert_eq!(AblationRow::parse_csv("1,2"), None);
    }

    #[test]
    fn grid_product_order() {
        let kv = KvFile::parse(
            "ablate.lambda_occ = [0, 0.5, 1.0]\nablate.hungarian = [false, true]\n",
            Path::new("c"),
        )
        .unwrap();
        let s = settings(&kv, &TrainConfig::default(), true, false).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!((s[0].lambda_occ, s[0].hungarian), (0.0, false));
        assert_eq!((s[1].lambda_occ, s[1].hungarian), (0.0, true));
        assert_eq!(s[5].lambda_occ, 1.0);
        let single = settings(&KvFile::default(), &TrainConfig::default(), true, false).unwrap();
        assert_eq!(single.len(), 1);
    }
}
