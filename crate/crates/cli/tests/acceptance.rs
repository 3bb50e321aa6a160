//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `IDTRACK_ACCEPTANCE=1,4,9` runs a subset. The process exits non-zero on a
//! failure only when `IDTRACK_ACCEPTANCE_STRICT` is set, so the report can sit
//! inside `cargo test` while an unmet criterion is still visible.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use idtrack::decoder::{decode, forward, gradient, parallel_training_forward, DecodeInput, DecoderConfig, IdModel};
use idtrack::eval::{evaluate_sequence, hungarian, reid_baseline_tracker, EvalReport, ReidConfig, SequenceReport};
use idtrack::geometry::BBox;
use idtrack::id_core::{form_tracklet, Label, TrackerState, TrajectoryWindow, Word};
use idtrack::inference::{track_frame, InferenceConfig, Tracker};
use idtrack::mot::MotRecord;
use idtrack::scene::{generate_corpus, generate_sequence, Detection, LabeledSequence, SceneConfig};
use idtrack::training::{
    assign_training_labels, augment_occlusion, augment_swap, build_window, clip_input, id_loss, sample_clip, train,
    TrainConfig, TrainOptions,
};
use idtrack::{Error, ExecMode};

type Outcome = Result<(bool, String), String>;

fn main() {
    let only: Option<BTreeSet<usize>> = std::env::var("IDTRACK_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|s| s.contains(&n));
    let mut experiments = Experiments::default();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        if !pass {
            failed += 1;
        }
        println!("{} {n:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    };
    if wanted(1) {
        report(1, "gradient correctness", gradient_check());
    }
    if wanted(2) {
        report(2, "permutation equivariance", permutation_equivariance());
    }
    if wanted(3) {
        report(3, "causal-mask equivalence", causal_equivalence());
    }
    if wanted(4) {
        report(4, "assignment oracles", assignment_oracles());
    }
    if wanted(5) {
        report(5, "inference safety fuzz", inference_fuzz());
    }
    if wanted(6) {
        report(6, "end-to-end synthetic learning", experiments.end_to_end());
    }
    if wanted(7) {
        report(7, "id prediction beats cosine re-id", experiments.beats_reid());
    }
    if wanted(8) {
        report(8, "augmentation direction", experiments.augmentation());
    }
    if wanted(9) {
        report(9, "cli determinism", cli_determinism());
    }
    if wanted(10) {
        report(10, "cross-entropy anchor", entropy_anchor());
    }
    if failed > 0 && std::env::var_os("IDTRACK_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn tiny_decoder(window: usize, seed: u64) -> DecoderConfig {
    DecoderConfig {
        feature_dim: 8,
        num_layers: 1,
        num_heads: 2,
        max_rel_offset: window,
        dict_init_sigma: 0.5,
        seed,
        ..DecoderConfig::default()
    }
}

fn tiny_scene(seed: u64) -> SceneConfig {
    SceneConfig {
        num_frames: 24,
        max_objects: 3,
        feature_dim: 8,
        occlusion_prob_per_frame: 0.2,
        occlusion_duration_range: (1, 2),
        birth_prob_per_frame: 0.2,
        death_prob_per_frame: 0.05,
        false_positive_rate: 0.5,
        seed,
        ..SceneConfig::default()
    }
}

/// Real clip pipeline: sample, label, build the window, augment, assemble.
fn clip_from(
    model: &IdModel<f64>,
    seq: &LabeledSequence,
    window: usize,
    lambda: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(DecodeInput<f64>, Vec<Option<usize>>)>, String> {
    let Some(clip) = sample_clip(seq, window, (1, 2), rng) else {
        return Ok(None);
    };
    let Ok(labels) = assign_training_labels(&clip, model.capacity(), rng) else {
        return Ok(None);
    };
    let mut win = build_window(&clip, &labels);
    augment_occlusion(&mut win, lambda, rng);
    augment_swap(&mut win, lambda, rng);
    let (input, targets) = clip_input(model, &clip, &labels, &win, true).map_err(err)?;
    if input.memory.nrows() == 0 || targets.iter().all(Option::is_none) {
        return Ok(None);
    }
    Ok(Some((input, targets)))
}

// 1 -------------------------------------------------------------------------

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let lambda_id = TrainConfig::default().weights.id;
    let model = IdModel::<f64>::init(&tiny_decoder(3, 21), 4).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut found = None;
    for s in 0..50 {
        let seq = generate_sequence(&tiny_scene(100 + s)).map_err(err)?;
        if let Some(c) = clip_from(&model, &seq, 3, 0.3, &mut rng)? {
            if c.0.queries.nrows() >= 4 && c.0.memory.nrows() >= 4 {
                found = Some(c);
                break;
            }
        }
    }
    let (mut input, targets) = found.ok_or("no usable clip")?;
    let loss_at = |m: &IdModel<f64>, input: &mut DecodeInput<f64>| -> Result<f64, String> {
        input.refresh_words(m);
        let (logits, _) = forward(m, input, None).map_err(err)?;
        Ok(lambda_id * id_loss(&logits, &targets).0)
    };
    input.refresh_words(&model);
    let (_, logits, tape) = parallel_training_forward(&model, &input, None).map_err(err)?;
    let (_, dlogits) = id_loss(&logits, &targets);
    let analytic = gradient(&model, &input, &tape, &dlogits.mapv(|v| v * lambda_id)).map_err(err)?;

    let eps = 1e-4;
    let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
    let grads: BTreeMap<String, Array2<f64>> =
        analytic.params().into_iter().map(|(n, a)| (n, a.clone())).collect();
    let mut worst = (0.0f64, String::new());
    for (g, name) in names.iter().enumerate() {
        let shape = model.params()[g].1.dim();
        let mut fd = Array2::<f64>::zeros(shape);
        for idx in ndarray::indices(shape) {
            let mut m = model.clone();
            m.params_mut()[g].1[idx] += eps;
            let up = loss_at(&m, &mut input)?;
            m.params_mut()[g].1[idx] -= 2.0 * eps;
            let down = loss_at(&m, &mut input)?;
            fd[idx] = (up - down) / (2.0 * eps);
        }
        let a = &grads[name];
        let diff = (a - &fd).mapv(|v| v * v).sum().sqrt();
        let norm = a.mapv(|v| v * v).sum().sqrt();
        let rel = diff / (norm + 1e-8);
        if rel > worst.0 || worst.1.is_empty() {
            worst = (rel, name.clone());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst.0 < 1e-3 && secs < 60.0,
        format!("{} groups, worst relative error {:.2e} ({}), {secs:.1}s", names.len(), worst.0, worst.1),
    ))
}

// 2 -------------------------------------------------------------------------

fn permuted(model: &IdModel<f64>, perm: &[Label]) -> IdModel<f64> {
    let mut out = model.clone();
    let old = model.params();
    for (name, p) in out.params_mut() {
        let src = old.iter().find(|(n, _)| *n == name).unwrap().1;
        match name.as_str() {
            "dictionary.words" | "head.weight" => {
                for (l0, &l1) in perm.iter().enumerate() {
                    p.row_mut(l1 as usize - 1).assign(&src.row(l0));
                }
            }
            "head.bias" => {
                for (l0, &l1) in perm.iter().enumerate() {
                    p.column_mut(l1 as usize - 1).assign(&src.column(l0));
                }
            }
            _ => {}
        }
    }
    out
}

fn random_input(model: &IdModel<f64>, rng: &mut ChaCha8Rng) -> DecodeInput<f64> {
    let c = model.config.feature_dim;
    let k = model.capacity() as u32;
    let mut feat = |n: usize| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    };
    let mem_f = feat(8);
    let q_f = feat(5);
    let mem_times: Vec<i64> = vec![0, 0, 0, 1, 1, 2, 2, 2];
    let mem_words: Vec<Word> = (0..8).map(|i| Word::Label(i as u32 % k + 1)).collect();
    let q_times: Vec<i64> = vec![1, 2, 3, 3, 3];
    let qr: Vec<&[f64]> = q_f.iter().map(Vec::as_slice).collect();
    let mr: Vec<&[f64]> = mem_f.iter().map(Vec::as_slice).collect();
    DecodeInput::from_features(model, &qr, q_times, &mr, mem_words, mem_times).unwrap()
}

fn permutation_equivariance() -> Outcome {
    let k = 4usize;
    let model = IdModel::<f64>::init(&tiny_decoder(3, 5), k).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut dev32, mut dev64) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let mut perm: Vec<Label> = (1..=k as Label).collect();
        perm.shuffle(&mut rng);
        let input = random_input(&model, &mut rng);
        let pm = permuted(&model, &perm);
        let mut pinput = input.clone();
        for w in pinput.memory_words.iter_mut() {
            if let Word::Label(l) = *w {
                *w = Word::Label(perm[l as usize - 1]);
            }
        }
        pinput.refresh_words(&pm);
        let cols = |l: usize| if l == k { k } else { perm[l] as usize - 1 };

        let (a, _) = forward(&model, &input, None).map_err(err)?;
        let (b, _) = forward(&pm, &pinput, None).map_err(err)?;
        for i in 0..a.nrows() {
            for l in 0..=k {
                dev64 = dev64.max((a[(i, l)] - b[(i, cols(l))]).abs());
            }
        }

        let (m32, pm32) = (model.cast::<f32>(), pm.cast::<f32>());
        let mut in32 = DecodeInput {
            queries: input.queries.mapv(|v| v as f32),
            query_times: input.query_times.clone(),
            query_words: input.query_words.clone(),
            memory: input.memory.mapv(|v| v as f32),
            memory_times: input.memory_times.clone(),
            memory_words: input.memory_words.clone(),
        };
        in32.refresh_words(&m32);
        let mut pin32 = in32.clone();
        pin32.memory_words = pinput.memory_words.clone();
        pin32.refresh_words(&pm32);
        let (a, _) = forward(&m32, &in32, None).map_err(err)?;
        let (b, _) = forward(&pm32, &pin32, None).map_err(err)?;
        for i in 0..a.nrows() {
            for l in 0..=k {
                dev32 = dev32.max((a[(i, l)] - b[(i, cols(l))]).abs() as f64);
            }
        }
    }
    Ok((
        dev32 < 1e-6 && dev64 < 1e-12,
        format!("100 permutations, max deviation f32 {dev32:.2e}, f64 {dev64:.2e}"),
    ))
}

// 3 -------------------------------------------------------------------------

fn causal_equivalence() -> Outcome {
    let window = 5;
    let model = IdModel::<f64>::init(&tiny_decoder(window, 9), 8).map_err(err)?;
    let c = model.config.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut clips, mut dev, mut leak, mut attempts) = (0, 0.0f64, 0.0f64, 0);
    while clips < 50 {
        attempts += 1;
        if attempts > 1000 {
            return Err("could not draw 50 clips".into());
        }
        let seq = generate_sequence(&tiny_scene(1000 + attempts)).map_err(err)?;
        let Some((input, _)) = clip_from(&model, &seq, window, 0.0, &mut rng)? else { continue };
        clips += 1;
        let (groups, logits, _) = parallel_training_forward(&model, &input, None).map_err(err)?;
        let mut row = 0;
        for (t, block) in &groups {
            let queries: Vec<_> = (row..row + block.nrows())
                .map(|i| {
                    let r = input.queries.row(i);
                    form_tracklet(&r.as_slice().unwrap()[..c], &r.as_slice().unwrap()[c..], *t, Word::Special)
                })
                .collect::<Result<_, _>>()
                .map_err(err)?;
            let memory: Vec<_> = (0..input.memory.nrows())
                .filter(|&j| input.memory_times[j] < *t)
                .map(|j| {
                    let r = input.memory.row(j);
                    let r = r.as_slice().unwrap();
                    form_tracklet(&r[..c], &r[c..], input.memory_times[j], input.memory_words[j])
                })
                .collect::<Result<_, _>>()
                .map_err(err)?;
            if !memory.is_empty() {
                let single = decode(&model, &queries, &memory, *t).map_err(err)?;
                dev = dev.max((&single - block).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b)));
            }
            row += block.nrows();
        }

        // Perturb everything after a cut and compare logits up to the cut.
        let times: BTreeSet<i64> = input.query_times.iter().copied().collect();
        let cut = *times.iter().nth(times.len() / 2).unwrap();
        let mut noisy = input.clone();
        for (i, &t) in input.query_times.iter().enumerate() {
            if t > cut {
                noisy.queries.row_mut(i).mapv_inplace(|v| v + rng.random_range(-3.0..3.0));
            }
        }
        for (j, &t) in input.memory_times.iter().enumerate() {
            if t >= cut {
                noisy.memory.row_mut(j).mapv_inplace(|v| v + rng.random_range(-3.0..3.0));
            }
        }
        let (_, after, _) = parallel_training_forward(&model, &noisy, None).map_err(err)?;
        for (i, &t) in input.query_times.iter().enumerate() {
            if t <= cut {
                let d = (&after.row(i) - &logits.row(i)).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
                leak = leak.max(d);
            }
        }
    }
    Ok((
        dev < 1e-9 && leak < 1e-9,
        format!("{clips} clips, batched vs per-frame {dev:.2e}, future perturbation {leak:.2e}"),
    ))
}

// 4 -------------------------------------------------------------------------

fn permutations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (i, &x) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut tail in permutations(&rest, k - 1) {
            tail.insert(0, x);
            out.push(tail);
        }
    }
    out
}

fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let h = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    inter / (a.w * a.h + b.w * b.h - inter)
}

/// Every partial one-to-one map from `n` rows into `m` columns.
fn partial_maps(n: usize, m: usize) -> Vec<Vec<Option<usize>>> {
    fn go(i: usize, n: usize, m: usize, used: &mut Vec<bool>, cur: &mut Vec<Option<usize>>, out: &mut Vec<Vec<Option<usize>>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        cur.push(None);
        go(i + 1, n, m, used, cur, out);
        cur.pop();
        for j in 0..m {
            if !used[j] {
                used[j] = true;
                cur.push(Some(j));
                go(i + 1, n, m, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(0, n, m, &mut vec![false; m], &mut Vec::new(), &mut out);
    out
}

struct OracleCounts {
    idf1: f64,
    mota: f64,
    idsw: usize,
}

fn metric_oracle(gt: &[MotRecord], pred: &[MotRecord]) -> OracleCounts {
    let frames: BTreeSet<u32> = gt.iter().chain(pred).map(|r| r.frame).collect();
    let (mut fp, mut fn_, mut idsw) = (0, 0, 0);
    let mut last: HashMap<i64, i64> = HashMap::new();
    for f in frames {
        let g: Vec<&MotRecord> = gt.iter().filter(|r| r.frame == f).collect();
        let p: Vec<&MotRecord> = pred.iter().filter(|r| r.frame == f).collect();
        let mut best: Option<(usize, f64, Vec<Option<usize>>)> = None;
        for map in partial_maps(g.len(), p.len()) {
            let valid = map
                .iter()
                .enumerate()
                .all(|(i, m)| m.is_none_or(|j| iou(&g[i].bbox, &p[j].bbox) >= 0.5));
            if !valid {
                continue;
            }
            let count = map.iter().flatten().count();
            let sum: f64 = map.iter().enumerate().filter_map(|(i, m)| m.map(|j| iou(&g[i].bbox, &p[j].bbox))).sum();
            if best.as_ref().is_none_or(|b| count > b.0 || (count == b.0 && sum > b.1)) {
                best = Some((count, sum, map));
            }
        }
        let (count, _, map) = best.unwrap();
        fp += p.len() - count;
        fn_ += g.len() - count;
        for (i, m) in map.iter().enumerate() {
            if let Some(j) = m {
                if let Some(prev) = last.insert(g[i].id, p[*j].id) {
                    if prev != p[*j].id {
                        idsw += 1;
                    }
                }
            }
        }
    }
    let gids: Vec<i64> = gt.iter().map(|r| r.id).collect::<BTreeSet<_>>().into_iter().collect();
    let pids: Vec<i64> = pred.iter().map(|r| r.id).collect::<BTreeSet<_>>().into_iter().collect();
    let overlap = |g: i64, p: i64| {
        gt.iter()
            .filter(|a| a.id == g)
            .filter(|a| pred.iter().any(|b| b.id == p && b.frame == a.frame && iou(&a.bbox, &b.bbox) >= 0.5))
            .count()
    };
    let idtp = partial_maps(gids.len(), pids.len())
        .into_iter()
        .map(|map| map.iter().enumerate().filter_map(|(i, m)| m.map(|j| overlap(gids[i], pids[j]))).sum::<usize>())
        .max()
        .unwrap_or(0);
    OracleCounts {
        idf1: 2.0 * idtp as f64 / (gt.len() + pred.len()) as f64,
        mota: 1.0 - (fp + fn_ + idsw) as f64 / gt.len() as f64,
        idsw,
    }
}

fn random_case(rng: &mut ChaCha8Rng) -> (Vec<MotRecord>, Vec<MotRecord>) {
    loop {
        let frames = rng.random_range(1..=6u32);
        let tracks = rng.random_range(1..=4i64);
        let (mut gt, mut pred) = (Vec::new(), Vec::new());
        let mut ids: Vec<i64> = (1..=tracks).collect();
        for f in 1..=frames {
            let mut used = HashSet::new();
            let fresh = |rng: &mut ChaCha8Rng, used: &mut HashSet<i64>| loop {
                let id = rng.random_range(1..=7);
                if used.insert(id) {
                    return id;
                }
            };
            for g in 1..=tracks {
                if !rng.random_bool(0.8) {
                    continue;
                }
                let b = BBox {
                    x: rng.random_range(0.0..50.0),
                    y: rng.random_range(0.0..50.0),
                    w: rng.random_range(20.0..40.0),
                    h: rng.random_range(20.0..40.0),
                };
                gt.push(MotRecord { frame: f, id: g, bbox: b, conf: 1.0 });
                if rng.random_bool(0.15) {
                    ids[g as usize - 1] = rng.random_range(1..=7);
                }
                if rng.random_bool(0.85) {
                    let want = ids[g as usize - 1];
                    let id = if used.insert(want) { want } else { fresh(rng, &mut used) };
                    let j = |rng: &mut ChaCha8Rng| rng.random_range(-6.0..6.0);
                    let bbox = BBox { x: b.x + j(rng), y: b.y + j(rng), w: b.w + j(rng), h: b.h + j(rng) };
                    pred.push(MotRecord { frame: f, id, bbox, conf: 1.0 });
                }
            }
            if rng.random_bool(0.3) {
                let id = fresh(rng, &mut used);
                let bbox = BBox { x: rng.random_range(0.0..50.0), y: rng.random_range(0.0..50.0), w: 30.0, h: 30.0 };
                pred.push(MotRecord { frame: f, id, bbox, conf: 1.0 });
            }
        }
        if !gt.is_empty() {
            return (gt, pred);
        }
    }
}

fn assignment_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst_cost = 0.0f64;
    let mut bad_shape = 0;
    for case in 0..1000 {
        let (n, m) = (rng.random_range(1..=6), rng.random_range(1..=6));
        // Every fourth matrix uses small integers so ties are common.
        let cost = Array2::from_shape_fn((n, m), |_| {
            if case % 4 == 0 {
                rng.random_range(0..4) as f64
            } else {
                rng.random_range(0.0..10.0)
            }
        });
        let pairs = hungarian(&cost).map_err(err)?;
        let rows: BTreeSet<usize> = pairs.iter().map(|p| p.0).collect();
        let cols: BTreeSet<usize> = pairs.iter().map(|p| p.1).collect();
        if pairs.len() != n.min(m) || rows.len() != pairs.len() || cols.len() != pairs.len() {
            bad_shape += 1;
        }
        let got: f64 = pairs.iter().map(|&(i, j)| cost[(i, j)]).sum();
        let best = if n <= m {
            permutations(&(0..m).collect::<Vec<_>>(), n)
                .iter()
                .map(|p| p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        } else {
            permutations(&(0..n).collect::<Vec<_>>(), m)
                .iter()
                .map(|p| p.iter().enumerate().map(|(j, &i)| cost[(i, j)]).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        };
        worst_cost = worst_cost.max((got - best).abs());
    }

    let mut mismatches = 0;
    for _ in 0..500 {
        let (gt, pred) = random_case(&mut rng);
        let lib = evaluate_sequence(&gt, &pred, 0.5);
        let oracle = metric_oracle(&gt, &pred);
        let idf1 = lib.idf1().map_err(err)?;
        let mota = lib.mota().map_err(err)?;
        if (idf1 - oracle.idf1).abs() > 1e-12 || (mota - oracle.mota).abs() > 1e-12 || lib.id_switches != oracle.idsw {
            mismatches += 1;
        }
    }
    Ok((
        worst_cost < 1e-9 && bad_shape == 0 && mismatches == 0,
        format!(
            "1000 matrices (max cost gap {worst_cost:.1e}, {bad_shape} malformed), 500 metric cases with {mismatches} mismatches"
        ),
    ))
}

// 5 -------------------------------------------------------------------------

fn inference_fuzz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut frames, mut episodes, mut capacity_errors) = (0usize, 0usize, 0usize);
    let mut violations: Vec<String> = Vec::new();
    while frames < 10_000 {
        episodes += 1;
        let k = rng.random_range(2..=8usize);
        let window = rng.random_range(1..=4usize);
        let dec = DecoderConfig {
            feature_dim: 4,
            dict_init_sigma: 1.0,
            ..tiny_decoder(window, episodes as u64)
        };
        let model = IdModel::<f64>::init(&dec, k).map_err(err)?;
        let config = loop {
            let c = InferenceConfig {
                lambda_det: rng.random_range(0.0..0.5),
                lambda_new: rng.random_range(0.0..0.9),
                lambda_id: rng.random_range(0.0..0.5),
                use_hungarian: rng.random_bool(0.5),
                miss_tolerance: rng.random_range(0..6),
                restrict_to_active: rng.random_bool(0.7),
                mask_special: rng.random_bool(0.5),
                strict_newborns: rng.random_bool(0.5),
                window,
            };
            if c.validate().is_ok() {
                break c;
            }
        };
        let mut state = TrackerState::new(k, config.miss_tolerance);
        let mut win = TrajectoryWindow::<f64>::new(window);
        let mut owner: HashMap<u64, Label> = HashMap::new();
        let mut current: HashMap<Label, u64> = HashMap::new();
        for t in 0..rng.random_range(20..200i64) {
            frames += 1;
            // Mostly below capacity so labels recycle; occasionally a flood.
            let n = if rng.random_bool(0.05) { rng.random_range(0..=k + 2) } else { rng.random_range(0..=k / 2) };
            let dets: Vec<Detection> = (0..n)
                .map(|_| Detection {
                    bbox: BBox { x: 0.0, y: 0.0, w: 10.0, h: 10.0 },
                    confidence: rng.random_range(0.0..1.0),
                    feature: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                })
                .collect();
            match track_frame(&dets, &mut state, &mut win, &model, &config, t) {
                Ok(a) => {
                    let labels: HashSet<Label> = a.entries.iter().map(|e| e.label).collect();
                    let exts: HashSet<u64> = a.entries.iter().map(|e| e.external_id).collect();
                    if labels.len() != a.entries.len() || exts.len() != a.entries.len() {
                        violations.push(format!("duplicate label or id at frame {t}"));
                    }
                    for e in &a.entries {
                        if e.label == 0 || e.label as usize > k {
                            violations.push(format!("label {} outside 1..={k}", e.label));
                        }
                        if e.newborn {
                            if owner.insert(e.external_id, e.label).is_some() {
                                violations.push(format!("external id {} issued twice", e.external_id));
                            }
                            current.insert(e.label, e.external_id);
                        } else if current.get(&e.label) != Some(&e.external_id) {
                            violations.push(format!("label {} changed external id without a birth", e.label));
                        }
                    }
                }
                Err(Error::Capacity { .. }) => {
                    capacity_errors += 1;
                    if state.active().len() != k {
                        violations.push(format!("capacity error with {} of {k} labels active", state.active().len()));
                    }
                    break;
                }
                Err(e) => {
                    violations.push(format!("unexpected error: {e}"));
                    break;
                }
            }
        }
    }
    let detail = format!(
        "{frames} frames over {episodes} episodes, {capacity_errors} capacity errors at K, {} violations{}",
        violations.len(),
        violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
    );
    Ok((violations.is_empty(), detail))
}

// 6, 7, 8 -------------------------------------------------------------------

const WINDOW: usize = 19;
const TIME_BUDGET_SECS: f64 = 600.0;

fn clean_scene() -> SceneConfig {
    SceneConfig {
        num_frames: 60,
        max_objects: 8,
        feature_dim: 32,
        appearance_noise_sigma: 0.1,
        occlusion_prob_per_frame: 0.05,
        occlusion_duration_range: (2, 6),
        ..SceneConfig::default()
    }
}

fn hard_scene() -> SceneConfig {
    SceneConfig {
        appearance_noise_sigma: 0.2,
        occlusion_prob_per_frame: 0.15,
        occlusion_duration_range: (5, 15),
        ..clean_scene()
    }
}

fn decoder_config() -> DecoderConfig {
    DecoderConfig {
        feature_dim: 32,
        num_layers: 3,
        num_heads: 4,
        max_rel_offset: WINDOW,
        seed: 7,
        ..DecoderConfig::default()
    }
}

fn train_config(epochs: usize, lambda_occ: f64, lambda_sw: f64) -> TrainConfig {
    TrainConfig {
        window: WINDOW,
        capacity: 16,
        batch_size: 4,
        total_epochs: epochs,
        decay_epochs: vec![epochs * 4 / 5],
        learning_rate: 3e-3,
        grad_clip_norm: 1.0,
        lambda_occ,
        lambda_sw,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn inference_config() -> InferenceConfig {
    InferenceConfig {
        window: WINDOW,
        use_hungarian: true,
        miss_tolerance: WINDOW,
        ..InferenceConfig::default()
    }
}

fn oracle_frames(seq: &LabeledSequence) -> Vec<Vec<Detection>> {
    seq.frames
        .iter()
        .map(|f| f.iter().filter(|d| d.gt_id.is_some()).map(|d| d.detection.clone()).collect())
        .collect()
}

fn ground_truth(seq: &LabeledSequence) -> Vec<MotRecord> {
    let mut out = Vec::new();
    for (t, f) in seq.frames.iter().enumerate() {
        for d in f {
            if let Some(id) = d.gt_id {
                out.push(MotRecord { frame: t as u32 + 1, id: id as i64, bbox: d.detection.bbox, conf: 1.0 });
            }
        }
    }
    out
}

/// Track until the end or until the label pool runs dry; frames after a
/// capacity failure stay empty and count as misses.
fn track_partial(model: &IdModel<f32>, frames: &[Vec<Detection>]) -> Result<(Vec<MotRecord>, bool), String> {
    let mut tracker = Tracker::new(model, inference_config()).map_err(err)?;
    let mut out = Vec::new();
    for (t, dets) in frames.iter().enumerate() {
        match tracker.step(dets) {
            Ok(a) => out.extend(a.entries.iter().map(|e| MotRecord {
                frame: t as u32 + 1,
                id: e.external_id as i64,
                bbox: dets[e.index].bbox,
                conf: dets[e.index].confidence,
            })),
            Err(Error::Capacity { .. }) => return Ok((out, true)),
            Err(e) => return Err(err(e)),
        }
    }
    Ok((out, false))
}

struct Scores {
    idf1: f64,
    aa: f64,
    exhausted: usize,
}

fn score_model(model: &IdModel<f32>, test: &[LabeledSequence]) -> Result<Scores, String> {
    let mut reports = Vec::new();
    let mut exhausted = 0;
    for (i, seq) in test.iter().enumerate() {
        let (pred, ran_out) = track_partial(model, &oracle_frames(seq))?;
        exhausted += ran_out as usize;
        reports.push(SequenceReport { name: i.to_string(), counts: evaluate_sequence(&ground_truth(seq), &pred, 0.5) });
    }
    let r = EvalReport::from_sequences(reports).map_err(err)?;
    Ok(Scores { idf1: r.idf1, aa: r.association_accuracy, exhausted })
}

fn score_reid(test: &[LabeledSequence]) -> Result<f64, String> {
    let config = ReidConfig { window: WINDOW, use_hungarian: true, miss_tolerance: WINDOW, ..ReidConfig::default() };
    let encode = |f: &[f32]| f.iter().map(|&v| v as f64).collect();
    let mut reports = Vec::new();
    for (i, seq) in test.iter().enumerate() {
        let pred = reid_baseline_tracker(&oracle_frames(seq), &encode, &config).map_err(err)?;
        reports.push(SequenceReport { name: i.to_string(), counts: evaluate_sequence(&ground_truth(seq), &pred, 0.5) });
    }
    Ok(EvalReport::from_sequences(reports).map_err(err)?.idf1)
}

fn fit(corpus: &[LabeledSequence], config: &TrainConfig) -> Result<(IdModel<f32>, f64), String> {
    let start = Instant::now();
    let out = train::<f32>(corpus, config, &decoder_config(), None, &TrainOptions::default(), &mut |_| Ok(()))
        .map_err(err)?;
    Ok((out.checkpoint.model, start.elapsed().as_secs_f64()))
}

/// Hard-split models are shared between criteria 7 and 8.
#[derive(Default)]
struct Experiments {
    hard_train: Option<Vec<LabeledSequence>>,
    hard_test: Option<Vec<LabeledSequence>>,
    hard: BTreeMap<&'static str, Result<Scores, String>>,
}

const HARD_EPOCHS: usize = 120;

impl Experiments {
    fn end_to_end(&mut self) -> Outcome {
        let train_set = generate_corpus(&clean_scene(), 200, 1000, ExecMode::Parallel).map_err(err)?;
        let test = generate_corpus(&clean_scene(), 20, 5000, ExecMode::Parallel).map_err(err)?;
        let (model, secs) = fit(&train_set, &train_config(120, 0.2, 0.2))?;
        let s = score_model(&model, &test)?;
        Ok((
            secs <= TIME_BUDGET_SECS && s.aa >= 0.95 && s.idf1 >= 0.90,
            format!(
                "trained {secs:.0}s, AA {:.4}, IDF1 {:.4}, {} sequences hit capacity",
                s.aa, s.idf1, s.exhausted
            ),
        ))
    }

    fn hard_run(&mut self, key: &'static str, lambda_occ: f64, lambda_sw: f64) -> Result<&Scores, String> {
        if !self.hard.contains_key(key) {
            let result = (|| {
                if self.hard_train.is_none() {
                    self.hard_train = Some(generate_corpus(&hard_scene(), 200, 1000, ExecMode::Parallel).map_err(err)?);
                    self.hard_test = Some(generate_corpus(&hard_scene(), 20, 9000, ExecMode::Parallel).map_err(err)?);
                }
                let (model, _) = fit(self.hard_train.as_ref().unwrap(), &train_config(HARD_EPOCHS, lambda_occ, lambda_sw))?;
                score_model(&model, self.hard_test.as_ref().unwrap())
            })();
            self.hard.insert(key, result);
        }
        self.hard[key].as_ref().map_err(Clone::clone)
    }

    fn beats_reid(&mut self) -> Outcome {
        let ours = self.hard_run("aug", 0.5, 0.5)?.idf1;
        let reid = score_reid(self.hard_test.as_ref().unwrap())?;
        Ok((
            ours >= reid + 0.05,
            format!("id prediction IDF1 {ours:.4} vs cosine re-id {reid:.4} (needs +0.05)"),
        ))
    }

    fn augmentation(&mut self) -> Outcome {
        let aug = self.hard_run("aug", 0.5, 0.5)?.idf1;
        let none = self.hard_run("none", 0.0, 0.0)?.idf1;
        let heavy = self.hard_run("heavy", 1.0, 0.5)?.idf1;
        Ok((
            aug >= none + 0.01 && heavy <= aug,
            format!("IDF1 with augmentation {aug:.4}, without {none:.4}, occlusion 1.0 {heavy:.4}"),
        ))
    }
}

// 9 -------------------------------------------------------------------------

const DET_SCENE: &str = "\
sequences = 2
scene.num_frames = 14
scene.max_objects = 3
scene.feature_dim = 4
scene.false_positive_rate = 0.3
";

const DET_TRAIN: &str = "\
T = 3
capacity = 12
total_epochs = 2
batch_size = 2
decay_epochs = [1]
learning_rate = 0.001
decoder.num_layers = 1
decoder.num_heads = 2
track.miss_tolerance = 3
";

fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "manifest.ini") {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn cli_determinism() -> Outcome {
    let run_once = || -> Result<BTreeMap<String, Vec<u8>>, String> {
        let dir = tempfile::tempdir().map_err(err)?;
        let w = dir.path();
        fs::write(w.join("scene.ini"), DET_SCENE).map_err(err)?;
        fs::write(w.join("train.ini"), DET_TRAIN).map_err(err)?;
        let ws = w.to_str().unwrap();
        let steps: [&[&str]; 3] = [
            &["synth", "--config", "scene.ini", "--out", "data"],
            &["train", "--config", "train.ini", "--data", "data", "--out", "model"],
            &["track", "--checkpoint", "model/model.ckpt", "--data", "data", "--out", "tracks", "--config", "train.ini"],
        ];
        for args in steps {
            let mut full = vec!["idtrack", "--workdir", ws, "--deterministic", "--seed", "42"];
            full.extend_from_slice(args);
            let code = idtrack_cli::run(full);
            if code != 0 {
                return Err(format!("{} exited with {code}", args[0]));
            }
        }
        Ok(artifacts(w))
    };
    let a = run_once()?;
    let b = run_once()?;
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let same_set = a.keys().eq(b.keys());
    Ok((
        same_set && differing.is_empty() && a.len() > 5,
        format!("{} artifacts compared, {} differ", a.len(), differing.len()),
    ))
}

// 10 ------------------------------------------------------------------------

fn entropy_anchor() -> Outcome {
    let mut worst = 0.0f64;
    for (classes, expected) in [(3usize, 3f64.ln()), (51, 51f64.ln())] {
        for fill in [0.0, 1.7, -4.2] {
            let logits = Array2::<f64>::from_elem((4, classes), fill);
            let targets: Vec<Option<usize>> = (0..4).map(|i| Some(i * 7 % classes)).collect();
            let (loss, _) = id_loss(&logits, &targets);
            worst = worst.max((loss - expected).abs());
        }
    }
    Ok((worst < 1e-9, format!("max deviation from ln 3 / ln 51: {worst:.1e}")))
}
