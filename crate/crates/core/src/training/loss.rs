//! Training objectives.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::real::Real;

/// Mean cross-entropy over rows with a target. Returns the loss and its
/// gradient with respect to the logits (zero rows for unsupervised queries).
pub fn id_loss<T: Real>(logits: &Array2<T>, targets: &[Option<usize>]) -> (f64, Array2<T>) {
    let mut grad = Array2::zeros(logits.dim());
    let n = targets.iter().filter(|t| t.is_some()).count();
    if n == 0 {
        log::warn!("id_loss: no supervised detections, returning 0");
        return (0.0, grad);
    }
    let inv = 1.0 / n as f64;
    let mut total = 0.0;
    for (i, target) in targets.iter().enumerate() {
        let Some(k) = *target else { continue };
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
        let sum: f64 = row.iter().map(|v| (v.f64() - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[k].f64();
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            let p = (row[j].f64() - lse).exp();
            *g = T::of((p - if j == k { 1.0 } else { 0.0 }) * inv);
        }
    }
    (total * inv, grad)
}

/// Loss weights `λ_cls, λ_L1, λ_giou, λ_id`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
    pub id: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 2.0,
            l1: 5.0,
            giou: 2.0,
            id: 1.0,
        }
    }
}

/// Loss components. With the synthetic detector only `id` is ever non-zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
    pub id: f64,
}

pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    for (name, v) in [("lambda_cls", w.cls), ("lambda_L1", w.l1), ("lambda_giou", w.giou), ("lambda_id", w.id)] {
        if !(v >= 0.0) {
            return Err(Error::config(name, format!("weight {v} must be non-negative")));
        }
    }
    Ok(w.cls * c.cls + w.l1 * c.l1 + w.giou * c.giou + w.id * c.id)
}

/// Identity-classification loss of the re-id baseline: cross-entropy against a
/// fixed class per trajectory.
pub fn reid_objective(logits: &Array2<f64>, classes: &[usize]) -> (f64, Array2<f64>) {
    let targets: Vec<Option<usize>> = classes.iter().map(|&c| Some(c)).collect();
    id_loss(logits, &targets)
}

/// InfoNCE over cosine similarities. Each detection with at least one positive
/// (same identity, different frame) is an anchor; every other detection in the
/// batch is in its denominator. Returns the mean anchor loss and the gradient
/// with respect to the embeddings.
pub fn contra_objective(
    embeddings: &Array2<f64>,
    identities: &[u32],
    frames: &[i64],
    temperature: f64,
) -> (f64, Array2<f64>) {
    let n = embeddings.nrows();
    let mut grad = Array2::zeros(embeddings.dim());
    let norms: Vec<f64> = embeddings.rows().into_iter().map(|r| r.dot(&r).sqrt().max(1e-12)).collect();
    let unit = Array2::from_shape_fn(embeddings.dim(), |(i, j)| embeddings[(i, j)] / norms[i]);
    let sim = unit.dot(&unit.t());
    // d loss / d sim, accumulated then pushed through the normalisation.
    let mut dsim = Array2::<f64>::zeros((n, n));
    let mut anchors = 0usize;
    let mut total = 0.0;
    for i in 0..n {
        let pos: Vec<usize> = (0..n)
            .filter(|&j| j != i && identities[j] == identities[i] && frames[j] != frames[i])
            .collect();
        if pos.is_empty() {
            continue;
        }
        anchors += 1;
        let max = (0..n).filter(|&j| j != i).map(|j| sim[(i, j)] / temperature).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..n).filter(|&j| j != i).map(|j| (sim[(i, j)] / temperature - max).exp()).sum();
        let lse = max + z.ln();
        let w = 1.0 / pos.len() as f64;
        for &p in &pos {
            total += w * (lse - sim[(i, p)] / temperature);
            dsim[(i, p)] -= w / temperature;
        }
        for j in (0..n).filter(|&j| j != i) {
            dsim[(i, j)] += (sim[(i, j)] / temperature - lse).exp() / temperature;
        }
    }
    if anchors == 0 {
        log::warn!("contra_objective: no positive pairs, returning 0");
        return (0.0, grad);
    }
    dsim.mapv_inplace(|v| v / anchors as f64);
    // sim = U Uᵀ, so dU = (dS + dSᵀ) U; then through u = e / |e|.
    let sym = &dsim + &dsim.t();
    let du = sym.dot(&unit);
    for i in 0..n {
        let proj: f64 = du.row(i).dot(&unit.row(i));
        for j in 0..embeddings.ncols() {
            grad[(i, j)] = (du[(i, j)] - proj * unit[(i, j)]) / norms[i];
        }
    }
    (total / anchors as f64, grad)
}
