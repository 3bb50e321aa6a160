//! Row-wise kernels with hand-written derivatives.

use ndarray::{Array2, Axis};

use super::params::{LayerNorm, Linear};
use crate::real::Real;

const LN_EPS: f64 = 1e-5;

pub(crate) struct LnCache<T> {
    pub xhat: Array2<T>,
    pub inv_std: Vec<T>,
}

pub(crate) fn layer_norm<T: Real>(x: &Array2<T>, p: &LayerNorm<T>) -> (Array2<T>, LnCache<T>) {
    let (n, d) = x.dim();
    let eps = T::of(LN_EPS);
    let dt = T::of(d as f64);
    let mut xhat = Array2::zeros((n, d));
    let mut inv_std = Vec::with_capacity(n);
    let gamma = p.gamma.as_slice().unwrap();
    let beta = p.beta.as_slice().unwrap();
    let mut y = Array2::zeros((n, d));
    for ((row, mut xh), mut yr) in x.rows().into_iter().zip(xhat.rows_mut()).zip(y.rows_mut()) {
        let mean = row.iter().copied().sum::<T>() / dt;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dt;
        let inv = T::one() / (var + eps).sqrt();
        inv_std.push(inv);
        for (k, (&v, h)) in row.iter().zip(xh.iter_mut()).enumerate() {
            *h = (v - mean) * inv;
            yr[k] = gamma[k] * *h + beta[k];
        }
    }
    (y, LnCache { xhat, inv_std })
}

/// Returns `dx`; accumulates into `grad`.
pub(crate) fn layer_norm_backward<T: Real>(
    dy: &Array2<T>,
    cache: &LnCache<T>,
    p: &LayerNorm<T>,
    grad: &mut LayerNorm<T>,
) -> Array2<T> {
    let (n, d) = dy.dim();
    let dt = T::of(d as f64);
    let gamma = p.gamma.as_slice().unwrap();
    let mut dx = Array2::zeros((n, d));
    {
        let dg = grad.gamma.as_slice_mut().unwrap();
        for (dyr, xh) in dy.rows().into_iter().zip(cache.xhat.rows()) {
            for k in 0..d {
                dg[k] += dyr[k] * xh[k];
            }
        }
    }
    grad.beta += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let mut dxhat = vec![T::zero(); d];
    for i in 0..n {
        let dyr = dy.row(i);
        let xh = cache.xhat.row(i);
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for k in 0..d {
            dxhat[k] = dyr[k] * gamma[k];
            m1 += dxhat[k];
            m2 += dxhat[k] * xh[k];
        }
        m1 /= dt;
        m2 /= dt;
        let inv = cache.inv_std[i];
        let mut out = dx.row_mut(i);
        for k in 0..d {
            out[k] = inv * (dxhat[k] - m1 - xh[k] * m2);
        }
    }
    dx
}

pub(crate) fn linear<T: Real>(x: &Array2<T>, p: &Linear<T>) -> Array2<T> {
    x.dot(&p.weight) + &p.bias
}

/// Returns `dx`; accumulates weight and bias gradients.
pub(crate) fn linear_backward<T: Real>(
    x: &Array2<T>,
    dy: &Array2<T>,
    p: &Linear<T>,
    grad: &mut Linear<T>,
) -> Array2<T> {
    linear_backward_params(x, dy, grad);
    dy.dot(&p.weight.t())
}

pub(crate) fn linear_backward_params<T: Real>(x: &Array2<T>, dy: &Array2<T>, grad: &mut Linear<T>) {
    ndarray::linalg::general_mat_mul(T::one(), &x.t(), dy, T::one(), &mut grad.weight);
    grad.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let th = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + T::of(3.0) * a * x * x)
}

/// In-place numerically stable softmax of one slice.
pub(crate) fn softmax_in_place<T: Real>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn softmax_rows<T: Real>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        softmax_in_place(row.as_slice_mut().unwrap());
    }
    out
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

#[inline]
pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * *xv;
    }
}
