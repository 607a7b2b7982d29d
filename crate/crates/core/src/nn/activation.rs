//! Elementwise activations and the softmax head.

use ndarray::{Array, Array2, Dimension};

pub fn relu<D: Dimension>(x: &Array<f64, D>) -> Array<f64, D> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient of relu given the forward *input*.
pub fn relu_backward<D: Dimension>(x: &Array<f64, D>, grad_out: &Array<f64, D>) -> Array<f64, D> {
    let mut g = grad_out.clone();
    ndarray::Zip::from(&mut g).and(x).for_each(|gv, &xv| {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    });
    g
}

pub fn sigmoid<D: Dimension>(x: &Array<f64, D>) -> Array<f64, D> {
    x.mapv(|v| {
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    })
}

/// Gradient of sigmoid given the forward *output*.
pub fn sigmoid_backward<D: Dimension>(
    y: &Array<f64, D>,
    grad_out: &Array<f64, D>,
) -> Array<f64, D> {
    let mut g = grad_out.clone();
    ndarray::Zip::from(&mut g).and(y).for_each(|gv, &yv| {
        *gv *= yv * (1.0 - yv);
    });
    g
}

/// Row-wise stable softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}
