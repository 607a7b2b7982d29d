//! Per-channel batch normalization over (N, H, W).

use super::ParamBlock;
use ndarray::{s, Array1, Array4};

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub grad_gamma: Array1<f64>,
    pub grad_beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    /// Fraction of the old running statistic kept per training step.
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            grad_gamma: Array1::zeros(channels),
            grad_beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.9,
            eps: 1e-5,
        }
    }

    fn batch_stats(&self, x: &Array4<f64>) -> (Array1<f64>, Array1<f64>) {
        let (n, c, h, w) = x.dim();
        let m = (n * h * w) as f64;
        let mut mean = Array1::zeros(c);
        let mut var = Array1::zeros(c);
        for ci in 0..c {
            let slice = x.slice(s![.., ci, .., ..]);
            let mu = slice.sum() / m;
            mean[ci] = mu;
            var[ci] = slice.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m;
        }
        (mean, var)
    }

    /// Training mode normalizes with batch statistics (biased variance) and
    /// folds them into the running estimates; evaluation mode uses the
    /// running estimates and leaves them untouched.
    pub fn forward(&mut self, x: &Array4<f64>, training: bool) -> Array4<f64> {
        let (mean, var) = if training {
            let (mean, var) = self.batch_stats(x);
            for ci in 0..mean.len() {
                self.running_mean[ci] =
                    self.momentum * self.running_mean[ci] + (1.0 - self.momentum) * mean[ci];
                self.running_var[ci] =
                    self.momentum * self.running_var[ci] + (1.0 - self.momentum) * var[ci];
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let mut out = x.clone();
        let c = mean.len();
        for ci in 0..c {
            let inv = 1.0 / (var[ci] + self.eps).sqrt();
            let (g, b, mu) = (self.gamma[ci], self.beta[ci], mean[ci]);
            out.slice_mut(s![.., ci, .., ..])
                .mapv_inplace(|v| (v - mu) * inv * g + b);
        }
        out
    }

    /// Training-mode backward; recomputes batch statistics from `x`.
    pub fn backward(&mut self, x: &Array4<f64>, grad_out: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let m = (n * h * w) as f64;
        let (mean, var) = self.batch_stats(x);
        let mut grad_x = Array4::zeros(x.dim());
        for ci in 0..c {
            let inv = 1.0 / (var[ci] + self.eps).sqrt();
            let mu = mean[ci];
            let xs = x.slice(s![.., ci, .., ..]);
            let gs = grad_out.slice(s![.., ci, .., ..]);
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for (xv, gv) in xs.iter().zip(gs.iter()) {
                let xhat = (xv - mu) * inv;
                sum_g += gv;
                sum_gx += gv * xhat;
            }
            self.grad_beta[ci] += sum_g;
            self.grad_gamma[ci] += sum_gx;
            let gamma = self.gamma[ci];
            let mean_g = sum_g / m;
            let mean_gx = sum_gx / m;
            let mut out = grad_x.slice_mut(s![.., ci, .., ..]);
            for ((xv, gv), ov) in xs.iter().zip(gs.iter()).zip(out.iter_mut()) {
                let xhat = (xv - mu) * inv;
                *ov = gamma * inv * (gv - mean_g - xhat * mean_gx);
            }
        }
        grad_x
    }

    pub fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamBlock<'a>>) {
        out.push(ParamBlock {
            name: format!("{prefix}.gamma"),
            values: self.gamma.as_slice_mut().expect("contiguous"),
            grads: Some(self.grad_gamma.as_slice_mut().expect("contiguous")),
        });
        out.push(ParamBlock {
            name: format!("{prefix}.beta"),
            values: self.beta.as_slice_mut().expect("contiguous"),
            grads: Some(self.grad_beta.as_slice_mut().expect("contiguous")),
        });
    }

    /// Trainable parameters plus running statistics (the latter as
    /// grad-less state blocks, for checkpoints).
    pub fn collect_all<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamBlock<'a>>) {
        out.push(ParamBlock {
            name: format!("{prefix}.gamma"),
            values: self.gamma.as_slice_mut().expect("contiguous"),
            grads: Some(self.grad_gamma.as_slice_mut().expect("contiguous")),
        });
        out.push(ParamBlock {
            name: format!("{prefix}.beta"),
            values: self.beta.as_slice_mut().expect("contiguous"),
            grads: Some(self.grad_beta.as_slice_mut().expect("contiguous")),
        });
        out.push(ParamBlock {
            name: format!("{prefix}.running_mean"),
            values: self.running_mean.as_slice_mut().expect("contiguous"),
            grads: None,
        });
        out.push(ParamBlock {
            name: format!("{prefix}.running_var"),
            values: self.running_var.as_slice_mut().expect("contiguous"),
            grads: None,
        });
    }
}
