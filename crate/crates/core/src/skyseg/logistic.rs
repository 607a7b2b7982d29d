//! Logistic regression over segment features for the sky/non-sky decision.

use super::{SegmentFeatures, SkySegError};
use serde::{Deserialize, Serialize};

/// Ridge-regularized Newton (IRLS) solver settings. The tiny ridge keeps the
/// Hessian positive definite on separable data; the bias is not penalized.
#[derive(Debug, Clone)]
pub struct LogisticFitConfig {
    pub l2: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for LogisticFitConfig {
    fn default() -> Self {
        LogisticFitConfig {
            l2: 1e-6,
            max_iters: 100,
            grad_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkyClassifier {
    pub weights: [f64; 10],
    pub bias: f64,
}

impl SkyClassifier {
    pub fn probability(&self, features: &SegmentFeatures) -> f64 {
        let mut z = self.bias;
        for (w, x) in self.weights.iter().zip(features.as_slice()) {
            z += w * x;
        }
        sigmoid(z)
    }

    /// Strictly-greater-than-half decision rule: probability exactly 0.5 is
    /// non-sky.
    pub fn is_sky(&self, features: &SegmentFeatures) -> bool {
        self.probability(features) > 0.5
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

const D: usize = SegmentFeatures::DIM + 1; // weights + bias

fn nll(examples: &[(SegmentFeatures, bool)], w: &[f64; D], l2: f64) -> f64 {
    let mut loss = 0.0;
    for (f, y) in examples {
        let mut z = w[D - 1];
        for (wi, xi) in w[..D - 1].iter().zip(f.as_slice()) {
            z += wi * xi;
        }
        // log(1 + e^{-|z|}) form is stable for both signs
        let yz = if *y { z } else { -z };
        loss += if yz >= 0.0 {
            (-yz).exp().ln_1p()
        } else {
            -yz + yz.exp().ln_1p()
        };
    }
    loss + 0.5 * l2 * w[..D - 1].iter().map(|v| v * v).sum::<f64>()
}

/// Fits the sky classifier to convergence of the ridge-Newton solver.
/// Deterministic given the data and settings.
pub fn fit_sky_classifier(
    examples: &[(SegmentFeatures, bool)],
    cfg: &LogisticFitConfig,
) -> Result<SkyClassifier, SkySegError> {
    let n_pos = examples.iter().filter(|(_, y)| *y).count();
    if n_pos == 0 || n_pos == examples.len() {
        return Err(SkySegError::DegenerateData(
            "need at least one sky and one non-sky example".into(),
        ));
    }

    let mut w = [0.0f64; D];
    let mut loss = nll(examples, &w, cfg.l2);
    for _ in 0..cfg.max_iters {
        let mut grad = [0.0f64; D];
        let mut hess = [[0.0f64; D]; D];
        for (f, y) in examples {
            let mut x = [0.0f64; D];
            x[..D - 1].copy_from_slice(f.as_slice());
            x[D - 1] = 1.0;
            let z: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
            let p = sigmoid(z);
            let err = p - f64::from(*y);
            let s = (p * (1.0 - p)).max(1e-12);
            for i in 0..D {
                grad[i] += err * x[i];
                for j in 0..D {
                    hess[i][j] += s * x[i] * x[j];
                }
            }
        }
        for i in 0..D - 1 {
            grad[i] += cfg.l2 * w[i];
            hess[i][i] += cfg.l2;
        }
        hess[D - 1][D - 1] += 1e-12;

        let grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_norm < cfg.grad_tol {
            break;
        }
        let step = solve_spd(&hess, &grad)
            .ok_or_else(|| SkySegError::DegenerateData("singular Hessian".into()))?;

        // Backtracking keeps Newton honest if a full step overshoots.
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let mut trial = w;
            for i in 0..D {
                trial[i] -= scale * step[i];
            }
            let trial_loss = nll(examples, &trial, cfg.l2);
            if trial_loss <= loss {
                w = trial;
                loss = trial_loss;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }

    let mut weights = [0.0f64; 10];
    weights.copy_from_slice(&w[..D - 1]);
    Ok(SkyClassifier {
        weights,
        bias: w[D - 1],
    })
}

/// Cholesky solve of a small symmetric positive-definite system.
fn solve_spd(a: &[[f64; D]; D], b: &[f64; D]) -> Option<[f64; D]> {
    let mut l = [[0.0f64; D]; D];
    for i in 0..D {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = [0.0f64; D];
    for i in 0..D {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = [0.0f64; D];
    for i in (0..D).rev() {
        let mut s = y[i];
        for k in i + 1..D {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    Some(x)
}
