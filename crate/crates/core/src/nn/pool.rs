//! Spatial resampling layers: 2x2 max pooling, global average pooling, and
//! nearest-neighbor 2x upsampling.

use ndarray::{s, Array2, Array4};

/// 2x2 stride-2 max pooling. Requires even spatial dims. Ties resolve to the
/// first maximal element in scan order, which keeps backward deterministic.
pub fn maxpool2_forward(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "maxpool2 needs even dims, got {h}x{w}");
    let mut out = Array4::zeros((n, c, h / 2, w / 2));
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h / 2 {
                for xx in 0..w / 2 {
                    let mut best = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = x[[ni, ci, 2 * y + dy, 2 * xx + dx]];
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    out[[ni, ci, y, xx]] = best;
                }
            }
        }
    }
    out
}

pub fn maxpool2_backward(x: &Array4<f64>, grad_out: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let mut grad_x = Array4::zeros(x.dim());
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h / 2 {
                for xx in 0..w / 2 {
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = (0, 0);
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = x[[ni, ci, 2 * y + dy, 2 * xx + dx]];
                            if v > best {
                                best = v;
                                arg = (dy, dx);
                            }
                        }
                    }
                    grad_x[[ni, ci, 2 * y + arg.0, 2 * xx + arg.1]] +=
                        grad_out[[ni, ci, y, xx]];
                }
            }
        }
    }
    grad_x
}

pub fn global_avg_pool(x: &Array4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let m = (h * w) as f64;
    Array2::from_shape_fn((n, c), |(ni, ci)| x.slice(s![ni, ci, .., ..]).sum() / m)
}

pub fn global_avg_pool_backward(
    x_dim: (usize, usize, usize, usize),
    grad_out: &Array2<f64>,
) -> Array4<f64> {
    let (n, c, h, w) = x_dim;
    let m = (h * w) as f64;
    Array4::from_shape_fn((n, c, h, w), |(ni, ci, _, _)| grad_out[[ni, ci]] / m)
}

pub fn upsample2_forward(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    Array4::from_shape_fn((n, c, 2 * h, 2 * w), |(ni, ci, y, xx)| {
        x[[ni, ci, y / 2, xx / 2]]
    })
}

pub fn upsample2_backward(grad_out: &Array4<f64>) -> Array4<f64> {
    let (n, c, h2, w2) = grad_out.dim();
    let mut grad_x = Array4::zeros((n, c, h2 / 2, w2 / 2));
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    grad_x[[ni, ci, y / 2, xx / 2]] += grad_out[[ni, ci, y, xx]];
                }
            }
        }
    }
    grad_x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn maxpool_picks_maxima_and_routes_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array4::from_shape_fn((1, 1, 4, 4), |_| rng.gen::<f64>());
        let y = maxpool2_forward(&x);
        assert_eq!(y.dim(), (1, 1, 2, 2));
        let g = Array4::ones(y.dim());
        let gx = maxpool2_backward(&x, &g);
        assert_eq!(gx.sum(), 4.0, "each output routes one unit of gradient");
        // gradient lands only on maxima
        for y0 in 0..2 {
            for x0 in 0..2 {
                let window = x.slice(s![0, 0, 2 * y0..2 * y0 + 2, 2 * x0..2 * x0 + 2]);
                let max = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let gwin = gx.slice(s![0, 0, 2 * y0..2 * y0 + 2, 2 * x0..2 * x0 + 2]);
                for (v, g) in window.iter().zip(gwin.iter()) {
                    if *g > 0.0 {
                        assert_eq!(*v, max);
                    }
                }
            }
        }
    }

    #[test]
    fn upsample_round_trip_shapes() {
        let x = Array4::from_shape_fn((2, 3, 3, 5), |(n, c, y, xx)| {
            (n + c + y + xx) as f64
        });
        let up = upsample2_forward(&x);
        assert_eq!(up.dim(), (2, 3, 6, 10));
        let back = upsample2_backward(&Array4::ones(up.dim()));
        assert!(back.iter().all(|&v| v == 4.0));
    }

    #[test]
    fn gap_averages() {
        let x = Array4::from_elem((1, 2, 4, 4), 3.0);
        let y = global_avg_pool(&x);
        assert_eq!(y[[0, 0]], 3.0);
        let gx = global_avg_pool_backward(x.dim(), &Array2::ones((1, 2)));
        assert!((gx[[0, 1, 0, 0]] - 1.0 / 16.0).abs() < 1e-15);
    }
}
