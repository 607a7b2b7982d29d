//! 2-D convolution with explicit backward passes.
//!
//! The forward pass lowers row-bands of the output to an im2col panel and
//! multiplies against the flattened kernel matrix, so peak memory stays
//! bounded on large inputs and bands can run in parallel. The backward pass
//! rebuilds the panels instead of caching them.

use super::ParamBlock;
use crate::parallel;
use ndarray::{s, Array1, Array2, Array4, ArrayView4};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Target panel size per im2col band, in elements.
const BAND_ELEMS: usize = 1 << 20;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Array4<f64>, // (out_ch, in_ch, k, k)
    pub bias: Array1<f64>,
    pub grad_weight: Array4<f64>,
    pub grad_bias: Array1<f64>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// He-normal initialization for ReLU stacks.
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let std = (2.0 / (in_ch * kernel * kernel) as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        let weight =
            Array4::from_shape_fn((out_ch, in_ch, kernel, kernel), |_| normal.sample(rng));
        Conv2d {
            grad_weight: Array4::zeros(weight.dim()),
            weight,
            bias: Array1::zeros(out_ch),
            grad_bias: Array1::zeros(out_ch),
            stride,
            padding,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().2
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        self.forward_impl(x, true)
    }

    /// Sequential reference path; the bench suite compares it against
    /// `forward` with the rayon feature enabled.
    pub fn forward_seq(&self, x: &Array4<f64>) -> Array4<f64> {
        self.forward_impl(x, false)
    }

    fn forward_impl(&self, x: &Array4<f64>, parallel_ok: bool) -> Array4<f64> {
        let (n, in_ch, h, w) = x.dim();
        assert_eq!(in_ch, self.in_channels(), "input channel mismatch");
        let (oh, ow) = self.out_spatial(h, w);
        let oc = self.out_channels();
        let k = self.kernel();
        let ick = in_ch * k * k;
        let w2 = self
            .weight
            .view()
            .into_shape_with_order((oc, ick))
            .expect("conv weight is contiguous");

        let rows_per_band = (BAND_ELEMS / (ow * ick).max(1)).clamp(1, oh);
        let n_bands = oh.div_ceil(rows_per_band);
        let mut out = Array4::zeros((n, oc, oh, ow));
        for ni in 0..n {
            let xn = x.slice(s![ni, .., .., ..]);
            let band_of = |b: usize| {
                let y0 = b * rows_per_band;
                let y1 = ((b + 1) * rows_per_band).min(oh);
                let col = im2col_band(&xn.insert_axis(ndarray::Axis(0)), self, y0, y1, ow);
                // (oc, band_rows * ow)
                (y0, y1, w2.dot(&col.t()))
            };
            let bands: Vec<(usize, usize, Array2<f64>)> = if parallel_ok {
                parallel::map_indices(n_bands, rows_per_band * ow * ick * oc, band_of)
            } else {
                parallel::map_indices_seq(n_bands, band_of)
            };
            for (y0, y1, band) in bands {
                let rows = y1 - y0;
                let shaped = band
                    .into_shape_with_order((oc, rows, ow))
                    .expect("band is contiguous");
                out.slice_mut(s![ni, .., y0..y1, ..]).assign(&shaped);
            }
        }
        for c in 0..oc {
            let b = self.bias[c];
            out.slice_mut(s![.., c, .., ..]).mapv_inplace(|v| v + b);
        }
        out
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    /// `x` must be the exact forward input.
    pub fn backward(&mut self, x: &Array4<f64>, grad_out: &Array4<f64>) -> Array4<f64> {
        let (n, in_ch, h, w) = x.dim();
        let (oh, ow) = self.out_spatial(h, w);
        let oc = self.out_channels();
        assert_eq!(grad_out.dim(), (n, oc, oh, ow), "grad_out shape");
        let k = self.kernel();
        let ick = in_ch * k * k;
        let w2 = self
            .weight
            .view()
            .into_shape_with_order((oc, ick))
            .expect("contiguous");

        let mut grad_w2 = Array2::<f64>::zeros((oc, ick));
        let mut grad_x = Array4::<f64>::zeros(x.dim());
        for ni in 0..n {
            let xn = x.slice(s![ni, .., .., ..]).insert_axis(ndarray::Axis(0));
            let col = im2col_band(&xn, self, 0, oh, ow); // (oh*ow, ick)
            let g = grad_out
                .slice(s![ni, .., .., ..])
                .into_shape_with_order((oc, oh * ow))
                .expect("contiguous");
            grad_w2 += &g.dot(&col);
            // (oh*ow, ick)
            let col_grad = g.t().dot(&w2);
            col2im_add(
                &mut grad_x.slice_mut(s![ni, .., .., ..]),
                &col_grad,
                self,
                oh,
                ow,
            );
        }
        self.grad_weight += &grad_w2
            .into_shape_with_order(self.weight.dim())
            .expect("contiguous");
        for c in 0..oc {
            self.grad_bias[c] += grad_out.slice(s![.., c, .., ..]).sum();
        }
        grad_x
    }

    pub fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamBlock<'a>>) {
        out.push(ParamBlock {
            name: format!("{prefix}.w"),
            values: self.weight.as_slice_mut().expect("contiguous"),
            grads: Some(self.grad_weight.as_slice_mut().expect("contiguous")),
        });
        out.push(ParamBlock {
            name: format!("{prefix}.b"),
            values: self.bias.as_slice_mut().expect("contiguous"),
            grads: Some(self.grad_bias.as_slice_mut().expect("contiguous")),
        });
    }
}

/// Builds the im2col panel for output rows `[y0, y1)` of a single sample
/// (passed with a leading singleton axis). Rows are output positions, columns
/// run over (in_ch, ky, kx).
fn im2col_band(
    x: &ArrayView4<f64>,
    conv: &Conv2d,
    y0: usize,
    y1: usize,
    ow: usize,
) -> Array2<f64> {
    let (_, in_ch, h, w) = x.dim();
    let k = conv.kernel();
    let stride = conv.stride;
    let pad = conv.padding as isize;
    let rows = (y1 - y0) * ow;
    let mut col = Array2::zeros((rows, in_ch * k * k));
    for yo in y0..y1 {
        for xo in 0..ow {
            let row = (yo - y0) * ow + xo;
            let mut ci = 0;
            for c in 0..in_ch {
                for ky in 0..k {
                    let sy = (yo * stride + ky) as isize - pad;
                    for kx in 0..k {
                        let sx = (xo * stride + kx) as isize - pad;
                        if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                            col[[row, ci]] = x[[0, c, sy as usize, sx as usize]];
                        }
                        ci += 1;
                    }
                }
            }
        }
    }
    col
}

/// Scatter-adds a column-space gradient back to input space.
fn col2im_add(
    grad_x: &mut ndarray::ArrayViewMut3<f64>,
    col_grad: &Array2<f64>,
    conv: &Conv2d,
    oh: usize,
    ow: usize,
) {
    let (in_ch, h, w) = grad_x.dim();
    let k = conv.kernel();
    let stride = conv.stride;
    let pad = conv.padding as isize;
    for yo in 0..oh {
        for xo in 0..ow {
            let row = yo * ow + xo;
            let mut ci = 0;
            for c in 0..in_ch {
                for ky in 0..k {
                    let sy = (yo * stride + ky) as isize - pad;
                    for kx in 0..k {
                        let sx = (xo * stride + kx) as isize - pad;
                        if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                            grad_x[[c, sy as usize, sx as usize]] += col_grad[[row, ci]];
                        }
                        ci += 1;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(x: &Array4<f64>, conv: &Conv2d) -> Array4<f64> {
        let (n, in_ch, h, w) = x.dim();
        let (oh, ow) = conv.out_spatial(h, w);
        let oc = conv.out_channels();
        let k = conv.kernel();
        let pad = conv.padding as isize;
        let mut out = Array4::zeros((n, oc, oh, ow));
        for ni in 0..n {
            for c in 0..oc {
                for yo in 0..oh {
                    for xo in 0..ow {
                        let mut acc = conv.bias[c];
                        for ic in 0..in_ch {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = (yo * conv.stride + ky) as isize - pad;
                                    let sx = (xo * conv.stride + kx) as isize - pad;
                                    if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize
                                    {
                                        acc += x[[ni, ic, sy as usize, sx as usize]]
                                            * conv.weight[[c, ic, ky, kx]];
                                    }
                                }
                            }
                        }
                        out[[ni, c, yo, xo]] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (stride, pad, h, w) in [(1usize, 1usize, 7usize, 9usize), (2, 1, 8, 8), (1, 0, 5, 5)] {
            let conv = Conv2d::new(3, 4, 3, stride, pad, &mut rng);
            let x = Array4::from_shape_fn((2, 3, h, w), |_| rng.gen::<f64>() - 0.5);
            let fast = conv.forward(&x);
            let seq = conv.forward_seq(&x);
            let slow = naive_conv(&x, &conv);
            assert_eq!(fast.dim(), slow.dim());
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(fast, seq, "parallel and sequential paths agree exactly");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut conv = Conv2d::new(2, 3, 3, 2, 1, &mut rng);
        let x = Array4::from_shape_fn((1, 2, 6, 6), |_| rng.gen::<f64>() - 0.5);
        // loss = sum of forward output
        let y = conv.forward(&x);
        let grad_out = Array4::ones(y.dim());
        let grad_x = conv.backward(&x, &grad_out);

        let h = 1e-6;
        // a few random input coordinates
        for _ in 0..10 {
            let idx = (
                0,
                rng.gen_range(0..2),
                rng.gen_range(0..6),
                rng.gen_range(0..6),
            );
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (conv.forward(&xp).sum() - conv.forward(&xm).sum()) / (2.0 * h);
            assert!(
                (fd - grad_x[idx]).abs() < 1e-6,
                "input grad at {idx:?}: fd={fd} analytic={}",
                grad_x[idx]
            );
        }
        // a few random weight coordinates
        for _ in 0..10 {
            let idx = (
                rng.gen_range(0..3),
                rng.gen_range(0..2),
                rng.gen_range(0..3),
                rng.gen_range(0..3),
            );
            let orig = conv.weight[idx];
            conv.weight[idx] = orig + h;
            let up = conv.forward(&x).sum();
            conv.weight[idx] = orig - h;
            let down = conv.forward(&x).sum();
            conv.weight[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - conv.grad_weight[idx]).abs() < 1e-6,
                "weight grad at {idx:?}"
            );
        }
    }
}
