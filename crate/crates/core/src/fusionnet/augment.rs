//! Weak and strong image augmentation.
//!
//! Weak: horizontal flip with probability 1/2 plus an integer translation of
//! up to 12.5% per axis with zero fill. Strong: two operations sampled from
//! a fixed pool with random magnitudes, followed by Cutout (one square of
//! side 25% of the image width zeroed at a random location). Parameters are
//! sampled into plain structs first, so tests can pin them; every operation
//! at magnitude zero is an exact identity.

use crate::imgio::ImageTensor;
use ndarray::Array3;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakAugmentParams {
    pub flip: bool,
    pub dx: i64,
    pub dy: i64,
}

impl WeakAugmentParams {
    pub fn sample(height: usize, width: usize, rng: &mut impl Rng) -> Self {
        let max_dx = (width as f64 * 0.125).floor() as i64;
        let max_dy = (height as f64 * 0.125).floor() as i64;
        WeakAugmentParams {
            flip: rng.gen::<bool>(),
            dx: rng.gen_range(-max_dx..=max_dx),
            dy: rng.gen_range(-max_dy..=max_dy),
        }
    }
}

pub fn weak_augment(img: &ImageTensor, rng: &mut impl Rng) -> ImageTensor {
    let (_, h, w) = img.dim();
    apply_weak(img, &WeakAugmentParams::sample(h, w, rng))
}

/// Pixel (r, c) moves to (r + dy, c + dx); vacated regions are zero. The
/// flip happens before the shift.
pub fn apply_weak(img: &ImageTensor, params: &WeakAugmentParams) -> ImageTensor {
    let flipped = if params.flip { hflip(img) } else { img.clone() };
    if params.dx == 0 && params.dy == 0 {
        return flipped;
    }
    translate(&flipped, params.dx, params.dy)
}

fn hflip(img: &ImageTensor) -> ImageTensor {
    let (c, h, w) = img.dim();
    Array3::from_shape_fn((c, h, w), |(ch, y, x)| img[[ch, y, w - 1 - x]])
}

fn translate(img: &ImageTensor, dx: i64, dy: i64) -> ImageTensor {
    let (c, h, w) = img.dim();
    Array3::from_shape_fn((c, h, w), |(ch, y, x)| {
        let sy = y as i64 - dy;
        let sx = x as i64 - dx;
        if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
            img[[ch, sy as usize, sx as usize]]
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrongOp {
    Brightness,
    Contrast,
    ColorJitter,
    Posterize,
    Sharpness,
    Shear,
    Translate,
    Rotate,
}

pub const STRONG_OP_POOL: [StrongOp; 8] = [
    StrongOp::Brightness,
    StrongOp::Contrast,
    StrongOp::ColorJitter,
    StrongOp::Posterize,
    StrongOp::Sharpness,
    StrongOp::Shear,
    StrongOp::Translate,
    StrongOp::Rotate,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrongOpParams {
    pub op: StrongOp,
    /// In [0, 1]; zero is an exact identity.
    pub magnitude: f64,
    pub sign: f64,
    /// Secondary sign used by two-axis operations.
    pub aux_sign: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrongAugmentParams {
    pub ops: [StrongOpParams; 2],
    pub cutout_center: (usize, usize),
}

impl StrongAugmentParams {
    pub fn sample(height: usize, width: usize, rng: &mut impl Rng) -> Self {
        let sample_op = |rng: &mut dyn rand::RngCore| StrongOpParams {
            op: STRONG_OP_POOL[rng.gen_range(0..STRONG_OP_POOL.len())],
            magnitude: rng.gen::<f64>(),
            sign: if rng.gen::<bool>() { 1.0 } else { -1.0 },
            aux_sign: if rng.gen::<bool>() { 1.0 } else { -1.0 },
        };
        let ops = [sample_op(rng), sample_op(rng)];
        StrongAugmentParams {
            ops,
            cutout_center: (rng.gen_range(0..height), rng.gen_range(0..width)),
        }
    }
}

pub fn strong_augment(img: &ImageTensor, rng: &mut impl Rng) -> ImageTensor {
    let (_, h, w) = img.dim();
    apply_strong(img, &StrongAugmentParams::sample(h, w, rng))
}

pub fn apply_strong(img: &ImageTensor, params: &StrongAugmentParams) -> ImageTensor {
    let mut out = img.clone();
    for op in &params.ops {
        out = apply_op(&out, op);
    }
    cutout(&mut out, params.cutout_center);
    out
}

fn apply_op(img: &ImageTensor, p: &StrongOpParams) -> ImageTensor {
    if p.magnitude == 0.0 {
        return img.clone();
    }
    let m = p.magnitude.clamp(0.0, 1.0);
    let (c, h, w) = img.dim();
    match p.op {
        StrongOp::Brightness => {
            let f = 1.0 + p.sign * 0.5 * m;
            img.mapv(|v| (v * f).clamp(0.0, 1.0))
        }
        StrongOp::Contrast => {
            let mean = img.sum() / img.len() as f64;
            let f = 1.0 + p.sign * 0.5 * m;
            img.mapv(|v| (mean + (v - mean) * f).clamp(0.0, 1.0))
        }
        StrongOp::ColorJitter => {
            let fr = 1.0 + p.sign * 0.5 * m;
            let fb = 1.0 - p.sign * 0.5 * m;
            Array3::from_shape_fn((c, h, w), |(ch, y, x)| {
                let v = img[[ch, y, x]];
                let f = match ch {
                    0 => fr,
                    2 => fb,
                    _ => 1.0,
                };
                (v * f).clamp(0.0, 1.0)
            })
        }
        StrongOp::Posterize => {
            let levels = (256.0 - m * 224.0).round().max(2.0);
            let q = levels - 1.0;
            img.mapv(|v| (v * q).round() / q)
        }
        StrongOp::Sharpness => {
            let blurred = box_blur3(img);
            let mut out = img.clone();
            ndarray::Zip::from(&mut out).and(&blurred).for_each(|o, &b| {
                *o = (*o + p.sign * m * (*o - b)).clamp(0.0, 1.0);
            });
            out
        }
        StrongOp::Shear => {
            let sh = p.sign * 0.3 * m;
            let cy = (h as f64 - 1.0) / 2.0;
            sample_inverse(img, |y, x| (y, x - sh * (y - cy)))
        }
        StrongOp::Translate => {
            let dx = (p.sign * 0.25 * m * w as f64).round() as i64;
            let dy = (p.aux_sign * 0.25 * m * h as f64).round() as i64;
            translate(img, dx, dy)
        }
        StrongOp::Rotate => {
            let theta = p.sign * m * 30.0_f64.to_radians();
            let (sin, cos) = theta.sin_cos();
            let cy = (h as f64 - 1.0) / 2.0;
            let cx = (w as f64 - 1.0) / 2.0;
            sample_inverse(img, move |y, x| {
                let (ry, rx) = (y - cy, x - cx);
                (cy + cos * ry - sin * rx, cx + sin * ry + cos * rx)
            })
        }
    }
}

/// Nearest-neighbor inverse-mapped geometric transform with zero fill.
fn sample_inverse(
    img: &ImageTensor,
    inverse: impl Fn(f64, f64) -> (f64, f64),
) -> ImageTensor {
    let (c, h, w) = img.dim();
    let mut out = Array3::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = inverse(y as f64, x as f64);
            let (ry, rx) = (sy.round(), sx.round());
            if ry >= 0.0 && ry < h as f64 && rx >= 0.0 && rx < w as f64 {
                for ch in 0..c {
                    out[[ch, y, x]] = img[[ch, ry as usize, rx as usize]];
                }
            }
        }
    }
    out
}

fn box_blur3(img: &ImageTensor) -> ImageTensor {
    let (c, h, w) = img.dim();
    Array3::from_shape_fn((c, h, w), |(ch, y, x)| {
        let mut acc = 0.0;
        let mut n = 0.0;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let yy = y as i64 + dy;
                let xx = x as i64 + dx;
                if yy >= 0 && yy < h as i64 && xx >= 0 && xx < w as i64 {
                    acc += img[[ch, yy as usize, xx as usize]];
                    n += 1.0;
                }
            }
        }
        acc / n
    })
}

/// Zeroes one square of side 25% of the image width, centered at `center`
/// and clipped to the image bounds.
fn cutout(img: &mut ImageTensor, center: (usize, usize)) {
    let (c, h, w) = img.dim();
    let side = ((w as f64) * 0.25).round().max(1.0) as i64;
    let half = side / 2;
    let y0 = (center.0 as i64 - half).max(0) as usize;
    let x0 = (center.1 as i64 - half).max(0) as usize;
    let y1 = (center.0 as i64 - half + side).clamp(0, h as i64) as usize;
    let x1 = (center.1 as i64 - half + side).clamp(0, w as i64) as usize;
    for ch in 0..c {
        for y in y0..y1 {
            for x in x0..x1 {
                img[[ch, y, x]] = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_image(res: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((3, res, res), |_| 0.05 + 0.9 * rng.gen::<f64>())
    }

    #[test]
    fn weak_identity_params_are_identity() {
        let img = test_image(16, 1);
        let out = apply_weak(
            &img,
            &WeakAugmentParams {
                flip: false,
                dx: 0,
                dy: 0,
            },
        );
        assert_eq!(out, img);
    }

    #[test]
    fn flip_is_an_involution() {
        let img = test_image(16, 2);
        let p = WeakAugmentParams {
            flip: true,
            dx: 0,
            dy: 0,
        };
        let twice = apply_weak(&apply_weak(&img, &p), &p);
        assert_eq!(twice, img);
    }

    #[test]
    fn shift_moves_pixels_and_zero_fills() {
        let img = test_image(8, 3);
        let p = WeakAugmentParams {
            flip: false,
            dx: 2,
            dy: -1,
        };
        let out = apply_weak(&img, &p);
        for y in 0..8usize {
            for x in 0..8usize {
                let sy = y as i64 + 1; // y - dy
                let sx = x as i64 - 2;
                let expected = if sy >= 0 && sy < 8 && sx >= 0 && sx < 8 {
                    img[[0, sy as usize, sx as usize]]
                } else {
                    0.0
                };
                assert_eq!(out[[0, y, x]], expected, "({y},{x})");
            }
        }
    }

    #[test]
    fn weak_shift_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let p = WeakAugmentParams::sample(32, 32, &mut rng);
            assert!(p.dx.abs() <= 4 && p.dy.abs() <= 4);
        }
    }

    #[test]
    fn identity_ops_leave_only_the_cutout() {
        let img = test_image(16, 5);
        let identity_op = StrongOpParams {
            op: StrongOp::Rotate,
            magnitude: 0.0,
            sign: 1.0,
            aux_sign: 1.0,
        };
        let params = StrongAugmentParams {
            ops: [identity_op, identity_op],
            cutout_center: (0, 0),
        };
        let out = apply_strong(&img, &params);
        // cutout side = 4, centered at the corner → rows/cols [0, 2)
        for y in 0..16 {
            for x in 0..16 {
                let in_cutout = y < 2 && x < 2;
                for c in 0..3 {
                    if in_cutout {
                        assert_eq!(out[[c, y, x]], 0.0);
                    } else {
                        assert_eq!(out[[c, y, x]], img[[c, y, x]], "({c},{y},{x})");
                    }
                }
            }
        }
    }

    #[test]
    fn cutout_region_is_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = test_image(32, 7);
        for _ in 0..20 {
            let params = StrongAugmentParams::sample(32, 32, &mut rng);
            let out = apply_strong(&img, &params);
            let (side, half) = (8i64, 4i64);
            let (cy, cx) = params.cutout_center;
            let y0 = (cy as i64 - half).max(0);
            let x0 = (cx as i64 - half).max(0);
            let y1 = (cy as i64 - half + side).clamp(0, 32);
            let x1 = (cx as i64 - half + side).clamp(0, 32);
            for y in y0..y1 {
                for x in x0..x1 {
                    for c in 0..3 {
                        assert_eq!(out[[c, y as usize, x as usize]], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn strong_augment_preserves_shape_for_any_rng() {
        let img = test_image(24, 8);
        for seed in 0..30 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = strong_augment(&img, &mut rng);
            assert_eq!(out.dim(), img.dim());
            assert!(out.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn every_op_at_zero_magnitude_is_identity() {
        let img = test_image(16, 9);
        for op in STRONG_OP_POOL {
            let p = StrongOpParams {
                op,
                magnitude: 0.0,
                sign: -1.0,
                aux_sign: 1.0,
            };
            assert_eq!(apply_op(&img, &p), img, "{op:?}");
        }
    }
}
