//! Image tensors and raster I/O.
//!
//! Images are held as `(3, H, W)` arrays of `f64` in `[0, 1]`. Masks are
//! `(H, W)` arrays of `u8` restricted to `{0, 1}` and persisted as 8-bit
//! single-channel PNGs with values `{0, 255}`.

use ndarray::{Array2, Array3};
use std::path::Path;
use thiserror::Error;

pub type ImageTensor = Array3<f64>;
pub type Mask = Array2<u8>;

#[derive(Debug, Error)]
pub enum ImgError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("image decode/encode error on {path}: {source}")]
    Image {
        path: String,
        source: image::ImageError,
    },
    #[error("{path}: expected {expected}, got {got}")]
    Format {
        path: String,
        expected: String,
        got: String,
    },
}

fn img_err(path: &Path, source: image::ImageError) -> ImgError {
    ImgError::Image {
        path: path.display().to_string(),
        source,
    }
}

/// Loads an 8-bit image and converts it to a 3-channel tensor in `[0, 1]`.
/// Non-RGB color types are rejected rather than silently converted.
pub fn load_image(path: &Path) -> Result<ImageTensor, ImgError> {
    let dynimg = image::ImageReader::open(path)
        .map_err(|e| ImgError::Io {
            path: path.display().to_string(),
            source: e,
        })?
        .with_guessed_format()
        .map_err(|e| ImgError::Io {
            path: path.display().to_string(),
            source: e,
        })?
        .decode()
        .map_err(|e| img_err(path, e))?;
    let rgb = match dynimg {
        image::DynamicImage::ImageRgb8(img) => img,
        other => {
            return Err(ImgError::Format {
                path: path.display().to_string(),
                expected: "8-bit 3-channel image".into(),
                got: format!("{:?}", other.color()),
            })
        }
    };
    let (w, h) = rgb.dimensions();
    let mut out = Array3::zeros((3, h as usize, w as usize));
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(out)
}

pub fn save_image(path: &Path, img: &ImageTensor) -> Result<(), ImgError> {
    let (c, h, w) = img.dim();
    assert_eq!(c, 3, "image tensor must have 3 channels");
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                to_u8(img[[0, y, x]]),
                to_u8(img[[1, y, x]]),
                to_u8(img[[2, y, x]]),
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path).map_err(|e| img_err(path, e))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads a binary mask from a single-channel PNG; any value > 127 is sky.
pub fn load_mask(path: &Path) -> Result<Mask, ImgError> {
    let dynimg = image::open(path).map_err(|e| img_err(path, e))?;
    let gray = dynimg.into_luma8();
    let (w, h) = gray.dimensions();
    let mut out = Array2::zeros((h as usize, w as usize));
    for (x, y, px) in gray.enumerate_pixels() {
        out[[y as usize, x as usize]] = u8::from(px.0[0] > 127);
    }
    Ok(out)
}

pub fn save_mask(path: &Path, mask: &Mask) -> Result<(), ImgError> {
    let (h, w) = mask.dim();
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = if mask[[y, x]] != 0 { 255 } else { 0 };
            buf.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    buf.save(path).map_err(|e| img_err(path, e))
}

/// Rec. 601 luminance of an RGB tensor.
pub fn luminance(img: &ImageTensor) -> Array2<f64> {
    let (_, h, w) = img.dim();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[[y, x]] =
                0.299 * img[[0, y, x]] + 0.587 * img[[1, y, x]] + 0.114 * img[[2, y, x]];
        }
    }
    out
}

/// Nearest-neighbor source index for a destination index, using pixel-center
/// alignment. Shared by mask and image resampling so they stay consistent.
fn nearest_src(dst: usize, dst_len: usize, src_len: usize) -> usize {
    let pos = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64;
    (pos.floor() as usize).min(src_len - 1)
}

pub fn resize_nearest_mask(mask: &Mask, out_h: usize, out_w: usize) -> Mask {
    let (h, w) = mask.dim();
    Array2::from_shape_fn((out_h, out_w), |(y, x)| {
        mask[[nearest_src(y, out_h, h), nearest_src(x, out_w, w)]]
    })
}

pub fn resize_nearest(img: &ImageTensor, out_h: usize, out_w: usize) -> ImageTensor {
    let (c, h, w) = img.dim();
    Array3::from_shape_fn((c, out_h, out_w), |(ch, y, x)| {
        img[[ch, nearest_src(y, out_h, h), nearest_src(x, out_w, w)]]
    })
}

pub fn resize_bilinear(img: &ImageTensor, out_h: usize, out_w: usize) -> ImageTensor {
    let (c, h, w) = img.dim();
    let mut out = Array3::zeros((c, out_h, out_w));
    for y in 0..out_h {
        let sy = ((y as f64 + 0.5) * h as f64 / out_h as f64 - 0.5).clamp(0.0, h as f64 - 1.0);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for x in 0..out_w {
            let sx = ((x as f64 + 0.5) * w as f64 / out_w as f64 - 0.5).clamp(0.0, w as f64 - 1.0);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let top = img[[ch, y0, x0]] * (1.0 - fx) + img[[ch, y0, x1]] * fx;
                let bot = img[[ch, y1, x0]] * (1.0 - fx) + img[[ch, y1, x1]] * fx;
                out[[ch, y, x]] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// Box-filter downsample of a single-channel grid. Each output cell averages
/// the source cells its footprint covers (weighted by overlap), which keeps
/// constant inputs exactly constant.
pub fn resize_area(grid: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = grid.dim();
    let mut out = Array2::zeros((out_h, out_w));
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for oy in 0..out_h {
        let y_lo = oy as f64 * sy;
        let y_hi = (oy + 1) as f64 * sy;
        for ox in 0..out_w {
            let x_lo = ox as f64 * sx;
            let x_hi = (ox + 1) as f64 * sx;
            let mut acc = 0.0;
            let mut weight = 0.0;
            let y_start = y_lo.floor() as usize;
            let y_end = (y_hi.ceil() as usize).min(h);
            let x_start = x_lo.floor() as usize;
            let x_end = (x_hi.ceil() as usize).min(w);
            for y in y_start..y_end {
                let wy = overlap(y as f64, y as f64 + 1.0, y_lo, y_hi);
                if wy <= 0.0 {
                    continue;
                }
                for x in x_start..x_end {
                    let wx = overlap(x as f64, x as f64 + 1.0, x_lo, x_hi);
                    if wx <= 0.0 {
                        continue;
                    }
                    acc += grid[[y, x]] * wy * wx;
                    weight += wy * wx;
                }
            }
            out[[oy, ox]] = if weight > 0.0 { acc / weight } else { 0.0 };
        }
    }
    out
}

fn overlap(a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64) -> f64 {
    (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn image_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = Array3::from_shape_fn((3, 5, 7), |(c, y, x)| {
            ((c * 31 + y * 7 + x * 3) % 256) as f64 / 255.0
        });
        save_image(&path, &img).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.dim(), (3, 5, 7));
        for (a, b) in img.iter().zip(back.iter()) {
            assert!((a - b).abs() < 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn mask_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let mask = array![[0u8, 1, 1], [1, 0, 0]];
        save_mask(&path, &mask).unwrap();
        assert_eq!(load_mask(&path).unwrap(), mask);
    }

    #[test]
    fn rgba_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgba.png");
        let buf = image::RgbaImage::new(4, 4);
        buf.save(&path).unwrap();
        assert!(matches!(
            load_image(&path),
            Err(ImgError::Format { .. })
        ));
    }

    #[test]
    fn area_resize_preserves_constants() {
        let grid = Array2::from_elem((10, 10), 0.37);
        let down = resize_area(&grid, 3, 3);
        for v in down.iter() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_mask_downsample_by_two() {
        let mask = Array2::from_shape_fn((4, 4), |(y, _)| u8::from(y < 2));
        let down = resize_nearest_mask(&mask, 2, 2);
        assert_eq!(down, array![[1, 1], [0, 0]]);
    }
}
