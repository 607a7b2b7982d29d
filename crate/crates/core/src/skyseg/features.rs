//! The 10-dimensional per-segment feature vector: color moments plus
//! location and size.

use super::{SegmentMap, SkySegError};
use crate::imgio::ImageTensor;

/// Per-segment features, in index order: mean R, mean G, mean B, std R,
/// std G, std B, centroid row fraction, centroid column fraction,
/// topmost-row fraction, area fraction. Centroid fractions use pixel
/// centers (`(index + 0.5) / extent`), the topmost-row fraction is
/// `min_row / H`, and the area fraction is the segment's share of pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentFeatures(pub [f64; 10]);

impl SegmentFeatures {
    pub const DIM: usize = 10;

    pub fn as_slice(&self) -> &[f64; 10] {
        &self.0
    }

    pub fn area_fraction(&self) -> f64 {
        self.0[9]
    }
}

pub fn segment_features(
    image: &ImageTensor,
    seg: &SegmentMap,
) -> Result<Vec<SegmentFeatures>, SkySegError> {
    let (ch, h, w) = image.dim();
    if ch != 3 || seg.labels.dim() != (h, w) {
        return Err(SkySegError::ShapeMismatch(format!(
            "segment map {:?} does not align with image {:?}",
            seg.labels.dim(),
            image.dim()
        )));
    }
    let k = seg.n_segments;
    let mut n = vec![0.0f64; k];
    let mut sum = vec![[0.0f64; 3]; k];
    let mut sumsq = vec![[0.0f64; 3]; k];
    let mut row_sum = vec![0.0f64; k];
    let mut col_sum = vec![0.0f64; k];
    let mut min_row = vec![usize::MAX; k];

    for y in 0..h {
        for x in 0..w {
            let l = seg.labels[[y, x]] as usize;
            if l >= k {
                return Err(SkySegError::ShapeMismatch(format!(
                    "label {l} out of range for {k} segments"
                )));
            }
            n[l] += 1.0;
            row_sum[l] += y as f64;
            col_sum[l] += x as f64;
            min_row[l] = min_row[l].min(y);
            for c in 0..3 {
                let v = image[[c, y, x]];
                sum[l][c] += v;
                sumsq[l][c] += v * v;
            }
        }
    }

    let total = (h * w) as f64;
    let mut out = Vec::with_capacity(k);
    for l in 0..k {
        if n[l] == 0.0 {
            return Err(SkySegError::ShapeMismatch(format!(
                "segment {l} has no pixels"
            )));
        }
        let mut v = [0.0f64; 10];
        for c in 0..3 {
            let mean = sum[l][c] / n[l];
            let var = (sumsq[l][c] / n[l] - mean * mean).max(0.0);
            v[c] = mean;
            v[3 + c] = var.sqrt();
        }
        v[6] = (row_sum[l] / n[l] + 0.5) / h as f64;
        v[7] = (col_sum[l] / n[l] + 0.5) / w as f64;
        v[8] = min_row[l] as f64 / h as f64;
        v[9] = n[l] / total;
        out.push(SegmentFeatures(v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};

    #[test]
    fn uniform_single_segment() {
        let img = Array3::from_elem((3, 6, 6), 0.5);
        let seg = SegmentMap {
            labels: Array2::zeros((6, 6)),
            n_segments: 1,
        };
        let f = segment_features(&img, &seg).unwrap()[0];
        let v = f.as_slice();
        for c in 0..3 {
            assert!((v[c] - 0.5).abs() < 1e-12);
            assert!(v[3 + c].abs() < 1e-9);
        }
        assert!((v[6] - 0.5).abs() < 1e-12);
        assert!((v[7] - 0.5).abs() < 1e-12);
        assert_eq!(v[8], 0.0);
        assert_eq!(v[9], 1.0);
    }

    #[test]
    fn top_row_of_two_by_two() {
        let img = Array3::from_elem((3, 2, 2), 0.3);
        let labels = Array2::from_shape_fn((2, 2), |(y, _)| y as u32);
        let seg = SegmentMap {
            labels,
            n_segments: 2,
        };
        let f = segment_features(&img, &seg).unwrap();
        let top = f[0].as_slice();
        assert!((top[6] - 0.25).abs() < 1e-12, "centroid row fraction");
        assert_eq!(top[9], 0.5, "area fraction");
        assert_eq!(top[8], 0.0, "topmost-row fraction");
        let bottom = f[1].as_slice();
        assert!((bottom[6] - 0.75).abs() < 1e-12);
        assert_eq!(bottom[8], 0.5);
    }

    #[test]
    fn area_fractions_partition() {
        let img = Array3::from_shape_fn((3, 9, 7), |(c, y, x)| {
            ((c + y * x) % 11) as f64 / 11.0
        });
        let labels = Array2::from_shape_fn((9, 7), |(y, x)| ((y / 3) * 2 + x / 4) as u32);
        let seg = SegmentMap {
            labels,
            n_segments: 6,
        };
        let f = segment_features(&img, &seg).unwrap();
        let total: f64 = f.iter().map(|f| f.area_fraction()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        for feat in &f {
            for v in feat.as_slice() {
                assert!(v.is_finite());
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let img = Array3::from_elem((3, 4, 4), 0.1);
        let seg = SegmentMap {
            labels: Array2::zeros((5, 4)),
            n_segments: 1,
        };
        assert!(matches!(
            segment_features(&img, &seg),
            Err(SkySegError::ShapeMismatch(_))
        ));
    }
}
