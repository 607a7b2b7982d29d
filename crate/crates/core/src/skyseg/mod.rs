//! Sky segmentation: homogeneous-patch clustering, per-segment sky
//! classification, mask painting, sky-selected image construction, and
//! mask-quality metrics.

mod a3c;
mod features;
mod logistic;

pub use a3c::{a3c_cluster, a3c_cluster_logged, A3cConfig, MergeEvent, DEFAULT_SEED_BLOCK};
pub use features::{segment_features, SegmentFeatures};
pub use logistic::{fit_sky_classifier, LogisticFitConfig, SkyClassifier};

use crate::imgio::{resize_bilinear, resize_nearest_mask, ImageTensor, Mask};
use ndarray::Array2;
use thiserror::Error;

pub const DEFAULT_TARGET_SEGMENTS: usize = 48;
pub const DEFAULT_MODEL_RESOLUTION: usize = 400;

#[derive(Debug, Error)]
pub enum SkySegError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
}

/// Integer patch labeling of an image: labels in `[0, n_segments)`, each
/// occurring at least once, each 4-connected.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMap {
    pub labels: Array2<u32>,
    pub n_segments: usize,
}

impl SegmentMap {
    /// Checks every stated invariant: label range, full coverage of the
    /// range, and single 4-connected component per label.
    pub fn validate(&self) -> Result<(), SkySegError> {
        let (h, w) = self.labels.dim();
        let k = self.n_segments;
        let mut seen = vec![false; k];
        for &l in self.labels.iter() {
            let l = l as usize;
            if l >= k {
                return Err(SkySegError::ShapeMismatch(format!(
                    "label {l} out of range [0, {k})"
                )));
            }
            seen[l] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(SkySegError::ShapeMismatch(
                "some labels in range never occur".into(),
            ));
        }
        // single component per label via flood fill
        let mut visited = Array2::from_elem((h, w), false);
        let mut component_count = vec![0usize; k];
        for y in 0..h {
            for x in 0..w {
                if visited[[y, x]] {
                    continue;
                }
                let label = self.labels[[y, x]];
                component_count[label as usize] += 1;
                if component_count[label as usize] > 1 {
                    return Err(SkySegError::ShapeMismatch(format!(
                        "label {label} has multiple connected components"
                    )));
                }
                let mut stack = vec![(y, x)];
                visited[[y, x]] = true;
                while let Some((cy, cx)) = stack.pop() {
                    let mut push = |ny: usize, nx: usize, visited: &mut Array2<bool>| {
                        if !visited[[ny, nx]] && self.labels[[ny, nx]] == label {
                            visited[[ny, nx]] = true;
                            stack.push((ny, nx));
                        }
                    };
                    if cy > 0 {
                        push(cy - 1, cx, &mut visited);
                    }
                    if cy + 1 < h {
                        push(cy + 1, cx, &mut visited);
                    }
                    if cx > 0 {
                        push(cy, cx - 1, &mut visited);
                    }
                    if cx + 1 < w {
                        push(cy, cx + 1, &mut visited);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Paints per-segment sky decisions back to pixels. A segment is sky iff the
/// classifier probability strictly exceeds 0.5.
pub fn predict_sky_mask(
    image: &ImageTensor,
    seg: &SegmentMap,
    clf: &SkyClassifier,
) -> Result<Mask, SkySegError> {
    let feats = segment_features(image, seg)?;
    let decisions: Vec<bool> = feats.iter().map(|f| clf.is_sky(f)).collect();
    let (_, h, w) = image.dim();
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        u8::from(decisions[seg.labels[[y, x]] as usize])
    }))
}

/// Majority ground-truth vote per segment; used to build classifier training
/// examples from annotated masks. Exact ties count as non-sky.
pub fn segment_labels_from_mask(seg: &SegmentMap, gt: &Mask) -> Result<Vec<bool>, SkySegError> {
    if seg.labels.dim() != gt.dim() {
        return Err(SkySegError::ShapeMismatch(
            "ground-truth mask does not align with segment map".into(),
        ));
    }
    let mut sky = vec![0usize; seg.n_segments];
    let mut total = vec![0usize; seg.n_segments];
    for (l, g) in seg.labels.iter().zip(gt.iter()) {
        total[*l as usize] += 1;
        sky[*l as usize] += *g as usize;
    }
    Ok(sky
        .iter()
        .zip(&total)
        .map(|(s, t)| 2 * s > *t)
        .collect())
}

/// The classifier input: original pixels inside the sky mask, black
/// elsewhere, resized to the model resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SkySelectedImage {
    pub pixels: ImageTensor,
    pub provenance: String,
}

/// Blacks out non-sky pixels and resizes to `out_size`. The mask is
/// resampled with nearest-neighbor and re-applied after the image resize, so
/// the blackout invariant holds exactly at output resolution.
pub fn apply_sky_selection(
    image: &ImageTensor,
    mask: &Mask,
    out_size: (usize, usize),
    provenance: &str,
) -> Result<SkySelectedImage, SkySegError> {
    let (c, h, w) = image.dim();
    if c != 3 || mask.dim() != (h, w) {
        return Err(SkySegError::ShapeMismatch(format!(
            "mask {:?} does not align with image {:?}",
            mask.dim(),
            image.dim()
        )));
    }
    let (oh, ow) = out_size;
    if oh == 0 || ow == 0 {
        return Err(SkySegError::InvalidArgument("empty output size".into()));
    }
    let mut src = image.clone();
    for y in 0..h {
        for x in 0..w {
            if mask[[y, x]] == 0 {
                for ch in 0..3 {
                    src[[ch, y, x]] = 0.0;
                }
            }
        }
    }
    let mut resized = resize_bilinear(&src, oh, ow);
    let mask_r = resize_nearest_mask(mask, oh, ow);
    for y in 0..oh {
        for x in 0..ow {
            if mask_r[[y, x]] == 0 {
                for ch in 0..3 {
                    resized[[ch, y, x]] = 0.0;
                }
            }
        }
    }
    Ok(SkySelectedImage {
        pixels: resized,
        provenance: provenance.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegMetrics {
    pub pixel_accuracy: f64,
    pub mean_accuracy: f64,
    pub mean_iou: f64,
}

/// Pixel accuracy, mean per-class recall, and mean per-class IoU over
/// {sky, non-sky}. Classes absent from both pred and gt are excluded from
/// the means.
pub fn seg_metrics(pred: &Mask, gt: &Mask) -> Result<SegMetrics, SkySegError> {
    if pred.dim() != gt.dim() {
        return Err(SkySegError::ShapeMismatch(format!(
            "pred {:?} vs gt {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let mut tp = [0.0f64; 2]; // per class: prediction == gt == class
    let mut gt_count = [0.0f64; 2];
    let mut pred_count = [0.0f64; 2];
    let mut correct = 0.0;
    let total = pred.len() as f64;
    for (p, g) in pred.iter().zip(gt.iter()) {
        let (p, g) = (*p as usize, *g as usize);
        gt_count[g] += 1.0;
        pred_count[p] += 1.0;
        if p == g {
            tp[p] += 1.0;
            correct += 1.0;
        }
    }
    let mut recalls = Vec::new();
    let mut ious = Vec::new();
    for c in 0..2 {
        if gt_count[c] == 0.0 && pred_count[c] == 0.0 {
            continue;
        }
        recalls.push(if gt_count[c] > 0.0 {
            tp[c] / gt_count[c]
        } else {
            0.0
        });
        let union = gt_count[c] + pred_count[c] - tp[c];
        ious.push(if union > 0.0 { tp[c] / union } else { 0.0 });
    }
    Ok(SegMetrics {
        pixel_accuracy: correct / total,
        mean_accuracy: recalls.iter().sum::<f64>() / recalls.len() as f64,
        mean_iou: ious.iter().sum::<f64>() / ious.len() as f64,
    })
}
