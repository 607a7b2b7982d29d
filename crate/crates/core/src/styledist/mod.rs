//! Style-distance metrics over disentangled style features: signal strength,
//! normalized pairwise style MSE, the symmetric set distance `D_style`,
//! Information-Over-Bias, and the `R_style` ratio comparing a collection
//! against a photo reference set.

mod model;

pub use model::{train_disentangler, DisentangleConfig, DisentangleModel, StepLosses};

use crate::imgio::ImageTensor;
use crate::parallel;
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StyleError {
    #[error("data error: {0}")]
    DataError(String),
    #[error("shape error: {0}")]
    ShapeError(String),
    #[error("style dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero signal strength for image '{id}'")]
    ZeroSignal { id: String },
    #[error("degenerate reconstruction: {0}")]
    DegenerateReconstruction(String),
}

/// d-dimensional style features of one image under a trained style encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleVector {
    pub values: Vec<f64>,
    pub encoder_id: String,
}

impl StyleVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// A style vector tagged with its image id, as used in set-level metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleEntry {
    pub id: String,
    pub vector: StyleVector,
}

/// Signal strength I_S = ||F||^2 / d.
pub fn signal_strength(f: &StyleVector) -> f64 {
    f.values.iter().map(|v| v * v).sum::<f64>() / f.dim() as f64
}

/// Mean squared error between style vectors: ||F - G||^2 / d.
pub fn style_mse(f: &StyleVector, g: &StyleVector) -> Result<f64, StyleError> {
    if f.dim() != g.dim() {
        return Err(StyleError::DimensionMismatch {
            expected: f.dim(),
            got: g.dim(),
        });
    }
    Ok(f
        .values
        .iter()
        .zip(&g.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / f.dim() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleDistanceReport {
    pub d_a: f64,
    pub d_b: f64,
    pub d_style: f64,
    /// Per-image normalized mean distances, side A then side B.
    pub per_image_a: Vec<(String, f64)>,
    pub per_image_b: Vec<(String, f64)>,
}

/// Symmetric normalized style distance between two sets:
/// each image's mean MSE to the other set is divided by its own signal
/// strength, the per-set means are `D_A` and `D_B`, and
/// `D_style = (D_A + D_B) / 2` exactly.
pub fn d_style(a: &[StyleEntry], b: &[StyleEntry]) -> Result<StyleDistanceReport, StyleError> {
    if a.is_empty() || b.is_empty() {
        return Err(StyleError::DataError("both style sets must be non-empty".into()));
    }
    let d = a[0].vector.dim();
    for entry in a.iter().chain(b) {
        if entry.vector.dim() != d {
            return Err(StyleError::DimensionMismatch {
                expected: d,
                got: entry.vector.dim(),
            });
        }
        if signal_strength(&entry.vector) == 0.0 {
            return Err(StyleError::ZeroSignal {
                id: entry.id.clone(),
            });
        }
    }

    let side = |from: &[StyleEntry], to: &[StyleEntry]| -> Result<Vec<(String, f64)>, StyleError> {
        let rows = parallel::map(from, |entry| {
            let mut total = 0.0;
            for other in to {
                total += style_mse(&entry.vector, &other.vector)?;
            }
            let normalized = total / to.len() as f64 / signal_strength(&entry.vector);
            Ok((entry.id.clone(), normalized))
        });
        rows.into_iter().collect()
    };

    let per_image_a = side(a, b)?;
    let per_image_b = side(b, a)?;
    let d_a = per_image_a.iter().map(|(_, v)| v).sum::<f64>() / a.len() as f64;
    let d_b = per_image_b.iter().map(|(_, v)| v).sum::<f64>() / b.len() as f64;
    Ok(StyleDistanceReport {
        d_a,
        d_b,
        d_style: (d_a + d_b) / 2.0,
        per_image_a,
        per_image_b,
    })
}

/// Content code of one image: (channels, h, w).
pub type ContentCode = Array3<f64>;

/// The encode/decode surface the style metrics need. The trained
/// disentangler implements it with its source-domain nets; tests inject
/// stubs. `Sync` so metric aggregation can fan out over images.
pub trait StyleCodec: Sync {
    fn style_dim(&self) -> usize;
    fn encoder_id(&self) -> String;
    fn encode_content(&self, img: &ImageTensor) -> ContentCode;
    fn encode_style(&self, img: &ImageTensor) -> StyleVector;
    fn decode(&self, content: &ContentCode, style: &StyleVector) -> ImageTensor;
}

fn image_mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64, StyleError> {
    if a.dim() != b.dim() {
        return Err(StyleError::ShapeError(format!(
            "image {:?} vs reconstruction {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64)
}

/// The all-ones substitute style vector used as the uninformative baseline.
pub fn constant_style(codec: &dyn StyleCodec) -> StyleVector {
    StyleVector {
        values: vec![1.0; codec.style_dim()],
        encoder_id: codec.encoder_id(),
    }
}

/// Information Over Bias: reconstruction error with the all-ones substitute
/// style divided by reconstruction error with the image's own style.
pub fn iob(image: &ImageTensor, codec: &dyn StyleCodec) -> Result<f64, StyleError> {
    let content = codec.encode_content(image);
    let style = codec.encode_style(image);
    let informed = codec.decode(&content, &style);
    let substitute = codec.decode(&content, &constant_style(codec));
    let denominator = image_mse(image, &informed)?;
    if denominator < 1e-12 {
        return Err(StyleError::DegenerateReconstruction(format!(
            "informed reconstruction error {denominator} below 1e-12"
        )));
    }
    Ok(image_mse(image, &substitute)? / denominator)
}

/// Mean IOB over a set.
pub fn iob_mean(images: &[ImageTensor], codec: &dyn StyleCodec) -> Result<f64, StyleError> {
    if images.is_empty() {
        return Err(StyleError::DataError("empty image set".into()));
    }
    let values = parallel::map(images, |img| iob(img, codec));
    let mut total = 0.0;
    for v in values {
        total += v?;
    }
    Ok(total / images.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RStyleOutcome {
    pub value: f64,
    pub iob_a: f64,
    pub iob_m: f64,
}

/// R_style(A) = IOB(M) / IOB(A) with M = A ∪ P. Both disentanglers train
/// toward the same photo reference set with the same seed schedule.
pub fn r_style(
    set_a: &[ImageTensor],
    set_p: &[ImageTensor],
    cfg: &DisentangleConfig,
) -> Result<RStyleOutcome, StyleError> {
    let model_a = train_disentangler(set_a, set_p, cfg)?;
    let iob_a = iob_mean(set_a, &model_a)?;
    let mut mixed: Vec<ImageTensor> = set_a.to_vec();
    mixed.extend(set_p.iter().cloned());
    let model_m = train_disentangler(&mixed, set_p, cfg)?;
    let iob_m = iob_mean(&mixed, &model_m)?;
    Ok(RStyleOutcome {
        value: iob_m / iob_a,
        iob_a,
        iob_m,
    })
}
