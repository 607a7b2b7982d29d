//! Classifier evaluation at genus or form granularity.

use super::train::{batch_pyramids, batch_tensor, LabeledSet};
use super::{Model, ModelError, Posterior};
use crate::corpus::{map_to_form, CloudForm, CloudLabel};
use crate::edgefeat::EdgeBackend;
use crate::imgio::ImageTensor;
use ndarray::Array2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    Ten,
    Five,
}

#[derive(Debug, Clone)]
pub struct PredRecord {
    pub id: String,
    pub gt: usize,
    pub pred: usize,
    pub max_posterior: f64,
    pub posterior: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub granularity: Granularity,
    pub accuracy: f64,
    /// Macro-averaged over classes present in the ground truth.
    pub precision: f64,
    pub recall: f64,
    /// Rows are ground truth, columns are predictions.
    pub confusion: Array2<usize>,
    pub per_record: Vec<PredRecord>,
}

/// Evaluation-mode posteriors for a set of images, in batches.
pub fn predict(
    model: &mut Model,
    images: &[&ImageTensor],
    backend: &EdgeBackend,
    batch: usize,
) -> Result<Vec<Posterior>, ModelError> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let x = batch_tensor(model.spec.input_size, chunk)?;
        let edges = batch_pyramids(model, backend, chunk)?;
        out.extend(model.posteriors(&x, edges.as_deref())?);
    }
    Ok(out)
}

/// Evaluates the 10-class model on a labeled set. Five-form granularity maps
/// the argmax genus prediction through the canonical grouping before
/// comparison, and requires the model and labels to be in genus space.
pub fn evaluate(
    model: &mut Model,
    set: &LabeledSet,
    granularity: Granularity,
    backend: &EdgeBackend,
    batch: usize,
) -> Result<EvalReport, ModelError> {
    if set.is_empty() {
        return Err(ModelError::DataError("evaluation set is empty".into()));
    }
    if set.labels.len() != set.images.len() {
        return Err(ModelError::DataError("unlabeled record in eval set".into()));
    }
    if granularity == Granularity::Five && model.spec.n_classes != CloudLabel::ALL.len() {
        return Err(ModelError::DataError(
            "five-form evaluation requires the 10-genus model".into(),
        ));
    }
    let images: Vec<&ImageTensor> = set.images.iter().collect();
    let posteriors = predict(model, &images, backend, batch)?;

    let k = match granularity {
        Granularity::Ten => model.spec.n_classes,
        Granularity::Five => CloudForm::ALL.len(),
    };
    let project = |genus_idx: usize| -> Result<usize, ModelError> {
        match granularity {
            Granularity::Ten => Ok(genus_idx),
            Granularity::Five => CloudLabel::from_index(genus_idx)
                .map(|l| map_to_form(l).index())
                .ok_or_else(|| {
                    ModelError::DataError(format!("genus index {genus_idx} out of range"))
                }),
        }
    };

    let mut confusion = Array2::zeros((k, k));
    let mut per_record = Vec::with_capacity(set.len());
    for ((posterior, &gt10), id) in posteriors.iter().zip(&set.labels).zip(&set.ids) {
        let pred = project(posterior.argmax())?;
        let gt = project(gt10)?;
        confusion[[gt, pred]] += 1;
        per_record.push(PredRecord {
            id: id.clone(),
            gt,
            pred,
            max_posterior: posterior.max_prob(),
            posterior: posterior.0.clone(),
        });
    }

    let n = per_record.len();
    let correct: usize = (0..k).map(|c| confusion[[c, c]]).sum();
    let mut precisions = Vec::new();
    let mut recalls = Vec::new();
    for c in 0..k {
        let gt_count: usize = (0..k).map(|p| confusion[[c, p]]).sum();
        if gt_count == 0 {
            continue;
        }
        let pred_count: usize = (0..k).map(|g| confusion[[g, c]]).sum();
        let tp = confusion[[c, c]];
        recalls.push(tp as f64 / gt_count as f64);
        precisions.push(if pred_count > 0 {
            tp as f64 / pred_count as f64
        } else {
            0.0
        });
    }

    Ok(EvalReport {
        granularity,
        accuracy: correct as f64 / n as f64,
        precision: mean(&precisions),
        recall: mean(&recalls),
        confusion,
        per_record,
    })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}
