//! Supervised and pseudo-label training.
//!
//! The labeled stream and the unlabeled stream draw from independently
//! derived RNGs, so a semi-supervised step whose unlabeled term vanishes is
//! bit-identical to the plain supervised step with the same seed.

use super::{ce_grad_scale, Model, ModelError, Posterior};
use crate::edgefeat::{edge_pyramid, EdgeBackend, EdgePyramid};
use crate::fusionnet::augment::{strong_augment, weak_augment};
use crate::fusionnet::checkpoint::{checkpoint_of, Checkpoint};
use crate::imgio::ImageTensor;
use crate::nn::{zero_grads, Adam};
use crate::parallel;
use ndarray::{s, Array2, Array4};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelConfig {
    /// Strict lower bound on the max posterior for accepting a pseudo label.
    pub threshold: f64,
    pub unlabeled_loss_weight: f64,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        PseudoLabelConfig {
            threshold: 0.95,
            unlabeled_loss_weight: 1.0,
        }
    }
}

impl PseudoLabelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(ModelError::DataError(format!(
                "threshold {} outside (0, 1]",
                self.threshold
            )));
        }
        if !(self.unlabeled_loss_weight >= 0.0 && self.unlabeled_loss_weight.is_finite()) {
            return Err(ModelError::DataError("bad unlabeled_loss_weight".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiConfig {
    pub pseudo: PseudoLabelConfig,
    /// Self-training rounds; pseudo labels are regenerated at every step.
    pub rounds: usize,
    pub unlabeled_batch: usize,
}

impl Default for SemiConfig {
    fn default() -> Self {
        SemiConfig {
            pseudo: PseudoLabelConfig::default(),
            rounds: 1,
            unlabeled_batch: 32,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LabeledSet {
    pub ids: Vec<String>,
    pub images: Vec<ImageTensor>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct UnlabeledSet {
    pub ids: Vec<String>,
    pub images: Vec<ImageTensor>,
}

/// Mean negative log probability of the true class, with the probability
/// floored at 1e-12 (bounding the loss at ~27.6 nats).
pub fn ce_loss(probs: &Array2<f64>, labels: &[usize]) -> Result<f64, ModelError> {
    let (n, k) = probs.dim();
    if n != labels.len() {
        return Err(ModelError::ShapeError(format!(
            "{n} posterior rows, {} labels",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(ModelError::EmptyBatch);
    }
    let mut total = 0.0;
    for (row, &label) in probs.rows().into_iter().zip(labels) {
        if label >= k {
            return Err(ModelError::DataError(format!(
                "label {label} out of range for {k} classes"
            )));
        }
        total += -(row[label].max(super::CE_PROB_FLOOR)).ln();
    }
    Ok(total / n as f64)
}

/// Argmax iff the max posterior strictly exceeds the threshold; ties go to
/// the lowest class index.
pub fn pseudo_label(posterior: &Posterior, cfg: &PseudoLabelConfig) -> Option<usize> {
    let idx = posterior.argmax();
    (posterior.0[idx] > cfg.threshold).then_some(idx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub supervised: f64,
    /// Mean CE over confident unlabeled examples (zero when none qualify).
    pub unsupervised: f64,
    pub n_confident: usize,
    pub total: f64,
}

pub(super) fn batch_tensor(
    spec_size: usize,
    images: &[&ImageTensor],
) -> Result<Array4<f64>, ModelError> {
    if images.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut x = Array4::zeros((images.len(), 3, spec_size, spec_size));
    for (i, img) in images.iter().enumerate() {
        let (c, h, w) = img.dim();
        if c != 3 || h != spec_size || w != spec_size {
            return Err(ModelError::ShapeError(format!(
                "image {i} is {c}x{h}x{w}, expected 3x{spec_size}x{spec_size}"
            )));
        }
        x.slice_mut(s![i, .., .., ..]).assign(*img);
    }
    Ok(x)
}

/// Frozen edge pyramids for a batch, computed in parallel per image.
/// Returns None when the model has no fusion sites.
pub(super) fn batch_pyramids(
    model: &Model,
    backend: &EdgeBackend,
    images: &[&ImageTensor],
) -> Result<Option<Vec<EdgePyramid>>, ModelError> {
    if model.spec.fusion_sites.is_empty() {
        return Ok(None);
    }
    let sizes = model.spec.stage_input_sizes().to_vec();
    let side = model.spec.input_size;
    let results = parallel::map(images, |img| edge_pyramid(img, &sizes, backend));
    let mut pyramids = Vec::with_capacity(results.len());
    for r in results {
        pyramids.push(r.map_err(|e| ModelError::ShapeError(format!("edge backend: {e}")))?);
    }
    debug_assert!(pyramids.iter().all(|p| p.maps[0].dim().1 == side));
    Ok(Some(pyramids))
}

fn child_rng(rng: &mut impl RngCore) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(rng.next_u64())
}

/// Forward + backward over one labeled batch in training mode, accumulating
/// gradients. Returns the batch CE loss.
fn accumulate_supervised(
    model: &mut Model,
    backend: &EdgeBackend,
    images: &[&ImageTensor],
    labels: &[usize],
    rng_lab: &mut ChaCha8Rng,
) -> Result<f64, ModelError> {
    let augmented: Vec<ImageTensor> = images.iter().map(|im| weak_augment(im, rng_lab)).collect();
    let views: Vec<&ImageTensor> = augmented.iter().collect();
    let x = batch_tensor(model.spec.input_size, &views)?;
    let edges = batch_pyramids(model, backend, &views)?;
    let cache = model.forward(&x, edges.as_deref(), true)?;
    let loss = ce_loss(&cache.probs, labels)?;
    let dlogits = ce_grad_scale(&cache.probs, labels, 1.0 / labels.len() as f64);
    model.backward(&cache, &dlogits);
    Ok(loss)
}

/// One supervised optimizer step over a labeled batch.
pub fn supervised_step(
    model: &mut Model,
    opt: &mut Adam,
    images: &[&ImageTensor],
    labels: &[usize],
    backend: &EdgeBackend,
    rng: &mut impl RngCore,
) -> Result<f64, ModelError> {
    if images.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut rng_lab = child_rng(rng);
    zero_grads(&mut model.param_blocks());
    let loss = accumulate_supervised(model, backend, images, labels, &mut rng_lab)?;
    opt.step(&mut model.param_blocks());
    Ok(loss)
}

/// One optimizer step over a labeled batch plus the confident slice of an
/// unlabeled batch. Pseudo labels come from weakly augmented views scored in
/// evaluation mode (no gradients, no statistics updates); the consistency
/// term scores strongly augmented views of the same images. Below-threshold
/// examples contribute exactly zero.
pub fn semi_supervised_step(
    model: &mut Model,
    opt: &mut Adam,
    labeled_images: &[&ImageTensor],
    labels: &[usize],
    unlabeled_images: &[&ImageTensor],
    cfg: &PseudoLabelConfig,
    backend: &EdgeBackend,
    rng: &mut impl RngCore,
) -> Result<LossBreakdown, ModelError> {
    if labeled_images.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    cfg.validate()?;
    let mut rng_lab = child_rng(rng);
    let mut rng_unl = child_rng(rng);

    zero_grads(&mut model.param_blocks());
    let supervised = accumulate_supervised(model, backend, labeled_images, labels, &mut rng_lab)?;

    let mut unsupervised = 0.0;
    let mut n_confident = 0;
    if !unlabeled_images.is_empty() && cfg.unlabeled_loss_weight > 0.0 {
        let weak_views: Vec<ImageTensor> = unlabeled_images
            .iter()
            .map(|im| weak_augment(im, &mut rng_unl))
            .collect();
        let weak_refs: Vec<&ImageTensor> = weak_views.iter().collect();
        let xw = batch_tensor(model.spec.input_size, &weak_refs)?;
        let edges_w = batch_pyramids(model, backend, &weak_refs)?;
        let posteriors = model.posteriors(&xw, edges_w.as_deref())?;

        let mut confident: Vec<(usize, usize)> = Vec::new();
        for (i, p) in posteriors.iter().enumerate() {
            if let Some(label) = pseudo_label(p, cfg) {
                confident.push((i, label));
            }
        }
        n_confident = confident.len();

        if n_confident > 0 {
            let strong_views: Vec<ImageTensor> = confident
                .iter()
                .map(|(i, _)| strong_augment(unlabeled_images[*i], &mut rng_unl))
                .collect();
            let strong_refs: Vec<&ImageTensor> = strong_views.iter().collect();
            let pseudo: Vec<usize> = confident.iter().map(|(_, l)| *l).collect();
            let xs = batch_tensor(model.spec.input_size, &strong_refs)?;
            let edges_s = batch_pyramids(model, backend, &strong_refs)?;
            let cache = model.forward(&xs, edges_s.as_deref(), true)?;
            unsupervised = ce_loss(&cache.probs, &pseudo)?;
            let scale = cfg.unlabeled_loss_weight / pseudo.len() as f64;
            let dlogits = ce_grad_scale(&cache.probs, &pseudo, scale);
            model.backward(&cache, &dlogits);
        }
    }

    opt.step(&mut model.param_blocks());
    Ok(LossBreakdown {
        supervised,
        unsupervised,
        n_confident,
        total: supervised + cfg.unlabeled_loss_weight * unsupervised,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub supervised: f64,
    pub unsupervised: f64,
    pub n_confident: usize,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Supervised warm-up epochs over the labeled set, then (when `semi` is
/// given) self-training rounds over the unlabeled set with pseudo labels
/// regenerated at every step. Deterministic given the seed.
pub fn train(
    model: &mut Model,
    labeled: &LabeledSet,
    unlabeled: Option<&UnlabeledSet>,
    cfg: &TrainConfig,
    semi: Option<&SemiConfig>,
    backend: &EdgeBackend,
) -> Result<TrainOutcome, ModelError> {
    if labeled.is_empty() {
        return Err(ModelError::DataError("no labeled training examples".into()));
    }
    if labeled.labels.iter().any(|&l| l >= model.spec.n_classes) {
        return Err(ModelError::DataError("label out of class range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.learning_rate);
    let mut log = Vec::new();

    let batch = cfg.batch_size.max(1);
    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(labeled.len(), &mut rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(batch) {
            let images: Vec<&ImageTensor> = chunk.iter().map(|&i| &labeled.images[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| labeled.labels[i]).collect();
            losses.push(supervised_step(
                model, &mut opt, &images, &labels, backend, &mut rng,
            )?);
        }
        log.push(EpochLog {
            epoch,
            supervised: mean(&losses),
            unsupervised: 0.0,
            n_confident: 0,
        });
    }

    if let (Some(semi_cfg), Some(unlabeled)) = (semi, unlabeled) {
        for round in 0..semi_cfg.rounds {
            let unl_order = shuffled_indices(unlabeled.images.len(), &mut rng);
            let lab_order = shuffled_indices(labeled.len(), &mut rng);
            let mut lab_cursor = 0usize;
            let mut sup_losses = Vec::new();
            let mut unsup_losses = Vec::new();
            let mut confident = 0usize;
            for unl_chunk in unl_order.chunks(semi_cfg.unlabeled_batch.max(1)) {
                let mut lab_idx = Vec::with_capacity(batch);
                for _ in 0..batch.min(labeled.len()) {
                    lab_idx.push(lab_order[lab_cursor % labeled.len()]);
                    lab_cursor += 1;
                }
                let lab_images: Vec<&ImageTensor> =
                    lab_idx.iter().map(|&i| &labeled.images[i]).collect();
                let lab_labels: Vec<usize> = lab_idx.iter().map(|&i| labeled.labels[i]).collect();
                let unl_images: Vec<&ImageTensor> =
                    unl_chunk.iter().map(|&i| &unlabeled.images[i]).collect();
                let breakdown = semi_supervised_step(
                    model,
                    &mut opt,
                    &lab_images,
                    &lab_labels,
                    &unl_images,
                    &semi_cfg.pseudo,
                    backend,
                    &mut rng,
                )?;
                sup_losses.push(breakdown.supervised);
                unsup_losses.push(breakdown.unsupervised);
                confident += breakdown.n_confident;
            }
            log.push(EpochLog {
                epoch: cfg.epochs + round,
                supervised: mean(&sup_losses),
                unsupervised: mean(&unsup_losses),
                n_confident: confident,
            });
        }
    }

    Ok(TrainOutcome {
        checkpoint: checkpoint_of(model, cfg.seed),
        log,
    })
}

fn shuffled_indices(n: usize, rng: &mut impl RngCore) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}
