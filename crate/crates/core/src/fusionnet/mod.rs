//! The feature-fusion cloud classifier: a trainable classic stream (two
//! conv/batchnorm/relu blocks with pooling, three residual blocks, and a
//! 4096/1024/n fully-connected head with softmax) whose stage inputs are
//! channel-concatenated with frozen multi-scale edge maps at the configured
//! fusion sites. Only the first convolution of a fused stage consumes the
//! edge channels; residual skip paths carry the unfused stage input, so
//! enabling fusion changes no other parameter shapes.

mod augment;
mod checkpoint;
mod eval;
mod train;

pub use augment::{
    apply_strong, apply_weak, strong_augment, weak_augment, StrongAugmentParams, StrongOp,
    StrongOpParams, WeakAugmentParams,
};
pub use checkpoint::{load_checkpoint, model_from_checkpoint, save_checkpoint, Checkpoint};
pub use eval::{evaluate, EvalReport, Granularity};
pub use train::{
    ce_loss, pseudo_label, semi_supervised_step, supervised_step, train, LabeledSet,
    LossBreakdown, PseudoLabelConfig, SemiConfig, TrainConfig, TrainOutcome, UnlabeledSet,
};

use crate::edgefeat::EdgePyramid;
use crate::nn::{
    maxpool2_backward, maxpool2_forward, relu, relu_backward, softmax_rows, BatchNorm2d, Conv2d,
    Linear, ParamBlock,
};
use ndarray::{s, Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape error: {0}")]
    ShapeError(String),
    #[error("data error: {0}")]
    DataError(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Construction-time description of the network. The head dimensions
/// (4096, 1024, n_classes) and the stage stride arithmetic are fixed by the
/// architecture; stage widths and fusion sites are configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_size: usize,
    pub in_channels: usize,
    pub stage_channels: [usize; 5],
    pub fc_dims: (usize, usize, usize),
    pub n_classes: usize,
    /// Stages (0-based) whose first conv receives edge-map concatenation.
    pub fusion_sites: Vec<usize>,
    pub edge_channels: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        // Stage widths sized so the full 400x400 model fits desk-scale
        // memory in 64-bit precision; the head keeps the 4096/1024/10 dims.
        ModelSpec {
            input_size: 400,
            in_channels: 3,
            stage_channels: [8, 16, 32, 32, 32],
            fc_dims: (4096, 1024, 10),
            n_classes: 10,
            fusion_sites: vec![0, 1, 2, 3, 4],
            edge_channels: 1,
        }
    }
}

impl ModelSpec {
    /// Small preset for tests and fixtures.
    pub fn miniature(n_classes: usize) -> Self {
        ModelSpec {
            input_size: 32,
            in_channels: 3,
            stage_channels: [4, 4, 8, 8, 8],
            fc_dims: (32, 16, n_classes),
            n_classes,
            fusion_sites: vec![0, 1, 2, 3, 4],
            edge_channels: 1,
        }
    }

    pub fn without_fusion(mut self) -> Self {
        self.fusion_sites.clear();
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_size == 0 || self.input_size % 16 != 0 {
            return Err(ModelError::InvalidSpec(format!(
                "input_size {} must be a positive multiple of 16",
                self.input_size
            )));
        }
        if self.in_channels == 0 || self.stage_channels.iter().any(|&c| c == 0) {
            return Err(ModelError::InvalidSpec("zero channel width".into()));
        }
        if self.fc_dims.2 != self.n_classes {
            return Err(ModelError::InvalidSpec(format!(
                "fc_dims last entry {} must equal n_classes {}",
                self.fc_dims.2, self.n_classes
            )));
        }
        if self.n_classes == 0 {
            return Err(ModelError::InvalidSpec("n_classes must be positive".into()));
        }
        let mut seen = [false; 5];
        for &site in &self.fusion_sites {
            if site >= 5 {
                return Err(ModelError::InvalidSpec(format!(
                    "fusion site {site} out of range"
                )));
            }
            if seen[site] {
                return Err(ModelError::InvalidSpec(format!(
                    "duplicate fusion site {site}"
                )));
            }
            seen[site] = true;
        }
        if !self.fusion_sites.is_empty() && self.edge_channels == 0 {
            return Err(ModelError::InvalidSpec(
                "edge_channels must be positive when fusion sites exist".into(),
            ));
        }
        Ok(())
    }

    /// Spatial size of each stage's input: (S, S/2, S/4, S/8, S/16).
    pub fn stage_input_sizes(&self) -> [usize; 5] {
        let s = self.input_size;
        [s, s / 2, s / 4, s / 8, s / 16]
    }

    /// Spatial size of each stage's output: (S/2, S/4, S/8, S/16, S/16).
    pub fn stage_output_sizes(&self) -> [usize; 5] {
        let s = self.input_size;
        [s / 2, s / 4, s / 8, s / 16, s / 16]
    }

    pub fn flatten_dim(&self) -> usize {
        let s5 = self.stage_output_sizes()[4];
        self.stage_channels[4] * s5 * s5
    }

    fn edge_channels_at(&self, stage: usize) -> usize {
        if self.fusion_sites.contains(&stage) {
            self.edge_channels
        } else {
            0
        }
    }
}

/// A probability distribution over the classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior(pub Vec<f64>);

impl Posterior {
    /// Argmax with ties broken by the lowest class index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_prob(&self) -> f64 {
        self.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|&v| v >= 0.0)
            && ((self.0.iter().sum::<f64>()) - 1.0).abs() <= 1e-6
    }
}

struct ConvBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
}

struct ConvBlockCache {
    x_fused: Array4<f64>,
    c1: Array4<f64>,
    n1: Array4<f64>,
    r1: Array4<f64>,
    c2: Array4<f64>,
    n2: Array4<f64>,
    r2: Array4<f64>,
}

impl ConvBlock {
    fn new(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        ConvBlock {
            conv1: Conv2d::new(in_ch, out_ch, 3, 1, 1, rng),
            bn1: BatchNorm2d::new(out_ch),
            conv2: Conv2d::new(out_ch, out_ch, 3, 1, 1, rng),
            bn2: BatchNorm2d::new(out_ch),
        }
    }

    fn forward(&mut self, x_fused: Array4<f64>, training: bool) -> (Array4<f64>, ConvBlockCache) {
        let c1 = self.conv1.forward(&x_fused);
        let n1 = self.bn1.forward(&c1, training);
        let r1 = relu(&n1);
        let c2 = self.conv2.forward(&r1);
        let n2 = self.bn2.forward(&c2, training);
        let r2 = relu(&n2);
        let pooled = maxpool2_forward(&r2);
        (
            pooled,
            ConvBlockCache {
                x_fused,
                c1,
                n1,
                r1,
                c2,
                n2,
                r2,
            },
        )
    }

    /// Returns the gradient w.r.t. the fused block input.
    fn backward(&mut self, cache: &ConvBlockCache, grad_pooled: &Array4<f64>) -> Array4<f64> {
        let g_r2 = maxpool2_backward(&cache.r2, grad_pooled);
        let g_n2 = relu_backward(&cache.n2, &g_r2);
        let g_c2 = self.bn2.backward(&cache.c2, &g_n2);
        let g_r1 = self.conv2.backward(&cache.r1, &g_c2);
        let g_n1 = relu_backward(&cache.n1, &g_r1);
        let g_c1 = self.bn1.backward(&cache.c1, &g_n1);
        self.conv1.backward(&cache.x_fused, &g_c1)
    }

    fn collect<'a>(&'a mut self, prefix: &str, with_state: bool, out: &mut Vec<ParamBlock<'a>>) {
        self.conv1.collect_params(&format!("{prefix}.conv1"), out);
        if with_state {
            self.bn1.collect_all(&format!("{prefix}.bn1"), out);
        } else {
            self.bn1.collect_params(&format!("{prefix}.bn1"), out);
        }
        self.conv2.collect_params(&format!("{prefix}.conv2"), out);
        if with_state {
            self.bn2.collect_all(&format!("{prefix}.bn2"), out);
        } else {
            self.bn2.collect_params(&format!("{prefix}.bn2"), out);
        }
    }
}

struct ResBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    /// 1x1 stride-matched projection used when the skip path changes shape.
    proj: Option<(Conv2d, BatchNorm2d)>,
}

struct ResBlockCache {
    x_fused: Array4<f64>,
    x_skip: Array4<f64>,
    c1: Array4<f64>,
    n1: Array4<f64>,
    r1: Array4<f64>,
    c2: Array4<f64>,
    p: Option<Array4<f64>>,
    sum: Array4<f64>,
}

impl ResBlock {
    fn new(
        fused_in: usize,
        skip_in: usize,
        out_ch: usize,
        second_stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let proj = if skip_in != out_ch || second_stride != 1 {
            Some((
                Conv2d::new(skip_in, out_ch, 1, second_stride, 0, rng),
                BatchNorm2d::new(out_ch),
            ))
        } else {
            None
        };
        ResBlock {
            conv1: Conv2d::new(fused_in, out_ch, 3, 1, 1, rng),
            bn1: BatchNorm2d::new(out_ch),
            conv2: Conv2d::new(out_ch, out_ch, 3, second_stride, 1, rng),
            bn2: BatchNorm2d::new(out_ch),
            proj,
        }
    }

    fn forward(
        &mut self,
        x_fused: Array4<f64>,
        x_skip: Array4<f64>,
        training: bool,
    ) -> (Array4<f64>, ResBlockCache) {
        let c1 = self.conv1.forward(&x_fused);
        let n1 = self.bn1.forward(&c1, training);
        let r1 = relu(&n1);
        let c2 = self.conv2.forward(&r1);
        let n2 = self.bn2.forward(&c2, training);
        let (skip_out, p) = match &mut self.proj {
            Some((conv, bn)) => {
                let p = conv.forward(&x_skip);
                let pn = bn.forward(&p, training);
                (pn, Some(p))
            }
            None => (x_skip.clone(), None),
        };
        let sum = &n2 + &skip_out;
        let out = relu(&sum);
        (
            out,
            ResBlockCache {
                x_fused,
                x_skip,
                c1,
                n1,
                r1,
                c2,
                p,
                sum,
            },
        )
    }

    /// Returns gradients w.r.t. (fused input, skip input).
    fn backward(
        &mut self,
        cache: &ResBlockCache,
        grad_out: &Array4<f64>,
    ) -> (Array4<f64>, Array4<f64>) {
        let g_sum = relu_backward(&cache.sum, grad_out);
        let g_c2 = self.bn2.backward(&cache.c2, &g_sum);
        let g_r1 = self.conv2.backward(&cache.r1, &g_c2);
        let g_n1 = relu_backward(&cache.n1, &g_r1);
        let g_c1 = self.bn1.backward(&cache.c1, &g_n1);
        let g_fused = self.conv1.backward(&cache.x_fused, &g_c1);
        let g_skip = match &mut self.proj {
            Some((conv, bn)) => {
                let p = cache.p.as_ref().expect("projection cache");
                let g_p = bn.backward(p, &g_sum);
                conv.backward(&cache.x_skip, &g_p)
            }
            None => g_sum,
        };
        (g_fused, g_skip)
    }

    fn collect<'a>(&'a mut self, prefix: &str, with_state: bool, out: &mut Vec<ParamBlock<'a>>) {
        self.conv1.collect_params(&format!("{prefix}.conv1"), out);
        if with_state {
            self.bn1.collect_all(&format!("{prefix}.bn1"), out);
        } else {
            self.bn1.collect_params(&format!("{prefix}.bn1"), out);
        }
        self.conv2.collect_params(&format!("{prefix}.conv2"), out);
        if with_state {
            self.bn2.collect_all(&format!("{prefix}.bn2"), out);
        } else {
            self.bn2.collect_params(&format!("{prefix}.bn2"), out);
        }
        if let Some((conv, bn)) = &mut self.proj {
            conv.collect_params(&format!("{prefix}.proj"), out);
            if with_state {
                bn.collect_all(&format!("{prefix}.proj_bn"), out);
            } else {
                bn.collect_params(&format!("{prefix}.proj_bn"), out);
            }
        }
    }
}

pub struct Model {
    pub spec: ModelSpec,
    block1: ConvBlock,
    block2: ConvBlock,
    res1: ResBlock,
    res2: ResBlock,
    res3: ResBlock,
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
}

pub struct ForwardCache {
    cb1: ConvBlockCache,
    cb2: ConvBlockCache,
    rb1: ResBlockCache,
    rb2: ResBlockCache,
    rb3: ResBlockCache,
    flat: Array2<f64>,
    f1: Array2<f64>,
    a1: Array2<f64>,
    f2: Array2<f64>,
    a2: Array2<f64>,
    pub probs: Array2<f64>,
}

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Model, ModelError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = spec.stage_channels;
        let e = |k: usize| spec.edge_channels_at(k);
        let block1 = ConvBlock::new(spec.in_channels + e(0), c[0], &mut rng);
        let block2 = ConvBlock::new(c[0] + e(1), c[1], &mut rng);
        let res1 = ResBlock::new(c[1] + e(2), c[1], c[2], 2, &mut rng);
        let res2 = ResBlock::new(c[2] + e(3), c[2], c[3], 2, &mut rng);
        let res3 = ResBlock::new(c[3] + e(4), c[3], c[4], 1, &mut rng);
        let fc1 = Linear::new(spec.flatten_dim(), spec.fc_dims.0, &mut rng);
        let fc2 = Linear::new(spec.fc_dims.0, spec.fc_dims.1, &mut rng);
        let fc3 = Linear::new(spec.fc_dims.1, spec.fc_dims.2, &mut rng);
        Ok(Model {
            spec,
            block1,
            block2,
            res1,
            res2,
            res3,
            fc1,
            fc2,
            fc3,
        })
    }

    /// Concatenates the per-image edge maps for one stage into a batch
    /// tensor, validating alignment.
    fn fuse(
        &self,
        stage: usize,
        x: &Array4<f64>,
        edges: Option<&[EdgePyramid]>,
    ) -> Result<Array4<f64>, ModelError> {
        let e = self.spec.edge_channels_at(stage);
        if e == 0 {
            return Ok(x.clone());
        }
        let pyramids = edges.ok_or_else(|| {
            ModelError::ShapeError(format!("stage {stage} is a fusion site but no edges given"))
        })?;
        let (n, c, h, w) = x.dim();
        if pyramids.len() != n {
            return Err(ModelError::ShapeError(format!(
                "{} edge pyramids for a batch of {n}",
                pyramids.len()
            )));
        }
        let mut fused = Array4::zeros((n, c + e, h, w));
        fused.slice_mut(s![.., ..c, .., ..]).assign(x);
        for (ni, pyr) in pyramids.iter().enumerate() {
            let map = pyr.maps.get(stage).ok_or_else(|| {
                ModelError::ShapeError(format!("edge pyramid lacks a map for stage {stage}"))
            })?;
            let (me, mh, mw) = map.dim();
            if me != e || mh != h || mw != w {
                return Err(ModelError::ShapeError(format!(
                    "edge map {me}x{mh}x{mw} misaligned with stage input {e}x{h}x{w}"
                )));
            }
            fused.slice_mut(s![ni, c.., .., ..]).assign(map);
        }
        Ok(fused)
    }

    /// Full forward pass. Training mode uses batch statistics in the
    /// batchnorm layers and updates their running estimates; evaluation mode
    /// is deterministic and side-effect free.
    pub fn forward(
        &mut self,
        x: &Array4<f64>,
        edges: Option<&[EdgePyramid]>,
        training: bool,
    ) -> Result<ForwardCache, ModelError> {
        let (n, c, h, w) = x.dim();
        if n == 0 {
            return Err(ModelError::EmptyBatch);
        }
        let s = self.spec.input_size;
        if c != self.spec.in_channels || h != s || w != s {
            return Err(ModelError::ShapeError(format!(
                "input {c}x{h}x{w}, expected {}x{s}x{s}",
                self.spec.in_channels
            )));
        }

        let f0 = self.fuse(0, x, edges)?;
        let (s1, cb1) = self.block1.forward(f0, training);
        let f1in = self.fuse(1, &s1, edges)?;
        let (s2, cb2) = self.block2.forward(f1in, training);
        let f2in = self.fuse(2, &s2, edges)?;
        let (s3, rb1) = self.res1.forward(f2in, s2, training);
        let f3in = self.fuse(3, &s3, edges)?;
        let (s4, rb2) = self.res2.forward(f3in, s3, training);
        let f4in = self.fuse(4, &s4, edges)?;
        let (s5, rb3) = self.res3.forward(f4in, s4, training);

        let flat = s5
            .into_shape_with_order((n, self.spec.flatten_dim()))
            .expect("stage output is contiguous");
        let f1 = self.fc1.forward(&flat);
        let a1 = relu(&f1);
        let f2 = self.fc2.forward(&a1);
        let a2 = relu(&f2);
        let logits = self.fc3.forward(&a2);
        let probs = softmax_rows(&logits);

        Ok(ForwardCache {
            cb1,
            cb2,
            rb1,
            rb2,
            rb3,
            flat,
            f1,
            a1,
            f2,
            a2,
            probs,
        })
    }

    /// Backpropagates `dlogits` (gradient at the pre-softmax logits),
    /// accumulating parameter gradients. Edge channels receive no gradient
    /// and the backend is never touched.
    pub fn backward(&mut self, cache: &ForwardCache, dlogits: &Array2<f64>) {
        let g_a2 = self.fc3.backward(&cache.a2, dlogits);
        let g_f2 = relu_backward(&cache.f2, &g_a2);
        let g_a1 = self.fc2.backward(&cache.a1, &g_f2);
        let g_f1 = relu_backward(&cache.f1, &g_a1);
        let g_flat = self.fc1.backward(&cache.flat, &g_f1);

        let n = g_flat.dim().0;
        let s5 = self.spec.stage_output_sizes()[4];
        let c5 = self.spec.stage_channels[4];
        let g_s5 = g_flat
            .into_shape_with_order((n, c5, s5, s5))
            .expect("contiguous");

        let (g_f4, g_skip4) = self.res3.backward(&cache.rb3, &g_s5);
        let g_s4 = strip_edge_channels(&g_f4, self.spec.stage_channels[3]) + &g_skip4;
        let (g_f3, g_skip3) = self.res2.backward(&cache.rb2, &g_s4);
        let g_s3 = strip_edge_channels(&g_f3, self.spec.stage_channels[2]) + &g_skip3;
        let (g_f2in, g_skip2) = self.res1.backward(&cache.rb1, &g_s3);
        let g_s2 = strip_edge_channels(&g_f2in, self.spec.stage_channels[1]) + &g_skip2;
        let g_f1in = self.block2.backward(&cache.cb2, &g_s2);
        let g_s1 = strip_edge_channels(&g_f1in, self.spec.stage_channels[0]);
        let _ = self.block1.backward(&cache.cb1, &g_s1);
    }

    /// Evaluation-mode posteriors for a prepared batch.
    pub fn posteriors(
        &mut self,
        x: &Array4<f64>,
        edges: Option<&[EdgePyramid]>,
    ) -> Result<Vec<Posterior>, ModelError> {
        let cache = self.forward(x, edges, false)?;
        Ok(cache
            .probs
            .rows()
            .into_iter()
            .map(|row| Posterior(row.to_vec()))
            .collect())
    }

    pub fn param_blocks(&mut self) -> Vec<ParamBlock<'_>> {
        self.blocks(false)
    }

    /// Trainable parameters plus batchnorm running statistics.
    pub fn all_blocks(&mut self) -> Vec<ParamBlock<'_>> {
        self.blocks(true)
    }

    fn blocks(&mut self, with_state: bool) -> Vec<ParamBlock<'_>> {
        let mut out = Vec::new();
        self.block1.collect("block1", with_state, &mut out);
        self.block2.collect("block2", with_state, &mut out);
        self.res1.collect("res1", with_state, &mut out);
        self.res2.collect("res2", with_state, &mut out);
        self.res3.collect("res3", with_state, &mut out);
        self.fc1.collect_params("head.fc1", &mut out);
        self.fc2.collect_params("head.fc2", &mut out);
        self.fc3.collect_params("head.fc3", &mut out);
        out
    }

    pub fn parameter_count(&mut self) -> usize {
        self.param_blocks().iter().map(|b| b.values.len()).sum()
    }
}

fn strip_edge_channels(grad_fused: &Array4<f64>, keep: usize) -> Array4<f64> {
    grad_fused.slice(s![.., ..keep, .., ..]).to_owned()
}

/// Floor applied to predicted probabilities inside the cross-entropy; bounds
/// the loss at about 27.6 nats.
pub const CE_PROB_FLOOR: f64 = 1e-12;

/// Softmax cross-entropy gradient at the logits: `scale * (p - onehot)`.
pub(crate) fn ce_grad_scale(probs: &Array2<f64>, labels: &[usize], scale: f64) -> Array2<f64> {
    let mut g = probs * scale;
    for (i, &label) in labels.iter().enumerate() {
        g[[i, label]] -= scale;
    }
    g
}
