//! Toy-scale content–style disentangler for bidirectional translation
//! between a source collection and a photo reference set.
//!
//! Per domain: a content encoder (two stride-2 convs), a style encoder
//! (convs + global average pool + linear head), a decoder that injects the
//! style vector as per-channel biases before two upsampling conv stages,
//! and a least-squares discriminator. Training combines image
//! reconstruction, adversarial, and content reconstruction losses; the
//! style-latent reconstruction term is deliberately omitted.

use super::{ContentCode, StyleCodec, StyleError, StyleVector};
use crate::imgio::ImageTensor;
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, sigmoid, sigmoid_backward,
    upsample2_backward, upsample2_forward, zero_grads, Adam, Conv2d, Linear, ParamBlock,
};
use ndarray::{s, Array2, Array4};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisentangleConfig {
    pub resolution: usize,
    pub style_dim: usize,
    pub base_channels: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub lambda_rec: f64,
    pub lambda_adv: f64,
    pub lambda_content: f64,
}

impl Default for DisentangleConfig {
    fn default() -> Self {
        DisentangleConfig {
            resolution: 64,
            style_dim: 8,
            base_channels: 12,
            steps: 300,
            batch: 2,
            lr: 1e-3,
            seed: 0,
            lambda_rec: 10.0,
            lambda_adv: 1.0,
            lambda_content: 1.0,
        }
    }
}

struct ContentEncoder {
    c1: Conv2d,
    c2: Conv2d,
}

struct ContentCache {
    x: Array4<f64>,
    h1: Array4<f64>,
    a1: Array4<f64>,
    h2: Array4<f64>,
}

impl ContentEncoder {
    fn new(bc: usize, rng: &mut ChaCha8Rng) -> Self {
        ContentEncoder {
            c1: Conv2d::new(3, bc, 3, 2, 1, rng),
            c2: Conv2d::new(bc, 2 * bc, 3, 2, 1, rng),
        }
    }

    fn forward(&self, x: &Array4<f64>) -> (Array4<f64>, ContentCache) {
        let h1 = self.c1.forward(x);
        let a1 = relu(&h1);
        let h2 = self.c2.forward(&a1);
        let out = relu(&h2);
        (
            out,
            ContentCache {
                x: x.clone(),
                h1,
                a1,
                h2,
            },
        )
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. the
    /// input image.
    fn backward(&mut self, cache: &ContentCache, grad_out: &Array4<f64>) -> Array4<f64> {
        let g_h2 = relu_backward(&cache.h2, grad_out);
        let g_a1 = self.c2.backward(&cache.a1, &g_h2);
        let g_h1 = relu_backward(&cache.h1, &g_a1);
        self.c1.backward(&cache.x, &g_h1)
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamBlock<'a>>) {
        self.c1.collect_params(&format!("{prefix}.c1"), out);
        self.c2.collect_params(&format!("{prefix}.c2"), out);
    }
}

/// Conv stack + global average pool + linear head; used for the style
/// encoder (head width d) and the discriminator (head width 1).
struct ConvGapFc {
    c1: Conv2d,
    c2: Conv2d,
    fc: Linear,
}

struct ConvGapFcCache {
    x: Array4<f64>,
    h1: Array4<f64>,
    a1: Array4<f64>,
    h2: Array4<f64>,
    a2: Array4<f64>,
    pooled: Array2<f64>,
}

impl ConvGapFc {
    fn new(bc: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        ConvGapFc {
            c1: Conv2d::new(3, bc, 3, 2, 1, rng),
            c2: Conv2d::new(bc, 2 * bc, 3, 2, 1, rng),
            fc: Linear::new(2 * bc, out_dim, rng),
        }
    }

    fn forward(&self, x: &Array4<f64>) -> (Array2<f64>, ConvGapFcCache) {
        let h1 = self.c1.forward(x);
        let a1 = relu(&h1);
        let h2 = self.c2.forward(&a1);
        let a2 = relu(&h2);
        let pooled = global_avg_pool(&a2);
        let out = self.fc.forward(&pooled);
        (
            out,
            ConvGapFcCache {
                x: x.clone(),
                h1,
                a1,
                h2,
                a2,
                pooled,
            },
        )
    }

    fn backward(&mut self, cache: &ConvGapFcCache, grad_out: &Array2<f64>) -> Array4<f64> {
        let g_pooled = self.fc.backward(&cache.pooled, grad_out);
        let g_a2 = global_avg_pool_backward(cache.a2.dim(), &g_pooled);
        let g_h2 = relu_backward(&cache.h2, &g_a2);
        let g_a1 = self.c2.backward(&cache.a1, &g_h2);
        let g_h1 = relu_backward(&cache.h1, &g_a1);
        self.c1.backward(&cache.x, &g_h1)
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamBlock<'a>>) {
        self.c1.collect_params(&format!("{prefix}.c1"), out);
        self.c2.collect_params(&format!("{prefix}.c2"), out);
        self.fc.collect_params(&format!("{prefix}.fc"), out);
    }
}

struct Decoder {
    fc_style: Linear,
    c1: Conv2d,
    c2: Conv2d,
    c3: Conv2d,
}

struct DecoderCache {
    style: Array2<f64>,
    h: Array4<f64>,
    h1: Array4<f64>,
    u1: Array4<f64>,
    h2: Array4<f64>,
    u2: Array4<f64>,
    out: Array4<f64>,
}

impl Decoder {
    fn new(bc: usize, style_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Decoder {
            fc_style: Linear::new(style_dim, 2 * bc, rng),
            c1: Conv2d::new(2 * bc, bc, 3, 1, 1, rng),
            c2: Conv2d::new(bc, bc, 3, 1, 1, rng),
            c3: Conv2d::new(bc, 3, 3, 1, 1, rng),
        }
    }

    /// Decodes content (B, 2bc, R/4, R/4) with style (B, d) into images
    /// (B, 3, R, R) in [0, 1] via a final sigmoid.
    fn forward(&self, content: &Array4<f64>, style: &Array2<f64>) -> (Array4<f64>, DecoderCache) {
        let bias = self.fc_style.forward(style); // (B, 2bc)
        let (b, c, hh, ww) = content.dim();
        let mut h = content.clone();
        for bi in 0..b {
            for ci in 0..c {
                let add = bias[[bi, ci]];
                h.slice_mut(s![bi, ci, .., ..]).mapv_inplace(|v| v + add);
            }
        }
        let h1 = self.c1.forward(&h);
        let a1 = relu(&h1);
        let u1 = upsample2_forward(&a1);
        let h2 = self.c2.forward(&u1);
        let a2 = relu(&h2);
        let u2 = upsample2_forward(&a2);
        let h3 = self.c3.forward(&u2);
        let out = sigmoid(&h3);
        let _ = (hh, ww);
        (
            out.clone(),
            DecoderCache {
                style: style.clone(),
                h,
                h1,
                u1,
                h2,
                u2,
                out,
            },
        )
    }

    /// Returns gradients w.r.t. (content, style).
    fn backward(
        &mut self,
        cache: &DecoderCache,
        grad_out: &Array4<f64>,
    ) -> (Array4<f64>, Array2<f64>) {
        let g_h3 = sigmoid_backward(&cache.out, grad_out);
        let g_u2 = self.c3.backward(&cache.u2, &g_h3);
        let g_a2 = upsample2_backward(&g_u2);
        let g_h2 = relu_backward(&cache.h2, &g_a2);
        let g_u1 = self.c2.backward(&cache.u1, &g_h2);
        let g_a1 = upsample2_backward(&g_u1);
        let g_h1 = relu_backward(&cache.h1, &g_a1);
        let g_h = self.c1.backward(&cache.h, &g_h1);
        // the bias add distributes over space: style gradient sums spatially
        let (b, c, _, _) = g_h.dim();
        let mut g_bias = Array2::zeros((b, c));
        for bi in 0..b {
            for ci in 0..c {
                g_bias[[bi, ci]] = g_h.slice(s![bi, ci, .., ..]).sum();
            }
        }
        let g_style = self.fc_style.backward(&cache.style, &g_bias);
        (g_h, g_style)
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamBlock<'a>>) {
        self.fc_style.collect_params(&format!("{prefix}.fc_style"), out);
        self.c1.collect_params(&format!("{prefix}.c1"), out);
        self.c2.collect_params(&format!("{prefix}.c2"), out);
        self.c3.collect_params(&format!("{prefix}.c3"), out);
    }
}

/// Per-step loss record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub step: usize,
    /// Within-domain image reconstruction (both directions).
    pub rec: f64,
    pub adv_g: f64,
    pub content: f64,
    pub adv_d: f64,
}

impl StepLosses {
    pub fn all_finite(&self) -> bool {
        self.rec.is_finite()
            && self.adv_g.is_finite()
            && self.content.is_finite()
            && self.adv_d.is_finite()
    }
}

pub struct DisentangleModel {
    pub cfg: DisentangleConfig,
    pub id: String,
    ec_a: ContentEncoder,
    es_a: ConvGapFc,
    dec_a: Decoder,
    disc_a: ConvGapFc,
    ec_p: ContentEncoder,
    es_p: ConvGapFc,
    dec_p: Decoder,
    disc_p: ConvGapFc,
    pub log: Vec<StepLosses>,
}

impl DisentangleModel {
    fn new(cfg: DisentangleConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let bc = cfg.base_channels;
        let d = cfg.style_dim;
        let id = format!("disentangler-s{}-r{}-d{}", cfg.seed, cfg.resolution, d);
        DisentangleModel {
            ec_a: ContentEncoder::new(bc, &mut rng),
            es_a: ConvGapFc::new(bc, d, &mut rng),
            dec_a: Decoder::new(bc, d, &mut rng),
            disc_a: ConvGapFc::new(bc, 1, &mut rng),
            ec_p: ContentEncoder::new(bc, &mut rng),
            es_p: ConvGapFc::new(bc, d, &mut rng),
            dec_p: Decoder::new(bc, d, &mut rng),
            disc_p: ConvGapFc::new(bc, 1, &mut rng),
            cfg,
            id,
            log: Vec::new(),
        }
    }

    fn gen_blocks(&mut self) -> Vec<ParamBlock<'_>> {
        let mut out = Vec::new();
        self.ec_a.collect("a.content", &mut out);
        self.es_a.collect("a.style", &mut out);
        self.dec_a.collect("a.dec", &mut out);
        self.ec_p.collect("p.content", &mut out);
        self.es_p.collect("p.style", &mut out);
        self.dec_p.collect("p.dec", &mut out);
        out
    }

    fn disc_blocks(&mut self) -> Vec<ParamBlock<'_>> {
        let mut out = Vec::new();
        self.disc_a.collect("a.disc", &mut out);
        self.disc_p.collect("p.disc", &mut out);
        out
    }

    /// Translate a source-domain batch into the reference domain with a
    /// style drawn from the prior.
    pub fn translate_to_reference(
        &self,
        img: &ImageTensor,
        prior_style: &[f64],
    ) -> ImageTensor {
        let x = single_batch(img);
        let (content, _) = self.ec_a.forward(&x);
        let style = Array2::from_shape_vec((1, prior_style.len()), prior_style.to_vec())
            .expect("style shape");
        let (out, _) = self.dec_p.forward(&content, &style);
        out.index_axis(ndarray::Axis(0), 0).to_owned()
    }
}

impl StyleCodec for DisentangleModel {
    fn style_dim(&self) -> usize {
        self.cfg.style_dim
    }

    fn encoder_id(&self) -> String {
        self.id.clone()
    }

    fn encode_content(&self, img: &ImageTensor) -> ContentCode {
        let x = single_batch(img);
        let (content, _) = self.ec_a.forward(&x);
        content.index_axis(ndarray::Axis(0), 0).to_owned()
    }

    fn encode_style(&self, img: &ImageTensor) -> StyleVector {
        let x = single_batch(img);
        let (style, _) = self.es_a.forward(&x);
        StyleVector {
            values: style.row(0).to_vec(),
            encoder_id: self.encoder_id(),
        }
    }

    fn decode(&self, content: &ContentCode, style: &StyleVector) -> ImageTensor {
        let c = content
            .clone()
            .insert_axis(ndarray::Axis(0));
        let sv = Array2::from_shape_vec((1, style.values.len()), style.values.clone())
            .expect("style shape");
        let (out, _) = self.dec_a.forward(&c, &sv);
        out.index_axis(ndarray::Axis(0), 0).to_owned()
    }
}

fn single_batch(img: &ImageTensor) -> Array4<f64> {
    img.clone().insert_axis(ndarray::Axis(0))
}

fn batch_from(set: &[ImageTensor], indices: &[usize]) -> Array4<f64> {
    let (c, h, w) = set[0].dim();
    let mut x = Array4::zeros((indices.len(), c, h, w));
    for (bi, &i) in indices.iter().enumerate() {
        x.slice_mut(s![bi, .., .., ..]).assign(&set[i]);
    }
    x
}

fn mse(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64
}

fn mse_grad(a: &Array4<f64>, b: &Array4<f64>, weight: f64) -> Array4<f64> {
    let scale = 2.0 * weight / a.len() as f64;
    (a - b) * scale
}

fn prior(bsz: usize, d: usize, rng: &mut impl RngCore) -> Array2<f64> {
    Array2::from_shape_fn((bsz, d), |_| StandardNormal.sample(rng))
}

/// Trains the bidirectional disentangler. Deterministic given the config
/// seed; the loss trace is kept on the returned model.
pub fn train_disentangler(
    set_a: &[ImageTensor],
    set_p: &[ImageTensor],
    cfg: &DisentangleConfig,
) -> Result<DisentangleModel, StyleError> {
    if set_a.is_empty() || set_p.is_empty() {
        return Err(StyleError::DataError("both image sets must be non-empty".into()));
    }
    let r = cfg.resolution;
    if r % 4 != 0 {
        return Err(StyleError::DataError(format!(
            "resolution {r} must be divisible by 4"
        )));
    }
    for (tag, set) in [("A", set_a), ("P", set_p)] {
        for (i, img) in set.iter().enumerate() {
            if img.dim() != (3, r, r) {
                return Err(StyleError::ShapeError(format!(
                    "set {tag} image {i} is {:?}, expected (3, {r}, {r})",
                    img.dim()
                )));
            }
        }
    }

    let mut model = DisentangleModel::new(cfg.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED));
    let mut opt_g = Adam::new(cfg.lr);
    let mut opt_d = Adam::new(cfg.lr);
    let bsz = cfg.batch.max(1);
    let d = cfg.style_dim;

    for step in 0..cfg.steps {
        let idx_a: Vec<usize> = (0..bsz).map(|_| rng.gen_range(0..set_a.len())).collect();
        let idx_p: Vec<usize> = (0..bsz).map(|_| rng.gen_range(0..set_p.len())).collect();
        let a = batch_from(set_a, &idx_a);
        let p = batch_from(set_p, &idx_p);
        let prior_a = prior(bsz, d, &mut rng);
        let prior_p = prior(bsz, d, &mut rng);

        // ---- generator update ----
        zero_grads(&mut model.gen_blocks());
        zero_grads(&mut model.disc_blocks());

        let (c_a, ce_a) = model.ec_a.forward(&a);
        let (s_a, se_a) = model.es_a.forward(&a);
        let (ahat, dec_a_rec) = model.dec_a.forward(&c_a, &s_a);
        let (c_p, ce_p) = model.ec_p.forward(&p);
        let (s_p, se_p) = model.es_p.forward(&p);
        let (phat, dec_p_rec) = model.dec_p.forward(&c_p, &s_p);
        let (x_ap, dec_p_cross) = model.dec_p.forward(&c_a, &prior_p);
        let (x_pa, dec_a_cross) = model.dec_a.forward(&c_p, &prior_a);
        let (logit_ap, disc_p_g) = model.disc_p.forward(&x_ap);
        let (logit_pa, disc_a_g) = model.disc_a.forward(&x_pa);
        let (c_ap, ce_p_cross) = model.ec_p.forward(&x_ap);
        let (c_pa, ce_a_cross) = model.ec_a.forward(&x_pa);

        let rec_a = mse(&ahat, &a);
        let rec_p = mse(&phat, &p);
        let adv_ap = logit_ap.mapv(|t| (t - 1.0) * (t - 1.0)).mean().unwrap();
        let adv_pa = logit_pa.mapv(|t| (t - 1.0) * (t - 1.0)).mean().unwrap();
        let crec_ap = mse(&c_ap, &c_a);
        let crec_pa = mse(&c_pa, &c_p);

        // reconstruction paths
        let g_ahat = mse_grad(&ahat, &a, cfg.lambda_rec);
        let (g_c_a_rec, g_s_a) = model.dec_a.backward(&dec_a_rec, &g_ahat);
        let _ = model.es_a.backward(&se_a, &g_s_a);
        let g_phat = mse_grad(&phat, &p, cfg.lambda_rec);
        let (g_c_p_rec, g_s_p) = model.dec_p.backward(&dec_p_rec, &g_phat);
        let _ = model.es_p.backward(&se_p, &g_s_p);

        // adversarial + content-reconstruction pressure on the translations
        let scale_adv = 2.0 * cfg.lambda_adv / logit_ap.len() as f64;
        let g_logit_ap = logit_ap.mapv(|t| (t - 1.0) * scale_adv);
        let g_x_ap_adv = model.disc_p.backward(&disc_p_g, &g_logit_ap);
        let g_c_ap = mse_grad(&c_ap, &c_a, cfg.lambda_content);
        let g_x_ap_crec = model.ec_p.backward(&ce_p_cross, &g_c_ap);
        let (g_c_a_cross, _) = model
            .dec_p
            .backward(&dec_p_cross, &(&g_x_ap_adv + &g_x_ap_crec));

        let g_logit_pa = logit_pa.mapv(|t| (t - 1.0) * scale_adv);
        let g_x_pa_adv = model.disc_a.backward(&disc_a_g, &g_logit_pa);
        let g_c_pa = mse_grad(&c_pa, &c_p, cfg.lambda_content);
        let g_x_pa_crec = model.ec_a.backward(&ce_a_cross, &g_c_pa);
        let (g_c_p_cross, _) = model
            .dec_a
            .backward(&dec_a_cross, &(&g_x_pa_adv + &g_x_pa_crec));

        // content encoders gather both paths
        let _ = model.ec_a.backward(&ce_a, &(&g_c_a_rec + &g_c_a_cross));
        let _ = model.ec_p.backward(&ce_p, &(&g_c_p_rec + &g_c_p_cross));

        opt_g.step(&mut model.gen_blocks());

        // ---- discriminator update ----
        zero_grads(&mut model.gen_blocks());
        zero_grads(&mut model.disc_blocks());
        let (lr_p, cache_rp) = model.disc_p.forward(&p);
        let (lf_p, cache_fp) = model.disc_p.forward(&x_ap);
        let (lr_a, cache_ra) = model.disc_a.forward(&a);
        let (lf_a, cache_fa) = model.disc_a.forward(&x_pa);
        let d_loss = 0.5
            * (lr_p.mapv(|t| (t - 1.0) * (t - 1.0)).mean().unwrap()
                + lf_p.mapv(|t| t * t).mean().unwrap()
                + lr_a.mapv(|t| (t - 1.0) * (t - 1.0)).mean().unwrap()
                + lf_a.mapv(|t| t * t).mean().unwrap());
        let scale_d = 1.0 / lr_p.len() as f64;
        let _ = model.disc_p.backward(&cache_rp, &lr_p.mapv(|t| (t - 1.0) * scale_d));
        let _ = model.disc_p.backward(&cache_fp, &lf_p.mapv(|t| t * scale_d));
        let _ = model.disc_a.backward(&cache_ra, &lr_a.mapv(|t| (t - 1.0) * scale_d));
        let _ = model.disc_a.backward(&cache_fa, &lf_a.mapv(|t| t * scale_d));
        opt_d.step(&mut model.disc_blocks());

        model.log.push(StepLosses {
            step,
            rec: rec_a + rec_p,
            adv_g: adv_ap + adv_pa,
            content: crec_ap + crec_pa,
            adv_d: d_loss,
        });
    }

    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::texture_domain_image;

    fn domain_sets(res: usize, n: usize, gap: f64) -> (Vec<ImageTensor>, Vec<ImageTensor>) {
        let a = (0..n)
            .map(|i| texture_domain_image(0, res, 0.0, 100 + i as u64))
            .collect();
        let p = (0..n)
            .map(|i| texture_domain_image(1, res, gap, 200 + i as u64))
            .collect();
        (a, p)
    }

    fn quick_cfg(res: usize, steps: usize, seed: u64) -> DisentangleConfig {
        DisentangleConfig {
            resolution: res,
            base_channels: 8,
            steps,
            seed,
            ..DisentangleConfig::default()
        }
    }

    #[test]
    fn one_step_logs_finite_losses() {
        let (a, p) = domain_sets(16, 3, 0.1);
        let model = train_disentangler(&a, &p, &quick_cfg(16, 1, 3)).unwrap();
        assert_eq!(model.log.len(), 1);
        assert!(model.log[0].all_finite(), "{:?}", model.log[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let (a, p) = domain_sets(16, 3, 0.1);
        let m1 = train_disentangler(&a, &p, &quick_cfg(16, 5, 9)).unwrap();
        let m2 = train_disentangler(&a, &p, &quick_cfg(16, 5, 9)).unwrap();
        assert_eq!(m1.log, m2.log);
        let s1 = m1.encode_style(&a[0]);
        let s2 = m2.encode_style(&a[0]);
        assert_eq!(s1.values, s2.values);
    }

    #[test]
    fn reconstruction_improves_over_first_200_steps() {
        let (a, p) = domain_sets(16, 4, 0.15);
        let model = train_disentangler(&a, &p, &quick_cfg(16, 200, 5)).unwrap();
        let early: f64 = model.log[..10].iter().map(|l| l.rec).sum::<f64>() / 10.0;
        let late: f64 =
            model.log[190..].iter().map(|l| l.rec).sum::<f64>() / 10.0;
        assert!(
            late < early,
            "reconstruction did not improve: early {early} late {late}"
        );
        assert!(model.log[199].rec < model.log[0].rec);
    }

    #[test]
    fn encode_style_is_deterministic_with_right_dim() {
        let (a, p) = domain_sets(16, 2, 0.1);
        let model = train_disentangler(&a, &p, &quick_cfg(16, 3, 4)).unwrap();
        let s1 = model.encode_style(&a[0]);
        let s2 = model.encode_style(&a[0]);
        assert_eq!(s1, s2);
        assert_eq!(s1.dim(), model.cfg.style_dim);
    }

    #[test]
    fn decoder_round_trip_shape_matches_input() {
        let (a, p) = domain_sets(16, 2, 0.1);
        let model = train_disentangler(&a, &p, &quick_cfg(16, 2, 8)).unwrap();
        let content = model.encode_content(&a[0]);
        let style = model.encode_style(&a[0]);
        let recon = model.decode(&content, &style);
        assert_eq!(recon.dim(), a[0].dim());
    }

    #[test]
    fn translation_moves_mean_intensity_toward_reference() {
        // the reference domain is brighter by a fixed shift; after training,
        // translated images should be closer to the reference mean than the
        // source image is
        let res = 16;
        let (a, p) = domain_sets(res, 5, 0.25);
        let cfg = DisentangleConfig {
            steps: 2000,
            ..quick_cfg(res, 2000, 11)
        };
        let model = train_disentangler(&a, &p, &cfg).unwrap();
        let mean_of = |img: &ImageTensor| img.sum() / img.len() as f64;
        let p_mean: f64 = p.iter().map(|i| mean_of(i)).sum::<f64>() / p.len() as f64;
        let mut improved = 0;
        for (i, img) in a.iter().enumerate() {
            let translated = model.translate_to_reference(img, &vec![0.0; cfg.style_dim]);
            let before = (mean_of(img) - p_mean).abs();
            let after = (mean_of(&translated) - p_mean).abs();
            if after < before {
                improved += 1;
            }
            let _ = i;
        }
        assert!(
            improved > a.len() / 2,
            "only {improved}/{} translations moved toward the reference",
            a.len()
        );
    }

    #[test]
    fn single_image_set_runs() {
        let (a, p) = domain_sets(16, 3, 0.1);
        let single = vec![a[0].clone()];
        let model = train_disentangler(&single, &p, &quick_cfg(16, 5, 6)).unwrap();
        let value = crate::styledist::iob_mean(&single, &model).unwrap();
        assert!(value.is_finite() && value > 0.0);
    }
}
