//! End-to-end orchestration: segmentation → classifier training and
//! evaluation → style training and metrics → statistics, with per-stage
//! content-addressed caching and a deterministic CSV report.
//!
//! Stage keys hash the stage configuration plus every transitive input, so
//! editing an input file or a config section re-runs exactly the dependent
//! stages. Stages persist JSON summaries in their cache directories; the
//! report is rebuilt from summaries on every run and is byte-identical for
//! identical configs and inputs.

mod cache;
mod report;

pub use cache::{hash_parts, short_key, StageCache};
pub use report::{fmt_f, fmt_p, CsvTable};

use crate::corpus::{load_manifest, CloudForm, CloudLabel, ImageSource, Manifest, Split};
use crate::edgefeat::{EdgeBackend, EdgeBackendConfig};
use crate::fusionnet::{
    evaluate, train, Granularity, LabeledSet, Model, ModelSpec, SemiConfig, TrainConfig,
    UnlabeledSet,
};
use crate::imgio::{load_image, load_mask, resize_bilinear, save_image, save_mask, ImageTensor};
use crate::skyseg::{
    a3c_cluster, apply_sky_selection, fit_sky_classifier, predict_sky_mask, seg_metrics,
    segment_features, segment_labels_from_mask, A3cConfig, LogisticFitConfig, SkyClassifier,
};
use crate::stats::{
    anova_f, pearson, resample_subsets, t_one_tailed, wald_ci, z_prop_cc, Direction, StatsError,
    SubsetPlan,
};
use crate::styledist::{
    d_style, r_style, train_disentangler, DisentangleConfig, StyleCodec, StyleEntry,
};
use ndarray::Array2;
use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage {stage}: {message}")]
    Stage { stage: String, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn stage_err(stage: &str, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Stage {
        stage: stage.to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegStageConfig {
    pub target_segments: usize,
    pub seed_block: usize,
    /// Fraction of gt-masked paintings used to fit the sky classifier; the
    /// rest score the masks.
    pub train_fraction: f64,
    pub model_resolution: usize,
}

impl Default for SegStageConfig {
    fn default() -> Self {
        SegStageConfig {
            target_segments: crate::skyseg::DEFAULT_TARGET_SEGMENTS,
            seed_block: crate::skyseg::DEFAULT_SEED_BLOCK,
            train_fraction: 0.5,
            model_resolution: crate::skyseg::DEFAULT_MODEL_RESOLUTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClsStageConfig {
    pub model: ModelSpec,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semi: Option<SemiConfig>,
    pub edge: EdgeBackendConfig,
    pub sky_selection: bool,
    /// Also run the no-fusion and no-sky-selection variants.
    pub ablation: bool,
    pub eval_batch: usize,
}

impl Default for ClsStageConfig {
    fn default() -> Self {
        ClsStageConfig {
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            semi: None,
            edge: EdgeBackendConfig::default(),
            sky_selection: true,
            ablation: false,
            eval_batch: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleStageConfig {
    pub model: DisentangleConfig,
    pub subset_plan: SubsetPlan,
    /// Photo reference set size, balanced over forms.
    pub reference_photos: usize,
}

impl Default for StyleStageConfig {
    fn default() -> Self {
        StyleStageConfig {
            model: DisentangleConfig::default(),
            subset_plan: SubsetPlan::default(),
            reference_photos: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsStageConfig {
    pub alpha: f64,
}

impl Default for StatsStageConfig {
    fn default() -> Self {
        StatsStageConfig { alpha: 0.05 }
    }
}

/// Fully serializable run description; identical configs plus identical
/// inputs reproduce identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    /// Directory of ground-truth sky masks named `<record id>.png`.
    pub mask_dir: PathBuf,
    pub seed: u64,
    pub segmentation: SegStageConfig,
    pub classifier: ClsStageConfig,
    pub style: StyleStageConfig,
    pub stats: StatsStageConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, PipelineError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        std::fs::write(path, serde_json::to_string_pretty(self).unwrap() + "\n")?;
        Ok(())
    }

    /// Miniature preset sized for the bundled synthetic fixture (32x32
    /// images). Model and stage seeds derive from `seed`.
    pub fn fixture_default(manifest: PathBuf, out_dir: PathBuf, mask_dir: PathBuf, seed: u64) -> Self {
        RunConfig {
            manifest,
            out_dir,
            mask_dir,
            seed,
            segmentation: SegStageConfig {
                target_segments: 12,
                seed_block: 4,
                train_fraction: 0.5,
                model_resolution: 32,
            },
            classifier: ClsStageConfig {
                model: ModelSpec::miniature(10),
                train: TrainConfig {
                    learning_rate: 1e-3,
                    batch_size: 8,
                    epochs: 4,
                    seed,
                },
                semi: None,
                edge: EdgeBackendConfig::default(),
                sky_selection: true,
                ablation: true,
                eval_batch: 16,
            },
            style: StyleStageConfig {
                model: DisentangleConfig {
                    resolution: 32,
                    base_channels: 8,
                    steps: 120,
                    seed,
                    ..DisentangleConfig::default()
                },
                subset_plan: SubsetPlan {
                    subset_size: 5,
                    n_subsets: 3,
                    seed: seed.wrapping_add(1),
                    allow_repeats: false,
                },
                reference_photos: 30,
            },
            stats: StatsStageConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageStatus {
    pub name: String,
    pub key: String,
    pub hit: bool,
}

#[derive(Debug)]
pub struct Report {
    pub run_id: String,
    pub report_dir: PathBuf,
    pub tables: BTreeMap<String, PathBuf>,
    pub stages: Vec<StageStatus>,
}

// ---------------------------------------------------------------------------
// stage summaries (cached as JSON)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordMeta {
    id: String,
    artist: Option<String>,
    source: ImageSource,
    split: Split,
    label10: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SegMetricsRow {
    id: String,
    artist: String,
    pixel_accuracy: f64,
    mean_accuracy: f64,
    mean_iou: f64,
    used_for_fit: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SegSummary {
    records: Vec<RecordMeta>,
    metrics: Vec<SegMetricsRow>,
    classifier: SkyClassifier,
    mean_iou_eval: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictionRow {
    id: String,
    artist: Option<String>,
    gt10: usize,
    pred10: usize,
    pred5: usize,
    max_posterior: f64,
    posterior: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArtistAccuracy {
    artist: String,
    n: usize,
    correct: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VariantSummary {
    variant: String,
    accuracy10: f64,
    accuracy5: f64,
    precision5: f64,
    recall5: f64,
    per_artist: Vec<ArtistAccuracy>,
    confusion5: Vec<Vec<usize>>,
    predictions: Vec<PredictionRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClsSummary {
    variants: Vec<VariantSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StyleSummary {
    artists: Vec<String>,
    /// Per artist: encoded style vectors of its paintings.
    styles: BTreeMap<String, Vec<(String, Vec<f64>)>>,
    encoder_ids: BTreeMap<String, String>,
    /// Per artist: R_style value per resampled subset.
    rstyle: BTreeMap<String, Vec<f64>>,
    /// Pair label -> per-subset D_style values.
    dstyle: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StatRow {
    test: String,
    subject: String,
    statistic: f64,
    p_value: f64,
    detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AccuracyCiRow {
    artist: String,
    n: usize,
    correct: usize,
    accuracy: f64,
    ci_lo: f64,
    ci_hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StatsSummary {
    accuracy_rows: Vec<AccuracyCiRow>,
    rows: Vec<StatRow>,
}

// ---------------------------------------------------------------------------
// pipeline driver
// ---------------------------------------------------------------------------

struct Ctx {
    cfg: RunConfig,
    manifest: Manifest,
    cache: StageCache,
    input_hash: String,
    stages: Vec<StageStatus>,
}

/// Accuracy with its Wald confidence interval.
pub fn accuracy_with_ci(
    preds: &[usize],
    labels: &[usize],
    alpha: f64,
) -> Result<(f64, f64, f64), PipelineError> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(PipelineError::Config(
            "empty or misaligned prediction/label sequences".into(),
        ));
    }
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    let n = preds.len();
    let (lo, hi) = wald_ci(correct as u64, n as u64, alpha)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    Ok((correct as f64 / n as f64, lo, hi))
}

pub fn run_experiment(cfg: &RunConfig) -> Result<Report, PipelineError> {
    let manifest = load_manifest(&cfg.manifest).map_err(|e| stage_err("load", e))?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let cache = StageCache::new(&cfg.out_dir)?;
    let input_hash = hash_inputs(cfg, &manifest)?;
    let mut ctx = Ctx {
        cfg: cfg.clone(),
        manifest,
        cache,
        input_hash,
        stages: Vec::new(),
    };

    let (seg_key, seg) = seg_stage(&mut ctx)?;
    let (cls_key, cls) = cls_stage(&mut ctx, &seg_key, &seg)?;
    let (style_key, style) = style_stage(&mut ctx, &seg_key, &seg)?;
    let (stats_key, stats) = stats_stage(&mut ctx, &cls_key, &cls, &style_key, &style)?;

    let run_id = short_key(&hash_parts(&[
        ("fingerprint", config_fingerprint(cfg).as_bytes()),
        ("inputs", ctx.input_hash.as_bytes()),
    ]));
    assemble_report(&ctx, &run_id, &seg, &cls, &style, &stats, &stats_key)
}

/// Configuration serialized with its filesystem paths removed, so the same
/// logical run hashed from different directories gets the same identity.
fn config_fingerprint(cfg: &RunConfig) -> String {
    let mut normalized = cfg.clone();
    normalized.manifest = PathBuf::new();
    normalized.out_dir = PathBuf::new();
    normalized.mask_dir = PathBuf::new();
    serde_json::to_string(&normalized).expect("config serializes")
}

fn hash_inputs(cfg: &RunConfig, manifest: &Manifest) -> Result<String, PipelineError> {
    let mut parts: Vec<(String, Vec<u8>)> = Vec::new();
    parts.push(("manifest".into(), std::fs::read(&cfg.manifest)?));
    for r in &manifest.records {
        let img = manifest.image_path(r);
        parts.push((format!("img:{}", r.id), std::fs::read(&img)?));
        let mask = cfg.mask_dir.join(format!("{}.png", r.id));
        if mask.exists() {
            parts.push((format!("mask:{}", r.id), std::fs::read(&mask)?));
        }
    }
    let borrowed: Vec<(&str, &[u8])> = parts
        .iter()
        .map(|(k, v)| (k.as_str(), v.as_slice()))
        .collect();
    Ok(hash_parts(&borrowed))
}

fn read_summary<T: for<'de> Deserialize<'de>>(dir: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(dir.join("summary.json"))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("bad summary: {e}")))
}

fn write_summary<T: Serialize>(dir: &Path, value: &T) -> Result<(), PipelineError> {
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string(value).expect("summary serializes"),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// segmentation stage
// ---------------------------------------------------------------------------

fn seg_stage(ctx: &mut Ctx) -> Result<(String, SegSummary), PipelineError> {
    const STAGE: &str = "seg";
    let cfg_json = serde_json::to_string(&ctx.cfg.segmentation).unwrap();
    let key = short_key(&hash_parts(&[
        ("stage", STAGE.as_bytes()),
        ("cfg", cfg_json.as_bytes()),
        ("seed", &ctx.cfg.seed.to_le_bytes()),
        ("inputs", ctx.input_hash.as_bytes()),
    ]));

    if let Some(dir) = ctx.cache.lookup(STAGE, &key) {
        let summary = read_summary(&dir)?;
        ctx.stages.push(StageStatus {
            name: STAGE.into(),
            key,
            hit: true,
        });
        return Ok((ctx.stages.last().unwrap().key.clone(), summary));
    }

    let dir = ctx.cache.begin(STAGE, &key)?;
    for sub in ["masks", "skysel", "raw"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    let seg_cfg = &ctx.cfg.segmentation;
    let a3c_cfg = A3cConfig {
        seed_block: seg_cfg.seed_block,
    };
    let res = seg_cfg.model_resolution;

    struct Loaded {
        meta: RecordMeta,
        image: ImageTensor,
        seg: Option<crate::skyseg::SegmentMap>,
        gt: Option<crate::imgio::Mask>,
    }

    let records: Vec<&crate::corpus::CorpusRecord> = ctx.manifest.records.iter().collect();
    let loaded: Vec<Result<Loaded, PipelineError>> = crate::parallel::map(&records, |r| {
        let image = load_image(&ctx.manifest.image_path(r)).map_err(|e| stage_err(STAGE, e))?;
        let meta = RecordMeta {
            id: r.id.clone(),
            artist: r.artist.clone(),
            source: r.source,
            split: r.split,
            label10: r.label10.map(|l| l.index()),
        };
        let seg = if r.source == ImageSource::Painting {
            Some(
                a3c_cluster(&image, seg_cfg.target_segments, &a3c_cfg)
                    .map_err(|e| stage_err(STAGE, e))?,
            )
        } else {
            None
        };
        let mask_path = ctx.cfg.mask_dir.join(format!("{}.png", r.id));
        let gt = if mask_path.exists() {
            Some(load_mask(&mask_path).map_err(|e| stage_err(STAGE, e))?)
        } else {
            None
        };
        Ok(Loaded {
            meta,
            image,
            seg,
            gt,
        })
    });
    let loaded: Vec<Loaded> = loaded.into_iter().collect::<Result<_, _>>()?;

    // choose the classifier-fitting subset among gt-masked paintings
    let mut paint_idx: Vec<usize> = loaded
        .iter()
        .enumerate()
        .filter(|(_, l)| l.seg.is_some() && l.gt.is_some())
        .map(|(i, _)| i)
        .collect();
    if paint_idx.is_empty() {
        return Err(stage_err(
            STAGE,
            "no paintings with ground-truth masks to fit the sky classifier",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed.wrapping_add(0xA3C));
    paint_idx.shuffle(&mut rng);
    let n_fit = ((paint_idx.len() as f64 * seg_cfg.train_fraction).ceil() as usize)
        .clamp(1, paint_idx.len());
    let fit_set: std::collections::HashSet<usize> = paint_idx[..n_fit].iter().copied().collect();

    let mut examples = Vec::new();
    for &i in &fit_set {
        let l = &loaded[i];
        let seg = l.seg.as_ref().unwrap();
        let feats = segment_features(&l.image, seg).map_err(|e| stage_err(STAGE, e))?;
        let labels = segment_labels_from_mask(seg, l.gt.as_ref().unwrap())
            .map_err(|e| stage_err(STAGE, e))?;
        examples.extend(feats.into_iter().zip(labels));
    }
    let classifier = fit_sky_classifier(&examples, &LogisticFitConfig::default())
        .map_err(|e| stage_err(STAGE, e))?;

    let mut metrics = Vec::new();
    let mut records_meta = Vec::new();
    for (i, l) in loaded.iter().enumerate() {
        let mask = match &l.seg {
            Some(seg) => {
                predict_sky_mask(&l.image, seg, &classifier).map_err(|e| stage_err(STAGE, e))?
            }
            None => Array2::ones((l.image.dim().1, l.image.dim().2)),
        };
        save_mask(&dir.join("masks").join(format!("{}.png", l.meta.id)), &mask)
            .map_err(|e| stage_err(STAGE, e))?;
        let selected = apply_sky_selection(&l.image, &mask, (res, res), &l.meta.id)
            .map_err(|e| stage_err(STAGE, e))?;
        save_image(
            &dir.join("skysel").join(format!("{}.png", l.meta.id)),
            &selected.pixels,
        )
        .map_err(|e| stage_err(STAGE, e))?;
        let raw = resize_bilinear(&l.image, res, res);
        save_image(&dir.join("raw").join(format!("{}.png", l.meta.id)), &raw)
            .map_err(|e| stage_err(STAGE, e))?;

        if let (Some(gt), Some(_)) = (&l.gt, &l.seg) {
            let m = seg_metrics(&mask, gt).map_err(|e| stage_err(STAGE, e))?;
            metrics.push(SegMetricsRow {
                id: l.meta.id.clone(),
                artist: l.meta.artist.clone().unwrap_or_default(),
                pixel_accuracy: m.pixel_accuracy,
                mean_accuracy: m.mean_accuracy,
                mean_iou: m.mean_iou,
                used_for_fit: fit_set.contains(&i),
            });
        }
        records_meta.push(l.meta.clone());
    }

    let eval_rows: Vec<&SegMetricsRow> = metrics.iter().filter(|m| !m.used_for_fit).collect();
    let mean_iou_eval = if eval_rows.is_empty() {
        f64::NAN
    } else {
        eval_rows.iter().map(|m| m.mean_iou).sum::<f64>() / eval_rows.len() as f64
    };

    let summary = SegSummary {
        records: records_meta,
        metrics,
        classifier,
        mean_iou_eval,
    };
    write_summary(&dir, &summary)?;
    ctx.cache.commit(STAGE, &key)?;
    ctx.stages.push(StageStatus {
        name: STAGE.into(),
        key: key.clone(),
        hit: false,
    });
    Ok((key, summary))
}

// ---------------------------------------------------------------------------
// classifier stage
// ---------------------------------------------------------------------------

fn load_stage_image(ctx: &Ctx, seg_key: &str, sub: &str, id: &str) -> Result<ImageTensor, PipelineError> {
    let path = ctx
        .cache
        .dir("seg", seg_key)
        .join(sub)
        .join(format!("{id}.png"));
    load_image(&path).map_err(|e| stage_err("cls", e))
}

fn cls_stage(
    ctx: &mut Ctx,
    seg_key: &str,
    seg: &SegSummary,
) -> Result<(String, ClsSummary), PipelineError> {
    const STAGE: &str = "cls";
    let cfg_json = serde_json::to_string(&ctx.cfg.classifier).unwrap();
    let key = short_key(&hash_parts(&[
        ("stage", STAGE.as_bytes()),
        ("seg", seg_key.as_bytes()),
        ("cfg", cfg_json.as_bytes()),
        ("seed", &ctx.cfg.seed.to_le_bytes()),
    ]));
    if let Some(dir) = ctx.cache.lookup(STAGE, &key) {
        let summary = read_summary(&dir)?;
        ctx.stages.push(StageStatus {
            name: STAGE.into(),
            key: key.clone(),
            hit: true,
        });
        return Ok((key, summary));
    }
    let dir = ctx.cache.begin(STAGE, &key)?;

    let mut variants = vec![("full".to_string(), true, true)];
    if ctx.cfg.classifier.ablation {
        variants.push(("no_fusion".into(), false, true));
        variants.push(("no_sky_selection".into(), true, false));
    }
    // honor the top-level axes when the base config disables them
    if !ctx.cfg.classifier.sky_selection {
        for v in &mut variants {
            if v.0 == "full" {
                v.2 = false;
            }
        }
    }
    if ctx.cfg.classifier.model.fusion_sites.is_empty() {
        for v in &mut variants {
            v.1 = false;
        }
    }

    let mut out_variants = Vec::new();
    for (name, fusion, sky_selection) in variants {
        let summary = run_cls_variant(ctx, seg_key, seg, &name, fusion, sky_selection)?;
        out_variants.push(summary);
    }

    let summary = ClsSummary {
        variants: out_variants,
    };
    write_summary(&dir, &summary)?;
    ctx.cache.commit(STAGE, &key)?;
    ctx.stages.push(StageStatus {
        name: STAGE.into(),
        key: key.clone(),
        hit: false,
    });
    Ok((key, summary))
}

fn run_cls_variant(
    ctx: &Ctx,
    seg_key: &str,
    seg: &SegSummary,
    variant: &str,
    fusion: bool,
    sky_selection: bool,
) -> Result<VariantSummary, PipelineError> {
    const STAGE: &str = "cls";
    let cls_cfg = &ctx.cfg.classifier;
    let mut spec = cls_cfg.model.clone();
    if !fusion {
        spec = spec.without_fusion();
    }
    let backend = EdgeBackend::from_config(&cls_cfg.edge).map_err(|e| stage_err(STAGE, e))?;
    let sub = if sky_selection { "skysel" } else { "raw" };

    let mut train_set = LabeledSet::default();
    let mut unlabeled = UnlabeledSet::default();
    let mut test_set = LabeledSet::default();
    let mut test_artists: Vec<Option<String>> = Vec::new();
    for meta in &seg.records {
        let image = load_stage_image(ctx, seg_key, sub, &meta.id)?;
        match (meta.split, meta.label10) {
            (Split::Train, Some(label)) => {
                train_set.ids.push(meta.id.clone());
                train_set.images.push(image);
                train_set.labels.push(label);
            }
            (Split::Test, Some(label)) => {
                test_set.ids.push(meta.id.clone());
                test_set.images.push(image);
                test_set.labels.push(label);
                test_artists.push(meta.artist.clone());
            }
            (Split::Unlabeled, _) => {
                unlabeled.ids.push(meta.id.clone());
                unlabeled.images.push(image);
            }
            _ => {}
        }
    }
    if test_set.is_empty() {
        return Err(stage_err(STAGE, "no labeled test records"));
    }

    let mut train_cfg = cls_cfg.train.clone();
    train_cfg.seed = ctx.cfg.seed;
    let mut model =
        Model::new(spec, ctx.cfg.seed.wrapping_add(2)).map_err(|e| stage_err(STAGE, e))?;
    let semi = if unlabeled.images.is_empty() {
        None
    } else {
        cls_cfg.semi.clone()
    };
    train(
        &mut model,
        &train_set,
        Some(&unlabeled),
        &train_cfg,
        semi.as_ref(),
        &backend,
    )
    .map_err(|e| stage_err(STAGE, e))?;

    let report10 = evaluate(
        &mut model,
        &test_set,
        Granularity::Ten,
        &backend,
        cls_cfg.eval_batch,
    )
    .map_err(|e| stage_err(STAGE, e))?;
    let report5 = evaluate(
        &mut model,
        &test_set,
        Granularity::Five,
        &backend,
        cls_cfg.eval_batch,
    )
    .map_err(|e| stage_err(STAGE, e))?;

    let mut per_artist: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut predictions = Vec::new();
    for ((rec5, rec10), artist) in report5
        .per_record
        .iter()
        .zip(&report10.per_record)
        .zip(&test_artists)
    {
        if let Some(artist) = artist {
            let entry = per_artist.entry(artist.clone()).or_insert((0, 0));
            entry.1 += 1;
            if rec5.pred == rec5.gt {
                entry.0 += 1;
            }
        }
        predictions.push(PredictionRow {
            id: rec10.id.clone(),
            artist: artist.clone(),
            gt10: rec10.gt,
            pred10: rec10.pred,
            pred5: rec5.pred,
            max_posterior: rec10.max_posterior,
            posterior: rec10.posterior.clone(),
        });
    }

    Ok(VariantSummary {
        variant: variant.to_string(),
        accuracy10: report10.accuracy,
        accuracy5: report5.accuracy,
        precision5: report5.precision,
        recall5: report5.recall,
        per_artist: per_artist
            .into_iter()
            .map(|(artist, (correct, n))| ArtistAccuracy { artist, n, correct })
            .collect(),
        confusion5: report5
            .confusion
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect(),
        predictions,
    })
}

// ---------------------------------------------------------------------------
// style stage
// ---------------------------------------------------------------------------

fn style_stage(
    ctx: &mut Ctx,
    seg_key: &str,
    seg: &SegSummary,
) -> Result<(String, StyleSummary), PipelineError> {
    const STAGE: &str = "style";
    let cfg_json = serde_json::to_string(&ctx.cfg.style).unwrap();
    let key = short_key(&hash_parts(&[
        ("stage", STAGE.as_bytes()),
        ("seg", seg_key.as_bytes()),
        ("cfg", cfg_json.as_bytes()),
        ("seed", &ctx.cfg.seed.to_le_bytes()),
    ]));
    if let Some(dir) = ctx.cache.lookup(STAGE, &key) {
        let summary = read_summary(&dir)?;
        ctx.stages.push(StageStatus {
            name: STAGE.into(),
            key: key.clone(),
            hit: true,
        });
        return Ok((key, summary));
    }
    let dir = ctx.cache.begin(STAGE, &key)?;

    let style_cfg = &ctx.cfg.style;
    let res = style_cfg.model.resolution;
    let load_styled = |id: &str| -> Result<ImageTensor, PipelineError> {
        let img = load_stage_image(ctx, seg_key, "skysel", id)?;
        Ok(if img.dim().1 == res {
            img
        } else {
            resize_bilinear(&img, res, res)
        })
    };

    // balanced photo reference set
    let mut photos_by_form: BTreeMap<usize, Vec<&RecordMeta>> = BTreeMap::new();
    for meta in &seg.records {
        if meta.source == ImageSource::Photo {
            if let Some(l10) = meta.label10 {
                let form = crate::corpus::map_to_form(CloudLabel::from_index(l10).unwrap());
                photos_by_form.entry(form.index()).or_default().push(meta);
            }
        }
    }
    let mut reference_ids = Vec::new();
    let mut cursor = 0usize;
    while reference_ids.len() < style_cfg.reference_photos {
        let mut advanced = false;
        for group in photos_by_form.values() {
            if let Some(meta) = group.get(cursor) {
                reference_ids.push(meta.id.clone());
                advanced = true;
                if reference_ids.len() == style_cfg.reference_photos {
                    break;
                }
            }
        }
        if !advanced {
            break;
        }
        cursor += 1;
    }
    if reference_ids.is_empty() {
        return Err(stage_err(STAGE, "no labeled photos for the reference set"));
    }
    let reference: Vec<ImageTensor> = reference_ids
        .iter()
        .map(|id| load_styled(id))
        .collect::<Result<_, _>>()?;

    // per-artist paintings
    let mut artists: Vec<String> = Vec::new();
    let mut paintings: BTreeMap<String, Vec<(String, ImageTensor)>> = BTreeMap::new();
    for meta in &seg.records {
        if meta.source == ImageSource::Painting {
            if let Some(artist) = &meta.artist {
                if !artists.contains(artist) {
                    artists.push(artist.clone());
                }
                paintings
                    .entry(artist.clone())
                    .or_default()
                    .push((meta.id.clone(), load_styled(&meta.id)?));
            }
        }
    }
    if artists.is_empty() {
        return Err(stage_err(STAGE, "no paintings for the style stage"));
    }

    // per-artist encoders + style vectors
    let mut styles: BTreeMap<String, Vec<(String, Vec<f64>)>> = BTreeMap::new();
    let mut encoder_ids = BTreeMap::new();
    let mut entries: BTreeMap<String, Vec<StyleEntry>> = BTreeMap::new();
    for (ai, artist) in artists.iter().enumerate() {
        let set: Vec<ImageTensor> = paintings[artist].iter().map(|(_, im)| im.clone()).collect();
        let mut cfg = style_cfg.model.clone();
        cfg.seed = style_cfg.model.seed.wrapping_add(ai as u64 + 10);
        let model = train_disentangler(&set, &reference, &cfg).map_err(|e| stage_err(STAGE, e))?;
        encoder_ids.insert(artist.clone(), model.encoder_id());
        let mut rows = Vec::new();
        let mut ent = Vec::new();
        for (id, img) in &paintings[artist] {
            let v = model.encode_style(img);
            rows.push((id.clone(), v.values.clone()));
            ent.push(StyleEntry {
                id: id.clone(),
                vector: v,
            });
        }
        styles.insert(artist.clone(), rows);
        entries.insert(artist.clone(), ent);
    }

    // R_style per resampled subset of each artist's paintings
    let mut rstyle: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (ai, artist) in artists.iter().enumerate() {
        let set = &paintings[artist];
        let mut plan = style_cfg.subset_plan.clone();
        plan.subset_size = plan.subset_size.min(set.len());
        let subsets = resample_subsets(set, &plan).map_err(|e| stage_err(STAGE, e))?;
        let mut values = Vec::new();
        for (si, subset) in subsets.iter().enumerate() {
            let imgs: Vec<ImageTensor> = subset.iter().map(|(_, im)| im.clone()).collect();
            let mut cfg = style_cfg.model.clone();
            cfg.seed = style_cfg
                .model
                .seed
                .wrapping_add(1000 + ai as u64 * 100 + si as u64);
            let outcome = r_style(&imgs, &reference, &cfg).map_err(|e| stage_err(STAGE, e))?;
            values.push(outcome.value);
        }
        rstyle.insert(artist.clone(), values);
    }

    // D_style between the first artist's subsets and every artist (plus a
    // disjoint second sample of its own subsets as the self baseline)
    let mut dstyle: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let first = &artists[0];
    let first_entries = &entries[first];
    let subset_entries = |artist: &str, seed_shift: u64| -> Result<Vec<Vec<StyleEntry>>, PipelineError> {
        let ent = &entries[artist];
        let mut plan = style_cfg.subset_plan.clone();
        plan.subset_size = plan.subset_size.min(ent.len());
        plan.seed = plan.seed.wrapping_add(seed_shift);
        resample_subsets(ent, &plan).map_err(|e| stage_err(STAGE, e))
    };
    let first_subsets = subset_entries(first, 0)?;
    for (ai, artist) in artists.iter().enumerate() {
        let other_subsets = if artist == first {
            subset_entries(first, 7919)? // independent second sample
        } else {
            subset_entries(artist, ai as u64)?
        };
        let mut values = Vec::new();
        for (sa, sb) in first_subsets.iter().zip(&other_subsets) {
            let rep = d_style(sa, sb).map_err(|e| stage_err(STAGE, e))?;
            values.push(rep.d_style);
        }
        let label = format!("{first}|{artist}");
        dstyle.insert(label, values);
    }
    let _ = first_entries;

    let summary = StyleSummary {
        artists,
        styles,
        encoder_ids,
        rstyle,
        dstyle,
    };
    write_summary(&dir, &summary)?;
    ctx.cache.commit(STAGE, &key)?;
    ctx.stages.push(StageStatus {
        name: STAGE.into(),
        key: key.clone(),
        hit: false,
    });
    Ok((key, summary))
}

// ---------------------------------------------------------------------------
// stats stage
// ---------------------------------------------------------------------------

fn stats_stage(
    ctx: &mut Ctx,
    cls_key: &str,
    cls: &ClsSummary,
    style_key: &str,
    style: &StyleSummary,
) -> Result<(String, StatsSummary), PipelineError> {
    const STAGE: &str = "stats";
    let cfg_json = serde_json::to_string(&ctx.cfg.stats).unwrap();
    let key = short_key(&hash_parts(&[
        ("stage", STAGE.as_bytes()),
        ("cls", cls_key.as_bytes()),
        ("style", style_key.as_bytes()),
        ("cfg", cfg_json.as_bytes()),
    ]));
    if let Some(dir) = ctx.cache.lookup(STAGE, &key) {
        let summary = read_summary(&dir)?;
        ctx.stages.push(StageStatus {
            name: STAGE.into(),
            key: key.clone(),
            hit: true,
        });
        return Ok((key, summary));
    }
    let dir = ctx.cache.begin(STAGE, &key)?;
    let alpha = ctx.cfg.stats.alpha;

    let full = cls
        .variants
        .iter()
        .find(|v| v.variant == "full")
        .ok_or_else(|| stage_err(STAGE, "missing full classifier variant"))?;

    let mut accuracy_rows = Vec::new();
    for a in &full.per_artist {
        let (lo, hi) =
            wald_ci(a.correct as u64, a.n as u64, alpha).map_err(|e| stage_err(STAGE, e))?;
        accuracy_rows.push(AccuracyCiRow {
            artist: a.artist.clone(),
            n: a.n,
            correct: a.correct,
            accuracy: a.correct as f64 / a.n as f64,
            ci_lo: lo,
            ci_hi: hi,
        });
    }

    let mut rows = Vec::new();
    let push_result = |rows: &mut Vec<StatRow>,
                       test: &str,
                       subject: String,
                       res: Result<crate::stats::StatResult, StatsError>,
                       detail: String| {
        match res {
            Ok(r) => rows.push(StatRow {
                test: test.into(),
                subject,
                statistic: r.statistic,
                p_value: r.p_value,
                detail,
            }),
            Err(e) => rows.push(StatRow {
                test: test.into(),
                subject,
                statistic: f64::NAN,
                p_value: f64::NAN,
                detail: format!("degenerate: {e}"),
            }),
        }
    };

    // one-tailed z-tests: first artist vs the rest on 5-form accuracy
    if full.per_artist.len() >= 2 {
        let lead = &full.per_artist[0];
        for other in &full.per_artist[1..] {
            push_result(
                &mut rows,
                "z_prop_cc",
                format!("{} > {}", lead.artist, other.artist),
                z_prop_cc(
                    lead.correct as u64,
                    lead.n as u64,
                    other.correct as u64,
                    other.n as u64,
                ),
                "H1: first artist classified more accurately".into(),
            );
        }
    }

    // fusion-axis z-test per the ablation protocol
    if let Some(no_fusion) = cls.variants.iter().find(|v| v.variant == "no_fusion") {
        let n: usize = full.per_artist.iter().map(|a| a.n).sum();
        let c_full: usize = full.per_artist.iter().map(|a| a.correct).sum();
        let c_nf: usize = no_fusion.per_artist.iter().map(|a| a.correct).sum();
        push_result(
            &mut rows,
            "z_prop_cc",
            "fusion > no_fusion".into(),
            z_prop_cc(c_full as u64, n as u64, c_nf as u64, n as u64),
            "H1: edge fusion improves accuracy".into(),
        );
    }

    // ANOVA across artists' R_style subset distributions
    let groups: Vec<Vec<f64>> = style
        .artists
        .iter()
        .filter_map(|a| style.rstyle.get(a).cloned())
        .filter(|g| g.len() >= 2)
        .collect();
    if groups.len() >= 2 {
        push_result(
            &mut rows,
            "anova_f",
            "rstyle across artists".into(),
            anova_f(&groups),
            format!("{} groups", groups.len()),
        );
    }

    // Welch one-tailed t-tests on R_style: first artist vs the rest
    if let Some(lead_values) = style.rstyle.get(&style.artists[0]) {
        for other in &style.artists[1..] {
            if let Some(other_values) = style.rstyle.get(other) {
                if lead_values.len() >= 2 && other_values.len() >= 2 {
                    push_result(
                        &mut rows,
                        "t_one_tailed",
                        format!("rstyle {} < {}", style.artists[0], other),
                        t_one_tailed(lead_values, other_values, Direction::XLess),
                        "H1: first artist closer to photographs".into(),
                    );
                }
            }
        }
    }

    // Welch one-tailed t-tests on D_style against the self baseline
    let self_label = format!("{}|{}", style.artists[0], style.artists[0]);
    if let Some(baseline) = style.dstyle.get(&self_label) {
        for (label, values) in &style.dstyle {
            if label != &self_label && baseline.len() >= 2 && values.len() >= 2 {
                push_result(
                    &mut rows,
                    "t_one_tailed",
                    format!("dstyle {self_label} < {label}"),
                    t_one_tailed(baseline, values, Direction::XLess),
                    "H1: self distance below cross distance".into(),
                );
            }
        }
    }

    // Pearson between per-artist accuracy and mean R_style
    if full.per_artist.len() >= 3 {
        let mut acc = Vec::new();
        let mut rs = Vec::new();
        for a in &full.per_artist {
            if let Some(values) = style.rstyle.get(&a.artist) {
                if !values.is_empty() {
                    acc.push(a.correct as f64 / a.n as f64);
                    rs.push(values.iter().sum::<f64>() / values.len() as f64);
                }
            }
        }
        if acc.len() >= 3 {
            push_result(
                &mut rows,
                "pearson",
                "accuracy vs rstyle".into(),
                pearson(&acc, &rs),
                format!("n={}", acc.len()),
            );
        }
    }

    let summary = StatsSummary {
        accuracy_rows,
        rows,
    };
    write_summary(&dir, &summary)?;
    ctx.cache.commit(STAGE, &key)?;
    ctx.stages.push(StageStatus {
        name: STAGE.into(),
        key: key.clone(),
        hit: false,
    });
    Ok((key, summary))
}

// ---------------------------------------------------------------------------
// report assembly
// ---------------------------------------------------------------------------

fn assemble_report(
    ctx: &Ctx,
    run_id: &str,
    seg: &SegSummary,
    cls: &ClsSummary,
    style: &StyleSummary,
    stats: &StatsSummary,
    stats_key: &str,
) -> Result<Report, PipelineError> {
    let report_dir = ctx.cfg.out_dir.join("report");
    std::fs::create_dir_all(&report_dir)?;
    let mut tables = BTreeMap::new();
    let mut write = |t: &CsvTable| -> Result<(), PipelineError> {
        let path = t.write_to(&report_dir)?;
        tables.insert(t.name.clone(), path);
        Ok(())
    };

    let mut seg_table = CsvTable::new(
        "seg_metrics",
        &[
            "id",
            "artist",
            "pixel_accuracy",
            "mean_accuracy",
            "mean_iou",
            "used_for_fit",
        ],
    );
    for m in &seg.metrics {
        seg_table.push(
            run_id,
            vec![
                m.id.clone(),
                m.artist.clone(),
                fmt_f(m.pixel_accuracy),
                fmt_f(m.mean_accuracy),
                fmt_f(m.mean_iou),
                m.used_for_fit.to_string(),
            ],
        );
    }
    write(&seg_table)?;

    let mut acc_table = CsvTable::new(
        "per_artist_accuracy",
        &["artist", "n", "correct", "accuracy", "ci_lo", "ci_hi"],
    );
    for r in &stats.accuracy_rows {
        acc_table.push(
            run_id,
            vec![
                r.artist.clone(),
                r.n.to_string(),
                r.correct.to_string(),
                fmt_f(r.accuracy),
                fmt_f(r.ci_lo),
                fmt_f(r.ci_hi),
            ],
        );
    }
    write(&acc_table)?;

    let mut confusion_table = CsvTable::new(
        "confusion_matrices",
        &["variant", "gt_form", "pred_form", "count"],
    );
    for v in &cls.variants {
        for (gi, row) in v.confusion5.iter().enumerate() {
            for (pi, count) in row.iter().enumerate() {
                confusion_table.push(
                    run_id,
                    vec![
                        v.variant.clone(),
                        CloudForm::ALL[gi].to_string(),
                        CloudForm::ALL[pi].to_string(),
                        count.to_string(),
                    ],
                );
            }
        }
    }
    write(&confusion_table)?;

    let mut ablation_table = CsvTable::new(
        "ablation",
        &["variant", "accuracy10", "accuracy5", "precision5", "recall5"],
    );
    for v in &cls.variants {
        ablation_table.push(
            run_id,
            vec![
                v.variant.clone(),
                fmt_f(v.accuracy10),
                fmt_f(v.accuracy5),
                fmt_f(v.precision5),
                fmt_f(v.recall5),
            ],
        );
    }
    write(&ablation_table)?;

    let mut pred_header: Vec<String> = vec![
        "id".into(),
        "pred10".into(),
        "pred5".into(),
        "max_posterior".into(),
    ];
    for genus in CloudLabel::ALL {
        pred_header.push(format!("p_{genus}"));
    }
    let pred_refs: Vec<&str> = pred_header.iter().map(String::as_str).collect();
    let mut pred_table = CsvTable::new("predictions", &pred_refs);
    if let Some(full) = cls.variants.iter().find(|v| v.variant == "full") {
        for p in &full.predictions {
            let mut cells = vec![
                p.id.clone(),
                CloudLabel::from_index(p.pred10)
                    .map(|l| l.to_string())
                    .unwrap_or_else(|| p.pred10.to_string()),
                CloudForm::ALL
                    .get(p.pred5)
                    .map(|f| f.to_string())
                    .unwrap_or_else(|| p.pred5.to_string()),
                fmt_f(p.max_posterior),
            ];
            for i in 0..CloudLabel::ALL.len() {
                cells.push(fmt_f(p.posterior.get(i).copied().unwrap_or(f64::NAN)));
            }
            pred_table.push(run_id, cells);
        }
    }
    write(&pred_table)?;

    let mut rstyle_table = CsvTable::new("rstyle", &["artist", "n_subsets", "mean", "std"]);
    for artist in &style.artists {
        if let Some(values) = style.rstyle.get(artist) {
            let (mean, std) = mean_std(values);
            rstyle_table.push(
                run_id,
                vec![
                    artist.clone(),
                    values.len().to_string(),
                    fmt_f(mean),
                    fmt_f(std),
                ],
            );
        }
    }
    write(&rstyle_table)?;

    let mut dstyle_table = CsvTable::new("dstyle", &["pair", "n_subsets", "mean", "std"]);
    for (label, values) in &style.dstyle {
        let (mean, std) = mean_std(values);
        dstyle_table.push(
            run_id,
            vec![
                label.clone(),
                values.len().to_string(),
                fmt_f(mean),
                fmt_f(std),
            ],
        );
    }
    write(&dstyle_table)?;

    let mut styles_table = CsvTable::new("style_vectors", &["id", "encoder_id", "d", "values"]);
    for artist in &style.artists {
        if let Some(rows) = style.styles.get(artist) {
            let encoder = style
                .encoder_ids
                .get(artist)
                .cloned()
                .unwrap_or_default();
            for (id, values) in rows {
                styles_table.push(
                    run_id,
                    vec![
                        id.clone(),
                        encoder.clone(),
                        values.len().to_string(),
                        values.iter().map(|v| fmt_f(*v)).collect::<Vec<_>>().join(";"),
                    ],
                );
            }
        }
    }
    write(&styles_table)?;

    let mut stats_table = CsvTable::new(
        "stats",
        &["test", "subject", "statistic", "p_value", "detail"],
    );
    for r in &stats.rows {
        stats_table.push(
            run_id,
            vec![
                r.test.clone(),
                r.subject.clone(),
                fmt_f(r.statistic),
                fmt_p(r.p_value),
                r.detail.clone(),
            ],
        );
    }
    write(&stats_table)?;

    let provenance = serde_json::json!({
        "run_id": run_id,
        "stats_key": stats_key,
        "stages": ctx.stages.iter().map(|s| {
            serde_json::json!({"stage": s.name, "key": s.key, "cache_hit": s.hit})
        }).collect::<Vec<_>>(),
        "config_fingerprint": config_fingerprint(&ctx.cfg),
        "input_hash": ctx.input_hash,
    });
    std::fs::write(
        report_dir.join("provenance.json"),
        serde_json::to_string_pretty(&provenance).unwrap() + "\n",
    )?;

    Ok(Report {
        run_id: run_id.to_string(),
        report_dir,
        tables,
        stages: ctx.stages.clone(),
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() as f64 - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_with_ci_matches_wald() {
        let preds = vec![0usize; 84];
        let mut labels = vec![0usize; 71];
        labels.extend(vec![1usize; 13]);
        let (acc, lo, hi) = accuracy_with_ci(&preds, &labels, 0.05).unwrap();
        assert!((acc - 0.8452).abs() < 1e-3);
        assert!((lo - 0.768).abs() < 1e-3);
        assert!((hi - 0.923).abs() < 1e-3);
    }

    #[test]
    fn accuracy_with_ci_all_correct() {
        let v = vec![1usize, 2, 3];
        let (acc, lo, hi) = accuracy_with_ci(&v, &v, 0.05).unwrap();
        assert_eq!((acc, lo, hi), (1.0, 1.0, 1.0));
    }

    #[test]
    fn accuracy_with_ci_delegates() {
        let preds = vec![0usize, 1];
        let labels = vec![0usize, 0];
        let (acc, lo, hi) = accuracy_with_ci(&preds, &labels, 0.05).unwrap();
        assert_eq!(acc, 0.5);
        let (wlo, whi) = wald_ci(1, 2, 0.05).unwrap();
        assert_eq!((lo, hi), (wlo, whi));
    }

    #[test]
    fn accuracy_with_ci_rejects_empty() {
        assert!(accuracy_with_ci(&[], &[], 0.05).is_err());
    }
}
