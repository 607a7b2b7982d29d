//! Synthetic fixture generators: sky/ground composites, class-coded cloud
//! patterns, textured style domains, and a full miniature corpus with
//! manifest, images, and ground-truth masks. Everything is deterministic
//! given the seed.

use crate::corpus::{
    save_manifest, CloudLabel, CorpusError, CorpusRecord, ImageSource, Manifest, Split,
    SCHEMA_VERSION,
};
use crate::imgio::{save_image, save_mask, ImageTensor, Mask};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

/// Writes a small deterministic RGB PNG; used wherever a record needs a
/// readable image and nothing else matters.
pub fn write_test_png(path: &Path, w: u32, h: u32, seed: u64) {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).expect("create fixture dir");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = image::RgbImage::new(w, h);
    for px in img.pixels_mut() {
        *px = image::Rgb([rng.gen(), rng.gen(), rng.gen()]);
    }
    img.save(path).expect("write fixture png");
}

/// Smooth gradient sky over textured dark ground with a flat horizon.
/// Returns the image and its ground-truth sky mask (1 = sky).
pub fn sky_ground_image(h: usize, w: usize, seed: u64) -> (ImageTensor, Mask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = ((0.40 + 0.30 * rng.gen::<f64>()) * h as f64).round() as usize;
    let horizon = horizon.clamp(1, h - 1);
    let mut img = Array3::zeros((3, h, w));
    let mut mask = Array2::zeros((h, w));
    for y in 0..h {
        let t = y as f64 / h as f64;
        for x in 0..w {
            if y < horizon {
                // bright bluish gradient, brighter at the top
                img[[0, y, x]] = 0.55 + 0.15 * (1.0 - t);
                img[[1, y, x]] = 0.65 + 0.15 * (1.0 - t);
                img[[2, y, x]] = 0.85 + 0.10 * (1.0 - t);
                mask[[y, x]] = 1;
            } else {
                // dark speckled ground
                let n: f64 = rng.gen::<f64>() * 0.25;
                img[[0, y, x]] = 0.18 + n;
                img[[1, y, x]] = 0.22 + n * 0.8;
                img[[2, y, x]] = 0.10 + n * 0.5;
            }
        }
    }
    (clamp01(img), mask)
}

/// Ten visually distinct base colors, one per genus index.
const PALETTE: [[f64; 3]; 10] = [
    [0.85, 0.85, 0.95],
    [0.75, 0.85, 0.75],
    [0.90, 0.75, 0.75],
    [0.60, 0.70, 0.90],
    [0.80, 0.80, 0.55],
    [0.95, 0.90, 0.80],
    [0.45, 0.45, 0.60],
    [0.55, 0.60, 0.55],
    [0.70, 0.55, 0.70],
    [0.60, 0.75, 0.80],
];

/// A cloud-like pattern whose mean color and stripe frequency encode the
/// class, learnable by both a tiny CNN and a linear model.
pub fn class_pattern_image(res: usize, class_idx: usize, seed: u64) -> ImageTensor {
    assert!(class_idx < 10);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = PALETTE[class_idx];
    let freq = 1.0 + class_idx as f64;
    let phase: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
    let mut img = Array3::zeros((3, res, res));
    for y in 0..res {
        for x in 0..res {
            let wave = 0.08
                * ((freq * std::f64::consts::TAU * y as f64 / res as f64) + phase).sin();
            let noise = 0.04 * (rng.gen::<f64>() - 0.5);
            for c in 0..3 {
                img[[c, y, x]] = base[c] + wave + noise;
            }
        }
    }
    clamp01(img)
}

/// Textured style-domain image. Domain 0 is a hard checkerboard texture;
/// domain 1 is a smooth radial blob field. `brightness` shifts the whole
/// image and is the knob for a known domain gap.
pub fn texture_domain_image(domain: usize, res: usize, brightness: f64, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Array3::zeros((3, res, res));
    match domain {
        0 => {
            let cell = (res / 8).max(1);
            let jitter: f64 = rng.gen::<f64>() * 0.1;
            for y in 0..res {
                for x in 0..res {
                    let on = ((y / cell) + (x / cell)) % 2 == 0;
                    let v = if on { 0.62 + jitter } else { 0.38 - jitter };
                    img[[0, y, x]] = v + brightness;
                    img[[1, y, x]] = v * 0.9 + brightness;
                    img[[2, y, x]] = v * 1.1 + brightness;
                }
            }
        }
        _ => {
            let cx: f64 = rng.gen::<f64>() * res as f64;
            let cy: f64 = rng.gen::<f64>() * res as f64;
            for y in 0..res {
                for x in 0..res {
                    let d = (((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt()
                        / res as f64)
                        .min(1.0);
                    let v = 0.5 + 0.25 * (std::f64::consts::TAU * d).cos();
                    img[[0, y, x]] = v * 0.8 + brightness;
                    img[[1, y, x]] = v + brightness;
                    img[[2, y, x]] = v * 1.05 + brightness;
                }
            }
        }
    }
    clamp01(img)
}

fn clamp01(mut img: ImageTensor) -> ImageTensor {
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    img
}

/// Layout produced by [`e2e_corpus`].
pub struct CorpusFixture {
    pub manifest_path: PathBuf,
    pub mask_dir: PathBuf,
    pub artists: Vec<String>,
}

/// One genus per form so every populated class keeps a workable number of
/// fixture images.
pub const FIXTURE_GENERA: [CloudLabel; 5] = [
    CloudLabel::Cumulus,
    CloudLabel::Cumulonimbus,
    CloudLabel::Cirrus,
    CloudLabel::Stratus,
    CloudLabel::Altocumulus,
];

/// Generates a miniature annotated corpus: `n_artists` painters with
/// `paintings_per_artist` works each (sky pattern over textured ground, with
/// ground-truth masks) plus `n_photos` full-sky photographs, splitting photos
/// into train and paintings into test. Artist k carries a small color tint so
/// the style branch has a real domain gap to find.
pub fn e2e_corpus(
    dir: &Path,
    n_artists: usize,
    paintings_per_artist: usize,
    n_photos: usize,
    res: usize,
    seed: u64,
) -> Result<CorpusFixture, CorpusError> {
    let img_dir = dir.join("images");
    let mask_dir = dir.join("masks");
    std::fs::create_dir_all(&img_dir).map_err(|e| CorpusError::Io {
        path: img_dir.display().to_string(),
        source: e,
    })?;
    std::fs::create_dir_all(&mask_dir).map_err(|e| CorpusError::Io {
        path: mask_dir.display().to_string(),
        source: e,
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let artists: Vec<String> = (0..n_artists).map(|i| format!("artist_{i}")).collect();

    for (ai, artist) in artists.iter().enumerate() {
        for pi in 0..paintings_per_artist {
            let id = format!("p_{ai}_{pi}");
            let genus = FIXTURE_GENERA[(pi + ai) % FIXTURE_GENERA.len()];
            let img_seed = rng.gen();
            let (mut img, mask) = painting_image(res, genus, ai, img_seed);
            img = clamp01(img);
            let rel = PathBuf::from(format!("images/{id}.png"));
            save_image(&dir.join(&rel), &img).map_err(io_to_corpus)?;
            save_mask(&mask_dir.join(format!("{id}.png")), &mask).map_err(io_to_corpus)?;
            records.push(CorpusRecord {
                id,
                image_path: rel,
                source: ImageSource::Painting,
                artist: Some(artist.clone()),
                year: Some(1820 + ai as i32 * 7 + pi as i32),
                label10: Some(genus),
                label5: Some(crate::corpus::map_to_form(genus)),
                split: Split::Test,
                annotator: Some("synthetic".into()),
            });
        }
    }

    for k in 0..n_photos {
        let id = format!("ph_{k}");
        let genus = FIXTURE_GENERA[k % FIXTURE_GENERA.len()];
        let img_seed = rng.gen();
        let img = class_pattern_image(res, genus.index(), img_seed);
        let rel = PathBuf::from(format!("images/{id}.png"));
        save_image(&dir.join(&rel), &img).map_err(io_to_corpus)?;
        // photos are all sky
        let mask = Array2::ones((res, res));
        save_mask(&mask_dir.join(format!("{id}.png")), &mask).map_err(io_to_corpus)?;
        records.push(CorpusRecord {
            id,
            image_path: rel,
            source: ImageSource::Photo,
            artist: None,
            year: None,
            label10: Some(genus),
            label5: Some(crate::corpus::map_to_form(genus)),
            split: Split::Train,
            annotator: Some("synthetic".into()),
        });
    }

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        records,
        base_dir: dir.to_path_buf(),
    };
    let manifest_path = dir.join("manifest.jsonl");
    save_manifest(&manifest_path, &manifest)?;
    Ok(CorpusFixture {
        manifest_path,
        mask_dir,
        artists,
    })
}

/// A painting: class-coded sky above a dark textured ground, tinted per
/// artist. Returns the image and the sky mask.
fn painting_image(
    res: usize,
    genus: CloudLabel,
    artist_idx: usize,
    seed: u64,
) -> (ImageTensor, Mask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sky = class_pattern_image(res, genus.index(), rng.gen());
    let horizon = ((0.55 + 0.15 * rng.gen::<f64>()) * res as f64).round() as usize;
    let horizon = horizon.clamp(1, res - 1);
    let tint = 0.04 * artist_idx as f64;
    let mut img = Array3::zeros((3, res, res));
    let mut mask = Array2::zeros((res, res));
    for y in 0..res {
        for x in 0..res {
            if y < horizon {
                img[[0, y, x]] = sky[[0, y, x]] + tint;
                img[[1, y, x]] = sky[[1, y, x]];
                img[[2, y, x]] = sky[[2, y, x]] - tint * 0.5;
                mask[[y, x]] = 1;
            } else {
                let n: f64 = rng.gen::<f64>() * 0.2;
                img[[0, y, x]] = 0.16 + n;
                img[[1, y, x]] = 0.20 + n * 0.8;
                img[[2, y, x]] = 0.09 + n * 0.5;
            }
        }
    }
    (clamp01(img), mask)
}

fn io_to_corpus(e: crate::imgio::ImgError) -> CorpusError {
    CorpusError::Io {
        path: e.to_string(),
        source: std::io::Error::other(e.to_string()),
    }
}
