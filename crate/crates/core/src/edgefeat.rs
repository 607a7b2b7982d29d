//! Pluggable edge-feature backends producing multi-scale edge maps aligned
//! with the classifier's stage inputs.
//!
//! Two backends share one output contract. `Fixed` computes a normalized
//! gradient-magnitude map at each scale of an area-downsampled luminance
//! pyramid and has no parameters. `Hed` runs a small holistically-nested
//! edge network loaded from a checkpoint file; its side outputs (one per
//! stage, post-sigmoid) supply the maps and its parameters are frozen.

use crate::blockio::{read_container, write_container, Container, NamedBlock};
use crate::imgio::{luminance, resize_area, ImageTensor};
use crate::nn::{relu, sigmoid, Conv2d};
use ndarray::{s, Array2, Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EdgeError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{0}")]
    Io(String),
}

/// One aligned edge map per fusion site; map k matches the spatial size of
/// classic-stream stage k input. Values are finite and normalized to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePyramid {
    pub maps: Vec<Array3<f64>>, // (channels, s_k, s_k)
    pub backend_id: String,
}

/// Config keys: `edge.backend.kind` in {fixed, hed} and
/// `edge.backend.checkpoint` for the hed weights file.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EdgeBackendConfig {
    pub kind: EdgeBackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for EdgeBackendConfig {
    fn default() -> Self {
        EdgeBackendConfig {
            kind: EdgeBackendKind::Fixed,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeBackendKind {
    Fixed,
    Hed,
}

pub enum EdgeBackend {
    Fixed,
    Hed(HedNetwork),
}

impl EdgeBackend {
    pub fn from_config(cfg: &EdgeBackendConfig) -> Result<EdgeBackend, EdgeError> {
        match cfg.kind {
            EdgeBackendKind::Fixed => Ok(EdgeBackend::Fixed),
            EdgeBackendKind::Hed => {
                let path = cfg.checkpoint.as_ref().ok_or_else(|| {
                    EdgeError::BackendUnavailable(
                        "hed backend requires edge.backend.checkpoint".into(),
                    )
                })?;
                if !path.exists() {
                    return Err(EdgeError::BackendUnavailable(format!(
                        "hed checkpoint {} missing",
                        path.display()
                    )));
                }
                Ok(EdgeBackend::Hed(HedNetwork::load(path)?))
            }
        }
    }

    pub fn id(&self) -> &str {
        match self {
            EdgeBackend::Fixed => "fixed",
            EdgeBackend::Hed(_) => "hed",
        }
    }

    /// Channels per edge map; part of the model's construction-time shape
    /// contract.
    pub fn channels(&self) -> usize {
        1
    }
}

/// Computes one edge map per requested size.
pub fn edge_pyramid(
    image: &ImageTensor,
    sizes: &[usize],
    backend: &EdgeBackend,
) -> Result<EdgePyramid, EdgeError> {
    let (c, h, w) = image.dim();
    if c != 3 || h == 0 || w == 0 {
        return Err(EdgeError::ShapeMismatch(
            "image must be 3-channel and non-empty".into(),
        ));
    }
    let maps = match backend {
        EdgeBackend::Fixed => fixed_pyramid(image, sizes),
        EdgeBackend::Hed(net) => net.side_outputs(image, sizes)?,
    };
    for (map, &size) in maps.iter().zip(sizes) {
        let (_, mh, mw) = map.dim();
        if mh != size || mw != size {
            return Err(EdgeError::ShapeMismatch(format!(
                "edge map {mh}x{mw} does not match requested size {size}"
            )));
        }
        if map.iter().any(|v| !v.is_finite()) {
            return Err(EdgeError::ShapeMismatch("non-finite edge value".into()));
        }
    }
    Ok(EdgePyramid {
        maps,
        backend_id: backend.id().to_string(),
    })
}

fn fixed_pyramid(image: &ImageTensor, sizes: &[usize]) -> Vec<Array3<f64>> {
    let lum = luminance(image);
    sizes
        .iter()
        .map(|&size| {
            let g = resize_area(&lum, size, size);
            gradient_magnitude(&g).insert_axis(ndarray::Axis(0))
        })
        .collect()
}

/// Central-difference gradient magnitude with replicated borders, normalized
/// by its maximum attainable value on [0, 1] inputs so outputs stay in
/// [0, 1] and constant inputs map to exactly zero.
fn gradient_magnitude(g: &Array2<f64>) -> Array2<f64> {
    let (h, w) = g.dim();
    let norm = 0.5 * std::f64::consts::SQRT_2;
    Array2::from_shape_fn((h, w), |(y, x)| {
        let y0 = y.saturating_sub(1);
        let y1 = (y + 1).min(h - 1);
        let x0 = x.saturating_sub(1);
        let x1 = (x + 1).min(w - 1);
        let gy = (g[[y1, x]] - g[[y0, x]]) / 2.0;
        let gx = (g[[y, x1]] - g[[y, x0]]) / 2.0;
        ((gx * gx + gy * gy).sqrt() / norm).min(1.0)
    })
}

/// A small holistically-nested edge network: per stage one 3x3 conv + relu,
/// a post-sigmoid 1x1 side projection, then 2x2 downsampling into the next
/// stage. Weights come exclusively from a checkpoint; nothing here trains.
pub struct HedNetwork {
    stages: Vec<(Conv2d, Conv2d)>, // (trunk conv, side 1x1 conv)
    pub id: String,
}

const HED_TAG: &str = "hed-ckpt";
const HED_WIDTHS: [usize; 5] = [8, 16, 16, 16, 16];

impl HedNetwork {
    /// Randomly initialized network, for producing test checkpoints.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::new();
        let mut in_ch = 3;
        for &width in HED_WIDTHS.iter() {
            let trunk = Conv2d::new(in_ch, width, 3, 1, 1, &mut rng);
            let side = Conv2d::new(width, 1, 1, 1, 0, &mut rng);
            stages.push((trunk, side));
            in_ch = width;
        }
        HedNetwork {
            stages,
            id: format!("hed-random-{seed}"),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), EdgeError> {
        let mut blocks = Vec::new();
        for (i, (trunk, side)) in self.stages.iter().enumerate() {
            blocks.push(NamedBlock {
                name: format!("stage{i}.trunk.w"),
                data: trunk.weight.iter().copied().collect(),
            });
            blocks.push(NamedBlock {
                name: format!("stage{i}.trunk.b"),
                data: trunk.bias.to_vec(),
            });
            blocks.push(NamedBlock {
                name: format!("stage{i}.side.w"),
                data: side.weight.iter().copied().collect(),
            });
            blocks.push(NamedBlock {
                name: format!("stage{i}.side.b"),
                data: side.bias.to_vec(),
            });
        }
        let container = Container {
            tag: HED_TAG.into(),
            header_json: serde_json::json!({ "id": self.id, "widths": HED_WIDTHS })
                .to_string(),
            blocks,
        };
        write_container(path, &container).map_err(|e| EdgeError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, EdgeError> {
        let container = read_container(path).map_err(|e| EdgeError::Io(e.to_string()))?;
        if container.tag != HED_TAG {
            return Err(EdgeError::Io(format!(
                "expected tag {HED_TAG}, found {}",
                container.tag
            )));
        }
        let header: serde_json::Value = serde_json::from_str(&container.header_json)
            .map_err(|e| EdgeError::Io(format!("bad header json: {e}")))?;
        let id = header["id"].as_str().unwrap_or("hed").to_string();
        let mut net = HedNetwork::random(0);
        net.id = id;
        for block in &container.blocks {
            let parts: Vec<&str> = block.name.split('.').collect();
            if parts.len() != 3 {
                return Err(EdgeError::Io(format!("unexpected block {}", block.name)));
            }
            let stage: usize = parts[0]
                .strip_prefix("stage")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| EdgeError::Io(format!("unexpected block {}", block.name)))?;
            let (trunk, side) = net
                .stages
                .get_mut(stage)
                .ok_or_else(|| EdgeError::Io(format!("stage {stage} out of range")))?;
            let conv = if parts[1] == "trunk" { trunk } else { side };
            let target: &mut [f64] = if parts[2] == "w" {
                conv.weight.as_slice_mut().expect("contiguous")
            } else {
                conv.bias.as_slice_mut().expect("contiguous")
            };
            if target.len() != block.data.len() {
                return Err(EdgeError::Io(format!(
                    "block {} has {} values, expected {}",
                    block.name,
                    block.data.len(),
                    target.len()
                )));
            }
            target.copy_from_slice(&block.data);
        }
        Ok(net)
    }

    /// Bytes of all parameters, for freeze audits.
    pub fn parameter_fingerprint(&self) -> Vec<u64> {
        let mut bits = Vec::new();
        for (trunk, side) in &self.stages {
            bits.extend(trunk.weight.iter().map(|v| v.to_bits()));
            bits.extend(trunk.bias.iter().map(|v| v.to_bits()));
            bits.extend(side.weight.iter().map(|v| v.to_bits()));
            bits.extend(side.bias.iter().map(|v| v.to_bits()));
        }
        bits
    }

    fn side_outputs(
        &self,
        image: &ImageTensor,
        sizes: &[usize],
    ) -> Result<Vec<Array3<f64>>, EdgeError> {
        if sizes.len() > self.stages.len() {
            return Err(EdgeError::ShapeMismatch(format!(
                "{} sizes requested but network has {} stages",
                sizes.len(),
                self.stages.len()
            )));
        }
        let (c, h, w) = image.dim();
        let mut x = Array4::zeros((1, c, h, w));
        x.slice_mut(s![0, .., .., ..]).assign(image);
        let mut maps = Vec::new();
        for (k, &size) in sizes.iter().enumerate() {
            let (trunk, side) = &self.stages[k];
            let feat = relu(&trunk.forward(&x));
            let side_map = sigmoid(&side.forward(&feat));
            let (_, _, sh, sw) = side_map.dim();
            if (sh, sw) != (size, size) {
                return Err(EdgeError::ShapeMismatch(format!(
                    "stage {k} side output {sh}x{sw}, expected {size}x{size}"
                )));
            }
            maps.push(side_map.slice(s![0, .., .., ..]).to_owned());
            if k + 1 < sizes.len() {
                x = crate::nn::maxpool2_forward(&feat);
            }
        }
        Ok(maps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3 as A3;

    fn sizes_for(input: usize) -> Vec<usize> {
        vec![input, input / 2, input / 4, input / 8, input / 16]
    }

    #[test]
    fn constant_image_gives_zero_maps() {
        let img = A3::from_elem((3, 32, 32), 0.42);
        let pyr = edge_pyramid(&img, &sizes_for(32), &EdgeBackend::Fixed).unwrap();
        for map in &pyr.maps {
            assert!(map.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn pyramid_sizes_match_stage_inputs() {
        let img = A3::from_shape_fn((3, 32, 32), |(c, y, x)| {
            ((c + y * x) % 13) as f64 / 13.0
        });
        let sizes = sizes_for(32);
        let pyr = edge_pyramid(&img, &sizes, &EdgeBackend::Fixed).unwrap();
        assert_eq!(pyr.maps.len(), 5);
        for (map, &s) in pyr.maps.iter().zip(&sizes) {
            assert_eq!(map.dim(), (1, s, s));
            assert!(map.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert_eq!(pyr.backend_id, "fixed");
    }

    #[test]
    fn step_edge_peaks_near_the_step_at_every_scale() {
        let col_step = 40;
        let img = A3::from_shape_fn((3, 64, 64), |(_, _, x)| f64::from(x >= col_step));
        let sizes = sizes_for(64);
        let pyr = edge_pyramid(&img, &sizes, &EdgeBackend::Fixed).unwrap();
        for (map, &s) in pyr.maps.iter().zip(&sizes) {
            let expected_col = col_step as f64 * s as f64 / 64.0;
            // strongest response column
            let mut best = (0usize, f64::MIN);
            for x in 0..s {
                let v: f64 = (0..s).map(|y| map[[0, y, x]]).sum();
                if v > best.1 {
                    best = (x, v);
                }
            }
            assert!(
                (best.0 as f64 - expected_col).abs() <= 1.0,
                "scale {s}: peak at {} expected near {expected_col}",
                best.0
            );
        }
    }

    #[test]
    fn fixed_backend_translation_equivariance_on_interior() {
        // shift the pattern by 2 pixels; full-res map shifts accordingly on
        // the interior
        let pattern = |x: usize, y: usize| ((x / 3 + y / 4) % 2) as f64;
        let img1 = A3::from_shape_fn((3, 32, 32), |(_, y, x)| pattern(x, y));
        let img2 = A3::from_shape_fn((3, 32, 32), |(_, y, x)| {
            if x >= 2 {
                pattern(x - 2, y)
            } else {
                0.0
            }
        });
        let p1 = edge_pyramid(&img1, &[32], &EdgeBackend::Fixed).unwrap();
        let p2 = edge_pyramid(&img2, &[32], &EdgeBackend::Fixed).unwrap();
        for y in 4..28 {
            for x in 4..26 {
                let a = p1.maps[0][[0, y, x]];
                let b = p2.maps[0][[0, y, x + 2]];
                assert!((a - b).abs() < 1e-12, "mismatch at ({y},{x})");
            }
        }
    }

    #[test]
    fn hed_round_trip_and_contract() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hed.bin");
        let net = HedNetwork::random(33);
        net.save(&path).unwrap();
        let cfg = EdgeBackendConfig {
            kind: EdgeBackendKind::Hed,
            checkpoint: Some(path.clone()),
        };
        let backend = EdgeBackend::from_config(&cfg).unwrap();
        if let EdgeBackend::Hed(loaded) = &backend {
            assert_eq!(loaded.parameter_fingerprint(), net.parameter_fingerprint());
        } else {
            panic!("expected hed backend");
        }
        let img = A3::from_shape_fn((3, 32, 32), |(c, y, x)| {
            ((c * 5 + y + 2 * x) % 17) as f64 / 17.0
        });
        let sizes = sizes_for(32);
        let pyr = edge_pyramid(&img, &sizes, &backend).unwrap();
        for (map, &s) in pyr.maps.iter().zip(&sizes) {
            assert_eq!(map.dim(), (1, s, s));
            assert!(map.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn missing_hed_checkpoint_is_unavailable() {
        let cfg = EdgeBackendConfig {
            kind: EdgeBackendKind::Hed,
            checkpoint: Some(PathBuf::from("/nonexistent/hed.bin")),
        };
        assert!(matches!(
            EdgeBackend::from_config(&cfg),
            Err(EdgeError::BackendUnavailable(_))
        ));
        let cfg2 = EdgeBackendConfig {
            kind: EdgeBackendKind::Hed,
            checkpoint: None,
        };
        assert!(matches!(
            EdgeBackend::from_config(&cfg2),
            Err(EdgeError::BackendUnavailable(_))
        ));
    }
}
