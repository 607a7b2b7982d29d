//! Model checkpoints: the versioned block container with a JSON header
//! carrying `{format_version, spec, seed}` and one named block per parameter
//! array plus batchnorm running statistics.

use super::{Model, ModelError, ModelSpec};
use crate::blockio::{read_container, write_container, Container, NamedBlock};
use serde::{Deserialize, Serialize};
use std::path::Path;

const CKPT_TAG: &str = "sffcnn-ckpt";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CkptHeader {
    format_version: u32,
    seed: u64,
    spec: ModelSpec,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub seed: u64,
    pub blocks: Vec<NamedBlock>,
}

pub fn checkpoint_of(model: &mut Model, seed: u64) -> Checkpoint {
    let spec = model.spec.clone();
    let blocks = model
        .all_blocks()
        .iter()
        .map(|b| NamedBlock {
            name: b.name.clone(),
            data: b.values.to_vec(),
        })
        .collect();
    Checkpoint { spec, seed, blocks }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), ModelError> {
    let header = CkptHeader {
        format_version: crate::blockio::FORMAT_VERSION,
        seed: ckpt.seed,
        spec: ckpt.spec.clone(),
    };
    let container = Container {
        tag: CKPT_TAG.into(),
        header_json: serde_json::to_string(&header)
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?,
        blocks: ckpt.blocks.clone(),
    };
    write_container(path, &container).map_err(|e| ModelError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let container = read_container(path).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if container.tag != CKPT_TAG {
        return Err(ModelError::Checkpoint(format!(
            "expected tag {CKPT_TAG}, found {}",
            container.tag
        )));
    }
    let header: CkptHeader = serde_json::from_str(&container.header_json)
        .map_err(|e| ModelError::Checkpoint(format!("bad header: {e}")))?;
    Ok(Checkpoint {
        spec: header.spec,
        seed: header.seed,
        blocks: container.blocks,
    })
}

/// Copies checkpoint blocks into a model built from the same spec. A spec
/// mismatch or any missing/misshapen block is an error.
pub fn load_into(model: &mut Model, ckpt: &Checkpoint) -> Result<(), ModelError> {
    if model.spec != ckpt.spec {
        return Err(ModelError::Checkpoint(
            "checkpoint spec does not match the model spec".into(),
        ));
    }
    let mut blocks = model.all_blocks();
    if blocks.len() != ckpt.blocks.len() {
        return Err(ModelError::Checkpoint(format!(
            "checkpoint has {} blocks, model has {}",
            ckpt.blocks.len(),
            blocks.len()
        )));
    }
    for target in blocks.iter_mut() {
        let source = ckpt
            .blocks
            .iter()
            .find(|b| b.name == target.name)
            .ok_or_else(|| {
                ModelError::Checkpoint(format!("checkpoint lacks block {}", target.name))
            })?;
        if source.data.len() != target.values.len() {
            return Err(ModelError::Checkpoint(format!(
                "block {} has {} values, model expects {}",
                target.name,
                source.data.len(),
                target.values.len()
            )));
        }
        target.values.copy_from_slice(&source.data);
    }
    Ok(())
}

/// Rebuilds a model from a checkpoint in one step.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<Model, ModelError> {
    let mut model = Model::new(ckpt.spec.clone(), ckpt.seed)?;
    load_into(&mut model, ckpt)?;
    Ok(model)
}
