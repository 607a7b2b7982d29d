//! Versioned single-file container for named f64 parameter blocks.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic   4 bytes  b"RLBK"
//! version u32      currently 1
//! tag     u16 len + utf8     consumer tag, e.g. "sffcnn-ckpt"
//! header  u32 len + utf8     JSON header (spec, seed, ...)
//! count   u32                number of blocks
//! block   u16 name len + utf8 name
//!         u64 element count
//!         count * f64        data
//! ```

use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"RLBK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BlockIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad container on {path}: {msg}")]
    Format { path: String, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedBlock {
    pub name: String,
    pub data: Vec<f64>,
}

pub struct Container {
    pub tag: String,
    pub header_json: String,
    pub blocks: Vec<NamedBlock>,
}

pub fn write_container(path: &Path, container: &Container) -> Result<(), BlockIoError> {
    let io = |source| BlockIoError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let io = |source| BlockIoError::Io {
        path: path.display().to_string(),
        source,
    };
    file.write_all(MAGIC).map_err(io)?;
    file.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    let tag = container.tag.as_bytes();
    file.write_all(&(tag.len() as u16).to_le_bytes()).map_err(io)?;
    file.write_all(tag).map_err(io)?;
    let header = container.header_json.as_bytes();
    file.write_all(&(header.len() as u32).to_le_bytes()).map_err(io)?;
    file.write_all(header).map_err(io)?;
    file.write_all(&(container.blocks.len() as u32).to_le_bytes())
        .map_err(io)?;
    for block in &container.blocks {
        let name = block.name.as_bytes();
        file.write_all(&(name.len() as u16).to_le_bytes()).map_err(io)?;
        file.write_all(name).map_err(io)?;
        file.write_all(&(block.data.len() as u64).to_le_bytes())
            .map_err(io)?;
        for v in &block.data {
            file.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    file.flush().map_err(io)
}

pub fn read_container(path: &Path) -> Result<Container, BlockIoError> {
    let io = |source| BlockIoError::Io {
        path: path.display().to_string(),
        source,
    };
    let bad = |msg: String| BlockIoError::Format {
        path: path.display().to_string(),
        msg,
    };
    let mut file = std::io::BufReader::new(std::fs::File::open(path).map_err(io)?);
    let io = |source| BlockIoError::Io {
        path: path.display().to_string(),
        source,
    };

    let mut magic = [0u8; 4];
    file.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(bad("wrong magic bytes".into()));
    }
    let version = read_u32(&mut file).map_err(io)?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let tag_len = read_u16(&mut file).map_err(io)? as usize;
    let tag = read_string(&mut file, tag_len).map_err(io)?;
    let header_len = read_u32(&mut file).map_err(io)? as usize;
    let header_json = read_string(&mut file, header_len).map_err(io)?;
    let n_blocks = read_u32(&mut file).map_err(io)? as usize;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let name_len = read_u16(&mut file).map_err(io)? as usize;
        let name = read_string(&mut file, name_len).map_err(io)?;
        let count = read_u64(&mut file).map_err(io)? as usize;
        let mut data = vec![0.0f64; count];
        let mut buf = [0u8; 8];
        for v in &mut data {
            file.read_exact(&mut buf).map_err(io)?;
            *v = f64::from_le_bytes(buf);
        }
        blocks.push(NamedBlock { name, data });
    }
    Ok(Container {
        tag,
        header_json,
        blocks,
    })
}

fn read_u16(r: &mut impl Read) -> std::io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string(r: &mut impl Read, len: usize) -> std::io::Result<String> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::other(e.to_string()))
}
