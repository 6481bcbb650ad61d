//! Binary model files.
//!
//! Layout: magic `SDNM`, u32 LE version (1), u32 LE header length, UTF-8
//! JSON header, then the little-endian f32 weights. Conv weights are stored
//! as kernels in `(out, in, k_h, k_w)` order followed by the biases.

use std::fs;
use std::path::Path;

use cgt_core::nn::{LayerSpec, ModelGraph};
use cgt_core::Shape;
use serde::{Deserialize, Serialize};

use crate::error::{create_parent, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"SDNM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub input_shape: Shape,
    pub layers: Vec<LayerSpec>,
    pub weight_offsets: Vec<usize>,
    pub weight_count: usize,
}

pub fn encode(graph: &ModelGraph) -> Vec<u8> {
    let header = Header {
        input_shape: graph.input_shape(),
        layers: graph.layers().to_vec(),
        weight_offsets: graph.weight_offsets(),
        weight_count: graph.param_count(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + 4 * graph.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for w in graph.weights() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ModelGraph> {
    use cgt_core::Error as C;
    let word = |at: usize| -> Option<u32> {
        bytes.get(at..at + 4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    };
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(C::Format("bad magic, not a model file".into()).into());
    }
    match word(4) {
        Some(VERSION) => {}
        Some(v) => return Err(C::Format(format!("unsupported model version {v}")).into()),
        None => return Err(C::Format("truncated preamble".into()).into()),
    }
    let len = word(8).ok_or_else(|| C::Format("truncated preamble".into()))? as usize;
    let json = bytes
        .get(12..12 + len)
        .ok_or_else(|| C::Format("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| C::Format(format!("bad header: {e}")))?;
    let blob = &bytes[12 + len..];
    if blob.len() != 4 * header.weight_count {
        return Err(C::CorruptModel(format!(
            "weight blob holds {} bytes, header declares {} weights",
            blob.len(),
            header.weight_count
        ))
        .into());
    }
    let weights = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let graph = ModelGraph::new(header.input_shape, header.layers, weights)?;
    if graph.weight_offsets() != header.weight_offsets {
        return Err(C::CorruptModel("weight offsets disagree with the layer list".into()).into());
    }
    Ok(graph)
}

pub fn save_model(graph: &ModelGraph, path: &Path) -> Result<()> {
    create_parent(path)?;
    fs::write(path, encode(graph)).at(path)
}

pub fn load_model(path: &Path) -> Result<ModelGraph> {
    decode(&fs::read(path).at(path)?)
}
