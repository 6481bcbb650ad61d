//! Neuron profile files: JSON with `"layer:channel": [low, high]` entries,
//! the source dataset id and the number of profiled inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use cgt_core::coverage::{NeuronId, NeuronProfile};
use cgt_core::nn::ModelGraph;
use serde::{Deserialize, Serialize};

use crate::error::{create_parent, Error, IoContext, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    source: String,
    count: usize,
    neurons: BTreeMap<String, [f32; 2]>,
}

pub fn save_profile(p: &NeuronProfile, path: &Path) -> Result<()> {
    let file = ProfileFile {
        source: p.source.clone(),
        count: p.count,
        neurons: p
            .neurons
            .iter()
            .zip(p.low.iter().zip(&p.high))
            .map(|(n, (&lo, &hi))| (format!("{}:{}", n.layer_index, n.channel_index), [lo, hi]))
            .collect(),
    };
    create_parent(path)?;
    let json = serde_json::to_string_pretty(&file).expect("profile serializes");
    fs::write(path, json + "\n").at(path)
}

/// Loads a profile and checks it covers exactly the graph's neurons.
pub fn load_profile(path: &Path, graph: &ModelGraph) -> Result<NeuronProfile> {
    let text = fs::read_to_string(path).at(path)?;
    let file: ProfileFile = serde_json::from_str(&text).map_err(|e| Error::data(path, e))?;
    let mut entries = Vec::with_capacity(file.neurons.len());
    for (key, range) in &file.neurons {
        let parsed = key
            .split_once(':')
            .and_then(|(l, c)| Some((l.parse().ok()?, c.parse().ok()?)));
        let Some((layer_index, channel_index)) = parsed else {
            return Err(Error::data(path, format!("bad neuron key {key:?}")));
        };
        if !(range[0] <= range[1]) {
            return Err(Error::data(path, format!("{key}: low above high")));
        }
        entries.push((NeuronId { layer_index, channel_index }, *range));
    }
    entries.sort_by_key(|e| e.0);
    let expected: Vec<NeuronId> = graph
        .neuron_layers()
        .into_iter()
        .flat_map(|(l, c)| (0..c).map(move |ch| NeuronId { layer_index: l, channel_index: ch }))
        .collect();
    let got: Vec<NeuronId> = entries.iter().map(|e| e.0).collect();
    if got != expected {
        return Err(Error::data(path, "profile neurons do not match the model"));
    }
    Ok(NeuronProfile {
        neurons: got,
        low: entries.iter().map(|e| e.1[0]).collect(),
        high: entries.iter().map(|e| e.1[1]).collect(),
        source: file.source,
        count: file.count,
    })
}
