//! Small sequential convolutional detector: graph, inference, decode, and
//! reverse-mode gradients.

pub(crate) mod conv;
mod decode;
mod forward;
pub mod backward;
mod graph;
mod layer;

pub use decode::{decode_and_nms, detect, nms, DecodeConfig, Detection};
pub use forward::{forward_f64, forward_with_trace, ActivationTrace, LayerTrace};
pub(crate) use forward::run;
pub use graph::{
    person_mini, person_mini_layers, propagate, HeadSpec, LayerGeom, ModelGraph,
    PERSON_MINI_ANCHORS, PERSON_MINI_INPUT,
};
pub use layer::{LayerSpec, Padding};
