use alloc::string::String;
use alloc::vec::Vec;

use crate::eval::BBox;
use crate::tensor::Tensor;

/// An annotated image held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub boxes: Vec<BBox>,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor, boxes: Vec<BBox>) -> Self {
        Self {
            id: id.into(),
            image,
            boxes,
        }
    }
}
