use serde::Serialize;

use super::block::BRANCH_DEPTHS;
use super::net::UnionNet;
use super::weights;
use crate::error::{Error, Result};

/// Receptive field side of a stack of `depth` same-padded 3×3 convolutions.
pub fn receptive_field(depth: usize) -> Result<usize> {
    if !(1..=4).contains(&depth) {
        return Err(Error::Validation(format!(
            "branch depth {depth} outside 1..=4"
        )));
    }
    Ok(2 * depth + 1)
}

/// Size and depth accounting for a constructed model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModelReport {
    pub width: usize,
    pub num_classes: usize,
    /// Trainable values: conv kernels, batch-norm gamma/beta, classifier.
    pub parameter_count: usize,
    /// Batch-norm running mean/variance values.
    pub buffer_count: usize,
    pub physical_conv_count: usize,
    pub composite_depth: usize,
    pub receptive_fields: [usize; 4],
    /// `parameter_count` at four bytes each.
    pub serialized_size_bytes: usize,
    /// Exact size of the weight file, running statistics and header included.
    pub weight_file_bytes: usize,
}

pub fn model_report(net: &UnionNet) -> ModelReport {
    let cfg = net.config();
    let parameter_count = UnionNet::closed_form_parameter_count(cfg);
    let receptive_fields = BRANCH_DEPTHS.map(|d| receptive_field(d).expect("fixed depths"));
    ModelReport {
        width: cfg.width,
        num_classes: cfg.num_classes,
        parameter_count,
        buffer_count: UnionNet::closed_form_buffer_count(cfg),
        physical_conv_count: net.physical_conv_count(),
        composite_depth: net.composite_depth(),
        receptive_fields,
        serialized_size_bytes: 4 * parameter_count,
        weight_file_bytes: weights::encoded_len(net),
    }
}

impl ModelReport {
    /// Human-readable summary, one `key: value` per line.
    pub fn render(&self) -> String {
        let rf = self
            .receptive_fields
            .iter()
            .map(|r| r.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "width: {}\n\
             classes: {}\n\
             parameters: {}\n\
             non-trainable buffers: {}\n\
             serialized size: {} bytes ({:.2} MB)\n\
             weight file: {} bytes\n\
             composite depth: {}\n\
             physical convs: {}\n\
             receptive fields: {}\n",
            self.width,
            self.num_classes,
            self.parameter_count,
            self.buffer_count,
            self.serialized_size_bytes,
            self.serialized_size_bytes as f64 / 1e6,
            self.weight_file_bytes,
            self.composite_depth,
            self.physical_conv_count,
            rf
        )
    }
}
