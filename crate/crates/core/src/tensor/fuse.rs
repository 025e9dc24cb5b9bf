use super::Tensor;
use crate::error::{Error, Result};

/// Elementwise sum of equally shaped feature maps. Channel count and spatial
/// size pass through unchanged.
pub fn add_fuse(inputs: &[&Tensor]) -> Result<Tensor> {
    let Some((first, rest)) = inputs.split_first() else {
        return Err(Error::Validation(
            "add_fuse needs at least one input".into(),
        ));
    };
    for (i, t) in rest.iter().enumerate() {
        if t.shape() != first.shape() {
            return Err(Error::Shape(format!(
                "add_fuse input {} has shape {}, input 0 has {}",
                i + 1,
                t.shape(),
                first.shape()
            )));
        }
    }
    let mut out = (*first).clone();
    for t in rest {
        for (a, b) in out.data_mut().iter_mut().zip(t.data()) {
            *a += *b;
        }
    }
    Ok(out)
}
