use super::Tensor;
use crate::error::{Error, Result};

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Passes `grad_out` where `x > 0`. `x` may be either the ReLU input or its
/// output; both have the same positive set.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if x.shape() != grad_out.shape() {
        return Err(Error::Shape(format!(
            "relu input {} vs grad_out {}",
            x.shape(),
            grad_out.shape()
        )));
    }
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}
