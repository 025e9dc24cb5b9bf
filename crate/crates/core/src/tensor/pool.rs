use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Flat input index of the maximum of every pooled cell, plus the input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    pub input_shape: Shape,
    pub argmax: Vec<u32>,
}

/// 2×2 max pooling with stride 2. Ties resolve to the first element in
/// row-major window order.
pub fn maxpool2x2_forward(x: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::Validation(format!(
            "2x2 max pooling needs even spatial dims, got {}x{} in {}",
            s.h, s.w, s
        )));
    }
    let out_shape = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut out = Tensor::zeros(out_shape);
    let mut argmax = vec![0u32; out_shape.len()];
    let mut o = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    let mut best_i = x.index(n, c, 2 * oy, 2 * ox);
                    let mut best = x.data()[best_i];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = x.index(n, c, 2 * oy + dy, 2 * ox + dx);
                        if x.data()[i] > best {
                            best = x.data()[i];
                            best_i = i;
                        }
                    }
                    out.data_mut()[o] = best;
                    argmax[o] = best_i as u32;
                    o += 1;
                }
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            input_shape: s,
            argmax,
        },
    ))
}

pub fn maxpool2x2_backward(idx: &PoolIndices, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != idx.argmax.len() {
        return Err(Error::Shape(format!(
            "max pool grad_out {} does not match {} pooled cells",
            grad_out.shape(),
            idx.argmax.len()
        )));
    }
    let mut gx = Tensor::zeros(idx.input_shape);
    for (&i, &g) in idx.argmax.iter().zip(grad_out.data()) {
        gx.data_mut()[i as usize] += g;
    }
    Ok(gx)
}

/// Mean over each channel plane; output shape `(N, C, 1, 1)`.
pub fn global_average_pool_forward(x: &Tensor) -> Tensor {
    let s = x.shape();
    let plane = s.plane();
    let data = x
        .data()
        .chunks(plane.max(1))
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
        .collect();
    Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), data).expect("one value per plane")
}

pub fn global_average_pool_backward(input_shape: Shape, grad_out: &Tensor) -> Result<Tensor> {
    let want = Shape::new(input_shape.n, input_shape.c, 1, 1);
    if grad_out.shape() != want {
        return Err(Error::Shape(format!(
            "GAP grad_out {} does not match {}",
            grad_out.shape(),
            want
        )));
    }
    let plane = input_shape.plane();
    let scale = 1.0 / plane as f32;
    let mut gx = Tensor::zeros(input_shape);
    for (dst, &g) in gx.data_mut().chunks_mut(plane).zip(grad_out.data()) {
        dst.fill(g * scale);
    }
    Ok(gx)
}
