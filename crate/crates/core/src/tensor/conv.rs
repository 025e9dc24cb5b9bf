use rayon::prelude::*;

use super::gemm::sgemm;
use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Spatial extent of every convolution kernel.
pub const KERNEL_SIZE: usize = 3;
const TAPS: usize = KERNEL_SIZE * KERNEL_SIZE;

/// 3×3 convolution, stride 1, zero padding 1.
///
/// `weight` is laid out as `(out_channels, in_channels, 3, 3)`. The bias is
/// absent for convolutions that feed a batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weight: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

impl ConvParams {
    pub fn zeros(in_channels: usize, out_channels: usize, with_bias: bool) -> Self {
        ConvParams {
            in_channels,
            out_channels,
            weight: vec![0.0; out_channels * in_channels * TAPS],
            bias: with_bias.then(|| vec![0.0; out_channels]),
        }
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            KERNEL_SIZE,
            KERNEL_SIZE,
        ]
    }

    fn check(&self) -> Result<()> {
        let want = self.out_channels * self.in_channels * TAPS;
        if self.weight.len() != want {
            return Err(Error::Shape(format!(
                "conv weight has {} values, expected {:?} = {}",
                self.weight.len(),
                self.weight_dims(),
                want
            )));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.out_channels {
                return Err(Error::Shape(format!(
                    "conv bias has {} values, expected {}",
                    b.len(),
                    self.out_channels
                )));
            }
        }
        Ok(())
    }
}

/// Unfolds one sample `(C, H, W)` into a `(C·9) × (H·W)` patch matrix.
fn im2col(x: &[f32], c: usize, h: usize, w: usize, cols: &mut [f32]) {
    let plane = h * w;
    for ci in 0..c {
        let src = &x[ci * plane..(ci + 1) * plane];
        for ky in 0..KERNEL_SIZE {
            for kx in 0..KERNEL_SIZE {
                let row = &mut cols[((ci * TAPS) + ky * KERNEL_SIZE + kx) * plane..][..plane];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&srow[..w - 1]);
                        }
                        1 => dst.copy_from_slice(srow),
                        _ => {
                            dst[..w - 1].copy_from_slice(&srow[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input plane.
fn col2im(cols: &[f32], c: usize, h: usize, w: usize, dx: &mut [f32]) {
    let plane = h * w;
    for ci in 0..c {
        let dst = &mut dx[ci * plane..(ci + 1) * plane];
        for ky in 0..KERNEL_SIZE {
            for kx in 0..KERNEL_SIZE {
                let row = &cols[((ci * TAPS) + ky * KERNEL_SIZE + kx) * plane..][..plane];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let drow = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for (d, s) in drow[..w - 1].iter_mut().zip(&src[1..]) {
                                *d += *s;
                            }
                        }
                        1 => {
                            for (d, s) in drow.iter_mut().zip(src) {
                                *d += *s;
                            }
                        }
                        _ => {
                            for (d, s) in drow[1..].iter_mut().zip(&src[..w - 1]) {
                                *d += *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Same-padded 3×3 cross-correlation. Output shape is `(N, out_channels, H, W)`.
pub fn conv2d_forward(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    p.check()?;
    let s = x.shape();
    if s.c != p.in_channels {
        return Err(Error::Shape(format!(
            "conv input {} has {} channels but weights {:?} expect {}",
            s,
            s.c,
            p.weight_dims(),
            p.in_channels
        )));
    }
    let out_shape = Shape::new(s.n, p.out_channels, s.h, s.w);
    let mut out = Tensor::zeros(out_shape);
    let plane = s.plane();
    let k = s.c * TAPS;
    out.data_mut()
        .par_chunks_mut(out_shape.sample_len().max(1))
        .enumerate()
        .for_each_init(
            || vec![0.0f32; k * plane],
            |cols, (n, y)| {
                im2col(x.sample(n), s.c, s.h, s.w, cols);
                sgemm(
                    p.out_channels,
                    k,
                    plane,
                    1.0,
                    &p.weight,
                    false,
                    cols,
                    false,
                    0.0,
                    y,
                );
                if let Some(bias) = &p.bias {
                    for (row, &b) in y.chunks_mut(plane).zip(bias) {
                        row.iter_mut().for_each(|v| *v += b);
                    }
                }
            },
        );
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to its input and parameters.
pub fn conv2d_backward(
    x: &Tensor,
    p: &ConvParams,
    grad_out: &Tensor,
) -> Result<(Tensor, ConvGrads)> {
    p.check()?;
    let s = x.shape();
    if s.c != p.in_channels {
        return Err(Error::Shape(format!(
            "conv input {} does not match weights {:?}",
            s,
            p.weight_dims()
        )));
    }
    let want = Shape::new(s.n, p.out_channels, s.h, s.w);
    if grad_out.shape() != want {
        return Err(Error::Shape(format!(
            "conv grad_out {} does not match forward output {}",
            grad_out.shape(),
            want
        )));
    }
    let plane = s.plane();
    let k = s.c * TAPS;
    let wlen = p.weight.len();
    let mut grad_x = Tensor::zeros(s);

    // Per-sample partial weight gradients, reduced below in sample order so the
    // result does not depend on the thread count.
    let mut partial_w = vec![0.0f32; s.n * wlen];
    grad_x
        .data_mut()
        .par_chunks_mut(s.sample_len().max(1))
        .zip(partial_w.par_chunks_mut(wlen.max(1)))
        .enumerate()
        .for_each_init(
            || (vec![0.0f32; k * plane], vec![0.0f32; k * plane]),
            |(cols, dcols), (n, (dx, dw))| {
                let dy = grad_out.sample(n);
                im2col(x.sample(n), s.c, s.h, s.w, cols);
                // dW_n = dY_n · colsᵀ
                sgemm(
                    p.out_channels,
                    plane,
                    k,
                    1.0,
                    dy,
                    false,
                    cols,
                    true,
                    0.0,
                    dw,
                );
                // dcols = Wᵀ · dY_n
                sgemm(
                    k,
                    p.out_channels,
                    plane,
                    1.0,
                    &p.weight,
                    true,
                    dy,
                    false,
                    0.0,
                    dcols,
                );
                col2im(dcols, s.c, s.h, s.w, dx);
            },
        );
    let mut weight = vec![0.0f32; wlen];
    for part in partial_w.chunks(wlen.max(1)) {
        for (a, b) in weight.iter_mut().zip(part) {
            *a += *b;
        }
    }
    let bias = p.bias.as_ref().map(|_| {
        let mut gb = vec![0.0f64; p.out_channels];
        for n in 0..s.n {
            for (co, row) in grad_out.sample(n).chunks(plane).enumerate() {
                gb[co] += row.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        gb.into_iter().map(|v| v as f32).collect()
    });
    Ok((grad_x, ConvGrads { weight, bias }))
}
