use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{
    batchnorm_backward, batchnorm_forward, batchnorm_inference, conv2d_backward, conv2d_forward,
    relu_backward, relu_forward, BatchNormCache, BatchNormParams, ConvParams, Tensor, KERNEL_SIZE,
};

/// conv (no bias) → batch norm → ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvUnit {
    pub conv: ConvParams,
    pub bn: BatchNormParams,
}

#[derive(Debug, Clone)]
pub struct UnitCache {
    pub bn: BatchNormCache,
    /// Post-activation output.
    pub out: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitGrads {
    pub weight: Vec<f32>,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

impl UnitGrads {
    pub fn zeros_like(unit: &ConvUnit) -> Self {
        UnitGrads {
            weight: vec![0.0; unit.conv.weight.len()],
            gamma: vec![0.0; unit.bn.gamma.len()],
            beta: vec![0.0; unit.bn.beta.len()],
        }
    }
}

impl ConvUnit {
    /// All-zero kernels with identity batch norm.
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        ConvUnit {
            conv: ConvParams::zeros(in_channels, out_channels, false),
            bn: BatchNormParams::new(out_channels),
        }
    }

    /// Fan-in scaled normal kernels (std = sqrt(2 / (C_in·9))).
    pub fn kaiming<R: Rng>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let mut unit = Self::zeros(in_channels, out_channels);
        let fan_in = (in_channels * KERNEL_SIZE * KERNEL_SIZE) as f32;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        unit.conv
            .weight
            .iter_mut()
            .for_each(|w| *w = normal.sample(rng));
        unit
    }

    pub fn in_channels(&self) -> usize {
        self.conv.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels
    }

    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<UnitCache> {
        let z = conv2d_forward(x, &self.conv)?;
        let (y, bn) = batchnorm_forward(&z, &mut self.bn, training)?;
        Ok(UnitCache {
            bn,
            out: relu_forward(&y),
        })
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let z = conv2d_forward(x, &self.conv)?;
        Ok(relu_forward(&batchnorm_inference(&z, &self.bn)?))
    }

    /// `x` is the input the cached forward pass saw.
    pub fn backward(
        &self,
        x: &Tensor,
        cache: &UnitCache,
        grad_out: &Tensor,
    ) -> Result<(Tensor, UnitGrads)> {
        let g = relu_backward(&cache.out, grad_out)?;
        let (g, bn) = batchnorm_backward(&cache.bn, &self.bn, &g)?;
        let (gx, conv) = conv2d_backward(x, &self.conv, &g)?;
        Ok((
            gx,
            UnitGrads {
                weight: conv.weight,
                gamma: bn.gamma,
                beta: bn.beta,
            },
        ))
    }
}
