use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::block::{BlockCache, UnionBlock};
use super::unit::{ConvUnit, UnitCache, UnitGrads};
use crate::error::{Error, Result};
use crate::tensor::{
    add_fuse, global_average_pool_backward, global_average_pool_forward, linear_backward,
    linear_forward, LinearParams, Tensor, KERNEL_SIZE,
};

/// Upper bound on the channel width of every convolution.
pub const MAX_WIDTH: usize = 128;
pub const DEFAULT_WIDTH: usize = 128;
pub const BLOCK_COUNT: usize = 3;

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub in_channels: usize,
    pub width: usize,
    pub num_classes: usize,
}

impl NetConfig {
    /// RGB input.
    pub fn new(width: usize, num_classes: usize) -> Self {
        NetConfig {
            in_channels: 3,
            width,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Validation("in_channels must be positive".into()));
        }
        if self.width == 0 || self.width > MAX_WIDTH {
            return Err(Error::Validation(format!(
                "width {} outside 1..={}",
                self.width, MAX_WIDTH
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Validation("num_classes must be positive".into()));
        }
        Ok(())
    }
}

/// One named parameter or running-statistic array.
#[derive(Debug, Clone, Copy)]
pub struct ParamRef<'a> {
    pub name: &'a str,
    pub dims: &'a [usize],
    pub values: &'a [f32],
}

/// Gradients for every trainable array, in [`UnionNet::trainable_params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub arrays: Vec<Vec<f32>>,
}

impl GradientBundle {
    pub fn is_zero(&self) -> bool {
        self.arrays.iter().flatten().all(|&v| v == 0.0)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }
}

/// Intermediates kept by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    net_id: u64,
    version: u64,
    pub training: bool,
    pub input: Tensor,
    pub blocks: Vec<BlockCache>,
    /// U1 + U2 + U3.
    pub union: Tensor,
    pub final_unit: UnitCache,
    pub features: Tensor,
}

impl ForwardCache {
    /// Output of union block `i` (0-based), i.e. U1, U2, U3.
    pub fn block_output(&self, i: usize) -> &Tensor {
        &self.blocks[i].output
    }
}

/// Gradients at the skip-fusion points, exposed for inspection.
#[derive(Debug, Clone)]
pub struct SkipTaps {
    pub grad_input: Tensor,
    /// d loss / d Union.
    pub grad_union: Tensor,
    /// Total gradient reaching U1, U2, U3.
    pub grad_blocks: [Tensor; 3],
    /// Part of the U1 gradient that flows back through block 2.
    pub grad_u1_via_block2: Tensor,
    /// Part of the U2 gradient that flows back through block 3.
    pub grad_u2_via_block3: Tensor,
}

/// Three union blocks with skip-add fusion, a final conv unit, global average
/// pooling and a linear classifier.
#[derive(Debug)]
pub struct UnionNet {
    config: NetConfig,
    blocks: Vec<UnionBlock>,
    final_unit: ConvUnit,
    classifier: LinearParams,
    id: u64,
    /// Bumped on every mutable parameter access; caches from older versions
    /// are rejected.
    version: u64,
    names: Vec<String>,
    state_dims: Vec<Vec<usize>>,
}

impl Clone for UnionNet {
    fn clone(&self) -> Self {
        UnionNet {
            config: self.config,
            blocks: self.blocks.clone(),
            final_unit: self.final_unit.clone(),
            classifier: self.classifier.clone(),
            id: fresh_id(),
            version: 0,
            names: self.names.clone(),
            state_dims: self.state_dims.clone(),
        }
    }
}

impl PartialEq for UnionNet {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.blocks == other.blocks
            && self.final_unit == other.final_unit
            && self.classifier == other.classifier
    }
}

const UNIT_ARRAYS: [&str; 5] = ["weight", "gamma", "beta", "running_mean", "running_var"];
const BRANCH_LETTERS: [char; 4] = ['a', 'b', 'c', 'd'];

impl UnionNet {
    fn assemble(
        config: NetConfig,
        mut make: impl FnMut(usize, usize) -> ConvUnit,
        classifier: LinearParams,
    ) -> Result<Self> {
        config.validate()?;
        let w = config.width;
        let blocks = vec![
            UnionBlock::new(config.in_channels, w, true, &mut make),
            UnionBlock::new(w, w, false, &mut make),
            UnionBlock::new(w, w, false, &mut make),
        ];
        let final_unit = make(w, w);
        let mut net = UnionNet {
            config,
            blocks,
            final_unit,
            classifier,
            id: fresh_id(),
            version: 0,
            names: Vec::new(),
            state_dims: Vec::new(),
        };
        net.build_tables();
        Ok(net)
    }

    fn build_tables(&mut self) {
        let mut names = Vec::new();
        let mut dims = Vec::new();
        for (prefix, unit) in self.named_units() {
            for field in UNIT_ARRAYS {
                names.push(format!("{prefix}.{field}"));
                dims.push(if field == "weight" {
                    unit.conv.weight_dims().to_vec()
                } else {
                    vec![unit.out_channels()]
                });
            }
        }
        names.push("classifier.weight".into());
        dims.push(vec![
            self.classifier.in_features,
            self.classifier.out_features,
        ]);
        names.push("classifier.bias".into());
        dims.push(vec![self.classifier.out_features]);
        self.names = names;
        self.state_dims = dims;
    }

    /// Fan-in scaled normal conv kernels, unit batch norm, Glorot-uniform
    /// classifier weights and zero classifier bias.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::assemble(
            config,
            |i, o| ConvUnit::kaiming(i, o, &mut rng),
            LinearParams::zeros(config.width, config.num_classes),
        )?;
        let limit = (6.0 / (config.width + config.num_classes) as f32).sqrt();
        net.classifier
            .weight
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-limit..limit));
        Ok(net)
    }

    /// Every kernel and classifier weight zero; batch norms are identity maps.
    pub fn zeros(config: NetConfig) -> Result<Self> {
        Self::assemble(
            config,
            ConvUnit::zeros,
            LinearParams::zeros(config.width, config.num_classes),
        )
    }

    pub fn config(&self) -> NetConfig {
        self.config
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn blocks(&self) -> &[UnionBlock] {
        &self.blocks
    }

    pub fn block_mut(&mut self, i: usize) -> &mut UnionBlock {
        self.version += 1;
        &mut self.blocks[i]
    }

    pub fn final_unit(&self) -> &ConvUnit {
        &self.final_unit
    }

    pub fn final_unit_mut(&mut self) -> &mut ConvUnit {
        self.version += 1;
        &mut self.final_unit
    }

    pub fn classifier(&self) -> &LinearParams {
        &self.classifier
    }

    pub fn classifier_mut(&mut self) -> &mut LinearParams {
        self.version += 1;
        &mut self.classifier
    }

    /// Conv units in canonical order with names like `union2.c.conv3`.
    pub fn named_units(&self) -> Vec<(String, &ConvUnit)> {
        let mut out = Vec::new();
        for (bi, block) in self.blocks.iter().enumerate() {
            for (letter, branch) in BRANCH_LETTERS.iter().zip(&block.branches) {
                for (ui, unit) in branch.units.iter().enumerate() {
                    out.push((format!("union{}.{}.conv{}", bi + 1, letter, ui + 1), unit));
                }
            }
        }
        out.push(("final".to_string(), &self.final_unit));
        out
    }

    pub fn physical_conv_count(&self) -> usize {
        self.blocks
            .iter()
            .map(UnionBlock::conv_count)
            .sum::<usize>()
            + 1
    }

    /// Union blocks plus the final conv, each counted as one layer.
    pub fn composite_depth(&self) -> usize {
        self.blocks.len() + 1
    }

    /// Every stored array (trainable weights and batch-norm running
    /// statistics) in serialization order.
    pub fn state_arrays(&self) -> Vec<ParamRef<'_>> {
        let mut values: Vec<&[f32]> = Vec::with_capacity(self.names.len());
        for (_, u) in self.named_units() {
            values.extend([
                &u.conv.weight[..],
                &u.bn.gamma[..],
                &u.bn.beta[..],
                &u.bn.running_mean[..],
                &u.bn.running_var[..],
            ]);
        }
        values.push(&self.classifier.weight);
        values.push(&self.classifier.bias);
        self.names
            .iter()
            .zip(&self.state_dims)
            .zip(values)
            .map(|((name, dims), values)| ParamRef { name, dims, values })
            .collect()
    }

    pub(crate) fn state_arrays_mut(&mut self) -> Vec<&mut Vec<f32>> {
        self.version += 1;
        let mut out: Vec<&mut Vec<f32>> = Vec::new();
        let UnionNet {
            blocks,
            final_unit,
            classifier,
            ..
        } = self;
        for u in blocks
            .iter_mut()
            .flat_map(|b| b.branches.iter_mut().flat_map(|br| br.units.iter_mut()))
            .chain(std::iter::once(final_unit))
        {
            let ConvUnit { conv, bn } = u;
            out.push(&mut conv.weight);
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
            out.push(&mut bn.running_mean);
            out.push(&mut bn.running_var);
        }
        out.push(&mut classifier.weight);
        out.push(&mut classifier.bias);
        out
    }

    fn is_trainable(name: &str) -> bool {
        !name.ends_with("running_mean") && !name.ends_with("running_var")
    }

    /// Trainable arrays: conv weights, batch-norm gamma/beta, classifier.
    pub fn trainable_params(&self) -> Vec<ParamRef<'_>> {
        self.state_arrays()
            .into_iter()
            .filter(|p| Self::is_trainable(p.name))
            .collect()
    }

    pub fn trainable_names(&self) -> Vec<&str> {
        self.names
            .iter()
            .map(String::as_str)
            .filter(|n| Self::is_trainable(n))
            .collect()
    }

    /// Mutable trainable arrays in [`GradientBundle`] order. Invalidates
    /// outstanding forward caches.
    pub fn trainable_params_mut(&mut self) -> Vec<&mut [f32]> {
        let names: Vec<bool> = self.names.iter().map(|n| Self::is_trainable(n)).collect();
        self.state_arrays_mut()
            .into_iter()
            .zip(names)
            .filter(|(_, t)| *t)
            .map(|(v, _)| v.as_mut_slice())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable_params().iter().map(|p| p.values.len()).sum()
    }

    /// Full forward pass. Logits have shape `(N, num_classes, 1, 1)`.
    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<(Tensor, ForwardCache)> {
        let b1 = self.blocks[0].forward(x, training)?;
        let b2 = self.blocks[1].forward(&b1.output, training)?;
        let b3 = self.blocks[2].forward(&b2.output, training)?;
        let union = add_fuse(&[&b1.output, &b2.output, &b3.output])?;
        let final_cache = self.final_unit.forward(&union, training)?;
        let features = global_average_pool_forward(&final_cache.out);
        let logits = linear_forward(&features, &self.classifier)?;
        Ok((
            logits,
            ForwardCache {
                net_id: self.id,
                version: self.version,
                training,
                input: x.clone(),
                blocks: vec![b1, b2, b3],
                union,
                final_unit: final_cache,
                features,
            },
        ))
    }

    /// Inference-mode logits without keeping intermediates.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let u1 = self.blocks[0].infer(x)?;
        let u2 = self.blocks[1].infer(&u1)?;
        let u3 = self.blocks[2].infer(&u2)?;
        let union = add_fuse(&[&u1, &u2, &u3])?;
        let out = self.final_unit.infer(&union)?;
        linear_forward(&global_average_pool_forward(&out), &self.classifier)
    }

    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Tensor) -> Result<GradientBundle> {
        Ok(self.backward_with_taps(cache, grad_logits)?.0)
    }

    pub fn backward_with_taps(
        &self,
        cache: &ForwardCache,
        grad_logits: &Tensor,
    ) -> Result<(GradientBundle, SkipTaps)> {
        if cache.net_id != self.id || cache.version != self.version {
            return Err(Error::Contract(format!(
                "forward cache (net {}, version {}) is stale for net {} at version {}",
                cache.net_id, cache.version, self.id, self.version
            )));
        }
        let (g_features, lin) = linear_backward(&cache.features, &self.classifier, grad_logits)?;
        let g_final = global_average_pool_backward(cache.final_unit.out.shape(), &g_features)?;
        let (g_union, final_grads) =
            self.final_unit
                .backward(&cache.union, &cache.final_unit, &g_final)?;

        let u1 = &cache.blocks[0].output;
        let u2 = &cache.blocks[1].output;
        let g_u3 = g_union.clone();
        let (g_u2_via3, b3) = self.blocks[2].backward(u2, &cache.blocks[2], &g_u3)?;
        let mut g_u2 = g_union.clone();
        g_u2.add_assign(&g_u2_via3)?;
        let (g_u1_via2, b2) = self.blocks[1].backward(u1, &cache.blocks[1], &g_u2)?;
        let mut g_u1 = g_union.clone();
        g_u1.add_assign(&g_u1_via2)?;
        let (g_x, b1) = self.blocks[0].backward(&cache.input, &cache.blocks[0], &g_u1)?;

        let mut arrays = Vec::with_capacity(self.names.len());
        let push_unit = |arrays: &mut Vec<Vec<f32>>, g: UnitGrads| {
            arrays.push(g.weight);
            arrays.push(g.gamma);
            arrays.push(g.beta);
        };
        for block in [b1, b2, b3] {
            for branch in block {
                for g in branch {
                    push_unit(&mut arrays, g);
                }
            }
        }
        push_unit(&mut arrays, final_grads);
        arrays.push(lin.weight);
        arrays.push(lin.bias);

        Ok((
            GradientBundle { arrays },
            SkipTaps {
                grad_input: g_x,
                grad_union: g_union,
                grad_blocks: [g_u1, g_u2, g_u3],
                grad_u1_via_block2: g_u1_via2,
                grad_u2_via_block3: g_u2_via3,
            },
        ))
    }

    /// Closed-form trainable parameter count (weights, BN gamma/beta,
    /// classifier), independent of any constructed model.
    pub fn closed_form_parameter_count(config: NetConfig) -> usize {
        let k2 = KERNEL_SIZE * KERNEL_SIZE;
        let (c, w, k) = (config.in_channels, config.width, config.num_classes);
        let bn = 2 * w;
        // block 1: the four first-layer convs see the input channels
        let block1 = 4 * (k2 * c * w) + 6 * (k2 * w * w) + 10 * bn;
        let block = 10 * (k2 * w * w) + 10 * bn;
        let final_conv = k2 * w * w + bn;
        block1 + 2 * block + final_conv + w * k + k
    }

    /// Batch-norm running statistics, which are stored but not trained.
    pub fn closed_form_buffer_count(config: NetConfig) -> usize {
        31 * 2 * config.width
    }
}
