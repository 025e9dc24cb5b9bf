use rand::Rng;

use super::unit::{ConvUnit, UnitCache, UnitGrads};
use crate::error::{Error, Result};
use crate::tensor::{add_fuse, maxpool2x2_backward, maxpool2x2_forward, PoolIndices, Tensor};

/// Depths of the four parallel branches of a union block.
pub const BRANCH_DEPTHS: [usize; 4] = [1, 2, 3, 4];

/// A stack of `depth` conv units applied in sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct UnionBranch {
    pub units: Vec<ConvUnit>,
}

#[derive(Debug, Clone)]
pub struct BranchCache {
    pub units: Vec<UnitCache>,
}

impl BranchCache {
    pub fn output(&self) -> &Tensor {
        &self.units.last().expect("branch has at least one unit").out
    }
}

impl UnionBranch {
    /// First unit maps `in_channels → out_channels`, the rest keep `out_channels`.
    pub fn new(
        depth: usize,
        in_channels: usize,
        out_channels: usize,
        mut make: impl FnMut(usize, usize) -> ConvUnit,
    ) -> Result<Self> {
        if !(1..=4).contains(&depth) {
            return Err(Error::Validation(format!(
                "branch depth {depth} outside 1..=4"
            )));
        }
        let units = (0..depth)
            .map(|i| {
                make(
                    if i == 0 { in_channels } else { out_channels },
                    out_channels,
                )
            })
            .collect();
        Ok(UnionBranch { units })
    }

    pub fn depth(&self) -> usize {
        self.units.len()
    }

    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<BranchCache> {
        let mut caches: Vec<UnitCache> = Vec::with_capacity(self.units.len());
        for unit in &mut self.units {
            let input = caches.last().map_or(x, |c| &c.out);
            let cache = unit.forward(input, training)?;
            caches.push(cache);
        }
        Ok(BranchCache { units: caches })
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.units[0].infer(x)?;
        for unit in &self.units[1..] {
            h = unit.infer(&h)?;
        }
        Ok(h)
    }

    /// Returns the input gradient and per-unit parameter gradients.
    pub fn backward(
        &self,
        x: &Tensor,
        cache: &BranchCache,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Vec<UnitGrads>)> {
        let mut grads = Vec::with_capacity(self.units.len());
        let mut g = grad_out.clone();
        for (i, unit) in self.units.iter().enumerate().rev() {
            let input = if i == 0 { x } else { &cache.units[i - 1].out };
            let (gx, ug) = unit.backward(input, &cache.units[i], &g)?;
            grads.push(ug);
            g = gx;
        }
        grads.reverse();
        Ok((g, grads))
    }
}

/// Four parallel branches over one input, fused by elementwise addition and
/// optionally max-pooled.
#[derive(Debug, Clone, PartialEq)]
pub struct UnionBlock {
    pub branches: Vec<UnionBranch>,
    pub pool_after: bool,
    pub in_channels: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    pub branches: Vec<BranchCache>,
    pub pool: Option<PoolIndices>,
    /// Block output after fusion (and pooling, when enabled).
    pub output: Tensor,
}

impl UnionBlock {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        pool_after: bool,
        mut make: impl FnMut(usize, usize) -> ConvUnit,
    ) -> Self {
        let branches = BRANCH_DEPTHS
            .iter()
            .map(|&d| {
                UnionBranch::new(d, in_channels, out_channels, &mut make)
                    .expect("fixed depths are valid")
            })
            .collect();
        UnionBlock {
            branches,
            pool_after,
            in_channels,
            out_channels,
        }
    }

    pub fn kaiming<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        pool_after: bool,
        rng: &mut R,
    ) -> Self {
        Self::new(in_channels, out_channels, pool_after, |i, o| {
            ConvUnit::kaiming(i, o, rng)
        })
    }

    pub fn zeros(in_channels: usize, out_channels: usize, pool_after: bool) -> Self {
        Self::new(in_channels, out_channels, pool_after, ConvUnit::zeros)
    }

    pub fn conv_count(&self) -> usize {
        self.branches.iter().map(UnionBranch::depth).sum()
    }

    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<BlockCache> {
        let branches = self
            .branches
            .iter_mut()
            .map(|b| b.forward(x, training))
            .collect::<Result<Vec<_>>>()?;
        let outs: Vec<&Tensor> = branches.iter().map(BranchCache::output).collect();
        let fused = add_fuse(&outs)?;
        let (output, pool) = if self.pool_after {
            let (y, idx) = maxpool2x2_forward(&fused)?;
            (y, Some(idx))
        } else {
            (fused, None)
        };
        Ok(BlockCache {
            branches,
            pool,
            output,
        })
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut fused = self.branches[0].infer(x)?;
        for b in &self.branches[1..] {
            fused.add_assign(&b.infer(x)?)?;
        }
        if self.pool_after {
            Ok(maxpool2x2_forward(&fused)?.0)
        } else {
            Ok(fused)
        }
    }

    /// Input gradient plus parameter gradients, branch-major.
    pub fn backward(
        &self,
        x: &Tensor,
        cache: &BlockCache,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Vec<Vec<UnitGrads>>)> {
        let g_fused = match &cache.pool {
            Some(idx) => maxpool2x2_backward(idx, grad_out)?,
            None => grad_out.clone(),
        };
        let mut grad_x: Option<Tensor> = None;
        let mut grads = Vec::with_capacity(self.branches.len());
        for (branch, bc) in self.branches.iter().zip(&cache.branches) {
            let (gx, g) = branch.backward(x, bc, &g_fused)?;
            match &mut grad_x {
                Some(acc) => acc.add_assign(&gx)?,
                None => grad_x = Some(gx),
            }
            grads.push(g);
        }
        Ok((grad_x.expect("four branches"), grads))
    }
}
