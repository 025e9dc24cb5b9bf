//! Test-only oracles: central finite differences, activation-pattern
//! signatures for kink detection, and random inputs.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unionnet::arch::{ForwardCache, UnionNet};
use unionnet::data::Dataset;
use unionnet::tensor::{softmax_cross_entropy, Shape, Tensor};

/// Denominator floor for relative errors, so components near zero are judged
/// against f32 rounding noise rather than their own magnitude.
pub const REL_FLOOR: f64 = 0.1;
pub const FD_STEP: f32 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(r: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
    (0..len).map(|_| r.random_range(-1.0f32..1.0)).collect()
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    Tensor::from_vec(shape, random_vec(r, shape.len())).unwrap()
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central differences of `f` around `base`, one coordinate at a time.
pub fn numeric_grad(base: &[f32], h: f32, mut f: impl FnMut(&[f32]) -> f64) -> Vec<f64> {
    let mut v = base.to_vec();
    (0..base.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + h;
            let plus = f(&v);
            v[i] = orig - h;
            let minus = f(&v);
            v[i] = orig;
            (plus - minus) / (2.0 * h as f64)
        })
        .collect()
}

/// Largest relative error between analytic and numeric gradients.
pub fn max_rel_error(analytic: &[f32], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_error(a as f64, n))
        .fold(0.0, f64::max)
}

/// `Σ proj ⊙ t`, the scalar used to turn a tensor-valued kernel into a loss.
pub fn project(t: &Tensor, proj: &Tensor) -> f64 {
    t.data()
        .iter()
        .zip(proj.data())
        .map(|(a, b)| *a as f64 * *b as f64)
        .sum()
}

/// Every ReLU on/off bit and max-pool winner seen by a forward pass.
pub fn activation_signature(cache: &ForwardCache) -> (Vec<bool>, Vec<u32>) {
    let mut bits = Vec::new();
    let mut argmax = Vec::new();
    for block in &cache.blocks {
        for branch in &block.branches {
            for unit in &branch.units {
                bits.extend(unit.out.data().iter().map(|&v| v > 0.0));
            }
        }
        if let Some(p) = &block.pool {
            argmax.extend_from_slice(&p.argmax);
        }
    }
    bits.extend(cache.final_unit.out.data().iter().map(|&v| v > 0.0));
    (bits, argmax)
}

/// Training-mode mean cross-entropy of `net` on `(x, labels)`.
pub fn net_loss(net: &mut UnionNet, x: &Tensor, labels: &[usize]) -> (f64, ForwardCache) {
    let (logits, cache) = net.forward(x, true).unwrap();
    let loss = softmax_cross_entropy(&logits, labels).unwrap().loss as f64;
    (loss, cache)
}

pub struct NetFdOutcome {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

/// Compares analytic gradients of `net` with central differences at randomly
/// drawn scalar parameters until `want` kink-free coordinates were checked.
/// A coordinate is skipped when the ±h forward passes disagree on any ReLU
/// state or pooling winner.
pub fn check_net_gradients(
    net: &mut UnionNet,
    x: &Tensor,
    labels: &[usize],
    want: usize,
    tol: f64,
    seed: u64,
) -> NetFdOutcome {
    let (logits, cache) = net.forward(x, true).unwrap();
    let sm = softmax_cross_entropy(&logits, labels).unwrap();
    let grads = net.backward(&cache, &sm.grad_logits).unwrap();
    let sizes: Vec<usize> = grads.arrays.iter().map(Vec::len).collect();
    let names: Vec<String> = net
        .trainable_names()
        .iter()
        .map(|s| s.to_string())
        .collect();
    let total: usize = sizes.iter().sum();
    let mut r = rng(seed);
    let mut out = NetFdOutcome {
        checked: 0,
        skipped_kinks: 0,
        worst: 0.0,
        failures: Vec::new(),
    };
    let mut attempts = 0;
    while out.checked < want && attempts < want * 20 {
        attempts += 1;
        let mut flat = r.random_range(0..total);
        let mut arr = 0;
        while flat >= sizes[arr] {
            flat -= sizes[arr];
            arr += 1;
        }
        let orig = net.trainable_params()[arr].values[flat];
        let eval = |v: f32, net: &mut UnionNet| {
            net.trainable_params_mut()[arr][flat] = v;
            net_loss(net, x, labels)
        };
        let (plus, c_plus) = eval(orig + FD_STEP, net);
        let (minus, c_minus) = eval(orig - FD_STEP, net);
        net.trainable_params_mut()[arr][flat] = orig;
        if activation_signature(&c_plus) != activation_signature(&c_minus) {
            out.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP as f64);
        let analytic = grads.arrays[arr][flat] as f64;
        let e = rel_error(analytic, numeric);
        out.worst = out.worst.max(e);
        if e > tol {
            out.failures.push(format!(
                "{}[{}]: analytic {analytic:.6e} numeric {numeric:.6e} rel {e:.3e}",
                names[arr], flat
            ));
        }
        out.checked += 1;
    }
    out
}

/// Two-or-more-class toy set: class `c` is a flat gray level `(c + 1) / (k + 1)`
/// with ±0.1 uniform noise, so the classes are linearly separable by mean.
pub fn blobs(per_class: usize, classes: usize, side: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let per = 3 * side * side;
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for i in 0..per_class * classes {
        let c = i % classes;
        let level = (c + 1) as f32 / (classes + 1) as f32;
        labels.push(c);
        pixels.extend((0..per).map(|_| (level + r.random_range(-0.1f32..0.1)).clamp(0.0, 1.0)));
    }
    let names = (0..classes).map(|c| format!("class_{c}")).collect();
    Dataset::new(3, side, side, names, labels, pixels).unwrap()
}
