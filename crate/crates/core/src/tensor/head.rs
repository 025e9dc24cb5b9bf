use super::gemm::sgemm;
use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Dense map from pooled features to class logits. `weight` is `in × out`
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct SoftmaxOutput {
    /// Mean cross-entropy over the batch.
    pub loss: f32,
    /// Row-major `N × K` class probabilities.
    pub probs: Vec<f32>,
    pub grad_logits: Tensor,
}

#[derive(Debug, Clone)]
pub struct HeadOutput {
    pub loss: f32,
    pub probs: Vec<f32>,
    pub grad_features: Tensor,
    pub grads: LinearGrads,
}

impl LinearParams {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        LinearParams {
            in_features,
            out_features,
            weight: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
        }
    }

    fn check(&self, features: Shape) -> Result<()> {
        if self.weight.len() != self.in_features * self.out_features
            || self.bias.len() != self.out_features
        {
            return Err(Error::Shape(format!(
                "linear layer {}x{} has {} weights and {} biases",
                self.in_features,
                self.out_features,
                self.weight.len(),
                self.bias.len()
            )));
        }
        if features.sample_len() != self.in_features {
            return Err(Error::Shape(format!(
                "linear layer expects {} features per sample, input is {}",
                self.in_features, features
            )));
        }
        Ok(())
    }
}

/// Logits of shape `(N, K, 1, 1)`.
pub fn linear_forward(features: &Tensor, p: &LinearParams) -> Result<Tensor> {
    let s = features.shape();
    p.check(s)?;
    let k = p.out_features;
    let mut out = vec![0.0f32; s.n * k];
    for row in out.chunks_mut(k.max(1)) {
        row.copy_from_slice(&p.bias);
    }
    sgemm(
        s.n,
        p.in_features,
        k,
        1.0,
        features.data(),
        false,
        &p.weight,
        false,
        1.0,
        &mut out,
    );
    Tensor::from_vec(Shape::new(s.n, k, 1, 1), out)
}

pub fn linear_backward(
    features: &Tensor,
    p: &LinearParams,
    grad_logits: &Tensor,
) -> Result<(Tensor, LinearGrads)> {
    let s = features.shape();
    p.check(s)?;
    let k = p.out_features;
    if grad_logits.shape() != Shape::new(s.n, k, 1, 1) {
        return Err(Error::Shape(format!(
            "linear grad {} does not match ({}, {}, 1, 1)",
            grad_logits.shape(),
            s.n,
            k
        )));
    }
    let mut gw = vec![0.0f32; p.weight.len()];
    // dW = Fᵀ · dZ
    sgemm(
        p.in_features,
        s.n,
        k,
        1.0,
        features.data(),
        true,
        grad_logits.data(),
        false,
        0.0,
        &mut gw,
    );
    let mut gb = vec![0.0f64; k];
    for row in grad_logits.data().chunks(k.max(1)) {
        for (a, &b) in gb.iter_mut().zip(row) {
            *a += b as f64;
        }
    }
    let mut gf = vec![0.0f32; s.len()];
    // dF = dZ · Wᵀ
    sgemm(
        s.n,
        k,
        p.in_features,
        1.0,
        grad_logits.data(),
        false,
        &p.weight,
        true,
        0.0,
        &mut gf,
    );
    Ok((
        Tensor::from_vec(s, gf)?,
        LinearGrads {
            weight: gw,
            bias: gb.into_iter().map(|v| v as f32).collect(),
        },
    ))
}

/// Numerically stable softmax with mean cross-entropy against `labels`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<SoftmaxOutput> {
    let s = logits.shape();
    let k = s.sample_len();
    if labels.len() != s.n {
        return Err(Error::Validation(format!(
            "{} labels for a batch of {}",
            labels.len(),
            s.n
        )));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::Validation(format!(
            "label {} at position {} is outside [0, {})",
            l, i, k
        )));
    }
    let mut probs = vec![0.0f32; s.n * k];
    let mut grad = vec![0.0f32; s.n * k];
    let mut total = 0.0f64;
    let inv_n = 1.0 / s.n.max(1) as f64;
    for (i, row) in logits.data().chunks(k.max(1)).enumerate() {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let exps: Vec<f64> = row.iter().map(|&z| (z as f64 - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let log_denom = denom.ln();
        total += log_denom - (row[labels[i]] as f64 - max);
        for j in 0..k {
            let p = exps[j] / denom;
            probs[i * k + j] = p as f32;
            let target = if j == labels[i] { 1.0 } else { 0.0 };
            grad[i * k + j] = ((p - target) * inv_n) as f32;
        }
    }
    Ok(SoftmaxOutput {
        loss: (total * inv_n) as f32,
        probs,
        grad_logits: Tensor::from_vec(s, grad)?,
    })
}

/// Linear classifier, softmax and mean cross-entropy in one call, with all
/// gradients.
pub fn linear_softmax_ce(
    features: &Tensor,
    p: &LinearParams,
    labels: &[usize],
) -> Result<HeadOutput> {
    let logits = linear_forward(features, p)?;
    let sm = softmax_cross_entropy(&logits, labels)?;
    let (grad_features, grads) = linear_backward(features, p, &sm.grad_logits)?;
    Ok(HeadOutput {
        loss: sm.loss,
        probs: sm.probs,
        grad_features,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{check_close_rel, numeric_grad, random_tensor, random_vec, rng};

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::full(Shape::new(3, 10, 1, 1), 0.7);
        let out = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((out.loss as f64 - 10f64.ln()).abs() < 1e-5);
        for row in out.probs.chunks(10) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn saturated_margin_has_tiny_loss() {
        let mut z = vec![0.0f32; 4];
        z[2] = 100.0;
        let logits = Tensor::from_vec(Shape::new(1, 4, 1, 1), z).unwrap();
        let out = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!(out.loss >= 0.0 && out.loss < 1e-6);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let logits = Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![1e30, -1e30, 0.0]).unwrap();
        let out = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(out.loss.is_finite());
        assert!(out.probs.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn out_of_range_label_rejected() {
        let logits = Tensor::zeros(Shape::new(2, 3, 1, 1));
        assert!(matches!(
            softmax_cross_entropy(&logits, &[0, 3]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn three_class_finite_differences() {
        let mut r = rng(40);
        let feats = random_tensor(&mut r, Shape::new(4, 5, 1, 1));
        let labels = [0usize, 2, 1, 2];
        let p = LinearParams {
            in_features: 5,
            out_features: 3,
            weight: random_vec(&mut r, 15),
            bias: random_vec(&mut r, 3),
        };
        let out = linear_softmax_ce(&feats, &p, &labels).unwrap();
        let loss =
            |q: &LinearParams, f: &Tensor| linear_softmax_ce(f, q, &labels).unwrap().loss as f64;
        let nw = numeric_grad(&p.weight, 1e-3, |v| {
            let mut q = p.clone();
            q.weight = v.to_vec();
            loss(&q, &feats)
        });
        check_close_rel(&out.grads.weight, &nw, 1e-3, "W");
        let nb = numeric_grad(&p.bias, 1e-3, |v| {
            let mut q = p.clone();
            q.bias = v.to_vec();
            loss(&q, &feats)
        });
        check_close_rel(&out.grads.bias, &nb, 1e-3, "b");
        let nf = numeric_grad(feats.data(), 1e-3, |v| {
            loss(&p, &Tensor::from_vec(feats.shape(), v.to_vec()).unwrap())
        });
        check_close_rel(out.grad_features.data(), &nf, 1e-2, "features");
    }
}
