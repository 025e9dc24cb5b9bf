use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Weight of the previous running statistic in the moving average.
pub const BN_MOMENTUM: f32 = 0.9;
pub const BN_EPSILON: f32 = 1e-5;

/// Per-channel batch normalization over (N, H, W).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub epsilon: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

/// What the backward pass needs from a forward call.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    /// Normalized input before the affine map.
    pub x_hat: Tensor,
    /// `1 / sqrt(var + eps)` per channel, from batch or running statistics.
    pub inv_std: Vec<f32>,
    /// Whether batch statistics were used (the mean/variance depend on `x`).
    pub training: bool,
}

impl BatchNormParams {
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, s: Shape) -> Result<()> {
        let c = self.gamma.len();
        if s.c != c
            || self.beta.len() != c
            || self.running_mean.len() != c
            || self.running_var.len() != c
        {
            return Err(Error::Shape(format!(
                "batch norm with {} channels applied to input {}",
                c, s
            )));
        }
        Ok(())
    }
}

/// Per-channel mean and biased variance over (N, H, W), accumulated in f64.
fn channel_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let count = (s.n * s.plane()) as f64;
    let mut mean = vec![0.0f64; s.c];
    let mut var = vec![0.0f64; s.c];
    for (c, m) in mean.iter_mut().enumerate() {
        let mut acc = 0.0;
        for n in 0..s.n {
            let base = x.index(n, c, 0, 0);
            acc += x.data()[base..base + s.plane()]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>();
        }
        *m = acc / count;
    }
    for (c, v) in var.iter_mut().enumerate() {
        let mut acc = 0.0;
        for n in 0..s.n {
            let base = x.index(n, c, 0, 0);
            acc += x.data()[base..base + s.plane()]
                .iter()
                .map(|&u| (u as f64 - mean[c]).powi(2))
                .sum::<f64>();
        }
        *v = acc / count;
    }
    (mean, var)
}

/// In training mode normalizes with batch statistics and folds them into the
/// running estimates; otherwise uses the running estimates untouched.
pub fn batchnorm_forward(
    x: &Tensor,
    p: &mut BatchNormParams,
    training: bool,
) -> Result<(Tensor, BatchNormCache)> {
    let s = x.shape();
    p.check(s)?;
    let (mean, inv_std): (Vec<f64>, Vec<f64>) = if training {
        let (mean, var) = channel_moments(x);
        let count = s.n * s.plane();
        let m = p.momentum as f64;
        for c in 0..s.c {
            let unbiased = if count > 1 {
                var[c] * count as f64 / (count - 1) as f64
            } else {
                var[c]
            };
            p.running_mean[c] = (m * p.running_mean[c] as f64 + (1.0 - m) * mean[c]) as f32;
            p.running_var[c] = (m * p.running_var[c] as f64 + (1.0 - m) * unbiased) as f32;
        }
        let inv = var
            .iter()
            .map(|v| 1.0 / (v + p.epsilon as f64).sqrt())
            .collect();
        (mean, inv)
    } else {
        (
            p.running_mean.iter().map(|&v| v as f64).collect(),
            p.running_var
                .iter()
                .map(|&v| 1.0 / (v as f64 + p.epsilon as f64).sqrt())
                .collect(),
        )
    };

    let mut x_hat = Tensor::zeros(s);
    let mut y = Tensor::zeros(s);
    let plane = s.plane();
    for n in 0..s.n {
        for c in 0..s.c {
            let base = x.index(n, c, 0, 0);
            let (mu, inv) = (mean[c], inv_std[c]);
            let (g, b) = (p.gamma[c], p.beta[c]);
            for i in base..base + plane {
                let xh = ((x.data()[i] as f64 - mu) * inv) as f32;
                x_hat.data_mut()[i] = xh;
                y.data_mut()[i] = g * xh + b;
            }
        }
    }
    Ok((
        y,
        BatchNormCache {
            x_hat,
            inv_std: inv_std.into_iter().map(|v| v as f32).collect(),
            training,
        },
    ))
}

/// Inference-mode normalization without building a backward cache.
pub fn batchnorm_inference(x: &Tensor, p: &BatchNormParams) -> Result<Tensor> {
    let s = x.shape();
    p.check(s)?;
    let plane = s.plane();
    let mut y = x.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let inv = 1.0 / (p.running_var[c] as f64 + p.epsilon as f64).sqrt();
            let scale = (p.gamma[c] as f64 * inv) as f32;
            let shift =
                (p.beta[c] as f64 - p.gamma[c] as f64 * inv * p.running_mean[c] as f64) as f32;
            let base = x.index(n, c, 0, 0);
            for v in &mut y.data_mut()[base..base + plane] {
                *v = *v * scale + shift;
            }
        }
    }
    Ok(y)
}

pub fn batchnorm_backward(
    cache: &BatchNormCache,
    p: &BatchNormParams,
    grad_out: &Tensor,
) -> Result<(Tensor, BatchNormGrads)> {
    let s = grad_out.shape();
    if cache.x_hat.shape() != s {
        return Err(Error::Shape(format!(
            "batch norm grad_out {} vs cached input {}",
            s,
            cache.x_hat.shape()
        )));
    }
    p.check(s)?;
    let plane = s.plane();
    let count = (s.n * plane) as f64;
    let mut dgamma = vec![0.0f64; s.c];
    let mut dbeta = vec![0.0f64; s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = grad_out.index(n, c, 0, 0);
            for i in base..base + plane {
                let g = grad_out.data()[i] as f64;
                dgamma[c] += g * cache.x_hat.data()[i] as f64;
                dbeta[c] += g;
            }
        }
    }
    let mut grad_x = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let base = grad_out.index(n, c, 0, 0);
            let scale = p.gamma[c] as f64 * cache.inv_std[c] as f64;
            for i in base..base + plane {
                let g = grad_out.data()[i] as f64;
                grad_x.data_mut()[i] = if cache.training {
                    let xh = cache.x_hat.data()[i] as f64;
                    (scale * (g - dbeta[c] / count - xh * dgamma[c] / count)) as f32
                } else {
                    (scale * g) as f32
                };
            }
        }
    }
    Ok((
        grad_x,
        BatchNormGrads {
            gamma: dgamma.into_iter().map(|v| v as f32).collect(),
            beta: dbeta.into_iter().map(|v| v as f32).collect(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{check_close_rel, numeric_grad, random_tensor, random_vec, rng};

    fn channel_mean(y: &Tensor, c: usize) -> f64 {
        let s = y.shape();
        let mut acc = 0.0;
        for n in 0..s.n {
            for h in 0..s.h {
                for w in 0..s.w {
                    acc += y.at(n, c, h, w) as f64;
                }
            }
        }
        acc / (s.n * s.plane()) as f64
    }

    #[test]
    fn constant_batch_normalizes_to_zero() {
        let x = Tensor::full(Shape::new(4, 2, 3, 3), 3.5);
        let mut p = BatchNormParams::new(2);
        let (y, _) = batchnorm_forward(&x, &mut p, true).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn beta_shifts_channel_mean() {
        let mut r = rng(8);
        let x = random_tensor(&mut r, Shape::new(3, 2, 4, 4));
        let mut p = BatchNormParams::new(2);
        p.beta = vec![5.0, 5.0];
        let (y, _) = batchnorm_forward(&x, &mut p, true).unwrap();
        for c in 0..2 {
            assert!((channel_mean(&y, c) - 5.0).abs() < 1e-4);
        }
    }

    #[test]
    fn two_samples_map_to_minus_one_plus_one() {
        let x = Tensor::from_vec(Shape::new(2, 1, 1, 1), vec![1.0, 3.0]).unwrap();
        let mut p = BatchNormParams::new(1);
        let (y, _) = batchnorm_forward(&x, &mut p, true).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-3);
        assert!((y.data()[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn running_stats_follow_moving_average() {
        let x = Tensor::from_vec(Shape::new(2, 1, 1, 1), vec![1.0, 3.0]).unwrap();
        let mut p = BatchNormParams::new(1);
        batchnorm_forward(&x, &mut p, true).unwrap();
        // mean 2, unbiased var 2
        assert!((p.running_mean[0] - 0.2).abs() < 1e-6);
        assert!((p.running_var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-6);
        let before = p.clone();
        batchnorm_forward(&x, &mut p, false).unwrap();
        assert_eq!(before, p, "inference mode must not touch running stats");
    }

    #[test]
    fn inference_uses_running_stats() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, 3.0]).unwrap();
        let mut p = BatchNormParams::new(1);
        p.running_mean = vec![1.0];
        p.running_var = vec![4.0 - p.epsilon];
        let (y, _) = batchnorm_forward(&x, &mut p, false).unwrap();
        assert!((y.data()[0] - 0.0).abs() < 1e-6);
        assert!((y.data()[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cache_free_inference_matches_inference_forward() {
        let mut r = rng(14);
        let x = random_tensor(&mut r, Shape::new(2, 3, 3, 3));
        let mut p = BatchNormParams::new(3);
        p.gamma = random_vec(&mut r, 3);
        p.beta = random_vec(&mut r, 3);
        p.running_mean = random_vec(&mut r, 3);
        p.running_var = vec![0.5, 1.0, 2.0];
        let (want, _) = batchnorm_forward(&x, &mut p.clone(), false).unwrap();
        let got = batchnorm_inference(&x, &p).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-5);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor::zeros(Shape::new(1, 3, 2, 2));
        let mut p = BatchNormParams::new(2);
        assert!(matches!(
            batchnorm_forward(&x, &mut p, true),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut r = rng(9);
        let x = random_tensor(&mut r, Shape::new(2, 3, 2, 2));
        let mut p = BatchNormParams::new(3);
        let (_, cache) = batchnorm_forward(&x, &mut p, true).unwrap();
        let (gx, gp) = batchnorm_backward(&cache, &p, &Tensor::zeros(x.shape())).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(gp.gamma.iter().chain(&gp.beta).all(|&v| v == 0.0));
    }

    #[test]
    fn gamma_gradient_is_sum_of_grad_times_xhat() {
        let mut r = rng(10);
        let s = Shape::new(3, 2, 2, 3);
        let x = random_tensor(&mut r, s);
        let g = random_tensor(&mut r, s);
        let mut p = BatchNormParams::new(2);
        let (_, cache) = batchnorm_forward(&x, &mut p, true).unwrap();
        let (_, gp) = batchnorm_backward(&cache, &p, &g).unwrap();
        for c in 0..2 {
            let mut want = 0.0f64;
            for n in 0..s.n {
                for h in 0..s.h {
                    for w in 0..s.w {
                        want += g.at(n, c, h, w) as f64 * cache.x_hat.at(n, c, h, w) as f64;
                    }
                }
            }
            assert!((gp.gamma[c] as f64 - want).abs() < 1e-5);
        }
    }

    fn fd_check(training: bool, seed: u64) {
        let mut r = rng(seed);
        let s = Shape::new(2, 2, 2, 2);
        let x = random_tensor(&mut r, s);
        let proj = random_tensor(&mut r, s);
        let mut p = BatchNormParams::new(2);
        p.gamma = random_vec(&mut r, 2);
        p.beta = random_vec(&mut r, 2);
        p.running_mean = random_vec(&mut r, 2);
        p.running_var = vec![0.7, 1.3];
        let loss = |x: &Tensor, p: &BatchNormParams| -> f64 {
            let mut q = p.clone();
            let (y, _) = batchnorm_forward(x, &mut q, training).unwrap();
            y.data()
                .iter()
                .zip(proj.data())
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum()
        };
        let (_, cache) = batchnorm_forward(&x, &mut p.clone(), training).unwrap();
        let (gx, gp) = batchnorm_backward(&cache, &p, &proj).unwrap();
        let num_x = numeric_grad(x.data(), 1e-3, |v| {
            loss(&Tensor::from_vec(s, v.to_vec()).unwrap(), &p)
        });
        check_close_rel(gx.data(), &num_x, 1e-2, "bn dx");
        let num_g = numeric_grad(&p.gamma, 1e-3, |v| {
            let mut q = p.clone();
            q.gamma = v.to_vec();
            loss(&x, &q)
        });
        check_close_rel(&gp.gamma, &num_g, 1e-2, "bn dgamma");
        let num_b = numeric_grad(&p.beta, 1e-3, |v| {
            let mut q = p.clone();
            q.beta = v.to_vec();
            loss(&x, &q)
        });
        check_close_rel(&gp.beta, &num_b, 1e-2, "bn dbeta");
    }

    #[test]
    fn training_mode_matches_finite_differences() {
        fd_check(true, 12);
    }

    #[test]
    fn inference_mode_matches_finite_differences() {
        fd_check(false, 13);
    }
}
