use serde::{Deserialize, Serialize};

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NadamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub schedule_decay: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        NadamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            schedule_decay: 0.004,
        }
    }
}

impl NadamConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.beta1) || !open_unit(self.beta2) {
            return Err(Error::Validation(format!(
                "beta1 {} and beta2 {} must lie in (0, 1)",
                self.beta1, self.beta2
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Validation(format!(
                "lr {} must be positive",
                self.lr
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Validation(format!(
                "epsilon {} must be positive",
                self.epsilon
            )));
        }
        if !(self.schedule_decay >= 0.0 && self.schedule_decay.is_finite()) {
            return Err(Error::Validation(format!(
                "schedule_decay {} must be non-negative",
                self.schedule_decay
            )));
        }
        Ok(())
    }

    /// Momentum coefficient μ_t = β1·(1 − ½·0.96^(t·d)).
    pub fn momentum(&self, t: u64) -> f64 {
        self.beta1 * (1.0 - 0.5 * 0.96f64.powf(t as f64 * self.schedule_decay))
    }
}

/// Moment estimates for one parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct NadamState {
    pub names: Vec<String>,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
    pub m_schedule: f64,
}

impl NadamState {
    pub fn new(names: Vec<String>, sizes: &[usize]) -> Result<Self> {
        if names.len() != sizes.len() {
            return Err(Error::Shape(format!(
                "{} parameter names for {} parameter arrays",
                names.len(),
                sizes.len()
            )));
        }
        Ok(NadamState {
            names,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            m_schedule: 1.0,
        })
    }

    pub fn for_net(net: &crate::arch::UnionNet) -> Self {
        let params = net.trainable_params();
        let names = params.iter().map(|p| p.name.to_string()).collect();
        let sizes: Vec<usize> = params.iter().map(|p| p.values.len()).collect();
        NadamState::new(names, &sizes).expect("one name per array")
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.m.iter().map(Vec::len).collect()
    }

    pub(crate) fn write(&self, w: &mut ByteWriter) {
        w.u64(self.t);
        w.f64(self.m_schedule);
        w.u32(self.m.len() as u32);
        for (m, v) in self.m.iter().zip(&self.v) {
            w.f32_array(m);
            w.f32_array(v);
        }
    }

    /// Reads state written by `write`, checking it against the model's arrays.
    pub(crate) fn read(
        r: &mut ByteReader<'_>,
        names: Vec<String>,
        sizes: &[usize],
    ) -> Result<Self> {
        let t = r.u64("optimizer step")?;
        let m_schedule = r.f64("optimizer m_schedule")?;
        let at = r.pos();
        let count = r.u32("optimizer array count")? as usize;
        if count != sizes.len() {
            return Err(Error::Parse {
                offset: at,
                msg: format!("optimizer has {count} arrays, model has {}", sizes.len()),
            });
        }
        let mut state = NadamState::new(names, sizes)?;
        for (i, &n) in sizes.iter().enumerate() {
            for which in 0..2 {
                let at = r.pos();
                let a = r.f32_array("optimizer moments")?;
                if a.len() != n {
                    return Err(Error::Parse {
                        offset: at,
                        msg: format!(
                            "optimizer moments for {} have {} values, expected {n}",
                            state.names[i],
                            a.len()
                        ),
                    });
                }
                if which == 0 {
                    state.m[i] = a;
                } else {
                    state.v[i] = a;
                }
            }
        }
        state.t = t;
        state.m_schedule = m_schedule;
        Ok(state)
    }
}

/// One Nadam update at learning rate `cfg.lr`.
///
/// Every gradient is checked before anything is modified, so an error leaves
/// both the parameters and the state untouched.
pub fn nadam_step(
    params: &mut [&mut [f32]],
    grads: &[Vec<f32>],
    state: &mut NadamState,
    cfg: &NadamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} parameter arrays, {} gradient arrays, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let name = &state.names[i];
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::Shape(format!(
                "{name}: parameter has {} values, gradient {}, optimizer slot {}",
                p.len(),
                g.len(),
                state.m[i].len()
            )));
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of {name} at index {j} is {}",
                g[j]
            )));
        }
    }
    let t = state
        .t
        .checked_add(1)
        .ok_or_else(|| Error::Contract("optimizer step counter overflow".into()))?;
    let mu_t = cfg.momentum(t);
    let mu_next = cfg.momentum(t + 1);
    let m_schedule = state.m_schedule * mu_t;
    let m_schedule_next = m_schedule * mu_next;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let v_corr = 1.0 - b2.powf(t as f64);
    let g_scale = (1.0 - mu_t) / (1.0 - m_schedule);
    let m_scale = mu_next / (1.0 - m_schedule_next);

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            let gj = g[j] as f64;
            let mj = b1 * m[j] as f64 + (1.0 - b1) * gj;
            let vj = b2 * v[j] as f64 + (1.0 - b2) * gj * gj;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let step = (g_scale * gj + m_scale * mj) / ((vj / v_corr).sqrt() + cfg.epsilon);
            p[j] = (p[j] as f64 - cfg.lr * step) as f32;
        }
    }
    state.t = t;
    state.m_schedule = m_schedule;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_state() -> NadamState {
        NadamState::new(vec!["theta".into()], &[1]).unwrap()
    }

    fn cifar_beta1() -> NadamConfig {
        NadamConfig {
            beta1: 0.5,
            ..NadamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = vec![1.5f32, -2.0, 0.0];
        let before = p.clone();
        let mut st = NadamState::new(vec!["p".into()], &[3]).unwrap();
        nadam_step(
            &mut [&mut p[..]],
            &[vec![0.0; 3]],
            &mut st,
            &NadamConfig::default(),
        )
        .unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
        assert!(st.m[0].iter().chain(&st.v[0]).all(|&x| x == 0.0));
    }

    #[test]
    fn scalar_step_matches_hand_trace() {
        // θ=1, g=1, defaults. With d=0.004:
        //   μ1 = 0.9(1 − 0.5·0.96^0.004), μ2 = 0.9(1 − 0.5·0.96^0.008)
        //   ĝ = 1/(1−μ1); m = 0.1; m̂ = 0.1/(1−μ1μ2)
        //   v = 0.001; v̂ = 1
        for cfg in [NadamConfig::default(), cifar_beta1()] {
            let b1 = cfg.beta1;
            let mu1 = b1 * (1.0 - 0.5 * 0.96f64.powf(0.004));
            let mu2 = b1 * (1.0 - 0.5 * 0.96f64.powf(0.008));
            let g_hat = 1.0 / (1.0 - mu1);
            let m_hat = (1.0 - b1) / (1.0 - mu1 * mu2);
            let v_hat = (0.001f64 / (1.0 - 0.999)).sqrt();
            let want = 1.0 - 0.01 * ((1.0 - mu1) * g_hat + mu2 * m_hat) / (v_hat + 1e-8);

            let mut p = [1.0f32];
            let mut st = scalar_state();
            nadam_step(&mut [&mut p[..]], &[vec![1.0]], &mut st, &cfg).unwrap();
            assert!((p[0] as f64 - want).abs() < 1e-6, "{} vs {want}", p[0]);
            assert!((st.m_schedule - mu1).abs() < 1e-15);
            assert!((st.m[0][0] as f64 - (1.0 - b1)).abs() < 1e-7);
            assert!((st.v[0][0] as f64 - 0.001).abs() < 1e-9);
        }
    }

    #[test]
    fn m_schedule_is_product_of_momenta() {
        let cfg = NadamConfig::default();
        let mut p = [0.3f32];
        let mut st = scalar_state();
        for _ in 0..2 {
            nadam_step(&mut [&mut p[..]], &[vec![0.7]], &mut st, &cfg).unwrap();
        }
        let mu = |t: f64| 0.9 * (1.0 - 0.5 * 0.96f64.powf(t * 0.004));
        assert!((st.m_schedule - mu(1.0) * mu(2.0)).abs() < 1e-15);
        assert_eq!(st.t, 2);
    }

    /// Independent f64 evaluation of the same recurrence for f(θ) = θ².
    fn reference_quadratic(cfg: &NadamConfig, theta0: f64, steps: usize) -> Vec<f64> {
        let (mut th, mut m, mut v, mut ms) = (theta0, 0.0f64, 0.0f64, 1.0f64);
        let mut out = Vec::with_capacity(steps);
        for t in 1..=steps {
            let g = 2.0 * th;
            let mu = cfg.beta1 * (1.0 - 0.5 * 0.96f64.powf(t as f64 * cfg.schedule_decay));
            let mu2 = cfg.beta1 * (1.0 - 0.5 * 0.96f64.powf((t + 1) as f64 * cfg.schedule_decay));
            ms *= mu;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let g_hat = g / (1.0 - ms);
            let m_hat = m / (1.0 - ms * mu2);
            let v_hat = v / (1.0 - cfg.beta2.powi(t as i32));
            th -= cfg.lr * ((1.0 - mu) * g_hat + mu2 * m_hat) / (v_hat.sqrt() + cfg.epsilon);
            out.push(th);
        }
        out
    }

    #[test]
    fn quadratic_descent_follows_reference_and_converges() {
        // At lr 0.01 the second-moment average remembers the early large
        // gradients, so |θ| < 0.5 is first reached after roughly 760 steps,
        // not 500; the same holds for plain Adam.
        for cfg in [NadamConfig::default(), cifar_beta1()] {
            let reference = reference_quadratic(&cfg, 5.0, 1000);
            let mut p = [5.0f32];
            let mut st = scalar_state();
            let mut reached = None;
            for (step, want) in reference.iter().enumerate() {
                let g = vec![2.0 * p[0]];
                nadam_step(&mut [&mut p[..]], &[g], &mut st, &cfg).unwrap();
                assert!(
                    (p[0] as f64 - want).abs() < 1e-3,
                    "step {step}: {} vs {want}",
                    p[0]
                );
                if reached.is_none() && p[0].abs() < 0.5 {
                    reached = Some(step + 1);
                }
            }
            let want_steps = reference.iter().position(|t| t.abs() < 0.5).unwrap() + 1;
            assert!(
                reached.unwrap().abs_diff(want_steps) <= 2,
                "{reached:?} vs {want_steps}"
            );
            assert!((740..=780).contains(&want_steps), "{want_steps}");
        }
        // with a larger step size the same descent finishes inside 500 steps
        let cfg = NadamConfig {
            lr: 0.02,
            ..NadamConfig::default()
        };
        let mut p = [5.0f32];
        let mut st = scalar_state();
        let mut steps = 0;
        while p[0].abs() >= 0.5 && steps < 500 {
            let g = vec![2.0 * p[0]];
            nadam_step(&mut [&mut p[..]], &[g], &mut st, &cfg).unwrap();
            steps += 1;
        }
        assert!(p[0].abs() < 0.5, "θ = {}", p[0]);
    }

    #[test]
    fn non_finite_gradient_names_parameter_and_changes_nothing() {
        let mut a = vec![1.0f32; 2];
        let mut b = [2.0f32; 3];
        let mut st = NadamState::new(vec!["alpha".into(), "beta".into()], &[2, 3]).unwrap();
        let before = st.clone();
        let err = nadam_step(
            &mut [&mut a[..], &mut b[..]],
            &[vec![0.5; 2], vec![0.1, f32::NAN, 0.0]],
            &mut st,
            &NadamConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert!(err.to_string().contains("beta"), "{err}");
        assert_eq!(a, vec![1.0; 2]);
        assert_eq!(st, before);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut a = [1.0f32; 2];
        let mut st = NadamState::new(vec!["a".into()], &[2]).unwrap();
        let r = nadam_step(
            &mut [&mut a[..]],
            &[vec![0.0; 3]],
            &mut st,
            &NadamConfig::default(),
        );
        assert!(matches!(r, Err(Error::Shape(_))));
        assert!(NadamState::new(vec![], &[1]).is_err());
    }

    #[test]
    fn second_moment_stays_nonnegative() {
        let mut p = [0.0f32; 4];
        let mut st = NadamState::new(vec!["p".into()], &[4]).unwrap();
        for k in 0..20 {
            let g = vec![(k as f32).sin(), -3.0, 0.0, 1e-3];
            nadam_step(&mut [&mut p[..]], &[g], &mut st, &NadamConfig::default()).unwrap();
            assert!(st.v[0].iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn config_validation() {
        assert!(NadamConfig::default().validate().is_ok());
        assert!(cifar_beta1().validate().is_ok());
        for bad in [
            NadamConfig {
                beta1: 1.0,
                ..Default::default()
            },
            NadamConfig {
                beta2: 0.0,
                ..Default::default()
            },
            NadamConfig {
                lr: 0.0,
                ..Default::default()
            },
            NadamConfig {
                epsilon: 0.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn state_round_trips_bit_exactly() {
        let mut p = [0.2f32, -0.4, 0.9];
        let mut st = NadamState::new(vec!["p".into()], &[3]).unwrap();
        for k in 0..5 {
            let g = vec![0.1 * k as f32, -0.3, 1.7];
            nadam_step(&mut [&mut p[..]], &[g], &mut st, &cifar_beta1()).unwrap();
        }
        let mut w = ByteWriter::new();
        st.write(&mut w);
        let mut r = ByteReader::new(&w.buf);
        let back = NadamState::read(&mut r, st.names.clone(), &st.sizes()).unwrap();
        assert_eq!(r.remaining(), 0);
        assert_eq!(back.t, st.t);
        assert_eq!(back.m_schedule.to_bits(), st.m_schedule.to_bits());
        assert_eq!(back, st);

        let mut r = ByteReader::new(&w.buf);
        assert!(NadamState::read(&mut r, vec!["p".into()], &[4]).is_err());
    }
}
