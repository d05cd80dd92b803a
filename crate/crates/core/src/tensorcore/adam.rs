use super::network::Param;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates per parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &[Param]) -> Self {
        AdamState {
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified when any gradient is
/// non-finite.
pub fn adam_step(params: &mut [Param], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if state.m.len() != params.len()
        || params
            .iter()
            .zip(&state.m)
            .any(|(p, m)| p.value.len() != m.len())
    {
        return Err(Error::State("optimizer state does not match parameters".into()));
    }
    if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::NonFinite(p.name.clone()));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - f64::from(cfg.beta1).powi(t);
    let bc2 = 1.0 - f64::from(cfg.beta2).powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grad = p.grad.data();
        for (((w, &g), mi), vi) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(grad)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
            let m_hat = f64::from(*mi) / bc1;
            let v_hat = f64::from(*vi) / bc2;
            *w -= (f64::from(cfg.lr) * m_hat / (v_hat.sqrt() + f64::from(cfg.eps))) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::Tensor;

    fn scalar(v: f32, g: f32) -> Vec<Param> {
        vec![Param {
            name: "w".into(),
            value: Tensor::filled(&[1], v),
            grad: Tensor::filled(&[1], g),
        }]
    }

    #[test]
    fn zero_gradient_leaves_everything_unchanged() {
        let mut p = scalar(3.0, 0.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p[0].value.data(), &[3.0]);
        assert_eq!(s.m[0], vec![0.0]);
        assert_eq!(s.v[0], vec![0.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar(1.0, 1.0);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        adam_step(&mut p, &mut s, &cfg).unwrap();
        assert!((p[0].value.data()[0] - 0.9).abs() < 1e-6);
        // with a constant gradient every bias-corrected step is lr-sized
        adam_step(&mut p, &mut s, &cfg).unwrap();
        assert!((p[0].value.data()[0] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let run = || {
            let mut p = scalar(0.3, 0.7);
            let mut s = AdamState::new(&p);
            for k in 0..5 {
                p[0].grad.data_mut()[0] = (k as f32 * 0.9).sin();
                adam_step(&mut p, &mut s, &AdamConfig::default()).unwrap();
            }
            (p[0].value.data()[0].to_bits(), s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar(1.0, f32::NAN);
        p[0].name = "enc0.conv0.weight".into();
        let mut s = AdamState::new(&p);
        let err = adam_step(&mut p, &mut s, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("enc0.conv0.weight"));
        assert_eq!(p[0].value.data(), &[1.0]);
        assert_eq!(s.t, 0);
    }
}
