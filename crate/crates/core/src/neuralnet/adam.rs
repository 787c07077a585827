use serde::{Deserialize, Serialize};

use super::tensor::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for every tensor of a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.v[index]
    }
}

/// One bias-corrected Adam step. Parameters are left untouched when any
/// gradient is non-finite.
pub fn adam_update(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::arg("parameter, gradient and optimizer layouts differ"));
    }
    for ((name, g), (_, p)) in grads.iter().zip(params.iter()) {
        if g.shape() != p.shape() {
            return Err(Error::arg(format!("gradient shape mismatch for `{name}`")));
        }
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(name.to_string()));
        }
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    let ids: Vec<_> = params.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let g = grads.get(id).data();
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        let p = params.get_mut(id).data_mut();
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::Tensor;

    fn scalar_set(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("theta", Tensor::new(vec![1], vec![v]).unwrap()).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_set(0.0);
        let g = scalar_set(1.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_update(&mut p, &g, &mut s).unwrap();
        let expect = -0.001 / (1.0 + 1e-8);
        assert!((p.iter().next().unwrap().1.data()[0] - expect).abs() < 1e-15);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_only_decays_moments() {
        let mut p = scalar_set(2.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_update(&mut p, &scalar_set(1.0), &mut s).unwrap();
        let before = p.clone();
        let m1 = s.first_moment(0)[0];
        let v1 = s.second_moment(0)[0];
        // with m > 0 a zero gradient still moves the parameter through m;
        // the moments themselves only decay
        adam_update(&mut p, &scalar_set(0.0), &mut s).unwrap();
        assert!((s.first_moment(0)[0] - 0.9 * m1).abs() < 1e-18);
        assert!((s.second_moment(0)[0] - 0.999 * v1).abs() < 1e-18);

        let mut fresh = scalar_set(2.0);
        let mut s2 = AdamState::new(&fresh, AdamConfig::default());
        adam_update(&mut fresh, &scalar_set(0.0), &mut s2).unwrap();
        assert_eq!(fresh, scalar_set(2.0));
        assert_ne!(p, before);
    }

    #[test]
    fn state_makes_steps_order_dependent() {
        // two steps with g then 2g differ from a single step with 3g
        let mut a = scalar_set(0.0);
        let mut sa = AdamState::new(&a, AdamConfig::default());
        adam_update(&mut a, &scalar_set(1.0), &mut sa).unwrap();
        adam_update(&mut a, &scalar_set(2.0), &mut sa).unwrap();
        let mut b = scalar_set(0.0);
        let mut sb = AdamState::new(&b, AdamConfig::default());
        adam_update(&mut b, &scalar_set(3.0), &mut sb).unwrap();
        adam_update(&mut b, &scalar_set(0.0), &mut sb).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_set(0.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        match adam_update(&mut p, &{
            let mut g = scalar_set(0.0);
            let id = g.id("theta").unwrap();
            g.get_mut(id).data_mut()[0] = f64::NAN;
            g
        }, &mut s)
        {
            Err(Error::Numeric(name)) => assert_eq!(name, "theta"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.step, 0);
    }
}
