use crate::error::{shape_err, AutodiffError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter moment estimates for bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh state sized for `params`.
    pub fn new(params: &[&Tensor<T>], config: AdamConfig) -> Self {
        Self {
            first_moment: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            step_count: 0,
            config,
        }
    }

    /// One Adam update of every parameter from its gradient.
    ///
    /// `names` label the parameters in errors; a NaN or infinite gradient
    /// rejects the whole step before anything is modified.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<T>],
        grads: &[&[T]],
        names: &[&str],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(shape_err(
                "adam",
                format!(
                    "{} params, {} grads, state for {}",
                    params.len(),
                    grads.len(),
                    self.first_moment.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).copied().unwrap_or("<unnamed>");
            if p.numel() != g.len() || self.first_moment[i].len() != g.len() {
                return Err(shape_err(
                    "adam",
                    format!("`{name}`: {} values, {} grads", p.numel(), g.len()),
                ));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(AutodiffError::NonFiniteGradient(name.to_string()));
            }
        }

        self.step_count += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (j, theta) in p.data_mut().iter_mut().enumerate() {
                let g = grads[i][j].to_f64_lossy();
                let mj = beta1 * m[j].to_f64_lossy() + (1.0 - beta1) * g;
                let vj = beta2 * v[j].to_f64_lossy() + (1.0 - beta2) * g * g;
                m[j] = T::from_f64_lossy(mj);
                v[j] = T::from_f64_lossy(vj);
                let update = lr * (mj / bias1) / ((vj / bias2).sqrt() + epsilon);
                *theta = T::from_f64_lossy(theta.to_f64_lossy() - update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Tensor<f64> {
        Tensor::from_f64(vec![1], &[v]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = scalar_param(0.7);
        let mut state = AdamState::new(&[&p], AdamConfig::default());
        state.step(&mut [&mut p], &[&[0.0]], &["w"], 1e-3).unwrap();
        assert_eq!(p.data(), &[0.7]);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // t=1: m̂ = g, v̂ = g², update = lr·g/(|g| + ε)
        let mut p = scalar_param(0.0);
        let mut state = AdamState::new(&[&p], AdamConfig::default());
        state.step(&mut [&mut p], &[&[1.0]], &["w"], 1e-3).unwrap();
        let expected = -1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn descends_quadratic() {
        let mut p = scalar_param(1.0);
        let mut state = AdamState::new(&[&p], AdamConfig::default());
        let mut history = vec![1.0f64];
        for _ in 0..100 {
            let g = 2.0 * p.data()[0];
            state.step(&mut [&mut p], &[&[g]], &["theta"], 1e-3).unwrap();
            history.push(p.data()[0].abs());
        }
        // Far from the optimum Adam moves ~lr per step, so |θ| falls every step.
        assert!(history.windows(2).all(|w| w[1] < w[0]));
        assert!(history[100] < 0.91);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut a = scalar_param(1.0);
        let mut b = scalar_param(2.0);
        let mut state = AdamState::new(&[&a, &b], AdamConfig::default());
        let err = state
            .step(&mut [&mut a, &mut b], &[&[0.1], &[f64::NAN]], &["a", "mlp.4.bias"], 1e-3)
            .unwrap_err();
        assert_eq!(err, AutodiffError::NonFiniteGradient("mlp.4.bias".into()));
        assert_eq!(a.data(), &[1.0]);
        assert_eq!(state.step_count, 0);
    }

    #[test]
    fn step_count_increases() {
        let mut p = scalar_param(1.0);
        let mut state = AdamState::new(&[&p], AdamConfig::default());
        for expected in 1..=3 {
            state.step(&mut [&mut p], &[&[0.5]], &["w"], 1e-3).unwrap();
            assert_eq!(state.step_count, expected);
        }
    }
}
