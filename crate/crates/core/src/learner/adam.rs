use serde::{Deserialize, Serialize};

use super::{Gradients, LearnerError, LearnerParams};

/// Adam moments and hyperparameters for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Updates applied so far; drives bias correction.
    pub t: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl OptimizerState {
    /// Standard Adam (`beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`) with zeroed moments.
    pub fn new(learning_rate: f64, n_params: usize) -> Self {
        Self::with_betas(learning_rate, 0.9, 0.999, 1e-8, n_params)
    }

    pub fn with_betas(learning_rate: f64, beta1: f64, beta2: f64, eps: f64, n_params: usize) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        assert!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0, "betas must lie in (0, 1)");
        Self {
            learning_rate,
            beta1,
            beta2,
            eps,
            t: 0,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
        }
    }

    pub fn for_params(learning_rate: f64, params: &LearnerParams) -> Self {
        Self::new(learning_rate, params.len())
    }

    /// One bias-corrected Adam update of `params` against `grad`.
    pub fn step(&mut self, params: &mut LearnerParams, grad: &Gradients) -> Result<(), LearnerError> {
        let n = params.len();
        if grad.len() != n || self.first_moment.len() != n {
            return Err(LearnerError::GradientShape {
                expected: n,
                found: if grad.len() != n { grad.len() } else { self.first_moment.len() },
            });
        }
        self.t += 1;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        for (((theta, &g), m), v) in params
            .values_mut()
            .iter_mut()
            .zip(grad.values())
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        params.bump_step();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Head, LearnerSpec};
    use super::*;

    fn params() -> LearnerParams {
        LearnerParams::init(&LearnerSpec::mlp(3, &[2], 2, Head::MultiClass), 1).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = params();
        let before = p.clone();
        let mut opt = OptimizerState::for_params(1e-3, &p);
        let zero = Gradients::zeros(p.len());
        opt.step(&mut p, &zero).unwrap();
        assert_eq!(p.values(), before.values());
        assert_eq!(opt.t, 1);
        assert_eq!(p.step(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = params();
        let before = p.clone();
        let lr = 5e-4;
        let mut opt = OptimizerState::for_params(lr, &p);
        let g: Vec<f64> = (0..p.len()).map(|i| if i % 2 == 0 { 0.7 } else { -3.0 }).collect();
        opt.step(&mut p, &Gradients::from_values(g.clone())).unwrap();
        for ((a, b), g) in p.values().iter().zip(before.values()).zip(&g) {
            let expected = -lr * g / (g.abs() + 1e-8);
            assert!((a - b - expected).abs() < 1e-15);
            assert_eq!((a - b).signum(), -g.signum());
        }
    }

    #[test]
    fn step_is_deterministic() {
        let p0 = params();
        let opt0 = OptimizerState::for_params(1e-3, &p0);
        let g = Gradients::from_values((0..p0.len()).map(|i| i as f64 * 0.1 - 0.3).collect());
        let run = || {
            let (mut p, mut o) = (p0.clone(), opt0.clone());
            o.step(&mut p, &g).unwrap();
            (p, o)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = params();
        let mut opt = OptimizerState::for_params(1e-3, &p);
        assert!(opt.step(&mut p, &Gradients::zeros(1)).is_err());
    }
}
