//! First-order optimization used for hyperparameter training.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// ADAM with the customary moment decay rates (β₁ = 0.9, β₂ = 0.999,
/// ε = 1e-8). The `step` method moves parameters downhill along the supplied
/// gradient; callers maximizing an objective pass its negated gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    first_moment: DVector<f64>,
    second_moment: DVector<f64>,
    t: u32,
}

impl Adam {
    pub fn new(dim: usize, learning_rate: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "optimizer needs at least one parameter".into(),
            ));
        }
        if !learning_rate.is_finite() || learning_rate <= 0.0 {
            return Err(Error::InvalidArgument(
                "learning rate must be positive and finite".into(),
            ));
        }
        Ok(Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: DVector::zeros(dim),
            second_moment: DVector::zeros(dim),
            t: 0,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// One bias-corrected update in place. The step size per coordinate is
    /// bounded by roughly the learning rate.
    pub fn step(&mut self, params: &mut DVector<f64>, gradient: &DVector<f64>) -> Result<()> {
        if params.len() != self.first_moment.len() || gradient.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.first_moment.len(),
                actual: gradient.len(),
            });
        }
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = gradient[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] =
                self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / b1t;
            let v_hat = self.second_moment[i] / b2t;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_bounded_by_the_learning_rate() {
        let mut adam = Adam::new(3, 0.1).unwrap();
        let mut p = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let start = p.clone();
        adam.step(&mut p, &DVector::from_vec(vec![10.0, -0.3, 1e-6]))
            .unwrap();
        for i in 0..3 {
            assert!((p[i] - start[i]).abs() <= 0.1 + 1e-12, "coordinate {i}");
        }
    }

    #[test]
    fn minimizes_a_convex_quadratic() {
        // f(p) = sum (p_i - c_i)^2 with gradient 2(p - c).
        let target = DVector::from_vec(vec![3.0, -1.0]);
        let mut adam = Adam::new(2, 0.05).unwrap();
        let mut p = DVector::zeros(2);
        for _ in 0..2000 {
            let grad = 2.0 * (&p - &target);
            adam.step(&mut p, &grad).unwrap();
        }
        assert!((p - target).norm() < 1e-3);
    }

    #[test]
    fn rejects_bad_construction_and_mismatched_steps() {
        assert!(Adam::new(0, 0.1).is_err());
        assert!(Adam::new(2, 0.0).is_err());
        let mut adam = Adam::new(2, 0.1).unwrap();
        let mut p = DVector::zeros(2);
        assert!(adam.step(&mut p, &DVector::zeros(3)).is_err());
    }
}
