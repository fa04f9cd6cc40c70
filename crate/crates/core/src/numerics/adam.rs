use crate::error::{param_err, shape_err, Result};

/// Adam optimizer state over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Result<Self> {
        Self::with_betas(num_params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(num_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(lr >= 0.0) || !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0)
        {
            return param_err(format!(
                "invalid Adam hyperparameters lr={lr} beta1={beta1} beta2={beta2} eps={eps}"
            ));
        }
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return shape_err(format!(
                "Adam state holds {} parameters, got params={} grads={}",
                self.m.len(),
                params.len(),
                grads.len()
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = AdamState::new(3, 0.1).unwrap();
        let mut p = vec![1.0, -2.0, 0.5];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn constant_gradient_decreases_scalar() {
        let mut adam = AdamState::new(1, 0.1).unwrap();
        let mut p = vec![0.0];
        let mut prev = p[0];
        for _ in 0..50 {
            adam.step(&mut p, &[1.0]).unwrap();
            assert!(p[0] < prev);
            prev = p[0];
        }
        // bias correction makes every step exactly lr for a constant gradient
        assert!((p[0] + 5.0).abs() < 1e-6, "{}", p[0]);
    }

    #[test]
    fn counter_increments() {
        let mut adam = AdamState::new(2, 0.01).unwrap();
        let mut p = vec![0.0; 2];
        for expected in 1..=3 {
            adam.step(&mut p, &[0.3, -0.1]).unwrap();
            assert_eq!(adam.step_count(), expected);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut adam = AdamState::new(2, 0.01).unwrap();
        let mut p = vec![0.0; 3];
        assert!(adam.step(&mut p, &[0.0; 3]).is_err());
        assert_eq!(adam.step_count(), 0);
    }
}
