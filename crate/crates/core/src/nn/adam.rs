use crate::error::{Error, Result};

/// Bias-corrected Adam moments for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
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
    pub const DEFAULT_LR: f64 = 3e-4;

    pub fn new(num_params: usize, lr: f64) -> Self {
        Self::with_moments(num_params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_moments(num_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Applies one update in place: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::shape("adam parameters", self.m.len(), params.len()));
        }
        if grads.len() != self.m.len() {
            return Err(Error::shape("adam gradients", self.m.len(), grads.len()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = AdamState::new(3, 1e-2);
        let mut p = vec![1.0, -2.0, 3.0];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let lr = 1e-3;
        let mut adam = AdamState::new(3, lr);
        let g = [0.5, -3.0, 1e-3];
        let mut p = vec![0.0; 3];
        adam.step(&mut p, &g).unwrap();
        for (pi, gi) in p.iter().zip(&g) {
            // m_hat = g, v_hat = g^2 after one step
            let expected = -lr * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-15);
            assert!((pi + lr * gi.signum()).abs() < lr * 1e-4);
        }
    }

    #[test]
    fn update_is_stateful() {
        let g = [0.3, -0.1];
        let mut a = AdamState::new(2, 1e-2);
        let mut pa = vec![1.0, 1.0];
        a.step(&mut pa, &g).unwrap();
        a.step(&mut pa, &g).unwrap();

        let mut b = AdamState::new(2, 2e-2);
        let mut pb = vec![1.0, 1.0];
        b.step(&mut pb, &g).unwrap();

        // two constant-gradient steps move exactly 2*lr; the moments differ
        assert!(pa.iter().zip(&pb).all(|(x, y)| (x - y).abs() < 1e-12));
        assert_ne!(a.first_moment(), b.first_moment());
        let mut pa2 = pa.clone();
        let mut pb2 = pb.clone();
        a.step(&mut pa2, &[-0.3, 0.1]).unwrap();
        b.step(&mut pb2, &[-0.3, 0.1]).unwrap();
        assert_ne!(pa2, pb2);
    }

    #[test]
    fn rejects_length_mismatch() {
        let mut adam = AdamState::new(2, 1e-3);
        assert!(adam.step(&mut [0.0; 3], &[0.0; 3]).is_err());
        assert!(adam.step(&mut [0.0; 2], &[0.0; 1]).is_err());
        assert_eq!(adam.step_count(), 0);
    }
}
