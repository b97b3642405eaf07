//! Adam and the cosine-restart learning-rate schedule.

use indexmap::IndexMap;

use crate::error::{ensure, Error, Result};

use super::tensor::Tensor;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: IndexMap<String, Vec<f32>>,
    v: IndexMap<String, Vec<f32>>,
    t: u64,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        ensure!(
            (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2),
            "Adam betas must lie in [0, 1), got {beta1}, {beta2}"
        );
        ensure!(eps > 0.0, "Adam eps must be positive, got {eps}");
        Ok(Adam {
            beta1,
            beta2,
            eps,
            m: IndexMap::new(),
            v: IndexMap::new(),
            t: 0,
        })
    }

    /// Number of steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of `param` (named `name`) with gradient `grad`. Call
    /// [`Adam::advance`] once per optimizer step before updating the
    /// parameters of that step.
    pub fn update(
        &mut self,
        name: &str,
        param: &mut Tensor<f32>,
        grad: &[f32],
        lr: f64,
    ) -> Result<()> {
        if grad.len() != param.len() {
            return Err(Error::Shape(format!(
                "gradient for {name} has {} values, parameter has {}",
                grad.len(),
                param.len()
            )));
        }
        ensure!(
            self.t >= 1,
            "Adam::advance must be called before the first update"
        );
        let m = self
            .m
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; grad.len()]);
        let v = self
            .v
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; grad.len()]);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = (lr / c1) as f32;
        let c2 = c2 as f32;
        let eps = self.eps as f32;
        for (((p, &g), m), v) in param
            .data_mut()
            .iter_mut()
            .zip(grad)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / ((*v / c2).sqrt() + eps);
        }
        Ok(())
    }

    /// Start a new step (increments `t`).
    pub fn advance(&mut self) {
        self.t += 1;
    }
}

/// `lr_min + (lr_max - lr_min) (1 + cos(pi (iter mod period) / period)) / 2`.
pub fn cosine_lr(iter: u64, period: u64, lr_min: f64, lr_max: f64) -> f64 {
    assert!(period > 0, "cosine_lr period must be positive");
    let phase = (iter % period) as f64 / period as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * phase).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_lr(0, 1000, 1e-7, 2e-4), 2e-4);
        let mid = cosine_lr(500, 1000, 1e-7, 2e-4);
        assert!((mid - (1e-7 + 2e-4) / 2.0).abs() < 1e-18);
        assert_eq!(cosine_lr(1000, 1000, 1e-7, 2e-4), 2e-4);
        assert!(cosine_lr(999, 1000, 1e-7, 2e-4) < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = Adam::new(0.9, 0.999, 1e-8).unwrap();
        let mut p = Tensor::from_vec([1, 1, 1, 3], vec![1.0f32, -2.0, 3.0]).unwrap();
        let before = p.clone();
        for _ in 0..5 {
            adam.advance();
            adam.update("p", &mut p, &[0.0; 3], 1e-2).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_steps_by_lr() {
        // With constant g, bias-corrected m = g and v = g^2 exactly, so
        // each step moves by lr * g / (|g| + eps).
        let g = 0.37f32;
        let lr = 1e-3;
        let mut adam = Adam::new(0.9, 0.999, 1e-8).unwrap();
        let mut p = Tensor::from_vec([1, 1, 1, 1], vec![0.0f32]).unwrap();
        let mut prev = 0.0f32;
        for _ in 0..200 {
            adam.advance();
            adam.update("p", &mut p, &[g], lr).unwrap();
            let step = prev - p.data()[0];
            let expected = lr * g as f64 / (g as f64 + 1e-8);
            assert!(
                (step as f64 - expected).abs() < 1e-3 * expected,
                "step {step}"
            );
            prev = p.data()[0];
        }
    }

    #[test]
    fn update_before_advance_fails() {
        let mut adam = Adam::new(0.9, 0.999, 1e-8).unwrap();
        let mut p = Tensor::<f32>::zeros([1, 1, 1, 1]);
        assert!(adam.update("p", &mut p, &[1.0], 1e-3).is_err());
        adam.advance();
        assert!(adam.update("p", &mut p, &[1.0, 2.0], 1e-3).is_err());
    }
}
