use ndarray::Array2;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Learning rate and decoupled weight decay for one parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSettings {
    pub lr: f64,
    pub weight_decay: f64,
}

/// Moment estimates for a fixed list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Array2<f64>>, config: AdamConfig) -> Self {
        let m: Vec<_> = params.into_iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        let v = m.clone();
        Self { config, step: 0, m, v }
    }

    /// One AdamW update of every parameter, each with its own settings.
    pub fn step(
        &mut self,
        params: &mut [&mut Array2<f64>],
        grads: &[&Array2<f64>],
        settings: &[GroupSettings],
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() || settings.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam: {} moments, {} params, {} grads, {} settings",
                self.m.len(),
                params.len(),
                grads.len(),
                settings.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.dim() != self.m[i].dim() || g.dim() != self.m[i].dim() {
                return Err(Error::Shape(format!("adam: parameter {i} changed shape")));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..self.m.len() {
            let GroupSettings { lr, weight_decay } = settings[i];
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], grads[i]);
            ndarray::Zip::from(&mut *params[i]).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                *p -= lr * (update + weight_decay * *p);
            });
        }
        Ok(())
    }
}

/// Single-group convenience wrapper.
pub fn adam_step(
    params: &mut [&mut Array2<f64>],
    grads: &[&Array2<f64>],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let settings = vec![GroupSettings { lr, weight_decay }; params.len()];
    state.step(params, grads, &settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = array![[1.0, -2.0]];
        let g = Array2::zeros((1, 2));
        let mut st = AdamState::new([&p], AdamConfig::default());
        adam_step(&mut [&mut p], &[&g], &mut st, 0.1, 0.0).unwrap();
        assert_eq!(p, array![[1.0, -2.0]]);
    }

    #[test]
    fn first_step_is_sign_scaled() {
        let mut p = array![[0.0, 0.0, 0.0]];
        let g = array![[3.0, -0.01, 0.0]];
        let mut st = AdamState::new([&p], AdamConfig::default());
        adam_step(&mut [&mut p], &[&g], &mut st, 0.1, 0.0).unwrap();
        assert!((p[[0, 0]] + 0.1).abs() < 1e-6);
        assert!((p[[0, 1]] - 0.1).abs() < 1e-5);
        assert_eq!(p[[0, 2]], 0.0);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = array![[1.0, -1.0, 0.5]];
        let mut st = AdamState::new([&p], AdamConfig::default());
        for _ in 0..500 {
            let g = &p * 2.0;
            adam_step(&mut [&mut p], &[&g], &mut st, 1e-2, 0.0).unwrap();
        }
        let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "‖p‖ = {norm}");
    }

    #[test]
    fn shape_change_rejected() {
        let p0 = array![[1.0]];
        let mut st = AdamState::new([&p0], AdamConfig::default());
        let mut p = array![[1.0, 2.0]];
        let g = array![[1.0, 2.0]];
        assert!(adam_step(&mut [&mut p], &[&g], &mut st, 0.1, 0.0).is_err());
    }
}
