use crate::error::{contract, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a fixed list of parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        Self { config, m, v, t: 0 }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(contract(format!(
                "adam tracks {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != p.shape() {
                return Err(contract(format!(
                    "adam parameter {i}: expected {:?}, got param {:?} grad {:?}",
                    self.m[i].shape(),
                    p.shape(),
                    g.shape()
                )));
            }
        }

        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (j, &gj) in g.data().iter().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(config: AdamConfig, p: &mut Tensor, grads: &[Tensor]) -> AdamState {
        let mut state = AdamState::new(config, [&*p]);
        for g in grads {
            state.step(&mut [&mut *p], std::slice::from_ref(g)).unwrap();
        }
        state
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::vector(vec![1.0, 1.0, 1.0]);
        let g = Tensor::vector(vec![0.5, -3.0, 1e-3]);
        run(AdamConfig::default(), &mut p, std::slice::from_ref(&g));
        for (pj, gj) in p.data().iter().zip(g.data()) {
            let expected = 1.0 - 0.001 * gj / (gj.abs() + 1e-8);
            assert!((pj - expected).abs() < 1e-15);
            assert!((pj - (1.0 - 0.001 * gj.signum())).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_gradient_leaves_params_but_counts_step() {
        let mut p = Tensor::vector(vec![0.3, -0.2]);
        let state = run(AdamConfig::default(), &mut p, &[Tensor::zeros(&[2])]);
        assert_eq!(p.data(), &[0.3, -0.2]);
        assert_eq!(state.steps(), 1);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut p = Tensor::vector(vec![0.3, -0.2]);
        let cfg = AdamConfig { lr: 0.0, ..AdamConfig::default() };
        run(cfg, &mut p, &[Tensor::vector(vec![1.0, 2.0]), Tensor::vector(vec![-4.0, 0.1])]);
        assert_eq!(p.data(), &[0.3, -0.2]);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let grads = [Tensor::vector(vec![0.1, -0.7]), Tensor::vector(vec![2.0, 0.3])];
        let mut a = Tensor::vector(vec![1.0, 2.0]);
        let mut b = a.clone();
        run(AdamConfig::default(), &mut a, &grads);
        run(AdamConfig::default(), &mut b, &grads);
        assert_eq!(a, b);
    }

    #[test]
    fn converges_on_a_convex_quadratic() {
        // ‖p − p*‖² from distance 1, lr = 0.05, 200 steps.
        let target = [0.6, -0.8, 0.0];
        let mut p = Tensor::vector(vec![0.0; 3]);
        let mut state = AdamState::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, [&p]);
        for _ in 0..200 {
            let g = Tensor::vector(p.data().iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect());
            state.step(&mut [&mut p], &[g]).unwrap();
        }
        let dist: f64 = p.data().iter().zip(&target).map(|(x, t)| (x - t).powi(2)).sum::<f64>().sqrt();
        assert!(dist < 0.1, "distance {dist}");
    }

    #[test]
    fn misaligned_gradients_are_rejected() {
        let mut p = Tensor::vector(vec![0.0; 3]);
        let mut state = AdamState::new(AdamConfig::default(), [&p]);
        assert!(state.step(&mut [&mut p], &[Tensor::zeros(&[2])]).is_err());
        assert!(state.step(&mut [&mut p], &[]).is_err());
        assert_eq!(state.steps(), 0);
    }
}
