//! Factorized Gaussians: log-density, closed-form KL and reparameterized
//! sampling.
//!
//! [`DiagonalGaussian`] holds concrete values; [`GaussianVars`] is the same
//! distribution living on a [`Tape`] so that every quantity is
//! differentiable in the mean and standard deviation.

use crate::autodiff::{softplus, Tape, UnaryKind, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor added to every standard deviation produced by [`GaussianVars::from_raw`].
pub const MIN_STD: f64 = 0.01;

/// `½ ln(2π)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalGaussian {
    pub mean: Tensor,
    pub std: Tensor,
}

impl DiagonalGaussian {
    pub fn new(mean: Tensor, std: Tensor) -> Result<Self> {
        if mean.shape() != std.shape() {
            return Err(Error::Dimension {
                op: "gaussian",
                lhs: mean.shape().to_vec(),
                rhs: std.shape().to_vec(),
            });
        }
        if let Some((index, &value)) = std.data().iter().enumerate().find(|(_, &s)| !(s > 0.0)) {
            return Err(Error::Domain {
                op: "gaussian std",
                index,
                value,
            });
        }
        Ok(Self { mean, std })
    }

    /// `N(0, I)` in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[dim]),
            std: Tensor::ones(&[dim]),
        }
    }

    /// `mean = mean_raw`, `std = MIN_STD + softplus(std_raw)`.
    pub fn from_raw(mean_raw: Tensor, std_raw: &Tensor) -> Result<Self> {
        Self::new(mean_raw, std_raw.map(|r| MIN_STD + softplus(r)))
    }

    pub fn dim(&self) -> usize {
        self.mean.numel()
    }

    /// Σᵢ −½ln(2π) − ln σᵢ − (xᵢ − μᵢ)² / (2σᵢ²)
    pub fn log_prob(&self, x: &Tensor) -> Result<f64> {
        self.check_shape(x)?;
        Ok(self
            .mean
            .data()
            .iter()
            .zip(self.std.data())
            .zip(x.data())
            .map(|((m, s), x)| -HALF_LN_2PI - s.ln() - (x - m).powi(2) / (2.0 * s * s))
            .sum())
    }

    /// `μ + σ ⊙ eps`
    pub fn sample(&self, eps: &Tensor) -> Result<Tensor> {
        self.check_shape(eps)?;
        let data = self
            .mean
            .data()
            .iter()
            .zip(self.std.data())
            .zip(eps.data())
            .map(|((m, s), e)| m + s * e)
            .collect();
        Tensor::new(self.mean.shape(), data)
    }

    fn check_shape(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.mean.shape() {
            return Err(Error::Dimension {
                op: "gaussian",
                lhs: self.mean.shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        Ok(())
    }
}

/// KL(p ‖ q) = Σᵢ ln(σ_q/σ_p) + (σ_p² + (μ_p − μ_q)²)/(2σ_q²) − ½
pub fn kl(p: &DiagonalGaussian, q: &DiagonalGaussian) -> Result<f64> {
    p.check_shape(&q.mean)?;
    let mut total = 0.0;
    for i in 0..p.dim() {
        let (mp, sp) = (p.mean.data()[i], p.std.data()[i]);
        let (mq, sq) = (q.mean.data()[i], q.std.data()[i]);
        total += (sq / sp).ln() + (sp * sp + (mp - mq).powi(2)) / (2.0 * sq * sq) - 0.5;
    }
    Ok(total)
}

/// A diagonal Gaussian whose parameters are tape nodes of equal shape.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVars {
    pub mean: Var,
    pub std: Var,
}

impl GaussianVars {
    pub fn from_raw(tape: &mut Tape, mean_raw: Var, std_raw: Var) -> Result<Self> {
        if tape.shape(mean_raw) != tape.shape(std_raw) {
            return Err(Error::Dimension {
                op: "from_raw",
                lhs: tape.shape(mean_raw).to_vec(),
                rhs: tape.shape(std_raw).to_vec(),
            });
        }
        let sp = tape.unary(UnaryKind::Softplus, std_raw)?;
        let floor = tape.constant(Tensor::scalar(MIN_STD));
        let std = tape.add(sp, floor)?;
        Ok(Self { mean: mean_raw, std })
    }

    pub fn constant(tape: &mut Tape, g: &DiagonalGaussian) -> Self {
        Self {
            mean: tape.constant(g.mean.clone()),
            std: tape.constant(g.std.clone()),
        }
    }

    pub fn to_value(self, tape: &Tape) -> DiagonalGaussian {
        DiagonalGaussian {
            mean: tape.value(self.mean).clone(),
            std: tape.value(self.std).clone(),
        }
    }

    /// Scalar log-density of `x`, summed over all entries.
    pub fn log_prob(self, tape: &mut Tape, x: Var) -> Result<Var> {
        let diff = tape.sub(x, self.mean)?;
        let z = tape.div(diff, self.std)?;
        let z2 = tape.unary(UnaryKind::Square, z)?;
        let quad = tape.sum_all(z2);
        let log_std = tape.unary(UnaryKind::Log, self.std)?;
        let log_std = tape.sum_all(log_std);
        let n = tape.value(self.mean).numel() as f64;
        let half_quad = tape.scale(quad, -0.5);
        let lp = tape.sub(half_quad, log_std)?;
        let offset = tape.constant(Tensor::scalar(-n * HALF_LN_2PI));
        tape.add(lp, offset)
    }

    /// Reparameterized draw `μ + σ ⊙ eps`; `eps` is a caller-supplied
    /// standard-normal tensor of the same shape.
    pub fn sample(self, tape: &mut Tape, eps: Var) -> Result<Var> {
        let noise = tape.mul(self.std, eps)?;
        tape.add(self.mean, noise)
    }

    /// Scalar KL(self ‖ other).
    pub fn kl(self, tape: &mut Tape, other: GaussianVars) -> Result<Var> {
        let log_sq = tape.unary(UnaryKind::Log, other.std)?;
        let log_sp = tape.unary(UnaryKind::Log, self.std)?;
        let log_ratio = tape.sub(log_sq, log_sp)?;
        let var_p = tape.unary(UnaryKind::Square, self.std)?;
        let dm = tape.sub(self.mean, other.mean)?;
        let dm2 = tape.unary(UnaryKind::Square, dm)?;
        let num = tape.add(var_p, dm2)?;
        let var_q = tape.unary(UnaryKind::Square, other.std)?;
        let two_var_q = tape.scale(var_q, 2.0);
        let ratio = tape.div(num, two_var_q)?;
        let per_dim = tape.add(log_ratio, ratio)?;
        let total = tape.sum_all(per_dim);
        let n = tape.value(self.mean).numel() as f64;
        let offset = tape.constant(Tensor::scalar(-0.5 * n));
        tape.add(total, offset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::gradcheck;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn g(mean: &[f64], std: &[f64]) -> DiagonalGaussian {
        DiagonalGaussian::new(Tensor::vector(mean.to_vec()), Tensor::vector(std.to_vec())).unwrap()
    }

    fn tape_log_prob(dist: &DiagonalGaussian, x: &Tensor) -> f64 {
        let mut tape = Tape::new();
        let gv = GaussianVars::constant(&mut tape, dist);
        let x = tape.constant(x.clone());
        let lp = gv.log_prob(&mut tape, x).unwrap();
        tape.value(lp).item()
    }

    fn tape_kl(p: &DiagonalGaussian, q: &DiagonalGaussian) -> f64 {
        let mut tape = Tape::new();
        let (pv, qv) = (GaussianVars::constant(&mut tape, p), GaussianVars::constant(&mut tape, q));
        let k = pv.kl(&mut tape, qv).unwrap();
        tape.value(k).item()
    }

    #[test]
    fn from_raw_floor_and_zero() {
        let d = DiagonalGaussian::from_raw(Tensor::vector(vec![3.0, -1.0]), &Tensor::vector(vec![-800.0, 0.0])).unwrap();
        assert_eq!(d.mean.data(), &[3.0, -1.0]);
        assert_eq!(d.std.data()[0], MIN_STD);
        assert!((d.std.data()[1] - 0.703_147_180_559_945_3).abs() < 1e-15);

        let mut tape = Tape::new();
        let m = tape.constant(Tensor::vector(vec![3.0]));
        let r = tape.constant(Tensor::vector(vec![0.0]));
        let gv = GaussianVars::from_raw(&mut tape, m, r).unwrap();
        assert!((tape.value(gv.std).item() - (0.01 + std::f64::consts::LN_2)).abs() < 1e-15);
    }

    #[test]
    fn log_prob_closed_forms() {
        let std_normal = g(&[0.0], &[1.0]);
        let x0 = Tensor::vector(vec![0.0]);
        assert!((std_normal.log_prob(&x0).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-15);
        assert!((tape_log_prob(&std_normal, &x0) + 0.918_938_533_204_672_7).abs() < 1e-15);

        let d = g(&[1.0, -2.0, 0.5, 7.0], &[1.0; 4]);
        let at_mean = d.mean.clone();
        assert!((d.log_prob(&at_mean).unwrap() + 4.0 * HALF_LN_2PI).abs() < 1e-12);
    }

    #[test]
    fn shrinking_std_below_the_residual_lowers_log_prob() {
        let x = Tensor::vector(vec![1.0]);
        let mut last = f64::INFINITY;
        for s in [0.9, 0.5, 0.2, 0.05] {
            let lp = g(&[0.0], &[s]).log_prob(&x).unwrap();
            assert!(lp < last);
            last = lp;
        }
    }

    #[test]
    fn kl_closed_forms() {
        let p = g(&[0.3, -1.0], &[0.5, 2.0]);
        assert_eq!(kl(&p, &p).unwrap(), 0.0);
        assert_eq!(tape_kl(&p, &p), 0.0);
        assert!((kl(&g(&[1.0], &[1.0]), &g(&[0.0], &[1.0])).unwrap() - 0.5).abs() < 1e-15);
        let expected = 0.5f64.ln() + 2.0 - 0.5;
        assert!((kl(&g(&[0.0], &[2.0]), &g(&[0.0], &[1.0])).unwrap() - expected).abs() < 1e-15);
        assert!((tape_kl(&g(&[0.0], &[2.0]), &g(&[0.0], &[1.0])) - expected).abs() < 1e-15);
        assert!((expected - 0.806_85).abs() < 1e-5);
    }

    #[test]
    fn sampling() {
        let d = g(&[3.0, -1.0], &[0.5, MIN_STD]);
        assert_eq!(d.sample(&Tensor::zeros(&[2])).unwrap(), d.mean);
        let eps = Tensor::vector(vec![0.0, 2.5]);
        let s = d.sample(&eps).unwrap();
        assert!((s.data()[1] - (-1.0)).abs() <= MIN_STD * 2.5 + 1e-15);

        // Law of large numbers for N(3, 0.5²).
        let one = g(&[3.0], &[0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| {
                let e: f64 = rng.sample(StandardNormal);
                one.sample(&Tensor::vector(vec![e])).unwrap().item()
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - 3.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn density_integrates_to_one() {
        let (mu, sigma) = (0.7, 1.3);
        let d = g(&[mu], &[sigma]);
        let n = 20_000;
        let (lo, hi) = (mu - 8.0 * sigma, mu + 8.0 * sigma);
        let h = (hi - lo) / n as f64;
        let integral: f64 = (0..n)
            .map(|i| d.log_prob(&Tensor::vector(vec![lo + (i as f64 + 0.5) * h])).unwrap().exp() * h)
            .sum();
        assert!((integral - 1.0).abs() < 1e-6, "{integral}");
    }

    #[test]
    fn log_prob_is_stationary_at_the_mean() {
        let x = Tensor::vector(vec![0.4, -1.1]);
        let std = Tensor::vector(vec![0.3, 1.7]);
        let report = gradcheck("log_prob wrt mean", std::slice::from_ref(&x), |tape, v| {
            let s = tape.constant(std.clone());
            let xv = tape.constant(x.clone());
            GaussianVars { mean: v[0], std: s }.log_prob(tape, xv)
        })
        .unwrap();
        assert!(report.passed());
        let mut tape = Tape::new();
        let m = tape.leaf(x.clone());
        let s = tape.constant(std);
        let xv = tape.constant(x);
        let lp = GaussianVars { mean: m, std: s }.log_prob(&mut tape, xv).unwrap();
        let grads = tape.backward(lp).unwrap();
        assert!(grads.get(m).unwrap().data().iter().all(|&d| d.abs() < 1e-15));
    }

    #[test]
    fn tape_ops_pass_gradcheck() {
        let params = vec![
            Tensor::vector(vec![0.2, -0.4, 1.0]),
            Tensor::vector(vec![0.1, 0.3, -0.6]),
            Tensor::vector(vec![-0.5, 0.8, 0.05]),
            Tensor::vector(vec![0.7, -0.2, 0.4]),
        ];
        let eps = Tensor::vector(vec![0.3, -1.2, 0.9]);
        let report = gradcheck("gaussian", &params, |tape, v| {
            let p = GaussianVars::from_raw(tape, v[0], v[1])?;
            let q = GaussianVars::from_raw(tape, v[2], v[3])?;
            let e = tape.constant(eps.clone());
            let z = p.sample(tape, e)?;
            let lp = q.log_prob(tape, z)?;
            let k = p.kl(tape, q)?;
            tape.sub(k, lp)
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    fn arb_gaussian(d: usize) -> impl Strategy<Value = DiagonalGaussian> {
        (
            proptest::collection::vec(-3.0f64..3.0, d),
            proptest::collection::vec(0.05f64..3.0, d),
        )
            .prop_map(|(m, s)| DiagonalGaussian::new(Tensor::vector(m), Tensor::vector(s)).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn kl_is_nonnegative((p, q) in (1usize..6).prop_flat_map(|d| (arb_gaussian(d), arb_gaussian(d)))) {
            let k = kl(&p, &q).unwrap();
            prop_assert!(k >= -1e-12);
            prop_assert!((k - tape_kl(&p, &q)).abs() < 1e-9 * (1.0 + k.abs()));
            if p != q {
                prop_assert!(k > 0.0);
            }
            prop_assert!(kl(&p, &p).unwrap().abs() <= 1e-12);
        }

        #[test]
        fn sample_is_affine_in_eps(
            p in arb_gaussian(3),
            e1 in proptest::collection::vec(-3.0f64..3.0, 3),
            e2 in proptest::collection::vec(-3.0f64..3.0, 3),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let mix: Vec<f64> = e1.iter().zip(&e2).map(|(x, y)| a * x + b * y).collect();
            let lhs = p.sample(&Tensor::vector(mix)).unwrap();
            let s1 = p.sample(&Tensor::vector(e1)).unwrap();
            let s2 = p.sample(&Tensor::vector(e2)).unwrap();
            for i in 0..3 {
                let rhs = a * s1.data()[i] + b * s2.data()[i] - (a + b - 1.0) * p.mean.data()[i];
                prop_assert!((lhs.data()[i] - rhs).abs() < 1e-12);
            }
        }
    }
}
