use rand_chacha::ChaCha8Rng;

use crate::data::Episode;
use crate::error::{contract, Result};
use crate::model::{Prediction, POINT_STD};
use crate::tensor::Tensor;

/// Anything that produces per-target predictive moments, in data units, for
/// an episode given context indices.
pub trait Predictor {
    fn predict(
        &self,
        ep: &Episode,
        contexts: &[usize],
        targets: &[usize],
        n_samples: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Prediction>;
}

fn check_indices(ep: &Episode, contexts: &[usize], targets: &[usize]) -> Result<()> {
    if targets.is_empty() {
        return Err(contract("prediction needs at least one target"));
    }
    if let Some(&i) = contexts.iter().chain(targets).find(|&&i| i >= ep.len()) {
        return Err(contract(format!("index {i} out of range for episode of {} steps", ep.len())));
    }
    Ok(())
}

/// Returns the ground truth with unit standard deviation. A test hook for
/// the evaluation harness.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleStub;

impl Predictor for OracleStub {
    fn predict(&self, ep: &Episode, contexts: &[usize], targets: &[usize], _: usize, _: &mut ChaCha8Rng) -> Result<Prediction> {
        check_indices(ep, contexts, targets)?;
        let mean = ep.targets_at(targets);
        let std = Tensor::filled(mean.shape(), 1.0);
        Ok(Prediction { mean, std })
    }
}

/// Extrapolates the last observed per-step velocity of every output
/// coordinate. Context steps are reproduced exactly; a single context
/// extrapolates with zero velocity. Reports the fixed point-prediction std.
#[derive(Clone, Copy, Debug, Default)]
pub struct ConstantVelocity;

impl Predictor for ConstantVelocity {
    fn predict(&self, ep: &Episode, contexts: &[usize], targets: &[usize], _: usize, _: &mut ChaCha8Rng) -> Result<Prediction> {
        check_indices(ep, contexts, targets)?;
        let mut ctx = contexts.to_vec();
        ctx.sort_unstable();
        ctx.dedup();
        let &last = ctx.last().ok_or_else(|| contract("constant-velocity extrapolation needs a context"))?;
        let d = ep.output_dim();
        let y_last = ep.targets.row(last);
        let velocity: Vec<f64> = match ctx.len() {
            1 => vec![0.0; d],
            k => {
                let prev = ctx[k - 2];
                let y_prev = ep.targets.row(prev);
                let gap = (last - prev) as f64;
                y_last.iter().zip(y_prev).map(|(a, b)| (a - b) / gap).collect()
            }
        };
        let mut mean = Vec::with_capacity(targets.len() * d);
        for &t in targets {
            if ctx.binary_search(&t).is_ok() {
                mean.extend_from_slice(ep.targets.row(t));
            } else {
                let ahead = t as f64 - last as f64;
                mean.extend(y_last.iter().zip(&velocity).map(|(y, v)| y + v * ahead));
            }
        }
        let shape = [targets.len(), d];
        Ok(Prediction {
            mean: Tensor::new(&shape, mean)?,
            std: Tensor::filled(&shape, POINT_STD),
        })
    }
}
