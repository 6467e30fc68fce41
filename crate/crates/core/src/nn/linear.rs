use rand::Rng;

use super::init::glorot_uniform;
use super::{ParamBinder, Parameterized};
use crate::autodiff::{Tape, UnaryKind, Var};
use crate::error::{contract, Result};
use crate::tensor::Tensor;

/// Affine map `x·W + b` with `W: [in×out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input: usize, output: usize) -> Self {
        Self {
            weight: glorot_uniform(rng, input, output),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape, binder: &mut ParamBinder) -> LinearVars {
        LinearVars {
            weight: binder.bind(tape, &self.weight),
            bias: binder.bind(tape, &self.bias),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.weight)?;
        tape.add(xw, self.bias)
    }
}

/// Multilayer perceptron: ReLU after every layer except the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden..., out]`.
    pub fn new<R: Rng + ?Sized>(rng: &mut R, dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let layers = dims.windows(2).map(|w| Linear::new(rng, w[0], w[1])).collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn bind(&self, tape: &mut Tape, binder: &mut ParamBinder) -> MlpVars {
        MlpVars {
            layers: self.layers.iter().map(|l| l.bind(tape, binder)).collect(),
        }
    }
}

impl Parameterized for Mlp {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), &layer.weight));
            out.push((format!("layer{i}.bias"), &layer.bias));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct MlpVars {
    pub layers: Vec<LinearVars>,
}

impl MlpVars {
    /// Applies the MLP row-wise to `x: [B×in]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (last, hidden) = self
            .layers
            .split_last()
            .ok_or_else(|| contract("MLP without layers"))?;
        let mut h = x;
        for layer in hidden {
            let a = layer.forward(tape, h)?;
            h = tape.unary(UnaryKind::Relu, a)?;
        }
        last.forward(tape, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(mlp: &Mlp, x: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = mlp.bind(&mut tape, &mut ParamBinder::frozen());
        let x = tape.constant(x);
        let y = vars.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }

    #[test]
    fn zero_mlp_outputs_zero() {
        let mut mlp = Mlp::new(&mut ChaCha8Rng::seed_from_u64(0), &[3, 5, 2]);
        mlp.params_mut().into_iter().for_each(|t| t.data_mut().fill(0.0));
        let y = run(&mlp, Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 9.0, -7.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.0; 4]);
    }

    #[test]
    fn single_identity_layer_is_identity() {
        let mlp = Mlp {
            layers: vec![Linear {
                weight: Tensor::eye(3),
                bias: Tensor::zeros(&[3]),
            }],
        };
        let x = Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, -0.5, 9.0, -7.0]).unwrap();
        assert_eq!(run(&mlp, x.clone()).unwrap(), x);
    }

    #[test]
    fn input_dim_mismatch_is_an_error() {
        let mlp = Mlp::new(&mut ChaCha8Rng::seed_from_u64(0), &[3, 2]);
        assert!(matches!(
            run(&mlp, Tensor::zeros(&[1, 4])),
            Err(Error::Dimension { op: "matmul", .. })
        ));
    }

    #[test]
    fn binder_order_matches_params() {
        let mlp = Mlp::new(&mut ChaCha8Rng::seed_from_u64(1), &[4, 3, 3, 2]);
        let mut tape = Tape::new();
        let mut binder = ParamBinder::trainable();
        mlp.bind(&mut tape, &mut binder);
        let params = mlp.params();
        assert_eq!(binder.leaves().len(), params.len());
        for (v, (_, t)) in binder.leaves().iter().zip(params) {
            assert_eq!(tape.value(*v), t);
        }
    }
}
