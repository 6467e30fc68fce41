use rand::Rng;

use super::init::glorot_uniform;
use super::{ParamBinder, Parameterized};
use crate::autodiff::{Tape, UnaryKind, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// LSTM cell with gate blocks ordered (input, forget, cell, output).
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    /// `[in × 4H]`
    pub input_weights: Tensor,
    /// `[H × 4H]`
    pub hidden_weights: Tensor,
    /// `[4H]`
    pub bias: Tensor,
    pub hidden_size: usize,
}

impl LstmCell {
    /// Glorot-uniform weights, zero bias except the forget gate (1).
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input: usize, hidden: usize) -> Self {
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        Self {
            input_weights: glorot_uniform(rng, input, 4 * hidden),
            hidden_weights: glorot_uniform(rng, hidden, 4 * hidden),
            bias,
            hidden_size: hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_weights.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape, binder: &mut ParamBinder) -> LstmVars {
        LstmVars {
            input_weights: binder.bind(tape, &self.input_weights),
            hidden_weights: binder.bind(tape, &self.hidden_weights),
            bias: binder.bind(tape, &self.bias),
            hidden_size: self.hidden_size,
        }
    }
}

impl Parameterized for LstmCell {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("input_weights".into(), &self.input_weights),
            ("hidden_weights".into(), &self.hidden_weights),
            ("bias".into(), &self.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.input_weights, &mut self.hidden_weights, &mut self.bias]
    }
}

/// Hidden and cell state, each `[B×H]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub input_weights: Var,
    pub hidden_weights: Var,
    pub bias: Var,
    pub hidden_size: usize,
}

impl LstmVars {
    /// One recurrence step on `x: [B×in]`. `state = None` is the zero state,
    /// for which the hidden-to-hidden product and forget path vanish and are
    /// skipped.
    pub fn step(&self, tape: &mut Tape, x: Var, state: Option<LstmState>) -> Result<LstmState> {
        let hs = self.hidden_size;
        let xw = tape.matmul(x, self.input_weights)?;
        let pre = match state {
            Some(s) => {
                if tape.shape(s.h) != [tape.shape(x)[0], hs] || tape.shape(s.c) != tape.shape(s.h) {
                    return Err(Error::Dimension {
                        op: "lstm_step",
                        lhs: tape.shape(x).to_vec(),
                        rhs: tape.shape(s.h).to_vec(),
                    });
                }
                let hw = tape.matmul(s.h, self.hidden_weights)?;
                tape.add(xw, hw)?
            }
            None => xw,
        };
        let gates = tape.add(pre, self.bias)?;

        let i_pre = tape.slice_last(gates, 0, hs)?;
        let input_gate = tape.unary(UnaryKind::Sigmoid, i_pre)?;
        let g_pre = tape.slice_last(gates, 2 * hs, hs)?;
        let candidate = tape.unary(UnaryKind::Tanh, g_pre)?;
        let o_pre = tape.slice_last(gates, 3 * hs, hs)?;
        let output_gate = tape.unary(UnaryKind::Sigmoid, o_pre)?;

        let written = tape.mul(input_gate, candidate)?;
        let c = match state {
            Some(s) => {
                let f_pre = tape.slice_last(gates, hs, hs)?;
                let forget_gate = tape.unary(UnaryKind::Sigmoid, f_pre)?;
                let kept = tape.mul(forget_gate, s.c)?;
                tape.add(kept, written)?
            }
            None => written,
        };
        let squashed = tape.unary(UnaryKind::Tanh, c)?;
        let h = tape.mul(output_gate, squashed)?;
        Ok(LstmState { h, c })
    }

    /// Explicit-state step; zero tensors are passed through the full recurrence.
    pub fn step_full(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> Result<LstmState> {
        self.step(tape, x, Some(LstmState { h, c }))
    }
}
