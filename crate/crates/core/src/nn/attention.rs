use rand::Rng;

use super::init::glorot_uniform;
use super::{ParamBinder, Parameterized};
use crate::autodiff::{Tape, Var};
use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

/// Single-head scaled dot-product cross-attention with learned projections.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHead {
    /// `[d_key_in × d_att]`
    pub query_proj: Tensor,
    /// `[d_key_in × d_att]`
    pub key_proj: Tensor,
    /// `[d_value_in × d_att]`
    pub value_proj: Tensor,
}

impl AttentionHead {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, key_input: usize, value_input: usize, att_dim: usize) -> Self {
        Self {
            query_proj: glorot_uniform(rng, key_input, att_dim),
            key_proj: glorot_uniform(rng, key_input, att_dim),
            value_proj: glorot_uniform(rng, value_input, att_dim),
        }
    }

    pub fn att_dim(&self) -> usize {
        self.query_proj.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape, binder: &mut ParamBinder) -> AttentionVars {
        AttentionVars {
            query_proj: binder.bind(tape, &self.query_proj),
            key_proj: binder.bind(tape, &self.key_proj),
            value_proj: binder.bind(tape, &self.value_proj),
        }
    }
}

impl Parameterized for AttentionHead {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("query_proj".into(), &self.query_proj),
            ("key_proj".into(), &self.key_proj),
            ("value_proj".into(), &self.value_proj),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.query_proj, &mut self.key_proj, &mut self.value_proj]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub query_proj: Var,
    pub key_proj: Var,
    pub value_proj: Var,
}

impl AttentionVars {
    /// Attention weights `[T×C]`: row-wise softmax of `Q·Kᵀ/√d_att`.
    pub fn weights(&self, tape: &mut Tape, queries: Var, keys: Var) -> Result<Var> {
        let (qs, ks) = (tape.shape(queries), tape.shape(keys));
        if ks.len() != 2 || ks[0] == 0 {
            return Err(contract("attention needs at least one context"));
        }
        if qs.len() != 2 || qs[1] != ks[1] {
            return Err(Error::Dimension {
                op: "attention",
                lhs: qs.to_vec(),
                rhs: ks.to_vec(),
            });
        }
        let q = tape.matmul(queries, self.query_proj)?;
        let k = tape.matmul(keys, self.key_proj)?;
        let att_dim = tape.shape(q)[1];
        let kt = tape.transpose(k)?;
        let logits = tape.matmul(q, kt)?;
        let scaled = tape.scale(logits, 1.0 / (att_dim as f64).sqrt());
        tape.softmax_last(scaled)
    }

    /// `queries: [T×d_in]`, `keys: [C×d_in]`, `values: [C×d_v]` → `[T×d_att]`.
    pub fn forward(&self, tape: &mut Tape, queries: Var, keys: Var, values: Var) -> Result<Var> {
        if tape.shape(values).first() != tape.shape(keys).first() {
            return Err(Error::Dimension {
                op: "attention",
                lhs: tape.shape(keys).to_vec(),
                rhs: tape.shape(values).to_vec(),
            });
        }
        let w = self.weights(tape, queries, keys)?;
        let v = tape.matmul(values, self.value_proj)?;
        tape.matmul(w, v)
    }
}
