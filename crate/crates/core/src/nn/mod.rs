//! Parameterized building blocks: MLP, LSTM cell, cross-attention and Adam.
//!
//! Blocks own plain [`Tensor`] parameters. A forward pass first *binds* a
//! block onto a [`Tape`], producing a lightweight `*Vars` view whose leaves are
//! recorded by a [`ParamBinder`] in declaration order; that order is the one
//! [`Parameterized::params`] reports, so gradients line up with parameters.

mod adam;
mod attention;
pub mod init;
mod linear;
mod lstm;
pub mod serialize;

pub use adam::{AdamConfig, AdamState};
pub use attention::{AttentionHead, AttentionVars};
pub use linear::{Linear, LinearVars, Mlp, MlpVars};
pub use lstm::{LstmCell, LstmState, LstmVars};

use crate::autodiff::{Tape, Var};
use crate::tensor::Tensor;

/// Places parameters on a tape and remembers their leaves.
pub struct ParamBinder {
    mode: BindMode,
    leaves: Vec<Var>,
}

enum BindMode {
    Trainable,
    Frozen,
    Replay(std::vec::IntoIter<Var>),
}

impl ParamBinder {
    /// Parameters become differentiable leaves.
    pub fn trainable() -> Self {
        Self {
            mode: BindMode::Trainable,
            leaves: Vec::new(),
        }
    }

    /// Parameters become constants (inference only).
    pub fn frozen() -> Self {
        Self {
            mode: BindMode::Frozen,
            leaves: Vec::new(),
        }
    }

    /// Hands out already-placed vars, one per parameter in declaration
    /// order, instead of creating nodes.
    pub fn replay(vars: Vec<Var>) -> Self {
        Self {
            mode: BindMode::Replay(vars.into_iter()),
            leaves: Vec::new(),
        }
    }

    pub fn bind(&mut self, tape: &mut Tape, param: &Tensor) -> Var {
        let v = match &mut self.mode {
            BindMode::Trainable => tape.leaf(param.clone()),
            BindMode::Frozen => tape.constant(param.clone()),
            BindMode::Replay(vars) => vars.next().expect("replay binder ran out of vars"),
        };
        self.leaves.push(v);
        v
    }

    pub fn leaves(&self) -> &[Var] {
        &self.leaves
    }

    pub fn into_leaves(self) -> Vec<Var> {
        self.leaves
    }
}

/// Named parameter traversal in declaration order.
pub trait Parameterized {
    fn params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }
}
