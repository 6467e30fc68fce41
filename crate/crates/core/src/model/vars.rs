use crate::autodiff::{ReduceKind, Tape, UnaryKind, Var};
use crate::data::{CtSplit, Episode};
use crate::error::{contract, Error, Result};
use crate::gaussian::{DiagonalGaussian, GaussianVars};
use crate::nn::{AttentionVars, LstmVars, MlpVars};
use crate::tensor::Tensor;

use super::{LossTerms, ModelDims, ModelKind};

/// A model bound onto a tape.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub window_encoder: Option<LstmVars>,
    pub pair_encoder: Option<MlpVars>,
    pub latent_head: Option<MlpVars>,
    pub attention: Option<AttentionVars>,
    pub decoder: MlpVars,
}

/// Scalar loss nodes: total, reconstruction part and KL part.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub loss: Var,
    pub recon_nll: Var,
    pub kl: Var,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossTerms {
        LossTerms {
            loss: tape.value(self.loss).item(),
            recon_nll: tape.value(self.recon_nll).item(),
            kl: tape.value(self.kl).item(),
        }
    }
}

impl ModelVars {
    fn require<'a, T>(&self, part: &'a Option<T>, what: &str) -> Result<&'a T> {
        part.as_ref()
            .ok_or_else(|| contract(format!("{} model has no {what}", self.kind)))
    }

    /// Runs the LSTM over every window of `windows: [n × L × d_x]` from the
    /// zero state and returns the final hidden states `[n × H]`.
    pub fn encode_windows(&self, tape: &mut Tape, windows: &Tensor) -> Result<Var> {
        let lstm = *self.require(&self.window_encoder, "window encoder")?;
        let s = windows.shape();
        if s.len() != 3 || s[2] != self.dims.input_dim {
            return Err(Error::Dimension {
                op: "rnn_encode_windows",
                lhs: vec![self.dims.window, self.dims.input_dim],
                rhs: s.to_vec(),
            });
        }
        let (n, l, d) = (s[0], s[1], s[2]);
        let mut state = None;
        for i in 0..l {
            let mut step = Vec::with_capacity(n * d);
            for w in 0..n {
                let base = (w * l + i) * d;
                step.extend_from_slice(&windows.data()[base..base + d]);
            }
            let x = tape.constant(Tensor::new(&[n, d], step)?);
            state = Some(lstm.step(tape, x, state)?);
        }
        Ok(state.expect("windows have at least one step").h)
    }

    /// Per-step representations `[k × d_h]` of the episode at `indices`: raw
    /// current-step features, or LSTM window encodings.
    pub fn encode_inputs(&self, tape: &mut Tape, ep: &Episode, indices: &[usize]) -> Result<Var> {
        if indices.is_empty() {
            return Err(contract("cannot encode an empty index set"));
        }
        if self.kind.has_window_encoder() {
            self.encode_windows(tape, &ep.windows_at(indices))
        } else {
            Ok(tape.constant(ep.current_features(indices)))
        }
    }

    pub fn encode_pairs(&self, tape: &mut Tape, inputs: Var, ys: Var) -> Result<Var> {
        let enc = self.require(&self.pair_encoder, "pair encoder")?;
        let (hs, ys_shape) = (tape.shape(inputs), tape.shape(ys));
        if hs.len() != 2 || ys_shape.len() != 2 || hs[0] != ys_shape[0] {
            return Err(Error::Dimension {
                op: "encode_pairs",
                lhs: hs.to_vec(),
                rhs: ys_shape.to_vec(),
            });
        }
        let x = tape.concat_last(&[inputs, ys])?;
        enc.forward(tape, x)
    }

    /// `q(z | ·)` from the mean of `pairs` rows; `None` is the prior.
    pub fn latent(&self, tape: &mut Tape, pairs: Option<Var>) -> Result<GaussianVars> {
        let head = self.require(&self.latent_head, "latent head")?;
        let Some(pairs) = pairs else {
            return Ok(GaussianVars::constant(tape, &DiagonalGaussian::standard(self.dims.z_dim)));
        };
        let summary = tape.reduce(ReduceKind::Mean, pairs, 0)?;
        let row = tape.repeat_rows(summary, 1)?;
        let out = head.forward(tape, row)?;
        let out = tape.reduce(ReduceKind::Sum, out, 0)?;
        let z = self.dims.z_dim;
        let mean = tape.slice_last(out, 0, z)?;
        let raw = tape.slice_last(out, z, z)?;
        GaussianVars::from_raw(tape, mean, raw)
    }

    /// Deterministic summary `r*` for every target, `[T × summary]`.
    /// `context` holds `(inputs, pair encodings)`; without contexts the
    /// summary is zero.
    pub fn deterministic(&self, tape: &mut Tape, context: Option<(Var, Var)>, targets: Var) -> Result<Var> {
        let t = tape.shape(targets)[0];
        let Some((hc, pc)) = context else {
            return Ok(tape.constant(Tensor::zeros(&[t, self.dims.summary_dim(self.kind)])));
        };
        if self.kind.has_attention() {
            let att = self.require(&self.attention, "attention")?;
            att.forward(tape, targets, hc, pc)
        } else {
            let r = tape.reduce(ReduceKind::Mean, pc, 0)?;
            tape.repeat_rows(r, t)
        }
    }

    /// Decoder distribution `[T × d_y]` from `z: [z_dim]`, `r: [T × summary]`
    /// and `inputs: [T × d_h]`.
    pub fn decode(&self, tape: &mut Tape, z: Var, r: Var, inputs: Var) -> Result<GaussianVars> {
        let t = tape.shape(inputs)[0];
        if tape.shape(z) != [self.dims.z_dim] {
            return Err(Error::Dimension {
                op: "decode",
                lhs: vec![self.dims.z_dim],
                rhs: tape.shape(z).to_vec(),
            });
        }
        if tape.shape(r)[0] != t {
            return Err(Error::Dimension {
                op: "decode",
                lhs: tape.shape(r).to_vec(),
                rhs: tape.shape(inputs).to_vec(),
            });
        }
        let zs = tape.repeat_rows(z, t)?;
        let x = tape.concat_last(&[zs, r, inputs])?;
        let out = self.decoder.forward(tape, x)?;
        let d = self.dims.output_dim;
        let mean = tape.slice_last(out, 0, d)?;
        let raw = tape.slice_last(out, d, d)?;
        GaussianVars::from_raw(tape, mean, raw)
    }

    /// Negated ELBO with a one-sample estimate of the expected
    /// log-likelihood, normalized per target point.
    pub fn elbo(&self, tape: &mut Tape, ep: &Episode, split: &CtSplit, eps: &Tensor) -> Result<LossVars> {
        if !self.kind.is_latent() {
            return Err(contract(format!("{} is not trained on the ELBO", self.kind)));
        }
        split.validate(ep.len())?;
        if eps.shape() != [self.dims.z_dim] {
            return Err(Error::Dimension {
                op: "elbo eps",
                lhs: vec![self.dims.z_dim],
                rhs: eps.shape().to_vec(),
            });
        }
        let targets = &split.target;
        let ht = self.encode_inputs(tape, ep, targets)?;
        let yt = tape.constant(ep.targets_at(targets));
        let pt = self.encode_pairs(tape, ht, yt)?;

        // Both posteriors go through the same row selection so that equal
        // index sets give bit-identical distributions.
        let all: Vec<usize> = (0..targets.len()).collect();
        let pt_all = tape.select_rows(pt, &all)?;
        let q_target = self.latent(tape, Some(pt_all))?;
        let positions: Vec<usize> = split
            .context
            .iter()
            .map(|c| targets.binary_search(c).expect("validated split"))
            .collect();
        let context = if positions.is_empty() {
            None
        } else {
            Some((tape.select_rows(ht, &positions)?, tape.select_rows(pt, &positions)?))
        };
        let q_context = self.latent(tape, context.map(|(_, p)| p))?;

        let eps = tape.constant(eps.clone());
        let z = q_target.sample(tape, eps)?;
        let r = self.deterministic(tape, context, ht)?;
        let decoded = self.decode(tape, z, r, ht)?;
        let log_lik = decoded.log_prob(tape, yt)?;
        let recon_nll = tape.scale(log_lik, -1.0 / targets.len() as f64);
        let kl = q_target.kl(tape, q_context)?;
        let loss = tape.add(recon_nll, kl)?;
        Ok(LossVars { loss, recon_nll, kl })
    }

    /// Mean squared error per target point of the point predictor.
    pub fn point_loss(&self, tape: &mut Tape, ep: &Episode, targets: &[usize]) -> Result<LossVars> {
        if self.kind.is_latent() {
            return Err(contract(format!("{} is trained on the ELBO", self.kind)));
        }
        let ht = self.encode_inputs(tape, ep, targets)?;
        let pred = self.decoder.forward(tape, ht)?;
        let y = tape.constant(ep.targets_at(targets));
        let diff = tape.sub(pred, y)?;
        let sq = tape.unary(UnaryKind::Square, diff)?;
        let total = tape.sum_all(sq);
        let mse = tape.scale(total, 1.0 / targets.len() as f64);
        let kl = tape.constant(Tensor::scalar(0.0));
        Ok(LossVars {
            loss: mse,
            recon_nll: mse,
            kl,
        })
    }
}
