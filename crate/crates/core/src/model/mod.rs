//! The neural-process model ladder: NP, ANP, ARNP and the LSTM point
//! predictor baseline.
//!
//! Parameters live in [`NpFamilyModel`]. Every computation binds the model
//! onto a [`Tape`] as a [`ModelVars`] view, so the same code serves
//! training (trainable leaves), inference (constants) and gradient checks
//! (replayed leaves).

mod vars;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tape;
use crate::data::{CtSplit, Episode};
use crate::error::{contract, Error, Result};
use crate::gaussian::DiagonalGaussian;
use crate::nn::serialize::ParamFile;
use crate::nn::{AttentionHead, LstmCell, Mlp, ParamBinder, Parameterized};
use crate::tensor::Tensor;

pub use vars::{LossVars, ModelVars};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Np,
    Anp,
    Arnp,
    LstmPoint,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Np, ModelKind::Anp, ModelKind::Arnp, ModelKind::LstmPoint];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Np => "NP",
            ModelKind::Anp => "ANP",
            ModelKind::Arnp => "ARNP",
            ModelKind::LstmPoint => "LSTM_POINT",
        }
    }

    /// Byte stored in the model-file header.
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::Np => 0,
            ModelKind::Anp => 1,
            ModelKind::Arnp => 2,
            ModelKind::LstmPoint => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.tag() == tag)
            .ok_or_else(|| Error::Format(format!("unknown model kind tag {tag}")))
    }

    pub fn has_window_encoder(self) -> bool {
        matches!(self, ModelKind::Arnp | ModelKind::LstmPoint)
    }

    pub fn has_attention(self) -> bool {
        matches!(self, ModelKind::Anp | ModelKind::Arnp)
    }

    /// Whether the kind has a latent path and is trained on the ELBO.
    pub fn is_latent(self) -> bool {
        self != ModelKind::LstmPoint
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| contract(format!("unknown model kind `{s}` (expected NP, ANP, ARNP or LSTM_POINT)")))
    }
}

/// Layer sizes. Defaults follow a 128-wide representation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub input_dim: usize,
    pub output_dim: usize,
    pub window: usize,
    pub lstm_hidden: usize,
    pub pair_hidden: [usize; 2],
    pub repr_dim: usize,
    pub latent_hidden: usize,
    pub z_dim: usize,
    pub att_dim: usize,
    pub decoder_hidden: [usize; 2],
}

impl ModelDims {
    pub fn new(input_dim: usize, output_dim: usize, window: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            window,
            lstm_hidden: 64,
            pair_hidden: [32, 64],
            repr_dim: 128,
            latent_hidden: 128,
            z_dim: 64,
            att_dim: 128,
            decoder_hidden: [64, 64],
        }
    }

    /// Width of the per-step representation fed to the pair encoder,
    /// attention and decoder.
    pub fn encoded_dim(&self, kind: ModelKind) -> usize {
        if kind.has_window_encoder() {
            self.lstm_hidden
        } else {
            self.input_dim
        }
    }

    /// Width of the deterministic summary `r*`.
    pub fn summary_dim(&self, kind: ModelKind) -> usize {
        if kind.has_attention() {
            self.att_dim
        } else {
            self.repr_dim
        }
    }

    fn entries(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("input_dim", self.input_dim),
            ("output_dim", self.output_dim),
            ("window", self.window),
            ("lstm_hidden", self.lstm_hidden),
            ("pair_hidden0", self.pair_hidden[0]),
            ("pair_hidden1", self.pair_hidden[1]),
            ("repr_dim", self.repr_dim),
            ("latent_hidden", self.latent_hidden),
            ("z_dim", self.z_dim),
            ("att_dim", self.att_dim),
            ("decoder_hidden0", self.decoder_hidden[0]),
            ("decoder_hidden1", self.decoder_hidden[1]),
        ]
    }

    fn from_file(file: &ParamFile) -> Result<Self> {
        let get = |name: &str| -> Result<usize> {
            let v = file
                .dim(name)
                .ok_or_else(|| Error::Format(format!("model file lacks dimension `{name}`")))?;
            match usize::try_from(v) {
                Ok(v) if v > 0 && v <= 1 << 20 => Ok(v),
                _ => Err(Error::Format(format!("dimension `{name}` = {v} is out of range"))),
            }
        };
        Ok(Self {
            input_dim: get("input_dim")?,
            output_dim: get("output_dim")?,
            window: get("window")?,
            lstm_hidden: get("lstm_hidden")?,
            pair_hidden: [get("pair_hidden0")?, get("pair_hidden1")?],
            repr_dim: get("repr_dim")?,
            latent_hidden: get("latent_hidden")?,
            z_dim: get("z_dim")?,
            att_dim: get("att_dim")?,
            decoder_hidden: [get("decoder_hidden0")?, get("decoder_hidden1")?],
        })
    }

    fn validate(&self) -> Result<()> {
        if let Some((name, _)) = self.entries().into_iter().find(|(_, v)| *v == 0) {
            return Err(contract(format!("model dimension `{name}` must be positive")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NpFamilyModel {
    pub kind: ModelKind,
    pub dims: ModelDims,
    /// Recurrent window encoder (ARNP, LSTM_POINT).
    pub window_encoder: Option<LstmCell>,
    /// Maps `(input ‖ y)` to a representation (all latent kinds).
    pub pair_encoder: Option<Mlp>,
    /// Maps an aggregated representation to `(μ_z, σ_z raw)`.
    pub latent_head: Option<Mlp>,
    /// Cross-attention from targets to contexts (ANP, ARNP).
    pub attention: Option<AttentionHead>,
    /// Maps `(z ‖ r* ‖ input)` to `(μ_y, σ_y raw)`; for LSTM_POINT a single
    /// affine layer from the hidden state to the point prediction.
    pub decoder: Mlp,
}

/// Values of the negated ELBO and its two parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub loss: f64,
    pub recon_nll: f64,
    pub kl: f64,
}

/// Per-target predictive moments, each `[T × d_y]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub mean: Tensor,
    pub std: Tensor,
}

/// Fixed standard deviation reported by the point predictor.
pub const POINT_STD: f64 = 1.0;

impl NpFamilyModel {
    pub fn new<R: Rng + ?Sized>(kind: ModelKind, dims: ModelDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let d_h = dims.encoded_dim(kind);
        let window_encoder = kind
            .has_window_encoder()
            .then(|| LstmCell::new(rng, dims.input_dim, dims.lstm_hidden));
        let (pair_encoder, latent_head) = if kind.is_latent() {
            let pair = Mlp::new(
                rng,
                &[d_h + dims.output_dim, dims.pair_hidden[0], dims.pair_hidden[1], dims.repr_dim],
            );
            let head = Mlp::new(rng, &[dims.repr_dim, dims.latent_hidden, 2 * dims.z_dim]);
            (Some(pair), Some(head))
        } else {
            (None, None)
        };
        let attention = kind
            .has_attention()
            .then(|| AttentionHead::new(rng, d_h, dims.repr_dim, dims.att_dim));
        let decoder = if kind.is_latent() {
            Mlp::new(
                rng,
                &[
                    dims.z_dim + dims.summary_dim(kind) + d_h,
                    dims.decoder_hidden[0],
                    dims.decoder_hidden[1],
                    2 * dims.output_dim,
                ],
            )
        } else {
            Mlp::new(rng, &[d_h, dims.output_dim])
        };
        Ok(Self {
            kind,
            dims,
            window_encoder,
            pair_encoder,
            latent_head,
            attention,
            decoder,
        })
    }

    /// Places every parameter on `tape` through `binder`, in the order of
    /// [`Parameterized::params`].
    pub fn bind(&self, tape: &mut Tape, binder: &mut ParamBinder) -> ModelVars {
        ModelVars {
            kind: self.kind,
            dims: self.dims.clone(),
            window_encoder: self.window_encoder.as_ref().map(|m| m.bind(tape, binder)),
            pair_encoder: self.pair_encoder.as_ref().map(|m| m.bind(tape, binder)),
            latent_head: self.latent_head.as_ref().map(|m| m.bind(tape, binder)),
            attention: self.attention.as_ref().map(|m| m.bind(tape, binder)),
            decoder: self.decoder.bind(tape, binder),
        }
    }

    fn frozen(&self) -> (Tape, ModelVars) {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, &mut ParamBinder::frozen());
        (tape, vars)
    }

    /// Rejects episodes whose window, input or output sizes differ from the
    /// model's.
    pub fn check_episode(&self, ep: &Episode) -> Result<()> {
        let d = &self.dims;
        if ep.input_dim() != d.input_dim || ep.output_dim() != d.output_dim || ep.window_len() != d.window {
            return Err(contract(format!(
                "{} model expects window {}, {} input and {} output features; episode {} has {}, {} and {}",
                self.kind,
                d.window,
                d.input_dim,
                d.output_dim,
                ep.episode_id,
                ep.window_len(),
                ep.input_dim(),
                ep.output_dim()
            )));
        }
        Ok(())
    }

    /// Final LSTM hidden state of each window, `[n × H]`.
    pub fn rnn_encode_windows(&self, windows: &Tensor) -> Result<Tensor> {
        let (mut tape, vars) = self.frozen();
        let h = vars.encode_windows(&mut tape, windows)?;
        Ok(tape.value(h).clone())
    }

    /// Pair encoder applied row-wise to `inputs ‖ ys`, `[m × repr]`.
    pub fn encode_pairs(&self, inputs: &Tensor, ys: &Tensor) -> Result<Tensor> {
        let (mut tape, vars) = self.frozen();
        let (h, y) = (tape.constant(inputs.clone()), tape.constant(ys.clone()));
        let p = vars.encode_pairs(&mut tape, h, y)?;
        Ok(tape.value(p).clone())
    }

    /// Latent distribution from mean-aggregated encodings; `None` (no rows)
    /// gives the prior `N(0, I)`.
    pub fn latent_from_summary(&self, encoded_pairs: Option<&Tensor>) -> Result<DiagonalGaussian> {
        let (mut tape, vars) = self.frozen();
        let p = encoded_pairs.map(|t| tape.constant(t.clone()));
        let q = vars.latent(&mut tape, p)?;
        Ok(q.to_value(&tape))
    }

    /// Per-target deterministic summary by cross-attention, `[T × att]`.
    pub fn cross_attention_summary(
        &self,
        context_inputs: &Tensor,
        context_pair_enc: &Tensor,
        target_inputs: &Tensor,
    ) -> Result<Tensor> {
        if !self.kind.has_attention() {
            return Err(contract(format!("{} has no attention", self.kind)));
        }
        let (mut tape, vars) = self.frozen();
        let hc = tape.constant(context_inputs.clone());
        let pc = tape.constant(context_pair_enc.clone());
        let ht = tape.constant(target_inputs.clone());
        let r = vars.deterministic(&mut tape, Some((hc, pc)), ht)?;
        Ok(tape.value(r).clone())
    }

    /// Output distribution for one target from `z [z_dim]`,
    /// `r_star [summary]` and `target_input [d_h]`.
    pub fn decode(&self, z: &Tensor, r_star: &Tensor, target_input: &Tensor) -> Result<DiagonalGaussian> {
        let (mut tape, vars) = self.frozen();
        let row = |tape: &mut Tape, t: &Tensor| -> Result<_> {
            let c = tape.constant(t.clone());
            tape.repeat_rows(c, 1)
        };
        let z = tape.constant(z.clone());
        let r = row(&mut tape, r_star)?;
        let h = row(&mut tape, target_input)?;
        let g = vars.decode(&mut tape, z, r, h)?;
        let g = g.to_value(&tape);
        DiagonalGaussian::new(
            Tensor::vector(g.mean.into_data()),
            Tensor::vector(g.std.into_data()),
        )
    }

    /// Negated ELBO of one episode with the reparameterization noise `eps`.
    pub fn elbo(&self, ep: &Episode, split: &CtSplit, eps: &Tensor) -> Result<LossTerms> {
        self.check_episode(ep)?;
        let (mut tape, vars) = self.frozen();
        let l = vars.elbo(&mut tape, ep, split, eps)?;
        Ok(l.values(&tape))
    }

    /// Training loss and its gradient for every parameter, aligned with
    /// [`Parameterized::params`]. Latent kinds use the negated ELBO; the
    /// point predictor uses the mean squared error over the split targets.
    pub fn loss_and_grads(&self, ep: &Episode, split: &CtSplit, eps: &Tensor) -> Result<(LossTerms, Vec<Tensor>)> {
        self.check_episode(ep)?;
        let mut tape = Tape::new();
        let mut binder = ParamBinder::trainable();
        let vars = self.bind(&mut tape, &mut binder);
        let l = if self.kind.is_latent() {
            vars.elbo(&mut tape, ep, split, eps)?
        } else {
            vars.point_loss(&mut tape, ep, &split.target)?
        };
        let grads = tape.backward(l.loss)?;
        let leaves = binder.into_leaves();
        let out = leaves
            .iter()
            .map(|&v| grads.get_or_zeros(v, tape.shape(v)))
            .collect();
        Ok((l.values(&tape), out))
    }

    /// Predictive moments at `targets` given `contexts`, from `n_samples`
    /// latent draws using noise from `rng`.
    pub fn predict<R: Rng + ?Sized>(
        &self,
        ep: &Episode,
        contexts: &[usize],
        targets: &[usize],
        n_samples: usize,
        rng: &mut R,
    ) -> Result<Prediction> {
        if n_samples == 0 {
            return Err(contract("n_samples must be at least 1"));
        }
        let eps: Vec<Tensor> = (0..n_samples)
            .map(|_| Tensor::vector((0..self.dims.z_dim).map(|_| rng.sample(StandardNormal)).collect()))
            .collect();
        self.predict_with_eps(ep, contexts, targets, &eps)
    }

    /// [`predict`](Self::predict) with explicit noise, one `[z_dim]` tensor
    /// per mixture component. The result is the exact moment match of the
    /// equal-weight mixture of decoder Gaussians.
    pub fn predict_with_eps(&self, ep: &Episode, contexts: &[usize], targets: &[usize], eps: &[Tensor]) -> Result<Prediction> {
        self.check_episode(ep)?;
        if targets.is_empty() {
            return Err(contract("prediction needs at least one target"));
        }
        if eps.is_empty() {
            return Err(contract("prediction needs at least one latent sample"));
        }
        let n = ep.len();
        if contexts.iter().chain(targets).any(|&i| i >= n) {
            return Err(contract(format!("index out of range for episode of {n} steps")));
        }
        let (mut tape, vars) = self.frozen();
        let ht = vars.encode_inputs(&mut tape, ep, targets)?;
        if !self.kind.is_latent() {
            let mean = vars.decoder.forward(&mut tape, ht)?;
            let mean = tape.value(mean).clone();
            let std = Tensor::filled(mean.shape(), POINT_STD);
            return Ok(Prediction { mean, std });
        }
        let ctx = if contexts.is_empty() {
            None
        } else {
            let hc = vars.encode_inputs(&mut tape, ep, contexts)?;
            let yc = tape.constant(ep.targets_at(contexts));
            let pc = vars.encode_pairs(&mut tape, hc, yc)?;
            Some((hc, pc))
        };
        let q = vars.latent(&mut tape, ctx.map(|(_, p)| p))?;
        let r = vars.deterministic(&mut tape, ctx, ht)?;

        let mut means = Vec::with_capacity(eps.len());
        let mut vars_sum = vec![0.0; targets.len() * self.dims.output_dim];
        for e in eps {
            if e.shape() != [self.dims.z_dim] {
                return Err(Error::Dimension {
                    op: "predict eps",
                    lhs: vec![self.dims.z_dim],
                    rhs: e.shape().to_vec(),
                });
            }
            let e = tape.constant(e.clone());
            let z = q.sample(&mut tape, e)?;
            let g = vars.decode(&mut tape, z, r, ht)?;
            for (acc, s) in vars_sum.iter_mut().zip(tape.value(g.std).data()) {
                *acc += s * s;
            }
            means.push(tape.value(g.mean).clone());
        }
        let k = eps.len() as f64;
        let mut mean = vec![0.0; vars_sum.len()];
        for m in &means {
            for (acc, v) in mean.iter_mut().zip(m.data()) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= k);
        let mut var: Vec<f64> = vars_sum.iter().map(|v| v / k).collect();
        for m in &means {
            for ((acc, v), mu) in var.iter_mut().zip(m.data()).zip(&mean) {
                *acc += (v - mu) * (v - mu) / k;
            }
        }
        let shape = [targets.len(), self.dims.output_dim];
        Ok(Prediction {
            mean: Tensor::new(&shape, mean)?,
            std: Tensor::new(&shape, var.into_iter().map(f64::sqrt).collect())?,
        })
    }

    /// Serializes parameters plus `extra` named tensors.
    pub fn to_param_file(&self, extra: Vec<(String, Tensor)>) -> ParamFile {
        let mut params: Vec<(String, Tensor)> = self.params().into_iter().map(|(n, t)| (n, t.clone())).collect();
        params.extend(extra);
        ParamFile {
            kind: self.kind.tag(),
            dims: self.dims.entries().into_iter().map(|(n, v)| (n.to_string(), v as u64)).collect(),
            params,
        }
    }

    /// Rebuilds a model; tensors that are not model parameters are
    /// returned unchanged as extras.
    pub fn from_param_file(file: ParamFile) -> Result<(Self, Vec<(String, Tensor)>)> {
        let kind = ModelKind::from_tag(file.kind)?;
        let dims = ModelDims::from_file(&file)?;
        let mut model = Self::new(kind, dims, &mut ChaCha8Rng::seed_from_u64(0))?;
        let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
        let mut pool = file.params;
        for (name, slot) in names.iter().zip(model.params_mut()) {
            let pos = pool
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Format(format!("model file lacks parameter `{name}`")))?;
            let (_, t) = pool.remove(pos);
            if t.shape() != slot.shape() {
                return Err(Error::Format(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok((model, pool))
    }

    pub fn save(&self, path: impl AsRef<Path>, extra: Vec<(String, Tensor)>) -> Result<()> {
        std::fs::write(path, self.to_param_file(extra).to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Vec<(String, Tensor)>)> {
        let bytes = std::fs::read(path)?;
        Self::from_param_file(ParamFile::read_from(&mut bytes.as_slice())?)
    }
}

impl Parameterized for NpFamilyModel {
    fn params(&self) -> Vec<(String, &Tensor)> {
        fn prefixed<'a>(prefix: &str, p: Vec<(String, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
            p.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
        }
        let mut out = Vec::new();
        if let Some(m) = &self.window_encoder {
            out.extend(prefixed("window_encoder", m.params()));
        }
        if let Some(m) = &self.pair_encoder {
            out.extend(prefixed("pair_encoder", m.params()));
        }
        if let Some(m) = &self.latent_head {
            out.extend(prefixed("latent_head", m.params()));
        }
        if let Some(m) = &self.attention {
            out.extend(prefixed("attention", m.params()));
        }
        out.extend(prefixed("decoder", self.decoder.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        if let Some(m) = &mut self.window_encoder {
            out.extend(m.params_mut());
        }
        if let Some(m) = &mut self.pair_encoder {
            out.extend(m.params_mut());
        }
        if let Some(m) = &mut self.latent_head {
            out.extend(m.params_mut());
        }
        if let Some(m) = &mut self.attention {
            out.extend(m.params_mut());
        }
        out.extend(self.decoder.params_mut());
        out
    }
}

#[cfg(test)]
mod tests;
