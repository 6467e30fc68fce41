use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{sample_split, Episode, Normalizer};
use crate::error::{contract, Error, Result};
use crate::model::NpFamilyModel;
use crate::nn::{AdamConfig, AdamState, Parameterized};
use crate::tensor::Tensor;

use super::bundle::ModelBundle;
use super::config::TrainConfig;

/// Batch-averaged loss terms of one optimizer step, measured before the
/// update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub recon_nll: f64,
    pub kl: f64,
}

pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub trace: Vec<TraceRow>,
}

pub const TRACE_HEADER: &str = "step,loss,recon_nll,kl";

/// The untrained bundle and the normalized training episodes that
/// [`train_on`] starts from.
pub fn init_bundle(config: &TrainConfig, train: &[Episode]) -> Result<(ModelBundle, Vec<Episode>)> {
    config.validate()?;
    let first = train.first().ok_or_else(|| contract("no training episodes"))?;
    if train.len() < config.batch {
        return Err(contract(format!(
            "batch of {} episodes needs at least that many training episodes, got {}",
            config.batch,
            train.len()
        )));
    }
    let (d_x, d_y, window) = (first.input_dim(), first.output_dim(), first.window_len());
    if let Some(e) = train
        .iter()
        .find(|e| e.input_dim() != d_x || e.output_dim() != d_y || e.window_len() != window)
    {
        return Err(contract(format!("episode {} does not match the shape of the first episode", e.episode_id)));
    }
    let normalizer = if config.normalize {
        Normalizer::fit(train)?
    } else {
        Normalizer::identity(d_x, d_y)
    };
    let normalized = train.iter().map(|e| normalizer.apply(e)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = NpFamilyModel::new(config.kind, config.sizes.dims(d_x, d_y, window), &mut rng)?;
    Ok((ModelBundle { model, normalizer }, normalized))
}

/// Generates the configured data, then trains on all of it.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    train_on(config, &config.data.episodes()?)
}

/// Minibatch training: each step draws `batch` distinct episodes, one split
/// and one latent noise vector per episode, averages the loss gradients and
/// applies one Adam update.
pub fn train_on(config: &TrainConfig, train: &[Episode]) -> Result<TrainOutcome> {
    let (mut bundle, episodes) = init_bundle(config, train)?;
    let model = &mut bundle.model;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        model.params().into_iter().map(|(_, t)| t),
    );
    let z_dim = model.dims.z_dim;
    let scale = 1.0 / config.batch as f64;
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut grads: Vec<Tensor> = model.params().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        let mut row = TraceRow {
            step,
            loss: 0.0,
            recon_nll: 0.0,
            kl: 0.0,
        };
        for i in index::sample(&mut rng, episodes.len(), config.batch) {
            let ep = &episodes[i];
            let split = sample_split(ep.len(), config.split_mode, &mut rng)?;
            let eps = Tensor::vector((0..z_dim).map(|_| rng.sample(StandardNormal)).collect());
            let (terms, g) = model.loss_and_grads(ep, &split, &eps)?;
            if !terms.loss.is_finite() {
                return Err(Error::NonFiniteLoss { step, value: terms.loss });
            }
            row.loss += terms.loss * scale;
            row.recon_nll += terms.recon_nll * scale;
            row.kl += terms.kl * scale;
            for (acc, g) in grads.iter_mut().zip(&g) {
                acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, v)| *a += v * scale);
            }
        }
        adam.step(&mut model.params_mut(), &grads)?;
        trace.push(row);
        if config.eval_interval > 0 && (step + 1) % config.eval_interval == 0 {
            let recent = &trace[trace.len() - config.eval_interval..];
            let mean = recent.iter().map(|r| r.loss).sum::<f64>() / recent.len() as f64;
            log::info!("step {}: mean loss {mean:.5} over the last {} steps", step + 1, recent.len());
        }
    }
    Ok(TrainOutcome { bundle, trace })
}

pub fn write_trace<W: Write>(w: W, trace: &[TraceRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_HEADER.split(','))
        .map_err(csv_io)?;
    for r in trace {
        out.write_record([r.step.to_string(), r.loss.to_string(), r.recon_nll.to_string(), r.kl.to_string()])
            .map_err(csv_io)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_trace(path: impl AsRef<Path>, trace: &[TraceRow]) -> Result<()> {
    write_trace(std::fs::File::create(path)?, trace)
}

pub(super) fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}
