use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};

use crate::data::Episode;
use crate::error::{contract, Result};
use crate::gaussian::HALF_LN_2PI;
use crate::model::Prediction;

use super::predictor::Predictor;
use super::train::csv_io;

/// Two-sided 90% standard normal quantile.
pub const Z_90: f64 = 1.644_853_626_951_472_2;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Leading seconds of each episode used as contexts.
    pub context_seconds: f64,
    /// Prediction horizons in seconds past the last context step.
    pub horizons: Vec<f64>,
    /// Latent samples per predictive mixture.
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            context_seconds: 2.0,
            horizons: vec![1.0, 2.0, 3.0, 4.0],
            n_samples: 16,
            seed: 0,
        }
    }
}

/// Lateral error statistics at one horizon, over the episodes long enough
/// to reach it. Errors are predicted mean minus truth of the first output
/// coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct HorizonStats {
    pub seconds: f64,
    /// Signed lateral error per contributing episode, in episode order.
    pub errors: Vec<f64>,
    /// Euclidean error over all output coordinates per contributing episode.
    pub distances: Vec<f64>,
    /// Episodes too short to reach this horizon.
    pub omitted: usize,
}

impl HorizonStats {
    pub fn count(&self) -> usize {
        self.errors.len()
    }

    /// Mean signed error; `None` when no episode reaches the horizon.
    pub fn mu(&self) -> Option<f64> {
        mean(&self.errors)
    }

    /// Population standard deviation of the signed error over episodes.
    pub fn sigma(&self) -> Option<f64> {
        let mu = self.mu()?;
        let var = self.errors.iter().map(|e| (e - mu) * (e - mu)).sum::<f64>() / self.errors.len() as f64;
        Some(var.sqrt())
    }

    /// Mean absolute signed error.
    pub fn mae(&self) -> Option<f64> {
        mean(&self.errors.iter().map(|e| e.abs()).collect::<Vec<_>>())
    }

    pub fn mean_distance(&self) -> Option<f64> {
        mean(&self.distances)
    }

    /// Report key prefix, e.g. `h1` for one second or `h0.5`.
    pub fn label(&self) -> String {
        format!("h{}", self.seconds)
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub horizons: Vec<HorizonStats>,
    /// Mean negative log-likelihood per target point, a point being one
    /// full output vector.
    pub nll: f64,
    /// Fraction of scalar target values inside the central 90% predictive
    /// interval.
    pub coverage90: f64,
    /// Number of target points behind `nll` and `coverage90`.
    pub points: usize,
}

impl Metrics {
    pub fn horizon(&self, seconds: f64) -> Option<&HorizonStats> {
        self.horizons.iter().find(|h| h.seconds == seconds)
    }

    /// Flat key/value report. Horizons that no episode reaches are left out.
    pub fn report(&self) -> Map<String, Value> {
        let mut out = Map::new();
        for h in &self.horizons {
            let label = h.label();
            if let (Some(mu), Some(sigma), Some(mae), Some(dist)) = (h.mu(), h.sigma(), h.mae(), h.mean_distance()) {
                out.insert(format!("{label}.mu"), mu.into());
                out.insert(format!("{label}.sigma"), sigma.into());
                out.insert(format!("{label}.mae"), mae.into());
                out.insert(format!("{label}.euclid"), dist.into());
            }
            out.insert(format!("{label}.episodes"), h.count().into());
            out.insert(format!("{label}.omitted"), h.omitted.into());
        }
        out.insert("nll".into(), self.nll.into());
        out.insert("coverage90".into(), self.coverage90.into());
        out.insert("points".into(), self.points.into());
        out
    }

    pub fn report_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&Value::Object(self.report())).expect("map of numbers serializes");
        s.push('\n');
        s
    }
}

/// Number of leading steps observed for `context_seconds`.
pub fn context_steps(ep: &Episode, context_seconds: f64) -> Result<usize> {
    if !(context_seconds > 0.0 && context_seconds.is_finite()) {
        return Err(contract(format!("context_seconds must be positive, got {context_seconds}")));
    }
    let n = (context_seconds / ep.dt).round() as usize;
    if n == 0 || n > ep.len() {
        return Err(contract(format!(
            "episode {} has {} steps; {context_seconds} s of context needs {n}",
            ep.episode_id,
            ep.len()
        )));
    }
    Ok(n)
}

/// Per-episode noise stream, independent of evaluation order.
fn episode_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Observes the first `context_seconds` of each episode, predicts every
/// step and scores the predictions.
pub fn evaluate(predictor: &dyn Predictor, episodes: &[Episode], config: &EvalConfig) -> Result<Metrics> {
    if episodes.is_empty() {
        return Err(contract("evaluation needs at least one episode"));
    }
    if let Some(h) = config.horizons.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
        return Err(contract(format!("horizons must be positive, got {h}")));
    }
    let mut horizons: Vec<HorizonStats> = config
        .horizons
        .iter()
        .map(|&seconds| HorizonStats {
            seconds,
            errors: Vec::new(),
            distances: Vec::new(),
            omitted: 0,
        })
        .collect();
    let (mut nll_sum, mut covered, mut scalars, mut points) = (0.0, 0usize, 0usize, 0usize);
    for (i, ep) in episodes.iter().enumerate() {
        let n_ctx = context_steps(ep, config.context_seconds)?;
        let contexts: Vec<usize> = (0..n_ctx).collect();
        let targets: Vec<usize> = (0..ep.len()).collect();
        let pred = predictor.predict(ep, &contexts, &targets, config.n_samples, &mut episode_rng(config.seed, i))?;
        check_prediction(&pred, ep)?;
        for t in 0..ep.len() {
            let (mu, sd, y) = (pred.mean.row(t), pred.std.row(t), ep.targets.row(t));
            for ((m, s), v) in mu.iter().zip(sd).zip(y) {
                let z = (v - m) / s;
                nll_sum += HALF_LN_2PI + s.ln() + 0.5 * z * z;
                covered += usize::from(z.abs() <= Z_90);
            }
            scalars += y.len();
            points += 1;
        }
        for h in &mut horizons {
            let t = n_ctx - 1 + (h.seconds / ep.dt).round() as usize;
            if t >= ep.len() {
                h.omitted += 1;
                continue;
            }
            let (mu, y) = (pred.mean.row(t), ep.targets.row(t));
            h.errors.push(mu[0] - y[0]);
            h.distances.push(mu.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
        }
    }
    for h in horizons.iter().filter(|h| h.omitted > 0) {
        log::warn!("{} of {} episodes are too short for the {} s horizon", h.omitted, episodes.len(), h.seconds);
    }
    Ok(Metrics {
        horizons,
        nll: nll_sum / points as f64,
        coverage90: covered as f64 / scalars as f64,
        points,
    })
}

fn check_prediction(pred: &Prediction, ep: &Episode) -> Result<()> {
    let shape = [ep.len(), ep.output_dim()];
    if pred.mean.shape() != shape || pred.std.shape() != shape {
        return Err(contract(format!(
            "predictor returned shape {:?} for {:?} targets",
            pred.mean.shape(),
            shape
        )));
    }
    if let Some(s) = pred.std.data().iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(contract(format!("predictor returned a non-positive std {s}")));
    }
    Ok(())
}

pub const PREDICTION_HEADER: &str = "step,pred_lat_mean,pred_lat_std,pred_lon_mean,pred_lon_std,true_lat,true_lon,is_context";

/// Writes one row per step of `ep` with predictive moments given the first
/// `context_seconds`. Single-output episodes leave the longitudinal columns
/// empty.
pub fn write_predictions<W: Write>(
    w: W,
    predictor: &dyn Predictor,
    ep: &Episode,
    context_seconds: f64,
    n_samples: usize,
    seed: u64,
) -> Result<()> {
    if ep.output_dim() > 2 {
        return Err(contract(format!(
            "prediction export covers at most 2 outputs, episode has {}",
            ep.output_dim()
        )));
    }
    let n_ctx = context_steps(ep, context_seconds)?;
    let contexts: Vec<usize> = (0..n_ctx).collect();
    let targets: Vec<usize> = (0..ep.len()).collect();
    let pred = predictor.predict(ep, &contexts, &targets, n_samples, &mut episode_rng(seed, 0))?;
    check_prediction(&pred, ep)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(PREDICTION_HEADER.split(',')).map_err(csv_io)?;
    let cell = |row: &[f64], d: usize| row.get(d).map(f64::to_string).unwrap_or_default();
    for t in 0..ep.len() {
        let (mu, sd, y) = (pred.mean.row(t), pred.std.row(t), ep.targets.row(t));
        out.write_record([
            t.to_string(),
            cell(mu, 0),
            cell(sd, 0),
            cell(mu, 1),
            cell(sd, 1),
            cell(y, 0),
            cell(y, 1),
            u8::from(t < n_ctx).to_string(),
        ])
        .map_err(csv_io)?;
    }
    out.flush()?;
    Ok(())
}

pub fn export_predictions(
    predictor: &dyn Predictor,
    ep: &Episode,
    context_seconds: f64,
    n_samples: usize,
    seed: u64,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut buf = Vec::new();
    write_predictions(&mut buf, predictor, ep, context_seconds, n_samples, seed)?;
    std::fs::write(path, buf)?;
    Ok(())
}
