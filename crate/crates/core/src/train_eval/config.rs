use std::path::PathBuf;

use crate::data::synth::{synth_lane_change, synth_sine_family, LaneChangeParams};
use crate::data::{load_episodes, Episode, SplitMode};
use crate::error::{contract, Result};
use crate::model::{ModelDims, ModelKind};

/// Hidden layer sizes; input, output and window sizes come from the data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSizes {
    pub lstm_hidden: usize,
    pub pair_hidden: [usize; 2],
    pub repr_dim: usize,
    pub latent_hidden: usize,
    pub z_dim: usize,
    pub att_dim: usize,
    pub decoder_hidden: [usize; 2],
}

impl Default for ModelSizes {
    fn default() -> Self {
        let d = ModelDims::new(1, 1, 1);
        Self {
            lstm_hidden: d.lstm_hidden,
            pair_hidden: d.pair_hidden,
            repr_dim: d.repr_dim,
            latent_hidden: d.latent_hidden,
            z_dim: d.z_dim,
            att_dim: d.att_dim,
            decoder_hidden: d.decoder_hidden,
        }
    }
}

impl ModelSizes {
    pub fn dims(&self, input_dim: usize, output_dim: usize, window: usize) -> ModelDims {
        ModelDims {
            input_dim,
            output_dim,
            window,
            lstm_hidden: self.lstm_hidden,
            pair_hidden: self.pair_hidden,
            repr_dim: self.repr_dim,
            latent_hidden: self.latent_hidden,
            z_dim: self.z_dim,
            att_dim: self.att_dim,
            decoder_hidden: self.decoder_hidden,
        }
    }
}

/// Where training episodes come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Sine {
        n_episodes: usize,
        n_points: usize,
        seed: u64,
    },
    LaneChange {
        n_episodes: usize,
        params: LaneChangeParams,
        seed: u64,
    },
    /// A trajectory or series CSV file; `window` applies to trajectories.
    Csv {
        path: PathBuf,
        window: usize,
    },
}

impl DataSource {
    pub fn episodes(&self) -> Result<Vec<Episode>> {
        match self {
            Self::Sine {
                n_episodes,
                n_points,
                seed,
            } => synth_sine_family(*n_episodes, *n_points, *seed),
            Self::LaneChange {
                n_episodes,
                params,
                seed,
            } => synth_lane_change(*n_episodes, *seed, params),
            Self::Csv { path, window } => load_episodes(path, *window),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub seed: u64,
    pub steps: usize,
    /// Episodes per optimizer step.
    pub batch: usize,
    pub lr: f64,
    pub sizes: ModelSizes,
    pub split_mode: SplitMode,
    /// Steps between progress log lines; 0 disables them.
    pub eval_interval: usize,
    /// Fit a per-feature normalizer on the training episodes.
    pub normalize: bool,
    pub data: DataSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Arnp,
            seed: 0,
            steps: 5000,
            batch: 16,
            lr: 1e-3,
            sizes: ModelSizes::default(),
            split_mode: SplitMode::Prefix,
            eval_interval: 500,
            normalize: true,
            data: DataSource::LaneChange {
                n_episodes: 200,
                params: LaneChangeParams::default(),
                seed: 0,
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(contract("steps must be at least 1"));
        }
        if self.batch == 0 {
            return Err(contract("batch must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(contract(format!("learning rate must be finite and nonnegative, got {}", self.lr)));
        }
        Ok(())
    }
}
