use crate::error::{contract, Result};
use crate::tensor::Tensor;

use super::records::{TrajectoryRecord, ROLES};

/// Seconds per step at the 10 Hz sampling rate.
pub const DT: f64 = 0.1;
/// Relative lateral, relative longitudinal, presence flag.
pub const FEATURES_PER_ROLE: usize = 3;
pub const TRAJECTORY_FEATURES: usize = FEATURES_PER_ROLE * ROLES.len();

/// One realization of the stochastic process: `n` time steps, each with a
/// window of the `L` most recent input feature vectors and a target.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    /// `[n × L × d_x]`
    pub windows: Tensor,
    /// `[n × d_y]`
    pub targets: Tensor,
    pub dt: f64,
    pub episode_id: u64,
    /// Feature columns holding 0/1 presence flags; left untouched by
    /// normalization.
    pub presence_columns: Vec<usize>,
}

impl Episode {
    pub fn new(windows: Tensor, targets: Tensor, dt: f64, episode_id: u64, presence_columns: Vec<usize>) -> Result<Self> {
        if windows.rank() != 3 || targets.rank() != 2 || windows.shape()[0] != targets.shape()[0] {
            return Err(contract(format!(
                "episode windows {:?} and targets {:?} disagree",
                windows.shape(),
                targets.shape()
            )));
        }
        if windows.shape()[0] < 2 {
            return Err(contract("an episode needs at least 2 steps"));
        }
        if !windows.is_finite() || !targets.is_finite() {
            return Err(contract("episode contains non-finite values"));
        }
        if presence_columns.iter().any(|&c| c >= windows.shape()[2]) {
            return Err(contract("presence column out of range"));
        }
        Ok(Self {
            windows,
            targets,
            dt,
            episode_id,
            presence_columns,
        })
    }

    pub fn len(&self) -> usize {
        self.windows.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window_len(&self) -> usize {
        self.windows.shape()[1]
    }

    pub fn input_dim(&self) -> usize {
        self.windows.shape()[2]
    }

    pub fn output_dim(&self) -> usize {
        self.targets.shape()[1]
    }

    /// Window of time index `t` as a flat `L·d_x` slice.
    pub fn window(&self, t: usize) -> &[f64] {
        let stride = self.window_len() * self.input_dim();
        &self.windows.data()[t * stride..(t + 1) * stride]
    }

    /// Windows at `indices`, shape `[k × L × d_x]`.
    pub fn windows_at(&self, indices: &[usize]) -> Tensor {
        let data = indices.iter().flat_map(|&t| self.window(t).iter().copied()).collect();
        Tensor::from_parts(vec![indices.len(), self.window_len(), self.input_dim()], data)
    }

    /// Current-step features (the last row of each window), `[k × d_x]`.
    pub fn current_features(&self, indices: &[usize]) -> Tensor {
        let d = self.input_dim();
        let data = indices
            .iter()
            .flat_map(|&t| {
                let w = self.window(t);
                w[w.len() - d..].iter().copied()
            })
            .collect();
        Tensor::from_parts(vec![indices.len(), d], data)
    }

    /// Targets at `indices`, `[k × d_y]`.
    pub fn targets_at(&self, indices: &[usize]) -> Tensor {
        let data = indices.iter().flat_map(|&t| self.targets.row(t).iter().copied()).collect();
        Tensor::from_parts(vec![indices.len(), self.output_dim()], data)
    }
}

/// Outcome of [`build_episodes`].
#[derive(Clone, Debug, Default)]
pub struct BuildReport {
    pub episodes: Vec<Episode>,
    /// Episodes dropped for having fewer than 2 steps.
    pub skipped: usize,
}

/// Turns grouped, step-sorted records into episodes with relative features,
/// displacement targets `(lat, lon)` and left-padded windows of length `window`.
pub fn build_episodes(records: &[TrajectoryRecord], window: usize) -> Result<BuildReport> {
    if window == 0 {
        return Err(contract("window length must be at least 1"));
    }
    let presence: Vec<usize> = (0..ROLES.len()).map(|r| r * FEATURES_PER_ROLE + 2).collect();
    let mut report = BuildReport::default();
    for group in records.chunk_by(|a, b| a.episode_id == b.episode_id) {
        if group.len() < 2 {
            log::warn!("episode {} has {} step(s); skipped", group[0].episode_id, group.len());
            report.skipped += 1;
            continue;
        }
        let steps: Vec<[f64; TRAJECTORY_FEATURES]> = group.iter().map(step_features).collect();
        let n = group.len();
        let mut windows = Vec::with_capacity(n * window * TRAJECTORY_FEATURES);
        for t in 0..n {
            for i in 0..window {
                let s = (t + i + 1).saturating_sub(window);
                windows.extend_from_slice(&steps[s]);
            }
        }
        let (lat0, lon0) = (group[0].ego_lat, group[0].ego_lon);
        let targets = group.iter().flat_map(|r| [r.ego_lat - lat0, r.ego_lon - lon0]).collect();
        report.episodes.push(Episode::new(
            Tensor::from_parts(vec![n, window, TRAJECTORY_FEATURES], windows),
            Tensor::from_parts(vec![n, 2], targets),
            DT,
            group[0].episode_id,
            presence.clone(),
        )?);
    }
    Ok(report)
}

fn step_features(r: &TrajectoryRecord) -> [f64; TRAJECTORY_FEATURES] {
    let mut f = [0.0; TRAJECTORY_FEATURES];
    for (k, o) in r.others.iter().enumerate() {
        if o.present {
            f[3 * k] = o.lat - r.ego_lat;
            f[3 * k + 1] = o.lon - r.ego_lon;
            f[3 * k + 2] = 1.0;
        }
    }
    f
}
