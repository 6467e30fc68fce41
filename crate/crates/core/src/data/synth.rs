//! Synthetic stochastic-process generators. Every generator is a pure
//! function of its seed and parameters.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{contract, Result};
use crate::tensor::Tensor;

use super::episode::{build_episodes, Episode, DT};
use super::records::{Role, TrajectoryRecord, VehicleObs, ROLES};

pub const SINE_NOISE_STD: f64 = 0.05;
pub const SINE_X_RANGE: (f64, f64) = (-2.0, 2.0);

/// Optional overrides for the per-episode sine parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SineParams {
    pub amplitude: Option<f64>,
    pub phase: Option<f64>,
}

/// `y = a·sin(x + φ) + ε` with `a ~ U(0.5, 2)`, `φ ~ U(0, π)`,
/// `ε ~ N(0, 0.05²)`, on a uniform grid over `[−2, 2]`. Inputs are
/// one-step windows of width 1.
pub fn synth_sine_family(n_episodes: usize, n_points: usize, seed: u64) -> Result<Vec<Episode>> {
    synth_sine_family_with(n_episodes, n_points, seed, &SineParams::default())
}

pub fn synth_sine_family_with(n_episodes: usize, n_points: usize, seed: u64, params: &SineParams) -> Result<Vec<Episode>> {
    if n_points < 2 {
        return Err(contract("sine episodes need at least 2 points"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = SINE_X_RANGE;
    let xs: Vec<f64> = (0..n_points).map(|i| lo + (hi - lo) * i as f64 / (n_points - 1) as f64).collect();
    (0..n_episodes)
        .map(|e| {
            let a: f64 = rng.random_range(0.5..2.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let a = params.amplitude.unwrap_or(a);
            let phi = params.phase.unwrap_or(phi);
            let ys = xs
                .iter()
                .map(|&x| {
                    let eps: f64 = rng.sample(StandardNormal);
                    a * (x + phi).sin() + SINE_NOISE_STD * eps
                })
                .collect();
            Episode::new(
                Tensor::new(&[n_points, 1, 1], xs.clone())?,
                Tensor::new(&[n_points, 1], ys)?,
                DT,
                e as u64,
                Vec::new(),
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaneChangeParams {
    /// Meters between lane centers.
    pub lane_width: f64,
    /// Episode length in seconds, sampled at 10 Hz.
    pub duration: f64,
    /// Std of the white noise on observed surrounding-vehicle positions.
    pub noise_std: f64,
    /// Window length `L` for the built episodes.
    pub window: usize,
}

impl Default for LaneChangeParams {
    fn default() -> Self {
        Self {
            lane_width: 3.7,
            duration: 8.0,
            noise_std: 0.1,
            window: 20,
        }
    }
}

impl LaneChangeParams {
    pub fn steps(&self) -> usize {
        (self.duration / DT).round() as usize
    }
}

/// Latent parameters of one generated lane change.
#[derive(Clone, Debug, PartialEq)]
pub struct LaneChangeScenario {
    /// Logistic steepness, 1/s.
    pub k: f64,
    /// Lane-crossing time, s.
    pub t0: f64,
    /// Ego longitudinal speed, m/s.
    pub speed: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    /// Per role: `(lat, lon at t=0, speed)` when present.
    pub others: [Option<(f64, f64, f64)>; 5],
}

impl LaneChangeScenario {
    fn sample<R: Rng + ?Sized>(rng: &mut R, params: &LaneChangeParams) -> Self {
        let k = rng.random_range(1.0..2.5);
        let t0 = rng.random_range(2.0..6.0);
        let speed = rng.random_range(8.0..15.0);
        let origin_lat = params.lane_width * rng.random_range(0..3) as f64;
        let origin_lon = rng.random_range(0.0..300.0);
        let mut others = [None; 5];
        for (slot, role) in others.iter_mut().zip(ROLES) {
            let present = rng.random_bool(0.8);
            let gap = match role {
                Role::Front => rng.random_range(10.0..40.0),
                Role::Following => rng.random_range(-40.0..-10.0),
                Role::ImmediateLeft => rng.random_range(-8.0..8.0),
                Role::FrontLeft => rng.random_range(15.0..45.0),
                Role::FollowingLeft => rng.random_range(-45.0..-15.0),
            };
            let lane = if role.on_target_lane() { params.lane_width } else { 0.0 };
            let lat = origin_lat + lane + rng.random_range(-0.3..0.3);
            let v = speed + rng.random_range(-2.0..2.0);
            if present {
                *slot = Some((lat, origin_lon + gap, v));
            }
        }
        Self {
            k,
            t0,
            speed,
            origin_lat,
            origin_lon,
            others,
        }
    }

    /// Noiseless ego lateral position at time `t`.
    pub fn ego_lat(&self, t: f64, lane_width: f64) -> f64 {
        self.origin_lat + lane_width / (1.0 + (-self.k * (t - self.t0)).exp())
    }
}

/// Generates lane-change records together with their latent scenarios.
pub fn synth_lane_change_scenarios(
    n_episodes: usize,
    seed: u64,
    params: &LaneChangeParams,
) -> Result<Vec<(LaneChangeScenario, Vec<TrajectoryRecord>)>> {
    let n = params.steps();
    if n < 2 {
        return Err(contract("lane-change duration must cover at least 2 steps"));
    }
    if !(params.lane_width > 0.0) || !(params.noise_std >= 0.0) {
        return Err(contract("lane width must be positive and noise std nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_episodes);
    for e in 0..n_episodes {
        let sc = LaneChangeScenario::sample(&mut rng, params);
        let records = (0..n)
            .map(|s| {
                let t = s as f64 * DT;
                let mut others = [VehicleObs::default(); 5];
                for (obs, o) in others.iter_mut().zip(&sc.others) {
                    if let Some((lat, lon, v)) = *o {
                        let nl: f64 = rng.sample(StandardNormal);
                        let ng: f64 = rng.sample(StandardNormal);
                        *obs = VehicleObs {
                            lat: lat + params.noise_std * nl,
                            lon: lon + v * t + params.noise_std * ng,
                            present: true,
                        };
                    }
                }
                TrajectoryRecord {
                    episode_id: e as u64,
                    step: s as u64,
                    ego_lat: sc.ego_lat(t, params.lane_width),
                    ego_lon: sc.origin_lon + sc.speed * t,
                    others,
                }
            })
            .collect();
        out.push((sc, records));
    }
    Ok(out)
}

pub fn synth_lane_change_records(n_episodes: usize, seed: u64, params: &LaneChangeParams) -> Result<Vec<TrajectoryRecord>> {
    Ok(synth_lane_change_scenarios(n_episodes, seed, params)?
        .into_iter()
        .flat_map(|(_, r)| r)
        .collect())
}

/// Synthetic lane changes built into windowed episodes.
pub fn synth_lane_change(n_episodes: usize, seed: u64, params: &LaneChangeParams) -> Result<Vec<Episode>> {
    let records = synth_lane_change_records(n_episodes, seed, params)?;
    Ok(build_episodes(&records, params.window)?.episodes)
}
