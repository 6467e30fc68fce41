use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

use super::episode::Episode;

/// Per-feature affine map `(v − shift) / scale` for inputs and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub target_shift: Vec<f64>,
    pub target_scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_shift: vec![0.0; input_dim],
            input_scale: vec![1.0; input_dim],
            target_shift: vec![0.0; output_dim],
            target_scale: vec![1.0; output_dim],
        }
    }

    /// Fits zero mean and unit variance on the training episodes. Each time
    /// step contributes its own feature vector once (padding is not
    /// double-counted). Presence columns keep shift 0 and scale 1; constant
    /// features get scale 1 and a warning.
    pub fn fit(train: &[Episode]) -> Result<Self> {
        let first = train.first().ok_or_else(|| contract("cannot fit a normalizer on no episodes"))?;
        let (dx, dy) = (first.input_dim(), first.output_dim());
        if train.iter().any(|e| e.input_dim() != dx || e.output_dim() != dy) {
            return Err(contract("training episodes have mixed feature dimensions"));
        }
        let mut input_rows = Vec::new();
        let mut target_rows = Vec::new();
        for ep in train {
            for t in 0..ep.len() {
                let w = ep.window(t);
                input_rows.push(&w[w.len() - dx..]);
                target_rows.push(ep.targets.row(t));
            }
        }
        let (mut input_shift, mut input_scale) = moments(&input_rows, dx);
        let (target_shift, target_scale) = moments(&target_rows, dy);
        for &c in &first.presence_columns {
            input_shift[c] = 0.0;
            input_scale[c] = 1.0;
        }
        Ok(Self {
            input_shift,
            input_scale,
            target_shift,
            target_scale,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_shift.len()
    }

    pub fn output_dim(&self) -> usize {
        self.target_shift.len()
    }

    pub fn apply(&self, ep: &Episode) -> Result<Episode> {
        self.check(ep)?;
        Ok(self.map(ep, |v, shift, scale| (v - shift) / scale))
    }

    pub fn invert(&self, ep: &Episode) -> Result<Episode> {
        self.check(ep)?;
        Ok(self.map(ep, |v, shift, scale| v * scale + shift))
    }

    /// Maps a normalized target mean row back to original units.
    pub fn denormalize_mean(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.target_shift.iter().zip(&self.target_scale))
            .map(|(v, (s, k))| v * k + s)
            .collect()
    }

    /// Maps a normalized target std row back to original units.
    pub fn denormalize_std(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.target_scale).map(|(v, k)| v * k).collect()
    }

    /// Normalizes a target row given in original units.
    pub fn normalize_target(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.target_shift.iter().zip(&self.target_scale))
            .map(|(v, (s, k))| (v - s) / k)
            .collect()
    }

    /// Named tensors for embedding in a model file.
    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        vec![
            ("normalizer.input_shift".into(), Tensor::vector(self.input_shift.clone())),
            ("normalizer.input_scale".into(), Tensor::vector(self.input_scale.clone())),
            ("normalizer.target_shift".into(), Tensor::vector(self.target_shift.clone())),
            ("normalizer.target_scale".into(), Tensor::vector(self.target_scale.clone())),
        ]
    }

    pub fn from_tensors(tensors: &[(String, Tensor)]) -> Result<Self> {
        let get = |name: &str| -> Result<Vec<f64>> {
            let full = format!("normalizer.{name}");
            tensors
                .iter()
                .find(|(n, _)| *n == full)
                .map(|(_, t)| t.data().to_vec())
                .ok_or_else(|| Error::Format(format!("missing {full}")))
        };
        let n = Self {
            input_shift: get("input_shift")?,
            input_scale: get("input_scale")?,
            target_shift: get("target_shift")?,
            target_scale: get("target_scale")?,
        };
        if n.input_scale.len() != n.input_shift.len()
            || n.target_scale.len() != n.target_shift.len()
            || n.input_scale.iter().chain(&n.target_scale).any(|&s| !(s > 0.0 && s.is_finite()))
        {
            return Err(Error::Format("normalizer tensors are inconsistent".into()));
        }
        Ok(n)
    }

    fn check(&self, ep: &Episode) -> Result<()> {
        if ep.input_dim() != self.input_dim() || ep.output_dim() != self.output_dim() {
            return Err(Error::Dimension {
                op: "normalize",
                lhs: vec![self.input_dim(), self.output_dim()],
                rhs: vec![ep.input_dim(), ep.output_dim()],
            });
        }
        Ok(())
    }

    fn map(&self, ep: &Episode, f: impl Fn(f64, f64, f64) -> f64) -> Episode {
        let mut out = ep.clone();
        let dx = self.input_dim();
        for (i, v) in out.windows.data_mut().iter_mut().enumerate() {
            let c = i % dx;
            *v = f(*v, self.input_shift[c], self.input_scale[c]);
        }
        let dy = self.output_dim();
        for (i, v) in out.targets.data_mut().iter_mut().enumerate() {
            let c = i % dy;
            *v = f(*v, self.target_shift[c], self.target_scale[c]);
        }
        out
    }
}

fn moments(rows: &[&[f64]], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(*r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(*r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .iter()
        .enumerate()
        .map(|(c, s)| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 * (1.0 + mean[c].abs()) {
                sd
            } else {
                log::warn!("feature {c} has zero variance; scale set to 1");
                1.0
            }
        })
        .collect();
    (mean, scale)
}

/// Fits on `train` and applies the same map to every episode in `episodes`.
pub fn fit_apply_normalizer(train: &[Episode], episodes: &[Episode]) -> Result<(Vec<Episode>, Normalizer)> {
    let n = Normalizer::fit(train)?;
    let out = episodes.iter().map(|e| n.apply(e)).collect::<Result<_>>()?;
    Ok((out, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_lane_change, LaneChangeParams};

    fn episodes() -> Vec<Episode> {
        synth_lane_change(6, 3, &LaneChangeParams { window: 3, ..Default::default() }).unwrap()
    }

    #[test]
    fn training_set_is_centered_and_scaled() {
        let train = episodes();
        let (normed, norm) = fit_apply_normalizer(&train, &train).unwrap();
        let refit = Normalizer::fit(&normed).unwrap();
        for (c, &m) in refit.input_shift.iter().enumerate() {
            assert!(m.abs() < 1e-10, "feature {c}: {m}");
        }
        for m in &refit.target_shift {
            assert!(m.abs() < 1e-10);
        }
        for (c, s) in refit.input_scale.iter().enumerate() {
            if !train[0].presence_columns.contains(&c) && norm.input_scale[c] != 1.0 {
                assert!((s - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn apply_then_invert_round_trips() {
        let train = episodes();
        let norm = Normalizer::fit(&train).unwrap();
        for ep in &train {
            let back = norm.invert(&norm.apply(ep).unwrap()).unwrap();
            assert!(back.windows.max_abs_diff(&ep.windows) < 1e-10);
            assert!(back.targets.max_abs_diff(&ep.targets) < 1e-10);
        }
    }

    #[test]
    fn presence_flags_are_untouched() {
        let train = episodes();
        let (normed, norm) = fit_apply_normalizer(&train, &train).unwrap();
        for &c in &train[0].presence_columns {
            assert_eq!((norm.input_shift[c], norm.input_scale[c]), (0.0, 1.0));
        }
        for (a, b) in normed.iter().zip(&train) {
            for (i, (x, y)) in a.windows.data().iter().zip(b.windows.data()).enumerate() {
                if b.presence_columns.contains(&(i % 15)) {
                    assert_eq!(x, y);
                }
            }
        }
    }

    #[test]
    fn constant_feature_gets_unit_scale() {
        let mut train = episodes();
        for ep in &mut train {
            for (i, v) in ep.windows.data_mut().iter_mut().enumerate() {
                if i % 15 == 0 {
                    *v = 2.5;
                }
            }
        }
        let norm = Normalizer::fit(&train).unwrap();
        assert_eq!(norm.input_scale[0], 1.0);
        assert!((norm.input_shift[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        assert!(Normalizer::fit(&[]).is_err());
    }

    #[test]
    fn tensors_round_trip() {
        let norm = Normalizer::fit(&episodes()).unwrap();
        assert_eq!(Normalizer::from_tensors(&norm.to_tensors()).unwrap(), norm);
    }
}
