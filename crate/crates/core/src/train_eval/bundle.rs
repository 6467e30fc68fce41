use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::data::{Episode, Normalizer};
use crate::error::Result;
use crate::model::{NpFamilyModel, Prediction, POINT_STD};
use crate::nn::serialize::ParamFile;
use crate::tensor::Tensor;

use super::predictor::Predictor;

/// A trained model together with the normalizer fitted on its training
/// data. Predictions are in the original data units.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub model: NpFamilyModel,
    pub normalizer: Normalizer,
}

impl ModelBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        self.model.to_param_file(self.normalizer.to_tensors()).to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (model, extras) = NpFamilyModel::from_param_file(ParamFile::read_from(&mut &bytes[..])?)?;
        let normalizer = Normalizer::from_tensors(&extras)?;
        Ok(Self { model, normalizer })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl Predictor for ModelBundle {
    fn predict(
        &self,
        ep: &Episode,
        contexts: &[usize],
        targets: &[usize],
        n_samples: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Prediction> {
        self.model.check_episode(ep)?;
        let normalized = self.normalizer.apply(ep)?;
        let p = self.model.predict(&normalized, contexts, targets, n_samples, rng)?;
        let shape = p.mean.shape().to_vec();
        let (mut mean, mut std) = (Vec::with_capacity(p.mean.numel()), Vec::with_capacity(p.std.numel()));
        for t in 0..shape[0] {
            mean.extend(self.normalizer.denormalize_mean(p.mean.row(t)));
            if self.model.kind.is_latent() {
                std.extend(self.normalizer.denormalize_std(p.std.row(t)));
            } else {
                std.extend(std::iter::repeat_n(POINT_STD, shape[1]));
            }
        }
        Ok(Prediction {
            mean: Tensor::new(&shape, mean)?,
            std: Tensor::new(&shape, std)?,
        })
    }
}
