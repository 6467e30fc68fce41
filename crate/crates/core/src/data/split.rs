use rand::seq::index;
use rand::Rng;

use crate::error::{contract, Result};

/// Context and target time indices of one episode, both ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CtSplit {
    pub context: Vec<usize>,
    pub target: Vec<usize>,
}

impl CtSplit {
    /// Past-prefix split: the first `m` steps are contexts, all `n` are targets.
    pub fn prefix(m: usize, n: usize) -> Result<Self> {
        let split = Self {
            context: (0..m).collect(),
            target: (0..n).collect(),
        };
        split.validate(n)?;
        Ok(split)
    }

    /// Checks ordering, bounds, `C ⊆ T` and a nonempty target set.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.target.is_empty() {
            return Err(contract("target set is empty"));
        }
        for set in [&self.context, &self.target] {
            if set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(contract("split indices must be strictly increasing"));
            }
            if set.last().is_some_and(|&i| i >= n) {
                return Err(contract(format!("split index out of range for {n} steps")));
            }
        }
        if self.context.iter().any(|c| self.target.binary_search(c).is_err()) {
            return Err(contract("every context must also be a target"));
        }
        Ok(())
    }
}

/// How training splits pick their contexts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SplitMode {
    /// Contexts are an observed past prefix.
    #[default]
    Prefix,
    /// Contexts are a uniformly random subset of the same size distribution.
    RandomSubset,
}

/// Draws `m ~ U{1, …, n−1}` and returns contexts `0..m`, targets `0..n`.
pub fn sample_ct_split<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<CtSplit> {
    sample_split(n, SplitMode::Prefix, rng)
}

pub fn sample_split<R: Rng + ?Sized>(n: usize, mode: SplitMode, rng: &mut R) -> Result<CtSplit> {
    if n < 2 {
        return Err(contract("splitting needs at least 2 steps"));
    }
    let m = rng.random_range(1..n);
    match mode {
        SplitMode::Prefix => CtSplit::prefix(m, n),
        SplitMode::RandomSubset => {
            let mut context = index::sample(rng, n, m).into_vec();
            context.sort_unstable();
            Ok(CtSplit {
                context,
                target: (0..n).collect(),
            })
        }
    }
}
