//! Episode construction: trajectory CSV ingestion, synthetic stochastic
//! process generators, sliding windows, normalization and context/target
//! splitting.

mod episode;
mod normalize;
mod records;
mod series;
mod split;
pub mod synth;

pub use episode::{build_episodes, Episode, BuildReport, DT, FEATURES_PER_ROLE, TRAJECTORY_FEATURES};
pub use normalize::{fit_apply_normalizer, Normalizer};
pub use records::{load_csv, read_csv, write_csv, Role, TrajectoryRecord, VehicleObs, CSV_HEADER, ROLES};
pub use series::{load_episodes, read_series_csv, write_series_csv, SERIES_HEADER};
pub use split::{sample_ct_split, sample_split, CtSplit, SplitMode};
