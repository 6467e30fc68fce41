//! Minibatch training of the model family and the horizon-error evaluation
//! harness.

mod bundle;
mod config;
mod eval;
mod predictor;
mod train;

pub use bundle::ModelBundle;
pub use config::{DataSource, ModelSizes, TrainConfig};
pub use eval::{
    context_steps, evaluate, export_predictions, write_predictions, EvalConfig, HorizonStats, Metrics, PREDICTION_HEADER,
    Z_90,
};
pub use predictor::{ConstantVelocity, OracleStub, Predictor};
pub use train::{init_bundle, save_trace, train, train_on, write_trace, TraceRow, TrainOutcome, TRACE_HEADER};
