//! Training, checkpointing, sampling and evaluation of the full model.

mod checkpoint;
mod config;
mod denoiser;
mod evaluate;
mod sample;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, NsDiffModel, MAGIC, VERSION};
pub use config::TrainConfig;
pub use denoiser::{Denoiser, DenoiserCache, DenoiserInput, DenoiserOutput, NoisePredictor, DENOISER_PREFIX};
pub use evaluate::{evaluate, region_column, region_csv, region_spread, window_csv, Evaluation, RegionPoint};
pub use sample::{reverse_chain, sample_window, ForecastEnsemble, ReverseOutcome};
pub use train::{fit_nsdiff, prepare_data, pretrain_estimators, train_nsdiff, Estimators, FittedRun, PreparedData, TrainReport};
