//! Training loop, evaluation protocols and latent export.

mod config;
mod eval;
mod export;
mod fit;
mod step;

pub use config::{TrainConfig, PRESETS};
pub use eval::{
    evaluate, ic_recovery, EvalReport, EvalSettings, HorizonStat, IcSettings, IcStat,
    ModelPredictor, Predictor, Stat,
};
pub use export::{export_latents, pca_2d, LatentExport};
pub use fit::{
    fit, load_model, model_checkpoint, read_metrics, FitOptions, FitResult, MetricRow,
    METRICS_COLUMNS,
};
pub use step::{
    batch_gradient, initial_metric, item_gradient, step_draws, train_step, ItemResult,
    StepOutcome,
};
