//! Conditional normalizing flow over system parameters given latent summaries.

mod flow;
mod infer;

pub use flow::{FlowModel, FlowSpec, Standardizer, HALF_LN_2PI};
pub use infer::{
    domain_spec, inference_metrics, observe, relative_mse, sample_posterior, simulate_pairs,
    summarize, train_flow, write_posterior_csv, Domain, Estimator, FlowEstimator, InferenceCell,
    InferenceConfig, InferenceReport, Pair, PosteriorSamples,
};
