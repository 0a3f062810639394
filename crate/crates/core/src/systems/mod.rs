//! Ground-truth systems, dataset generation and dataset files.

mod config;
mod dataset;
mod equations;

pub use config::{
    Interval, LveRanges, OodPreset, ParamRanges, SamplingSpec, SystemConfig, SystemField, SystemId,
};
pub use dataset::{
    data_solver, decode, encode, generate_dataset, generate_with_spec, load_dataset,
    sample_times, sample_trajectory, save_dataset, truth_solver, Dataset, SplitSizes, Trajectory,
};
pub use equations::{
    dho_rhs, lane_emden_rhs, lane_emden_start, lve_invariant, lve_rhs, LANE_EMDEN_XI0,
};
