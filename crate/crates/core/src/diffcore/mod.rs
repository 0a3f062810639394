//! Parameter trees, reverse-mode tape, layers, Adam and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod nn;
pub mod params;
pub mod tape;

pub use adam::{adam_update, AdamState};
pub use checkpoint::Checkpoint;
pub use nn::{CellKind, CellState, Mlp, RecurrentCell};
pub use params::{GradTree, Layout, LayoutBuilder, ParamId, ParamSpec, ParamTree};
pub use tape::{grad, Tape, Var};
