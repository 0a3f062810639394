use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::diffcore::CellKind;
use crate::latentode::ModelSpec;
use crate::losses::{LossMode, DEFAULT_INTERPOLATION_POINTS};
use crate::systems::SystemId;
use crate::{Error, Result};

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub system: SystemId,
    pub cell: CellKind,
    pub mode: LossMode,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    /// Hidden layer widths of the latent dynamics network.
    pub dynamics_hidden: Vec<usize>,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    /// Path-length weight in pathmin mode.
    pub lambda: f64,
    /// KL weight in kl mode.
    pub kl_weight: f64,
    /// Interpolation points for the path length.
    pub m: usize,
    /// Fixed RK4 step of every latent and hidden-state rollout.
    pub dt: f64,
    pub seed: u64,
    /// Steps between validation rounds.
    pub val_every: usize,
    /// Validation trajectories used per round.
    pub val_count: usize,
    /// End of the extrapolation probe used for the `val_extrap_mse` column.
    pub val_horizon: f64,
    /// Stop after this many validation rounds without improvement.
    pub patience: Option<usize>,
    pub dataset: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset("dho-pathmin").expect("built-in preset")
    }
}

pub const PRESETS: &[&str] = &[
    "dho-pathmin",
    "dho-kl",
    "lane-pathmin",
    "lane-kl",
    "lve-pathmin",
    "lve-kl",
];

impl TrainConfig {
    /// Named configurations; `<system>-<mode>` with system `dho`, `lane` or `lve`.
    pub fn preset(name: &str) -> Result<Self> {
        let (system, mode) = name
            .rsplit_once('-')
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset `{name}`")))?;
        let mode: LossMode = mode.parse()?;
        let mut cfg = match system {
            "dho" => Self {
                system: SystemId::Dho,
                cell: CellKind::Rnn,
                mode,
                hidden_dim: 6,
                latent_dim: 3,
                dynamics_hidden: vec![24, 24],
                lr: 1e-2,
                steps: 3_000,
                batch: 256,
                lambda: 1.0,
                kl_weight: 1.0,
                m: DEFAULT_INTERPOLATION_POINTS,
                dt: 0.1,
                seed: 0,
                val_every: 100,
                val_count: 64,
                val_horizon: 90.0,
                patience: None,
                dataset: None,
            },
            "lane" => Self {
                system: SystemId::LaneEmden,
                hidden_dim: 6,
                latent_dim: 3,
                dynamics_hidden: vec![24, 24],
                lr: 2e-3,
                steps: 25_000,
                batch: 32,
                lambda: 0.5,
                val_horizon: 9.0,
                ..Self::preset(&format!("dho-{mode}"))?
            },
            "lve" => Self {
                system: SystemId::LotkaVolterra,
                hidden_dim: 16,
                latent_dim: 8,
                dynamics_hidden: vec![40, 40, 40],
                lr: 2e-3,
                steps: 15_000,
                batch: 64,
                lambda: 0.5,
                val_horizon: 50.0,
                ..Self::preset(&format!("dho-{mode}"))?
            },
            _ => return Err(Error::InvalidArgument(format!("unknown preset `{name}`"))),
        };
        cfg.mode = mode;
        Ok(cfg)
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            feature_dim: self.system.observed_dim(),
            hidden_dim: self.hidden_dim,
            latent_dim: self.latent_dim,
            dynamics_hidden: self.dynamics_hidden.clone(),
            cell: self.cell,
            variational: self.mode == LossMode::Kl,
        }
    }

    /// Weight on the penalty term for the configured mode.
    pub fn penalty_weight(&self) -> f64 {
        match self.mode {
            LossMode::Pathmin => self.lambda,
            LossMode::Kl => self.kl_weight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_spec().validate()?;
        let positive = [
            ("lr", self.lr),
            ("dt", self.dt),
            ("val_horizon", self.val_horizon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !(self.lambda >= 0.0 && self.kl_weight >= 0.0) {
            return Err(Error::InvalidArgument("penalty weights must be >= 0".into()));
        }
        if self.steps == 0 || self.batch == 0 || self.val_every == 0 {
            return Err(Error::InvalidArgument(
                "steps, batch and val_every must be positive".into(),
            ));
        }
        if self.mode == LossMode::Pathmin && self.m < 2 {
            return Err(Error::InvalidArgument("m must be at least 2".into()));
        }
        Ok(())
    }
}
