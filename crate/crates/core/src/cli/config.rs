use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::sbi::InferenceConfig;
use crate::systems::{LveRanges, OodPreset, SystemId};
use crate::train::TrainConfig;
use crate::{Error, Result, SCHEMA_VERSION};

/// Settings of the `generate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    pub system: SystemId,
    /// Trajectory count; the system default when absent.
    pub count: Option<usize>,
    pub lve_ranges: LveRanges,
    pub ood: OodPreset,
    /// Output file; `<out>/<system>.glds` when absent.
    pub path: Option<PathBuf>,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            system: SystemId::Dho,
            count: None,
            lve_ranges: LveRanges::default(),
            ood: OodPreset::None,
            path: None,
        }
    }
}

/// Settings of the `eval` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub trials: usize,
    /// Interpolation horizon; the system default when absent.
    pub interp_horizon: Option<f64>,
    /// Extrapolation horizons; the system defaults when absent.
    pub horizons: Option<Vec<f64>>,
    pub grid_points: usize,
    /// Parameter presets to evaluate on, `none` meaning the test split.
    pub domains: Vec<OodPreset>,
    /// Trajectories drawn for each out-of-domain preset.
    pub ood_count: usize,
    pub ic_n_points: Vec<usize>,
    pub ic_window: (f64, f64),
    /// IC-recovery trials; 0 skips IC recovery.
    pub ic_trials: usize,
    /// Test trajectories written to `reconstructions.csv`.
    pub plot_items: usize,
    /// Latents exported to `latents.csv`; 0 skips the export.
    pub export_count: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            dataset: None,
            trials: 64,
            interp_horizon: None,
            horizons: None,
            grid_points: 200,
            domains: vec![OodPreset::None],
            ood_count: 500,
            ic_n_points: vec![3, 5, 10, 20, 50],
            ic_window: (5.0, 60.0),
            ic_trials: 0,
            plot_items: 4,
            export_count: 0,
        }
    }
}

/// Settings of the `infer` command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferSection {
    pub checkpoint: Option<PathBuf>,
    pub lve_ranges: LveRanges,
    pub flow: InferenceConfig,
    /// Index of the single case written to `posterior_samples_n<k>.csv`.
    pub case: usize,
}

/// Settings of the `export` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportSection {
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub count: usize,
}

impl Default for ExportSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            dataset: None,
            count: 1000,
        }
    }
}

/// Contents of a `--config` file.
///
/// `[train]` takes an optional `preset` key plus any [`TrainConfig`] field;
/// the fields override the preset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub generate: GenerateSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub infer: InferSection,
    pub export: ExportSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: None,
            out_dir: None,
            generate: GenerateSection::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            infer: InferSection::default(),
            export: ExportSection::default(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: Option<u32>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    #[serde(default)]
    generate: GenerateSection,
    #[serde(default)]
    train: toml::Table,
    #[serde(default)]
    eval: EvalSection,
    #[serde(default)]
    infer: InferSection,
    #[serde(default)]
    export: ExportSection,
}

fn de_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("config: {e}"))
}

/// Preset (or default) training configuration with the table's fields on top.
pub fn train_from_table(mut table: toml::Table) -> Result<TrainConfig> {
    let base = match table.remove("preset") {
        Some(toml::Value::String(name)) => TrainConfig::preset(&name)?,
        Some(_) => return Err(de_err("train.preset must be a string")),
        None => TrainConfig::default(),
    };
    let mut merged = toml::Table::try_from(&base).map_err(de_err)?;
    merged.extend(table);
    merged.try_into().map_err(de_err)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(de_err)?;
        let schema_version = raw.schema_version.unwrap_or(SCHEMA_VERSION);
        if schema_version != SCHEMA_VERSION {
            return Err(de_err(format!(
                "schema_version {schema_version} is not supported (expected {SCHEMA_VERSION})"
            )));
        }
        let cfg = Self {
            schema_version,
            seed: raw.seed,
            out_dir: raw.out_dir,
            generate: raw.generate,
            train: train_from_table(raw.train)?,
            eval: raw.eval,
            infer: raw.infer,
            export: raw.export,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.infer.flow.validate()?;
        if self.generate.count == Some(0) {
            return Err(de_err("generate.count must be positive"));
        }
        if self.eval.trials == 0 || self.eval.grid_points < 2 {
            return Err(de_err("eval.trials must be positive and eval.grid_points at least 2"));
        }
        if self.eval.ic_n_points.contains(&0) || !(self.eval.ic_window.0 < self.eval.ic_window.1) {
            return Err(de_err("eval.ic_n_points must be positive and ic_window increasing"));
        }
        if self.export.count == 0 {
            return Err(de_err("export.count must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn train_fields_override_the_preset() {
        let c = ExperimentConfig::from_toml(
            "[train]\npreset = \"lve-pathmin\"\nsteps = 10\nlambda = 0.25\n",
        )
        .unwrap();
        let mut want = TrainConfig::preset("lve-pathmin").unwrap();
        want.steps = 10;
        want.lambda = 0.25;
        assert_eq!(c.train, want);
    }

    #[test]
    fn unknown_keys_are_rejected_everywhere() {
        for text in [
            "bogus = 1",
            "[generate]\nsystem = \"dho\"\ncolour = 3",
            "[train]\npreset = \"dho-kl\"\nlearning_rate = 0.1",
            "[eval]\ntrails = 3",
            "[infer.flow]\nlayer = 2",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn bad_values_fail_validation() {
        assert!(ExperimentConfig::from_toml("[generate]\ncount = 0").is_err());
        assert!(ExperimentConfig::from_toml("[train]\nsteps = 0").is_err());
        assert!(ExperimentConfig::from_toml("schema_version = 7").is_err());
    }

    #[test]
    fn sections_parse() {
        let c = ExperimentConfig::from_toml(
            r#"
            seed = 3
            [generate]
            system = "lotka_volterra"
            count = 100
            ood = "lve25"
            [eval]
            domains = ["none", "dho_k30"]
            horizons = [30.0, 90.0]
            [infer.flow]
            steps = 10
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.generate.system, SystemId::LotkaVolterra);
        assert_eq!(c.generate.ood, OodPreset::Lve25);
        assert_eq!(c.eval.domains, vec![OodPreset::None, OodPreset::DhoK30]);
        assert_eq!(c.infer.flow.steps, 10);
    }
}
