//! Run configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use resflow::dataset::CsvOptions;
use resflow::evalkit::{Candidate, GridConfig, Setting};
use resflow::net::ModelConfig;
use resflow::synthgen::GeneratorConfig;
use resflow::training::{SearchSpace, TrainConfig, Variant};
use resflow::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub input_days: Vec<usize>,
    pub horizon_days: Vec<usize>,
    pub settings: Vec<Setting>,
    /// Network variants (flags or labels) and baseline names.
    pub variants: Vec<String>,
    pub train_fraction: f64,
    /// Worker threads for grid cells; 0 uses every core.
    pub jobs: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            input_days: vec![1, 3, 5, 7, 14],
            horizon_days: vec![1, 3, 5, 7, 14],
            settings: vec![Setting::Total, Setting::Gates],
            variants: ["full", "seasonal-naive", "persistence", "ar7", "res-ridge"].map(String::from).to_vec(),
            train_fraction: 0.8,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_dir: "data".into(),
            out_dir: "out".into(),
        }
    }
}

/// Everything a run needs; every table is optional and unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Applied on top of `[model]` when set.
    pub variant: Option<String>,
    pub generator: GeneratorConfig,
    /// Architecture; the sample window lives in `[model.spec]`.
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Learning-rate and patience search on the validation tail; off when absent.
    pub search: Option<SearchSpace>,
    pub grid: GridSection,
    pub paths: Paths,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Loads `path`, or the defaults when no file is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), Self::load)
    }

    pub fn variant(&self) -> Result<Option<Variant>> {
        self.variant.as_deref().map(str::parse).transpose()
    }

    /// Model configuration with the variant applied and validated.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let model = match self.variant()? {
            Some(v) => v.apply(&self.model),
            None => self.model.clone(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            grid: self.model.spec.grid,
            gates: self.generator.gates.clone(),
            span: None,
        }
    }

    pub fn candidates(&self) -> Result<Vec<Candidate>> {
        self.grid.variants.iter().map(|v| v.parse()).collect()
    }

    pub fn grid_config(&self) -> GridConfig {
        GridConfig {
            model: self.model.clone(),
            train: self.train.clone(),
            input_days: self.grid.input_days.clone(),
            horizon_days: self.grid.horizon_days.clone(),
            settings: self.grid.settings.clone(),
            train_fraction: self.grid.train_fraction,
            search: self.search.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
