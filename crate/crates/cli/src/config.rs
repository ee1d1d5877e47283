use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use weight_surgery::harness::{AttackSpec, ExperimentConfig};
use weight_surgery::simulator::WorldConfig;

use crate::{files, CliError, Result};

/// Paths to a model and embeddings produced outside this tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalData {
    pub weights: PathBuf,
    pub embeddings: PathBuf,
}

/// The JSON document read by `gen` and `eval`. Relative paths are resolved
/// against the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: Option<WorldConfig>,
    pub external: Option<ExternalData>,
    pub folds: usize,
    pub pairs_per_fold: usize,
    pub attacks: Vec<AttackSpec>,
    pub repetitions: usize,
    pub hide: bool,
    pub detect: bool,
    pub output_dir: Option<PathBuf>,
    pub master_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let exp = ExperimentConfig::default();
        Self {
            world: None,
            external: None,
            folds: exp.folds,
            pairs_per_fold: exp.pairs_per_fold,
            attacks: exp.attacks,
            repetitions: exp.repetitions,
            hide: exp.hide,
            detect: exp.detect,
            output_dir: None,
            master_seed: exp.master_seed,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = files::read_text(path)?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|source| CliError::Json { path: path.to_owned(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(ext) = cfg.external.as_mut() {
            ext.weights = base.join(&ext.weights);
            ext.embeddings = base.join(&ext.embeddings);
        }
        if let Some(out) = cfg.output_dir.as_mut() {
            *out = base.join(&*out);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.world, &self.external) {
            (Some(w), None) => w.validate()?,
            (None, Some(ext)) => {
                for p in [&ext.weights, &ext.embeddings] {
                    if !p.is_file() {
                        return Err(CliError::Config(format!("external file {} does not exist", p.display())));
                    }
                }
            }
            (Some(_), Some(_)) => return Err(CliError::Config("give either `world` or `external`, not both".into())),
            (None, None) => return Err(CliError::Config("one of `world` or `external` is required".into())),
        }
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            folds: self.folds,
            pairs_per_fold: self.pairs_per_fold,
            attacks: self.attacks.clone(),
            repetitions: self.repetitions,
            hide: self.hide,
            detect: self.detect,
            histograms: true,
            master_seed: self.master_seed,
        }
    }
}
