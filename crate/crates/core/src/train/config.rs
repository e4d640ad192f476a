use crate::data::AugmentConfig;
use crate::error::{config_err, Error, Result};
use crate::model::ModelConfig;
use crate::optim::{L2Scope, OptimizerConfig, SchedulerConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Environment variable that relative output directories are resolved against.
pub const OUTPUT_ROOT_ENV: &str = "ARTFUSION_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    /// `N / (K · n_c)` from the training split.
    #[default]
    InverseFrequency,
    Uniform,
}

/// Everything a run needs. A bare default is the reference recipe at the default
/// (reduced) backbone scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Keep wall-clock fields out of the history so reruns are byte-identical.
    pub deterministic: bool,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// train:val:test, used when the manifest has no split yet.
    pub split_ratios: [usize; 3],
    pub l2_coeff: f64,
    pub l2_scope: L2Scope,
    pub class_weighting: ClassWeighting,
    /// Batches prepared ahead on a worker thread; 0 prepares them inline.
    pub prefetch: usize,
    pub model: ModelConfig,
    pub augment: AugmentConfig,
    pub optimizer: OptimizerConfig,
    pub scheduler: SchedulerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            manifest: None,
            output_dir: PathBuf::from("runs/default"),
            deterministic: true,
            batch_size: 32,
            max_epochs: 50,
            split_ratios: [7, 1, 2],
            l2_coeff: 0.01,
            l2_scope: L2Scope::default(),
            class_weighting: ClassWeighting::default(),
            prefetch: 2,
            model: ModelConfig::default(),
            augment: AugmentConfig::default(),
            optimizer: OptimizerConfig::default(),
            scheduler: SchedulerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(config_err!("max_epochs is 0: nothing to train"));
        }
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be positive"));
        }
        if !(self.l2_coeff >= 0.0 && self.l2_coeff.is_finite()) {
            return Err(config_err!("l2_coeff must be a finite non-negative number"));
        }
        if self.split_ratios.iter().sum::<usize>() == 0 {
            return Err(config_err!("split_ratios must not all be zero"));
        }
        self.model.validate()?;
        self.augment.validate()?;
        self.optimizer.validate()?;
        self.scheduler.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err!("experiment config: {e}"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Applies `dotted.key=value` overrides. Values are parsed as TOML and fall back
    /// to plain strings, so `model.variant=cnn_only` and `optimizer.lr=3e-4` both work.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root = toml::Value::try_from(self).map_err(|e| config_err!("{e}"))?;
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| config_err!("override {o:?} is not key=value"))?;
            let value = parse_value(raw.trim());
            let mut node = &mut root;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let table = node.as_table_mut().ok_or_else(|| config_err!("override {key:?}: {part:?} is not a table"))?;
                if i + 1 == parts.len() {
                    table.insert(part.to_string(), value.clone());
                    break;
                }
                node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
            }
        }
        root.try_into().map_err(|e| config_err!("after overrides: {e}"))
    }

    /// `output_dir`, placed under `$ARTFUSION_OUTPUT_ROOT` when relative and the variable is set.
    pub fn run_dir(&self) -> PathBuf {
        resolve_output(&self.output_dir)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

pub fn resolve_output(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn default_roundtrips_and_validates() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), c);
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn zero_epochs_is_a_config_error() {
        let c = ExperimentConfig { max_epochs: 0, ..ExperimentConfig::default() };
        let e = c.validate().unwrap_err();
        assert_eq!(e.category(), "config");
        assert!(e.to_string().contains("nothing to train"));
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = ExperimentConfig::default()
            .with_overrides(&[
                "model.variant=cnn_only".into(),
                "optimizer.lr=3e-4".into(),
                "augment.enabled=false".into(),
                "batch_size=8".into(),
                "manifest=data/m.tsv".into(),
            ])
            .unwrap();
        assert_eq!(c.model.variant, Variant::CnnOnly);
        assert_eq!(c.optimizer.lr, 3e-4);
        assert!(!c.augment.enabled);
        assert_eq!(c.batch_size, 8);
        assert_eq!(c.manifest.as_deref(), Some(Path::new("data/m.tsv")));
        assert!(ExperimentConfig::default().with_overrides(&["nope=1".into()]).is_err());
        assert!(ExperimentConfig::default().with_overrides(&["batch_size".into()]).is_err());
    }
}
