//! Declarative experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anonymizer::SelectionConfig;
use crate::attack::{AnonymizerKind, CalibrationMethod, Scenario, ScenarioConfig};
use crate::error::{io_at, Error, Result};
use crate::pool::{generate_synthetic, load_pool_any, EmbeddingPool, SyntheticSpec};
use crate::training::{StackSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Pool file (`.emb` or `.csv`); the synthetic spec is used when absent.
    pub pool: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    /// External pool for the selection baseline.
    pub external_pool: Option<PathBuf>,
    /// Generated external pool when no file is given; `dim` follows the main pool.
    pub external_synthetic: SyntheticSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            pool: None,
            synthetic: SyntheticSpec::default(),
            external_pool: None,
            external_synthetic: SyntheticSpec {
                num_speakers: 400,
                utterances_per_speaker: 4,
                train_speakers: 400,
                seed: 1_000_003,
                ..SyntheticSpec::default()
            },
        }
    }
}

impl DataConfig {
    pub fn load_pool(&self) -> Result<EmbeddingPool> {
        match &self.pool {
            Some(p) => load_pool_any(p),
            None => generate_synthetic(&self.synthetic),
        }
    }

    pub fn load_external(&self, dim: usize) -> Result<EmbeddingPool> {
        let ext = match &self.external_pool {
            Some(p) => load_pool_any(p)?,
            None => generate_synthetic(&SyntheticSpec { dim, ..self.external_synthetic.clone() })?,
        };
        if ext.dim() != dim {
            return Err(Error::DimMismatch { expected: dim, got: ext.dim() });
        }
        Ok(ext)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub scenarios: Vec<Scenario>,
    pub user_seed: u64,
    pub attacker_seed: u64,
    pub calibration: CalibrationMethod,
    /// Subset weights for the summary's weighted average, one per pool.
    pub weights: Vec<f64>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            scenarios: Scenario::ALL.to_vec(),
            user_seed: 50,
            attacker_seed: 1986,
            calibration: CalibrationMethod::Logistic,
            weights: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub anonymizer: AnonymizerKind,
    pub data: DataConfig,
    pub stack: StackSpec,
    pub train: TrainConfig,
    pub selection: SelectionConfig,
    pub attack: AttackConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: PathBuf::from("out"),
            anonymizer: AnonymizerKind::OhnnRoh,
            data: DataConfig::default(),
            stack: StackSpec::default(),
            train: TrainConfig::default(),
            selection: SelectionConfig::default(),
            attack: AttackConfig::default(),
        }
    }
}

fn at<T>(path: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::InvalidConfig(format!("{path}: {e}")))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::InvalidConfig(format!("{}: {}", e.path(), e.inner().message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(io_at(path.as_ref()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.pool.is_none() {
            at("data.synthetic", self.data.synthetic.validate())?;
        }
        if self.data.external_pool.is_none() {
            at("data.external_synthetic", self.data.external_synthetic.validate())?;
        }
        if self.stack.layers == 0 || self.stack.reflections_per_layer == 0 {
            return Err(Error::InvalidConfig("stack: layers and reflections_per_layer must be >= 1".into()));
        }
        at("train", self.train.validate())?;
        at("selection", self.selection.validate())?;
        if self.attack.scenarios.is_empty() {
            return Err(Error::InvalidConfig("attack.scenarios: empty".into()));
        }
        if self.attack.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidConfig("attack.weights: must be non-negative".into()));
        }
        at("attack", self.scenario_config(self.attack.scenarios[0]).validate())
    }

    pub fn scenario_config(&self, scenario: Scenario) -> ScenarioConfig {
        ScenarioConfig {
            scenario,
            user_seed: self.attack.user_seed,
            attacker_seed: self.attack.attacker_seed,
            anonymizer: self.anonymizer,
            stack: self.stack.clone(),
            train: self.train.clone(),
            selection: self.selection.clone(),
            calibration: self.attack.calibration,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anonymizer::Variant;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn partial_document() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            anonymizer = "ohnn-loh"
            [stack]
            variant = "loh"
            layers = 2
            [train]
            iterations = 10
            cycle_length = 10
            loss_variant = "aam"
            [attack]
            scenarios = ["ignorant", "semi-informed"]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.stack.variant, Variant::Loh);
        assert_eq!(cfg.stack.reflections_per_layer, 8);
        assert_eq!(cfg.train.iterations, 10);
        assert_eq!(cfg.attack.scenarios, vec![Scenario::Ignorant, Scenario::SemiInformed]);
    }

    #[test]
    fn unknown_key_names_its_path() {
        let err = ExperimentConfig::from_toml("[train.loss]\nm3 = 0.1\n").unwrap_err().to_string();
        assert!(err.contains("train.loss"), "{err}");
        assert!(err.contains("m3"), "{err}");
    }

    #[test]
    fn semantic_errors_name_their_section() {
        let err = ExperimentConfig::from_toml("[data.synthetic]\nnum_speakers = 1\n").unwrap_err().to_string();
        assert!(err.starts_with("invalid config: data.synthetic"), "{err}");
        let err = ExperimentConfig::from_toml("[attack]\nuser_seed = 3\nattacker_seed = 3\n").unwrap_err().to_string();
        assert!(err.contains("attack"), "{err}");
    }
}
