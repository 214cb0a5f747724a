//! The experiment configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::DesignGroup;
use crate::dataset::GenerationConfig;
use crate::eval::{default_pairs, EvaluationPair};
use crate::nn::{NetworkSpec, TrainConfig};
use crate::xai::LrpConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        // one round (0..7) and one triangular (7..14) id each
        SplitConfig {
            val: vec![5, 12],
            test: vec![6, 13],
        }
    }
}

/// Where pictograms and source patches come from. Missing paths select the
/// built-in procedural stand-ins.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssetConfig {
    pub pictogram_root: Option<PathBuf>,
    pub patch_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub lrp: LrpConfig,
    /// Upper bound on correctly predicted images averaged per class.
    pub images_per_class: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            lrp: LrpConfig::default(),
            images_per_class: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_root: PathBuf,
    pub network: String,
    /// Evaluation pairs such as "ATc-ATn" or "CUR-DE".
    pub pairs: Vec<String>,
    /// Composite groups trained in addition to the base designs.
    pub composites: Vec<String>,
    pub top_k: usize,
    pub generation: GenerationConfig,
    pub splits: SplitConfig,
    pub train: TrainConfig,
    pub explain: ExplainConfig,
    pub assets: AssetConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 0,
            output_root: PathBuf::from("out"),
            network: NetworkSpec::reference().name,
            pairs: default_pairs().iter().map(|p| p.label()).collect(),
            composites: Vec::new(),
            top_k: 5,
            generation: GenerationConfig::default(),
            splits: SplitConfig::default(),
            train: TrainConfig::default(),
            explain: ExplainConfig::default(),
            assets: AssetConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Registered architectures by name.
pub fn network_by_name(name: &str) -> Option<NetworkSpec> {
    let reference = NetworkSpec::reference();
    (name == reference.name).then_some(reference)
}

impl ExperimentConfig {
    /// Full-scale protocol shrunk to one desk run: five replicas per level
    /// and fewer epochs.
    pub fn desk() -> Self {
        let mut cfg = ExperimentConfig::default();
        cfg.generation.runs = 1;
        cfg.generation.desk_scale = Some(10);
        cfg.train.epochs = 8;
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Generation settings with the experiment's master seed applied.
    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            master_seed: self.master_seed,
            ..self.generation.clone()
        }
    }

    pub fn network_spec(&self) -> Result<NetworkSpec, ConfigError> {
        network_by_name(&self.network).ok_or_else(|| ConfigError::Invalid(format!("unknown network {:?}", self.network)))
    }

    pub fn evaluation_pairs(&self) -> Result<Vec<EvaluationPair>, ConfigError> {
        self.pairs
            .iter()
            .map(|s| s.parse::<EvaluationPair>().map_err(ConfigError::Invalid))
            .collect()
    }

    pub fn composite_groups(&self) -> Result<Vec<DesignGroup>, ConfigError> {
        self.composites
            .iter()
            .map(|s| match s.parse::<DesignGroup>() {
                Ok(g) if g.is_composite() => Ok(g),
                _ => Err(ConfigError::Invalid(format!("{s:?} is not a composite group"))),
            })
            .collect()
    }

    /// Base designs followed by composites.
    pub fn train_groups(&self) -> Result<Vec<DesignGroup>, ConfigError> {
        let mut groups: Vec<DesignGroup> = self.generation.designs.iter().map(|&d| DesignGroup::Base(d)).collect();
        groups.extend(self.composite_groups()?);
        Ok(groups)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.network_spec()?;
        self.generation().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.explain.lrp.validate().map_err(ConfigError::Invalid)?;
        let designs = &self.generation.designs;
        for group in self.composite_groups()? {
            if !group.members().iter().all(|d| designs.contains(d)) {
                return invalid(format!("composite {group} needs designs that are not generated"));
            }
        }
        let groups = self.train_groups()?;
        for pair in self.evaluation_pairs()? {
            if !pair.is_allowed() {
                return invalid(format!("pair {pair} is excluded from evaluation"));
            }
            if !groups.contains(&pair.train) || !designs.contains(&pair.eval) {
                return invalid(format!("pair {pair} references a design that is not generated or trained"));
            }
        }
        Ok(())
    }

    /// Short digest of every setting that affects results; the output root
    /// is excluded.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_root = PathBuf::new();
        canonical.generation.master_seed = self.master_seed;
        hex::encode(&Sha256::digest(canonical.to_toml().as_bytes())[..6])
    }

    /// Directory holding everything this configuration produces.
    pub fn output_dir(&self) -> PathBuf {
        self.output_root.join(format!("cfg-{}", self.digest()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::desk();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ExperimentConfig::from_toml("master_seed = 7\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.master_seed, 7);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.evaluation_pairs().unwrap().len(), 8);
    }

    #[test]
    fn excluded_pair_and_unknown_network_rejected() {
        assert!(ExperimentConfig::from_toml("pairs = [\"ATn-ATc\"]\n").is_err());
        assert!(ExperimentConfig::from_toml("network = \"resnet-20\"\n").is_err());
        assert!(ExperimentConfig::from_toml("composites = [\"ATc\"]\n").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn digest_ignores_output_root_only() {
        let a = ExperimentConfig::desk();
        let mut b = a.clone();
        b.output_root = PathBuf::from("/elsewhere");
        assert_eq!(a.digest(), b.digest());
        b.master_seed = 1;
        assert_ne!(a.digest(), b.digest());
    }
}
