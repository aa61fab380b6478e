//! Versioned experiment configuration (TOML). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rds_core::estimators::EstimatorKind;
use rds_core::tree::OffspringLaw;

use crate::error::{LabError, LabResult};
use crate::school::SyntheticSchoolSpec;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub replicates: usize,
    /// Master seed; `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    pub estimators: Vec<String>,
    /// Evaluate every estimator on the sample truncated at each of these
    /// generations. Empty means the full sample only.
    #[serde(default)]
    pub generations: Vec<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub model: ModelSpec,
    pub tree: TreeSpec,
    #[serde(default)]
    pub sampling: SamplingSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    TwoBlock {
        p: f64,
        q: f64,
        #[serde(default = "default_two_block_traits")]
        traits: [f64; 2],
        #[serde(default)]
        nodes_per_block: Option<usize>,
    },
    Block {
        matrix: Vec<Vec<f64>>,
        traits: Vec<f64>,
        #[serde(default)]
        nodes_per_block: Option<usize>,
    },
    /// Whitespace edge list plus a `node,trait` CSV. Paths are relative to
    /// the config file.
    EdgeList {
        path: PathBuf,
        traits: PathBuf,
    },
    School(SyntheticSchoolSpec),
}

fn default_two_block_traits() -> [f64; 2] {
    [1.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TreeSpec {
    MTree {
        m: usize,
        depth: usize,
    },
    /// Exactly one of `depth` (stop by generation) or `size` (stop by
    /// participant count).
    GaltonWatson {
        offspring: OffspringSpec,
        #[serde(default)]
        depth: Option<usize>,
        #[serde(default)]
        size: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OffspringSpec {
    Fixed { m: usize },
    OnePlusBinomial { trials: u64, prob: f64 },
    Custom { probs: Vec<f64> },
}

impl OffspringSpec {
    pub fn law(&self) -> OffspringLaw {
        match self {
            OffspringSpec::Fixed { m } => OffspringLaw::Deterministic(*m),
            OffspringSpec::OnePlusBinomial { trials, prob } => OffspringLaw::OnePlusBinomial {
                trials: *trials,
                prob: *prob,
            },
            OffspringSpec::Custom { probs } => OffspringLaw::Custom(probs.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    #[serde(default = "default_true")]
    pub replacement: bool,
    #[serde(default)]
    pub seed: SeedConfig,
    #[serde(default = "default_restarts")]
    pub max_restarts: usize,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            replacement: true,
            seed: SeedConfig::default(),
            max_restarts: default_restarts(),
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_restarts() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SeedConfig {
    #[default]
    Stationary,
    Uniform,
    Fixed {
        state: usize,
    },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> LabError {
    LabError::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Parses and validates; relative paths resolve against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> LabResult<Self> {
        let mut config: ExperimentConfig = toml::from_str(text).map_err(|e| LabError::ConfigSyntax(e.to_string()))?;
        if let ModelSpec::EdgeList { path, traits } = &mut config.model {
            *path = base.join(&*path);
            *traits = base.join(&*traits);
        }
        if let Some(out) = &mut config.output {
            *out = base.join(&*out);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn estimator_kinds(&self) -> LabResult<Vec<EstimatorKind>> {
        self.estimators
            .iter()
            .enumerate()
            .map(|(i, name)| {
                EstimatorKind::parse(name).ok_or_else(|| {
                    let known: Vec<&str> = EstimatorKind::ALL.iter().map(|k| k.name()).collect();
                    invalid(format!("estimators[{i}]"), format!("unknown estimator {name:?}; expected one of {known:?}"))
                })
            })
            .collect()
    }

    pub fn validate(&self) -> LabResult<()> {
        if self.version != CONFIG_VERSION {
            return Err(invalid("version", format!("unsupported version {}; expected {CONFIG_VERSION}", self.version)));
        }
        if self.replicates == 0 {
            return Err(invalid("replicates", "must be at least 1"));
        }
        if self.estimators.is_empty() {
            return Err(invalid("estimators", "list at least one estimator"));
        }
        self.estimator_kinds()?;
        self.validate_model()?;
        self.validate_tree()?;
        if !self.sampling.replacement {
            let has_graph = match &self.model {
                ModelSpec::TwoBlock { nodes_per_block, .. } | ModelSpec::Block { nodes_per_block, .. } => {
                    nodes_per_block.is_some()
                }
                _ => true,
            };
            if !has_graph {
                return Err(invalid(
                    "sampling.replacement",
                    "without-replacement sampling needs a node-level graph; set model.nodes_per_block",
                ));
            }
            if !matches!(self.tree, TreeSpec::GaltonWatson { size: Some(_), .. }) {
                return Err(invalid(
                    "tree",
                    "without-replacement sampling stops by size; use a galton-watson tree with `size`",
                ));
            }
        }
        Ok(())
    }

    fn validate_model(&self) -> LabResult<()> {
        match &self.model {
            ModelSpec::TwoBlock { p, q, nodes_per_block, .. } => {
                for (name, v) in [("model.p", p), ("model.q", q)] {
                    if !(*v > 0.0 && *v < 1.0) {
                        return Err(invalid(name, format!("{v} is outside (0, 1)")));
                    }
                }
                if *nodes_per_block == Some(0) {
                    return Err(invalid("model.nodes_per_block", "must be at least 1"));
                }
            }
            ModelSpec::Block {
                matrix,
                traits,
                nodes_per_block,
            } => {
                if matrix.is_empty() || matrix.iter().any(|row| row.len() != matrix.len()) {
                    return Err(invalid("model.matrix", "must be a non-empty square matrix"));
                }
                if traits.len() != matrix.len() {
                    return Err(invalid("model.traits", format!("expected {} values, got {}", matrix.len(), traits.len())));
                }
                if *nodes_per_block == Some(0) {
                    return Err(invalid("model.nodes_per_block", "must be at least 1"));
                }
            }
            ModelSpec::EdgeList { path, traits } => {
                for (name, p) in [("model.path", path), ("model.traits", traits)] {
                    if !p.is_file() {
                        return Err(invalid(name, format!("file {} does not exist", p.display())));
                    }
                }
            }
            ModelSpec::School(spec) => spec.validate().map_err(|e| match e {
                LabError::Config { field, message } => invalid(format!("model.{field}"), message),
                other => other,
            })?,
        }
        Ok(())
    }

    fn validate_tree(&self) -> LabResult<()> {
        match &self.tree {
            TreeSpec::MTree { m, .. } => {
                if *m == 0 {
                    return Err(invalid("tree.m", "must be at least 1"));
                }
            }
            TreeSpec::GaltonWatson { offspring, depth, size } => {
                offspring
                    .law()
                    .validate()
                    .map_err(|e| invalid("tree.offspring", e.to_string()))?;
                match (depth, size) {
                    (Some(_), None) => {}
                    (None, Some(0)) => return Err(invalid("tree.size", "must be at least 1")),
                    (None, Some(_)) => {}
                    _ => return Err(invalid("tree", "set exactly one of depth or size")),
                }
            }
        }
        Ok(())
    }

    /// Mean offspring count of the referral tree.
    pub fn mean_offspring(&self) -> f64 {
        match &self.tree {
            TreeSpec::MTree { m, .. } => *m as f64,
            TreeSpec::GaltonWatson { offspring, .. } => offspring.law().mean(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
version = 1
replicates = 10
seed = 7
estimators = ["mean", "gls"]

[model]
kind = "two-block"
p = 0.8
q = 0.7

[tree]
kind = "m-tree"
m = 2
depth = 4
"#;

    #[test]
    fn parses_minimal_config_with_defaults() {
        let c = ExperimentConfig::from_toml_str(BASIC, Path::new(".")).unwrap();
        assert_eq!(c.replicates, 10);
        assert!(c.sampling.replacement);
        assert_eq!(c.sampling.seed, SeedConfig::Stationary);
        assert_eq!(
            c.model,
            ModelSpec::TwoBlock {
                p: 0.8,
                q: 0.7,
                traits: [1.0, 0.0],
                nodes_per_block: None
            }
        );
        assert_eq!(c.mean_offspring(), 2.0);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig::from_toml_str(BASIC, Path::new(".")).unwrap();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string(), Path::new(".")).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let top = BASIC.replace("seed = 7", "seed = 7\nreplicats = 3");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&top, Path::new(".")),
            Err(LabError::ConfigSyntax(_))
        ));
        let nested = BASIC.replace("q = 0.7", "q = 0.7\nr = 0.1");
        assert!(ExperimentConfig::from_toml_str(&nested, Path::new(".")).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let bad = BASIC.replace("\"gls\"", "\"glss\"");
        match ExperimentConfig::from_toml_str(&bad, Path::new(".")) {
            Err(LabError::Config { field, .. }) => assert_eq!(field, "estimators[1]"),
            other => panic!("{other:?}"),
        }
        let zero = BASIC.replace("replicates = 10", "replicates = 0");
        match ExperimentConfig::from_toml_str(&zero, Path::new(".")) {
            Err(LabError::Config { field, .. }) => assert_eq!(field, "replicates"),
            other => panic!("{other:?}"),
        }
        let version = BASIC.replace("version = 1", "version = 2");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&version, Path::new(".")),
            Err(LabError::Config { field, .. }) if field == "version"
        ));
    }

    #[test]
    fn missing_files_are_reported() {
        let text = r#"
version = 1
replicates = 1
estimators = ["mean"]
[model]
kind = "edge-list"
path = "no-such-file.txt"
traits = "no-such-traits.csv"
[tree]
kind = "m-tree"
m = 2
depth = 2
"#;
        match ExperimentConfig::from_toml_str(text, Path::new("/nonexistent")) {
            Err(LabError::Config { field, .. }) => assert_eq!(field, "model.path"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gw_tree_needs_one_stopping_rule() {
        let text = BASIC.replace(
            "kind = \"m-tree\"\nm = 2\ndepth = 4",
            "kind = \"galton-watson\"\ndepth = 3\nsize = 10\noffspring = { kind = \"one-plus-binomial\", trials = 2, prob = 0.5 }",
        );
        assert!(matches!(
            ExperimentConfig::from_toml_str(&text, Path::new(".")),
            Err(LabError::Config { field, .. }) if field == "tree"
        ));
        let ok = text.replace("size = 10\n", "");
        let c = ExperimentConfig::from_toml_str(&ok, Path::new(".")).unwrap();
        assert_eq!(c.mean_offspring(), 2.0);
    }

    #[test]
    fn without_replacement_needs_a_graph() {
        let text = format!("{BASIC}\n[sampling]\nreplacement = false\n");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&text, Path::new(".")),
            Err(LabError::Config { field, .. }) if field == "sampling.replacement"
        ));
    }
}
