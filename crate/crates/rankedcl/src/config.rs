//! Run configuration: a single JSON document with blocks
//! `{train, augment, data, ranking}`, all optional with sensible defaults.
//!
//! ```json
//! {"train": {"epochs": 50, "r": 3, "hidden": [64, 32], "embed_dim": 16},
//!  "augment": {"out_size": 32},
//!  "data": {"kind": "synthetic", "tree": [["a","b"],["c","d"]],
//!           "per_class": 100, "dim": 16, "noise": 0.1, "seed": 0},
//!  "ranking": {"path": "ranking.json"}}
//! ```
//!
//! `ranking` may be a `{"path": ...}` reference or an inline ranking
//! object; when omitted it is derived from the synthetic tree (or is
//! depth-1 for detection data).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::{ranking_from_tree, SimilarityTree};
use crate::encoder::TrainConfig;
use crate::error::{Error, Result};
use crate::ranking::RankingSpec;

fn default_hidden() -> Vec<usize> {
    vec![64, 32]
}

fn default_embed_dim() -> usize {
    16
}

fn default_view_noise() -> f64 {
    0.3
}

/// The `train` block: hyperparameters plus encoder architecture.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainBlock {
    #[serde(flatten)]
    pub base: TrainConfig,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    /// Stddev of the Gaussian view augmentation applied to vector data
    /// (the two-crop analog); 0 duplicates the input instead.
    #[serde(default = "default_view_noise")]
    pub view_noise: f64,
}

impl Default for TrainBlock {
    fn default() -> Self {
        TrainBlock {
            base: TrainConfig::default(),
            hidden: default_hidden(),
            embed_dim: default_embed_dim(),
            view_noise: default_view_noise(),
        }
    }
}

impl TrainBlock {
    /// Full layer widths for a given input dimension.
    pub fn dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(self.embed_dim);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.embed_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Validation("zero-width encoder layer".into()));
        }
        if self.view_noise < 0.0 {
            return Err(Error::Validation("view_noise must be >= 0".into()));
        }
        Ok(())
    }
}

fn default_per_class() -> usize {
    100
}

fn default_dim() -> usize {
    16
}

fn default_noise() -> f64 {
    0.1
}

/// The `data` block.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataConfig {
    /// Hierarchical Gaussian clusters on the unit sphere.
    Synthetic {
        tree: SimilarityTree,
        #[serde(default = "default_per_class")]
        per_class: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    /// A detection dataset JSON file on disk.
    Detection { path: String },
}

impl Default for DataConfig {
    fn default() -> Self {
        let tree: SimilarityTree = serde_json::from_str(
            r#"[[["a","b"],["c","d"]],["e","f"]]"#,
        )
        .expect("literal tree");
        DataConfig::Synthetic {
            tree,
            per_class: default_per_class(),
            dim: default_dim(),
            noise: default_noise(),
            seed: 0,
        }
    }
}

/// The `ranking` block: a file reference or an inline spec.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RankingSource {
    Path { path: String },
    Inline(RankingSpec),
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train: TrainBlock,
    pub augment: AugmentConfig,
    pub data: DataConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranking: Option<RankingSource>,
}

impl RunConfig {
    pub fn validate(&self, base_dir: Option<&Path>) -> Result<()> {
        self.train.validate()?;
        self.augment.validate()?;
        match &self.data {
            DataConfig::Synthetic { tree, noise, dim, .. } => {
                tree.validate()?;
                if *noise < 0.0 {
                    return Err(Error::Validation("data.noise must be >= 0".into()));
                }
                if *dim == 0 {
                    return Err(Error::Validation("data.dim must be >= 1".into()));
                }
            }
            DataConfig::Detection { path } => {
                let resolved = resolve(base_dir, path);
                if !resolved.exists() {
                    return Err(Error::Validation(format!(
                        "data.path '{}' not found",
                        resolved.display()
                    )));
                }
            }
        }
        if let Some(RankingSource::Path { path }) = &self.ranking {
            let resolved = resolve(base_dir, path);
            if !resolved.exists() {
                return Err(Error::Validation(format!(
                    "ranking.path '{}' not found",
                    resolved.display()
                )));
            }
        }
        Ok(())
    }

    /// Resolve the ranking: explicit source wins; otherwise derive it from
    /// the synthetic tree, or fall back to depth-1 over the given classes.
    pub fn resolve_ranking(
        &self,
        base_dir: Option<&Path>,
        classes: &[String],
    ) -> Result<RankingSpec> {
        match &self.ranking {
            Some(RankingSource::Path { path }) => {
                let text = std::fs::read_to_string(resolve(base_dir, path))?;
                crate::ranking::parse_ranking(&text)
            }
            Some(RankingSource::Inline(spec)) => Ok(spec.clone()),
            None => match &self.data {
                DataConfig::Synthetic { tree, .. } => {
                    ranking_from_tree(tree, self.train.base.r)
                }
                _ => {
                    if self.train.base.r > 1 {
                        return Err(Error::Validation(
                            "r > 1 requires a ranking block (or synthetic tree data)"
                                .into(),
                        ));
                    }
                    RankingSpec::depth_one(classes.to_vec())
                }
            },
        }
    }
}

fn resolve(base_dir: Option<&Path>, path: &str) -> std::path::PathBuf {
    match base_dir {
        Some(dir) => dir.join(path),
        None => std::path::PathBuf::from(path),
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: RunConfig = serde_json::from_str(&text)?;
    cfg.validate(path.parent())?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = RunConfig::default();
        cfg.validate(None).unwrap();
        let spec = cfg.resolve_ranking(None, &[]).unwrap();
        assert_eq!(spec.depth(), 3);
        assert_eq!(spec.classes().len(), 6);
    }

    #[test]
    fn empty_document_parses_to_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        cfg.validate(None).unwrap();
        assert_eq!(cfg.train.base.batch_size, 32);
        assert_eq!(cfg.train.base.epochs, 200);
        assert_eq!(cfg.train.base.lr, 0.5);
        assert_eq!(cfg.train.base.tau_min, 0.1);
        assert_eq!(cfg.train.base.tau_max, 0.6);
        assert_eq!(cfg.train.base.r, 3);
    }

    #[test]
    fn partial_overrides_merge_with_defaults() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"train": {"epochs": 5, "r": 1}, "augment": {"out_size": 8}}"#,
        )
        .unwrap();
        assert_eq!(cfg.train.base.epochs, 5);
        assert_eq!(cfg.train.base.r, 1);
        assert_eq!(cfg.train.base.batch_size, 32);
        assert_eq!(cfg.augment.out_size, 8);
    }

    #[test]
    fn invalid_blocks_rejected() {
        let bad_tau: RunConfig = serde_json::from_str(
            r#"{"train": {"tau_min": 0.6, "tau_max": 0.1, "r": 3}}"#,
        )
        .unwrap();
        assert!(bad_tau.validate(None).is_err());

        let missing: RunConfig = serde_json::from_str(
            r#"{"data": {"kind": "detection", "path": "no-such-file.json"}}"#,
        )
        .unwrap();
        assert!(missing.validate(None).is_err());

        let zero_layer: RunConfig =
            serde_json::from_str(r#"{"train": {"hidden": [0]}}"#).unwrap();
        assert!(zero_layer.validate(None).is_err());
    }

    #[test]
    fn inline_ranking_round_trip() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"train": {"r": 2},
                "ranking": {"classes": ["a","b","c"], "r": 2,
                            "ranks": {"a": [["b"]], "b": [["a"]], "c": [[]]}}}"#,
        )
        .unwrap();
        let spec = cfg.resolve_ranking(None, &[]).unwrap();
        assert_eq!(spec.ranks_of("a"), &[vec!["b".to_string()]]);
    }

    #[test]
    fn ranking_required_for_deep_detection_runs() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dir.path().join("ds.json");
        std::fs::write(&ds, r#"{"classes":[],"items":[]}"#).unwrap();
        let cfg: RunConfig = serde_json::from_str(&format!(
            r#"{{"data": {{"kind": "detection", "path": {:?}}}}}"#,
            ds.to_str().unwrap()
        ))
        .unwrap();
        assert!(cfg.resolve_ranking(None, &[]).is_err());
    }

    #[test]
    fn dims_compose_architecture() {
        let block = TrainBlock::default();
        assert_eq!(block.dims(16), vec![16, 64, 32, 16]);
    }
}
