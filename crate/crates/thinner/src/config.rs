//! Run configuration: one JSON file describing the dataset, the
//! architecture, the training schedule and the pruning settings, so a whole
//! experiment is reproducible from a single path and a seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_idx, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::network::{LayerSpec, TrainConfig};
use crate::pruning::{PruneConfig, Scheme};
use crate::scoring::Metric;

/// Everything a run needs. Loaded with [`RunConfig::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every randomness consumer derives its own stream from it.
    #[serde(default)]
    pub seed: u64,
    /// Where models, logs and reports land.
    pub out_dir: PathBuf,
    /// Fraction of the dataset held out for validation.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub pruning: PruneSettings,
}

fn default_val_fraction() -> f64 {
    0.2
}

fn default_metric() -> Metric {
    Metric::Aaws
}

fn default_scheme() -> Scheme {
    Scheme::Global
}

/// Where samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetConfig {
    /// A pair of IDX files (the MNIST container format).
    Idx { images: PathBuf, labels: PathBuf },
    /// Generated on the fly; deterministic given the seed.
    Synthetic {
        task: String,
        n: usize,
        classes: usize,
        shape: [usize; 3],
        #[serde(default = "default_noise")]
        noise: f64,
    },
}

fn default_noise() -> f64 {
    0.1
}

impl DatasetConfig {
    /// Loads or generates the samples. The seed only matters for the
    /// synthetic source.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetConfig::Idx { images, labels } => load_idx(images, labels),
            DatasetConfig::Synthetic {
                task,
                n,
                classes,
                shape,
                noise,
            } => generate_synthetic(
                &SyntheticSpec {
                    task: task.clone(),
                    classes: *classes,
                    shape: *shape,
                    noise: *noise,
                },
                *n,
                seed,
            ),
        }
    }
}

/// The architecture to build (for `train`) or to expect (for `prune`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Per-sample `(c, h, w)`.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

/// The pruning section of the file. Metric, seed and artifact directory are
/// deliberately absent — they come from the top level and the command line,
/// and [`PruneSettings::to_prune_config`] splices them in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSettings {
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default)]
    pub target_accuracy: f64,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    #[serde(default = "default_floor")]
    pub min_neurons_per_layer: usize,
    #[serde(default = "default_stats_samples")]
    pub stats_samples: usize,
    #[serde(default = "default_finetune")]
    pub finetune: TrainConfig,
}

fn default_ratio() -> f64 {
    0.05
}

fn default_max_rounds() -> usize {
    7
}

fn default_floor() -> usize {
    1
}

fn default_stats_samples() -> usize {
    1024
}

fn default_finetune() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.01,
        momentum: 0.9,
        batch_size: 32,
        epochs: 2,
        seed: 0,
    }
}

impl Default for PruneSettings {
    fn default() -> Self {
        PruneSettings {
            ratio: default_ratio(),
            target_accuracy: 0.0,
            max_rounds: default_max_rounds(),
            min_neurons_per_layer: default_floor(),
            stats_samples: default_stats_samples(),
            finetune: default_finetune(),
        }
    }
}

impl PruneSettings {
    pub fn to_prune_config(
        &self,
        metric: Metric,
        seed: u64,
        artifacts_dir: Option<PathBuf>,
    ) -> PruneConfig {
        PruneConfig {
            ratio: self.ratio,
            target_accuracy: self.target_accuracy,
            metric,
            max_rounds: self.max_rounds,
            min_neurons_per_layer: self.min_neurons_per_layer,
            finetune: self.finetune.clone(),
            stats_samples: self.stats_samples,
            seed,
            artifacts_dir,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.model.layers.is_empty() {
            return Err(Error::Config("model.layers must not be empty".into()));
        }
        if let DatasetConfig::Synthetic {
            task,
            n,
            classes,
            shape,
            noise,
        } = &self.dataset
        {
            SyntheticSpec {
                task: task.clone(),
                classes: *classes,
                shape: *shape,
                noise: *noise,
            }
            .validate()?;
            if *n == 0 {
                return Err(Error::Config("dataset.n must be >= 1".into()));
            }
            if *shape != self.model.input_shape {
                return Err(Error::Config(format!(
                    "dataset shape {:?} does not match model input_shape {:?}",
                    shape, self.model.input_shape
                )));
            }
        }
        self.train.validate()?;
        // Metric/seed placeholders: only the shared numeric fields matter here.
        self.pruning
            .to_prune_config(self.metric, 0, None)
            .validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "out_dir": "runs/demo",
            "dataset": {"source": "synthetic", "task": "bars", "n": 64,
                        "classes": 2, "shape": [1, 8, 8]},
            "model": {"input_shape": [1, 8, 8],
                      "layers": [{"kind": "flatten"},
                                 {"kind": "dense", "units": 4},
                                 {"kind": "relu"},
                                 {"kind": "dense", "units": 2},
                                 {"kind": "softmax_output"}]}
        }"#
        .to_string()
    }

    fn parse(text: &str) -> Result<RunConfig> {
        let config: RunConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    #[test]
    fn minimal_config_fills_in_defaults() {
        let config = parse(&minimal_json()).unwrap();
        assert_eq!(config.seed, 0);
        assert!((config.val_fraction - 0.2).abs() < 1e-12);
        assert_eq!(config.metric, Metric::Aaws);
        assert_eq!(config.scheme, Scheme::Global);
        assert!((config.pruning.ratio - 0.05).abs() < 1e-12);
        assert_eq!(config.pruning.max_rounds, 7);
        assert_eq!(config.pruning.min_neurons_per_layer, 1);
        assert_eq!(config.pruning.stats_samples, 1024);
        assert_eq!(config.pruning.finetune.epochs, 2);
        assert_eq!(config.train.epochs, 10);
    }

    #[test]
    fn synthetic_noise_defaults_and_dataset_loads() {
        let config = parse(&minimal_json()).unwrap();
        let DatasetConfig::Synthetic { noise, .. } = config.dataset else {
            panic!("expected synthetic");
        };
        assert!((noise - 0.1).abs() < 1e-12);
        let data = config.dataset.load(9).unwrap();
        assert_eq!(data.len(), 64);
        assert_eq!(data.classes(), 2);
    }

    #[test]
    fn unknown_top_level_keys_are_rejected() {
        let text = minimal_json().replacen("\"out_dir\"", "\"typo_dir\": 1, \"out_dir\"", 1);
        assert!(matches!(parse(&text), Err(Error::Json(_))));
    }

    #[test]
    fn shape_mismatch_between_dataset_and_model_is_caught() {
        let text = minimal_json().replacen("[1, 8, 8]", "[1, 6, 6]", 1);
        match parse(&text) {
            Err(Error::Config(msg)) => assert!(msg.contains("input_shape"), "{msg}"),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn bad_val_fraction_is_caught() {
        let mut config = parse(&minimal_json()).unwrap();
        config.val_fraction = 1.0;
        assert!(config.validate().is_err());
        config.val_fraction = 0.0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn idx_source_parses() {
        let text = minimal_json().replace(
            r#"{"source": "synthetic", "task": "bars", "n": 64,
                        "classes": 2, "shape": [1, 8, 8]}"#,
            r#"{"source": "idx", "images": "train-images.idx", "labels": "train-labels.idx"}"#,
        );
        let config = parse(&text).unwrap();
        assert!(matches!(config.dataset, DatasetConfig::Idx { .. }));
    }

    #[test]
    fn prune_settings_splice_into_a_full_config() {
        let config = parse(&minimal_json()).unwrap();
        let pc = config
            .pruning
            .to_prune_config(Metric::Std, 77, Some(PathBuf::from("/tmp/x")));
        assert_eq!(pc.metric, Metric::Std);
        assert_eq!(pc.seed, 77);
        assert_eq!(pc.artifacts_dir.as_deref(), Some(Path::new("/tmp/x")));
        assert!((pc.ratio - config.pruning.ratio).abs() < 1e-12);
        pc.validate().unwrap();
    }

    #[test]
    fn config_round_trips_through_json() {
        let config = parse(&minimal_json()).unwrap();
        let text = serde_json::to_string(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, config);
    }
}
