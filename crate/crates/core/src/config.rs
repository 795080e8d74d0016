//! Experiment configuration: a TOML file with one section per subsystem,
//! every default overridable.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregators::AggregatorConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::evaluation::Metric;
use crate::ranker::ChunkingConfig;
use crate::synthetic::SyntheticSpec;
use crate::training::TrainConfig;

/// One model variant in the comparison grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    #[serde(flatten)]
    pub aggregator: AggregatorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub vocab: PathBuf,
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
    pub candidates: PathBuf,
    /// Evaluation-side overrides; each defaults to the training-side path.
    #[serde(default)]
    pub eval_corpus: Option<PathBuf>,
    #[serde(default)]
    pub eval_queries: Option<PathBuf>,
    #[serde(default)]
    pub eval_qrels: Option<PathBuf>,
    #[serde(default)]
    pub eval_candidates: Option<PathBuf>,
    /// Starting checkpoint for fine-tuning.
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
    /// Encoder checkpoint whose layers seed `pretrained_reuse` aggregators.
    #[serde(default)]
    pub aggregator_source: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default = "default_metrics")]
    pub metrics: Vec<String>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_run_tag")]
    pub run_tag: String,
}

fn default_metrics() -> Vec<String> {
    vec!["mrr@10".to_string()]
}
fn default_alpha() -> f64 {
    0.05
}
fn default_run_tag() -> String {
    "longrank".to_string()
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            metrics: default_metrics(),
            alpha: default_alpha(),
            run_tag: default_run_tag(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportConfig {
    /// Model names that act as significance baselines, in marker order
    /// (first gets superscript `a`, second `b`, ...).
    #[serde(default)]
    pub baselines: Vec<String>,
}

/// Ablation grids: chunk-count truncation sweeps and window/stride sweeps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default)]
    pub max_chunks: Option<Vec<usize>>,
    /// Sliding-window (window, stride) cells.
    #[serde(default)]
    pub windows: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub models: Vec<ModelSpec>,
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub chunking: ChunkingConfig,
    #[serde(default)]
    pub training: TrainConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub evaluation: EvalConfig,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let config: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: 0,
            detail: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("cannot serialize config: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must be non-empty".into()));
        }
        if self.models.is_empty() {
            return Err(Error::InvalidConfig("at least one model required".into()));
        }
        let mut names = std::collections::HashSet::new();
        for model in &self.models {
            if !names.insert(&model.name) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate model name {}",
                    model.name
                )));
            }
            model.aggregator.validate()?;
        }
        for baseline in &self.report.baselines {
            if !self.models.iter().any(|m| &m.name == baseline) {
                return Err(Error::InvalidConfig(format!(
                    "baseline {baseline} is not a configured model"
                )));
            }
        }
        self.encoder.validate()?;
        self.training.validate()?;
        for metric in &self.evaluation.metrics {
            Metric::parse(metric)?;
        }
        if let Some(spec) = &self.synthetic {
            spec.validate()?;
        }
        Ok(())
    }

    /// Check that every referenced input path exists.
    pub fn validate_paths(&self) -> Result<()> {
        let mut required: Vec<&PathBuf> = vec![
            &self.data.vocab,
            &self.data.corpus,
            &self.data.queries,
            &self.data.qrels,
            &self.data.candidates,
        ];
        for opt in [
            &self.data.eval_corpus,
            &self.data.eval_queries,
            &self.data.eval_qrels,
            &self.data.eval_candidates,
            &self.data.init_checkpoint,
            &self.data.aggregator_source,
        ]
        .into_iter()
        .flatten()
        {
            required.push(opt);
        }
        for path in required {
            if !path.exists() {
                return Err(Error::InvalidConfig(format!(
                    "referenced path does not exist: {}",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn parsed_metrics(&self) -> Result<Vec<Metric>> {
        self.evaluation.metrics.iter().map(|m| Metric::parse(m)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregators::AggregatorKind;
    use crate::chunking::ChunkScheme;
    use crate::encoder::AttentionPattern;

    fn minimal_config() -> ExperimentConfig {
        ExperimentConfig {
            seeds: vec![1, 2, 3],
            models: vec![
                ModelSpec {
                    name: "first_p".into(),
                    aggregator: AggregatorConfig::plain(AggregatorKind::FirstP),
                },
                ModelSpec {
                    name: "max_p".into(),
                    aggregator: AggregatorConfig::plain(AggregatorKind::MaxP),
                },
            ],
            encoder: EncoderConfig {
                layers: 2,
                heads: 4,
                model_dim: 32,
                ff_dim: 64,
                max_seq: 80,
                attention: AttentionPattern::dense(),
                dropout_p: 0.0,
            },
            chunking: ChunkingConfig {
                scheme: ChunkScheme::Greedy { chunk_cap: 56 },
                max_chunks: 3,
                max_query: 8,
            },
            training: TrainConfig::default(),
            data: DataConfig {
                vocab: "vocab.txt".into(),
                corpus: "corpus.tsv".into(),
                queries: "queries.tsv".into(),
                qrels: "qrels.txt".into(),
                candidates: "candidates.run".into(),
                eval_corpus: None,
                eval_queries: None,
                eval_qrels: None,
                eval_candidates: None,
                init_checkpoint: None,
                aggregator_source: None,
            },
            evaluation: EvalConfig::default(),
            report: ReportConfig {
                baselines: vec!["first_p".into()],
            },
            synthetic: None,
            sweep: None,
        }
    }

    #[test]
    fn toml_round_trip() {
        let config = minimal_config();
        let text = toml::to_string_pretty(&config).unwrap();
        let parsed: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(parsed, config);
    }

    #[test]
    fn parses_hand_written_toml() {
        let text = r#"
seeds = [7]

[[models]]
name = "attn"
kind = "parade_attn"

[encoder]
layers = 2
heads = 2
model_dim = 16
ff_dim = 32
max_seq = 128

[encoder.attention]
kind = "sparse"
local_window = 4
global_tokens = "cls_and_query"

[encoder.attention.scatter]
kind = "dilated"
rate = 2

[chunking]
max_chunks = 2
max_query = 8

[chunking.scheme]
kind = "sliding"
window = 50
stride = 25

[training]
batch_size = 4
epochs = 2

[data]
vocab = "v.txt"
corpus = "c.tsv"
queries = "q.tsv"
qrels = "qr.txt"
candidates = "cand.run"

[evaluation]
metrics = ["mrr@10", "ndcg@10", "map"]
"#;
        let config: ExperimentConfig = toml::from_str(text).unwrap();
        config.validate().unwrap();
        assert_eq!(config.models[0].aggregator.kind, AggregatorKind::ParadeAttn);
        assert_eq!(
            config.chunking.scheme,
            ChunkScheme::Sliding {
                window: 50,
                stride: 25
            }
        );
        assert_eq!(config.parsed_metrics().unwrap().len(), 3);
    }

    #[test]
    fn rejects_unknown_baseline() {
        let mut config = minimal_config();
        config.report.baselines = vec!["nonexistent".into()];
        assert!(config.validate().is_err());
    }

    #[test]
    fn rejects_duplicate_model_names() {
        let mut config = minimal_config();
        config.models[1].name = "first_p".into();
        assert!(config.validate().is_err());
    }
}
