use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregate::VotingRule;
use crate::error::{Error, Result};
use crate::network::{ContextConfig, ContextMode, DeepCnnSpec, HeadKind, ModelSpec, OneMaxCnnSpec};
use crate::signal_io::{SplitProtocol, StageLabel};
use crate::tfr::{FilterBankKind, StftConfig};
use crate::training::TrainingConfig;

/// A full experiment, read from TOML. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory whose subdirectories are recording bundles. Relative paths
    /// are resolved against the config file's directory.
    pub bundles: PathBuf,
    pub channels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// M, filter-bank outputs per channel.
    pub filters: usize,
    pub bank: String,
    pub standardize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            filters: 20,
            bank: "triangular".into(),
            standardize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub arch: String,
    pub filters_per_width: usize,
    pub widths: Vec<usize>,
    pub head: String,
    pub mode: String,
    pub tau: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: "onemax".into(),
            filters_per_width: 1000,
            widths: vec![3, 5, 7],
            head: "shared".into(),
            mode: "one_to_many".into(),
            tau: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub passes: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub dropout: f64,
    pub balanced: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let t = TrainingConfig::default();
        TrainConfig {
            passes: t.passes,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            lambda: t.lambda_reg,
            dropout: t.dropout,
            balanced: t.balanced_batching,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub voting: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            voting: "multiplicative".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// `loso` or `kfold`.
    pub protocol: String,
    /// Fold count for `kfold`.
    pub k: usize,
    pub validation: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            protocol: "loso".into(),
            k: 20,
            validation: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds initialization, dropout and batch sampling.
    pub seed: u64,
    /// Folds trained concurrently; results do not depend on it.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { seed: 0, jobs: 1 }
    }
}

/// Everything a config resolves to once checked.
#[derive(Clone, Debug)]
pub struct ResolvedConfig {
    pub bundles: PathBuf,
    pub channels: Vec<String>,
    pub stft: StftConfig,
    pub n_filters: usize,
    pub bank: FilterBankKind,
    pub standardize: bool,
    pub spec: ModelSpec,
    pub training: TrainingConfig,
    pub voting: VotingRule,
    pub protocol: SplitProtocol,
    pub split_seed: u64,
    pub jobs: usize,
}

fn parse_field<T: std::str::FromStr<Err = Error>>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|e: Error| Error::config(key, e.to_string()))
}

fn positive(key: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::config(key, "must be positive"));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            // serde names the offending field in its message
            let key = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.starts_with("unknown field") || msg.starts_with("missing field"))
                .unwrap_or("<document>")
                .to_string();
            Error::config(key, msg)
        })
    }

    /// Reads a config file; a relative `data.bundles` is taken relative to it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.data.bundles.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.data.bundles = dir.join(&cfg.data.bundles);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every field against the preconditions of the stage that uses
    /// it, naming the first offending key.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        if self.data.channels.is_empty() {
            return Err(Error::config("data.channels", "select at least one channel"));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(c) = self.data.channels.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(Error::config("data.channels", format!("channel `{c}` listed twice")));
        }
        let stft = StftConfig::default();
        let f = &self.features;
        let bank: FilterBankKind = parse_field("features.bank", &f.bank)?;
        if f.filters < 2 || f.filters > stft.n_freq() {
            return Err(Error::config(
                "features.filters",
                format!("must lie in [2, {}]", stft.n_freq()),
            ));
        }
        let m = &self.model;
        let mode: ContextMode = parse_field("model.mode", &m.mode)?;
        let context = ContextConfig::new(mode, m.tau).map_err(|e| Error::config("model.tau", e.to_string()))?;
        let p = self.data.channels.len();
        let t = stft.n_frames(stft.sample_rate_hz as usize * 30);
        let mut spec = match m.arch.as_str() {
            "onemax" => {
                positive("model.filters_per_width", m.filters_per_width)?;
                if m.widths.is_empty() {
                    return Err(Error::config("model.widths", "give at least one filter width"));
                }
                let mut s = OneMaxCnnSpec::new(m.widths.clone(), m.filters_per_width, (p, f.filters, t), context);
                s.head = parse_field("model.head", &m.head)?;
                if bank == FilterBankKind::Learnable {
                    s.learnable_bank_bins = Some(stft.n_freq());
                }
                s.validate().map_err(|e| Error::config("model.widths", e.to_string()))?;
                ModelSpec::OneMax(s)
            }
            "deepcnn" => {
                if bank == FilterBankKind::Learnable {
                    return Err(Error::config(
                        "features.bank",
                        "the deep CNN takes fixed filter-bank images",
                    ));
                }
                if m.head != HeadKind::Shared.as_str() {
                    return Err(Error::config("model.head", "the deep CNN has a shared output layer"));
                }
                let s = DeepCnnSpec::new((p, f.filters, t), context);
                s.validate()
                    .map_err(|e| Error::config("features.filters", e.to_string()))?;
                ModelSpec::Deep(s)
            }
            other => return Err(Error::config("model.arch", format!("unknown architecture `{other}`"))),
        };
        let tr = &self.train;
        let training = TrainingConfig {
            passes: tr.passes,
            batch_size: tr.batch_size,
            learning_rate: tr.learning_rate,
            lambda_reg: tr.lambda,
            dropout: tr.dropout,
            balanced_batching: tr.balanced,
            seed: self.run.seed,
        };
        positive("train.passes", tr.passes)?;
        positive("train.batch_size", tr.batch_size)?;
        if !(tr.learning_rate > 0.0 && tr.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if !(tr.lambda >= 0.0 && tr.lambda.is_finite()) {
            return Err(Error::config("train.lambda", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&tr.dropout) {
            return Err(Error::config("train.dropout", "must lie in [0, 1)"));
        }
        if tr.balanced && tr.batch_size % StageLabel::ALL.len() != 0 {
            return Err(Error::config(
                "train.batch_size",
                format!("balanced batches need a multiple of {}", StageLabel::ALL.len()),
            ));
        }
        spec.set_dropout(tr.dropout);
        spec.set_lambda_reg(tr.lambda);
        let voting: VotingRule = parse_field("eval.voting", &self.eval.voting)?;
        let s = &self.split;
        let protocol = match s.protocol.as_str() {
            "loso" => SplitProtocol::LeaveOneSubjectOut {
                n_validation: s.validation,
            },
            "kfold" => {
                if s.k < 2 {
                    return Err(Error::config("split.k", "k-fold needs at least 2 folds"));
                }
                SplitProtocol::KFold {
                    k: s.k,
                    n_validation: s.validation,
                }
            }
            other => return Err(Error::config("split.protocol", format!("unknown protocol `{other}`"))),
        };
        positive("split.validation", s.validation)?;
        positive("run.jobs", self.run.jobs)?;
        Ok(ResolvedConfig {
            bundles: self.data.bundles.clone(),
            channels: self.data.channels.clone(),
            stft,
            n_filters: f.filters,
            bank,
            standardize: f.standardize,
            spec,
            training,
            voting,
            protocol,
            split_seed: s.seed,
            jobs: self.run.jobs,
        })
    }
}
