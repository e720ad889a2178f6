//! Training configuration: TOML file with one section per component and
//! dotted-path overrides such as `dbscan.ms=4`.

use serde::{Deserialize, Serialize};

use crate::clustering::DbscanConfig;
use crate::episodes::{EpisodeConfig, EpisodeMode};
use crate::error::{Error, Result};
use crate::eval::EvalProtocol;
use crate::losses::{LossConfig, LossKind};
use crate::nn::{Activation, OptimizerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnExhausted {
    /// Log a clustering-only round and continue with the next one.
    SkipRound,
    /// Save state and stop with a round-failed error.
    Abort,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![64, 64],
            output_dim: 64,
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut d = vec![input_dim];
        d.extend(&self.hidden);
        d.push(self.output_dim);
        d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    pub k: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { k: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub rounds: usize,
    pub epochs_per_round: usize,
    /// Episodes per round; derived from epochs and batch count when unset.
    pub episodes_per_round: Option<usize>,
    pub seed: u64,
    /// Zero the Adam moments at the start of every round.
    pub reset_optimizer: bool,
    pub on_exhausted: OnExhausted,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub metric: MetricConfig,
    pub dbscan: DbscanConfig,
    pub episodes: EpisodeConfig,
    pub loss: LossConfig,
    pub eval: EvalProtocol,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rounds: 20,
            epochs_per_round: 50,
            episodes_per_round: None,
            seed: 0,
            reset_optimizer: false,
            on_exhausted: OnExhausted::SkipRound,
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            metric: MetricConfig::default(),
            dbscan: DbscanConfig::default(),
            episodes: EpisodeConfig::triplet_preset(),
            loss: LossConfig::default(),
            eval: EvalProtocol::default(),
        }
    }
}

impl TrainConfig {
    /// Settings for the synthetic benchmark fixture (`SyntheticSpec::benchmark`).
    pub fn benchmark() -> Self {
        let mut c = TrainConfig {
            rounds: 10,
            ..Default::default()
        };
        c.model.output_dim = 32;
        c.model.activation = Activation::Linear;
        c.optimizer.learning_rate = 0.0005;
        c.metric.k = 6;
        c
    }

    /// Switch to the prototype loss with its 60-way episodes.
    pub fn with_prototype_loss(mut self) -> Self {
        self.episodes = EpisodeConfig {
            n_c_test: self.eval.way,
            ..EpisodeConfig::prototype_preset(self.eval.shot)
        };
        self.loss.kind = LossKind::Prototype;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if self.epochs_per_round == 0 {
            return Err(Error::Config("epochs_per_round must be >= 1".into()));
        }
        if self.model.output_dim == 0 || self.model.hidden.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.metric.k == 0 {
            return Err(Error::Config("metric.k must be >= 1".into()));
        }
        self.optimizer.validate()?;
        self.dbscan.validate()?;
        self.episodes.validate()?;
        self.loss.validate()?;
        self.eval.validate()?;
        let proto_loss = self.loss.kind == LossKind::Prototype;
        let proto_eps = self.episodes.mode == EpisodeMode::Prototype;
        if proto_loss != proto_eps {
            return Err(Error::Config(
                "loss.kind = prototype requires episodes.mode = prototype and vice versa".into(),
            ));
        }
        if proto_eps && self.episodes.n_s != self.eval.shot {
            return Err(Error::Config(format!(
                "episodes.n_s ({}) must equal eval.shot ({})",
                self.episodes.n_s, self.eval.shot
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Apply `dotted.key=value` overrides. Values parse as TOML, falling back
    /// to a bare string. Unknown keys are rejected.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let path: Vec<&str> = key.trim().split('.').collect();
            if path.iter().any(|p| p.is_empty()) {
                return Err(Error::Config(format!("bad override key {key:?}")));
            }
            let value = parse_value(raw.trim());
            let mut node = &mut table;
            for part in &path[..path.len() - 1] {
                let entry = node
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                node = entry
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("{key}: {part} is not a section")))?;
            }
            node.insert(path[path.len() - 1].to_string(), value);
        }
        let cfg: TrainConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
