use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hthgn::encoder::{MissingFeatures, ModelConfig};
use hthgn::eval::{EvalMode, ExperimentConfig, SyntheticSpec};
use hthgn::hyperedge::{HyperConfig, HyperedgeKind};
use hthgn::numeric::AdamConfig;
use hthgn::objective::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Everything a run needs, as one flat JSON object. Every random stream is
/// derived from `seed`; repeated runs use seeds `seed..seed + runs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Snapshot TSV. Defaults to `<out>/snapshots.tsv` when that exists.
    pub data: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub runs: usize,

    pub kind: HyperedgeKind,
    pub k: usize,
    /// Hyperedge size cap; `null` disables it.
    pub p: Option<usize>,
    pub hyper: bool,
    pub low_order: bool,

    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub window: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub missing_features: MissingFeatures,
    pub temporal_attention: bool,
    pub heterogeneous_attention: bool,

    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub negatives: usize,
    pub holdout: usize,
    pub validate_every: Option<usize>,

    pub mode: EvalMode,

    pub p_values: Vec<usize>,
    pub sweep_train: bool,

    pub nodes_per_type: usize,
    pub communities: usize,
    pub snapshots: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub persistence: f64,

    pub grad_h: f64,
    pub grad_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hyper = HyperConfig::default();
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let synthetic = SyntheticSpec::default();
        Self {
            data: None,
            features: None,
            out: PathBuf::from("out"),
            seed: 0,
            runs: 5,
            kind: hyper.kind,
            k: hyper.k,
            p: hyper.p,
            hyper: true,
            low_order: true,
            hidden: model.hidden,
            heads: model.heads,
            layers: model.layers,
            window: model.window,
            dropout: model.dropout,
            leaky_slope: model.leaky_slope,
            missing_features: model.missing_features,
            temporal_attention: model.temporal_attention,
            heterogeneous_attention: model.heterogeneous_attention,
            lr: train.adam.lr,
            weight_decay: train.adam.weight_decay,
            epochs: train.epochs,
            negatives: train.negatives,
            holdout: train.holdout,
            validate_every: train.validate_every,
            mode: EvalMode::Link,
            p_values: vec![1, 2, 5, 10, 20, 50, 100],
            sweep_train: false,
            nodes_per_type: 100,
            communities: synthetic.communities,
            snapshots: synthetic.snapshots,
            p_in: synthetic.p_in,
            p_out: synthetic.p_out,
            persistence: synthetic.persistence,
            grad_h: 1e-6,
            grad_tolerance: 1e-3,
        }
    }
}

fn usage(msg: String) -> anyhow::Error {
    hthgn::Error::Usage(msg).into()
}

fn valid_keys() -> Vec<String> {
    match serde_json::to_value(RunConfig::default()) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

impl RunConfig {
    /// Resolves a config from an optional JSON file and flag overrides,
    /// flags winning.
    pub fn resolve(path: Option<&Path>, overrides: Map<String, Value>) -> Result<Self> {
        let mut object = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                match serde_json::from_str::<Value>(&text).with_context(|| format!("parsing {}", p.display()))? {
                    Value::Object(m) => m,
                    _ => return Err(usage(format!("{} must contain a flat JSON object", p.display()))),
                }
            }
            None => Map::new(),
        };
        let keys = valid_keys();
        for key in object.keys() {
            if !keys.contains(key) {
                return Err(usage(format!(
                    "unknown config key `{key}`; valid keys: {}",
                    keys.join(", ")
                )));
            }
        }
        object.extend(overrides);
        serde_json::from_value(Value::Object(object)).map_err(|e| usage(format!("invalid config value: {e}")))
    }

    pub fn seeds(&self) -> Vec<u64> {
        (self.seed..self.seed + self.runs as u64).collect()
    }

    pub fn hyper_config(&self) -> HyperConfig {
        HyperConfig {
            kind: self.kind,
            k: self.k,
            p: self.p,
            seed: self.seed,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            heads: self.heads,
            layers: self.layers,
            window: self.window,
            leaky_slope: self.leaky_slope,
            dropout: self.dropout,
            missing_features: self.missing_features,
            temporal_attention: self.temporal_attention,
            heterogeneous_attention: self.heterogeneous_attention,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            adam: AdamConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                ..AdamConfig::default()
            },
            negatives: self.negatives,
            holdout: self.holdout,
            seed,
            validate_every: self.validate_every,
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            hyper: self.hyper_config(),
            use_hyper: self.hyper,
            expansion_low_order: self.low_order,
            model: self.model_config(),
            train: self.train_config(self.seed),
            mode: self.mode,
            seeds: self.seeds(),
        }
    }

    pub fn synthetic(&self) -> SyntheticSpec {
        let base = SyntheticSpec::default();
        SyntheticSpec {
            node_types: base
                .node_types
                .iter()
                .map(|(name, _)| (name.clone(), self.nodes_per_type))
                .collect(),
            communities: self.communities,
            snapshots: self.snapshots,
            p_in: self.p_in,
            p_out: self.p_out,
            persistence: self.persistence,
            seed: self.seed,
            ..base
        }
    }
}
