//! Experiment configuration.
//!
//! Every field has a default, so `{}` is a complete desk-scale configuration.
//! Unknown keys are rejected so that typos surface as errors instead of being
//! silently ignored.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::exec::Execution;
use crate::experiment::Scheme;
use crate::fl::{Mlp, PartitionSpec, TrainConfig, LENET_300_100};
use crate::power_alloc::{DEFAULT_EPSILON, DEFAULT_MAX_ITERATIONS};
use crate::quantize::Rounding;
use crate::sched_graph::DEFAULT_GRAPH_CAP;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerMode {
    /// Materialize the full scheduling graph and run the greedy MWIS.
    Graph,
    /// Round-by-round greedy selection without a graph.
    Sequential,
    /// Graph when it fits under the vertex cap, sequential otherwise.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TdmaTiming {
    /// Each slot stretches until the uncompressed model is delivered.
    #[default]
    FullDelivery,
    /// `K` fixed slots per round.
    FixedSlots,
}

/// Which devices the downlink broadcast must reach before a round starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownlinkScope {
    /// The devices scheduled in that round.
    #[default]
    Scheduled,
    /// Every device in the cell.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Gaussian class blobs instead of the IDX files.
    pub synthetic: bool,
    /// Per-pixel noise of the synthetic blobs.
    pub synthetic_noise: f64,
    /// Samples used from the front of the dataset.
    pub max_samples: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            images: PathBuf::from("data/mnist/images-idx3-ubyte"),
            labels: PathBuf::from("data/mnist/labels-idx1-ubyte"),
            synthetic: false,
            synthetic_noise: 0.35,
            max_samples: 6000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub concentration: f64,
    pub size_sigma: f64,
    pub test_fraction: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        let spec = PartitionSpec::new(1);
        Self {
            concentration: spec.concentration,
            size_sigma: spec.size_sigma,
            test_fraction: spec.test_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub channel: ChannelParams,
    /// `M`
    pub devices: usize,
    /// `K`
    pub group_size: usize,
    /// `T`
    pub rounds: usize,
    pub max_power_w: f64,
    pub slot_s: f64,
    pub schemes: Vec<Scheme>,
    pub seeds: Vec<u64>,
    pub dataset: DatasetConfig,
    pub partition: PartitionConfig,
    pub train: TrainConfig,
    pub scheduler: SchedulerMode,
    pub vertex_cap: usize,
    pub polyblock_epsilon: f64,
    pub polyblock_max_iterations: usize,
    pub quantizer_rounding: Rounding,
    pub tdma_timing: TdmaTiming,
    pub downlink_scope: DownlinkScope,
    pub execution: Execution,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            channel: ChannelParams::default(),
            devices: 30,
            group_size: 3,
            rounds: 10,
            max_power_w: 0.01,
            slot_s: 0.2,
            schemes: Scheme::ALL.to_vec(),
            seeds: vec![1],
            dataset: DatasetConfig::default(),
            partition: PartitionConfig::default(),
            train: TrainConfig::default(),
            scheduler: SchedulerMode::Auto,
            vertex_cap: DEFAULT_GRAPH_CAP,
            polyblock_epsilon: DEFAULT_EPSILON,
            polyblock_max_iterations: DEFAULT_MAX_ITERATIONS,
            quantizer_rounding: Rounding::Stochastic,
            tdma_timing: TdmaTiming::FullDelivery,
            downlink_scope: DownlinkScope::Scheduled,
            execution: Execution::Parallel,
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    /// The cell of the original simulation: 300 devices, 35 rounds, the whole
    /// dataset and round-by-round scheduling.
    pub fn full_scale() -> Self {
        Self {
            devices: 300,
            rounds: 35,
            dataset: DatasetConfig {
                max_samples: usize::MAX,
                ..DatasetConfig::default()
            },
            scheduler: SchedulerMode::Sequential,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Model size `I` in bits at full precision.
    pub fn model_bits(&self) -> f64 {
        Mlp::new(&LENET_300_100).unwrap().parameter_count() as f64 * 32.0
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            devices: self.devices,
            concentration: self.partition.concentration,
            size_sigma: self.partition.size_sigma,
            test_fraction: self.partition.test_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        if self.group_size == 0 {
            return Err(Error::config("group_size", "K must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds", "T must be at least 1"));
        }
        if self.devices < self.group_size * self.rounds {
            return Err(Error::config(
                "devices",
                format!(
                    "constraint M >= K*T violated: M={} but K*T={}*{}={}",
                    self.devices,
                    self.group_size,
                    self.rounds,
                    self.group_size * self.rounds
                ),
            ));
        }
        positive("max_power_w", self.max_power_w)?;
        positive("slot_s", self.slot_s)?;
        positive("polyblock_epsilon", self.polyblock_epsilon)?;
        if self.polyblock_max_iterations == 0 {
            return Err(Error::config("polyblock_max_iterations", "must be at least 1"));
        }
        if self.schemes.is_empty() {
            return Err(Error::config("schemes", "list at least one scheme"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "list at least one seed"));
        }
        if self.dataset.max_samples < self.devices {
            return Err(Error::config(
                "dataset.max_samples",
                format!(
                    "{} samples cannot cover {} devices",
                    self.dataset.max_samples, self.devices
                ),
            ));
        }
        if !(self.dataset.synthetic_noise >= 0.0) {
            return Err(Error::config("dataset.synthetic_noise", "must be non-negative"));
        }
        positive("partition.concentration", self.partition.concentration)?;
        if !(self.partition.size_sigma >= 0.0) {
            return Err(Error::config("partition.size_sigma", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.partition.test_fraction) {
            return Err(Error::config("partition.test_fraction", "must lie in [0, 1)"));
        }
        self.train.validate()
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be positive and finite, got {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_desk_default() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!((cfg.devices, cfg.group_size, cfg.rounds), (30, 3, 10));
        assert_eq!(cfg.model_bits(), 8_531_520.0);
    }

    #[test]
    fn dump_reparses() {
        for cfg in [ExperimentConfig::default(), ExperimentConfig::full_scale()] {
            let text = cfg.to_json();
            let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn names_the_violated_field() {
        let err = ExperimentConfig::from_json(r#"{"devices": 5, "group_size": 3, "rounds": 2}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("devices") && msg.contains("M >= K*T"), "{msg}");

        let err = ExperimentConfig::from_json(r#"{"slot_s": 0}"#).unwrap_err();
        assert!(err.to_string().contains("slot_s"));

        let err = ExperimentConfig::from_json(r#"{"train": {"batch_size": 0}}"#).unwrap_err();
        assert!(err.to_string().contains("train.batch_size"));
    }

    #[test]
    fn rejects_unknown_keys_and_schemes() {
        assert!(ExperimentConfig::from_json(r#"{"devcies": 30}"#).is_err());
        let err = ExperimentConfig::from_json(r#"{"schemes": ["fastest"]}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("opt_sched_opt_power"), "{msg}");
    }
}
