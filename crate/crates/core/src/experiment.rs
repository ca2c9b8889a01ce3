//! End-to-end runs: topology and channel traces, scheduling, power control,
//! rate-adaptive quantization, federated training and time accounting.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::channel::{self, downlink_time, draw_channel, noma_rates, tdma_rate};
use crate::config::{DownlinkScope, ExperimentConfig, SchedulerMode, TdmaTiming};
use crate::exec;
use crate::fl::{self, aggregate, evaluate, local_train, partition_noniid, Dataset, LocalUpdate, Mlp, Partition};
use crate::power_alloc::{solve_polyblock, PowerProblem};
use crate::quantize::{plan_compression, quantize_update_with, FULL_PRECISION_BITS};
use crate::sched_graph::{self, DeviceId, SchedulePattern, SchedulingGraph};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    OptSchedOptPower,
    OptSchedMaxPower,
    RandSchedOptPower,
    RandSchedMaxPower,
    TdmaFedAvg,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::OptSchedOptPower,
        Scheme::OptSchedMaxPower,
        Scheme::RandSchedOptPower,
        Scheme::RandSchedMaxPower,
        Scheme::TdmaFedAvg,
    ];

    pub const NOMA: [Scheme; 4] = [
        Scheme::OptSchedOptPower,
        Scheme::OptSchedMaxPower,
        Scheme::RandSchedOptPower,
        Scheme::RandSchedMaxPower,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::OptSchedOptPower => "opt_sched_opt_power",
            Scheme::OptSchedMaxPower => "opt_sched_max_power",
            Scheme::RandSchedOptPower => "rand_sched_opt_power",
            Scheme::RandSchedMaxPower => "rand_sched_max_power",
            Scheme::TdmaFedAvg => "tdma_fed_avg",
        }
    }

    pub fn optimal_scheduling(self) -> bool {
        matches!(self, Scheme::OptSchedOptPower | Scheme::OptSchedMaxPower)
    }

    pub fn optimal_power(self) -> bool {
        matches!(self, Scheme::OptSchedOptPower | Scheme::RandSchedOptPower)
    }

    pub fn is_tdma(self) -> bool {
        self == Scheme::TdmaFedAvg
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    /// Accepts the snake-case names and their CamelCase spellings.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| *c != '_' && *c != '-')
            .collect::<String>()
            .to_lowercase();
        Scheme::ALL
            .into_iter()
            .find(|v| v.name().replace('_', "") == key)
            .ok_or_else(|| {
                let names: Vec<&str> = Scheme::ALL.iter().map(|v| v.name()).collect();
                Error::config(
                    "schemes",
                    format!("unknown scheme `{s}`; valid schemes: {}", names.join(", ")),
                )
            })
    }
}

impl Serialize for Scheme {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Scheme {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Device positions uniform in the cell disc around the parameter server.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub positions: Vec<(f64, f64)>,
    pub distances: Vec<f64>,
}

impl Topology {
    pub fn draw(devices: usize, radius: f64, seed_value: u64) -> Self {
        let mut rng = seed::keyed_rng(seed::derive(seed_value, "topology"), &[]);
        let mut positions = Vec::with_capacity(devices);
        let mut distances = Vec::with_capacity(devices);
        for _ in 0..devices {
            // 1 - u lies in (0, 1], so no device sits on the server.
            let r = radius * (1.0 - rng.random::<f64>()).sqrt();
            let phi = rng.random::<f64>() * std::f64::consts::TAU;
            positions.push((r * phi.cos(), r * phi.sin()));
            distances.push(r);
        }
        Self { positions, distances }
    }
}

/// Everything the schemes of one seed share: devices, data shards and the
/// fading trace, so paired runs see identical conditions.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub topology: Topology,
    pub partition: Partition,
    /// `|D_k| / |D|`.
    pub weights: Vec<f64>,
    pub test: Vec<usize>,
    uplink: Vec<Vec<f64>>,
    downlink_cnr: Vec<Vec<f64>>,
}

impl Scenario {
    pub fn new(cfg: &ExperimentConfig, data: &Dataset, seed_value: u64) -> Result<Self> {
        let topology = Topology::draw(cfg.devices, cfg.channel.cell_radius_m, seed_value);
        let large_scale = topology
            .distances
            .iter()
            .map(|&d| cfg.channel.path_loss(d))
            .collect::<Result<Vec<f64>>>()?;
        let up_seed = seed::derive(seed_value, "channel");
        let down_seed = seed::derive(seed_value, "downlink");
        let down_noise = cfg.channel.downlink_noise_w();
        let mut uplink = Vec::with_capacity(cfg.rounds);
        let mut downlink_cnr = Vec::with_capacity(cfg.rounds);
        for t in 0..cfg.rounds {
            uplink.push(
                (0..cfg.devices)
                    .map(|m| draw_channel(up_seed, m, t, large_scale[m]).squared_gain())
                    .collect(),
            );
            downlink_cnr.push(
                (0..cfg.devices)
                    .map(|m| draw_channel(down_seed, m, t, large_scale[m]).squared_gain() / down_noise)
                    .collect(),
            );
        }
        let partition = partition_noniid(
            data.labels(),
            cfg.partition_spec(),
            seed::derive(seed_value, "partition"),
        )?;
        let weights = partition.weights();
        let test = partition.pooled_test();
        Ok(Self {
            seed: seed_value,
            topology,
            partition,
            weights,
            test,
            uplink,
            downlink_cnr,
        })
    }

    /// Uplink `g = |h|^2` of every device in round `t` (0-based).
    pub fn uplink_gains(&self, t: usize) -> &[f64] {
        &self.uplink[t]
    }

    /// Downlink channel-to-noise ratio of every device in round `t`.
    pub fn downlink_cnr(&self, t: usize) -> &[f64] {
        &self.downlink_cnr[t]
    }
}

/// Powers and rates of one group in one round under a scheme's rules.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAllocation {
    pub powers: Vec<f64>,
    pub gains: Vec<f64>,
    pub weights: Vec<f64>,
    /// bits/s/Hz per device, realized decode order for NOMA.
    pub rates: Vec<f64>,
}

impl GroupAllocation {
    pub fn weighted_sum_rate(&self) -> f64 {
        self.rates.iter().zip(&self.weights).map(|(r, w)| r * w).sum()
    }
}

pub fn allocate(
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    scheme: Scheme,
    group: &[DeviceId],
    t: usize,
) -> Result<GroupAllocation> {
    let all = scenario.uplink_gains(t);
    let gains: Vec<f64> = group.iter().map(|&m| all[m]).collect();
    let weights: Vec<f64> = group.iter().map(|&m| scenario.weights[m]).collect();
    let noise = cfg.channel.uplink_noise_w();
    let max = vec![cfg.max_power_w; group.len()];
    if scheme.is_tdma() {
        let rates = gains.iter().map(|&g| tdma_rate(cfg.max_power_w, g, noise)).collect();
        return Ok(GroupAllocation {
            powers: max,
            gains,
            weights,
            rates,
        });
    }
    let powers = if scheme.optimal_power() {
        let problem = PowerProblem::new(gains.clone(), max, noise, weights.clone())?;
        let s = solve_polyblock(&problem, cfg.polyblock_epsilon, cfg.polyblock_max_iterations)?;
        s.powers
    } else {
        max
    };
    let rates = noma_rates(&powers, &gains, noise)?.spectral_efficiency;
    Ok(GroupAllocation {
        powers,
        gains,
        weights,
        rates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMethod {
    Graph,
    Sequential,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleOutcome {
    pub pattern: SchedulePattern,
    pub method: ScheduleMethod,
    /// Rounds the greedy MWIS left empty and the sequential pass filled.
    pub filled: Vec<usize>,
}

/// Resolves `auto` against the vertex cap.
pub fn resolve_scheduler(cfg: &ExperimentConfig) -> ScheduleMethod {
    match cfg.scheduler {
        SchedulerMode::Graph => ScheduleMethod::Graph,
        SchedulerMode::Sequential => ScheduleMethod::Sequential,
        SchedulerMode::Auto => {
            if SchedulingGraph::vertex_count(cfg.devices, cfg.group_size, cfg.rounds) <= cfg.vertex_cap as u128 {
                ScheduleMethod::Graph
            } else {
                ScheduleMethod::Sequential
            }
        }
    }
}

/// Uniform `K`-subsets of the devices not yet scheduled.
pub fn random_schedule(devices: usize, group_size: usize, rounds: usize, seed_value: u64) -> SchedulePattern {
    let mut rng = seed::keyed_rng(seed::derive(seed_value, "random-schedule"), &[]);
    let mut pool: Vec<DeviceId> = (0..devices).collect();
    let mut pattern = SchedulePattern::empty(rounds);
    for t in 0..rounds {
        let take = group_size.min(pool.len());
        let mut picks = index::sample(&mut rng, pool.len(), take).into_vec();
        picks.sort_unstable_by(|a, b| b.cmp(a));
        let mut group: Vec<DeviceId> = picks.into_iter().map(|i| pool.swap_remove(i)).collect();
        group.sort_unstable();
        pattern.rounds[t] = group;
    }
    pattern
}

/// Vertex weight: the group's weighted sum rate under the scheme's power
/// rule. Groups whose power problem is degenerate weigh nothing.
fn vertex_weight(cfg: &ExperimentConfig, scenario: &Scenario, scheme: Scheme, group: &[DeviceId], t: usize) -> f64 {
    match allocate(cfg, scenario, scheme, group, t) {
        Ok(a) => a.weighted_sum_rate(),
        Err(e) => {
            log::warn!("group {group:?} in round {}: {e}", t + 1);
            0.0
        }
    }
}

pub fn plan_schedule(cfg: &ExperimentConfig, scenario: &Scenario, scheme: Scheme) -> Result<ScheduleOutcome> {
    let (m, k, rounds) = (cfg.devices, cfg.group_size, cfg.rounds);
    if !scheme.optimal_scheduling() {
        return Ok(ScheduleOutcome {
            pattern: random_schedule(m, k, rounds, scenario.seed),
            method: ScheduleMethod::Random,
            filled: Vec::new(),
        });
    }
    let weight = |g: &[DeviceId], t: usize| vertex_weight(cfg, scenario, scheme, g, t);
    let method = resolve_scheduler(cfg);
    match method {
        ScheduleMethod::Graph => {
            let graph = SchedulingGraph::build(m, k, rounds, cfg.vertex_cap, cfg.execution, weight)?;
            let greedy = graph.greedy_mwis();
            if greedy.fallbacks > 0 {
                log::info!("greedy MWIS used the fallback rule {} times", greedy.fallbacks);
            }
            let mut pattern = graph.pattern_of(&greedy.selected);
            let filled = sched_graph::sequential_fill(&mut pattern, m, k, cfg.execution, weight);
            if !filled.is_empty() {
                log::warn!("greedy MWIS left rounds {filled:?} empty; filled sequentially");
            }
            Ok(ScheduleOutcome {
                pattern,
                method,
                filled,
            })
        }
        _ => Ok(ScheduleOutcome {
            pattern: sched_graph::sequential_schedule(m, k, rounds, cfg.execution, weight),
            method: ScheduleMethod::Sequential,
            filled: Vec::new(),
        }),
    }
}

/// Uplink time of one round: one shared slot for NOMA; for TDMA either the
/// per-device delivery times back to back or `K` fixed slots.
pub fn uplink_time(scheme: Scheme, timing: TdmaTiming, group_size: usize, slot_s: f64, tdma_upload_s: &[f64]) -> f64 {
    if !scheme.is_tdma() {
        return slot_s;
    }
    match timing {
        TdmaTiming::FullDelivery => tdma_upload_s.iter().sum(),
        TdmaTiming::FixedSlots => group_size as f64 * slot_s,
    }
}

/// Wall-clock time of one round, communication only.
pub fn account_time(
    scheme: Scheme,
    timing: TdmaTiming,
    group_size: usize,
    slot_s: f64,
    downlink_s: f64,
    tdma_upload_s: &[f64],
) -> f64 {
    uplink_time(scheme, timing, group_size, slot_s, tdma_upload_s) + downlink_s
}

/// Rounds finished within `budget` seconds given cumulative round end times.
pub fn rounds_completed(cumulative: &[f64], budget: f64) -> usize {
    cumulative.iter().take_while(|&&c| c <= budget).count()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    /// 1-based.
    pub round: usize,
    pub devices: Vec<DeviceId>,
    pub powers_w: Vec<f64>,
    pub gains: Vec<f64>,
    pub weights: Vec<f64>,
    pub rates: Vec<f64>,
    pub bit_budgets: Vec<f64>,
    /// 0 for a device left silent by the power allocation.
    pub bit_widths: Vec<u32>,
    pub compression_rates: Vec<f64>,
    pub weighted_sum_rate: f64,
    pub uplink_time_s: f64,
    pub downlink_time_s: f64,
    pub cumulative_time_s: f64,
    pub test_accuracy: f64,
    /// Accuracy of the new global model on each scheduled device's own test split.
    pub device_accuracies: Vec<Option<f64>>,
    pub filled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub run_id: String,
    pub scheme: Scheme,
    pub seed: u64,
    pub scheduler: ScheduleMethod,
    pub schedule: SchedulePattern,
    pub rounds: Vec<RoundMetrics>,
}

impl RunResult {
    pub fn final_accuracy(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.test_accuracy)
    }

    /// Mean `r_k` over every device that transmitted.
    pub fn mean_compression_rate(&self) -> f64 {
        let rates: Vec<f64> = self
            .rounds
            .iter()
            .flat_map(|r| r.compression_rates.iter().copied())
            .filter(|r| r.is_finite())
            .collect();
        if rates.is_empty() {
            f64::NAN
        } else {
            rates.iter().sum::<f64>() / rates.len() as f64
        }
    }

    pub fn cumulative_times(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.cumulative_time_s).collect()
    }
}

/// Loads the configured dataset, truncated to `max_samples`.
pub fn load_dataset(cfg: &ExperimentConfig, base: &Path) -> Result<Dataset> {
    let d = &cfg.dataset;
    if d.synthetic {
        let n = d.max_samples.min(60_000);
        return Ok(fl::synthetic(
            n,
            784,
            d.synthetic_noise,
            seed::derive(cfg.seeds[0], "synthetic"),
        ));
    }
    let images = base.join(&d.images);
    let labels = base.join(&d.labels);
    for p in [&images, &labels] {
        if !p.exists() {
            return Err(Error::config(
                "dataset",
                format!(
                    "file {} not found; run scripts/fetch_mnist.py or set \"dataset\": {{\"synthetic\": true}}",
                    p.display()
                ),
            ));
        }
    }
    let data = fl::load_idx(&images, &labels)?;
    Ok(if data.len() > d.max_samples {
        data.head(d.max_samples)
    } else {
        data
    })
}

/// Runs one scheme for `T` rounds.
pub fn run_scheme(cfg: &ExperimentConfig, data: &Dataset, scenario: &Scenario, scheme: Scheme) -> Result<RunResult> {
    cfg.validate()?;
    let exec = cfg.execution;
    let model = Mlp::lenet_300_100();
    if data.dim() != model.input_dim() {
        return Err(Error::domain(format!(
            "dataset has {} features, the model takes {}",
            data.dim(),
            model.input_dim()
        )));
    }
    let model_bits = cfg.model_bits();
    let tensors = model.tensor_ranges();
    let schedule = plan_schedule(cfg, scenario, scheme)?;
    let violations = sched_graph::validate_pattern(&schedule.pattern, cfg.devices, cfg.group_size, cfg.rounds);
    if let Some(v) = violations.first() {
        return Err(Error::domain(format!("schedule is infeasible: {v}")));
    }
    let bandwidth = cfg.channel.uplink_bandwidth_hz;
    let local_seed = seed::derive(scenario.seed, "local-sgd");
    let dither_seed = seed::derive(scenario.seed, "dither");
    let mut theta = model.init(seed::derive(scenario.seed, "model"));
    let mut clock = 0.0;
    let mut rounds = Vec::with_capacity(cfg.rounds);

    for (t, group) in schedule.pattern.rounds.iter().enumerate() {
        let alloc = allocate(cfg, scenario, scheme, group, t)?;
        let k = group.len();
        let mut budgets = Vec::with_capacity(k);
        let mut widths = Vec::with_capacity(k);
        let mut compression = Vec::with_capacity(k);
        let mut tdma_upload = Vec::new();
        for &r in &alloc.rates {
            if scheme.is_tdma() {
                // No compression on the TDMA baseline.
                let full = model_bits / (bandwidth * r);
                tdma_upload.push(full);
                budgets.push(match cfg.tdma_timing {
                    TdmaTiming::FullDelivery => model_bits,
                    TdmaTiming::FixedSlots => bandwidth * r * cfg.slot_s,
                });
                widths.push(FULL_PRECISION_BITS);
                compression.push(1.0);
            } else if r > 0.0 {
                let plan = plan_compression(model_bits, bandwidth * r * cfg.slot_s)?;
                budgets.push(plan.bit_budget);
                widths.push(plan.bit_width);
                compression.push(plan.compression_rate);
            } else {
                budgets.push(0.0);
                widths.push(0);
                compression.push(f64::INFINITY);
            }
        }

        let active: Vec<usize> = (0..k).filter(|&i| widths[i] > 0).collect();
        let updates = exec::map(exec, &active, |&i| -> Result<LocalUpdate> {
            let device = group[i];
            let shard = &scenario.partition.shards[device];
            let mut rng = seed::keyed_rng(local_seed, &[device as u64, t as u64]);
            let mut u = local_train(
                &model,
                &theta,
                data,
                &shard.train,
                shard.len(),
                &cfg.train,
                &mut rng,
                device,
                t + 1,
            )?;
            if widths[i] < FULL_PRECISION_BITS {
                // One scale per weight matrix and bias vector.
                let mut dither = seed::keyed_rng(dither_seed, &[device as u64, t as u64]);
                for r in &tensors {
                    let q = quantize_update_with(&u.delta[r.clone()], widths[i], cfg.quantizer_rounding, &mut dither)?
                        .reconstruct();
                    u.delta[r.clone()].copy_from_slice(&q);
                }
            }
            u.bit_width = widths[i];
            Ok(u)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        if updates.is_empty() {
            log::warn!("round {}: no device could transmit; model unchanged", t + 1);
        } else {
            theta = aggregate(&theta, &updates)?;
        }
        let accuracy = evaluate(&model, &theta, data, &scenario.test, exec);
        let device_accuracies: Vec<Option<f64>> = group
            .iter()
            .map(|&m| {
                let test = &scenario.partition.shards[m].test;
                (!test.is_empty()).then(|| evaluate(&model, &theta, data, test, exec))
            })
            .collect();
        log::debug!("round {}: per-device accuracy {device_accuracies:?}", t + 1);

        let cnr = scenario.downlink_cnr(t);
        let receivers: Vec<f64> = match cfg.downlink_scope {
            DownlinkScope::Scheduled => group.iter().map(|&m| cnr[m]).collect(),
            DownlinkScope::All => cnr.to_vec(),
        };
        let downlink = downlink_time(
            model_bits,
            &receivers,
            cfg.channel.ps_tx_power_w,
            cfg.channel.downlink_bandwidth_hz,
        )?;
        let uplink = uplink_time(scheme, cfg.tdma_timing, cfg.group_size, cfg.slot_s, &tdma_upload);
        clock += uplink + downlink;

        log::info!(
            "{scheme} seed {} round {}: devices {group:?}, bits {widths:?}, accuracy {accuracy:.4}, time {clock:.3}s",
            scenario.seed,
            t + 1
        );
        rounds.push(RoundMetrics {
            round: t + 1,
            devices: group.clone(),
            weighted_sum_rate: alloc.weighted_sum_rate(),
            powers_w: alloc.powers,
            gains: alloc.gains,
            weights: alloc.weights,
            rates: alloc.rates,
            bit_budgets: budgets,
            bit_widths: widths,
            compression_rates: compression,
            uplink_time_s: uplink,
            downlink_time_s: downlink,
            cumulative_time_s: clock,
            test_accuracy: accuracy,
            device_accuracies,
            filled: schedule.filled.contains(&t),
        });
    }
    Ok(RunResult {
        run_id: format!("{}-seed{}", scheme.name(), scenario.seed),
        scheme,
        seed: scenario.seed,
        scheduler: schedule.method,
        schedule: schedule.pattern,
        rounds,
    })
}

/// Seed-averaged curve of one scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub scheme: Scheme,
    /// `(round, mean cumulative time, mean accuracy)`.
    pub points: Vec<(usize, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub runs: Vec<RunResult>,
    /// One per entry of the configured scheme list.
    pub curves: Vec<Curve>,
}

pub const METRICS_HEADER: [&str; 14] = [
    "run_id",
    "scheme",
    "seed",
    "round",
    "device_ids",
    "p_k_watts",
    "R_k",
    "c_k_bits",
    "b_k",
    "weighted_sum_rate",
    "uplink_time_s",
    "downlink_time_s",
    "cumulative_time_s",
    "test_accuracy",
];

/// Runs every configured scheme on every seed. Schemes of one seed share a
/// [`Scenario`].
pub fn compare_schemes(cfg: &ExperimentConfig, data: &Dataset) -> Result<Comparison> {
    cfg.validate()?;
    let mut runs = Vec::new();
    let mut by_entry: Vec<Vec<usize>> = vec![Vec::new(); cfg.schemes.len()];
    for &s in &cfg.seeds {
        let scenario = Scenario::new(cfg, data, s)?;
        for (e, &scheme) in cfg.schemes.iter().enumerate() {
            by_entry[e].push(runs.len());
            runs.push(run_scheme(cfg, data, &scenario, scheme)?);
        }
    }
    let curves = by_entry
        .iter()
        .zip(&cfg.schemes)
        .map(|(ids, &scheme)| {
            let n = ids.len() as f64;
            let points = (0..cfg.rounds)
                .map(|t| {
                    let time = ids.iter().map(|&i| runs[i].rounds[t].cumulative_time_s).sum::<f64>() / n;
                    let acc = ids.iter().map(|&i| runs[i].rounds[t].test_accuracy).sum::<f64>() / n;
                    (t + 1, time, acc)
                })
                .collect();
            Curve { scheme, points }
        })
        .collect();
    Ok(Comparison { runs, curves })
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

pub fn write_metrics_csv(path: &Path, runs: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for run in runs {
        for r in &run.rounds {
            w.write_record([
                run.run_id.clone(),
                run.scheme.name().to_string(),
                run.seed.to_string(),
                r.round.to_string(),
                join(&r.devices),
                join(&r.powers_w),
                join(&r.rates),
                join(&r.bit_budgets),
                join(&r.bit_widths),
                r.weighted_sum_rate.to_string(),
                r.uplink_time_s.to_string(),
                r.downlink_time_s.to_string(),
                r.cumulative_time_s.to_string(),
                r.test_accuracy.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct RunSummary<'a> {
    run_id: &'a str,
    scheme: Scheme,
    seed: u64,
    scheduler: ScheduleMethod,
    final_accuracy: f64,
    mean_compression_rate: Option<f64>,
    total_time_s: f64,
    filled_rounds: usize,
}

#[derive(Debug, Clone, Serialize)]
struct SchemeSummary {
    mean_final_accuracy: f64,
    mean_compression_rate: Option<f64>,
}

/// Writes `metrics.csv`, one `curve_<scheme>.csv` per list entry and
/// `summary.json`; returns the written paths.
pub fn write_outputs(dir: &Path, comparison: &Comparison) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let metrics = dir.join("metrics.csv");
    write_metrics_csv(&metrics, &comparison.runs)?;
    written.push(metrics);

    let mut seen: BTreeMap<Scheme, usize> = BTreeMap::new();
    for curve in &comparison.curves {
        let n = seen.entry(curve.scheme).or_insert(0);
        *n += 1;
        let name = if *n == 1 {
            format!("curve_{}.csv", curve.scheme)
        } else {
            format!("curve_{}_{}.csv", curve.scheme, n)
        };
        let path = dir.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["round", "cumulative_time_s", "test_accuracy"])?;
        for (round, time, acc) in &curve.points {
            w.write_record([round.to_string(), time.to_string(), acc.to_string()])?;
        }
        w.flush()?;
        written.push(path);
    }

    let finite = |v: f64| v.is_finite().then_some(v);
    let runs: Vec<RunSummary> = comparison
        .runs
        .iter()
        .map(|r| RunSummary {
            run_id: &r.run_id,
            scheme: r.scheme,
            seed: r.seed,
            scheduler: r.scheduler,
            final_accuracy: r.final_accuracy(),
            mean_compression_rate: finite(r.mean_compression_rate()),
            total_time_s: r.rounds.last().map_or(0.0, |x| x.cumulative_time_s),
            filled_rounds: r.rounds.iter().filter(|x| x.filled).count(),
        })
        .collect();
    let mut schemes: BTreeMap<&str, SchemeSummary> = BTreeMap::new();
    for scheme in Scheme::ALL {
        let mine: Vec<&RunResult> = comparison.runs.iter().filter(|r| r.scheme == scheme).collect();
        if mine.is_empty() {
            continue;
        }
        let acc = mine.iter().map(|r| r.final_accuracy()).sum::<f64>() / mine.len() as f64;
        let rates: Vec<f64> = mine
            .iter()
            .map(|r| r.mean_compression_rate())
            .filter(|v| v.is_finite())
            .collect();
        schemes.insert(
            scheme.name(),
            SchemeSummary {
                mean_final_accuracy: acc,
                mean_compression_rate: (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64),
            },
        );
    }
    let summary = serde_json::json!({ "runs": runs, "schemes": schemes });
    let path = dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")?;
    written.push(path);
    Ok(written)
}

/// Weighted sum rate of a round recomputed from its logged powers and
/// gains.
pub fn recompute_weighted_sum_rate(cfg: &ExperimentConfig, scheme: Scheme, r: &RoundMetrics) -> Result<f64> {
    let noise = cfg.channel.uplink_noise_w();
    let rates = if scheme.is_tdma() {
        r.powers_w
            .iter()
            .zip(&r.gains)
            .map(|(&p, &g)| tdma_rate(p, g, noise))
            .collect()
    } else {
        channel::noma_rates(&r.powers_w, &r.gains, noise)?.spectral_efficiency
    };
    Ok(rates.iter().zip(&r.weights).map(|(a, b)| a * b).sum())
}
