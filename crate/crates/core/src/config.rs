//! Configuration schema, validation, and the run manifest.
//!
//! Configs are TOML with a `schema_version` key. Every field has a
//! default, so an empty file resolves to a complete, feasible setup; the
//! fully resolved config is echoed into the run manifest next to the
//! outputs so any run can be reproduced exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::types::Point;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Workload ceiling the action projection steers to when the queue
/// stability constraint would otherwise be violated.
pub const WORKLOAD_CEILING: f64 = 0.99;

fn d_schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "d_schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub rsu: RsuSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub category_defaults: CategorySection,
    /// Optional per-category overrides; entry `j` overrides category `j`.
    #[serde(default)]
    pub categories: Vec<CategorySection>,
    #[serde(default)]
    pub views: ViewsSection,
    #[serde(default)]
    pub aov: AovSection,
    #[serde(default)]
    pub mobility: MobilitySection,
    #[serde(default)]
    pub allocation: AllocationSection,
    #[serde(default)]
    pub agents: AgentsSection,
    #[serde(default)]
    pub train: TrainSection,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config resolves via defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    /// Slot length in seconds.
    pub slot_length_s: f64,
    /// Number of slots in the scheduling period.
    pub horizon_slots: u32,
    /// Number of vehicles.
    pub vehicles: u32,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            slot_length_s: 1.0,
            horizon_slots: 300,
            vehicles: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RsuSection {
    pub location: [f64; 2],
    pub range_m: f64,
    /// Total V2I bandwidth, Hz.
    pub bandwidth_hz: f64,
}

impl Default for RsuSection {
    fn default() -> Self {
        RsuSection {
            location: [1500.0, 1500.0],
            range_m: 500.0,
            bandwidth_hz: 3e6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    /// Additive white Gaussian noise power, watts (-90 dBm).
    pub noise_w: f64,
    /// Mean of the channel fading gain.
    pub fading_gain_mean: f64,
    /// Variance of the channel fading gain. The fading draw is gamma
    /// distributed matched to (mean, variance); a stated second moment of
    /// 0.4 with mean 2 is moment-infeasible, so the pair is read as
    /// (mean, variance).
    pub fading_gain_variance: f64,
    /// Antenna design constant.
    pub antenna_constant: f64,
    pub path_loss_exponent: f64,
    /// Vehicle transmission power, watts.
    pub tx_power_w: f64,
    /// Noise uncertainty range in dB; each (vehicle, slot) draws
    /// uniformly from it to form that slot's SNR wall.
    pub noise_uncertainty_db: [f64; 2],
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            noise_w: 1e-12,
            fading_gain_mean: 2.0,
            fading_gain_variance: 0.4,
            antenna_constant: 1.0,
            path_loss_exponent: 3.0,
            tx_power_w: 1e-3,
            noise_uncertainty_db: [0.0, 3.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Number of information categories J.
    pub categories: u32,
    /// Items per category K.
    pub items_per_category: u32,
    /// Uniform item-size range in bits (100 B .. 1 MB).
    pub item_size_bits: [u64; 2],
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            categories: 3,
            items_per_category: 10,
            item_size_bits: [800, 8_000_000],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CategorySection {
    /// Sensing-frequency bounds, arrivals per second.
    pub arrival_rate_min: f64,
    pub arrival_rate_max: f64,
    /// Upload service-time moments.
    pub service_mean_s: f64,
    pub service_second_moment_s2: f64,
}

impl Default for CategorySection {
    fn default() -> Self {
        CategorySection {
            arrival_rate_min: 0.1,
            arrival_rate_max: 2.0,
            service_mean_s: 0.2,
            // Exponential-like: 2 * mean^2.
            service_second_moment_s2: 0.08,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewsSection {
    pub count: u32,
    /// Target expected total required data per view, bits. The default is
    /// the 1x application scale (6.46 MB).
    pub target_mean_size_bits: f64,
    /// Completeness threshold for the service-ratio metric.
    pub completeness_threshold: f64,
    /// Optional CSV to load views from instead of generating them.
    pub import_csv: Option<String>,
}

impl Default for ViewsSection {
    fn default() -> Self {
        ViewsSection {
            count: 5,
            target_mean_size_bits: 6.46e6 * 8.0,
            completeness_threshold: 0.8,
            import_csv: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AovSection {
    /// AoV weights: timeliness, completeness, consistency. Must sum to 1.
    pub weights: [f64; 3],
    /// Count slots with no required views in the period average.
    pub objective_includes_empty_slots: bool,
}

impl Default for AovSection {
    fn default() -> Self {
        AovSection {
            weights: [0.3, 0.4, 0.3],
            objective_includes_empty_slots: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilitySection {
    /// "synthetic" or "csv".
    pub source: String,
    /// CSV path when `source = "csv"`.
    pub csv_path: Option<String>,
    /// Projection origin (lon, lat) for geographic CSVs; defaults to the
    /// centroid of the input.
    pub projection_origin: Option<[f64; 2]>,
    /// Synthetic area, meters.
    pub area_m: [f64; 2],
    /// Random-waypoint speed range, m/s.
    pub speed_range_mps: [f64; 2],
    /// Prediction horizon h, slots.
    pub prediction_horizon_slots: u32,
    /// "constant-velocity" or "em".
    pub predictor: String,
    /// Ingest: maximum tolerated gap between consecutive points, seconds.
    pub max_gap_s: f64,
    /// Ingest: "drop" or "split" for vehicles with larger gaps.
    pub gap_policy: String,
}

impl Default for MobilitySection {
    fn default() -> Self {
        MobilitySection {
            source: "synthetic".to_string(),
            csv_path: None,
            projection_origin: None,
            area_m: [3000.0, 3000.0],
            speed_range_mps: [5.0, 15.0],
            prediction_horizon_slots: 5,
            predictor: "constant-velocity".to_string(),
            max_gap_s: 30.0,
            gap_policy: "drop".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocationSection {
    /// Harmonic-share offset in b_e / (omega + rank).
    pub omega: f64,
    /// Write per-slot allocation rows to allocation.csv.
    pub debug_csv: bool,
}

impl Default for AllocationSection {
    fn default() -> Self {
        AllocationSection {
            omega: 1.0,
            debug_csv: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentsSection {
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Soft target-update coefficient.
    pub soft_update: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: Vec<usize>,
    /// Exploration noise std as a fraction of the unit action range,
    /// decayed linearly per episode down to the floor.
    pub noise_initial: f64,
    pub noise_floor: f64,
    pub noise_decay_episodes: u32,
    /// Minimum stored transitions before training starts.
    pub warmup_transitions: usize,
    pub train_every_slots: u32,
    /// Slots after which category freshness saturates in observations.
    pub freshness_cap_slots: u32,
    /// Slots a category stays "cached" at the RSU after a delivery.
    pub rsu_cache_ttl_slots: u32,
    /// "difference" or "shared".
    pub reward_mode: String,
}

impl Default for AgentsSection {
    fn default() -> Self {
        AgentsSection {
            gamma: 0.95,
            batch_size: 64,
            buffer_capacity: 100_000,
            soft_update: 0.01,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            hidden: vec![64, 64],
            noise_initial: 0.2,
            noise_floor: 0.01,
            noise_decay_episodes: 100,
            warmup_transitions: 256,
            train_every_slots: 1,
            freshness_cap_slots: 50,
            rsu_cache_ttl_slots: 5,
            reward_mode: "difference".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Run a noise-free evaluation episode every N training episodes.
    pub eval_every: u32,
    pub checkpoint_every: u32,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            eval_every: 10,
            checkpoint_every: 10,
        }
    }
}

impl SimulationConfig {
    /// Per-category sections with overrides applied.
    pub fn category_sections(&self) -> Vec<CategorySection> {
        (0..self.data.categories as usize)
            .map(|j| {
                self.categories
                    .get(j)
                    .cloned()
                    .unwrap_or_else(|| self.category_defaults.clone())
            })
            .collect()
    }

    pub fn rsu_location(&self) -> Point {
        Point::new(self.rsu.location[0], self.rsu.location[1])
    }

    /// Checks feasibility of the whole parameter set before a run.
    pub fn validate(&self) -> Result<()> {
        let err = |path: &str, message: String| -> Result<()> {
            Err(Error::Config {
                path: path.to_string(),
                message,
            })
        };

        if self.schema_version != SCHEMA_VERSION {
            return err(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            );
        }
        if !(self.sim.slot_length_s > 0.0) {
            return err("sim.slot_length_s", "must be > 0".into());
        }
        if self.sim.vehicles == 0 {
            return err("sim.vehicles", "need at least one vehicle".into());
        }
        if !(self.rsu.range_m > 0.0) {
            return err("rsu.range_m", "must be > 0".into());
        }
        if !(self.rsu.bandwidth_hz > 0.0) {
            return err("rsu.bandwidth_hz", "must be > 0".into());
        }
        if !(self.channel.noise_w > 0.0) {
            return err("channel.noise_w", "must be > 0".into());
        }
        if !(self.channel.fading_gain_mean > 0.0) {
            return err("channel.fading_gain_mean", "must be > 0".into());
        }
        if self.channel.fading_gain_variance < 0.0 {
            return err("channel.fading_gain_variance", "must be >= 0".into());
        }
        if !(self.channel.antenna_constant > 0.0) {
            return err("channel.antenna_constant", "must be > 0".into());
        }
        if self.channel.path_loss_exponent < 2.0 {
            return err("channel.path_loss_exponent", "must be >= 2".into());
        }
        if self.channel.tx_power_w < 0.0 {
            return err("channel.tx_power_w", "must be >= 0".into());
        }
        let [ulo, uhi] = self.channel.noise_uncertainty_db;
        if !(0.0 <= ulo && ulo <= uhi) {
            return err(
                "channel.noise_uncertainty_db",
                format!("need 0 <= lo <= hi, got [{ulo}, {uhi}]"),
            );
        }
        if self.data.categories == 0 {
            return err("data.categories", "need at least one category".into());
        }
        if self.data.items_per_category == 0 {
            return err("data.items_per_category", "must be >= 1".into());
        }
        if self.data.item_size_bits[0] > self.data.item_size_bits[1] {
            return err(
                "data.item_size_bits",
                format!(
                    "min {} exceeds max {}",
                    self.data.item_size_bits[0], self.data.item_size_bits[1]
                ),
            );
        }

        let sections = self.category_sections();
        let mut min_workload = 0.0;
        for (j, c) in sections.iter().enumerate() {
            let path = format!("categories[{j}]");
            let probe = crate::types::CategoryParams {
                arrival_rate: c.arrival_rate_min,
                arrival_rate_min: c.arrival_rate_min,
                arrival_rate_max: c.arrival_rate_max,
                priority: 0.5,
                service_mean_s: c.service_mean_s,
                service_second_moment_s2: c.service_second_moment_s2,
            };
            probe.validate(&path)?;
            min_workload += c.arrival_rate_min * c.service_mean_s;
        }
        // Even the lowest sensing rates must leave queue-stability headroom,
        // otherwise no feasible action exists.
        if min_workload >= WORKLOAD_CEILING {
            return err(
                "category_defaults",
                format!(
                    "minimum-rate workload {min_workload:.4} leaves no headroom below {WORKLOAD_CEILING}"
                ),
            );
        }

        if self.views.count == 0 {
            return err("views.count", "need at least one view".into());
        }
        if !(self.views.target_mean_size_bits > 0.0) {
            return err("views.target_mean_size_bits", "must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.views.completeness_threshold) {
            return err("views.completeness_threshold", "must lie in [0, 1]".into());
        }

        let w = self.aov.weights;
        if w.iter().any(|&x| x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return err(
                "aov.weights",
                format!("weights must be non-negative and sum to 1, got {w:?}"),
            );
        }

        match self.mobility.source.as_str() {
            "synthetic" => {}
            "csv" => {
                if self.mobility.csv_path.is_none() {
                    return err("mobility.csv_path", "required when source = \"csv\"".into());
                }
            }
            other => {
                return err(
                    "mobility.source",
                    format!("expected \"synthetic\" or \"csv\", got \"{other}\""),
                )
            }
        }
        if !(self.mobility.area_m[0] > 0.0 && self.mobility.area_m[1] > 0.0) {
            return err("mobility.area_m", "area sides must be > 0".into());
        }
        let [slo, shi] = self.mobility.speed_range_mps;
        if !(0.0 <= slo && slo <= shi) {
            return err("mobility.speed_range_mps", "need 0 <= lo <= hi".into());
        }
        if self.mobility.prediction_horizon_slots == 0 {
            return err("mobility.prediction_horizon_slots", "must be >= 1".into());
        }
        match self.mobility.predictor.as_str() {
            "constant-velocity" | "em" => {}
            other => {
                return err(
                    "mobility.predictor",
                    format!("expected \"constant-velocity\" or \"em\", got \"{other}\""),
                )
            }
        }
        match self.mobility.gap_policy.as_str() {
            "drop" | "split" => {}
            other => {
                return err(
                    "mobility.gap_policy",
                    format!("expected \"drop\" or \"split\", got \"{other}\""),
                )
            }
        }

        if !(self.allocation.omega > 0.0) {
            return err("allocation.omega", "must be > 0".into());
        }

        let a = &self.agents;
        if !(0.0..1.0).contains(&a.gamma) {
            return err("agents.gamma", "must lie in [0, 1)".into());
        }
        if a.batch_size == 0 {
            return err("agents.batch_size", "must be >= 1".into());
        }
        if a.buffer_capacity < a.batch_size {
            return err("agents.buffer_capacity", "must be >= batch_size".into());
        }
        if !(a.soft_update > 0.0 && a.soft_update <= 1.0) {
            return err("agents.soft_update", "must lie in (0, 1]".into());
        }
        if !(a.actor_lr > 0.0 && a.critic_lr > 0.0) {
            return err("agents.actor_lr", "learning rates must be > 0".into());
        }
        if a.hidden.is_empty() || a.hidden.contains(&0) {
            return err("agents.hidden", "hidden widths must be non-empty, > 0".into());
        }
        if !(a.noise_floor >= 0.0 && a.noise_initial >= a.noise_floor) {
            return err("agents.noise_initial", "need initial >= floor >= 0".into());
        }
        if a.freshness_cap_slots == 0 {
            return err("agents.freshness_cap_slots", "must be >= 1".into());
        }
        match a.reward_mode.as_str() {
            "difference" | "shared" => {}
            other => {
                return err(
                    "agents.reward_mode",
                    format!("expected \"difference\" or \"shared\", got \"{other}\""),
                )
            }
        }
        Ok(())
    }
}

/// Parses and validates a TOML config file; every omitted key resolves to
/// its default before validation.
pub fn load_config(path: impl AsRef<Path>) -> Result<SimulationConfig> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::Config {
        path: path.as_ref().display().to_string(),
        message: e.to_string(),
    })?;
    let config: SimulationConfig = toml::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

/// Machine-readable record of everything needed to reproduce a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub code_version: String,
    pub master_seed: u64,
    pub policy: String,
    pub config: SimulationConfig,
}

impl RunManifest {
    pub fn new(config: &SimulationConfig, master_seed: u64, policy: &str) -> Self {
        RunManifest {
            schema_version: SCHEMA_VERSION,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed,
            policy: policy.to_string(),
            config: config.clone(),
        }
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        std::fs::create_dir_all(dir.as_ref())?;
        let path = dir.as_ref().join("manifest.json");
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }
}
