//! The per-slot simulation loop binding all modules together:
//! observe/act, queue statistics, bandwidth allocation, transmission,
//! view scoring, rewards, and experience storage, plus the evaluation
//! metrics and the training driver.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{
    build_batch, decode_action, difference_reward, noise_std, system_reward, Agent, AgentAction,
    BaselinePolicy, Experience, ObservationEncoder, ReplayBuffer, TrainerParams,
};
use crate::allocation::{self, AllocEntry, AllocationDecision};
use crate::aov::{score_views_batch, NormWindow, ViewScore, Weights};
use crate::channel::{self, ChannelParams, ChannelSnapshot};
use crate::config::SimulationConfig;
use crate::mobility::{self, GapPolicy, IngestOptions, Predictor};
use crate::queueing;
use crate::rng::seeded_rng;
use crate::types::{CategoryParams, DataItem, Rsu, SimClock, VehicleState};
use crate::views::{Delivery, View, ViewSchedule};
use crate::{Error, Result};

/// Everything that defines one episode's environment, fully materialized
/// up front so a run is a pure function of (config, seed, tag).
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: SimulationConfig,
    pub master_seed: u64,
    pub tag: String,
    pub clock: SimClock,
    pub rsu: Rsu,
    pub channel: ChannelParams,
    pub weights: Weights,
    pub vehicles: Vec<VehicleState>,
    pub views: Vec<View>,
    pub schedule: ViewSchedule,
    /// Per-(vehicle, slot) channel fading draws.
    fading: Vec<Vec<f64>>,
    /// Per-(vehicle, slot) SNR-wall values from the noise-uncertainty draw.
    wall: Vec<Vec<f64>>,
    /// Per-(vehicle, category, slot) representative item.
    items: Vec<Vec<Vec<DataItem>>>,
}

impl Scenario {
    /// Builds the episode environment. `tag` namespaces every random
    /// stream, so distinct tags give independent but reproducible
    /// episodes under one master seed.
    pub fn build(config: &SimulationConfig, master_seed: u64, tag: &str) -> Result<Self> {
        config.validate()?;
        let n = config.sim.vehicles;
        let horizon = config.sim.horizon_slots;
        let eps = config.sim.slot_length_s;
        let clock = SimClock::new(eps, horizon);
        let rsu = Rsu {
            location: config.rsu_location(),
            range_m: config.rsu.range_m,
            bandwidth_hz: config.rsu.bandwidth_hz,
        };
        let ch = &config.channel;
        let channel_params = ChannelParams {
            noise_w: ch.noise_w,
            fading_gain_mean: ch.fading_gain_mean,
            fading_gain_variance: ch.fading_gain_variance,
            antenna_constant: ch.antenna_constant,
            path_loss_exponent: ch.path_loss_exponent,
            tx_power_w: ch.tx_power_w,
        };
        let weights = Weights {
            timeliness: config.aov.weights[0],
            completeness: config.aov.weights[1],
            consistency: config.aov.weights[2],
        };

        let traces = match config.mobility.source.as_str() {
            "synthetic" => {
                let mut rng = seeded_rng(master_seed, &format!("{tag}/mobility"));
                mobility::synthesize(
                    n,
                    (config.mobility.area_m[0], config.mobility.area_m[1]),
                    (
                        config.mobility.speed_range_mps[0],
                        config.mobility.speed_range_mps[1],
                    ),
                    horizon,
                    eps,
                    &mut rng,
                )
            }
            "csv" => {
                let path = config.mobility.csv_path.as_ref().expect("validated");
                let opts = IngestOptions {
                    slot_length_s: eps,
                    horizon_slots: horizon,
                    max_gap_s: config.mobility.max_gap_s,
                    gap_policy: match config.mobility.gap_policy.as_str() {
                        "split" => GapPolicy::Split,
                        _ => GapPolicy::Drop,
                    },
                    projection_origin: config
                        .mobility
                        .projection_origin
                        .map(|[lon, lat]| (lon, lat)),
                };
                let mut traces = mobility::ingest_csv(path, &opts)?;
                if (traces.len() as u32) < n {
                    return Err(Error::Infeasible(format!(
                        "trajectory file provides {} usable vehicles, config needs {n}",
                        traces.len()
                    )));
                }
                traces.truncate(n as usize);
                traces
            }
            _ => unreachable!("validated"),
        };

        let sections = config.category_sections();
        let vehicles: Vec<VehicleState> = traces
            .into_iter()
            .enumerate()
            .map(|(idx, trace)| VehicleState {
                id: idx as u32,
                trace: trace.positions,
                categories: sections
                    .iter()
                    .map(|s| CategoryParams {
                        arrival_rate: 0.5 * (s.arrival_rate_min + s.arrival_rate_max),
                        arrival_rate_min: s.arrival_rate_min,
                        arrival_rate_max: s.arrival_rate_max,
                        priority: 0.5,
                        service_mean_s: s.service_mean_s,
                        service_second_moment_s2: s.service_second_moment_s2,
                    })
                    .collect(),
            })
            .collect();

        let j = config.data.categories;
        let mean_item_bits =
            0.5 * (config.data.item_size_bits[0] as f64 + config.data.item_size_bits[1] as f64);
        let (views, schedule) = match &config.views.import_csv {
            Some(path) => {
                let views = crate::views::import_views_csv(path)?;
                let mut rng = seeded_rng(master_seed, &format!("{tag}/schedule"));
                let n_views = views.len() as u32;
                if n_views == 0 {
                    return Err(Error::InvalidInput("imported view set is empty".into()));
                }
                for view in &views {
                    for (vehicle, category) in view.required_cells() {
                        if vehicle >= n || category >= j {
                            return Err(Error::InvalidInput(format!(
                                "imported view {} requires cell ({vehicle}, {category}) outside the {n}x{j} matrix",
                                view.id
                            )));
                        }
                    }
                }
                let per_slot = (0..horizon)
                    .map(|_| {
                        use rand::Rng;
                        let k = rng.random_range(1..=n_views);
                        let mut ids = std::collections::BTreeSet::new();
                        while (ids.len() as u32) < k {
                            ids.insert(rng.random_range(0..n_views));
                        }
                        ids.into_iter()
                            .map(|i| views[i as usize].id)
                            .collect()
                    })
                    .collect();
                (views, ViewSchedule { per_slot })
            }
            None => {
                let mut rng = seeded_rng(master_seed, &format!("{tag}/views"));
                crate::views::generate_views(
                    config.views.count,
                    config.views.target_mean_size_bits,
                    n,
                    j,
                    mean_item_bits,
                    horizon,
                    &mut rng,
                )?
            }
        };

        let fading_dist = if ch.fading_gain_variance > 0.0 {
            Some(
                Gamma::new(
                    ch.fading_gain_mean * ch.fading_gain_mean / ch.fading_gain_variance,
                    ch.fading_gain_variance / ch.fading_gain_mean,
                )
                .expect("validated moments"),
            )
        } else {
            None
        };
        let mut fading = Vec::with_capacity(n as usize);
        let mut wall = Vec::with_capacity(n as usize);
        let mut items = Vec::with_capacity(n as usize);
        let [size_lo, size_hi] = config.data.item_size_bits;
        let [db_lo, db_hi] = ch.noise_uncertainty_db;
        for i in 0..n {
            use rand::Rng;
            let mut rng = seeded_rng(master_seed, &format!("{tag}/fading/{i}"));
            fading.push(
                (0..horizon)
                    .map(|_| match &fading_dist {
                        Some(d) => d.sample(&mut rng),
                        None => ch.fading_gain_mean,
                    })
                    .collect(),
            );
            let mut rng = seeded_rng(master_seed, &format!("{tag}/uncertainty/{i}"));
            wall.push(
                (0..horizon)
                    .map(|_| channel::snr_wall(rng.random_range(db_lo..=db_hi)))
                    .collect(),
            );
            let mut rng = seeded_rng(master_seed, &format!("{tag}/items/{i}"));
            let mut per_cat = Vec::with_capacity(j as usize);
            for cat in 0..j {
                per_cat.push(
                    (0..horizon)
                        .map(|_| DataItem {
                            category_j: cat,
                            index_k: rng.random_range(1..=config.data.items_per_category),
                            size_bits: rng.random_range(size_lo..=size_hi),
                        })
                        .collect(),
                );
            }
            items.push(per_cat);
        }

        Ok(Scenario {
            config: config.clone(),
            master_seed,
            tag: tag.to_string(),
            clock,
            rsu,
            channel: channel_params,
            weights,
            vehicles,
            views,
            schedule,
            fading,
            wall,
            items,
        })
    }

    fn view_by_id(&self, id: u32) -> &View {
        self.views
            .iter()
            .find(|v| v.id == id)
            .expect("schedule references existing views")
    }

    pub fn n_vehicles(&self) -> usize {
        self.vehicles.len()
    }

    pub fn n_categories(&self) -> usize {
        self.config.data.categories as usize
    }

    pub fn observation_encoder(&self) -> ObservationEncoder {
        ObservationEncoder {
            n_categories: self.n_categories(),
            freshness_cap_slots: self.config.agents.freshness_cap_slots,
        }
    }
}

/// Everything observable about one closed slot.
#[derive(Debug, Clone)]
pub struct SlotOutcome {
    pub slot: u32,
    pub in_range: Vec<u32>,
    pub allocation: AllocationDecision,
    pub channel_snapshots: Vec<ChannelSnapshot>,
    /// Attempt outcome per required (vehicle, category) cell.
    pub attempts: BTreeMap<(u32, u32), Delivery>,
    /// Scheduled views carrying this slot's delivery bookkeeping.
    pub scored_views: Vec<View>,
    pub view_scores: Vec<ViewScore>,
    pub system_reward: f64,
    pub agent_rewards: Vec<f64>,
    /// True when the slot had no required views.
    pub empty_view_slot: bool,
    pub observations: Vec<Vec<f64>>,
    pub next_observations: Option<Vec<Vec<f64>>>,
    /// Slot contribution to average queuing time.
    pub mean_wait_s: f64,
}

/// Episode-level evaluation metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Cumulative system reward over the scheduling period.
    pub cr: f64,
    /// Mean reward composition: timeliness, completeness, consistency
    /// shares (each bounded by its AoV weight).
    pub car: [f64; 3],
    /// Average queuing time, seconds.
    pub aqt_s: f64,
    /// Share of scored views meeting the completeness threshold.
    pub sr: f64,
}

/// Per-slot, per-view, and allocation rows captured for the output CSVs.
#[derive(Debug, Clone, Default)]
pub struct EpisodeRecord {
    pub slot_rows: Vec<SlotRow>,
    pub view_rows: Vec<ViewRow>,
    pub alloc_rows: Vec<AllocRow>,
    pub metrics: Option<RunMetrics>,
}

#[derive(Debug, Clone)]
pub struct SlotRow {
    pub slot: u32,
    pub reward: f64,
    pub mean_theta_hat: f64,
    pub mean_chi: f64,
    pub mean_xi_hat: f64,
    pub mean_aov: f64,
}

#[derive(Debug, Clone)]
pub struct ViewRow {
    pub slot: u32,
    pub score: ViewScore,
}

#[derive(Debug, Clone)]
pub struct AllocRow {
    pub slot: u32,
    pub vehicle: u32,
    pub rank: usize,
    pub required_bits: u64,
    pub predicted_distance_m: f64,
    pub bandwidth_hz: f64,
}

impl EpisodeRecord {
    /// Writes the metrics CSV: per-view score rows, per-slot rows, and a
    /// final summary row share one file, discriminated by `record`.
    pub fn write_metrics_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record([
            "record",
            "slot",
            "view_id",
            "theta",
            "chi",
            "xi",
            "theta_hat",
            "xi_hat",
            "aov",
            "reward",
            "mean_theta_hat",
            "mean_chi",
            "mean_xi_hat",
            "mean_aov",
            "cr",
            "car_timeliness",
            "car_completeness",
            "car_consistency",
            "aqt_s",
            "sr",
        ])?;
        let blank = |n: usize| vec![String::new(); n];
        for row in &self.view_rows {
            let s = &row.score;
            let mut record = vec![
                "view".to_string(),
                row.slot.to_string(),
                s.view_id.to_string(),
                s.theta.to_string(),
                s.chi.to_string(),
                s.xi.to_string(),
                s.theta_hat.to_string(),
                s.xi_hat.to_string(),
                s.aov.to_string(),
            ];
            record.extend(blank(11));
            w.write_record(&record)?;
        }
        for row in &self.slot_rows {
            let mut record = vec!["slot".to_string(), row.slot.to_string()];
            record.extend(blank(7));
            record.extend([
                row.reward.to_string(),
                row.mean_theta_hat.to_string(),
                row.mean_chi.to_string(),
                row.mean_xi_hat.to_string(),
                row.mean_aov.to_string(),
            ]);
            record.extend(blank(6));
            w.write_record(&record)?;
        }
        if let Some(m) = &self.metrics {
            let mut record = vec!["summary".to_string()];
            record.extend(blank(13));
            record.extend([
                m.cr.to_string(),
                m.car[0].to_string(),
                m.car[1].to_string(),
                m.car[2].to_string(),
                m.aqt_s.to_string(),
                m.sr.to_string(),
            ]);
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_alloc_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record([
            "slot",
            "vehicle",
            "rank",
            "required_bits",
            "predicted_distance_m",
            "bandwidth_hz",
        ])?;
        for r in &self.alloc_rows {
            w.write_record([
                r.slot.to_string(),
                r.vehicle.to_string(),
                r.rank.to_string(),
                r.required_bits.to_string(),
                r.predicted_distance_m.to_string(),
                r.bandwidth_hz.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mutable per-episode simulation state.
struct SimState {
    slot: u32,
    current_params: Vec<Vec<CategoryParams>>,
    /// Slot of the last successful upload per (vehicle, category).
    last_success: Vec<Vec<Option<u32>>>,
    /// Slot each category was last received at the RSU.
    rsu_last_received: Vec<Option<u32>>,
    window: NormWindow,
    /// Working copies of the views carrying per-slot deliveries.
    working_views: Vec<View>,
}

/// Drives one episode slot by slot.
pub struct EpisodeRunner<'a> {
    pub scenario: &'a Scenario,
    state: SimState,
    rewards: Vec<f64>,
    view_scores_all: Vec<ViewScore>,
    slot_wait_means: Vec<f64>,
    record: EpisodeRecord,
}

impl<'a> EpisodeRunner<'a> {
    pub fn new(scenario: &'a Scenario) -> Self {
        let n = scenario.n_vehicles();
        let j = scenario.n_categories();
        EpisodeRunner {
            scenario,
            state: SimState {
                slot: 0,
                current_params: scenario.vehicles.iter().map(|v| v.categories.clone()).collect(),
                last_success: vec![vec![None; j]; n],
                rsu_last_received: vec![None; j],
                window: NormWindow::default(),
                working_views: scenario.views.clone(),
            },
            rewards: Vec::new(),
            view_scores_all: Vec::new(),
            slot_wait_means: Vec::new(),
            record: EpisodeRecord::default(),
        }
    }

    pub fn finished(&self) -> bool {
        self.state.slot >= self.scenario.clock.horizon_slots
    }

    pub fn slot(&self) -> u32 {
        self.state.slot
    }

    pub fn current_params(&self) -> &[Vec<CategoryParams>] {
        &self.state.current_params
    }

    fn scheduled_ids(&self, slot: u32) -> &[u32] {
        self.scenario.schedule.scheduled(slot)
    }

    /// How many scheduled views require each of the vehicle's categories.
    pub fn required_counts(&self, slot: u32, vehicle: u32) -> Vec<u32> {
        let j = self.scenario.n_categories();
        let mut counts = vec![0u32; j];
        for &id in self.scheduled_ids(slot) {
            for cat in self.scenario.view_by_id(id).required_categories(vehicle) {
                counts[cat as usize] += 1;
            }
        }
        counts
    }

    /// Observations of every vehicle at the given slot.
    pub fn observe_all(&self, slot: u32) -> Vec<Vec<f64>> {
        let encoder = self.scenario.observation_encoder();
        let j = self.scenario.n_categories();
        let ttl = self.scenario.config.agents.rsu_cache_ttl_slots;
        let cached: Vec<bool> = (0..j)
            .map(|cat| {
                self.state.rsu_last_received[cat]
                    .is_some_and(|s| slot > s && slot - s <= ttl)
            })
            .collect();
        (0..self.scenario.n_vehicles() as u32)
            .map(|i| {
                let required: Vec<bool> = {
                    let counts = self.required_counts(slot, i);
                    counts.iter().map(|&c| c > 0).collect()
                };
                encoder.encode(
                    slot,
                    &self.state.last_success[i as usize],
                    &cached,
                    &required,
                )
            })
            .collect()
    }

    /// Advances one slot with the given per-vehicle actions.
    pub fn step(&mut self, actions: &[AgentAction]) -> Result<SlotOutcome> {
        let scenario = self.scenario;
        let t = self.state.slot;
        let horizon = scenario.clock.horizon_slots;
        assert!(t < horizon, "stepping past the horizon");
        assert_eq!(actions.len(), scenario.n_vehicles());
        let eps = scenario.clock.slot_length_s;
        let n = scenario.n_vehicles();
        let j = scenario.n_categories();

        let observations = self.observe_all(t);

        // Phase 1: install the slot's decisions, enforcing C1/C2/C4.
        for (i, action) in actions.iter().enumerate() {
            let params = &mut self.state.current_params[i];
            for (cat, p) in params.iter_mut().enumerate() {
                let rate = action.arrival_rates[cat];
                if rate < p.arrival_rate_min - 1e-9 || rate > p.arrival_rate_max + 1e-9 {
                    return Err(Error::ConstraintViolation {
                        constraint: "C1",
                        slot: t,
                        detail: format!(
                            "vehicle {i} category {cat}: rate {rate} outside [{}, {}]",
                            p.arrival_rate_min, p.arrival_rate_max
                        ),
                    });
                }
                let priority = action.priorities[cat];
                if !(priority > 0.0 && priority < 1.0) {
                    return Err(Error::ConstraintViolation {
                        constraint: "C2",
                        slot: t,
                        detail: format!("vehicle {i} category {cat}: priority {priority}"),
                    });
                }
                p.arrival_rate = rate;
                p.priority = priority;
            }
            let workload: f64 = params.iter().map(|p| p.arrival_rate * p.service_mean_s).sum();
            if workload >= 1.0 {
                return Err(Error::ConstraintViolation {
                    constraint: "C4",
                    slot: t,
                    detail: format!("vehicle {i}: workload {workload}"),
                });
            }
        }

        // Phase 2: closed-form queue statistics per vehicle.
        let mut stats = Vec::with_capacity(n);
        for i in 0..n {
            stats.push(queueing::queue_stats(&self.state.current_params[i])?);
        }
        let mean_wait_s = stats
            .iter()
            .map(|s| {
                s.per_class.iter().map(|c| c.mean_wait_s).sum::<f64>() / j as f64
            })
            .sum::<f64>()
            / n as f64;

        // Phase 3: coverage set.
        let in_range: Vec<u32> = (0..n as u32)
            .filter(|&i| scenario.vehicles[i as usize].in_range(t, &scenario.rsu))
            .collect();

        // Phase 4: greedy bandwidth allocation over in-range vehicles.
        let scheduled: Vec<&View> = self
            .scheduled_ids(t)
            .iter()
            .map(|&id| scenario.view_by_id(id))
            .collect();
        let empty_view_slot = scheduled.is_empty();
        let mut item_bits: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        for view in &scheduled {
            for (i, cat) in view.required_cells() {
                item_bits
                    .entry((i, cat))
                    .or_insert_with(|| scenario.items[i as usize][cat as usize][t as usize].size_bits);
            }
        }
        let predictor = match scenario.config.mobility.predictor.as_str() {
            "em" => Predictor::EmDistance,
            _ => Predictor::ConstantVelocity,
        };
        let entries: Vec<AllocEntry> = in_range
            .iter()
            .map(|&i| {
                let history = &scenario.vehicles[i as usize].trace[..=t as usize];
                let prediction = mobility::predict(
                    history,
                    scenario.config.mobility.prediction_horizon_slots,
                    predictor,
                    scenario.rsu.location,
                );
                AllocEntry {
                    vehicle: i,
                    required_bits: allocation::required_volume(i, &scheduled, &item_bits),
                    predicted_distance_m: prediction.mean_predicted_distance_m,
                }
            })
            .collect();
        let decision = allocation::allocate(&entries, scenario.rsu.bandwidth_hz, scenario.config.allocation.omega);
        for share in &decision.shares {
            if !(share.bandwidth_hz >= 0.0 && share.bandwidth_hz <= scenario.rsu.bandwidth_hz) {
                return Err(Error::ConstraintViolation {
                    constraint: "C3",
                    slot: t,
                    detail: format!("vehicle {}: share {}", share.vehicle, share.bandwidth_hz),
                });
            }
        }
        if decision.total_allocated_hz() > scenario.rsu.bandwidth_hz {
            return Err(Error::ConstraintViolation {
                constraint: "C5",
                slot: t,
                detail: format!(
                    "total {} exceeds {}",
                    decision.total_allocated_hz(),
                    scenario.rsu.bandwidth_hz
                ),
            });
        }

        // Phase 5: serial uploads per vehicle in descending priority.
        let mut attempts: BTreeMap<(u32, u32), Delivery> = BTreeMap::new();
        let mut channel_snapshots = Vec::new();
        for &i in &in_range {
            let iu = i as usize;
            let params = &self.state.current_params[iu];
            let vehicle_stats = &stats[iu];
            let mut cats: Vec<u32> = item_bits
                .keys()
                .filter(|&&(v, _)| v == i)
                .map(|&(_, cat)| cat)
                .collect();
            if cats.is_empty() {
                continue;
            }
            cats.sort_by(|&a, &b| {
                params[b as usize]
                    .priority
                    .partial_cmp(&params[a as usize].priority)
                    .expect("finite priorities")
                    .then(a.cmp(&b))
            });
            let bandwidth = decision.bandwidth_for(i);
            let distance = scenario.vehicles[iu].position(t).distance(&scenario.rsu.location);
            let snr_now = channel::snr(&scenario.channel, distance, scenario.fading[iu][t as usize]);
            let rate = channel::rate(bandwidth, snr_now);
            let mut serial_start = f64::from(t) * eps;
            let mut all_ok = true;
            for cat in cats {
                let cu = cat as usize;
                let inter_arrival_s = vehicle_stats.per_class[cu].inter_arrival_s;
                let wait_s = vehicle_stats.per_class[cu].mean_wait_s;
                let size = item_bits[&(i, cat)];
                let delivery = match channel::transmission_time(size, rate) {
                    None => Delivery {
                        success: false,
                        inter_arrival_s,
                        wait_s,
                        transmission_s: None,
                    },
                    Some(tra) => {
                        let success =
                            self.transmission_succeeds(i, t, serial_start, tra);
                        serial_start += tra;
                        Delivery {
                            success,
                            inter_arrival_s,
                            wait_s,
                            transmission_s: Some(tra),
                        }
                    }
                };
                all_ok &= delivery.success;
                attempts.insert((i, cat), delivery);
            }
            channel_snapshots.push(ChannelSnapshot {
                vehicle: i,
                snr: snr_now,
                allocated_hz: bandwidth,
                rate_bps: rate,
                success: all_ok,
            });
        }
        // Required cells of out-of-coverage vehicles fail outright.
        for &(i, cat) in item_bits.keys() {
            let cu = cat as usize;
            attempts.entry((i, cat)).or_insert_with(|| Delivery {
                success: false,
                inter_arrival_s: stats[i as usize].per_class[cu].inter_arrival_s,
                wait_s: stats[i as usize].per_class[cu].mean_wait_s,
                transmission_s: None,
            });
        }

        // Phase 6: per-view delivery bookkeeping.
        let scheduled_ids: Vec<u32> = self.scheduled_ids(t).to_vec();
        let mut scored_views = Vec::with_capacity(scheduled_ids.len());
        for id in &scheduled_ids {
            let view = self
                .state
                .working_views
                .iter_mut()
                .find(|v| v.id == *id)
                .expect("schedule references existing views");
            view.reset_deliveries();
            let cells: Vec<(u32, u32)> = view.required_cells().collect();
            for (i, cat) in cells {
                view.record_delivery(i, cat, attempts[&(i, cat)])?;
            }
            scored_views.push(view.clone());
        }

        // Phase 7: score the slot's views against the shared window.
        let refs: Vec<&View> = scored_views.iter().collect();
        let view_scores = score_views_batch(&refs, &mut self.state.window, &scenario.weights)?;

        // Phase 8: system reward and per-agent credit.
        let reward = system_reward(&view_scores);
        let agent_rewards: Vec<f64> = match scenario.config.agents.reward_mode.as_str() {
            "shared" => vec![reward; n],
            _ => (0..n as u32)
                .map(|i| difference_reward(&scored_views, &self.state.window, &scenario.weights, i))
                .collect::<Result<_>>()?,
        };

        // Phase 9: state updates and the next observation.
        for (&(i, cat), d) in &attempts {
            if d.success {
                self.state.last_success[i as usize][cat as usize] = Some(t);
                self.state.rsu_last_received[cat as usize] = Some(t);
            }
        }
        self.state.slot = t + 1;
        let next_observations = if t + 1 < horizon {
            Some(self.observe_all(t + 1))
        } else {
            None
        };

        // Bookkeeping for metrics and CSV rows.
        self.rewards.push(reward);
        self.slot_wait_means.push(mean_wait_s);
        self.view_scores_all.extend(view_scores.iter().copied());
        let mean = |f: &dyn Fn(&ViewScore) -> f64| {
            if view_scores.is_empty() {
                0.0
            } else {
                view_scores.iter().map(f).sum::<f64>() / view_scores.len() as f64
            }
        };
        self.record.slot_rows.push(SlotRow {
            slot: t,
            reward,
            mean_theta_hat: mean(&|s| s.theta_hat),
            mean_chi: mean(&|s| s.chi),
            mean_xi_hat: mean(&|s| s.xi_hat),
            mean_aov: mean(&|s| s.aov),
        });
        for s in &view_scores {
            self.record.view_rows.push(ViewRow { slot: t, score: *s });
        }
        if scenario.config.allocation.debug_csv {
            for share in &decision.shares {
                self.record.alloc_rows.push(AllocRow {
                    slot: t,
                    vehicle: share.vehicle,
                    rank: share.rank,
                    required_bits: share.required_bits,
                    predicted_distance_m: share.predicted_distance_m,
                    bandwidth_hz: share.bandwidth_hz,
                });
            }
        }

        Ok(SlotOutcome {
            slot: t,
            in_range,
            allocation: decision,
            channel_snapshots,
            attempts,
            scored_views,
            view_scores,
            system_reward: reward,
            agent_rewards,
            empty_view_slot,
            observations,
            next_observations,
            mean_wait_s,
        })
    }

    /// Success predicate over the transmission window [start, start+tra].
    /// Items consume the slot's bandwidth serially and must complete
    /// before the next slot begins (unfinished items fail and are
    /// re-attempted only while still required); within the window, the
    /// vehicle must stay in coverage with SNR above the wall of the slot
    /// the transmission started in at every sampled slot boundary.
    fn transmission_succeeds(&self, vehicle: u32, slot: u32, start: f64, tra: f64) -> bool {
        let scenario = self.scenario;
        let eps = scenario.clock.slot_length_s;
        let horizon = scenario.clock.horizon_slots;
        let end = start + tra;
        if end > f64::from(slot + 1) * eps || end > scenario.clock.period_s() {
            return false;
        }
        let start_slot = (start / eps).floor() as u32;
        if start_slot >= horizon {
            return false;
        }
        let wall = scenario.wall[vehicle as usize][start_slot as usize];
        let end_slot = ((end / eps).floor() as u32).min(horizon - 1);
        let mut samples = Vec::with_capacity((end_slot - start_slot + 1) as usize);
        for slot in start_slot..=end_slot {
            if !scenario.vehicles[vehicle as usize].in_range(slot, &scenario.rsu) {
                return false;
            }
            let distance = scenario.vehicles[vehicle as usize]
                .position(slot)
                .distance(&scenario.rsu.location);
            samples.push(channel::snr(
                &scenario.channel,
                distance,
                scenario.fading[vehicle as usize][slot as usize],
            ));
        }
        channel::success_indicator(&samples, wall)
    }

    /// Finalizes the episode metrics.
    pub fn finish(mut self) -> (RunMetrics, EpisodeRecord) {
        let cr = self.rewards.iter().fold(0.0, |acc, r| acc + r);
        let w = &self.scenario.weights;
        let scores = &self.view_scores_all;
        let car = if scores.is_empty() {
            [0.0; 3]
        } else {
            let k = scores.len() as f64;
            [
                scores.iter().map(|s| w.timeliness * (1.0 - s.theta_hat)).sum::<f64>() / k,
                scores.iter().map(|s| w.completeness * s.chi).sum::<f64>() / k,
                scores.iter().map(|s| w.consistency * (1.0 - s.xi_hat)).sum::<f64>() / k,
            ]
        };
        let aqt_s = if self.slot_wait_means.is_empty() {
            0.0
        } else {
            self.slot_wait_means.iter().sum::<f64>() / self.slot_wait_means.len() as f64
        };
        let sr = if scores.is_empty() {
            0.0
        } else {
            let threshold = self.scenario.config.views.completeness_threshold;
            scores.iter().filter(|s| s.chi >= threshold).count() as f64 / scores.len() as f64
        };
        let metrics = RunMetrics { cr, car, aqt_s, sr };
        self.record.metrics = Some(metrics);
        (metrics, self.record)
    }
}

/// Supplies per-vehicle actions each slot.
pub trait ActionSource {
    fn actions(&mut self, runner: &EpisodeRunner) -> Result<Vec<AgentAction>>;
}

/// Scripted baseline controller with one stream per vehicle.
pub struct BaselineController {
    kind: BaselinePolicy,
    rngs: Vec<ChaCha12Rng>,
}

impl BaselineController {
    pub fn new(kind: BaselinePolicy, scenario: &Scenario) -> Self {
        let rngs = (0..scenario.n_vehicles())
            .map(|i| {
                seeded_rng(
                    scenario.master_seed,
                    &format!("{}/policy/{i}", scenario.tag),
                )
            })
            .collect();
        BaselineController { kind, rngs }
    }
}

impl ActionSource for BaselineController {
    fn actions(&mut self, runner: &EpisodeRunner) -> Result<Vec<AgentAction>> {
        let slot = runner.slot();
        Ok((0..runner.scenario.n_vehicles())
            .map(|i| {
                let counts = runner.required_counts(slot, i as u32);
                self.kind.act(
                    &runner.current_params()[i],
                    &counts,
                    &mut self.rngs[i],
                )
            })
            .collect())
    }
}

/// Noise-free controller over trained (or freshly initialized) actors.
pub struct LearnedController<'a> {
    agents: &'a [Agent],
    noise_std: f64,
    rngs: Vec<ChaCha12Rng>,
}

impl<'a> LearnedController<'a> {
    pub fn new(agents: &'a [Agent], noise_std: f64, scenario: &Scenario) -> Self {
        let rngs = (0..agents.len())
            .map(|i| {
                seeded_rng(
                    scenario.master_seed,
                    &format!("{}/noise/{i}", scenario.tag),
                )
            })
            .collect();
        LearnedController {
            agents,
            noise_std,
            rngs,
        }
    }
}

impl ActionSource for LearnedController<'_> {
    fn actions(&mut self, runner: &EpisodeRunner) -> Result<Vec<AgentAction>> {
        let slot = runner.slot();
        let observations = runner.observe_all(slot);
        self.agents
            .iter()
            .enumerate()
            .map(|(i, agent)| {
                let raw = agent.act_raw(&observations[i], self.noise_std, &mut self.rngs[i])?;
                Ok(decode_action(&raw, &runner.current_params()[i]))
            })
            .collect()
    }
}

/// Runs one full episode with the given action source.
pub fn run_episode(
    scenario: &Scenario,
    source: &mut dyn ActionSource,
) -> Result<(RunMetrics, EpisodeRecord)> {
    let mut runner = EpisodeRunner::new(scenario);
    while !runner.finished() {
        let actions = source.actions(&runner)?;
        runner.step(&actions)?;
    }
    Ok(runner.finish())
}

/// One row of the training-curve CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub episode: u32,
    pub agent: u32,
    pub critic_loss: Option<f64>,
    pub mean_reward: f64,
}

/// One row of the interleaved-evaluation CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub episode: u32,
    pub cr: f64,
}

/// Multi-agent training driver; owns the agents, the shared replay
/// buffer, and the episode counter, and checkpoints all of it.
pub struct Trainer {
    pub config: SimulationConfig,
    pub master_seed: u64,
    pub agents: Vec<Agent>,
    pub buffer: ReplayBuffer,
    pub episodes_done: u32,
}

impl Trainer {
    pub fn new(config: &SimulationConfig, master_seed: u64) -> Result<Self> {
        config.validate()?;
        let n = config.sim.vehicles as usize;
        let j = config.data.categories as usize;
        let obs_dim = 3 * j;
        let action_dim = 2 * j;
        let agents = (0..n)
            .map(|i| {
                let mut rng = seeded_rng(master_seed, &format!("init/agent{i}"));
                Agent::new(
                    obs_dim,
                    action_dim,
                    n * action_dim,
                    &config.agents.hidden,
                    config.agents.actor_lr,
                    config.agents.critic_lr,
                    &mut rng,
                )
            })
            .collect();
        Ok(Trainer {
            config: config.clone(),
            master_seed,
            agents,
            buffer: ReplayBuffer::new(config.agents.buffer_capacity),
            episodes_done: 0,
        })
    }

    /// Trains `episodes` more episodes. When `out_dir` is given, training
    /// curves, interleaved evaluations, and checkpoints are written there.
    pub fn train(
        &mut self,
        episodes: u32,
        out_dir: Option<&Path>,
    ) -> Result<(Vec<CurveRow>, Vec<EvalRow>)> {
        let mut curves = Vec::new();
        let mut evals = Vec::new();
        let params = TrainerParams {
            gamma: self.config.agents.gamma,
            soft_update: self.config.agents.soft_update,
        };
        let batch_size = self.config.agents.batch_size;
        let warmup = self.config.agents.warmup_transitions.max(batch_size);
        let train_every = self.config.agents.train_every_slots.max(1);
        let n = self.config.sim.vehicles as usize;

        for _ in 0..episodes {
            let ep = self.episodes_done;
            let tag = format!("train-ep{ep}");
            let scenario = Scenario::build(&self.config, self.master_seed, &tag)?;
            let sigma = noise_std(
                ep,
                self.config.agents.noise_initial,
                self.config.agents.noise_floor,
                self.config.agents.noise_decay_episodes,
            );
            let mut noise_rngs: Vec<ChaCha12Rng> = (0..n)
                .map(|i| seeded_rng(self.master_seed, &format!("{tag}/noise/{i}")))
                .collect();
            let mut sample_rngs: Vec<ChaCha12Rng> = (0..n)
                .map(|i| seeded_rng(self.master_seed, &format!("{tag}/sample/{i}")))
                .collect();

            let mut runner = EpisodeRunner::new(&scenario);
            let mut loss_sums = vec![0.0f64; n];
            let mut loss_counts = vec![0u32; n];
            let mut reward_sums = vec![0.0f64; n];
            let mut slots = 0u32;
            while !runner.finished() {
                let slot = runner.slot();
                let observations = runner.observe_all(slot);
                let actions: Vec<AgentAction> = self
                    .agents
                    .iter()
                    .enumerate()
                    .map(|(i, agent)| {
                        let raw = agent.act_raw(&observations[i], sigma, &mut noise_rngs[i])?;
                        Ok(decode_action(&raw, &runner.current_params()[i]))
                    })
                    .collect::<Result<_>>()?;
                let outcome = runner.step(&actions)?;
                slots += 1;
                for (i, r) in outcome.agent_rewards.iter().enumerate() {
                    reward_sums[i] += r;
                }
                if let Some(next_observations) = outcome.next_observations.clone() {
                    self.buffer.push(Experience {
                        observations: outcome.observations.clone(),
                        joint_action: actions.iter().map(|a| a.raw.clone()).collect(),
                        rewards: outcome.agent_rewards.clone(),
                        next_observations,
                    });
                }
                if self.buffer.len() >= warmup && slot.is_multiple_of(train_every) {
                    let indices: Vec<Vec<usize>> = sample_rngs
                        .iter_mut()
                        .map(|rng| self.buffer.sample_indices(batch_size, rng))
                        .collect();
                    let batches: Vec<_> = (0..n)
                        .map(|i| build_batch(&self.agents, &self.buffer, &indices[i], i, params.gamma))
                        .collect::<Result<_>>()?;
                    let losses: Vec<f64> = self
                        .agents
                        .par_iter_mut()
                        .zip(batches.par_iter())
                        .map(|(agent, batch)| crate::agents::train_step(agent, batch, &params))
                        .collect::<Result<_>>()?;
                    for (i, loss) in losses.iter().enumerate() {
                        loss_sums[i] += loss;
                        loss_counts[i] += 1;
                    }
                }
            }
            let _ = runner.finish();
            for i in 0..n {
                curves.push(CurveRow {
                    episode: ep,
                    agent: i as u32,
                    critic_loss: (loss_counts[i] > 0).then(|| loss_sums[i] / f64::from(loss_counts[i])),
                    mean_reward: if slots > 0 {
                        reward_sums[i] / f64::from(slots)
                    } else {
                        0.0
                    },
                });
            }
            self.episodes_done += 1;

            if self.config.train.eval_every > 0 && self.episodes_done.is_multiple_of(self.config.train.eval_every)
            {
                let eval_tag = format!("train-eval-ep{}", self.episodes_done);
                let eval_scenario = Scenario::build(&self.config, self.master_seed, &eval_tag)?;
                let mut controller = LearnedController::new(&self.agents, 0.0, &eval_scenario);
                let (metrics, _) = run_episode(&eval_scenario, &mut controller)?;
                evals.push(EvalRow {
                    episode: self.episodes_done,
                    cr: metrics.cr,
                });
            }

            if let Some(dir) = out_dir {
                if self.config.train.checkpoint_every > 0
                    && self.episodes_done.is_multiple_of(self.config.train.checkpoint_every)
                {
                    self.save_checkpoint(&dir.join("checkpoints").join("latest"))?;
                }
            }
        }

        if let Some(dir) = out_dir {
            self.save_checkpoint(&dir.join("checkpoints").join("latest"))?;
            write_curves_csv(&dir.join("curves.csv"), &curves)?;
            write_eval_csv(&dir.join("eval.csv"), &evals)?;
        }
        Ok((curves, evals))
    }

    /// Writes the full training state: per-agent network and optimizer
    /// checkpoints, the replay buffer, and a meta record.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = serde_json::json!({
            "schema_version": crate::config::SCHEMA_VERSION,
            "code_version": env!("CARGO_PKG_VERSION"),
            "episodes_done": self.episodes_done,
            "n_agents": self.agents.len(),
            "master_seed": self.master_seed,
        });
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        for (i, agent) in self.agents.iter().enumerate() {
            let agent_dir = dir.join(format!("agent{i}"));
            agent.actor.save(agent_dir.join("actor.bin"))?;
            agent.critic.save(agent_dir.join("critic.bin"))?;
            agent.target_actor.save(agent_dir.join("target_actor.bin"))?;
            agent.target_critic.save(agent_dir.join("target_critic.bin"))?;
            agent.actor_opt.save(agent_dir.join("actor_opt.bin"))?;
            agent.critic_opt.save(agent_dir.join("critic_opt.bin"))?;
        }
        save_buffer(&self.buffer, &dir.join("buffer.bin"))?;
        Ok(())
    }

    /// Restores a trainer from a checkpoint directory.
    pub fn load_checkpoint(config: &SimulationConfig, master_seed: u64, dir: &Path) -> Result<Self> {
        let meta_text = std::fs::read_to_string(dir.join("meta.json"))
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.display())))?;
        let meta: serde_json::Value = serde_json::from_str(&meta_text)
            .map_err(|e| Error::Checkpoint(format!("corrupt meta.json: {e}")))?;
        let episodes_done = meta["episodes_done"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("meta.json missing episodes_done".into()))?
            as u32;
        let n_agents = meta["n_agents"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("meta.json missing n_agents".into()))?
            as usize;
        if n_agents != config.sim.vehicles as usize {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {n_agents} agents, config expects {}",
                config.sim.vehicles
            )));
        }
        if let Some(saved_seed) = meta["master_seed"].as_u64() {
            if saved_seed != master_seed {
                return Err(Error::Checkpoint(format!(
                    "checkpoint was trained with seed {saved_seed}, resume requested seed {master_seed}"
                )));
            }
        }
        let mut trainer = Trainer::new(config, master_seed)?;
        for (i, agent) in trainer.agents.iter_mut().enumerate() {
            let agent_dir = dir.join(format!("agent{i}"));
            agent.actor = crate::nn::Mlp::load(agent_dir.join("actor.bin"))?;
            agent.critic = crate::nn::Mlp::load(agent_dir.join("critic.bin"))?;
            agent.target_actor = crate::nn::Mlp::load(agent_dir.join("target_actor.bin"))?;
            agent.target_critic = crate::nn::Mlp::load(agent_dir.join("target_critic.bin"))?;
            agent.actor_opt = crate::nn::Adam::load(agent_dir.join("actor_opt.bin"), &agent.actor)?;
            agent.critic_opt =
                crate::nn::Adam::load(agent_dir.join("critic_opt.bin"), &agent.critic)?;
        }
        trainer.buffer = load_buffer(&dir.join("buffer.bin"), config.agents.buffer_capacity)?;
        trainer.episodes_done = episodes_done;
        Ok(trainer)
    }
}

pub fn write_curves_csv(path: &Path, curves: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode", "agent", "critic_loss", "mean_reward"])?;
    for row in curves {
        w.write_record([
            row.episode.to_string(),
            row.agent.to_string(),
            row.critic_loss.map(|l| l.to_string()).unwrap_or_default(),
            row.mean_reward.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_eval_csv(path: &Path, evals: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode", "cr"])?;
    for row in evals {
        w.write_record([row.episode.to_string(), row.cr.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn save_buffer(buffer: &ReplayBuffer, path: &Path) -> Result<()> {
    let n = buffer.len();
    let (agents, obs_dim, act_dim) = match buffer.iter().next() {
        Some(e) => (
            e.observations.len(),
            e.observations[0].len(),
            e.joint_action[0].len(),
        ),
        None => (0, 0, 0),
    };
    let mut obs = Vec::with_capacity(n * agents * obs_dim);
    let mut act = Vec::with_capacity(n * agents * act_dim);
    let mut rew = Vec::with_capacity(n * agents);
    let mut next = Vec::with_capacity(n * agents * obs_dim);
    for e in buffer.iter() {
        for a in &e.observations {
            obs.extend_from_slice(a);
        }
        for a in &e.joint_action {
            act.extend_from_slice(a);
        }
        rew.extend_from_slice(&e.rewards);
        for a in &e.next_observations {
            next.extend_from_slice(a);
        }
    }
    crate::nn::write_tensors(
        path,
        &[
            (
                "shape".into(),
                vec![4],
                vec![n as f64, agents as f64, obs_dim as f64, act_dim as f64],
            ),
            ("obs".into(), vec![n, agents, obs_dim], obs),
            ("act".into(), vec![n, agents, act_dim], act),
            ("rew".into(), vec![n, agents], rew),
            ("next".into(), vec![n, agents, obs_dim], next),
        ],
    )
}

fn load_buffer(path: &Path, capacity: usize) -> Result<ReplayBuffer> {
    let mut tensors = crate::nn::read_tensors(path)?;
    let shape = tensors
        .remove("shape")
        .ok_or_else(|| Error::Checkpoint("buffer missing shape".into()))?
        .1;
    let (n, agents, obs_dim, act_dim) = (
        shape[0] as usize,
        shape[1] as usize,
        shape[2] as usize,
        shape[3] as usize,
    );
    let take = |tensors: &mut crate::nn::TensorMap, name: &str| {
        tensors
            .remove(name)
            .map(|(_, data)| data)
            .ok_or_else(|| Error::Checkpoint(format!("buffer missing {name}")))
    };
    let obs = take(&mut tensors, "obs")?;
    let act = take(&mut tensors, "act")?;
    let rew = take(&mut tensors, "rew")?;
    let next = take(&mut tensors, "next")?;
    if obs.len() != n * agents * obs_dim
        || act.len() != n * agents * act_dim
        || rew.len() != n * agents
        || next.len() != n * agents * obs_dim
    {
        return Err(Error::Checkpoint("buffer tensor sizes inconsistent".into()));
    }
    let mut buffer = ReplayBuffer::new(capacity);
    for k in 0..n {
        let chunk = |flat: &[f64], width: usize, a: usize| {
            flat[(k * agents + a) * width..(k * agents + a + 1) * width].to_vec()
        };
        buffer.push(Experience {
            observations: (0..agents).map(|a| chunk(&obs, obs_dim, a)).collect(),
            joint_action: (0..agents).map(|a| chunk(&act, act_dim, a)).collect(),
            rewards: (0..agents).map(|a| rew[k * agents + a]).collect(),
            next_observations: (0..agents).map(|a| chunk(&next, obs_dim, a)).collect(),
        });
    }
    Ok(buffer)
}
