//! Property tests for the closed-form queueing statistics, link model,
//! view scoring, and bandwidth allocation.

use std::collections::BTreeSet;

use proptest::prelude::*;

use aov_sim::allocation::{allocate, AllocEntry};
use aov_sim::aov;
use aov_sim::channel::{self, ChannelParams};
use aov_sim::queueing::{waiting_time, workloads};
use aov_sim::types::CategoryParams;
use aov_sim::views::{Delivery, View};

fn class(rate: f64, priority: f64, mean: f64, m2: f64) -> CategoryParams {
    CategoryParams {
        arrival_rate: rate,
        arrival_rate_min: 1e-6,
        arrival_rate_max: 1e6,
        priority,
        service_mean_s: mean,
        service_second_moment_s2: m2,
    }
}

fn channel_params() -> ChannelParams {
    ChannelParams {
        noise_w: 1e-12,
        fading_gain_mean: 2.0,
        fading_gain_variance: 0.4,
        antenna_constant: 1.0,
        path_loss_exponent: 3.0,
        tx_power_w: 1e-3,
    }
}

proptest! {
    /// The closed-form wait collapses to the Pollaczek-Khinchine mean for a single
    /// class, to 1e-12 relative.
    #[test]
    fn single_class_reduces_to_pk(
        rate in 0.01f64..5.0,
        mean in 0.01f64..2.0,
        excess in 0.0f64..3.0,
    ) {
        let utilization = rate * mean;
        prop_assume!(utilization < 0.95);
        let m2 = mean * mean * (1.0 + excess);
        let c = class(rate, 0.5, mean, m2);
        let stats = workloads(std::slice::from_ref(&c)).unwrap();
        let wait = waiting_time(&c, &stats.per_class[0]).unwrap();
        let pk = rate * m2 / (2.0 * (1.0 - utilization));
        let denom = pk.abs().max(1e-300);
        prop_assert!((wait - pk).abs() / denom < 1e-12, "wait {wait}, pk {pk}");
    }

    /// All else equal, the higher-priority class never waits longer.
    #[test]
    fn higher_priority_waits_no_longer(
        r1 in 0.05f64..1.0,
        r2 in 0.05f64..1.0,
        mean in 0.05f64..0.5,
        p_high in 0.51f64..0.99,
        p_low in 0.01f64..0.49,
    ) {
        prop_assume!((r1 + r2) * mean < 0.95);
        let m2 = 2.0 * mean * mean;
        let classes = [class(r1, p_high, mean, m2), class(r2, p_low, mean, m2)];
        let stats = workloads(&classes).unwrap();
        let w_high = waiting_time(&classes[0], &stats.per_class[0]).unwrap();
        let w_low = waiting_time(&classes[1], &stats.per_class[1]).unwrap();
        prop_assert!(w_high <= w_low + 1e-12, "high {w_high} > low {w_low}");
    }

    /// Waiting times are non-negative across the feasible region.
    #[test]
    fn waits_are_non_negative(
        rates in prop::collection::vec(0.01f64..0.8, 1..5),
        mean in 0.01f64..0.5,
    ) {
        let workload: f64 = rates.iter().map(|r| r * mean).sum();
        prop_assume!(workload < 0.95);
        let classes: Vec<CategoryParams> = rates
            .iter()
            .enumerate()
            .map(|(i, &r)| class(r, 0.1 + 0.8 * (i as f64) / 5.0, mean, 2.0 * mean * mean))
            .collect();
        let stats = workloads(&classes).unwrap();
        for (c, s) in classes.iter().zip(&stats.per_class) {
            prop_assert!(waiting_time(c, s).unwrap() >= 0.0);
        }
    }

    /// SNR decreases with distance and scales linearly with power.
    #[test]
    fn snr_monotone_and_linear(
        d1 in 1.0f64..5000.0,
        factor in 1.001f64..10.0,
        fading in 0.1f64..5.0,
    ) {
        let p = channel_params();
        let near = channel::snr(&p, d1, fading);
        let far = channel::snr(&p, d1 * factor, fading);
        prop_assert!(far < near);
        let mut double_power = p;
        double_power.tx_power_w *= 2.0;
        let doubled = channel::snr(&double_power, d1, fading);
        prop_assert!((doubled - 2.0 * near).abs() <= 1e-9 * near.abs().max(1e-300));
    }

    /// Raising any SNR sample never flips the success predicate off.
    #[test]
    fn success_is_monotone_in_samples(
        samples in prop::collection::vec(0.0f64..10.0, 1..8),
        wall in 0.0f64..5.0,
        bump_idx in 0usize..8,
        bump in 0.0f64..5.0,
    ) {
        let before = channel::success_indicator(&samples, wall);
        let mut bumped = samples.clone();
        let k = bump_idx % bumped.len();
        bumped[k] += bump;
        let after = channel::success_indicator(&bumped, wall);
        prop_assert!(!(before && !after), "raising a sample flipped success off");
    }

    /// AoV stays inside [0, 1] for normalized inputs and simplex weights.
    #[test]
    fn aov_is_bounded(
        theta_hat in 0.0f64..=1.0,
        chi in 0.0f64..=1.0,
        xi_hat in 0.0f64..=1.0,
        w1 in 0.0f64..=1.0,
        w2 in 0.0f64..=1.0,
    ) {
        prop_assume!(w1 + w2 <= 1.0);
        let weights = aov::Weights {
            timeliness: w1,
            completeness: w2,
            consistency: 1.0 - w1 - w2,
        };
        let v = aov::aov(theta_hat, chi, xi_hat, &weights).unwrap();
        prop_assert!((0.0..=1.0).contains(&v), "aov = {v}");
    }

    /// Delivering one more required cell never decreases completeness.
    #[test]
    fn completeness_monotone_in_deliveries(
        n_cells in 2usize..10,
        delivered_mask in prop::collection::vec(any::<bool>(), 10),
        flip in 0usize..10,
    ) {
        let required: BTreeSet<(u32, u32)> = (0..n_cells as u32).map(|i| (i, 0)).collect();
        let mut view = View::new(0, required.clone()).unwrap();
        for (i, &success) in delivered_mask.iter().enumerate().take(n_cells) {
            view.record_delivery(i as u32, 0, Delivery {
                success,
                inter_arrival_s: 1.0,
                wait_s: 0.1,
                transmission_s: Some(0.1),
            }).unwrap();
        }
        let before = aov::completeness(&view).unwrap();
        let k = (flip % n_cells) as u32;
        view.record_delivery(k, 0, Delivery {
            success: true,
            inter_arrival_s: 1.0,
            wait_s: 0.1,
            transmission_s: Some(0.1),
        }).unwrap();
        let after = aov::completeness(&view).unwrap();
        prop_assert!(after >= before);
    }

    /// Consistency is invariant to translating all delivered times.
    #[test]
    fn consistency_translation_invariant(
        times in prop::collection::vec(0.0f64..5.0, 2..8),
        shift in 0.0f64..10.0,
    ) {
        let build = |offset: f64| {
            let required: BTreeSet<(u32, u32)> =
                (0..times.len() as u32).map(|i| (i, 0)).collect();
            let mut view = View::new(0, required).unwrap();
            for (i, &t) in times.iter().enumerate() {
                view.record_delivery(i as u32, 0, Delivery {
                    success: true,
                    inter_arrival_s: 1.0,
                    wait_s: t + offset,
                    transmission_s: Some(0.0),
                }).unwrap();
            }
            view
        };
        let base = aov::consistency(&build(0.0));
        let shifted = aov::consistency(&build(shift));
        prop_assert!((base - shifted).abs() < 1e-9, "{base} vs {shifted}");
    }

    /// Allocation: the cap holds exactly, every share is within [0, b_e],
    /// shares are monotone in rank, and input order is irrelevant.
    #[test]
    fn allocation_feasible_and_order_free(
        volumes in prop::collection::vec(0u64..20_000_000, 1..12),
        dists in prop::collection::vec(1.0f64..1000.0, 12),
        bandwidth in 1e5f64..1e7,
        omega in 0.1f64..5.0,
        rotation in 0usize..12,
    ) {
        let entries: Vec<AllocEntry> = volumes
            .iter()
            .enumerate()
            .map(|(i, &v)| AllocEntry {
                vehicle: i as u32,
                required_bits: v,
                predicted_distance_m: dists[i],
            })
            .collect();
        let decision = allocate(&entries, bandwidth, omega);
        let total: f64 = decision.shares.iter().map(|s| s.bandwidth_hz).sum();
        prop_assert!(total <= bandwidth, "C5: {total} > {bandwidth}");
        for pair in decision.shares.windows(2) {
            prop_assert!(pair[0].bandwidth_hz >= pair[1].bandwidth_hz, "rank monotonicity");
        }
        for s in &decision.shares {
            prop_assert!(s.bandwidth_hz >= 0.0 && s.bandwidth_hz <= bandwidth, "C3");
        }
        // Rotate the input order; the decision must be identical.
        let mut rotated = entries.clone();
        rotated.rotate_left(rotation % entries.len());
        let decision_rotated = allocate(&rotated, bandwidth, omega);
        prop_assert_eq!(decision, decision_rotated);
    }

    /// Min-max scaling of a degenerate window is 0.
    #[test]
    fn normalize_degenerate_window(v in -100.0f64..100.0) {
        prop_assert_eq!(aov::normalize(&[v, v], v), 0.0);
    }
}
