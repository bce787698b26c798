//! Greedy bandwidth allocation: rank in-range vehicles by required data
//! volume (descending) and predicted distance to the RSU (ascending),
//! then hand out harmonic shares b_e / (omega + rank) under the RSU cap.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::views::View;

/// Allocator input for one in-range vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocEntry {
    pub vehicle: u32,
    /// Total size of this vehicle's required uploads this slot, bits.
    pub required_bits: u64,
    /// Mean predicted distance to the RSU over the prediction horizon.
    pub predicted_distance_m: f64,
}

/// One vehicle's share of the slot's bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocatedShare {
    pub vehicle: u32,
    pub required_bits: u64,
    pub predicted_distance_m: f64,
    /// 1-based greedy rank.
    pub rank: usize,
    pub bandwidth_hz: f64,
}

/// The slot's complete bandwidth decision, sorted by rank.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AllocationDecision {
    pub shares: Vec<AllocatedShare>,
}

impl AllocationDecision {
    pub fn bandwidth_for(&self, vehicle: u32) -> f64 {
        self.shares
            .iter()
            .find(|s| s.vehicle == vehicle)
            .map_or(0.0, |s| s.bandwidth_hz)
    }

    pub fn total_allocated_hz(&self) -> f64 {
        self.shares.iter().map(|s| s.bandwidth_hz).sum()
    }
}

/// Total size of the items vehicle `vehicle` must upload for the slot's
/// scheduled views: the union of its required categories across views
/// (a category required by several views is counted once), summed over
/// the per-category item sizes drawn for this slot.
pub fn required_volume(
    vehicle: u32,
    views: &[&View],
    item_size_bits: &BTreeMap<(u32, u32), u64>,
) -> u64 {
    let categories: BTreeSet<u32> = views
        .iter()
        .flat_map(|v| v.required_categories(vehicle))
        .collect();
    categories
        .iter()
        .map(|&j| item_size_bits.get(&(vehicle, j)).copied().unwrap_or(0))
        .sum()
}

/// 1-based ranks aligned with the input order: required volume
/// descending, predicted distance ascending, vehicle id ascending.
pub fn rank_vehicles(entries: &[AllocEntry]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&entries[a], &entries[b]);
        eb.required_bits
            .cmp(&ea.required_bits)
            .then_with(|| {
                ea.predicted_distance_m
                    .partial_cmp(&eb.predicted_distance_m)
                    .expect("finite distances")
            })
            .then_with(|| ea.vehicle.cmp(&eb.vehicle))
    });
    let mut ranks = vec![0usize; entries.len()];
    for (rank, &idx) in order.iter().enumerate() {
        ranks[idx] = rank + 1;
    }
    ranks
}

/// Harmonic shares b_e / (omega + rank). The raw shares can oversubscribe
/// the cap (e.g. omega = 1 with two or more vehicles), in which case all
/// shares are scaled uniformly so the total equals b_e; the greedy
/// ordering is preserved and the cap holds exactly.
pub fn allocate(entries: &[AllocEntry], bandwidth_hz: f64, omega: f64) -> AllocationDecision {
    assert!(omega > 0.0, "omega must be > 0");
    if entries.is_empty() {
        return AllocationDecision::default();
    }
    let ranks = rank_vehicles(entries);
    let mut shares: Vec<AllocatedShare> = entries
        .iter()
        .zip(&ranks)
        .map(|(e, &rank)| AllocatedShare {
            vehicle: e.vehicle,
            required_bits: e.required_bits,
            predicted_distance_m: e.predicted_distance_m,
            rank,
            bandwidth_hz: bandwidth_hz / (omega + rank as f64),
        })
        .collect();
    shares.sort_by_key(|s| s.rank);

    let total: f64 = shares.iter().map(|s| s.bandwidth_hz).sum();
    if total > bandwidth_hz {
        let factor = bandwidth_hz / total;
        for s in &mut shares {
            s.bandwidth_hz *= factor;
        }
        // Floating-point residue from the rescale lands on the largest
        // share (ulp-sized, far below the macroscopic rank gaps) until
        // the cap holds exactly.
        let mut guard = 0;
        loop {
            let rescaled: f64 = shares.iter().map(|s| s.bandwidth_hz).sum();
            if rescaled <= bandwidth_hz {
                break;
            }
            let before = shares[0].bandwidth_hz;
            shares[0].bandwidth_hz -= rescaled - bandwidth_hz;
            if shares[0].bandwidth_hz == before {
                shares[0].bandwidth_hz = before.next_down();
            }
            guard += 1;
            assert!(guard <= 64, "cap repair failed to converge");
        }
    }
    AllocationDecision { shares }
}
