//! Domain types shared by all modules.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// 2-D Cartesian position in meters. Geographic inputs are projected to
/// this frame at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Discrete simulation clock: `horizon_slots` slots of `slot_length_s`
/// seconds each.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimClock {
    pub slot_index: u32,
    pub slot_length_s: f64,
    pub horizon_slots: u32,
}

impl SimClock {
    pub fn new(slot_length_s: f64, horizon_slots: u32) -> Self {
        SimClock {
            slot_index: 0,
            slot_length_s,
            horizon_slots,
        }
    }

    /// Wall-clock time at the start of the current slot.
    pub fn now(&self) -> f64 {
        f64::from(self.slot_index) * self.slot_length_s
    }

    /// Total scheduling-period duration in seconds.
    pub fn period_s(&self) -> f64 {
        f64::from(self.horizon_slots) * self.slot_length_s
    }
}

/// The single roadside unit: location, radio range, and total V2I
/// bandwidth it may distribute among in-range vehicles.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Rsu {
    pub location: Point,
    pub range_m: f64,
    pub bandwidth_hz: f64,
}

/// One concrete piece of information: the `index_k`-th item of category
/// `category_j`, with its payload size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataItem {
    pub category_j: u32,
    pub index_k: u32,
    pub size_bits: u64,
}

/// Per-category sensing and uploading parameters for one vehicle.
///
/// `arrival_rate` and `priority` are the current per-slot decisions; the
/// remaining fields are static capabilities of the sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryParams {
    /// Current sensing frequency, arrivals per second.
    pub arrival_rate: f64,
    pub arrival_rate_min: f64,
    pub arrival_rate_max: f64,
    /// Current uploading priority, in the open interval (0, 1). Higher
    /// uploads earlier.
    pub priority: f64,
    /// Mean upload service time E[ser], seconds.
    pub service_mean_s: f64,
    /// Second moment E[ser^2], seconds^2.
    pub service_second_moment_s2: f64,
}

impl CategoryParams {
    pub fn validate(&self, path: &str) -> Result<()> {
        let err = |message: String| Error::Config {
            path: path.to_string(),
            message,
        };
        if !(self.arrival_rate_min > 0.0) {
            return Err(err(format!(
                "arrival_rate_min must be > 0, got {}",
                self.arrival_rate_min
            )));
        }
        if self.arrival_rate_min > self.arrival_rate_max {
            return Err(err(format!(
                "arrival_rate_min {} exceeds arrival_rate_max {}",
                self.arrival_rate_min, self.arrival_rate_max
            )));
        }
        if self.arrival_rate < self.arrival_rate_min || self.arrival_rate > self.arrival_rate_max {
            return Err(err(format!(
                "arrival_rate {} outside [{}, {}]",
                self.arrival_rate, self.arrival_rate_min, self.arrival_rate_max
            )));
        }
        if !(self.priority > 0.0 && self.priority < 1.0) {
            return Err(err(format!(
                "priority must lie in (0, 1), got {}",
                self.priority
            )));
        }
        if !(self.service_mean_s > 0.0) {
            return Err(err(format!(
                "service_mean_s must be > 0, got {}",
                self.service_mean_s
            )));
        }
        // Jensen: E[X^2] >= E[X]^2.
        if self.service_second_moment_s2 < self.service_mean_s * self.service_mean_s {
            return Err(err(format!(
                "service_second_moment_s2 {} below service_mean_s^2 {}",
                self.service_second_moment_s2,
                self.service_mean_s * self.service_mean_s
            )));
        }
        Ok(())
    }
}

/// One vehicle: its slot-indexed position trace and per-category
/// parameters. The trace covers every slot of the horizon.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: u32,
    pub trace: Vec<Point>,
    pub categories: Vec<CategoryParams>,
}

impl VehicleState {
    pub fn position(&self, slot: u32) -> Point {
        self.trace[slot as usize]
    }

    pub fn in_range(&self, slot: u32, rsu: &Rsu) -> bool {
        self.position(slot).distance(&rsu.location) <= rsu.range_m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> CategoryParams {
        CategoryParams {
            arrival_rate: 1.0,
            arrival_rate_min: 0.1,
            arrival_rate_max: 2.0,
            priority: 0.5,
            service_mean_s: 0.2,
            service_second_moment_s2: 0.08,
        }
    }

    #[test]
    fn valid_params_pass() {
        params().validate("c").unwrap();
    }

    #[test]
    fn inverted_rate_bounds_rejected() {
        let mut p = params();
        p.arrival_rate_min = 2.0;
        p.arrival_rate_max = 1.0;
        p.arrival_rate = 1.5;
        assert!(p.validate("c").is_err());
    }

    #[test]
    fn jensen_violation_rejected() {
        let mut p = params();
        p.service_second_moment_s2 = 0.01; // below 0.2^2
        assert!(p.validate("c").is_err());
    }

    #[test]
    fn in_range_matches_distance() {
        let v = VehicleState {
            id: 0,
            trace: vec![Point::new(0.0, 0.0), Point::new(600.0, 0.0)],
            categories: vec![],
        };
        let rsu = Rsu {
            location: Point::new(0.0, 0.0),
            range_m: 500.0,
            bandwidth_hz: 3e6,
        };
        assert!(v.in_range(0, &rsu));
        assert!(!v.in_range(1, &rsu));
    }
}
