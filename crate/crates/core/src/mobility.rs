//! Trajectory ingestion, synthetic trace generation, and short-horizon
//! location prediction feeding the bandwidth allocator.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::types::Point;
use crate::{Error, Result};

const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// One raw trajectory sample before resampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub vehicle: u32,
    pub t: f64,
    pub position: Point,
}

/// A vehicle's positions resampled onto the slot grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledTrace {
    pub vehicle: u32,
    pub positions: Vec<Point>,
}

/// What to do with a vehicle whose consecutive samples are farther apart
/// than the configured gap threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GapPolicy {
    /// Remove the vehicle from the run.
    Drop,
    /// Split the trace at each oversized gap; segments with at least two
    /// points continue as separate vehicles with fresh ids.
    Split,
}

#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    pub slot_length_s: f64,
    pub horizon_slots: u32,
    pub max_gap_s: f64,
    pub gap_policy: GapPolicy,
    /// Projection origin (lon, lat) for geographic inputs; `None` uses
    /// the input centroid.
    pub projection_origin: Option<(f64, f64)>,
}

/// Equirectangular projection about `origin`, meters.
pub fn project_lon_lat(lon: f64, lat: f64, origin: (f64, f64)) -> Point {
    let (lon0, lat0) = origin;
    let x = EARTH_RADIUS_M * (lon - lon0).to_radians() * lat0.to_radians().cos();
    let y = EARTH_RADIUS_M * (lat - lat0).to_radians();
    Point::new(x, y)
}

/// Reads a trajectory CSV with header `vehicle_id,timestamp,lon,lat` or
/// `vehicle_id,t,x,y`, projects geographic inputs to meters, normalizes
/// timestamps to run-relative seconds, applies the gap policy, and
/// resamples each vehicle linearly onto the slot grid. Positions outside
/// a vehicle's observed window hold the nearest endpoint.
pub fn ingest_csv(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<Vec<ResampledTrace>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let cols: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    let geographic = match cols.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["vehicle_id", "timestamp", "lon", "lat"] => true,
        ["vehicle_id", "t", "x", "y"] => false,
        _ => {
            return Err(Error::Ingest {
                line: 1,
                message: format!(
                    "unrecognized header {:?}; expected vehicle_id,timestamp,lon,lat or vehicle_id,t,x,y",
                    headers
                ),
            })
        }
    };

    let mut rows: Vec<(usize, u32, f64, f64, f64)> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // 1-based, after the header
        let record = record?;
        let parse_err = |what: &str| Error::Ingest {
            line,
            message: format!("malformed {what} in {record:?}"),
        };
        if record.len() != 4 {
            return Err(parse_err("row (expected 4 columns)"));
        }
        let vehicle: u32 = record[0].parse().map_err(|_| parse_err("vehicle_id"))?;
        let t: f64 = record[1].parse().map_err(|_| parse_err("timestamp"))?;
        let a: f64 = record[2].parse().map_err(|_| parse_err("coordinate"))?;
        let b: f64 = record[3].parse().map_err(|_| parse_err("coordinate"))?;
        if !(t.is_finite() && a.is_finite() && b.is_finite()) {
            return Err(parse_err("non-finite value"));
        }
        rows.push((line, vehicle, t, a, b));
    }
    if rows.is_empty() {
        return Err(Error::Ingest {
            line: 1,
            message: "empty trajectory file".into(),
        });
    }

    let origin = opts.projection_origin.unwrap_or_else(|| {
        let n = rows.len() as f64;
        (
            rows.iter().map(|r| r.3).sum::<f64>() / n,
            rows.iter().map(|r| r.4).sum::<f64>() / n,
        )
    });
    let t0 = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);

    let mut per_vehicle: BTreeMap<u32, Vec<(usize, f64, Point)>> = BTreeMap::new();
    for (line, vehicle, t, a, b) in rows {
        let position = if geographic {
            project_lon_lat(a, b, origin)
        } else {
            Point::new(a, b)
        };
        per_vehicle
            .entry(vehicle)
            .or_default()
            .push((line, t - t0, position));
    }

    let mut split_id = per_vehicle.keys().copied().max().unwrap_or(0);
    let mut traces = Vec::new();
    for (vehicle, points) in per_vehicle {
        for window in points.windows(2) {
            if window[1].1 <= window[0].1 {
                return Err(Error::Ingest {
                    line: window[1].0,
                    message: format!(
                        "non-monotone timestamp for vehicle {vehicle}: {} after {}",
                        window[1].1, window[0].1
                    ),
                });
            }
        }
        if points.len() < 2 {
            return Err(Error::Ingest {
                line: points[0].0,
                message: format!("vehicle {vehicle} has fewer than 2 points"),
            });
        }

        // Segment at oversized gaps.
        let mut segments: Vec<Vec<(f64, Point)>> = vec![Vec::new()];
        for (i, &(_, t, p)) in points.iter().enumerate() {
            if i > 0 && t - points[i - 1].1 > opts.max_gap_s {
                segments.push(Vec::new());
            }
            segments.last_mut().expect("non-empty").push((t, p));
        }
        if segments.len() == 1 {
            traces.push(ResampledTrace {
                vehicle,
                positions: resample(&segments[0], opts),
            });
            continue;
        }
        match opts.gap_policy {
            GapPolicy::Drop => {}
            GapPolicy::Split => {
                for segment in segments.into_iter().filter(|s| s.len() >= 2) {
                    split_id += 1;
                    traces.push(ResampledTrace {
                        vehicle: split_id,
                        positions: resample(&segment, opts),
                    });
                }
            }
        }
    }
    Ok(traces)
}

fn resample(points: &[(f64, Point)], opts: &IngestOptions) -> Vec<Point> {
    let mut positions = Vec::with_capacity(opts.horizon_slots as usize);
    for slot in 0..opts.horizon_slots {
        let t = f64::from(slot) * opts.slot_length_s;
        positions.push(interpolate(points, t));
    }
    positions
}

fn interpolate(points: &[(f64, Point)], t: f64) -> Point {
    if t <= points[0].0 {
        return points[0].1;
    }
    if t >= points[points.len() - 1].0 {
        return points[points.len() - 1].1;
    }
    let i = points.partition_point(|&(pt, _)| pt <= t);
    let (t0, p0) = points[i - 1];
    let (t1, p1) = points[i];
    if t == t0 {
        return p0;
    }
    let w = (t - t0) / (t1 - t0);
    Point::new(p0.x + w * (p1.x - p0.x), p0.y + w * (p1.y - p0.y))
}

/// Random-waypoint traces inside `area_m`, one position per slot.
pub fn synthesize(
    n_vehicles: u32,
    area_m: (f64, f64),
    speed_range_mps: (f64, f64),
    horizon_slots: u32,
    slot_length_s: f64,
    rng: &mut impl Rng,
) -> Vec<ResampledTrace> {
    let (w, h) = area_m;
    let (lo, hi) = speed_range_mps;
    (0..n_vehicles)
        .map(|vehicle| {
            let mut pos = Point::new(rng.random_range(0.0..=w), rng.random_range(0.0..=h));
            let mut waypoint = Point::new(rng.random_range(0.0..=w), rng.random_range(0.0..=h));
            let mut speed = if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            };
            let mut positions = Vec::with_capacity(horizon_slots as usize);
            for _ in 0..horizon_slots {
                positions.push(pos);
                let mut budget = speed * slot_length_s;
                while budget > 0.0 {
                    let dist = pos.distance(&waypoint);
                    if dist <= budget {
                        budget -= dist;
                        pos = waypoint;
                        waypoint =
                            Point::new(rng.random_range(0.0..=w), rng.random_range(0.0..=h));
                        speed = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                        if speed == 0.0 {
                            break;
                        }
                    } else {
                        if dist > 0.0 {
                            let f = budget / dist;
                            pos = Point::new(
                                pos.x + f * (waypoint.x - pos.x),
                                pos.y + f * (waypoint.y - pos.y),
                            );
                        }
                        budget = 0.0;
                    }
                }
            }
            ResampledTrace { vehicle, positions }
        })
        .collect()
}

/// Location-prediction method for the allocator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Predictor {
    /// Linear extrapolation from the last two resampled points.
    ConstantVelocity,
    /// Fits a 2-component Gaussian mixture to recent per-slot deltas of
    /// the vehicle-to-RSU distance and extrapolates by the mixture mean.
    EmDistance,
}

/// Predicted positions over the next `h` slots and their mean distance
/// to the RSU.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub positions: Vec<Point>,
    pub mean_predicted_distance_m: f64,
}

/// Number of trailing distance deltas the EM predictor fits.
const EM_WINDOW: usize = 20;

/// Predicts `h` future positions from a per-slot position history. With
/// fewer than two history points the last known position persists.
pub fn predict(history: &[Point], h: u32, method: Predictor, rsu: Point) -> Prediction {
    assert!(h >= 1, "prediction horizon must be >= 1");
    assert!(!history.is_empty(), "need at least one history point");
    let last = history[history.len() - 1];
    let positions: Vec<Point> = if history.len() < 2 {
        std::iter::repeat_n(last, h as usize).collect()
    } else {
        match method {
            Predictor::ConstantVelocity => {
                let prev = history[history.len() - 2];
                let v = Point::new(last.x - prev.x, last.y - prev.y);
                (1..=h as i64)
                    .map(|k| Point::new(last.x + k as f64 * v.x, last.y + k as f64 * v.y))
                    .collect()
            }
            Predictor::EmDistance => {
                let start = history.len().saturating_sub(EM_WINDOW + 1);
                let distances: Vec<f64> =
                    history[start..].iter().map(|p| p.distance(&rsu)).collect();
                let deltas: Vec<f64> = distances.windows(2).map(|w| w[1] - w[0]).collect();
                let step = mixture_mean(&deltas);
                let d0 = last.distance(&rsu);
                // Place predictions on the ray from the RSU through the
                // current position; only the distances are consumed.
                let dir = if d0 > 0.0 {
                    Point::new((last.x - rsu.x) / d0, (last.y - rsu.y) / d0)
                } else {
                    Point::new(1.0, 0.0)
                };
                (1..=h as i64)
                    .map(|k| {
                        let d = (d0 + k as f64 * step).max(0.0);
                        Point::new(rsu.x + d * dir.x, rsu.y + d * dir.y)
                    })
                    .collect()
            }
        }
    };
    let mean_predicted_distance_m =
        positions.iter().map(|p| p.distance(&rsu)).sum::<f64>() / positions.len() as f64;
    Prediction {
        positions,
        mean_predicted_distance_m,
    }
}

/// Mean of a 2-component 1-D Gaussian mixture fit by EM. At any EM fixed
/// point the mixture mean equals the sample mean; running the fit keeps
/// the component structure available for inspection and mirrors the
/// configured predictor.
fn mixture_mean(data: &[f64]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    if data.len() == 1 {
        return data[0];
    }
    let sample_mean = data.iter().sum::<f64>() / data.len() as f64;
    let sample_var = data
        .iter()
        .map(|x| (x - sample_mean) * (x - sample_mean))
        .sum::<f64>()
        / data.len() as f64;
    if sample_var < 1e-18 {
        return sample_mean;
    }
    let spread = sample_var.sqrt();
    let mut mu = [sample_mean - 0.5 * spread, sample_mean + 0.5 * spread];
    let mut var = [sample_var; 2];
    let mut weight = [0.5; 2];
    let mut resp = vec![[0.5f64; 2]; data.len()];
    for _ in 0..50 {
        // E step.
        for (x, r) in data.iter().zip(resp.iter_mut()) {
            let mut p = [0.0; 2];
            for k in 0..2 {
                let v = var[k].max(1e-12);
                p[k] = weight[k] * (-(x - mu[k]) * (x - mu[k]) / (2.0 * v)).exp() / v.sqrt();
            }
            let total = p[0] + p[1];
            *r = if total > 0.0 {
                [p[0] / total, p[1] / total]
            } else {
                [0.5, 0.5]
            };
        }
        // M step.
        let mut changed = 0.0f64;
        for k in 0..2 {
            let nk: f64 = resp.iter().map(|r| r[k]).sum();
            if nk < 1e-12 {
                continue;
            }
            let new_mu = data.iter().zip(&resp).map(|(x, r)| r[k] * x).sum::<f64>() / nk;
            let new_var = data
                .iter()
                .zip(&resp)
                .map(|(x, r)| r[k] * (x - new_mu) * (x - new_mu))
                .sum::<f64>()
                / nk;
            changed = changed.max((new_mu - mu[k]).abs());
            mu[k] = new_mu;
            var[k] = new_var.max(1e-12);
            weight[k] = nk / data.len() as f64;
        }
        if changed < 1e-10 {
            break;
        }
    }
    weight[0] * mu[0] + weight[1] * mu[1]
}
