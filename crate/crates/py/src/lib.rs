//! Python bindings exposing the simulator's main types and operations.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use aov_sim::agents::BaselinePolicy;
use aov_sim::engine::{run_episode, BaselineController, Scenario};
use aov_sim::{channel, queueing};

fn to_py_err(e: aov_sim::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Received SNR at the RSU for the given link constants.
#[pyfunction]
#[pyo3(signature = (noise_w, fading_gain, antenna_constant, path_loss_exponent, tx_power_w, distance_m))]
fn snr(
    noise_w: f64,
    fading_gain: f64,
    antenna_constant: f64,
    path_loss_exponent: f64,
    tx_power_w: f64,
    distance_m: f64,
) -> f64 {
    let params = channel::ChannelParams {
        noise_w,
        fading_gain_mean: fading_gain,
        fading_gain_variance: 0.0,
        antenna_constant,
        path_loss_exponent,
        tx_power_w,
    };
    channel::snr(&params, distance_m, fading_gain)
}

/// SNR wall under `noise_uncertainty_db` of noise uncertainty.
#[pyfunction]
fn snr_wall(noise_uncertainty_db: f64) -> f64 {
    channel::snr_wall(noise_uncertainty_db)
}

/// Shannon rate in bits/second.
#[pyfunction]
fn shannon_rate(bandwidth_hz: f64, snr: f64) -> f64 {
    channel::rate(bandwidth_hz, snr)
}

/// Transmission time of `size_bits` at `rate_bps`; None when the item is
/// undeliverable.
#[pyfunction]
fn transmission_time(size_bits: u64, rate_bps: f64) -> Option<f64> {
    channel::transmission_time(size_bits, rate_bps)
}

/// Mean queuing delays for one vehicle's categories. Each class is a
/// (arrival_rate, priority, service_mean_s, service_second_moment_s2)
/// tuple; returns one mean wait per class.
#[pyfunction]
fn waiting_times(classes: Vec<(f64, f64, f64, f64)>) -> PyResult<Vec<f64>> {
    let params: Vec<aov_sim::CategoryParams> = classes
        .iter()
        .map(|&(rate, priority, mean, m2)| aov_sim::CategoryParams {
            arrival_rate: rate,
            arrival_rate_min: rate,
            arrival_rate_max: rate,
            priority,
            service_mean_s: mean,
            service_second_moment_s2: m2,
        })
        .collect();
    let stats = queueing::queue_stats(&params).map_err(to_py_err)?;
    Ok(stats.per_class.iter().map(|c| c.mean_wait_s).collect())
}

/// Greedy harmonic bandwidth shares. `entries` are (vehicle_id,
/// required_bits, predicted_distance_m); returns vehicle -> Hz.
#[pyfunction]
fn allocate_bandwidth(
    entries: Vec<(u32, u64, f64)>,
    bandwidth_hz: f64,
    omega: f64,
) -> PyResult<BTreeMap<u32, f64>> {
    if !(omega > 0.0) {
        return Err(PyValueError::new_err("omega must be > 0"));
    }
    let entries: Vec<aov_sim::allocation::AllocEntry> = entries
        .into_iter()
        .map(|(vehicle, required_bits, predicted_distance_m)| aov_sim::allocation::AllocEntry {
            vehicle,
            required_bits,
            predicted_distance_m,
        })
        .collect();
    let decision = aov_sim::allocation::allocate(&entries, bandwidth_hz, omega);
    Ok(decision
        .shares
        .iter()
        .map(|s| (s.vehicle, s.bandwidth_hz))
        .collect())
}

/// Weighted Age of View from normalized components.
#[pyfunction]
#[pyo3(signature = (theta_hat, chi, xi_hat, weights = (0.3, 0.4, 0.3)))]
fn aov(theta_hat: f64, chi: f64, xi_hat: f64, weights: (f64, f64, f64)) -> PyResult<f64> {
    let w = aov_sim::aov::Weights {
        timeliness: weights.0,
        completeness: weights.1,
        consistency: weights.2,
    };
    aov_sim::aov::aov(theta_hat, chi, xi_hat, &w).map_err(to_py_err)
}

/// A loaded simulation configuration.
#[pyclass(name = "SimulationConfig", from_py_object)]
#[derive(Clone)]
struct PySimulationConfig {
    inner: aov_sim::SimulationConfig,
}

#[pymethods]
impl PySimulationConfig {
    /// Loads and validates a TOML config file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PySimulationConfig {
            inner: aov_sim::load_config(path).map_err(to_py_err)?,
        })
    }

    /// The fully resolved default configuration.
    #[staticmethod]
    fn default() -> Self {
        PySimulationConfig {
            inner: aov_sim::SimulationConfig::default(),
        }
    }

    #[getter]
    fn vehicles(&self) -> u32 {
        self.inner.sim.vehicles
    }

    #[getter]
    fn horizon_slots(&self) -> u32 {
        self.inner.sim.horizon_slots
    }

    #[getter]
    fn rsu_bandwidth_hz(&self) -> f64 {
        self.inner.rsu.bandwidth_hz
    }

    fn set_rsu_bandwidth_hz(&mut self, hz: f64) {
        self.inner.rsu.bandwidth_hz = hz;
    }

    fn set_horizon_slots(&mut self, slots: u32) {
        self.inner.sim.horizon_slots = slots;
    }

    fn set_vehicles(&mut self, n: u32) {
        self.inner.sim.vehicles = n;
    }

    fn set_view_target_mean_size_bits(&mut self, bits: f64) {
        self.inner.views.target_mean_size_bits = bits;
    }

    /// Serializes the resolved config as TOML.
    fn to_toml(&self) -> PyResult<String> {
        toml_string(&self.inner)
    }
}

fn toml_string(config: &aov_sim::SimulationConfig) -> PyResult<String> {
    // toml serialization only fails on non-serializable values, which the
    // schema does not contain.
    Ok(format!("{}", toml::Value::try_from(config).map_err(|e| PyRuntimeError::new_err(e.to_string()))?))
}

/// Runs one seeded episode of a scripted policy and returns the metrics.
#[pyfunction]
#[pyo3(signature = (config, seed = 0, policy = "random"))]
fn run_scripted_episode(
    config: PySimulationConfig,
    seed: u64,
    policy: &str,
) -> PyResult<BTreeMap<String, f64>> {
    let kind = match policy {
        "random" => BaselinePolicy::Random,
        "static" => BaselinePolicy::Static,
        "greedy-sensing" => BaselinePolicy::GreedySensing,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown policy {other:?}; expected random, static, or greedy-sensing"
            )))
        }
    };
    let scenario = Scenario::build(&config.inner, seed, "py").map_err(to_py_err)?;
    let mut controller = BaselineController::new(kind, &scenario);
    let (metrics, _) = run_episode(&scenario, &mut controller).map_err(to_py_err)?;
    Ok(BTreeMap::from([
        ("cr".to_string(), metrics.cr),
        ("car_timeliness".to_string(), metrics.car[0]),
        ("car_completeness".to_string(), metrics.car[1]),
        ("car_consistency".to_string(), metrics.car[2]),
        ("aqt_s".to_string(), metrics.aqt_s),
        ("sr".to_string(), metrics.sr),
    ]))
}

#[pymodule]
fn aov_sim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySimulationConfig>()?;
    m.add_function(wrap_pyfunction!(snr, m)?)?;
    m.add_function(wrap_pyfunction!(snr_wall, m)?)?;
    m.add_function(wrap_pyfunction!(shannon_rate, m)?)?;
    m.add_function(wrap_pyfunction!(transmission_time, m)?)?;
    m.add_function(wrap_pyfunction!(waiting_times, m)?)?;
    m.add_function(wrap_pyfunction!(allocate_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(aov, m)?)?;
    m.add_function(wrap_pyfunction!(run_scripted_episode, m)?)?;
    Ok(())
}
