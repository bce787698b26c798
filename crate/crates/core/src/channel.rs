//! V2I link model: SNR, SNR wall, Shannon rate, transmission time, and
//! the interval success predicate.

use serde::{Deserialize, Serialize};

/// Physical-layer constants of the V2I link.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Additive white Gaussian noise power, watts.
    pub noise_w: f64,
    /// Mean channel fading gain (the per-slot draw is passed to [`snr`]).
    pub fading_gain_mean: f64,
    pub fading_gain_variance: f64,
    /// Antenna design constant.
    pub antenna_constant: f64,
    pub path_loss_exponent: f64,
    /// Vehicle transmission power, watts.
    pub tx_power_w: f64,
}

/// Per-vehicle link state at one slot.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChannelSnapshot {
    pub vehicle: u32,
    pub snr: f64,
    pub allocated_hz: f64,
    pub rate_bps: f64,
    /// All of the vehicle's upload attempts this slot succeeded.
    pub success: bool,
}

/// Distances below this are clamped to avoid the d^(-phi) singularity.
pub const MIN_DISTANCE_M: f64 = 1.0;

/// Received SNR at the RSU: (1/N0) * fading * psi * d^(-phi) * power.
pub fn snr(params: &ChannelParams, distance_m: f64, fading_draw: f64) -> f64 {
    let d = distance_m.max(MIN_DISTANCE_M);
    (1.0 / params.noise_w)
        * fading_draw
        * params.antenna_constant
        * d.powf(-params.path_loss_exponent)
        * params.tx_power_w
}

/// SNR wall under noise uncertainty `N0*` dB: with sigma = 10^(N0*/10),
/// the wall is (sigma^2 - 1) / sigma. Reception below it fails.
pub fn snr_wall(noise_uncertainty_db: f64) -> f64 {
    let sigma = 10f64.powf(noise_uncertainty_db / 10.0);
    (sigma * sigma - 1.0) / sigma
}

/// Shannon rate b * log2(1 + SNR), bits per second.
pub fn rate(bandwidth_hz: f64, snr: f64) -> f64 {
    bandwidth_hz * (1.0 + snr).log2()
}

/// Time to push `size_bits` at `rate_bps`; `None` means the item is
/// undeliverable (zero rate), which callers report as a failed delivery.
pub fn transmission_time(size_bits: u64, rate_bps: f64) -> Option<f64> {
    if rate_bps > 0.0 {
        Some(size_bits as f64 / rate_bps)
    } else {
        None
    }
}

/// Transmission succeeds iff the received SNR stays above the wall at
/// every sampled slot boundary of the transmission interval.
pub fn success_indicator(snr_samples: &[f64], wall: f64) -> bool {
    assert!(!snr_samples.is_empty(), "sampled interval must be non-empty");
    snr_samples.iter().all(|&s| s > wall)
}
