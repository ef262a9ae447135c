//! Unit conventions used across the crate.
//!
//! Energies are joules per slot, loads are Mbit, rates are Mbit/s, durations
//! are seconds. Every conversion away from those units lives here.

pub const MBIT_PER_MB: f64 = 8.0;
pub const MBIT_PER_GBIT: f64 = 1000.0;
pub const HZ_PER_MHZ: f64 = 1.0e6;
pub const J_PER_KJ: f64 = 1000.0;

pub fn mb_to_mbit(mb: f64) -> f64 {
    mb * MBIT_PER_MB
}

pub fn mbit_to_gbit(mbit: f64) -> f64 {
    mbit / MBIT_PER_GBIT
}

pub fn kj(value: f64) -> f64 {
    value * J_PER_KJ
}

pub fn ms_to_s(ms: f64) -> f64 {
    ms / 1000.0
}

/// Noise spectral density in dBm/Hz to W/Hz.
pub fn dbm_per_hz_to_w_per_hz(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// A rate in Mbit/s over a bandwidth in Hz, as the dimensionless spectral
/// efficiency that appears in the Shannon-Hartley exponent.
pub fn spectral_ratio(rate_mbps: f64, bandwidth_hz: f64) -> f64 {
    rate_mbps * HZ_PER_MHZ / bandwidth_hz
}
