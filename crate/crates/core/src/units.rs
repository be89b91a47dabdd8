//! Physical constants and unit helpers.
//!
//! Energies are carried in μeV, lengths on chip in mm, times in seconds and
//! cooldown instants are converted to days only where a power law is
//! evaluated.

/// Planck constant in μeV per GHz.
pub const PLANCK_UEV_PER_GHZ: f64 = 4.135667696;

/// Reduced Planck constant in eV·s.
pub const HBAR_EV_S: f64 = 6.582_119_569e-16;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[inline]
pub fn days_to_seconds(days: f64) -> f64 {
    days * SECONDS_PER_DAY
}

#[inline]
pub fn seconds_to_days(s: f64) -> f64 {
    s / SECONDS_PER_DAY
}

/// Energy in μeV expressed as an angular frequency in rad/s.
#[inline]
pub fn uev_to_angular(energy_uev: f64) -> f64 {
    energy_uev * 1e-6 / HBAR_EV_S
}
