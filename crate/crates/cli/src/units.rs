//! SI anchors and conversion to oscillator units. Everything downstream of
//! the config layer works in hw / a_ho / 1/omega.

/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054571817e-34;
/// Atomic mass unit, kg.
pub const AMU: f64 = 1.66053906660e-27;
/// 40K mass, u.
pub const K40_AMU: f64 = 39.96399848;

/// Oscillator length `sqrt(hbar / (m omega))` in meters.
pub fn a_ho_m(mass_kg: f64, omega_rad_s: f64) -> f64 {
    (HBAR / (mass_kg * omega_rad_s)).sqrt()
}

/// Magnetic-moment slope in hw per Gauss from its MHz-per-Gauss value.
pub fn slope_hw_per_gauss(s_mhz_per_gauss: f64, omega_rad_s: f64) -> f64 {
    2.0 * std::f64::consts::PI * s_mhz_per_gauss * 1e6 / omega_rad_s
}
