//! Physical constants and unit conversions.

use std::f64::consts::PI;

/// Magnetic flux quantum h/2e (Wb).
pub const FLUX_QUANTUM: f64 = 2.067833848e-15;
/// Reduced flux quantum Φ0/2π (Wb/rad).
pub const REDUCED_FLUX_QUANTUM: f64 = FLUX_QUANTUM / (2.0 * PI);
/// Reduced Planck constant (J·s).
pub const HBAR: f64 = 1.054571817e-34;
/// Boltzmann constant (J/K).
pub const K_B: f64 = 1.380649e-23;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

/// Watts to dBm against a 1 mW reference. Zero power maps to `-inf`.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts / 1e-3).log10()
}

pub fn hz_to_rad(f_hz: f64) -> f64 {
    2.0 * PI * f_hz
}

pub fn rad_to_hz(omega: f64) -> f64 {
    omega / (2.0 * PI)
}

/// Linear power ratio to dB.
pub fn ratio_to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

pub fn db_to_ratio(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Rounds to the nearest 0.01 dB with ties going to the even hundredth.
pub fn round_db(db: f64) -> f64 {
    if !db.is_finite() {
        return db;
    }
    let scaled = db * 100.0;
    let floor = scaled.floor();
    let frac = scaled - floor;
    let rounded = if (frac - 0.5).abs() < 1e-9 {
        if floor.rem_euclid(2.0) == 0.0 {
            floor
        } else {
            floor + 1.0
        }
    } else {
        scaled.round()
    };
    rounded / 100.0
}

/// Formats a dB value for reports: 0.01 dB, round-half-even.
pub fn format_db(db: f64) -> String {
    if db.is_finite() {
        format!("{:.2}", round_db(db))
    } else if db < 0.0 {
        "-inf".to_string()
    } else {
        db.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbm_roundtrip() {
        for dbm in [-120.0, -78.0, -30.0, 0.0, 13.0] {
            assert!((watts_to_dbm(dbm_to_watts(dbm)) - dbm).abs() < 1e-12);
        }
        assert!((dbm_to_watts(0.0) - 1e-3).abs() < 1e-18);
        assert_eq!(watts_to_dbm(0.0), f64::NEG_INFINITY);
        // 16 pW is -78 dBm to within the quoted precision
        assert!((watts_to_dbm(16e-12) - (-77.96)).abs() < 0.01);
    }

    #[test]
    fn half_even_rounding() {
        assert_eq!(round_db(1.005), 1.0);
        assert_eq!(round_db(1.015), 1.02);
        assert_eq!(round_db(-2.125), -2.12);
        assert_eq!(round_db(20.906), 20.91);
        assert_eq!(format_db(f64::NEG_INFINITY), "-inf");
    }
}
