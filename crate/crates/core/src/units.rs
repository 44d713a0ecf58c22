//! Gaussian spectra and pulses with SI units.
//!
//! Bandwidths are stored as r.m.s. angular frequency (rad/s) and durations in
//! seconds. Wavelengths in nanometres only appear in the `*_nm` constructors and
//! accessors used at input/output boundaries.

use std::f64::consts::{LN_2, PI};

use crate::error::{Error, Result};

/// Vacuum speed of light in m/s (exact).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Largest bandwidth/center ratio for which the linearized wavelength-to-frequency
/// conversion is accepted.
pub const NARROWBAND_LIMIT: f64 = 0.1;

/// Gaussian FWHM over r.m.s. width, `2 sqrt(2 ln 2)`.
pub fn fwhm_factor() -> f64 {
    2.0 * (2.0 * LN_2).sqrt()
}

/// Converts an r.m.s. wavelength bandwidth into r.m.s. angular-frequency bandwidth,
/// `2 pi c d_lambda / lambda_0^2`. Both arguments in nanometres; result in rad/s.
pub fn rms_omega_from_nm(center_nm: f64, rms_nm: f64) -> Result<f64> {
    if !(center_nm > 0.0) || !center_nm.is_finite() {
        return Err(Error::Domain(format!(
            "center wavelength must be positive, got {center_nm} nm"
        )));
    }
    if !(rms_nm >= 0.0) || !rms_nm.is_finite() {
        return Err(Error::Domain(format!(
            "r.m.s. bandwidth must be non-negative, got {rms_nm} nm"
        )));
    }
    let ratio = rms_nm / center_nm;
    if ratio >= NARROWBAND_LIMIT {
        return Err(Error::Narrowband { ratio });
    }
    let center = center_nm * 1e-9;
    Ok(2.0 * PI * SPEED_OF_LIGHT * (rms_nm * 1e-9) / (center * center))
}

/// Inverse of [`rms_omega_from_nm`]: r.m.s. wavelength bandwidth in nm.
pub fn rms_nm_from_omega(center_nm: f64, rms_omega: f64) -> Result<f64> {
    if !(center_nm > 0.0) {
        return Err(Error::Domain(format!(
            "center wavelength must be positive, got {center_nm} nm"
        )));
    }
    if !(rms_omega >= 0.0) {
        return Err(Error::Domain(format!(
            "r.m.s. bandwidth must be non-negative, got {rms_omega} rad/s"
        )));
    }
    let center = center_nm * 1e-9;
    Ok(rms_omega * center * center / (2.0 * PI * SPEED_OF_LIGHT) * 1e9)
}

pub fn fwhm_from_rms(rms: f64) -> Result<f64> {
    if !(rms >= 0.0) {
        return Err(Error::Domain(format!("r.m.s. width must be >= 0, got {rms}")));
    }
    Ok(fwhm_factor() * rms)
}

pub fn rms_from_fwhm(fwhm: f64) -> Result<f64> {
    if !(fwhm >= 0.0) {
        return Err(Error::Domain(format!("FWHM must be >= 0, got {fwhm}")));
    }
    Ok(fwhm / fwhm_factor())
}

/// A Gaussian optical spectrum: center wavelength and r.m.s. angular bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralGaussian {
    center_wavelength: f64,
    rms_bandwidth_omega: f64,
}

impl SpectralGaussian {
    /// `center_wavelength` in metres, `rms_bandwidth_omega` in rad/s.
    pub fn new(center_wavelength: f64, rms_bandwidth_omega: f64) -> Result<Self> {
        if !(center_wavelength > 0.0) || !center_wavelength.is_finite() {
            return Err(Error::Domain(format!(
                "center wavelength must be positive, got {center_wavelength} m"
            )));
        }
        if !(rms_bandwidth_omega >= 0.0) || !rms_bandwidth_omega.is_finite() {
            return Err(Error::Domain(format!(
                "r.m.s. bandwidth must be finite and >= 0, got {rms_bandwidth_omega} rad/s"
            )));
        }
        let center_omega = 2.0 * PI * SPEED_OF_LIGHT / center_wavelength;
        let ratio = rms_bandwidth_omega / center_omega;
        if ratio >= NARROWBAND_LIMIT {
            return Err(Error::Narrowband { ratio });
        }
        Ok(Self {
            center_wavelength,
            rms_bandwidth_omega,
        })
    }

    pub fn from_nm(center_nm: f64, rms_nm: f64) -> Result<Self> {
        let omega = rms_omega_from_nm(center_nm, rms_nm)?;
        Self::new(center_nm * 1e-9, omega)
    }

    pub fn center_wavelength(&self) -> f64 {
        self.center_wavelength
    }

    pub fn rms_bandwidth_omega(&self) -> f64 {
        self.rms_bandwidth_omega
    }

    pub fn center_omega(&self) -> f64 {
        2.0 * PI * SPEED_OF_LIGHT / self.center_wavelength
    }

    pub fn rms_bandwidth_nm(&self) -> f64 {
        // center is validated positive, bandwidth non-negative
        rms_nm_from_omega(self.center_wavelength * 1e9, self.rms_bandwidth_omega).unwrap_or(f64::NAN)
    }
}

/// A Gaussian pulse described by its r.m.s. duration and spectral width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseGaussian {
    rms_duration: f64,
    rms_bandwidth_omega: f64,
}

impl PulseGaussian {
    pub fn new(rms_duration: f64, rms_bandwidth_omega: f64) -> Result<Self> {
        if !(rms_duration > 0.0) || !rms_duration.is_finite() {
            return Err(Error::Domain(format!(
                "pulse duration must be positive, got {rms_duration} s"
            )));
        }
        if !(rms_bandwidth_omega >= 0.0) || !rms_bandwidth_omega.is_finite() {
            return Err(Error::Domain(format!(
                "pulse bandwidth must be >= 0, got {rms_bandwidth_omega} rad/s"
            )));
        }
        Ok(Self {
            rms_duration,
            rms_bandwidth_omega,
        })
    }

    pub fn rms_duration(&self) -> f64 {
        self.rms_duration
    }

    pub fn rms_bandwidth_omega(&self) -> f64 {
        self.rms_bandwidth_omega
    }
}

/// `sigma_t * sigma_omega`; equals 1/2 for a transform-limited Gaussian.
/// Not enforced: measured femtosecond pulses commonly report less.
pub fn time_bandwidth_product(pulse: &PulseGaussian) -> f64 {
    pulse.rms_duration * pulse.rms_bandwidth_omega
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn pump_bandwidth_conversion() {
        // mean of the two pump bandwidths, 0.7 and 0.9 nm
        let w = rms_omega_from_nm(394.25, 0.8).unwrap();
        assert!(rel(w, 9.694_985_285_689e12) < 1e-12);
        assert!(rel(w, 9.70e12) < 1e-3);
    }

    #[test]
    fn ir_bandwidth_conversion() {
        let w = rms_omega_from_nm(788.5, 2.9).unwrap();
        assert!(rel(w, 8.786_080_415_156e12) < 1e-12);
        assert_eq!(rms_omega_from_nm(788.5, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn conversion_errors() {
        assert!(matches!(rms_omega_from_nm(0.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(rms_omega_from_nm(-5.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(rms_omega_from_nm(800.0, -1.0), Err(Error::Domain(_))));
        assert!(matches!(
            rms_omega_from_nm(800.0, 80.0),
            Err(Error::Narrowband { .. })
        ));
        assert!(rms_omega_from_nm(800.0, 79.9).is_ok());
    }

    #[test]
    fn fwhm_values() {
        assert_eq!(fwhm_from_rms(0.0).unwrap(), 0.0);
        assert!((fwhm_from_rms(1.0).unwrap() - 2.354_820_045_030_949).abs() < 1e-14);
        assert!((fwhm_from_rms(0.29).unwrap() - 0.682_897_813).abs() < 1e-8);
        assert!(fwhm_from_rms(-1.0).is_err());
        assert!(rms_from_fwhm(-1.0).is_err());
    }

    #[test]
    fn time_bandwidth() {
        let ir = rms_omega_from_nm(788.5, 2.9).unwrap();
        let p = PulseGaussian::new(49.3e-15, ir).unwrap();
        assert!(rel(time_bandwidth_product(&p), 0.433_153_764_467) < 1e-10);

        let p = PulseGaussian::new(40e-15, 0.0).unwrap();
        assert_eq!(time_bandwidth_product(&p), 0.0);

        let sw = 3.7e12;
        let p = PulseGaussian::new(1.0 / (2.0 * sw), sw).unwrap();
        assert!((time_bandwidth_product(&p) - 0.5).abs() < 1e-15);

        assert!(PulseGaussian::new(0.0, 1.0).is_err());
    }

    #[test]
    fn spectral_gaussian_invariants() {
        let s = SpectralGaussian::from_nm(394.25, 0.8).unwrap();
        assert!(rel(s.rms_bandwidth_nm(), 0.8) < 1e-12);
        assert!(rel(s.center_wavelength(), 394.25e-9) < 1e-15);
        assert!(SpectralGaussian::new(0.0, 1.0).is_err());
        assert!(SpectralGaussian::new(800e-9, -1.0).is_err());
        // 10% of the optical angular frequency at 800 nm
        assert!(matches!(
            SpectralGaussian::new(800e-9, 2.4e14),
            Err(Error::Narrowband { .. })
        ));
    }

    proptest! {
        #[test]
        fn conversion_linear_in_bandwidth(center in 200.0f64..2000.0, frac in 0.0f64..0.04, k in 0.0f64..2.4) {
            let rms = frac * center;
            let a = rms_omega_from_nm(center, rms).unwrap();
            let b = rms_omega_from_nm(center, k * rms).unwrap();
            prop_assert!((b - k * a).abs() <= 1e-12 * b.abs().max(1.0));
        }

        #[test]
        fn conversion_inverse_square_in_center(center in 200.0f64..2000.0, frac in 1e-4f64..0.02, k in 1.0f64..3.0) {
            let rms = frac * center;
            let a = rms_omega_from_nm(center, rms).unwrap();
            let b = rms_omega_from_nm(k * center, rms).unwrap();
            prop_assert!(rel(b * k * k, a) < 1e-12);
        }

        #[test]
        fn fwhm_round_trip(x in 0.0f64..1e6) {
            let back = fwhm_from_rms(rms_from_fwhm(x).unwrap()).unwrap();
            prop_assert!((back - x).abs() <= 1e-12 * x.max(f64::MIN_POSITIVE));
        }

        #[test]
        fn nm_omega_round_trip(center in 200.0f64..2000.0, frac in 0.0f64..0.09) {
            let rms = frac * center;
            let w = rms_omega_from_nm(center, rms).unwrap();
            let back = rms_nm_from_omega(center, w).unwrap();
            prop_assert!((back - rms).abs() <= 1e-12 * rms.max(1e-300));
        }
    }
}
