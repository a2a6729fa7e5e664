//! Physical parameters of the coupled cavity–spin system and derived scalars.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the inhomogeneous detuning distribution.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Gaussian,
    Lorentzian,
}

/// All rates and couplings of the model, as angular frequencies (rad/s).
///
/// Only rotating-frame detunings enter the dynamics; absolute carrier
/// frequencies are never represented. `delta_c` defaults to 0 (drive on
/// cavity resonance).
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Cavity energy-decay rate κ, FWHM linewidth (rad/s).
    pub kappa: f64,
    /// Spin energy-relaxation rate γ (rad/s).
    pub gamma: f64,
    /// Spin pure-dephasing rate Γ (rad/s).
    pub gamma_deph: f64,
    /// Single-spin coupling g (rad/s), used when couplings are homogeneous.
    pub g_single: f64,
    /// Total physical spin count N (dimensionless; may be 1e10).
    pub n_spins: f64,
    /// Cavity–drive detuning δ_c = ω_c − ω_p (rad/s).
    pub delta_c: f64,
    /// FWHM of the inhomogeneous detuning distribution (rad/s).
    pub inhomogeneous_fwhm: f64,
    /// Shape of the detuning distribution.
    pub distribution: Distribution,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, allow_zero: bool| -> Result<()> {
            if !v.is_finite() || v < 0.0 || (!allow_zero && v == 0.0) {
                return Err(Error::InvalidParam(format!("{name} = {v} out of range")));
            }
            Ok(())
        };
        check("kappa", self.kappa, true)?;
        check("gamma", self.gamma, true)?;
        check("gamma_deph", self.gamma_deph, true)?;
        check("inhomogeneous_fwhm", self.inhomogeneous_fwhm, true)?;
        if !self.g_single.is_finite() {
            return Err(Error::InvalidParam("g_single not finite".into()));
        }
        if !self.delta_c.is_finite() {
            return Err(Error::InvalidParam("delta_c not finite".into()));
        }
        if !(self.n_spins >= 1.0) {
            return Err(Error::InvalidParam(format!(
                "n_spins = {} must be >= 1",
                self.n_spins
            )));
        }
        Ok(())
    }

    /// Standard deviation of the Gaussian detuning distribution,
    /// σ = FWHM / √(8 ln 2).
    pub fn gaussian_sigma(&self) -> f64 {
        self.inhomogeneous_fwhm / (8.0 * std::f64::consts::LN_2).sqrt()
    }
}

/// Cooperativity C = 4 g_eff² / (κ Γ_width).
pub fn cooperativity(g_eff: f64, kappa: f64, gamma_width: f64) -> Result<f64> {
    if !(kappa > 0.0) || !(gamma_width > 0.0) {
        return Err(Error::InvalidParam(
            "cooperativity requires kappa > 0 and gamma_width > 0".into(),
        ));
    }
    Ok(4.0 * g_eff * g_eff / (kappa * gamma_width))
}

/// Homogeneous linewidth 1/T₂, returned as an angular rate in rad/s
/// (divide by 2π for Hz).
pub fn linewidth_from_t2(t2: f64) -> Result<f64> {
    if !(t2 > 0.0) {
        return Err(Error::InvalidParam(format!("T2 = {t2} must be > 0")));
    }
    Ok(1.0 / t2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{from_hz, TAU};

    #[test]
    fn cooperativity_experiment_scale() {
        // g_eff = 2π×5.933 MHz, κ = 2π×153.8 kHz, Γ = 2π×5.98 MHz -> C = 153 ± 1
        let c = cooperativity(from_hz(5.933e6), from_hz(153.8e3), from_hz(5.98e6)).unwrap();
        assert!((c - 153.0).abs() < 1.0, "C = {c}");
    }

    #[test]
    fn cooperativity_quadratic_in_g() {
        let c1 = cooperativity(100.0, 3.0, 7.0).unwrap();
        let c2 = cooperativity(200.0, 3.0, 7.0).unwrap();
        assert_eq!(c2 / c1, 4.0);
        assert_eq!(cooperativity(0.0, 1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn cooperativity_rejects_zero_rates() {
        assert!(cooperativity(1.0, 0.0, 1.0).is_err());
        assert!(cooperativity(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn linewidth_409_us() {
        // T2 = 409 µs -> 2π×389 Hz ± 2π×2 Hz
        let w = linewidth_from_t2(409e-6).unwrap();
        assert!((w - from_hz(389.0)).abs() < from_hz(2.0), "w = {w}");
    }

    #[test]
    fn linewidth_identities() {
        let w = linewidth_from_t2(1.0 / TAU).unwrap();
        assert!((w - TAU).abs() < 1e-12);
        let t2 = 3.2e-4;
        let a = linewidth_from_t2(t2).unwrap();
        let b = linewidth_from_t2(2.0 * t2).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
        assert!(linewidth_from_t2(0.0).is_err());
        assert!(linewidth_from_t2(-1.0).is_err());
    }

    #[test]
    fn sigma_fwhm_identity() {
        let p = PhysicalParams {
            kappa: 0.0,
            gamma: 0.0,
            gamma_deph: 0.0,
            g_single: 0.0,
            n_spins: 1.0,
            delta_c: 0.0,
            inhomogeneous_fwhm: from_hz(4.0e6),
            distribution: Distribution::Gaussian,
        };
        // FWHM / sigma = 2.3548...
        assert!((p.inhomogeneous_fwhm / p.gaussian_sigma() - 2.3548).abs() < 1e-3);
    }

    #[test]
    fn params_validation() {
        let mut p = PhysicalParams {
            kappa: 1.0,
            gamma: 0.0,
            gamma_deph: 0.0,
            g_single: 1.0,
            n_spins: 10.0,
            delta_c: 0.0,
            inhomogeneous_fwhm: 1.0,
            distribution: Distribution::Gaussian,
        };
        assert!(p.validate().is_ok());
        p.kappa = -1.0;
        assert!(p.validate().is_err());
        p.kappa = 1.0;
        p.n_spins = 0.5;
        assert!(p.validate().is_err());
    }
}
