//! Order-of-magnitude reduction-time calculators in physical units.
//!
//! Energies are in MeV throughout. The simulation modules are dimensionless;
//! this is the only place physical units appear.

use crate::error::{Error, Result};

/// Conversion constants and calibration points.
pub mod units {
    pub const MEV_PER_GEV: f64 = 1.0e3;
    /// Boltzmann constant in MeV/K.
    pub const BOLTZMANN_MEV_PER_K: f64 = 8.617_333_262e-11;
    /// Energy spread that gives a one-second reduction time.
    pub const REDUCTION_SCALE_MEV: f64 = 2.8;
    /// Mass of one atomic mass unit in GeV.
    pub const AMU_GEV: f64 = 0.931_494_102;
    /// Molecular flux onto 1 cm² at 1e-14 Torr and 300 K.
    pub const REFERENCE_FLUX_PER_S: f64 = 4.0e6;
    pub const REFERENCE_AREA_CM2: f64 = 1.0;
    pub const REFERENCE_PRESSURE_TORR: f64 = 1.0e-14;
    pub const REFERENCE_TEMPERATURE_K: f64 = 300.0;
    /// N₂, the dominant residual-gas molecule at the reference point.
    pub const REFERENCE_MOLECULE_MASS_GEV: f64 = 28.0 * AMU_GEV;
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be positive and finite, got {v}"),
        })
    }
}

/// `t_R = (2.8 MeV / ΔE)²` seconds.
pub fn reduction_time(delta_e_mev: f64) -> Result<f64> {
    positive("delta_e", delta_e_mev)?;
    Ok((units::REDUCTION_SCALE_MEV / delta_e_mev).powi(2))
}

/// Thermal energy spread `√N · k_B T` in MeV.
pub fn thermal_delta_e(n_nucleons: f64, temperature_k: f64) -> Result<f64> {
    positive("n_nucleons", n_nucleons)?;
    if !(temperature_k >= 0.0) || !temperature_k.is_finite() {
        return Err(Error::InvalidParameter {
            name: "temperature",
            reason: format!("must be non-negative and finite, got {temperature_k}"),
        });
    }
    Ok(n_nucleons.sqrt() * units::BOLTZMANN_MEV_PER_K * temperature_k)
}

/// Kinetic-theory impingement rate `∝ A·P/√(m T)`, pinned to the reference
/// flux at the reference conditions.
pub fn adsorption_flux(surface_area_cm2: f64, pressure_torr: f64, temperature_k: f64, molecule_mass_gev: f64) -> Result<f64> {
    positive("surface_area", surface_area_cm2)?;
    positive("pressure", pressure_torr)?;
    positive("temperature", temperature_k)?;
    positive("molecule_mass", molecule_mass_gev)?;
    Ok(units::REFERENCE_FLUX_PER_S
        * (surface_area_cm2 / units::REFERENCE_AREA_CM2)
        * (pressure_torr / units::REFERENCE_PRESSURE_TORR)
        * (units::REFERENCE_TEMPERATURE_K / temperature_k).sqrt()
        * (units::REFERENCE_MOLECULE_MASS_GEV / molecule_mass_gev).sqrt())
}

/// Time for adsorbed molecules to build up an energy shift of
/// `target_delta_e_mev`, each stuck molecule contributing its rest mass.
/// At least one molecule must stick, so targets below one molecular mass
/// cost one mean arrival interval.
pub fn adsorption_time_to_delta_e(
    target_delta_e_mev: f64,
    surface_area_cm2: f64,
    pressure_torr: f64,
    temperature_k: f64,
    sticking_probability: f64,
    molecule_mass_gev: f64,
) -> Result<f64> {
    positive("target_delta_e", target_delta_e_mev)?;
    positive("sticking_probability", sticking_probability)?;
    if sticking_probability > 1.0 {
        return Err(Error::InvalidParameter {
            name: "sticking_probability",
            reason: format!("must not exceed 1, got {sticking_probability}"),
        });
    }
    let flux = adsorption_flux(surface_area_cm2, pressure_torr, temperature_k, molecule_mass_gev)?;
    let molecules = (target_delta_e_mev / (molecule_mass_gev * units::MEV_PER_GEV)).max(1.0);
    Ok(molecules / (flux * sticking_probability))
}

/// `σ = 1/√(t_R·V)`: the noise strength whose variance-decay timescale
/// `1/(σ²V)` equals the requested reduction time, in simulation units.
pub fn suggest_sigma(reduction_time_target: f64, variance: f64) -> Result<f64> {
    positive("reduction_time", reduction_time_target)?;
    positive("variance", variance)?;
    Ok(1.0 / (reduction_time_target * variance).sqrt())
}
