//! Calculator evaluations shared by the `estimate` subcommand and the
//! `estimate` experiment.

use collapse_core::estimates::{
    adsorption_time_to_delta_e, reduction_time, suggest_sigma, thermal_delta_e, units,
};

use crate::config::{EstimateEntry, EstimateMode};

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateValue {
    pub quantity: &'static str,
    pub value: f64,
    pub unit: &'static str,
    /// Formula used, in words.
    pub note: &'static str,
}

impl EstimateValue {
    pub fn line(&self) -> String {
        format!("{} = {:.6e} {}", self.quantity, self.value, self.unit)
    }
}

/// Evaluates a validated entry.
pub fn evaluate(e: &EstimateEntry) -> collapse_core::Result<EstimateValue> {
    let get = |v: Option<f64>| v.unwrap_or(f64::NAN);
    match e.mode.unwrap_or(EstimateMode::Reduction) {
        EstimateMode::Reduction => Ok(EstimateValue {
            quantity: "reduction_time",
            value: reduction_time(get(e.delta_e_mev))?,
            unit: "s",
            note: "t_R = (2.8 MeV / ΔE)² seconds",
        }),
        EstimateMode::Thermal => Ok(EstimateValue {
            quantity: "delta_e",
            value: thermal_delta_e(get(e.n_nucleons), get(e.temperature_k))?,
            unit: "MeV",
            note: "ΔE = √N · k_B·T for N independent constituents at temperature T",
        }),
        EstimateMode::Adsorption => Ok(EstimateValue {
            quantity: "adsorption_time",
            value: adsorption_time_to_delta_e(
                get(e.target_delta_e_mev),
                e.area_cm2.unwrap_or(units::REFERENCE_AREA_CM2),
                get(e.pressure_torr),
                get(e.temperature_k),
                e.sticking.unwrap_or(1.0),
                e.molecule_mass_gev.unwrap_or(units::REFERENCE_MOLECULE_MASS_GEV),
            )?,
            unit: "s",
            note: "t = max(1, ΔE/m c²) / (Φ·s), Φ ∝ A·P/√(mT) pinned to 4e6 /s at 1 cm², 1e-14 Torr, 300 K, N₂",
        }),
        EstimateMode::Sigma => Ok(EstimateValue {
            quantity: "sigma",
            value: suggest_sigma(get(e.reduction_time), get(e.variance))?,
            unit: "(simulation units)",
            note: "σ = 1/√(t_R·V), so the variance decay time 1/(σ²V) equals t_R",
        }),
    }
}
