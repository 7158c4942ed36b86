//! Case loading and the bundled 33-bus microgrid.

use crate::error::CaseError;
use crate::matpower::parse_matpower_case;
use crate::model::{assemble_network, Network};
use crate::sidecar::parse_sidecar;

pub const IEEE33_CASE: &str = include_str!("../../../cases/ieee33.m");
pub const IEEE33_SIDECAR: &str = include_str!("../../../cases/ieee33.sidecar.json");
/// Droop gains K_P = 1, K_Q = 10 (percent per p.u.).
pub const IEEE33_LOW_GAIN_SIDECAR: &str = include_str!("../../../cases/ieee33_low_gain.sidecar.json");
/// Droop gains K_P = 5, K_Q = 50 (percent per p.u.).
pub const IEEE33_HIGH_GAIN_SIDECAR: &str = include_str!("../../../cases/ieee33_high_gain.sidecar.json");
/// The default devices without forecast uncertainty.
pub const IEEE33_ZERO_SIGMA_SIDECAR: &str = include_str!("../../../cases/ieee33_zero_sigma.sidecar.json");

/// Parses a Matpower grid and its device sidecar into a validated network.
pub fn load_network(case_text: &str, sidecar_text: &str) -> Result<Network<f64>, CaseError> {
    let grid = parse_matpower_case(case_text)?;
    let devices = parse_sidecar(sidecar_text, &grid)?;
    assemble_network(&grid, &devices)
}

/// The bundled 33-bus microgrid with its default devices.
pub fn ieee33() -> Network<f64> {
    load_network(IEEE33_CASE, IEEE33_SIDECAR).expect("bundled case is valid")
}
