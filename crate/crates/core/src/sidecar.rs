//! Device sidecar (JSON, `"format": 1`): generators, routers, uncertainty,
//! limits and violation probabilities for a Matpower grid.
//!
//! Powers are given in MW / MVAr, costs in $/h per MW (and MW²), router
//! shifts in degrees. Droop gains are multiplied by `droop_gain_scale` to
//! obtain p.u. frequency (voltage) per p.u. power on the case base.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::CaseError;
use crate::model::{
    CostCoefficients, CovarianceSpec, DeviceSpec, DispatchableDg, Epsilons, GridTables, Network, PfrPlacement,
    RenewableDg, SystemLimits,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidecarFile {
    pub format: u32,
    /// Free-form provenance notes; ignored by the solver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub reference_bus: usize,
    #[serde(default = "one")]
    pub droop_gain_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voltage_limits: Option<VoltageLimits>,
    pub dispatchable_dgs: Vec<DgEntry>,
    pub renewable_dgs: Vec<RenewableEntry>,
    #[serde(default)]
    pub pfrs: Vec<PfrEntry>,
    pub covariance: CovarianceEntry,
    pub limits: FrequencyLimits,
    pub epsilons: EpsilonEntry,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltageLimits {
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgEntry {
    pub bus: usize,
    pub k_p: f64,
    pub k_q: f64,
    pub p_min_mw: f64,
    pub p_max_mw: f64,
    pub q_min_mvar: f64,
    pub q_max_mvar: f64,
    pub cost: CostEntry,
}

/// `c2` in $/(MW²·h), `c1` in $/MWh, `c0` in $/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostEntry {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewableEntry {
    pub bus: usize,
    pub p_forecast_mw: f64,
    pub power_factor_tan: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PfrEntry {
    pub from: usize,
    pub to: usize,
    pub tap_min: f64,
    pub tap_max: f64,
    pub shift_max_deg: f64,
}

/// Either per-bus standard deviations (MW, keyed by bus id) or a dense
/// covariance (MW²) over the renewable generators in listed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceEntry {
    DiagSigma(BTreeMap<String, f64>),
    Dense(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyLimits {
    pub omega_min: f64,
    pub omega_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonEntry {
    pub p: f64,
    pub q: f64,
    pub v: f64,
    pub omega: f64,
}

/// Parses a sidecar and converts it to p.u. on the grid base, checking every
/// bus reference against `grid`.
pub fn parse_sidecar(text: &str, grid: &GridTables) -> Result<DeviceSpec, CaseError> {
    let file: SidecarFile = serde_json::from_str(text).map_err(|e| CaseError::Sidecar(e.to_string()))?;
    file.to_device_spec(grid)
}

impl SidecarFile {
    pub fn to_device_spec(&self, grid: &GridTables) -> Result<DeviceSpec, CaseError> {
        if self.format != FORMAT_VERSION {
            return Err(CaseError::Sidecar(format!("unsupported format {} (expected {FORMAT_VERSION})", self.format)));
        }
        let base = grid.base_mva;
        let known = |id: usize| -> Result<usize, CaseError> {
            if grid.buses.iter().any(|b| b.id == id) {
                Ok(id)
            } else {
                Err(CaseError::UnknownBus(id))
            }
        };
        known(self.reference_bus)?;
        if !(self.droop_gain_scale > 0.0) {
            return Err(CaseError::Sidecar("droop_gain_scale must be positive".into()));
        }

        let dispatchable_dgs = self
            .dispatchable_dgs
            .iter()
            .map(|d| {
                Ok(DispatchableDg {
                    bus: known(d.bus)?,
                    k_p: d.k_p * self.droop_gain_scale,
                    k_q: d.k_q * self.droop_gain_scale,
                    p_min: d.p_min_mw / base,
                    p_max: d.p_max_mw / base,
                    q_min: d.q_min_mvar / base,
                    q_max: d.q_max_mvar / base,
                    cost: CostCoefficients { c2: d.cost.c2 * base * base, c1: d.cost.c1 * base, c0: d.cost.c0 },
                })
            })
            .collect::<Result<Vec<_>, CaseError>>()?;

        let renewable_dgs = self
            .renewable_dgs
            .iter()
            .map(|r| {
                Ok(RenewableDg { bus: known(r.bus)?, p_forecast: r.p_forecast_mw / base, power_factor_tan: r.power_factor_tan })
            })
            .collect::<Result<Vec<_>, CaseError>>()?;

        let pfrs = self
            .pfrs
            .iter()
            .map(|p| {
                let s = p.shift_max_deg.to_radians();
                Ok((known(p.from)?, known(p.to)?, PfrPlacement { tap_min: p.tap_min, tap_max: p.tap_max, shift_min: -s, shift_max: s }))
            })
            .collect::<Result<Vec<_>, CaseError>>()?;

        let covariance = match &self.covariance {
            CovarianceEntry::DiagSigma(map) => {
                let mut entries = Vec::with_capacity(map.len());
                for (k, &sigma) in map {
                    let id: usize = k.parse().map_err(|_| CaseError::Sidecar(format!("invalid bus key `{k}` in diag_sigma")))?;
                    known(id)?;
                    if sigma < 0.0 {
                        return Err(CaseError::Invalid(format!("negative standard deviation at bus {id}")));
                    }
                    entries.push((id, sigma / base));
                }
                CovarianceSpec::DiagSigma(entries)
            }
            CovarianceEntry::Dense(rows) => {
                CovarianceSpec::Dense(rows.iter().map(|r| r.iter().map(|v| v / (base * base)).collect()).collect())
            }
        };

        let eps = self.epsilons;
        for (name, v) in [("p", eps.p), ("q", eps.q), ("v", eps.v), ("omega", eps.omega)] {
            if !(v > 0.0 && v < 0.5) {
                return Err(CaseError::EpsilonRange(name.into(), v));
            }
        }

        Ok(DeviceSpec {
            reference_bus: self.reference_bus,
            dispatchable_dgs,
            renewable_dgs,
            pfrs,
            covariance,
            limits: SystemLimits {
                omega_min: self.limits.omega_min,
                omega_max: self.limits.omega_max,
                epsilons: Epsilons { p: eps.p, q: eps.q, v: eps.v, omega: eps.omega },
            },
            voltage_limits: self.voltage_limits.map(|v| (v.v_min, v.v_max)),
        })
    }

    /// Sidecar describing the devices of `net` (dense covariance, unit gain scale).
    pub fn from_network(net: &Network<f64>) -> Self {
        let base = net.base_mva();
        let cov = net.covariance();
        let ren_idx: Vec<usize> = net.renewable_dgs().iter().map(|r| net.bus_index(r.bus).expect("valid bus")).collect();
        let dense = ren_idx
            .iter()
            .map(|&i| ren_idx.iter().map(|&j| cov[(i, j)] * base * base).collect())
            .collect();
        Self {
            format: FORMAT_VERSION,
            notes: None,
            reference_bus: net.reference_bus(),
            droop_gain_scale: 1.0,
            voltage_limits: None,
            dispatchable_dgs: net
                .dispatchable_dgs()
                .iter()
                .map(|d| DgEntry {
                    bus: d.bus,
                    k_p: d.k_p,
                    k_q: d.k_q,
                    p_min_mw: d.p_min * base,
                    p_max_mw: d.p_max * base,
                    q_min_mvar: d.q_min * base,
                    q_max_mvar: d.q_max * base,
                    cost: CostEntry { c2: d.cost.c2 / (base * base), c1: d.cost.c1 / base, c0: d.cost.c0 },
                })
                .collect(),
            renewable_dgs: net
                .renewable_dgs()
                .iter()
                .map(|r| RenewableEntry { bus: r.bus, p_forecast_mw: r.p_forecast * base, power_factor_tan: r.power_factor_tan })
                .collect(),
            pfrs: net
                .lines()
                .iter()
                .filter_map(|l| {
                    l.pfr.map(|p| PfrEntry {
                        from: l.from_bus,
                        to: l.to_bus,
                        tap_min: p.tap_min,
                        tap_max: p.tap_max,
                        shift_max_deg: p.shift_max.to_degrees(),
                    })
                })
                .collect(),
            covariance: CovarianceEntry::Dense(dense),
            limits: FrequencyLimits { omega_min: net.limits().omega_min, omega_max: net.limits().omega_max },
            epsilons: {
                let e = net.limits().epsilons;
                EpsilonEntry { p: e.p, q: e.q, v: e.v, omega: e.omega }
            },
        }
    }
}

/// Serializes the device data of `net` as a sidecar document.
pub fn write_sidecar(net: &Network<f64>) -> String {
    serde_json::to_string_pretty(&SidecarFile::from_network(net)).expect("sidecar serializes")
}
