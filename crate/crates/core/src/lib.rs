//! Chance-constrained optimal power flow for droop-controlled islanded
//! microgrids with power flow routers.
//!
//! The physics kernels ([`branch`], [`powerflow`], [`sensitivity`]) and the
//! dense linear algebra are generic over [`Scalar`] (`f32`, `f64`); the
//! optimization and sampling layers work in `f64`. The aliases at the crate
//! root name the `f64` instantiations.

// `!(x > 0.0)` is used on purpose so NaN fails validation; dense kernels index
// several arrays per loop.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod branch;
pub mod cases;
pub mod ccopf;
pub mod error;
pub mod linalg;
pub mod matpower;
pub mod model;
pub mod montecarlo;
pub mod opf;
pub mod powerflow;
pub mod scalar;
pub mod sensitivity;
pub mod sidecar;

#[cfg(test)]
mod testing;

pub use error::{CaseError, PowerFlowError, SensitivityError};
pub use scalar::Scalar;

pub type Network = model::Network<f64>;
pub type Matrix = linalg::Matrix<f64>;
pub type SetPoints = powerflow::SetPoints<f64>;
pub type OperatingPoint = powerflow::OperatingPoint<f64>;
pub type PfrSetting = branch::PfrSetting<f64>;
pub type SensitivitySet = sensitivity::SensitivitySet<f64>;
pub type MarginSet = sensitivity::MarginSet<f64>;
pub type OpfSolution = opf::OpfSolution;
