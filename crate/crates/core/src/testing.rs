//! Small hand-built networks shared by unit tests.

use crate::linalg::Matrix;
use crate::model::{
    Bus, CostCoefficients, DispatchableDg, Epsilons, Line, Network, PfrPlacement, RenewableDg, SystemLimits,
    UncertaintyModel,
};

fn bus(id: usize, p: f64, q: f64) -> Bus<f64> {
    Bus { id, load_p: p, load_q: q, v_min: 0.95, v_max: 1.05 }
}

fn dg(bus: usize, k_p: f64, k_q: f64, c1: f64) -> DispatchableDg<f64> {
    DispatchableDg {
        bus,
        k_p,
        k_q,
        p_min: 0.0,
        p_max: 1.0,
        q_min: -0.5,
        q_max: 0.5,
        cost: CostCoefficients { c2: 10.0, c1, c0: 0.0 },
    }
}

fn limits() -> SystemLimits<f64> {
    SystemLimits { omega_min: 0.99, omega_max: 1.01, epsilons: Epsilons { p: 0.05, q: 0.05, v: 0.05, omega: 0.05 } }
}

/// Generator at bus 1 (reference), load and renewable at bus 2.
pub fn two_bus(k_p: f64, k_q: f64) -> Network<f64> {
    let mut cov = Matrix::zeros(2, 2);
    cov[(1, 1)] = 0.02 * 0.02;
    Network::new(
        1.0,
        vec![bus(1, 0.0, 0.0), bus(2, 0.1, 0.05)],
        vec![Line { from_bus: 1, to_bus: 2, g: 3.0, b: -7.0, pfr: None }],
        vec![dg(1, k_p, k_q, 20.0)],
        vec![RenewableDg { bus: 2, p_forecast: 0.05, power_factor_tan: 0.95 }],
        UncertaintyModel { covariance: cov },
        limits(),
        1,
    )
    .unwrap()
}

pub fn two_bus_unloaded() -> Network<f64> {
    Network::new(
        1.0,
        vec![bus(1, 0.0, 0.0), bus(2, 0.0, 0.0)],
        vec![Line { from_bus: 1, to_bus: 2, g: 3.0, b: -7.0, pfr: None }],
        vec![dg(1, 3.0, 30.0, 20.0)],
        vec![],
        UncertaintyModel { covariance: Matrix::zeros(2, 2) },
        limits(),
        1,
    )
    .unwrap()
}

/// Triangle with generators at buses 1 and 3, a renewable at bus 2 and a
/// router on line 1-3.
pub fn three_bus_with_pfr() -> Network<f64> {
    let mut cov = Matrix::zeros(3, 3);
    cov[(1, 1)] = 0.03 * 0.03;
    let pfr = PfrPlacement { tap_min: 0.8, tap_max: 1.2, shift_min: -0.35, shift_max: 0.35 };
    Network::new(
        1.0,
        vec![bus(1, 0.05, 0.02), bus(2, 0.3, 0.1), bus(3, 0.1, 0.04)],
        vec![
            Line { from_bus: 1, to_bus: 2, g: 4.0, b: -8.0, pfr: None },
            Line { from_bus: 2, to_bus: 3, g: 3.0, b: -6.0, pfr: None },
            Line { from_bus: 1, to_bus: 3, g: 2.0, b: -5.0, pfr: Some(pfr) },
        ],
        vec![dg(1, 0.03, 0.1, 20.0), dg(3, 0.05, 0.2, 30.0)],
        vec![RenewableDg { bus: 2, p_forecast: 0.1, power_factor_tan: 0.3 }],
        UncertaintyModel { covariance: cov },
        limits(),
        1,
    )
    .unwrap()
}
