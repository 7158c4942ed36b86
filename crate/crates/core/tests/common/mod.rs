#![allow(dead_code)]

use ccopf::branch::PfrSetting;
use ccopf::cases::ieee33;
use ccopf::powerflow::{solve_power_flow, PfState, PowerFlowOptions};
use ccopf::{Network, OperatingPoint, SetPoints};
use rand::Rng;

pub fn net33() -> Network {
    ieee33()
}

/// Random set points inside the device limits, routers included.
pub fn random_set_points(net: &Network, rng: &mut impl Rng) -> SetPoints {
    let dgs = net.dispatchable_dgs();
    SetPoints {
        p_star: dgs.iter().map(|d| rng.gen_range(d.p_min..d.p_max)).collect(),
        q_star: dgs.iter().map(|d| rng.gen_range(d.q_min..d.q_max)).collect(),
        omega_star: rng.gen_range(0.995..1.005),
        v_star: dgs.iter().map(|_| rng.gen_range(0.97..1.03)).collect(),
        pfr_settings: net
            .pfr_lines()
            .iter()
            .map(|&l| {
                let p = net.lines()[l].pfr.expect("router line");
                PfrSetting {
                    tap_from: rng.gen_range(p.tap_min..p.tap_max),
                    tap_to: rng.gen_range(p.tap_min..p.tap_max),
                    shift_from: rng.gen_range(p.shift_min..p.shift_max),
                    shift_to: rng.gen_range(p.shift_min..p.shift_max),
                }
            })
            .collect(),
    }
}

/// Random interior state: angles within ±0.1 rad, voltages within limits.
pub fn random_state(net: &Network, rng: &mut impl Rng) -> PfState<f64> {
    let n = net.n_buses();
    let mut theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect();
    theta[net.reference_index()] = 0.0;
    PfState { theta, v: (0..n).map(|_| rng.gen_range(0.95..1.05)).collect(), omega: rng.gen_range(0.995..1.005) }
}

/// Set points that serve the bundled load evenly at nominal voltage.
pub fn even_set_points(net: &Network) -> SetPoints {
    let (load, _) = net.total_load();
    let pw: f64 = net.renewable_forecast().iter().sum();
    let k = net.n_dgs() as f64;
    let mut sp = SetPoints::nominal(net);
    sp.p_star = vec![(load - pw) / k; net.n_dgs()];
    sp
}

pub fn forecast_point(net: &Network, sp: &SetPoints) -> OperatingPoint {
    solve_power_flow(net, sp, &vec![0.0; net.n_buses()], &tight()).expect("forecast power flow").point
}

/// Newton options with a residual tolerance near rounding level.
pub fn tight() -> PowerFlowOptions<f64> {
    PowerFlowOptions { tol: 1e-12, max_iter: 50, ..PowerFlowOptions::default() }
}

/// Bus positions carrying a renewable generator.
pub fn renewable_positions(net: &Network) -> Vec<usize> {
    net.renewable_dgs().iter().map(|r| net.bus_index(r.bus).expect("known bus")).collect()
}
