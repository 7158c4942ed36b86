mod common;

use std::time::Instant;

use ccopf::powerflow::{droop_outputs, jacobian, residual, solve_power_flow, total_losses, PowerFlowOptions};
use ccopf::{Network, OperatingPoint, SetPoints};
use common::{even_set_points, net33, random_set_points, random_state};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn jacobian_matches_central_differences_on_random_states() {
    let net = net33();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let sp = random_set_points(&net, &mut rng);
        let state = random_state(&net, &mut rng);
        let xi = vec![0.0; net.n_buses()];
        let analytic = jacobian(&state, &sp, &net).matrix;
        let x0 = state.to_vec();
        for j in 0..x0.len() {
            let h = 1e-6 * x0[j].abs().max(1.0);
            let eval = |d: f64| {
                let mut x = x0.clone();
                x[j] += d;
                residual(&ccopf::powerflow::PfState::from_slice(&x), &sp, &xi, &net).unwrap()
            };
            let (rp, rm) = (eval(h), eval(-h));
            for i in 0..x0.len() {
                let fd = (rp[i] - rm[i]) / (2.0 * h);
                let a = analytic[(i, j)];
                worst = worst.max((a - fd).abs() / a.abs().max(1.0));
            }
        }
    }
    assert!(worst <= 1e-6, "max relative error {worst:.3e}");
    assert!(start.elapsed().as_secs() < 30);
}

/// Bus injections from complex phasors, independent of the trigonometric
/// branch formulas: `S_ft = V'_f · conj(y (V'_f − V'_t))` on the router's
/// secondary voltages `V' = T V e^{j(θ + β)}`.
fn complex_outflows(op: &OperatingPoint, sp: &SetPoints, net: &Network) -> Vec<(f64, f64)> {
    let mut s = vec![(0.0, 0.0); net.n_buses()];
    let phasor = |m: f64, a: f64| (m * a.cos(), m * a.sin());
    for (l, line) in net.lines().iter().enumerate() {
        let (f, t) = net.line_ends(l);
        let set = sp.line_setting(net, l);
        let vf = phasor(set.tap_from * op.v[f], op.theta[f] + set.shift_from);
        let vt = phasor(set.tap_to * op.v[t], op.theta[t] + set.shift_to);
        for (a, b, k) in [(vf, vt, f), (vt, vf, t)] {
            let d = (a.0 - b.0, a.1 - b.1);
            let i = (line.g * d.0 - line.b * d.1, line.g * d.1 + line.b * d.0);
            s[k].0 += a.0 * i.0 + a.1 * i.1;
            s[k].1 += a.1 * i.0 - a.0 * i.1;
        }
    }
    s
}

fn check_balance(op: &OperatingPoint, sp: &SetPoints, xi: &[f64], net: &Network, tol: f64) {
    let pw = net.renewable_forecast();
    let lambda = net.power_factor_tan();
    let (pg, qg) = droop_outputs(op.omega, &op.v, sp, net);
    let out = complex_outflows(op, sp, net);
    for (i, bus) in net.buses().iter().enumerate() {
        let (mut p, mut q) = (pw[i] + xi[i] - bus.load_p, lambda[i] * (pw[i] + xi[i]) - bus.load_q);
        if let Some(k) = net.dg_at(i) {
            p += pg[k];
            q += qg[k];
        }
        assert!((p - out[i].0).abs() <= tol, "P balance at bus {}: {} vs {}", bus.id, p, out[i].0);
        assert!((q - out[i].1).abs() <= tol, "Q balance at bus {}: {} vs {}", bus.id, q, out[i].1);
    }
}

#[test]
fn bundled_case_converges_and_conserves_power() {
    let net = net33();
    let sp = even_set_points(&net);
    let xi = vec![0.0; net.n_buses()];
    let sol = solve_power_flow(&net, &sp, &xi, &PowerFlowOptions::default()).unwrap();
    assert!(sol.residual_norm <= 1e-8);
    assert!(sol.iterations <= 30);
    let op = &sol.point;
    let gen: f64 = op.p_g.iter().sum();
    let ren: f64 = net.renewable_forecast().iter().sum();
    let load = net.total_load().0;
    let losses = total_losses(&op.theta, &op.v, &sp, &net);
    assert!(losses > 0.0);
    assert!((gen + ren - load - losses).abs() <= 1e-8, "imbalance {}", gen + ren - load - losses);
    check_balance(op, &sp, &xi, &net, 1e-8);
}

#[test]
fn solutions_satisfy_phasor_balance_with_routers_and_errors() {
    let net = net33();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let mut sp = random_set_points(&net, &mut rng);
        for s in &mut sp.pfr_settings {
            s.tap_from = 0.95 + 0.1 * (s.tap_from - 0.8) / 0.4;
            s.tap_to = 0.95 + 0.1 * (s.tap_to - 0.8) / 0.4;
            s.shift_from *= 0.25;
            s.shift_to *= 0.25;
        }
        sp.v_star = vec![1.0; net.n_dgs()];
        let xi: Vec<f64> = (0..net.n_buses()).map(|i| if net.renewable_forecast()[i] > 0.0 { 0.01 } else { 0.0 }).collect();
        let sol = solve_power_flow(&net, &sp, &xi, &PowerFlowOptions::default()).unwrap();
        check_balance(&sol.point, &sp, &xi, &net, 1e-8);
    }
}

#[test]
fn uniform_angle_shift_leaves_balances_unchanged() {
    let net = net33();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sp = random_set_points(&net, &mut rng);
    let state = random_state(&net, &mut rng);
    let xi = vec![0.0; net.n_buses()];
    let r0 = residual(&state, &sp, &xi, &net).unwrap();
    let mut shifted = state.clone();
    shifted.theta.iter_mut().for_each(|t| *t += 0.3);
    let r1 = residual(&shifted, &sp, &xi, &net).unwrap();
    let n = net.n_buses();
    for i in 0..2 * n {
        assert!((r0[i] - r1[i]).abs() <= 1e-12, "row {i}");
    }
}

#[test]
fn warm_start_from_a_solution_needs_no_steps() {
    let net = net33();
    let sp = even_set_points(&net);
    let xi = vec![0.0; net.n_buses()];
    let cold = solve_power_flow(&net, &sp, &xi, &PowerFlowOptions::default()).unwrap();
    let warm = solve_power_flow(&net, &sp, &xi, &PowerFlowOptions::warm(cold.point.state())).unwrap();
    assert_eq!(warm.iterations, 0);
    assert!(cold.iterations > 0);
}
