mod common;

use ccopf::cases::{load_network, IEEE33_CASE, IEEE33_SIDECAR};
use ccopf::ccopf::{solve_ccopf, CcOpfOptions, Mode};
use ccopf::opf::{diagnose_binding, objective, solve_deterministic_opf, BoundKind, OpfSolution, TightenedBounds};
use ccopf::powerflow::{solve_power_flow, PowerFlowOptions};
use ccopf::{MarginSet, Network};
use common::net33;
use serde_json::Value;

fn zero(net: &Network) -> MarginSet {
    MarginSet::zero(net.n_buses(), net.n_dgs())
}

fn cc_margins(net: &Network, mode: Mode) -> MarginSet {
    let r = solve_ccopf(net, mode, &CcOpfOptions::default()).unwrap();
    r.applied_margins().expect("chance-constrained run").clone()
}

fn scaled(m: &MarginSet, s: f64) -> MarginSet {
    let mul = |v: &[f64]| v.iter().map(|x| x * s).collect::<Vec<_>>();
    MarginSet {
        omega_p: mul(&m.omega_p),
        omega_q: mul(&m.omega_q),
        omega_v: mul(&m.omega_v),
        omega_freq: m.omega_freq * s,
        ..m.clone()
    }
}

/// Bundled case with the router list rewritten by `edit`.
fn with_routers(edit: impl Fn(&mut Vec<Value>)) -> Network {
    let mut side: Value = serde_json::from_str(IEEE33_SIDECAR).unwrap();
    edit(side["pfrs"].as_array_mut().unwrap());
    load_network(IEEE33_CASE, &side.to_string()).unwrap()
}

fn router_limits(tap: f64, shift_deg: f64) -> Network {
    with_routers(|pfrs| {
        for p in pfrs.iter_mut() {
            p["tap_min"] = (1.0 - tap).into();
            p["tap_max"] = (1.0 + tap).into();
            p["shift_max_deg"] = shift_deg.into();
        }
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn plain_opf_matches_independent_reference() {
    // produced by tools/reference_opf.py (SciPy trust-constr on a bus-admittance model)
    let golden: Value = serde_json::from_str(include_str!("data/ieee33_opf_reference.json")).unwrap();
    let reference = golden["cost"].as_f64().unwrap();
    let net = net33();
    let sol = solve_deterministic_opf(&net, &zero(&net), false, None).unwrap();
    let rel = (sol.cost - reference).abs() / reference;
    assert!(rel <= 1e-3, "cost {} vs reference {reference} (rel {rel:.2e})", sol.cost);
    let v_ref: Vec<f64> = golden["v"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(max_abs_diff(&sol.operating_point.v, &v_ref) < 1e-3);
}

#[test]
fn idle_routers_equal_absent_routers() {
    let with = net33();
    let without = with_routers(|pfrs| pfrs.clear());
    assert_eq!(without.n_pfrs(), 0);
    let a = solve_deterministic_opf(&with, &zero(&with), false, None).unwrap();
    let b = solve_deterministic_opf(&without, &zero(&without), false, None).unwrap();
    let (oa, ob) = (&a.operating_point, &b.operating_point);
    for (x, y) in [(&oa.v, &ob.v), (&oa.theta, &ob.theta), (&oa.p_g, &ob.p_g), (&oa.q_g, &ob.q_g)] {
        assert!(max_abs_diff(x, y) <= 1e-8, "{}", max_abs_diff(x, y));
    }
    assert!((oa.omega - ob.omega).abs() <= 1e-8);
}

#[test]
fn widening_router_limits_never_raises_cost() {
    let net = net33();
    let mut costs = vec![solve_deterministic_opf(&net, &zero(&net), false, None).unwrap().cost];
    for (tap, shift) in [(0.05, 5.0), (0.1, 10.0), (0.2, 20.0)] {
        let n = router_limits(tap, shift);
        costs.push(solve_deterministic_opf(&n, &zero(&n), true, None).unwrap().cost);
    }
    for w in costs.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "{costs:?}");
    }
}

#[test]
fn nested_margins_never_lower_cost() {
    let net = net33();
    for mode in [Mode::Ccopf, Mode::CcopfPfr] {
        let m = cc_margins(&net, mode);
        let costs: Vec<f64> = [0.0, 0.5, 1.0, 1.5]
            .iter()
            .map(|&s| solve_deterministic_opf(&net, &scaled(&m, s), mode.dispatches_pfrs(), None).unwrap().cost)
            .collect();
        for w in costs.windows(2) {
            assert!(w[1] >= w[0] * (1.0 - 1e-9), "{mode}: {costs:?}");
        }
    }
}

fn check_certificate(net: &Network, m: &MarginSet, sol: &OpfSolution) {
    let bounds = TightenedBounds::new(net, m).unwrap();
    let op = &sol.operating_point;

    let cold = solve_power_flow(net, &sol.set_points, &vec![0.0; net.n_buses()], &PowerFlowOptions::default())
        .unwrap()
        .point;
    assert!(max_abs_diff(&cold.v, &op.v) <= 1e-7);
    assert!(max_abs_diff(&cold.theta, &op.theta) <= 1e-7);
    assert!((cold.omega - op.omega).abs() <= 1e-7);

    // set points coincide with the forecast operating values
    let sp = &sol.set_points;
    assert!(max_abs_diff(&sp.p_star, &op.p_g) <= 1e-7);
    assert!(max_abs_diff(&sp.q_star, &op.q_g) <= 1e-7);
    assert!((sp.omega_star - op.omega).abs() <= 1e-7);
    for (k, &vs) in sp.v_star.iter().enumerate() {
        assert!((vs - op.v[net.dg_bus_index(k)]).abs() <= 1e-7);
    }

    for (k, d) in net.dispatchable_dgs().iter().enumerate() {
        assert!(op.p_g[k] >= bounds.p_min[k] - 1e-6 && op.p_g[k] <= bounds.p_max[k] + 1e-6, "P at bus {}", d.bus);
        assert!(op.q_g[k] >= bounds.q_min[k] - 1e-6 && op.q_g[k] <= bounds.q_max[k] + 1e-6, "Q at bus {}", d.bus);
    }
    for (i, &v) in op.v.iter().enumerate() {
        assert!(v >= bounds.v_min[i] - 1e-6 && v <= bounds.v_max[i] + 1e-6, "V at position {i}");
    }
    assert!(op.omega >= bounds.omega_min - 1e-6 && op.omega <= bounds.omega_max + 1e-6);
    assert!(sol.kkt_residual <= 1e-6);
    assert_eq!(sol.cost, objective(&op.p_g, net.dispatchable_dgs()));

    for s in &sp.pfr_settings {
        assert_eq!(s.shift_from, -s.shift_to);
        assert!((s.shift_from - s.delta() / 2.0).abs() <= 1e-15);
    }
}

#[test]
fn solutions_carry_a_power_flow_certificate() {
    let net = net33();
    for mode in Mode::ALL {
        let m = if mode.is_chance_constrained() { cc_margins(&net, mode) } else { zero(&net) };
        let sol = solve_deterministic_opf(&net, &m, mode.dispatches_pfrs(), None).unwrap();
        check_certificate(&net, &m, &sol);
    }
}

#[test]
fn warm_start_reaches_the_same_solution() {
    let net = net33();
    let m = cc_margins(&net, Mode::CcopfPfr);
    let cold = solve_deterministic_opf(&net, &m, true, None).unwrap();
    let warm = solve_deterministic_opf(&net, &m, true, Some(&cold)).unwrap();
    assert!((warm.cost - cold.cost).abs() <= 1e-6 * cold.cost);
    assert!(max_abs_diff(&warm.operating_point.v, &cold.operating_point.v) <= 1e-5);
}

#[test]
fn binding_report_names_the_critical_bus() {
    let net = net33();
    let r = solve_ccopf(&net, Mode::Ccopf, &CcOpfOptions::default()).unwrap();
    let m = r.applied_margins().unwrap();
    let bounds = TightenedBounds::new(&net, m).unwrap();
    let report = diagnose_binding(&r.solution, &bounds, &net);
    let critical = report.critical_bus().unwrap();
    let hit = report.binding.iter().find(|b| b.kind == BoundKind::VMax && b.element == critical);
    assert!(hit.is_some_and(|b| b.gap.abs() <= 1e-6), "{:?}", report.binding);
    assert_eq!(r.solution.binding_constraints, report.binding);
}

#[test]
fn loose_bounds_leave_nothing_binding() {
    let net = net33();
    let sol = solve_deterministic_opf(&net, &zero(&net), false, None).unwrap();
    let mut loose = TightenedBounds::physical(&net);
    for v in [&mut loose.p_min, &mut loose.q_min, &mut loose.v_min] {
        v.iter_mut().for_each(|x| *x -= 10.0);
    }
    for v in [&mut loose.p_max, &mut loose.q_max, &mut loose.v_max] {
        v.iter_mut().for_each(|x| *x += 10.0);
    }
    loose.omega_min -= 1.0;
    loose.omega_max += 1.0;
    assert!(diagnose_binding(&sol, &loose, &net).binding.is_empty());
}

#[test]
fn crossing_margin_is_reported_before_solving() {
    let net = net33();
    let mut m = zero(&net);
    let i = net.bus_index(14).unwrap();
    m.omega_v[i] = 0.06;
    let err = solve_deterministic_opf(&net, &m, true, None).unwrap_err();
    assert!(err.to_string().contains("V at bus 14"), "{err}");
}
