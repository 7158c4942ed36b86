mod common;

use ccopf::cases::{load_network, IEEE33_CASE, IEEE33_ZERO_SIGMA_SIDECAR};
use ccopf::ccopf::{solve_ccopf, CcOpfOptions, Mode};
use ccopf::montecarlo::validate;
use ccopf::sensitivity::{margin_delta, margins, sensitivity_matrices};
use common::net33;

#[test]
fn zero_uncertainty_reproduces_deterministic_costs_in_two_iterations() {
    let net = load_network(IEEE33_CASE, IEEE33_ZERO_SIGMA_SIDECAR).unwrap();
    let opts = CcOpfOptions::default();
    for (cc, det) in [(Mode::Ccopf, Mode::Opf), (Mode::CcopfPfr, Mode::OpfPfr)] {
        let c = solve_ccopf(&net, cc, &opts).unwrap();
        let d = solve_ccopf(&net, det, &opts).unwrap();
        assert!(c.converged);
        assert_eq!(c.iterations, 2);
        assert!((c.solution.cost - d.solution.cost).abs() <= 1e-6 * d.solution.cost, "{cc}");
    }
}

#[test]
fn converged_margins_are_a_fixed_point() {
    let net = net33();
    let opts = CcOpfOptions::default();
    let r = solve_ccopf(&net, Mode::CcopfPfr, &opts).unwrap();
    assert!(r.converged && r.iterations <= 10);
    let sol = &r.solution;
    let sens = sensitivity_matrices(&net, &sol.operating_point, &sol.set_points).unwrap();
    let again = margins(&sens, net.covariance(), &net.limits().epsilons, &net).unwrap();
    let applied = r.applied_margins().unwrap();
    assert!(margin_delta(&again, applied).unwrap() <= opts.delta);
}

#[test]
fn larger_uncertainty_never_lowers_cost() {
    let net = net33();
    let wide = net.with_covariance(net.covariance().scale(2.0)).unwrap();
    let opts = CcOpfOptions::default();
    for mode in [Mode::Ccopf, Mode::CcopfPfr] {
        let base = solve_ccopf(&net, mode, &opts).unwrap().solution.cost;
        let more = solve_ccopf(&wide, mode, &opts).unwrap().solution.cost;
        assert!(more >= base - 1e-9, "{mode}: {more} < {base}");
    }
}

#[test]
fn routers_never_raise_cost() {
    let net = net33();
    let opts = CcOpfOptions::default();
    let cost = |m| solve_ccopf(&net, m, &opts).unwrap().solution.cost;
    assert!(cost(Mode::OpfPfr) <= cost(Mode::Opf) + 1e-9);
    assert!(cost(Mode::CcopfPfr) <= cost(Mode::Ccopf) + 1e-9);
}

#[test]
fn monte_carlo_spread_matches_linear_prediction_for_small_uncertainty() {
    let net = net33();
    let small = net.with_covariance(net.covariance().scale(0.01)).unwrap();
    let sol = solve_ccopf(&small, Mode::Opf, &CcOpfOptions::default()).unwrap().solution;
    let sens = sensitivity_matrices(&small, &sol.operating_point, &sol.set_points).unwrap();
    let m = margins(&sens, small.covariance(), &small.limits().epsilons, &small).unwrap();
    let report = validate(&small, &sol.set_points, 20_000, 99, 30).unwrap();
    assert_eq!(report.failed_pf_count, 0);
    for (i, bus) in small.buses().iter().enumerate() {
        let predicted = m.dev_v[i];
        if predicted < 1e-6 {
            continue;
        }
        let sampled = report.voltage_at(bus.id).unwrap().summary.std;
        assert!((sampled / predicted - 1.0).abs() <= 0.05, "bus {}: {sampled} vs {predicted}", bus.id);
    }
    let f = report.frequency.std / m.dev_freq;
    assert!((f - 1.0).abs() <= 0.05);
}
