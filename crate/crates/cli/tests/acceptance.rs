//! End-to-end acceptance checks on the bundled 33-bus case. Each test prints
//! one `PASS`/`FAIL` line with the measured values; run with
//! `cargo test -p grid-ccopf --test acceptance -- --nocapture --test-threads 1`
//! to see them in order.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ccopf::branch::{branch_flow, PfrSetting};
use ccopf::cases::{
    ieee33, load_network, IEEE33_CASE, IEEE33_HIGH_GAIN_SIDECAR, IEEE33_LOW_GAIN_SIDECAR, IEEE33_ZERO_SIGMA_SIDECAR,
};
use ccopf::ccopf::{solve_ccopf, CcOpfOptions, CcOpfResult, Mode};
use ccopf::model::Epsilons;
use ccopf::montecarlo::{validate, ValidationReport};
use ccopf::opf::{diagnose_binding, TightenedBounds};
use ccopf::powerflow::{jacobian, residual, solve_power_flow, total_losses, PfState, PowerFlowOptions};
use ccopf::sensitivity::{gaussian_quantile, sensitivity_matrices};
use ccopf::{Network, SetPoints};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCENARIOS: usize = 10_000;
const SEED: u64 = 42;

fn report(name: &str, ok: bool, detail: String) {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

fn options() -> CcOpfOptions {
    CcOpfOptions { delta: 1e-5, ..CcOpfOptions::default() }
}

fn with_eps(net: Network) -> Network {
    net.with_epsilons(Epsilons { p: 0.01, q: 0.01, v: 0.01, omega: 0.01 }).unwrap()
}

struct ModeRun {
    result: CcOpfResult,
    elapsed: Duration,
}

/// All four modes on one network, solved once per test binary.
fn solve_all(net: &Network) -> Vec<ModeRun> {
    Mode::ALL
        .iter()
        .map(|&m| {
            let start = Instant::now();
            let result = solve_ccopf(net, m, &options()).unwrap_or_else(|e| panic!("{m}: {e}"));
            ModeRun { result, elapsed: start.elapsed() }
        })
        .collect()
}

fn default_runs() -> &'static (Network, Vec<ModeRun>) {
    static RUNS: OnceLock<(Network, Vec<ModeRun>)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let net = with_eps(ieee33());
        let runs = solve_all(&net);
        (net, runs)
    })
}

fn run(runs: &[ModeRun], mode: Mode) -> &ModeRun {
    &runs[Mode::ALL.iter().position(|&m| m == mode).unwrap()]
}

fn mc(net: &Network, r: &CcOpfResult) -> ValidationReport {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    pool.install(|| validate(net, &r.solution.set_points, SCENARIOS, SEED, 60).unwrap())
}

fn critical_bus(net: &Network, r: &CcOpfResult) -> usize {
    let zero = ccopf::MarginSet::zero(net.n_buses(), net.n_dgs());
    let bounds = TightenedBounds::new(net, r.applied_margins().unwrap_or(&zero)).unwrap();
    diagnose_binding(&r.solution, &bounds, net).critical_bus().unwrap()
}

fn even_set_points(net: &Network) -> SetPoints {
    let pw: f64 = net.renewable_forecast().iter().sum();
    let mut sp = SetPoints::nominal(net);
    sp.p_star = vec![(net.total_load().0 - pw) / net.n_dgs() as f64; net.n_dgs()];
    sp
}

#[test]
fn jacobian_matches_central_differences() {
    let net = ieee33();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let n = net.n_buses();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut sp = even_set_points(&net);
        for (k, d) in net.dispatchable_dgs().iter().enumerate() {
            sp.p_star[k] = rng.gen_range(d.p_min..d.p_max);
            sp.q_star[k] = rng.gen_range(d.q_min..d.q_max);
            sp.v_star[k] = rng.gen_range(0.97..1.03);
        }
        for s in &mut sp.pfr_settings {
            *s = PfrSetting::from_delta(rng.gen_range(0.8..1.2), rng.gen_range(0.8..1.2), rng.gen_range(-0.6..0.6));
        }
        let mut theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect();
        theta[net.reference_index()] = 0.0;
        let state = PfState { theta, v: (0..n).map(|_| rng.gen_range(0.95..1.05)).collect(), omega: rng.gen_range(0.995..1.005) };
        let xi = vec![0.0; n];
        let j = jacobian(&state, &sp, &net).matrix;
        let x0 = state.to_vec();
        for c in 0..x0.len() {
            let h = 1e-6;
            let at = |d: f64| {
                let mut x = x0.clone();
                x[c] += d;
                residual(&PfState::from_slice(&x), &sp, &xi, &net).unwrap()
            };
            let (p, m) = (at(h), at(-h));
            for r in 0..x0.len() {
                let fd = (p[r] - m[r]) / (2.0 * h);
                worst = worst.max((j[(r, c)] - fd).abs() / j[(r, c)].abs().max(1.0));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "Jacobian vs central differences",
        worst <= 1e-6 && secs < 30.0,
        format!("max relative error {worst:.2e} (≤ 1e-6) over 100 states in {secs:.2} s (< 30 s)"),
    );
}

#[test]
fn identity_router_equals_plain_line() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (vi, vj, th): (f64, f64, f64) = (rng.gen_range(0.8..1.2), rng.gen_range(0.8..1.2), rng.gen_range(-0.5..0.5));
        let (g, b): (f64, f64) = (rng.gen_range(0.0..50.0), rng.gen_range(-50.0..0.0));
        let f = branch_flow(vi, vj, th, g, b, &PfrSetting::identity());
        let plain = [
            g * (vi * vi - vi * vj * th.cos()) - b * vi * vj * th.sin(),
            -b * (vi * vi - vi * vj * th.cos()) - g * vi * vj * th.sin(),
            g * (vj * vj - vi * vj * th.cos()) + b * vi * vj * th.sin(),
            -b * (vj * vj - vi * vj * th.cos()) + g * vi * vj * th.sin(),
        ];
        for (a, e) in [f.p_from_to, f.q_from_to, f.p_to_from, f.q_to_from].iter().zip(plain) {
            worst = worst.max((a - e).abs());
        }
    }
    report("PFR identity reduction", worst <= 1e-14, format!("max |difference| {worst:.2e} (≤ 1e-14) over 1000 samples"));
}

#[test]
fn power_flow_converges_and_conserves() {
    let net = ieee33();
    let sp = even_set_points(&net);
    let sol = solve_power_flow(&net, &sp, &vec![0.0; net.n_buses()], &PowerFlowOptions::default()).unwrap();
    let op = &sol.point;
    let imbalance = op.p_g.iter().sum::<f64>() + net.renewable_forecast().iter().sum::<f64>()
        - net.total_load().0
        - total_losses(&op.theta, &op.v, &sp, &net);
    report(
        "power-flow convergence",
        sol.residual_norm <= 1e-8 && sol.iterations <= 30 && imbalance.abs() <= 1e-8,
        format!(
            "residual {:.2e} (≤ 1e-8) in {} iterations (≤ 30), conservation error {:.2e} (≤ 1e-8)",
            sol.residual_norm,
            sol.iterations,
            imbalance.abs()
        ),
    );
}

#[test]
fn sensitivity_error_is_second_order() {
    let net = ieee33();
    let sp = even_set_points(&net);
    let n = net.n_buses();
    let opts = PowerFlowOptions { tol: 1e-12, max_iter: 50, ..PowerFlowOptions::default() };
    let base = solve_power_flow(&net, &sp, &vec![0.0; n], &opts).unwrap().point;
    let sens = sensitivity_matrices(&net, &base, &sp).unwrap();
    let mut dir = vec![0.0; n];
    for (k, r) in net.renewable_dgs().iter().enumerate() {
        dir[net.bus_index(r.bus).unwrap()] = if k % 2 == 0 { 1.0 } else { -0.6 };
    }
    let gaps: Vec<f64> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&t| {
            let xi: Vec<f64> = dir.iter().map(|d| t * d).collect();
            let warm = PowerFlowOptions { warm_start: Some(base.state()), ..opts.clone() };
            let op = solve_power_flow(&net, &sp, &xi, &warm).unwrap().point;
            let dv = sens.l_v.mul_vec(&xi);
            let dw: f64 = sens.l_omega.iter().zip(&xi).map(|(l, x)| l * x).sum();
            (0..n).fold((op.omega - base.omega - dw).abs(), |g, i| g.max((op.v[i] - base.v[i] - dv[i]).abs()))
        })
        .collect();
    let ratios = [gaps[0] / gaps[1], gaps[1] / gaps[2]];
    report(
        "sensitivity fidelity",
        ratios.iter().all(|r| (50.0..=200.0).contains(r)),
        format!("gaps {:.2e}, {:.2e}, {:.2e}; ratios {:.1}, {:.1} (in [50, 200])", gaps[0], gaps[1], gaps[2], ratios[0], ratios[1]),
    );
}

#[test]
fn gaussian_quantile_value() {
    // Bisection on Φ obtained by Simpson integration of the density.
    let phi = |x: f64| {
        let steps = 4000;
        let h = x / steps as f64;
        let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let inner: f64 = (1..steps).map(|k| pdf(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 }).sum();
        0.5 + (pdf(0.0) + pdf(x) + inner) * h / 3.0
    };
    let (mut lo, mut hi) = (0.0, 5.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) < 0.99 {
            lo = mid
        } else {
            hi = mid
        }
    }
    let q = gaussian_quantile(0.99).unwrap();
    let oracle = 0.5 * (lo + hi);
    report(
        "Gaussian quantile",
        (q - 2.3263479).abs() <= 1e-6 && (q - oracle).abs() <= 1e-6,
        format!("Φ⁻¹(0.99) = {q:.9}, bisection oracle {oracle:.9}, reference 2.3263479 ± 1e-6"),
    );
}

#[test]
fn zero_uncertainty_degenerates_to_deterministic() {
    let net = load_network(IEEE33_CASE, IEEE33_ZERO_SIGMA_SIDECAR).unwrap();
    let runs = solve_all(&net);
    let cost = |m| run(&runs, m).result.solution.cost;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let (r1, r2) = (rel(cost(Mode::Ccopf), cost(Mode::Opf)), rel(cost(Mode::CcopfPfr), cost(Mode::OpfPfr)));
    let iters = [run(&runs, Mode::Ccopf).result.iterations, run(&runs, Mode::CcopfPfr).result.iterations];
    report(
        "zero-uncertainty degeneracy",
        r1 <= 1e-6 && r2 <= 1e-6 && iters == [2, 2],
        format!("relative cost gaps {r1:.1e}, {r2:.1e} (≤ 1e-6); iterations {iters:?} (exactly 2)"),
    );
}

#[test]
fn four_mode_cost_ordering() {
    let (_, runs) = default_runs();
    let cost = |m| run(runs, m).result.solution.cost;
    let iters = [run(runs, Mode::Ccopf).result.iterations, run(runs, Mode::CcopfPfr).result.iterations];
    let total: f64 = runs.iter().map(|r| r.elapsed.as_secs_f64()).sum();
    let ok = cost(Mode::OpfPfr) <= cost(Mode::Opf)
        && cost(Mode::CcopfPfr) <= cost(Mode::Ccopf)
        && cost(Mode::Ccopf) >= cost(Mode::Opf)
        && iters.iter().all(|&k| k <= 10)
        && runs.iter().all(|r| r.result.converged)
        && total < 300.0;
    report(
        "four-mode cost ordering",
        ok,
        format!(
            "opf {:.3}, opf-pfr {:.3}, ccopf {:.3}, ccopf-pfr {:.3} $/h; outer iterations {iters:?} (≤ 10); {total:.2} s (< 300 s)",
            cost(Mode::Opf),
            cost(Mode::OpfPfr),
            cost(Mode::Ccopf),
            cost(Mode::CcopfPfr)
        ),
    );
}

#[test]
fn monte_carlo_security() {
    let (net, runs) = default_runs();
    let start = Instant::now();
    let eps: Vec<f64> = Mode::ALL.iter().map(|&m| mc(net, &run(runs, m).result).max_violation_prob).collect();
    let secs = start.elapsed().as_secs_f64();
    let ok = eps[2] <= 0.015 && eps[3] <= 0.015 && eps[0] > 0.10 && eps[1] > 0.10 && secs < 600.0;
    report(
        "Monte Carlo security",
        ok,
        format!(
            "Max.ε_emp opf {:.4}, opf-pfr {:.4} (> 0.10); ccopf {:.4}, ccopf-pfr {:.4} (≤ 0.015); {SCENARIOS} scenarios × 4 in {secs:.1} s",
            eps[0], eps[1], eps[2], eps[3]
        ),
    );
}

/// `(critical bus, ccopf result, ccopf-pfr result)` for a gain variant.
fn gain_variant(sidecar: &str) -> (Network, CcOpfResult, CcOpfResult) {
    let net = with_eps(load_network(IEEE33_CASE, sidecar).unwrap());
    let cc = solve_ccopf(&net, Mode::Ccopf, &options()).unwrap();
    let pfr = solve_ccopf(&net, Mode::CcopfPfr, &options()).unwrap();
    (net, cc, pfr)
}

fn std_at(net: &Network, r: &CcOpfResult, bus: usize) -> f64 {
    mc(net, r).voltage_at(bus).unwrap().summary.std
}

#[test]
fn droop_gains_and_routers_shape_voltage_volatility() {
    let (net, runs) = default_runs();
    let cc = &run(runs, Mode::Ccopf).result;
    let bus = critical_bus(net, cc);
    let s_cc = std_at(net, cc, bus);
    let s_pfr = std_at(net, &run(runs, Mode::CcopfPfr).result, bus);
    let (low_net, low_cc, _) = gain_variant(IEEE33_LOW_GAIN_SIDECAR);
    let (high_net, high_cc, high_pfr) = gain_variant(IEEE33_HIGH_GAIN_SIDECAR);
    let s_low = std_at(&low_net, &low_cc, bus);
    let s_high = std_at(&high_net, &high_cc, bus);
    let s_high_pfr = std_at(&high_net, &high_pfr, bus);
    let ok = s_pfr < s_cc && s_high > s_low && s_high_pfr <= 2.0 * s_low;
    report(
        "voltage volatility",
        ok,
        format!(
            "critical bus {bus}: std ccopf-pfr {s_pfr:.5} < ccopf {s_cc:.5}; ccopf high-gain {s_high:.5} > low-gain {s_low:.5}; \
             ccopf-pfr high-gain {s_high_pfr:.5} ≤ 2 × {s_low:.5}"
        ),
    );
}

#[test]
fn router_savings_grow_with_droop_gain() {
    let reduction = |sidecar| {
        let (_, cc, pfr) = gain_variant(sidecar);
        (cc.solution.cost - pfr.solution.cost) / cc.solution.cost
    };
    let (low, high) = (reduction(IEEE33_LOW_GAIN_SIDECAR), reduction(IEEE33_HIGH_GAIN_SIDECAR));
    report(
        "cost reduction under droop sweep",
        high > low,
        format!("ccopf-pfr vs ccopf reduction {:.4}% at K=5/50 > {:.4}% at K=1/10", 100.0 * high, 100.0 * low),
    );
}

fn compare_run(dir: &Path) -> (Vec<u8>, Vec<u8>) {
    let status = Command::new(env!("CARGO_BIN_EXE_grid-ccopf"))
        .args(["--deterministic", "--seed", "7", "--out"])
        .arg(dir)
        .args(["compare", "--scenarios", "2000"])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    (std::fs::read(dir.join("compare.csv")).unwrap(), std::fs::read(dir.join("compare.json")).unwrap())
}

#[test]
fn compare_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (csv_a, json_a) = compare_run(a.path());
    let (csv_b, json_b) = compare_run(b.path());
    report(
        "determinism",
        csv_a == csv_b && json_a == json_b,
        format!("two compare runs with seed 7: CSV {} bytes, JSON {} bytes, identical: {}", csv_a.len(), json_a.len(), csv_a == csv_b && json_a == json_b),
    );
}
