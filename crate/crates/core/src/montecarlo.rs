//! Monte Carlo replay of fixed set points under sampled forecast errors.
//!
//! Scenarios are `ξ = F z` with `F Fᵀ = Σ` from a pivoted Cholesky and `z`
//! standard normal deviates drawn by the ChaCha20 stream cipher generator
//! (`rand_chacha::ChaCha20Rng::seed_from_u64`) through the Ziggurat sampler
//! of `rand_distr::StandardNormal`. Draws are taken in scenario order, so a
//! seed fixes the whole set on every platform. Samples are not truncated:
//! a large negative draw can drive a renewable output below zero.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{psd_factor, LinalgError};
use crate::model::Network;
use crate::opf::BoundKind;
use crate::powerflow::{solve_power_flow, PfState, PowerFlowOptions};
use crate::{Matrix, OperatingPoint, PowerFlowError, SetPoints};

/// Default histogram resolution.
pub const DEFAULT_BINS: usize = 60;
/// A quantity counts as violating only beyond its limit by more than this (p.u.).
pub const VIOLATION_TOL: f64 = 1e-7;
/// Fraction of failed scenario power flows above which the report warns.
pub const FAILURE_WARNING: f64 = 0.01;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum McError {
    #[error("covariance is not positive semidefinite: {0}")]
    NotPsd(LinalgError),
    #[error("scenario count must be at least 1")]
    NoScenarios,
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no scenario power flow converged")]
    AllFailed,
    #[error("power flow at the forecast failed: {0}")]
    Forecast(PowerFlowError),
}

/// `count × n` forecast errors (p.u.), one row per scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub samples: Matrix,
    pub seed: u64,
    pub count: usize,
}

impl ScenarioSet {
    pub fn scenario(&self, s: usize) -> &[f64] {
        self.samples.row(s)
    }
}

/// Draws `count` scenarios from `N(0, Σ)`.
pub fn sample_scenarios(covariance: &Matrix, count: usize, seed: u64) -> Result<ScenarioSet, McError> {
    if count == 0 {
        return Err(McError::NoScenarios);
    }
    let n = covariance.rows();
    let scale = covariance.max_abs().max(f64::MIN_POSITIVE);
    let f = psd_factor(covariance, 1e-13 * scale).map_err(McError::NotPsd)?;
    let rank = f.cols();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut samples = Matrix::zeros(count, n);
    let mut z = vec![0.0; rank];
    for s in 0..count {
        for zk in &mut z {
            *zk = StandardNormal.sample(&mut rng);
        }
        samples.row_mut(s).copy_from_slice(&f.mul_vec(&z));
    }
    Ok(ScenarioSet { samples, seed, count })
}

/// Solves the power flow of every scenario, warm-started at `base` (the
/// `ξ = 0` solution), on the current rayon pool. Results are in scenario order.
pub fn evaluate_scenarios(
    net: &Network<f64>,
    sp: &SetPoints,
    base: &OperatingPoint,
    scenarios: &ScenarioSet,
) -> Vec<Result<OperatingPoint, PowerFlowError>> {
    let opts = PowerFlowOptions::warm(base.state());
    (0..scenarios.count)
        .into_par_iter()
        .map(|s| solve_power_flow(net, sp, scenarios.scenario(s), &opts).map(|r| r.point))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
    /// `count / (total · width)`, an empirical density.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<HistogramBin>,
}

impl Histogram {
    /// Equal-width bins spanning the sample range (widened when degenerate).
    pub fn new(values: &[f64], bins: usize) -> Self {
        let (mut lo, mut hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !(hi > lo) {
            let pad = 1e-6 * lo.abs().max(1.0);
            lo -= pad;
            hi += pad;
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &v in values {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        let total = values.len().max(1) as f64;
        let bins = counts
            .into_iter()
            .enumerate()
            .map(|(k, count)| HistogramBin {
                left: lo + k as f64 * width,
                right: if k + 1 == bins { hi } else { lo + (k + 1) as f64 * width },
                count,
                density: count as f64 / (total * width),
            })
            .collect();
        Self { bins }
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// RFC 4180 CSV with header `bin_left,bin_right,count,density`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count,density\r\n");
        for b in &self.bins {
            out.push_str(&format!("{},{},{},{}\r\n", b.left, b.right, b.count, b.density));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        let std = if values.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
        let (min, max) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        Self { mean, std, min, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageSummary {
    pub bus: usize,
    #[serde(flatten)]
    pub summary: Summary,
    pub histogram: Histogram,
}

/// Empirical violation frequency of one one-sided limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintViolation {
    pub kind: BoundKind,
    /// Bus id for voltages and generators, 0 for frequency.
    pub element: usize,
    pub limit: f64,
    pub violations: usize,
    pub probability: f64,
}

impl ConstraintViolation {
    pub fn label(&self) -> String {
        match self.kind {
            BoundKind::OmegaMin | BoundKind::OmegaMax => self.kind.label().to_string(),
            k => format!("{}@{}", k.label(), self.element),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub scenarios: usize,
    pub successful: usize,
    pub failed_pf_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    /// Largest empirical violation probability over all constraints.
    pub max_violation_prob: f64,
    pub max_violation_constraint: String,
    pub constraints: Vec<ConstraintViolation>,
    pub voltage: Vec<VoltageSummary>,
    pub frequency: Summary,
}

impl ValidationReport {
    pub fn voltage_at(&self, bus: usize) -> Option<&VoltageSummary> {
        self.voltage.iter().find(|v| v.bus == bus)
    }
}

/// Empirical violation frequencies against the physical limits, with
/// per-bus voltage statistics. Failed scenarios are excluded and counted.
pub fn violation_report(
    outcomes: &[Result<OperatingPoint, PowerFlowError>],
    net: &Network<f64>,
    bins: usize,
) -> Result<ValidationReport, McError> {
    if bins == 0 {
        return Err(McError::NoBins);
    }
    let ok: Vec<&OperatingPoint> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    if ok.is_empty() {
        return Err(McError::AllFailed);
    }
    let n_ok = ok.len();
    let failed = outcomes.len() - n_ok;
    let warning = (failed as f64 > FAILURE_WARNING * outcomes.len() as f64)
        .then(|| format!("{failed} of {} scenario power flows failed to converge", outcomes.len()));
    if let Some(w) = &warning {
        log::warn!("{w}");
    }

    let mut constraints = Vec::new();
    let mut tally = |kind: BoundKind, element: usize, limit: f64, values: &mut dyn Iterator<Item = f64>| {
        let upper = matches!(kind, BoundKind::PMax | BoundKind::QMax | BoundKind::VMax | BoundKind::OmegaMax);
        let violations = values
            .filter(|&x| if upper { x > limit + VIOLATION_TOL } else { x < limit - VIOLATION_TOL })
            .count();
        constraints.push(ConstraintViolation { kind, element, limit, violations, probability: violations as f64 / n_ok as f64 });
    };
    for (k, d) in net.dispatchable_dgs().iter().enumerate() {
        tally(BoundKind::PMin, d.bus, d.p_min, &mut ok.iter().map(|o| o.p_g[k]));
        tally(BoundKind::PMax, d.bus, d.p_max, &mut ok.iter().map(|o| o.p_g[k]));
        tally(BoundKind::QMin, d.bus, d.q_min, &mut ok.iter().map(|o| o.q_g[k]));
        tally(BoundKind::QMax, d.bus, d.q_max, &mut ok.iter().map(|o| o.q_g[k]));
    }
    for (i, b) in net.buses().iter().enumerate() {
        tally(BoundKind::VMin, b.id, b.v_min, &mut ok.iter().map(|o| o.v[i]));
        tally(BoundKind::VMax, b.id, b.v_max, &mut ok.iter().map(|o| o.v[i]));
    }
    let lim = net.limits();
    tally(BoundKind::OmegaMin, 0, lim.omega_min, &mut ok.iter().map(|o| o.omega));
    tally(BoundKind::OmegaMax, 0, lim.omega_max, &mut ok.iter().map(|o| o.omega));

    let worst = constraints
        .iter()
        .fold(None::<&ConstraintViolation>, |w, c| match w {
            Some(w) if w.probability >= c.probability => Some(w),
            _ => Some(c),
        })
        .expect("at least one constraint");
    let (max_violation_prob, max_violation_constraint) = (worst.probability, worst.label());

    let voltage = net
        .buses()
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let vs: Vec<f64> = ok.iter().map(|o| o.v[i]).collect();
            VoltageSummary { bus: b.id, summary: Summary::of(&vs), histogram: Histogram::new(&vs, bins) }
        })
        .collect();
    let omegas: Vec<f64> = ok.iter().map(|o| o.omega).collect();

    Ok(ValidationReport {
        scenarios: outcomes.len(),
        successful: n_ok,
        failed_pf_count: failed,
        warning,
        max_violation_prob,
        max_violation_constraint,
        constraints,
        voltage,
        frequency: Summary::of(&omegas),
    })
}

/// Samples, replays and summarizes `sp` on `net`.
pub fn validate(
    net: &Network<f64>,
    sp: &SetPoints,
    count: usize,
    seed: u64,
    bins: usize,
) -> Result<ValidationReport, McError> {
    let n = net.n_buses();
    if sp.p_star.len() != net.n_dgs() {
        return Err(McError::Dimension(format!("{} generator set points for {} generators", sp.p_star.len(), net.n_dgs())));
    }
    let base = solve_power_flow(net, sp, &vec![0.0; n], &PowerFlowOptions { warm_start: Some(PfState::flat(n, sp.omega_star)), ..Default::default() })
        .map_err(McError::Forecast)?;
    let scenarios = sample_scenarios(net.covariance(), count, seed)?;
    let outcomes = evaluate_scenarios(net, sp, &base.point, &scenarios);
    violation_report(&outcomes, net, bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensitivity::sensitivity_matrices;
    use crate::testing::three_bus_with_pfr;

    fn forecast_point(net: &Network<f64>, sp: &SetPoints) -> OperatingPoint {
        solve_power_flow(net, sp, &vec![0.0; net.n_buses()], &PowerFlowOptions::default()).unwrap().point
    }

    #[test]
    fn zero_covariance_draws_zero() {
        let s = sample_scenarios(&Matrix::zeros(4, 4), 50, 7).unwrap();
        assert!(s.samples.to_rows().iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn single_bus_standard_deviation() {
        let cov = Matrix::from_diag(&[0.0, 0.04, 0.0]);
        let s = sample_scenarios(&cov, 100_000, 11).unwrap();
        let col = s.samples.column(1);
        let std = Summary::of(&col).std;
        assert!((0.198..=0.202).contains(&std), "std {std}");
        assert!(s.samples.column(0).iter().chain(&s.samples.column(2)).all(|&x| x == 0.0));
    }

    #[test]
    fn same_seed_same_scenarios() {
        let cov = Matrix::from_rows(&[vec![0.04, 0.01], vec![0.01, 0.09]]);
        let a = sample_scenarios(&cov, 200, 3).unwrap();
        let b = sample_scenarios(&cov, 200, 3).unwrap();
        let c = sample_scenarios(&cov, 200, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let cov = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(sample_scenarios(&cov, 10, 0), Err(McError::NotPsd(_))));
        assert!(matches!(sample_scenarios(&Matrix::identity(2), 0, 0), Err(McError::NoScenarios)));
    }

    #[test]
    fn zero_scenarios_reproduce_forecast_point() {
        let net = three_bus_with_pfr();
        let sp = SetPoints::nominal(&net);
        let base = forecast_point(&net, &sp);
        let set = ScenarioSet { samples: Matrix::zeros(5, 3), seed: 0, count: 5 };
        for o in evaluate_scenarios(&net, &sp, &base, &set) {
            assert_eq!(o.unwrap(), base);
        }
    }

    #[test]
    fn small_perturbation_follows_voltage_sensitivity() {
        let net = three_bus_with_pfr();
        let sp = SetPoints::nominal(&net);
        let base = forecast_point(&net, &sp);
        let sens = sensitivity_matrices(&net, &base, &sp).unwrap();
        let bus = net.bus_index(2).unwrap();
        let mut samples = Matrix::zeros(1, 3);
        samples[(0, bus)] = 1e-3;
        let set = ScenarioSet { samples, seed: 0, count: 1 };
        let o = evaluate_scenarios(&net, &sp, &base, &set).remove(0).unwrap();
        for i in 0..3 {
            let predicted = sens.l_v[(i, bus)] * 1e-3;
            assert!((o.v[i] - base.v[i] - predicted).abs() < 1e-5);
        }
    }

    #[test]
    fn report_is_consistent_and_thread_count_independent() {
        let net = three_bus_with_pfr();
        let sp = SetPoints::nominal(&net);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| validate(&net, &sp, 500, 5, 20).unwrap())
        };
        let r1 = run(1);
        assert_eq!(r1, run(4));
        assert_eq!(r1.successful + r1.failed_pf_count, 500);
        for c in &r1.constraints {
            assert!((0.0..=1.0).contains(&c.probability));
            assert!(c.probability <= r1.max_violation_prob);
        }
        for v in &r1.voltage {
            assert_eq!(v.histogram.total(), r1.successful);
            assert_eq!(v.histogram.bins.len(), 20);
        }
    }

    #[test]
    fn zero_uncertainty_has_no_violations() {
        let net = three_bus_with_pfr().with_covariance(Matrix::zeros(3, 3)).unwrap();
        let zero = crate::MarginSet::zero(3, net.n_dgs());
        let sol = crate::opf::solve_deterministic_opf(&net, &zero, true, None).unwrap();
        let r = validate(&net, &sol.set_points, 20, 1, 10).unwrap();
        assert_eq!(r.max_violation_prob, 0.0);
        assert!(r.voltage.iter().all(|v| v.summary.std < 1e-14));
    }

    #[test]
    fn histogram_csv_layout() {
        let h = Histogram::new(&[0.0, 0.5, 1.0, 1.0], 2);
        assert_eq!(h.total(), 4);
        assert_eq!(h.to_csv(), "bin_left,bin_right,count,density\r\n0,0.5,1,0.5\r\n0.5,1,3,1.5\r\n");
    }
}
