//! Outer fixed-point iteration of the chance-constrained OPF: margins from
//! the sensitivities at the incumbent, then a tightened deterministic OPF,
//! until the margins stop moving.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Network;
use crate::opf::{InteriorPointSubsolver, OpfError, OpfSolution, OpfSubsolver, TightenedBounds};
use crate::sensitivity::{margin_delta, margins, sensitivity_matrices};
use crate::{MarginSet, SensitivityError};

/// The four dispatch formulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Opf,
    OpfPfr,
    Ccopf,
    CcopfPfr,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Opf, Mode::OpfPfr, Mode::Ccopf, Mode::CcopfPfr];

    pub fn dispatches_pfrs(self) -> bool {
        matches!(self, Mode::OpfPfr | Mode::CcopfPfr)
    }

    pub fn is_chance_constrained(self) -> bool {
        matches!(self, Mode::Ccopf | Mode::CcopfPfr)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Opf => "opf",
            Mode::OpfPfr => "opf-pfr",
            Mode::Ccopf => "ccopf",
            Mode::CcopfPfr => "ccopf-pfr",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected opf, opf-pfr, ccopf or ccopf-pfr)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcOpfOptions {
    /// Stop when successive margin sets differ by at most this (∞-norm, p.u.).
    pub delta: f64,
    pub max_iter: usize,
    /// Weight of the new margins when damping an oscillating iteration.
    pub damping: f64,
}

impl Default for CcOpfOptions {
    fn default() -> Self {
        Self { delta: 1e-5, max_iter: 25, damping: 0.5 }
    }
}

/// Margins computed at the end of one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginRecord {
    pub iteration: usize,
    pub margins: MarginSet,
    /// `‖Ω_k − Ω_{k−1}‖∞`, with `Ω_0 = 0`.
    pub delta_omega: f64,
    pub cost: f64,
    /// Whether the margins were averaged with the previous set.
    pub damped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcOpfResult {
    pub solution: OpfSolution,
    pub iterations: usize,
    pub margin_history: Vec<MarginRecord>,
    pub converged: bool,
    pub mode: Mode,
}

impl CcOpfResult {
    /// Margins the final solution was tightened with.
    pub fn applied_margins(&self) -> Option<&MarginSet> {
        let k = self.margin_history.len();
        (k >= 2).then(|| &self.margin_history[k - 2].margins)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CcOpfError {
    #[error("iteration {iteration}: {source} (largest margin: {largest_margin})")]
    Subsolver {
        iteration: usize,
        largest_margin: String,
        #[source]
        source: OpfError,
    },
    #[error("iteration {iteration}: {source}")]
    Sensitivity {
        iteration: usize,
        #[source]
        source: SensitivityError,
    },
    #[error("invalid option: {0}")]
    Options(String),
}

impl CcOpfError {
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            CcOpfError::Subsolver { source: OpfError::Infeasible { .. } | OpfError::InfeasibleTightening { .. }, .. }
        )
    }
}

/// Runs `mode` with the interior-point subsolver.
pub fn solve_ccopf(net: &Network<f64>, mode: Mode, opts: &CcOpfOptions) -> Result<CcOpfResult, CcOpfError> {
    solve_ccopf_with(net, mode, opts, &InteriorPointSubsolver::default())
}

/// Runs `mode` with a caller-supplied subsolver.
///
/// Iteration `k` solves the OPF tightened by the margins of iteration `k − 1`
/// (zero for `k = 1`) and computes new margins at its solution. The first
/// comparison is against the zero initialization, so the earliest possible
/// stop is `k = 2`. Deterministic modes solve once.
pub fn solve_ccopf_with(
    net: &Network<f64>,
    mode: Mode,
    opts: &CcOpfOptions,
    subsolver: &dyn OpfSubsolver,
) -> Result<CcOpfResult, CcOpfError> {
    if !(opts.delta > 0.0) || opts.max_iter == 0 || !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(CcOpfError::Options(format!("{opts:?}")));
    }
    let dispatch = mode.dispatches_pfrs();
    let zero = MarginSet::zero(net.n_buses(), net.n_dgs());

    if !mode.is_chance_constrained() {
        let solution = solve_tightened(net, &zero, dispatch, None, subsolver, 1)?;
        let record = MarginRecord { iteration: 1, margins: zero, delta_omega: 0.0, cost: solution.cost, damped: false };
        return Ok(CcOpfResult { solution, iterations: 1, margin_history: vec![record], converged: true, mode });
    }

    let mut applied = zero;
    let mut incumbent: Option<OpfSolution> = None;
    let mut history: Vec<MarginRecord> = Vec::new();
    let mut best: Option<(f64, OpfSolution, usize)> = None;

    for k in 1..=opts.max_iter {
        let sol = solve_tightened(net, &applied, dispatch, incumbent.as_ref(), subsolver, k)?;
        let sens = sensitivity_matrices(net, &sol.operating_point, &sol.set_points)
            .map_err(|source| CcOpfError::Sensitivity { iteration: k, source })?;
        let mut fresh = margins(&sens, net.covariance(), &net.limits().epsilons, net)
            .map_err(|source| CcOpfError::Sensitivity { iteration: k, source })?;
        let delta_omega = margin_delta(&fresh, &applied).map_err(|source| CcOpfError::Sensitivity { iteration: k, source })?;

        let rising = history.len() >= 2 && {
            let h = &history[history.len() - 2..];
            delta_omega > h[1].delta_omega && h[1].delta_omega > h[0].delta_omega
        };
        log::debug!("{mode} iteration {k}: cost {:.6}, ΔΩ {delta_omega:.3e}", sol.cost);
        history.push(MarginRecord { iteration: k, margins: fresh.clone(), delta_omega, cost: sol.cost, damped: false });

        if k >= 2 && delta_omega <= opts.delta {
            return Ok(CcOpfResult { solution: sol, iterations: k, margin_history: history, converged: true, mode });
        }
        if k >= 2 && best.as_ref().is_none_or(|(d, _, _)| delta_omega < *d) {
            best = Some((delta_omega, sol.clone(), k));
        }
        if rising {
            log::info!("{mode} iteration {k}: ΔΩ rose twice in a row, damping margins");
            fresh = fresh.blend(&applied, opts.damping);
            let last = history.last_mut().expect("just pushed");
            last.margins = fresh.clone();
            last.damped = true;
        }
        applied = fresh;
        incumbent = Some(sol);
    }

    let (solution, iterations) = match best {
        Some((_, s, _)) => (s, opts.max_iter),
        None => (incumbent.expect("at least one iteration"), opts.max_iter),
    };
    log::warn!("{mode} did not converge in {} iterations", opts.max_iter);
    Ok(CcOpfResult { solution, iterations, margin_history: history, converged: false, mode })
}

fn solve_tightened(
    net: &Network<f64>,
    applied: &MarginSet,
    dispatch: bool,
    warm: Option<&OpfSolution>,
    subsolver: &dyn OpfSubsolver,
    iteration: usize,
) -> Result<OpfSolution, CcOpfError> {
    let wrap = |source: OpfError| CcOpfError::Subsolver { iteration, largest_margin: largest_margin(applied, net), source };
    let bounds = TightenedBounds::new(net, applied).map_err(wrap)?;
    subsolver.solve(net, &bounds, dispatch, warm).map_err(wrap)
}

/// Names the largest margin of a set, e.g. `Ω_V at bus 18 = 0.0123`.
pub fn largest_margin(m: &MarginSet, net: &Network<f64>) -> String {
    let mut best = ("Ω_ω".to_string(), m.omega_freq);
    let dg_bus = |k: usize| net.dispatchable_dgs()[k].bus;
    for (k, &x) in m.omega_p.iter().enumerate() {
        if x > best.1 {
            best = (format!("Ω_P at bus {}", dg_bus(k)), x);
        }
    }
    for (k, &x) in m.omega_q.iter().enumerate() {
        if x > best.1 {
            best = (format!("Ω_Q at bus {}", dg_bus(k)), x);
        }
    }
    for (i, &x) in m.omega_v.iter().enumerate() {
        if x > best.1 {
            best = (format!("Ω_V at bus {}", net.buses()[i].id), x);
        }
    }
    format!("{} = {:.6}", best.0, best.1)
}

/// One row of the four-mode comparison.
#[derive(Debug, Clone)]
pub struct ModeSummary {
    pub mode: Mode,
    pub outcome: Result<CcOpfResult, CcOpfError>,
    pub elapsed: Duration,
}

impl ModeSummary {
    /// Largest applied voltage margin of a converged run, 0 for deterministic modes.
    pub fn max_voltage_margin(&self) -> Option<f64> {
        let r = self.outcome.as_ref().ok()?;
        Some(r.applied_margins().map_or(0.0, |m| m.omega_v.iter().copied().fold(0.0, f64::max)))
    }
}

/// Solves all four modes, in parallel, returning rows in [`Mode::ALL`] order.
pub fn compare_modes(net: &Network<f64>, opts: &CcOpfOptions) -> Vec<ModeSummary> {
    Mode::ALL
        .par_iter()
        .map(|&mode| {
            let start = Instant::now();
            let outcome = solve_ccopf(net, mode, opts);
            ModeSummary { mode, outcome, elapsed: start.elapsed() }
        })
        .collect()
}
