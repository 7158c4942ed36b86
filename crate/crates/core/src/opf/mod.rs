//! Deterministic OPF with margin-tightened limits.
//!
//! Decision variables are the forecast-scenario operating values
//! `θ` (non-reference buses), `V`, `P_G`, `Q_G` and, when routers are
//! dispatched, each router's two taps and shift difference `δ`. The droop
//! set points are identified with these values (`P* = P_G(0)`, `V* = V(0)`
//! at generator buses), which satisfies the droop laws identically at
//! `ξ = 0`. The frequency does not couple to the balances at `ξ = 0`, so
//! `ω*` is the point of the tightened frequency interval nearest nominal.

pub mod ipm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::branch::{branch_flow_partials, PfrSetting};
use crate::error::PowerFlowError;
use crate::linalg::Matrix;
use crate::model::{DispatchableDg, Network};
use crate::powerflow::{
    bus_outflows, renewable_injection, solve_power_flow, OperatingPoint, PfState, PowerFlowOptions, SetPoints,
};
use crate::MarginSet;

pub use ipm::{IpmError, IpmOptions, IpmResult, Nlp};

/// Gap below which a constraint is reported as binding.
pub const BINDING_TOL: f64 = 1e-6;

/// Weight of the tie-breaking regularization on taps, shifts and angles.
const REGULARIZATION: f64 = 1e-8;

/// Limits after subtracting uncertainty margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightenedBounds {
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub v_min: Vec<f64>,
    pub v_max: Vec<f64>,
    pub omega_min: f64,
    pub omega_max: f64,
}

impl TightenedBounds {
    pub fn new(net: &Network<f64>, m: &MarginSet) -> Result<Self, OpfError> {
        let dgs = net.dispatchable_dgs();
        let b = Self {
            p_min: dgs.iter().zip(&m.omega_p).map(|(d, o)| d.p_min + o).collect(),
            p_max: dgs.iter().zip(&m.omega_p).map(|(d, o)| d.p_max - o).collect(),
            q_min: dgs.iter().zip(&m.omega_q).map(|(d, o)| d.q_min + o).collect(),
            q_max: dgs.iter().zip(&m.omega_q).map(|(d, o)| d.q_max - o).collect(),
            v_min: net.buses().iter().zip(&m.omega_v).map(|(b, o)| b.v_min + o).collect(),
            v_max: net.buses().iter().zip(&m.omega_v).map(|(b, o)| b.v_max - o).collect(),
            omega_min: net.limits().omega_min + m.omega_freq,
            omega_max: net.limits().omega_max - m.omega_freq,
        };
        let cross = |quantity: String, lower: f64, upper: f64| {
            if lower < upper {
                Ok(())
            } else {
                Err(OpfError::InfeasibleTightening { quantity, lower, upper })
            }
        };
        for (k, d) in dgs.iter().enumerate() {
            cross(format!("P_G of DG {k} (bus {})", d.bus), b.p_min[k], b.p_max[k])?;
            cross(format!("Q_G of DG {k} (bus {})", d.bus), b.q_min[k], b.q_max[k])?;
        }
        for (i, bus) in net.buses().iter().enumerate() {
            cross(format!("V at bus {}", bus.id), b.v_min[i], b.v_max[i])?;
        }
        cross("frequency".into(), b.omega_min, b.omega_max)?;
        Ok(b)
    }

    /// The untightened physical limits.
    pub fn physical(net: &Network<f64>) -> Self {
        Self::new(net, &MarginSet::zero(net.n_buses(), net.n_dgs())).expect("validated network has non-empty limits")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    PMin,
    PMax,
    QMin,
    QMax,
    VMin,
    VMax,
    OmegaMin,
    OmegaMax,
    TapMin,
    TapMax,
    ShiftMin,
    ShiftMax,
}

impl BoundKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::PMin => "p_min",
            Self::PMax => "p_max",
            Self::QMin => "q_min",
            Self::QMax => "q_max",
            Self::VMin => "v_min",
            Self::VMax => "v_max",
            Self::OmegaMin => "omega_min",
            Self::OmegaMax => "omega_max",
            Self::TapMin => "tap_min",
            Self::TapMax => "tap_max",
            Self::ShiftMin => "shift_min",
            Self::ShiftMax => "shift_max",
        }
    }
}

/// A constraint within [`BINDING_TOL`] of its (tightened) bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingConstraint {
    pub kind: BoundKind,
    /// Bus id for voltages and generators, line index for routers, 0 for frequency.
    pub element: usize,
    pub value: f64,
    pub bound: f64,
    pub gap: f64,
}

/// Per-bus distance to the tightened upper voltage limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageGap {
    pub bus: usize,
    pub v: f64,
    pub v_max_cc: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingReport {
    pub binding: Vec<BindingConstraint>,
    pub voltage_gaps: Vec<VoltageGap>,
}

impl BindingReport {
    /// Bus with the smallest upper-voltage gap.
    pub fn critical_bus(&self) -> Option<usize> {
        self.voltage_gaps.iter().min_by(|a, b| a.gap.total_cmp(&b.gap)).map(|g| g.bus)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpfSolution {
    pub set_points: SetPoints<f64>,
    /// Power-flow solution at `ξ = 0` under `set_points`.
    pub operating_point: OperatingPoint<f64>,
    /// Generation cost at the forecast, $/h.
    pub cost: f64,
    pub kkt_residual: f64,
    pub ipm_iterations: usize,
    pub binding_constraints: Vec<BindingConstraint>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OpfError {
    #[error("infeasible tightening: {quantity} has lower bound {lower:.6} ≥ upper bound {upper:.6}")]
    InfeasibleTightening { quantity: String, lower: f64, upper: f64 },
    #[error("OPF appears locally infeasible ({source}){}", limit.as_ref().map_or(String::new(), |l| format!("; most pressed limit: {l}")))]
    Infeasible { source: IpmError, limit: Option<String> },
    #[error("OPF did not converge ({0})")]
    NotConverged(IpmError),
    #[error("power flow at the OPF solution failed: {0}")]
    PowerFlow(PowerFlowError),
}

impl OpfError {
    fn from_ipm(e: IpmError, layout: &Layout, net: &Network<f64>) -> Self {
        let (infeasibility, pressed) = match e {
            IpmError::MaxIterations { infeasibility, pressed, .. } | IpmError::LineSearch { infeasibility, pressed, .. } => {
                (infeasibility, pressed)
            }
            _ => (0.0, None),
        };
        if infeasibility > 1e-5 {
            Self::Infeasible { source: e, limit: pressed.map(|p| layout.bound_name(p.index, p.upper, net)) }
        } else {
            Self::NotConverged(e)
        }
    }
}

/// `Σ c2 P̄² + c1 P̄ + c0` over all generators, $/h.
pub fn objective(p_g_bar: &[f64], dgs: &[DispatchableDg<f64>]) -> f64 {
    dgs.iter().zip(p_g_bar).map(|(d, &p)| d.cost.eval(p)).sum()
}

/// A solver for the tightened deterministic OPF.
pub trait OpfSubsolver: Send + Sync {
    fn solve(
        &self,
        net: &Network<f64>,
        bounds: &TightenedBounds,
        dispatch_pfrs: bool,
        warm_start: Option<&OpfSolution>,
    ) -> Result<OpfSolution, OpfError>;
}

/// The default subsolver: [`ipm::solve`] on the full AC formulation.
#[derive(Debug, Clone, Default)]
pub struct InteriorPointSubsolver {
    pub options: IpmOptions,
}

impl OpfSubsolver for InteriorPointSubsolver {
    fn solve(
        &self,
        net: &Network<f64>,
        bounds: &TightenedBounds,
        dispatch_pfrs: bool,
        warm_start: Option<&OpfSolution>,
    ) -> Result<OpfSolution, OpfError> {
        let layout = Layout::new(net, dispatch_pfrs);
        if let Some(warm) = warm_start {
            let x0 = layout.pack(&warm.operating_point, &warm.set_points.pfr_settings);
            let opts = IpmOptions { mu_init: 1e-4, bound_push: 1e-4, ..self.options.clone() };
            match solve_with(net, bounds, &layout, &x0, &opts) {
                Ok(s) => return Ok(s),
                Err(e) => log::debug!("warm-started OPF failed ({e}); retrying from the cold start"),
            }
        }
        let x0 = layout.pack_initial(net);
        solve_with(net, bounds, &layout, &x0, &self.options)
    }
}

/// Solves the OPF with `margins` using the default subsolver.
pub fn solve_deterministic_opf(
    net: &Network<f64>,
    margins: &MarginSet,
    dispatch_pfrs: bool,
    warm_start: Option<&OpfSolution>,
) -> Result<OpfSolution, OpfError> {
    let bounds = TightenedBounds::new(net, margins)?;
    InteriorPointSubsolver::default().solve(net, &bounds, dispatch_pfrs, warm_start)
}

fn solve_with(
    net: &Network<f64>,
    bounds: &TightenedBounds,
    layout: &Layout,
    x0: &[f64],
    opts: &IpmOptions,
) -> Result<OpfSolution, OpfError> {
    let mut nlp = OpfNlp::new(net, bounds, layout);
    nlp.set_objective_scale(x0);
    let res = ipm::solve(&nlp, x0, opts).map_err(|e| OpfError::from_ipm(e, layout, net))?;
    let (theta, v, p_g, q_g, settings) = layout.unpack(&res.x);
    let omega_star = 1.0_f64.clamp(bounds.omega_min, bounds.omega_max);
    let sp = SetPoints {
        p_star: p_g,
        q_star: q_g,
        omega_star,
        v_star: (0..net.n_dgs()).map(|k| v[net.dg_bus_index(k)]).collect(),
        pfr_settings: settings,
    };
    let warm = PfState { theta, v, omega: omega_star };
    let pf = solve_power_flow(net, &sp, &vec![0.0; net.n_buses()], &PowerFlowOptions::warm(warm))
        .map_err(OpfError::PowerFlow)?;
    let mut sol = OpfSolution {
        cost: objective(&pf.point.p_g, net.dispatchable_dgs()),
        set_points: sp,
        operating_point: pf.point,
        kkt_residual: res.stationarity.max(res.infeasibility),
        ipm_iterations: res.iterations,
        binding_constraints: Vec::new(),
    };
    sol.binding_constraints = diagnose_binding(&sol, bounds, net).binding;
    Ok(sol)
}

/// Active constraints and upper-voltage gaps of a solution.
pub fn diagnose_binding(sol: &OpfSolution, bounds: &TightenedBounds, net: &Network<f64>) -> BindingReport {
    let mut binding = Vec::new();
    let mut check = |kind: BoundKind, element: usize, value: f64, bound: f64, upper: bool| {
        let gap = if upper { bound - value } else { value - bound };
        if gap <= BINDING_TOL {
            binding.push(BindingConstraint { kind, element, value, bound, gap });
        }
    };
    let op = &sol.operating_point;
    for (k, d) in net.dispatchable_dgs().iter().enumerate() {
        check(BoundKind::PMin, d.bus, op.p_g[k], bounds.p_min[k], false);
        check(BoundKind::PMax, d.bus, op.p_g[k], bounds.p_max[k], true);
        check(BoundKind::QMin, d.bus, op.q_g[k], bounds.q_min[k], false);
        check(BoundKind::QMax, d.bus, op.q_g[k], bounds.q_max[k], true);
    }
    for (i, b) in net.buses().iter().enumerate() {
        check(BoundKind::VMin, b.id, op.v[i], bounds.v_min[i], false);
        check(BoundKind::VMax, b.id, op.v[i], bounds.v_max[i], true);
    }
    check(BoundKind::OmegaMin, 0, op.omega, bounds.omega_min, false);
    check(BoundKind::OmegaMax, 0, op.omega, bounds.omega_max, true);
    for (k, &l) in net.pfr_lines().iter().enumerate() {
        let Some(p) = net.lines()[l].pfr else { continue };
        let s = &sol.set_points.pfr_settings[k];
        // frozen routers sit at identity and are not reported
        if *s == PfrSetting::identity() {
            continue;
        }
        for tap in [s.tap_from, s.tap_to] {
            check(BoundKind::TapMin, l, tap, p.tap_min, false);
            check(BoundKind::TapMax, l, tap, p.tap_max, true);
        }
        let (lo, hi) = p.delta_bounds();
        check(BoundKind::ShiftMin, l, s.delta(), lo, false);
        check(BoundKind::ShiftMax, l, s.delta(), hi, true);
    }
    let voltage_gaps = net
        .buses()
        .iter()
        .enumerate()
        .map(|(i, b)| VoltageGap { bus: b.id, v: op.v[i], v_max_cc: bounds.v_max[i], gap: bounds.v_max[i] - op.v[i] })
        .collect();
    BindingReport { binding, voltage_gaps }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Var(usize),
    Fixed(f64),
}

impl Slot {
    fn get(self, x: &[f64]) -> f64 {
        match self {
            Slot::Var(i) => x[i],
            Slot::Fixed(v) => v,
        }
    }

    fn index(self) -> Option<usize> {
        match self {
            Slot::Var(i) => Some(i),
            Slot::Fixed(_) => None,
        }
    }
}

/// Variable layout: `[θ (non-reference), V, P_G, Q_G, (T_f, T_t, δ) per dispatched router]`.
#[derive(Debug, Clone)]
struct Layout {
    n: usize,
    theta: Vec<Slot>,
    v0: usize,
    pg0: usize,
    qg0: usize,
    /// `[T_f, T_t, δ]` per router slot.
    pfr: Vec<[Slot; 3]>,
    /// Bounds of the router variables, indexed like `pfr`.
    pfr_bounds: Vec<[(f64, f64); 3]>,
    n_vars: usize,
}

impl Layout {
    fn new(net: &Network<f64>, dispatch_pfrs: bool) -> Self {
        let n = net.n_buses();
        let mut next = 0;
        let mut theta = Vec::with_capacity(n);
        for i in 0..n {
            if i == net.reference_index() {
                theta.push(Slot::Fixed(0.0));
            } else {
                theta.push(Slot::Var(next));
                next += 1;
            }
        }
        let v0 = next;
        let pg0 = v0 + n;
        let qg0 = pg0 + net.n_dgs();
        next = qg0 + net.n_dgs();
        let mut pfr = Vec::new();
        let mut pfr_bounds = Vec::new();
        for &l in net.pfr_lines() {
            let p = net.lines()[l].pfr.expect("router line");
            let (dlo, dhi) = p.delta_bounds();
            let bounds = [(p.tap_min, p.tap_max), (p.tap_min, p.tap_max), (dlo, dhi)];
            let identity = [1.0, 1.0, 0.0];
            let mut slots = [Slot::Fixed(1.0), Slot::Fixed(1.0), Slot::Fixed(0.0)];
            for j in 0..3 {
                slots[j] = if dispatch_pfrs && bounds[j].0 < bounds[j].1 {
                    next += 1;
                    Slot::Var(next - 1)
                } else if dispatch_pfrs {
                    Slot::Fixed(bounds[j].0)
                } else {
                    Slot::Fixed(identity[j])
                };
            }
            pfr.push(slots);
            pfr_bounds.push(bounds);
        }
        Self { n, theta, v0, pg0, qg0, pfr, pfr_bounds, n_vars: next }
    }

    /// Human-readable name of the lower or upper bound of variable `index`.
    fn bound_name(&self, index: usize, upper: bool, net: &Network<f64>) -> String {
        let side = if upper { "max" } else { "min" };
        let n_dgs = net.n_dgs();
        if let Some(i) = self.theta.iter().position(|s| s.index() == Some(index)) {
            return format!("theta_{side} at bus {}", net.buses()[i].id);
        }
        if (self.v0..self.v0 + self.n).contains(&index) {
            return format!("v_{side} at bus {}", net.buses()[index - self.v0].id);
        }
        if (self.pg0..self.pg0 + n_dgs).contains(&index) {
            return format!("p_{side} of the DG at bus {}", net.dispatchable_dgs()[index - self.pg0].bus);
        }
        if (self.qg0..self.qg0 + n_dgs).contains(&index) {
            return format!("q_{side} of the DG at bus {}", net.dispatchable_dgs()[index - self.qg0].bus);
        }
        for (k, slots) in self.pfr.iter().enumerate() {
            if let Some(j) = slots.iter().position(|s| s.index() == Some(index)) {
                let (f, t) = net.line_ends(net.pfr_lines()[k]);
                let what = ["tap_from", "tap_to", "shift"][j];
                return format!("{what}_{side} of the router on line ({},{})", net.buses()[f].id, net.buses()[t].id);
            }
        }
        format!("bound of variable {index}")
    }

    fn settings(&self, x: &[f64]) -> Vec<PfrSetting<f64>> {
        self.pfr.iter().map(|s| PfrSetting::from_delta(s[0].get(x), s[1].get(x), s[2].get(x))).collect()
    }

    #[allow(clippy::type_complexity)]
    fn unpack(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<PfrSetting<f64>>) {
        let theta = self.theta.iter().map(|s| s.get(x)).collect();
        let v = x[self.v0..self.v0 + self.n].to_vec();
        let pg = x[self.pg0..self.qg0].to_vec();
        let qg = x[self.qg0..self.qg0 + (self.qg0 - self.pg0)].to_vec();
        (theta, v, pg, qg, self.settings(x))
    }

    fn pack(&self, op: &OperatingPoint<f64>, settings: &[PfrSetting<f64>]) -> Vec<f64> {
        let mut x = vec![0.0; self.n_vars];
        for (i, s) in self.theta.iter().enumerate() {
            if let Slot::Var(k) = s {
                x[*k] = op.theta[i];
            }
        }
        x[self.v0..self.v0 + self.n].copy_from_slice(&op.v);
        x[self.pg0..self.qg0].copy_from_slice(&op.p_g);
        x[self.qg0..self.qg0 + op.q_g.len()].copy_from_slice(&op.q_g);
        for (slots, s) in self.pfr.iter().zip(settings) {
            for (slot, val) in slots.iter().zip([s.tap_from, s.tap_to, s.delta()]) {
                if let Slot::Var(k) = slot {
                    x[*k] = val;
                }
            }
        }
        x
    }

    /// Power flow under load-proportional set points at nominal voltage,
    /// falling back to a flat point if that flow does not solve.
    fn pack_initial(&self, net: &Network<f64>) -> Vec<f64> {
        let dgs = net.dispatchable_dgs();
        let (load_p, load_q) = net.total_load();
        let pw: f64 = net.renewable_forecast().iter().sum();
        let qw: f64 = net.renewable_forecast().iter().zip(net.power_factor_tan()).map(|(p, l)| p * l).sum();
        let cap_p: f64 = dgs.iter().map(|d| d.p_max).sum();
        let cap_q: f64 = dgs.iter().map(|d| d.q_max - d.q_min).sum();
        let sp = SetPoints {
            p_star: dgs.iter().map(|d| ((load_p - pw) * d.p_max / cap_p).clamp(d.p_min, d.p_max)).collect(),
            q_star: dgs.iter().map(|d| ((load_q - qw) * (d.q_max - d.q_min) / cap_q).clamp(d.q_min, d.q_max)).collect(),
            omega_star: 1.0,
            v_star: vec![1.0; dgs.len()],
            pfr_settings: vec![PfrSetting::identity(); net.n_pfrs()],
        };
        let op = match solve_power_flow(net, &sp, &vec![0.0; net.n_buses()], &PowerFlowOptions::default()) {
            Ok(s) => s.point,
            Err(e) => {
                log::debug!("initial power flow failed ({e}); starting flat");
                OperatingPoint {
                    v: vec![1.0; net.n_buses()],
                    theta: vec![0.0; net.n_buses()],
                    omega: 1.0,
                    p_g: sp.p_star.clone(),
                    q_g: sp.q_star.clone(),
                }
            }
        };
        self.pack(&op, &sp.pfr_settings)
    }
}

struct OpfNlp<'a> {
    net: &'a Network<f64>,
    bounds: &'a TightenedBounds,
    layout: &'a Layout,
    p_w: Vec<f64>,
    q_w: Vec<f64>,
    obj_scale: f64,
}

/// Local variables of a line: `[V_f, V_t, θ_f, θ_t, T_f, T_t, δ]`.
type LineVars = [f64; 7];

impl<'a> OpfNlp<'a> {
    fn new(net: &'a Network<f64>, bounds: &'a TightenedBounds, layout: &'a Layout) -> Self {
        let (p_w, q_w) = renewable_injection(&vec![0.0; net.n_buses()], net);
        Self { net, bounds, layout, p_w, q_w, obj_scale: 1.0 }
    }

    fn set_objective_scale(&mut self, x0: &[f64]) {
        let (_, _, pg, _, _) = self.layout.unpack(x0);
        let gmax = self
            .net
            .dispatchable_dgs()
            .iter()
            .zip(&pg)
            .map(|(d, &p)| d.cost.derivative(p).abs())
            .fold(0.0, f64::max);
        self.obj_scale = if gmax > 0.0 { (100.0 / gmax).min(1.0) } else { 1.0 };
    }

    fn line_slots(&self, l: usize) -> [Slot; 7] {
        let (f, t) = self.net.line_ends(l);
        let lay = self.layout;
        let (tf, tt, d) = match self.net.pfr_of_line(l) {
            Some(k) => (lay.pfr[k][0], lay.pfr[k][1], lay.pfr[k][2]),
            None => (Slot::Fixed(1.0), Slot::Fixed(1.0), Slot::Fixed(0.0)),
        };
        [Slot::Var(lay.v0 + f), Slot::Var(lay.v0 + t), lay.theta[f], lay.theta[t], tf, tt, d]
    }

    /// Gradients of `[P_ft, Q_ft, P_tf, Q_tf]` with respect to the local variables.
    fn line_gradients(&self, l: usize, u: &LineVars) -> [LineVars; 4] {
        let line = &self.net.lines()[l];
        let s = PfrSetting::from_delta(u[4], u[5], u[6]);
        let d = branch_flow_partials(u[0], u[1], u[2] - u[3], line.g, line.b, &s);
        [d.p_from_to, d.q_from_to, d.p_to_from, d.q_to_from].map(|p| {
            [p.v_from, p.v_to, p.theta_diff, -p.theta_diff, p.tap_from, p.tap_to, p.theta_diff]
        })
    }
}

impl Nlp for OpfNlp<'_> {
    #[allow(clippy::misnamed_getters)] // `n` is the variable count, not the bus count
    fn n(&self) -> usize {
        self.layout.n_vars
    }

    fn m(&self) -> usize {
        2 * self.layout.n
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let lay = self.layout;
        let b = self.bounds;
        let mut lo = vec![f64::NEG_INFINITY; lay.n_vars];
        let mut hi = vec![f64::INFINITY; lay.n_vars];
        lo[lay.v0..lay.v0 + lay.n].copy_from_slice(&b.v_min);
        hi[lay.v0..lay.v0 + lay.n].copy_from_slice(&b.v_max);
        lo[lay.pg0..lay.qg0].copy_from_slice(&b.p_min);
        hi[lay.pg0..lay.qg0].copy_from_slice(&b.p_max);
        lo[lay.qg0..lay.qg0 + b.q_min.len()].copy_from_slice(&b.q_min);
        hi[lay.qg0..lay.qg0 + b.q_max.len()].copy_from_slice(&b.q_max);
        for (slots, bnds) in lay.pfr.iter().zip(&lay.pfr_bounds) {
            for (slot, &(l, h)) in slots.iter().zip(bnds) {
                if let Slot::Var(k) = slot {
                    lo[*k] = l;
                    hi[*k] = h;
                }
            }
        }
        (lo, hi)
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let lay = self.layout;
        let cost = objective(&x[lay.pg0..lay.qg0], self.net.dispatchable_dgs());
        self.obj_scale * cost + REGULARIZATION * self.regularization(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let lay = self.layout;
        let mut g = vec![0.0; lay.n_vars];
        for (k, d) in self.net.dispatchable_dgs().iter().enumerate() {
            g[lay.pg0 + k] = self.obj_scale * d.cost.derivative(x[lay.pg0 + k]);
        }
        for (i, target) in self.regularized(x) {
            g[i] += 2.0 * REGULARIZATION * (x[i] - target);
        }
        g
    }

    fn constraints(&self, x: &[f64]) -> Vec<f64> {
        let lay = self.layout;
        let n = lay.n;
        let (theta, v, pg, qg, settings) = lay.unpack(x);
        let sp = SetPoints { p_star: vec![], q_star: vec![], omega_star: 1.0, v_star: vec![], pfr_settings: settings };
        let (p_out, q_out) = bus_outflows(&theta, &v, &sp, self.net);
        let mut c = vec![0.0; 2 * n];
        for (i, b) in self.net.buses().iter().enumerate() {
            c[i] = p_out[i] - self.p_w[i] + b.load_p;
            c[n + i] = q_out[i] - self.q_w[i] + b.load_q;
        }
        for k in 0..self.net.n_dgs() {
            let i = self.net.dg_bus_index(k);
            c[i] -= pg[k];
            c[n + i] -= qg[k];
        }
        c
    }

    fn jacobian(&self, x: &[f64]) -> Matrix<f64> {
        let lay = self.layout;
        let n = lay.n;
        let mut j = Matrix::zeros(2 * n, lay.n_vars);
        for l in 0..self.net.lines().len() {
            let (f, t) = self.net.line_ends(l);
            let slots = self.line_slots(l);
            let u = slots.map(|s| s.get(x));
            let grads = self.line_gradients(l, &u);
            for (row, grad) in [f, n + f, t, n + t].into_iter().zip(&grads) {
                for (slot, &d) in slots.iter().zip(grad) {
                    if let Some(col) = slot.index() {
                        j[(row, col)] += d;
                    }
                }
            }
        }
        for k in 0..self.net.n_dgs() {
            let i = self.net.dg_bus_index(k);
            j[(i, lay.pg0 + k)] = -1.0;
            j[(n + i, lay.qg0 + k)] = -1.0;
        }
        j
    }

    fn hessian(&self, x: &[f64], sigma: f64, y: &[f64]) -> Matrix<f64> {
        let lay = self.layout;
        let n = lay.n;
        let mut h = Matrix::zeros(lay.n_vars, lay.n_vars);
        for (k, d) in self.net.dispatchable_dgs().iter().enumerate() {
            h[(lay.pg0 + k, lay.pg0 + k)] += sigma * self.obj_scale * 2.0 * d.cost.c2;
        }
        for (i, _) in self.regularized(x) {
            h[(i, i)] += sigma * 2.0 * REGULARIZATION;
        }
        for l in 0..self.net.lines().len() {
            let (f, t) = self.net.line_ends(l);
            let w = [y[f], y[n + f], y[t], y[n + t]];
            let slots = self.line_slots(l);
            let u = slots.map(|s| s.get(x));
            // central differences of the analytic gradients
            let mut local = [[0.0; 7]; 7];
            for b in 0..7 {
                if slots[b].index().is_none() {
                    continue;
                }
                let step = 1e-6 * u[b].abs().max(1.0);
                let (mut up, mut um) = (u, u);
                up[b] += step;
                um[b] -= step;
                let (gp, gm) = (self.line_gradients(l, &up), self.line_gradients(l, &um));
                for a in 0..7 {
                    local[a][b] = (0..4).map(|c| w[c] * (gp[c][a] - gm[c][a])).sum::<f64>() / (2.0 * step);
                }
            }
            for a in 0..7 {
                let Some(ga) = slots[a].index() else { continue };
                for b in 0..7 {
                    let Some(gb) = slots[b].index() else { continue };
                    if ga > gb || a == b {
                        h[(ga, gb)] += 0.5 * (local[a][b] + local[b][a]);
                    }
                }
            }
        }
        h
    }
}

impl OpfNlp<'_> {
    /// Regularized variables and their targets.
    fn regularized(&self, _x: &[f64]) -> Vec<(usize, f64)> {
        let lay = self.layout;
        let mut r: Vec<(usize, f64)> = lay.theta.iter().filter_map(|s| s.index().map(|i| (i, 0.0))).collect();
        for slots in &lay.pfr {
            for (slot, target) in slots.iter().zip([1.0, 1.0, 0.0]) {
                if let Some(i) = slot.index() {
                    r.push((i, target));
                }
            }
        }
        r
    }

    fn regularization(&self, x: &[f64]) -> f64 {
        self.regularized(x).iter().map(|&(i, t)| (x[i] - t).powi(2)).sum()
    }
}
