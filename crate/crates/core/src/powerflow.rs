//! Droop-augmented AC power flow.
//!
//! Unknowns are ordered `[θ_1..θ_n, V_1..V_n, ω]`. The residual stacks the
//! per-bus active mismatches, reactive mismatches and the reference-angle
//! row:
//!
//! ```text
//! r_P(i) = Σ_j P_ij − (P_Gi + P_Wi^f + ξ_i − P_Li)
//! r_Q(i) = Σ_j Q_ij − (Q_Gi + λ_i (P_Wi^f + ξ_i) − Q_Li)
//! r_ref  = θ_ref
//! ```
//!
//! with the droop outputs `P_Gi = P*_i + (ω* − ω)/K_pi` and
//! `Q_Gi = Q*_i + (V*_i − V_i)/K_qi`. With this orientation the residual
//! Jacobian is exactly `J_PF = [[A, B, S_P], [C, D + S_Q, 0], [e_ref, 0, 0]]`
//! and `J_PF Δx = [ΔP_W; ΔQ_W; 0]` to first order.

use serde::{Deserialize, Serialize};

use crate::branch::{branch_flow, branch_flow_partials, PfrSetting};
use crate::error::PowerFlowError;
use crate::linalg::{Lu, Matrix};
use crate::model::Network;
use crate::scalar::{norm_inf, Scalar};

/// Dispatch decision held fixed while renewables fluctuate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetPoints<T> {
    /// Per generator, p.u.
    pub p_star: Vec<T>,
    pub q_star: Vec<T>,
    pub omega_star: T,
    /// Voltage set point per generator bus.
    pub v_star: Vec<T>,
    /// Per router slot (see [`Network::pfr_lines`]).
    pub pfr_settings: Vec<PfrSetting<T>>,
}

impl<T: Scalar> SetPoints<T> {
    /// Zero dispatch, nominal frequency and voltage, identity routers.
    pub fn nominal(net: &Network<T>) -> Self {
        Self {
            p_star: vec![T::zero(); net.n_dgs()],
            q_star: vec![T::zero(); net.n_dgs()],
            omega_star: T::one(),
            v_star: vec![T::one(); net.n_dgs()],
            pfr_settings: vec![PfrSetting::identity(); net.n_pfrs()],
        }
    }

    /// Router setting of line `l` (identity for plain lines).
    pub fn line_setting(&self, net: &Network<T>, l: usize) -> PfrSetting<T> {
        net.pfr_of_line(l).map_or_else(PfrSetting::identity, |k| self.pfr_settings[k])
    }

    fn check(&self, net: &Network<T>) -> Result<(), PowerFlowError> {
        for (len, expected) in [
            (self.p_star.len(), net.n_dgs()),
            (self.q_star.len(), net.n_dgs()),
            (self.v_star.len(), net.n_dgs()),
            (self.pfr_settings.len(), net.n_pfrs()),
        ] {
            if len != expected {
                return Err(PowerFlowError::Dimension { expected, got: len });
            }
        }
        Ok(())
    }
}

/// Power-flow unknowns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfState<T> {
    pub theta: Vec<T>,
    pub v: Vec<T>,
    pub omega: T,
}

impl<T: Scalar> PfState<T> {
    pub fn flat(n: usize, omega: T) -> Self {
        Self { theta: vec![T::zero(); n], v: vec![T::one(); n], omega }
    }

    pub fn to_vec(&self) -> Vec<T> {
        let mut x = Vec::with_capacity(2 * self.v.len() + 1);
        x.extend_from_slice(&self.theta);
        x.extend_from_slice(&self.v);
        x.push(self.omega);
        x
    }

    pub fn from_slice(x: &[T]) -> Self {
        let n = (x.len() - 1) / 2;
        Self { theta: x[..n].to_vec(), v: x[n..2 * n].to_vec(), omega: x[2 * n] }
    }
}

/// A solved power flow for one renewable realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint<T> {
    pub v: Vec<T>,
    pub theta: Vec<T>,
    pub omega: T,
    /// Realized generator outputs.
    pub p_g: Vec<T>,
    pub q_g: Vec<T>,
}

impl<T: Scalar> OperatingPoint<T> {
    pub fn state(&self) -> PfState<T> {
        PfState { theta: self.theta.clone(), v: self.v.clone(), omega: self.omega }
    }
}

/// Generator outputs implied by the droop laws at frequency `omega` and bus
/// voltages `v`.
pub fn droop_outputs<T: Scalar>(omega: T, v: &[T], sp: &SetPoints<T>, net: &Network<T>) -> (Vec<T>, Vec<T>) {
    net.dispatchable_dgs()
        .iter()
        .enumerate()
        .map(|(k, dg)| {
            let i = net.dg_bus_index(k);
            (sp.p_star[k] + (sp.omega_star - omega) / dg.k_p, sp.q_star[k] + (sp.v_star[k] - v[i]) / dg.k_q)
        })
        .unzip()
}

/// Net flows leaving each bus over all incident lines.
pub fn bus_outflows<T: Scalar>(theta: &[T], v: &[T], sp: &SetPoints<T>, net: &Network<T>) -> (Vec<T>, Vec<T>) {
    let n = net.n_buses();
    let mut p = vec![T::zero(); n];
    let mut q = vec![T::zero(); n];
    for (l, line) in net.lines().iter().enumerate() {
        let (f, t) = net.line_ends(l);
        let flow = branch_flow(v[f], v[t], theta[f] - theta[t], line.g, line.b, &sp.line_setting(net, l));
        p[f] += flow.p_from_to;
        q[f] += flow.q_from_to;
        p[t] += flow.p_to_from;
        q[t] += flow.q_to_from;
    }
    (p, q)
}

/// Total active losses over all lines.
pub fn total_losses<T: Scalar>(theta: &[T], v: &[T], sp: &SetPoints<T>, net: &Network<T>) -> T {
    net.lines()
        .iter()
        .enumerate()
        .map(|(l, line)| {
            let (f, t) = net.line_ends(l);
            branch_flow(v[f], v[t], theta[f] - theta[t], line.g, line.b, &sp.line_setting(net, l)).loss()
        })
        .sum()
}

/// Renewable injections `(P_W, Q_W)` per bus for forecast error `xi`.
pub fn renewable_injection<T: Scalar>(xi: &[T], net: &Network<T>) -> (Vec<T>, Vec<T>) {
    let lambda = net.power_factor_tan();
    let pw: Vec<T> = net.renewable_forecast().iter().zip(xi).map(|(&f, &x)| f + x).collect();
    let qw = pw.iter().zip(&lambda).map(|(&p, &l)| l * p).collect();
    (pw, qw)
}

/// Mismatch vector (length `2n + 1`).
pub fn residual<T: Scalar>(state: &PfState<T>, sp: &SetPoints<T>, xi: &[T], net: &Network<T>) -> Result<Vec<T>, PowerFlowError> {
    let n = net.n_buses();
    for len in [state.theta.len(), state.v.len(), xi.len()] {
        if len != n {
            return Err(PowerFlowError::Dimension { expected: n, got: len });
        }
    }
    sp.check(net)?;
    Ok(residual_unchecked(state, sp, xi, net))
}

fn residual_unchecked<T: Scalar>(state: &PfState<T>, sp: &SetPoints<T>, xi: &[T], net: &Network<T>) -> Vec<T> {
    let n = net.n_buses();
    let (p_out, q_out) = bus_outflows(&state.theta, &state.v, sp, net);
    let (pw, qw) = renewable_injection(xi, net);
    let (pg, qg) = droop_outputs(state.omega, &state.v, sp, net);
    let mut r = vec![T::zero(); 2 * n + 1];
    for (i, bus) in net.buses().iter().enumerate() {
        r[i] = p_out[i] - pw[i] + bus.load_p;
        r[n + i] = q_out[i] - qw[i] + bus.load_q;
    }
    for k in 0..net.n_dgs() {
        let i = net.dg_bus_index(k);
        r[i] -= pg[k];
        r[n + i] -= qg[k];
    }
    r[2 * n] = state.theta[net.reference_index()];
    r
}

/// The `(2n+1) x (2n+1)` power-flow Jacobian, partitioned as
/// `[[A, B, S_P], [C, D + S_Q, 0], [e_ref, 0, 0]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianPf<T> {
    pub matrix: Matrix<T>,
    n: usize,
}

impl<T: Scalar> JacobianPf<T> {
    pub fn n_buses(&self) -> usize {
        self.n
    }

    fn block(&self, r0: usize, c0: usize) -> Matrix<T> {
        let n = self.n;
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.matrix[(r0 + i, c0 + j)];
            }
        }
        m
    }

    /// `∂(Σ P_ij)/∂θ`.
    pub fn a(&self) -> Matrix<T> {
        self.block(0, 0)
    }
    /// `∂(Σ P_ij)/∂V`.
    pub fn b(&self) -> Matrix<T> {
        self.block(0, self.n)
    }
    /// `∂(Σ Q_ij)/∂θ`.
    pub fn c(&self) -> Matrix<T> {
        self.block(self.n, 0)
    }
    /// `D + S_Q`.
    pub fn d_plus_s_q(&self) -> Matrix<T> {
        self.block(self.n, self.n)
    }
    /// The frequency column of the active rows: `1/K_p` at generator buses.
    pub fn s_p(&self) -> Vec<T> {
        (0..self.n).map(|i| self.matrix[(i, 2 * self.n)]).collect()
    }
}

/// Analytic Jacobian of [`residual`] with respect to `[θ, V, ω]`.
pub fn jacobian<T: Scalar>(state: &PfState<T>, sp: &SetPoints<T>, net: &Network<T>) -> JacobianPf<T> {
    let n = net.n_buses();
    let mut j = Matrix::zeros(2 * n + 1, 2 * n + 1);
    let (th, v) = (&state.theta, &state.v);
    for (l, line) in net.lines().iter().enumerate() {
        let (f, t) = net.line_ends(l);
        let d = branch_flow_partials(v[f], v[t], th[f] - th[t], line.g, line.b, &sp.line_setting(net, l));
        for (row, g) in [(f, &d.p_from_to), (n + f, &d.q_from_to), (t, &d.p_to_from), (n + t, &d.q_to_from)] {
            j[(row, f)] += g.theta_diff;
            j[(row, t)] -= g.theta_diff;
            j[(row, n + f)] += g.v_from;
            j[(row, n + t)] += g.v_to;
        }
    }
    for (k, dg) in net.dispatchable_dgs().iter().enumerate() {
        let i = net.dg_bus_index(k);
        j[(i, 2 * n)] += T::one() / dg.k_p;
        j[(n + i, n + i)] += T::one() / dg.k_q;
    }
    j[(2 * n, net.reference_index())] = T::one();
    JacobianPf { matrix: j, n }
}

#[derive(Debug, Clone)]
pub struct PowerFlowOptions<T> {
    /// Residual infinity-norm tolerance.
    pub tol: T,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Iterates with a voltage outside `(0, v_plausible_max]` count as divergence.
    pub v_plausible_max: T,
    pub warm_start: Option<PfState<T>>,
}

impl<T: Scalar> Default for PowerFlowOptions<T> {
    fn default() -> Self {
        Self { tol: T::lit(1e-8), max_iter: 30, max_halvings: 10, v_plausible_max: T::lit(2.0), warm_start: None }
    }
}

impl<T: Scalar> PowerFlowOptions<T> {
    pub fn warm(state: PfState<T>) -> Self {
        Self { warm_start: Some(state), ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution<T> {
    pub point: OperatingPoint<T>,
    /// Newton steps taken.
    pub iterations: usize,
    pub residual_norm: T,
}

/// Newton-Raphson with backtracking on the residual norm.
pub fn solve_power_flow<T: Scalar>(
    net: &Network<T>,
    sp: &SetPoints<T>,
    xi: &[T],
    opts: &PowerFlowOptions<T>,
) -> Result<PowerFlowSolution<T>, PowerFlowError> {
    let n = net.n_buses();
    let mut state = opts.warm_start.clone().unwrap_or_else(|| PfState::flat(n, sp.omega_star));
    let mut r = residual(&state, sp, xi, net)?;
    let mut norm = norm_inf(&r);
    let sq = |r: &[T]| r.iter().map(|&x| x * x).sum::<T>();
    let mut iterations = 0;
    while !(norm <= opts.tol) {
        if iterations >= opts.max_iter || !norm.is_finite() {
            return Err(PowerFlowError::Diverged { iterations, residual: norm.to_f64_lossy() });
        }
        let jac = jacobian(&state, sp, net);
        let lu = Lu::factor(jac.matrix).map_err(|_| PowerFlowError::Singular { iteration: iterations })?;
        let step = lu.solve(&r);
        let x0 = state.to_vec();
        let f0 = sq(&r);
        let mut alpha = T::one();
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let x: Vec<T> = x0.iter().zip(&step).map(|(&a, &d)| a - alpha * d).collect();
            let cand = PfState::from_slice(&x);
            let rc = residual_unchecked(&cand, sp, xi, net);
            let decreased = sq(&rc) < f0;
            accepted = Some((cand, rc));
            if decreased {
                break;
            }
            alpha /= T::lit(2.0);
        }
        let (cand, rc) = accepted.expect("at least one trial");
        state = cand;
        r = rc;
        norm = norm_inf(&r);
        iterations += 1;
        if state.v.iter().any(|&v| !(v > T::zero() && v <= opts.v_plausible_max)) {
            return Err(PowerFlowError::Diverged { iterations, residual: norm.to_f64_lossy() });
        }
    }
    let (p_g, q_g) = droop_outputs(state.omega, &state.v, sp, net);
    Ok(PowerFlowSolution {
        point: OperatingPoint { v: state.v, theta: state.theta, omega: state.omega, p_g, q_g },
        iterations,
        residual_norm: norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{three_bus_with_pfr, two_bus, two_bus_unloaded};

    #[test]
    fn droop_at_set_point_returns_set_point() {
        let net = two_bus(3.0, 30.0);
        let sp = SetPoints { p_star: vec![0.2], q_star: vec![0.05], omega_star: 1.0, v_star: vec![1.01], pfr_settings: vec![] };
        let mut v = vec![1.0; 2];
        v[net.dg_bus_index(0)] = 1.01;
        let (p, q) = droop_outputs(1.0, &v, &sp, &net);
        assert_eq!((p[0], q[0]), (0.2, 0.05));
    }

    #[test]
    fn droop_frequency_arithmetic() {
        let net = two_bus(3.0, 30.0);
        let sp = SetPoints { p_star: vec![0.0], q_star: vec![0.0], omega_star: 1.0, v_star: vec![1.0], pfr_settings: vec![] };
        let (p, _) = droop_outputs(0.997, &[1.0, 1.0], &sp, &net);
        assert!((p[0] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn flat_no_injection_network_has_zero_residual() {
        let net = two_bus_unloaded();
        let sp = SetPoints::nominal(&net);
        let r = residual(&PfState::flat(2, 1.0), &sp, &[0.0, 0.0], &net).unwrap();
        assert!(r.iter().all(|&x| x == 0.0));
        let sol = solve_power_flow(&net, &sp, &[0.0, 0.0], &PowerFlowOptions::default()).unwrap();
        assert!(sol.iterations <= 1);
    }

    #[test]
    fn residual_is_linear_in_renewable_error() {
        let net = two_bus(3.0, 30.0);
        let sp = SetPoints::nominal(&net);
        let s = PfState { theta: vec![0.0, -0.01], v: vec![1.0, 0.99], omega: 1.001 };
        let r0 = residual(&s, &sp, &[0.0, 0.0], &net).unwrap();
        let r1 = residual(&s, &sp, &[0.0, 0.1], &net).unwrap();
        assert!((r1[1] - r0[1] + 0.1).abs() < 1e-14);
        assert!((r1[3] - r0[3] + 0.095).abs() < 1e-14);
        assert_eq!(r1[0], r0[0]);
    }

    #[test]
    fn residual_rejects_wrong_dimensions() {
        let net = two_bus(3.0, 30.0);
        let sp = SetPoints::nominal(&net);
        let err = residual(&PfState::flat(2, 1.0), &sp, &[0.0], &net).unwrap_err();
        assert_eq!(err, PowerFlowError::Dimension { expected: 2, got: 1 });
    }

    #[test]
    fn jacobian_blocks_match_closed_form_on_two_buses() {
        let net = two_bus(3.0, 30.0);
        let sp = SetPoints::nominal(&net);
        let s = PfState { theta: vec![0.0, -0.02], v: vec![1.01, 0.98], omega: 1.0 };
        let jac = jacobian(&s, &sp, &net);
        let line = &net.lines()[0];
        let (g, b) = (line.g, line.b);
        let (v1, v2, t12) = (1.01, 0.98, 0.02_f64);
        let (sn, cs) = t12.sin_cos();
        let a = jac.a();
        // A_11 = g V1 V2 sin θ12 − b V1 V2 cos θ12, A_12 = −A_11
        assert!((a[(0, 0)] - (g * v1 * v2 * sn - b * v1 * v2 * cs)).abs() < 1e-12);
        assert!((a[(0, 1)] + a[(0, 0)]).abs() < 1e-12);
        // B_11 = g(2 V1 − V2 cos) − b V2 sin; B_12 = −g V1 cos − b V1 sin
        let bm = jac.b();
        assert!((bm[(0, 0)] - (g * (2.0 * v1 - v2 * cs) - b * v2 * sn)).abs() < 1e-12);
        assert!((bm[(0, 1)] - (-g * v1 * cs - b * v1 * sn)).abs() < 1e-12);
        // C_11 = −b V1 V2 sin − g V1 V2 cos
        let c = jac.c();
        assert!((c[(0, 0)] - (-b * v1 * v2 * sn - g * v1 * v2 * cs)).abs() < 1e-12);
        // D_11 = −b(2V1 − V2 cos) − g V2 sin, plus 1/K_q at the generator bus
        let d = jac.d_plus_s_q();
        let dg_bus = net.dg_bus_index(0);
        let s_q = if dg_bus == 0 { 1.0 / net.dispatchable_dgs()[0].k_q } else { 0.0 };
        assert!((d[(0, 0)] - (-b * (2.0 * v1 - v2 * cs) - g * v2 * sn) - s_q).abs() < 1e-12);
        let s_p = jac.s_p();
        for i in 0..2 {
            let expected = if i == dg_bus { 1.0 / net.dispatchable_dgs()[0].k_p } else { 0.0 };
            assert_eq!(s_p[i], expected);
        }
        assert_eq!(jac.matrix.row(4), &[1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn absurd_voltage_set_point_diverges() {
        let net = three_bus_with_pfr();
        let mut sp = SetPoints::nominal(&net);
        sp.v_star = vec![10.0; net.n_dgs()];
        let err = solve_power_flow(&net, &sp, &[0.0; 3], &PowerFlowOptions::default()).unwrap_err();
        assert!(matches!(err, PowerFlowError::Diverged { .. }), "{err:?}");
    }

    #[test]
    fn solves_in_f32() {
        let net = three_bus_with_pfr().cast::<f32>();
        let sp = SetPoints::nominal(&net);
        let opts = PowerFlowOptions { tol: 1e-5, ..PowerFlowOptions::default() };
        let sol = solve_power_flow(&net, &sp, &[0.0; 3], &opts).unwrap();
        assert!(sol.residual_norm <= 1e-5);
    }
}
