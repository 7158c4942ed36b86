//! Primal-dual interior-point method for
//!
//! ```text
//! min f(x)  s.t.  c(x) = 0,  x_L ≤ x ≤ x_U
//! ```
//!
//! Bounds are handled with a logarithmic barrier and a monotone barrier
//! parameter schedule. Each iteration solves the symmetric indefinite
//! primal-dual system with a Bunch-Kaufman factorization, regularizing the
//! Hessian block until the inertia is `(n, m, 0)`. Steps are globalized with
//! a filter line search on constraint violation and barrier objective, with
//! one second-order correction against the Maratos effect.

use thiserror::Error;

use crate::linalg::{Ldlt, LinalgError, Matrix};

/// Smooth problem callbacks. Infinite bounds mark free directions.
pub trait Nlp {
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn constraints(&self, x: &[f64]) -> Vec<f64>;
    /// Dense `m × n` constraint Jacobian.
    fn jacobian(&self, x: &[f64]) -> Matrix<f64>;
    /// Hessian of `σ f + Σ y_i c_i`; only the lower triangle is read.
    fn hessian(&self, x: &[f64], sigma: f64, y: &[f64]) -> Matrix<f64>;
}

#[derive(Debug, Clone)]
pub struct IpmOptions {
    /// Scaled KKT error at which the solve stops.
    pub tol: f64,
    pub max_iter: usize,
    pub mu_init: f64,
    /// Relative distance initial points are pushed inside their bounds.
    pub bound_push: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 500, mu_init: 0.1, bound_push: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpmResult {
    pub x: Vec<f64>,
    /// Equality multipliers for the Lagrangian `f + yᵀc − z_Lᵀ(x − x_L) − z_Uᵀ(x_U − x)`.
    pub y: Vec<f64>,
    pub z_l: Vec<f64>,
    pub z_u: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Unscaled stationarity residual `‖∇f + Jᵀy − z_L + z_U‖∞`.
    pub stationarity: f64,
    /// `‖c(x)‖∞`.
    pub infeasibility: f64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum IpmError {
    #[error("interior point: no convergence in {iterations} iterations (KKT error {kkt_error:.3e}, infeasibility {infeasibility:.3e})")]
    MaxIterations { iterations: usize, kkt_error: f64, infeasibility: f64, pressed: Option<PressedBound> },
    #[error("interior point: line search failed at iteration {iteration} (infeasibility {infeasibility:.3e})")]
    LineSearch { iteration: usize, infeasibility: f64, pressed: Option<PressedBound> },
    #[error("interior point: inertia correction failed at iteration {iteration}")]
    Inertia { iteration: usize },
    #[error("interior point: non-finite values at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("interior point: empty bound interval for variable {index}")]
    EmptyBounds { index: usize },
}

/// The variable bound with the largest multiplier at a failed iterate, the
/// limit pushing back hardest against restoring feasibility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressedBound {
    pub index: usize,
    pub upper: bool,
    pub multiplier: f64,
}

fn pressed_bound(z_l: &[f64], z_u: &[f64]) -> Option<PressedBound> {
    let mut best: Option<PressedBound> = None;
    for (upper, z) in [(false, z_l), (true, z_u)] {
        for (index, &multiplier) in z.iter().enumerate() {
            if multiplier > 0.0 && best.is_none_or(|b| multiplier > b.multiplier) {
                best = Some(PressedBound { index, upper, multiplier });
            }
        }
    }
    best
}

/// Accepted trial point: `x`, `f(x)`, `c(x)`, step length, whether the filter
/// judged it an f-type step.
type Trial = (Vec<f64>, f64, Vec<f64>, f64, bool);

const KAPPA_EPS: f64 = 10.0;
const KAPPA_MU: f64 = 0.2;
const THETA_MU: f64 = 1.5;
const TAU_MIN: f64 = 0.99;
const KAPPA_SIGMA: f64 = 1e10;
const S_MAX: f64 = 100.0;
const ETA: f64 = 1e-4;
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const GAMMA_ALPHA: f64 = 0.05;
const DELTA: f64 = 1.0;
const S_THETA: f64 = 1.1;
const S_PHI: f64 = 2.3;

struct Barrier<'a> {
    lo: &'a [f64],
    hi: &'a [f64],
    has_lo: Vec<bool>,
    has_hi: Vec<bool>,
}

impl Barrier<'_> {
    fn value(&self, x: &[f64], mu: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..x.len() {
            if self.has_lo[i] {
                s -= (x[i] - self.lo[i]).ln();
            }
            if self.has_hi[i] {
                s -= (self.hi[i] - x[i]).ln();
            }
        }
        mu * s
    }

    fn gradient(&self, x: &[f64], mu: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut g = 0.0;
                if self.has_lo[i] {
                    g -= mu / (x[i] - self.lo[i]);
                }
                if self.has_hi[i] {
                    g += mu / (self.hi[i] - x[i]);
                }
                g
            })
            .collect()
    }

    /// Largest `α ∈ (0, 1]` keeping `x + α d` at least `(1 − τ)` of the way
    /// from each bound.
    fn max_step(&self, x: &[f64], d: &[f64], tau: f64) -> f64 {
        let mut a: f64 = 1.0;
        for i in 0..x.len() {
            if self.has_lo[i] && d[i] < 0.0 {
                a = a.min(-tau * (x[i] - self.lo[i]) / d[i]);
            }
            if self.has_hi[i] && d[i] > 0.0 {
                a = a.min(tau * (self.hi[i] - x[i]) / d[i]);
            }
        }
        a
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

fn one_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Errors {
    dual: f64,
    primal: f64,
    compl: f64,
    s_d: f64,
    s_c: f64,
}

impl Errors {
    fn scaled(&self) -> f64 {
        (self.dual / self.s_d).max(self.primal).max(self.compl / self.s_c)
    }
}

/// Solves `nlp` from `x0`. `x0` is moved strictly inside the bounds first.
pub fn solve(nlp: &dyn Nlp, x0: &[f64], opts: &IpmOptions) -> Result<IpmResult, IpmError> {
    let (n, m) = (nlp.n(), nlp.m());
    let (lo, hi) = nlp.bounds();
    for i in 0..n {
        if !(lo[i] < hi[i]) {
            return Err(IpmError::EmptyBounds { index: i });
        }
    }
    let bar = Barrier {
        has_lo: lo.iter().map(|v| v.is_finite()).collect(),
        has_hi: hi.iter().map(|v| v.is_finite()).collect(),
        lo: &lo,
        hi: &hi,
    };
    let n_bounds = bar.has_lo.iter().chain(&bar.has_hi).filter(|&&b| b).count();

    let mut x = x0.to_vec();
    for i in 0..n {
        let width = hi[i] - lo[i];
        if bar.has_lo[i] {
            let p = (opts.bound_push * lo[i].abs().max(1.0)).min(opts.bound_push * width);
            x[i] = x[i].max(lo[i] + p);
        }
        if bar.has_hi[i] {
            let p = (opts.bound_push * hi[i].abs().max(1.0)).min(opts.bound_push * width);
            x[i] = x[i].min(hi[i] - p);
        }
    }

    let mut mu = opts.mu_init;
    let mut z_l: Vec<f64> = (0..n).map(|i| if bar.has_lo[i] { 1.0 } else { 0.0 }).collect();
    let mut z_u: Vec<f64> = (0..n).map(|i| if bar.has_hi[i] { 1.0 } else { 0.0 }).collect();

    let mut f = nlp.objective(&x);
    let mut g = nlp.gradient(&x);
    let mut c = nlp.constraints(&x);
    let mut jac = nlp.jacobian(&x);
    let mut y = initial_multipliers(&jac, &g, &z_l, &z_u);

    let mut last_delta_w = 0.0;
    let theta_init = one_norm(&c);
    let theta_max = 1e4 * theta_init.max(1.0);
    let theta_min = 1e-4 * theta_init.max(1.0);
    let mut filter: Vec<(f64, f64)> = Vec::new();
    let mut filter_mu = mu;

    let errors = |g: &[f64], jac: &Matrix<f64>, c: &[f64], x: &[f64], y: &[f64], z_l: &[f64], z_u: &[f64], mu: f64| {
        let jty = jac.tr_mul_vec(y);
        let dual = inf_norm(&(0..n).map(|i| g[i] + jty[i] - z_l[i] + z_u[i]).collect::<Vec<_>>());
        let mut compl: f64 = 0.0;
        for i in 0..n {
            if bar.has_lo[i] {
                compl = compl.max(((x[i] - lo[i]) * z_l[i] - mu).abs());
            }
            if bar.has_hi[i] {
                compl = compl.max(((hi[i] - x[i]) * z_u[i] - mu).abs());
            }
        }
        let zsum = one_norm(z_l) + one_norm(z_u);
        let s_d = ((one_norm(y) + zsum) / ((m + n_bounds).max(1) as f64)).max(S_MAX) / S_MAX;
        let s_c = (zsum / (n_bounds.max(1) as f64)).max(S_MAX) / S_MAX;
        Errors { dual, primal: inf_norm(c), compl, s_d, s_c }
    };

    for iter in 0..=opts.max_iter {
        let e0 = errors(&g, &jac, &c, &x, &y, &z_l, &z_u, 0.0);
        let e0s = e0.scaled();
        if !e0s.is_finite() {
            return Err(IpmError::NonFinite { iteration: iter });
        }
        log::trace!("ipm {iter:3} f={f:.10e} inf={:.2e} dual={:.2e} mu={mu:.1e}", e0.primal, e0.dual);
        if e0s <= opts.tol {
            return Ok(IpmResult {
                objective: f,
                iterations: iter,
                stationarity: e0.dual,
                infeasibility: e0.primal,
                x,
                y,
                z_l,
                z_u,
            });
        }
        if iter == opts.max_iter {
            return Err(IpmError::MaxIterations {
                iterations: iter,
                kkt_error: e0s,
                infeasibility: e0.primal,
                pressed: pressed_bound(&z_l, &z_u),
            });
        }
        while mu > opts.tol / 10.0 && errors(&g, &jac, &c, &x, &y, &z_l, &z_u, mu).scaled() <= KAPPA_EPS * mu {
            mu = (opts.tol / 10.0).max((KAPPA_MU * mu).min(mu.powf(THETA_MU)));
        }
        let tau = TAU_MIN.max(1.0 - mu);

        // primal-dual system
        let w = nlp.hessian(&x, 1.0, &y);
        let mut sigma = vec![0.0; n];
        for i in 0..n {
            if bar.has_lo[i] {
                sigma[i] += z_l[i] / (x[i] - lo[i]);
            }
            if bar.has_hi[i] {
                sigma[i] += z_u[i] / (hi[i] - x[i]);
            }
        }
        let grad_bar: Vec<f64> = bar.gradient(&x, mu).iter().zip(&g).map(|(b, gi)| b + gi).collect();
        let jty = jac.tr_mul_vec(&y);
        let mut rhs = vec![0.0; n + m];
        for i in 0..n {
            rhs[i] = -(grad_bar[i] + jty[i]);
        }
        for j in 0..m {
            rhs[n + j] = -c[j];
        }

        let (kkt, delta_w) = factor_with_inertia(&w, &sigma, &jac, mu, last_delta_w, iter)?;
        last_delta_w = delta_w;
        let sol = kkt.solve(&rhs).map_err(|_| IpmError::Inertia { iteration: iter })?;
        let (dx, dy) = sol.split_at(n);

        // filter line search on (θ, φ) = (‖c‖₁, barrier objective)
        let phi = |fx: f64, xx: &[f64]| fx + bar.value(xx, mu);
        let theta0 = one_norm(&c);
        let phi0 = phi(f, &x);
        let d_phi = dot(&grad_bar, dx);
        if filter_mu != mu {
            filter.clear();
            filter_mu = mu;
        }
        let alpha_max = bar.max_step(&x, dx, tau);
        let tiny_step = (0..n).all(|i| dx[i].abs() <= 10.0 * f64::EPSILON * (1.0 + x[i].abs()));
        let alpha_min = if d_phi < 0.0 {
            GAMMA_ALPHA
                * GAMMA_THETA
                    .min(GAMMA_PHI * theta0 / -d_phi)
                    .min(if theta0 <= theta_min { DELTA * theta0.powf(S_THETA) / (-d_phi).powf(S_PHI) } else { f64::INFINITY })
        } else {
            GAMMA_ALPHA * GAMMA_THETA
        };
        let acceptable = |theta: f64, phi_t: f64, filter: &[(f64, f64)]| {
            theta <= theta_max && filter.iter().all(|&(ft, fp)| theta < ft || phi_t < fp)
        };
        // returns Some(is_f_type) when the trial point is accepted
        let judge = |alpha: f64, theta: f64, phi_t: f64, filter: &[(f64, f64)]| -> Option<bool> {
            if !(phi_t.is_finite() && theta.is_finite()) || !acceptable(theta, phi_t, filter) {
                return None;
            }
            let switching = d_phi < 0.0 && alpha * (-d_phi).powf(S_PHI) > DELTA * theta0.powf(S_THETA);
            if theta0 <= theta_min && switching {
                (phi_t <= phi0 + ETA * alpha * d_phi).then_some(true)
            } else {
                (theta <= (1.0 - GAMMA_THETA) * theta0 || phi_t <= phi0 - GAMMA_PHI * theta0).then_some(false)
            }
        };

        let mut alpha = alpha_max;
        let mut accepted: Option<Trial> = None;
        let mut first = true;
        loop {
            let xt: Vec<f64> = x.iter().zip(dx).map(|(a, d)| a + alpha * d).collect();
            let ft = nlp.objective(&xt);
            let ct = nlp.constraints(&xt);
            let theta_t = one_norm(&ct);
            let phi_t = phi(ft, &xt);
            if tiny_step {
                accepted = Some((xt, ft, ct, alpha, true));
                break;
            }
            if let Some(f_type) = judge(alpha, theta_t, phi_t, &filter) {
                accepted = Some((xt, ft, ct, alpha, f_type));
                break;
            }
            if first && m > 0 && theta_t >= theta0 {
                // second-order correction
                let mut rhs_soc = rhs.clone();
                for j in 0..m {
                    rhs_soc[n + j] = -(alpha * c[j] + ct[j]);
                }
                if let Ok(sol) = kkt.solve(&rhs_soc) {
                    let dxs = &sol[..n];
                    let a_soc = bar.max_step(&x, dxs, tau);
                    let xs: Vec<f64> = x.iter().zip(dxs).map(|(a, d)| a + a_soc * d).collect();
                    let fs = nlp.objective(&xs);
                    let cs = nlp.constraints(&xs);
                    if let Some(f_type) = judge(alpha, one_norm(&cs), phi(fs, &xs), &filter) {
                        accepted = Some((xs, fs, cs, alpha, f_type));
                        break;
                    }
                }
            }
            first = false;
            alpha *= 0.5;
            if alpha < alpha_min {
                break;
            }
        }
        let Some((xn, fnew, cnew, alpha, f_type)) = accepted else {
            return Err(IpmError::LineSearch {
                iteration: iter,
                infeasibility: inf_norm(&c),
                pressed: pressed_bound(&z_l, &z_u),
            });
        };
        if !f_type {
            filter.push(((1.0 - GAMMA_THETA) * theta0, phi0 - GAMMA_PHI * theta0));
        }

        // dual steps
        let mut dzl = vec![0.0; n];
        let mut dzu = vec![0.0; n];
        for i in 0..n {
            if bar.has_lo[i] {
                let s = x[i] - lo[i];
                dzl[i] = mu / s - z_l[i] - z_l[i] / s * dx[i];
            }
            if bar.has_hi[i] {
                let s = hi[i] - x[i];
                dzu[i] = mu / s - z_u[i] + z_u[i] / s * dx[i];
            }
        }
        let mut alpha_z: f64 = 1.0;
        for i in 0..n {
            if dzl[i] < 0.0 {
                alpha_z = alpha_z.min(-tau * z_l[i] / dzl[i]);
            }
            if dzu[i] < 0.0 {
                alpha_z = alpha_z.min(-tau * z_u[i] / dzu[i]);
            }
        }

        x = xn;
        f = fnew;
        c = cnew;
        for j in 0..m {
            y[j] += alpha * dy[j];
        }
        for i in 0..n {
            if bar.has_lo[i] {
                let s = x[i] - lo[i];
                z_l[i] = (z_l[i] + alpha_z * dzl[i]).clamp(mu / (KAPPA_SIGMA * s), KAPPA_SIGMA * mu / s);
            }
            if bar.has_hi[i] {
                let s = hi[i] - x[i];
                z_u[i] = (z_u[i] + alpha_z * dzu[i]).clamp(mu / (KAPPA_SIGMA * s), KAPPA_SIGMA * mu / s);
            }
        }
        g = nlp.gradient(&x);
        jac = nlp.jacobian(&x);
    }
    unreachable!("loop returns on the last iteration")
}

/// Least-squares multiplier estimate; zero when it comes out huge.
fn initial_multipliers(jac: &Matrix<f64>, g: &[f64], z_l: &[f64], z_u: &[f64]) -> Vec<f64> {
    let (m, n) = (jac.rows(), jac.cols());
    if m == 0 {
        return Vec::new();
    }
    let mut k = Matrix::zeros(n + m, n + m);
    for i in 0..n {
        k[(i, i)] = 1.0;
    }
    for r in 0..m {
        for j in 0..n {
            k[(n + r, j)] = jac[(r, j)];
            k[(j, n + r)] = jac[(r, j)];
        }
    }
    let mut rhs = vec![0.0; n + m];
    for i in 0..n {
        rhs[i] = -(g[i] - z_l[i] + z_u[i]);
    }
    match Ldlt::factor(&k).and_then(|f| f.solve(&rhs)) {
        Ok(s) if inf_norm(&s[n..]) <= 1e3 => s[n..].to_vec(),
        _ => vec![0.0; m],
    }
}

/// Factors `[[W + Σ + δ_w I, Jᵀ], [J, −δ_c I]]`, raising `δ_w` until the
/// inertia is `(n, m, 0)`.
/// Symmetrically equilibrated LDLᵀ of the KKT matrix: `K = S⁻¹ F S⁻¹` with
/// `F` the factored `S K S`. The scaling keeps barrier terms near `κ_Σ` from
/// swamping the zero-pivot test, and congruence preserves the inertia.
struct ScaledKkt {
    factor: Ldlt<f64>,
    scale: Vec<f64>,
}

impl ScaledKkt {
    fn new(mut k: Matrix<f64>) -> Result<Self, LinalgError> {
        let dim = k.rows();
        let mut scale = vec![1.0; dim];
        for _ in 0..8 {
            let mut row_max = vec![0.0_f64; dim];
            for i in 0..dim {
                for j in 0..=i {
                    let a = k[(i, j)].abs();
                    row_max[i] = row_max[i].max(a);
                    row_max[j] = row_max[j].max(a);
                }
            }
            let d: Vec<f64> = row_max.iter().map(|&r| if r > 0.0 { 1.0 / r.sqrt() } else { 1.0 }).collect();
            if d.iter().all(|&x| (x - 1.0).abs() < 1e-2) {
                break;
            }
            for i in 0..dim {
                for j in 0..=i {
                    k[(i, j)] *= d[i] * d[j];
                }
                scale[i] *= d[i];
            }
        }
        Ok(Self { factor: Ldlt::factor(&k)?, scale })
    }

    fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let sb: Vec<f64> = b.iter().zip(&self.scale).map(|(x, s)| x * s).collect();
        let y = self.factor.solve(&sb)?;
        Ok(y.iter().zip(&self.scale).map(|(x, s)| x * s).collect())
    }
}

fn factor_with_inertia(
    w: &Matrix<f64>,
    sigma: &[f64],
    jac: &Matrix<f64>,
    mu: f64,
    last_delta_w: f64,
    iteration: usize,
) -> Result<(ScaledKkt, f64), IpmError> {
    let (m, n) = (jac.rows(), jac.cols());
    let build = |delta_w: f64, delta_c: f64| {
        let mut k = Matrix::zeros(n + m, n + m);
        for i in 0..n {
            for j in 0..=i {
                k[(i, j)] = w[(i, j)];
            }
            k[(i, i)] += sigma[i] + delta_w;
        }
        for r in 0..m {
            for j in 0..n {
                k[(n + r, j)] = jac[(r, j)];
            }
            k[(n + r, n + r)] = -delta_c;
        }
        k
    };
    let mut delta_c = 0.0;
    let mut delta_w = 0.0;
    for attempt in 0..60 {
        let f = ScaledKkt::new(build(delta_w, delta_c)).map_err(|_| IpmError::Inertia { iteration })?;
        let inertia = f.factor.inertia();
        if inertia.positive == n && inertia.negative == m && inertia.zero == 0 {
            return Ok((f, delta_w));
        }
        if inertia.zero > 0 && delta_c == 0.0 {
            delta_c = 1e-8 * mu.powf(0.25);
        }
        delta_w = if delta_w == 0.0 {
            if last_delta_w == 0.0 {
                1e-4
            } else {
                (last_delta_w / 3.0).max(1e-20)
            }
        } else if last_delta_w == 0.0 && attempt < 2 {
            100.0 * delta_w
        } else {
            8.0 * delta_w
        };
        if delta_w > 1e40 {
            break;
        }
    }
    Err(IpmError::Inertia { iteration })
}
