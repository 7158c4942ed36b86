//! First-order response of the droop-controlled network to renewable
//! forecast errors, and the Gaussian uncertainty margins derived from it.
//!
//! Differentiating the power-flow residual at a solution gives
//! `J_PF [∂θ; ∂V; ∂ω] = [I; Λ; 0]`, where `Λ = diag(λ)` maps active to
//! reactive renewable deviations. The voltage block of the solution is `L_V`,
//! its last row `L_ω`. Generator outputs follow from the droop laws:
//! `∂P_G/∂ξ = −S_P L_ω` and `∂Q_G/∂ξ = −S_Q L_V`.

use serde::{Deserialize, Serialize};

use crate::error::SensitivityError;
use crate::linalg::{LinalgError, Lu, Matrix};
use crate::model::{Epsilons, Network};
use crate::powerflow::{jacobian, OperatingPoint, SetPoints};
use crate::scalar::Scalar;

/// Estimated condition numbers above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Radicands down to this value are rounding noise and clipped to zero.
const RADICAND_FLOOR: f64 = -1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySet<T> {
    /// `∂V_i/∂ξ_j`, n×n.
    pub l_v: Matrix<T>,
    /// `∂ω/∂ξ_j`.
    pub l_omega: Vec<T>,
    /// `∂P_Gi/∂ξ_j`, n×n with zero rows at buses without a generator.
    pub l_p: Matrix<T>,
    /// `∂Q_Gi/∂ξ_j`, n×n with zero rows at buses without a generator.
    pub l_q: Matrix<T>,
    /// Condition estimate of the Jacobian the set was built from.
    pub condition: T,
}

impl<T: Scalar> SensitivitySet<T> {
    /// The all-zero set used before any solution is available.
    pub fn zero(n: usize) -> Self {
        Self {
            l_v: Matrix::zeros(n, n),
            l_omega: vec![T::zero(); n],
            l_p: Matrix::zeros(n, n),
            l_q: Matrix::zeros(n, n),
            condition: T::one(),
        }
    }
}

/// Standard deviations and `κ·Dev` margins for every chance-constrained
/// quantity. Generator entries are indexed by generator, voltages by bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginSet<T> {
    pub omega_p: Vec<T>,
    pub omega_q: Vec<T>,
    pub omega_v: Vec<T>,
    pub omega_freq: T,
    pub dev_p: Vec<T>,
    pub dev_q: Vec<T>,
    pub dev_v: Vec<T>,
    pub dev_freq: T,
}

impl<T: Scalar> MarginSet<T> {
    pub fn zero(n_buses: usize, n_dgs: usize) -> Self {
        Self {
            omega_p: vec![T::zero(); n_dgs],
            omega_q: vec![T::zero(); n_dgs],
            omega_v: vec![T::zero(); n_buses],
            omega_freq: T::zero(),
            dev_p: vec![T::zero(); n_dgs],
            dev_q: vec![T::zero(); n_dgs],
            dev_v: vec![T::zero(); n_buses],
            dev_freq: T::zero(),
        }
    }

    /// All margins concatenated as `[Ω_P, Ω_Q, Ω_V, Ω_ω]`.
    pub fn flat_margins(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.omega_p.len() * 2 + self.omega_v.len() + 1);
        v.extend_from_slice(&self.omega_p);
        v.extend_from_slice(&self.omega_q);
        v.extend_from_slice(&self.omega_v);
        v.push(self.omega_freq);
        v
    }

    /// Convex combination `w·self + (1 − w)·other`, margins and deviations alike.
    pub fn blend(&self, other: &Self, w: T) -> Self {
        let mix = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| w * x + (T::one() - w) * y).collect();
        Self {
            omega_p: mix(&self.omega_p, &other.omega_p),
            omega_q: mix(&self.omega_q, &other.omega_q),
            omega_v: mix(&self.omega_v, &other.omega_v),
            omega_freq: w * self.omega_freq + (T::one() - w) * other.omega_freq,
            dev_p: mix(&self.dev_p, &other.dev_p),
            dev_q: mix(&self.dev_q, &other.dev_q),
            dev_v: mix(&self.dev_v, &other.dev_v),
            dev_freq: w * self.dev_freq + (T::one() - w) * other.dev_freq,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.flat_margins().iter().all(|&m| m == T::zero())
    }
}

/// Sensitivities of the solution `op` of the power flow under `sp`.
pub fn sensitivity_matrices<T: Scalar>(
    net: &Network<T>,
    op: &OperatingPoint<T>,
    sp: &SetPoints<T>,
) -> Result<SensitivitySet<T>, SensitivityError> {
    let n = net.n_buses();
    if op.v.len() != n || op.theta.len() != n {
        return Err(SensitivityError::Dimension(format!("operating point has {} buses, network {n}", op.v.len())));
    }
    let jac = jacobian(&op.state(), sp, net);
    let s_p = jac.s_p();
    let lu = Lu::factor(jac.matrix).map_err(SensitivityError::Singular)?;
    let condition = lu.condition_estimate();
    if !(condition <= T::lit(MAX_CONDITION)) {
        return Err(SensitivityError::Singular(LinalgError::IllConditioned { condition: condition.to_f64_lossy() }));
    }

    let lambda = net.power_factor_tan();
    let mut l_v = Matrix::zeros(n, n);
    let mut l_omega = vec![T::zero(); n];
    let mut rhs = vec![T::zero(); 2 * n + 1];
    for j in 0..n {
        rhs.iter_mut().for_each(|x| *x = T::zero());
        rhs[j] = T::one();
        rhs[n + j] = lambda[j];
        let col = lu.solve(&rhs);
        for i in 0..n {
            l_v[(i, j)] = col[n + i];
        }
        l_omega[j] = col[2 * n];
    }

    let mut l_p = Matrix::zeros(n, n);
    let mut l_q = Matrix::zeros(n, n);
    for (k, dg) in net.dispatchable_dgs().iter().enumerate() {
        let i = net.dg_bus_index(k);
        let s_q = T::one() / dg.k_q;
        for j in 0..n {
            l_p[(i, j)] = -s_p[i] * l_omega[j];
            l_q[(i, j)] = -s_q * l_v[(i, j)];
        }
    }
    Ok(SensitivitySet { l_v, l_omega, l_p, l_q, condition })
}

/// Standard normal quantile `Φ⁻¹(p)` for `p ∈ (0.5, 1)` (Wichura's AS241,
/// about 16 significant digits).
#[allow(clippy::excessive_precision)] // published coefficients, kept verbatim
pub fn gaussian_quantile(p: f64) -> Result<f64, SensitivityError> {
    if !(p > 0.5 && p < 1.0) {
        return Err(SensitivityError::ProbabilityRange(p));
    }
    Ok(ppnd16(p))
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

fn ppnd16(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_5,
        1.331_416_678_917_843_8e2,
        1.971_590_950_306_551_3e3,
        1.373_169_376_550_946e4,
        4.592_195_393_154_987e4,
        6.726_577_092_700_87e4,
        3.343_057_558_358_813e4,
        2.509_080_928_730_122_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091e1,
        6.871_870_074_920_579e2,
        5.394_196_021_424_751e3,
        2.121_379_430_158_659_7e4,
        3.930_789_580_009_271e4,
        2.872_908_573_572_194_3e4,
        5.226_495_278_852_854e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_546,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        2.417_807_251_774_506e-1,
        2.272_384_498_926_918_4e-2,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        6.897_673_349_851e-1,
        1.481_039_764_274_800_8e-1,
        1.519_866_656_361_645_7e-2,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_9e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        2.965_605_718_285_048_7e-1,
        2.653_218_952_657_612_4e-2,
        1.242_660_947_388_078_4e-3,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_88e-1,
        1.369_298_809_227_358e-1,
        1.487_536_129_085_061_5e-2,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = (-(p.min(1.0 - p)).ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// `sqrt(l Σ lᵀ)` for one sensitivity row.
fn deviation<T: Scalar>(row: &[T], cov: &Matrix<T>, quantity: &str) -> Result<T, SensitivityError> {
    let s = cov.mul_vec(row);
    let radicand: T = row.iter().zip(&s).map(|(&a, &b)| a * b).sum();
    if radicand >= T::zero() {
        Ok(radicand.sqrt())
    } else if radicand >= T::lit(RADICAND_FLOOR) {
        log::warn!("clipping negative variance {radicand} of {quantity} to zero");
        Ok(T::zero())
    } else {
        Err(SensitivityError::NotPsd { quantity: quantity.to_string(), value: radicand.to_f64_lossy() })
    }
}

/// Deviations and margins `Φ⁻¹(1 − ε)·Dev` for every constrained quantity.
pub fn margins<T: Scalar>(
    sens: &SensitivitySet<T>,
    covariance: &Matrix<T>,
    epsilons: &Epsilons<T>,
    net: &Network<T>,
) -> Result<MarginSet<T>, SensitivityError> {
    let n = net.n_buses();
    if covariance.rows() != n || covariance.cols() != n || sens.l_v.rows() != n {
        return Err(SensitivityError::Dimension(format!("expected {n}x{n} covariance and sensitivities")));
    }
    let kappa = |eps: T| -> Result<T, SensitivityError> {
        Ok(T::lit(gaussian_quantile(1.0 - eps.to_f64_lossy())?))
    };
    let (kp, kq, kv, kw) = (kappa(epsilons.p)?, kappa(epsilons.q)?, kappa(epsilons.v)?, kappa(epsilons.omega)?);

    let dev_v =
        (0..n).map(|i| deviation(sens.l_v.row(i), covariance, &format!("V{i}"))).collect::<Result<Vec<_>, _>>()?;
    let mut dev_p = Vec::with_capacity(net.n_dgs());
    let mut dev_q = Vec::with_capacity(net.n_dgs());
    for k in 0..net.n_dgs() {
        let i = net.dg_bus_index(k);
        dev_p.push(deviation(sens.l_p.row(i), covariance, &format!("P_G{k}"))?);
        dev_q.push(deviation(sens.l_q.row(i), covariance, &format!("Q_G{k}"))?);
    }
    let dev_freq = deviation(&sens.l_omega, covariance, "omega")?;
    Ok(MarginSet {
        omega_p: dev_p.iter().map(|&d| kp * d).collect(),
        omega_q: dev_q.iter().map(|&d| kq * d).collect(),
        omega_v: dev_v.iter().map(|&d| kv * d).collect(),
        omega_freq: kw * dev_freq,
        dev_p,
        dev_q,
        dev_v,
        dev_freq,
    })
}

/// `‖Ω_new − Ω_old‖∞` over all margins.
pub fn margin_delta<T: Scalar>(new: &MarginSet<T>, old: &MarginSet<T>) -> Result<T, SensitivityError> {
    let (a, b) = (new.flat_margins(), old.flat_margins());
    if a.len() != b.len() || new.omega_p.len() != old.omega_p.len() {
        return Err(SensitivityError::Dimension(format!("margin sets of size {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(&b).fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs())))
}
