//! Branch power flows through a lossless router pair and their analytic
//! partial derivatives. Every other module evaluates line physics here.
//!
//! With per-endpoint taps `T_f`, `T_t` and shifts `β_f`, `β_t`, the secondary
//! voltages are `T_f V_f ∠(θ_f + β_f)` and `T_t V_t ∠(θ_t + β_t)`, so only the
//! shift difference `δ = β_f − β_t` enters the flows. With `a = T_f V_f`,
//! `c = T_t V_t`, `φ = θ_f − θ_t + δ`:
//!
//! ```text
//! P_ft =  g (a² − a c cos φ) − b a c sin φ
//! Q_ft = −b (a² − a c cos φ) − g a c sin φ
//! ```
//!
//! and the reverse direction swaps `a`/`c` and negates `φ`. A plain line is
//! the identity setting `(1, 1, 0, 0)`.

use serde::{Deserialize, Serialize};

use crate::model::PfrPlacement;
use crate::scalar::Scalar;

/// Router tap ratios and phase shifts (radians) at both ends of a line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PfrSetting<T> {
    pub tap_from: T,
    pub tap_to: T,
    pub shift_from: T,
    pub shift_to: T,
}

impl<T: Scalar> PfrSetting<T> {
    pub fn identity() -> Self {
        Self { tap_from: T::one(), tap_to: T::one(), shift_from: T::zero(), shift_to: T::zero() }
    }

    /// Canonical setting for a shift difference: `β_f = δ/2`, `β_t = −δ/2`.
    pub fn from_delta(tap_from: T, tap_to: T, delta: T) -> Self {
        let half = delta / T::lit(2.0);
        Self { tap_from, tap_to, shift_from: half, shift_to: -half }
    }

    #[inline]
    pub fn delta(&self) -> T {
        self.shift_from - self.shift_to
    }

    pub fn within(&self, p: &PfrPlacement<T>, tol: T) -> bool {
        let inside = |x: T, lo: T, hi: T| x >= lo - tol && x <= hi + tol;
        inside(self.tap_from, p.tap_min, p.tap_max)
            && inside(self.tap_to, p.tap_min, p.tap_max)
            && inside(self.shift_from, p.shift_min, p.shift_max)
            && inside(self.shift_to, p.shift_min, p.shift_max)
    }
}

impl<T: Scalar> Default for PfrSetting<T> {
    fn default() -> Self {
        Self::identity()
    }
}

/// Directed branch powers (p.u.).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchFlow<T> {
    pub p_from_to: T,
    pub q_from_to: T,
    pub p_to_from: T,
    pub q_to_from: T,
}

impl<T: Scalar> BranchFlow<T> {
    /// Active power lost in the line.
    pub fn loss(&self) -> T {
        self.p_from_to + self.p_to_from
    }
}

/// Gradient of one directed flow component.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowPartials<T> {
    pub v_from: T,
    pub v_to: T,
    pub theta_diff: T,
    pub tap_from: T,
    pub tap_to: T,
    pub shift_from: T,
    pub shift_to: T,
}

impl<T: Scalar> FlowPartials<T> {
    pub fn as_array(&self) -> [T; 7] {
        [self.v_from, self.v_to, self.theta_diff, self.tap_from, self.tap_to, self.shift_from, self.shift_to]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BranchPartials<T> {
    pub p_from_to: FlowPartials<T>,
    pub q_from_to: FlowPartials<T>,
    pub p_to_from: FlowPartials<T>,
    pub q_to_from: FlowPartials<T>,
}

/// Flows on a line with admittance `g + jb`.
pub fn branch_flow<T: Scalar>(v_from: T, v_to: T, theta_diff: T, g: T, b: T, s: &PfrSetting<T>) -> BranchFlow<T> {
    let a = s.tap_from * v_from;
    let c = s.tap_to * v_to;
    let phi = theta_diff + s.delta();
    let (sin, cos) = phi.sin_cos();
    let ac = a * c;
    let dff = a * a - ac * cos;
    let drev = c * c - ac * cos;
    BranchFlow {
        p_from_to: g * dff - b * ac * sin,
        q_from_to: -b * dff - g * ac * sin,
        p_to_from: g * drev + b * ac * sin,
        q_to_from: -b * drev + g * ac * sin,
    }
}

/// Plain-line flows without router terms.
pub fn plain_branch_flow<T: Scalar>(v_from: T, v_to: T, theta_diff: T, g: T, b: T) -> BranchFlow<T> {
    let (sin, cos) = theta_diff.sin_cos();
    let vv = v_from * v_to;
    BranchFlow {
        p_from_to: g * (v_from * v_from - vv * cos) - b * vv * sin,
        q_from_to: -b * (v_from * v_from - vv * cos) - g * vv * sin,
        p_to_from: g * (v_to * v_to - vv * cos) + b * vv * sin,
        q_to_from: -b * (v_to * v_to - vv * cos) + g * vv * sin,
    }
}

/// Analytic partials of all four flow components.
pub fn branch_flow_partials<T: Scalar>(
    v_from: T,
    v_to: T,
    theta_diff: T,
    g: T,
    b: T,
    s: &PfrSetting<T>,
) -> BranchPartials<T> {
    let two = T::lit(2.0);
    let (tf, tt) = (s.tap_from, s.tap_to);
    let (sin, cos) = (theta_diff + s.delta()).sin_cos();
    let k = tf * tt * v_from * v_to;

    // P_ft = g Tf² Vf² − m K,  m = g cos + b sin
    let m = g * cos + b * sin;
    let p_ft_phi = (g * sin - b * cos) * k;
    let p_ft = FlowPartials {
        v_from: two * g * tf * tf * v_from - m * tf * tt * v_to,
        v_to: -m * tf * tt * v_from,
        theta_diff: p_ft_phi,
        tap_from: two * g * tf * v_from * v_from - m * tt * v_from * v_to,
        tap_to: -m * tf * v_from * v_to,
        shift_from: p_ft_phi,
        shift_to: -p_ft_phi,
    };

    // Q_ft = −b Tf² Vf² + n K,  n = b cos − g sin
    let n = b * cos - g * sin;
    let q_ft_phi = -(b * sin + g * cos) * k;
    let q_ft = FlowPartials {
        v_from: -two * b * tf * tf * v_from + n * tf * tt * v_to,
        v_to: n * tf * tt * v_from,
        theta_diff: q_ft_phi,
        tap_from: -two * b * tf * v_from * v_from + n * tt * v_from * v_to,
        tap_to: n * tf * v_from * v_to,
        shift_from: q_ft_phi,
        shift_to: -q_ft_phi,
    };

    // P_tf = g Tt² Vt² − r K,  r = g cos − b sin
    let r = g * cos - b * sin;
    let p_tf_phi = (g * sin + b * cos) * k;
    let p_tf = FlowPartials {
        v_from: -r * tf * tt * v_to,
        v_to: two * g * tt * tt * v_to - r * tf * tt * v_from,
        theta_diff: p_tf_phi,
        tap_from: -r * tt * v_from * v_to,
        tap_to: two * g * tt * v_to * v_to - r * tf * v_from * v_to,
        shift_from: p_tf_phi,
        shift_to: -p_tf_phi,
    };

    // Q_tf = −b Tt² Vt² + w K,  w = b cos + g sin
    let w = b * cos + g * sin;
    let q_tf_phi = (g * cos - b * sin) * k;
    let q_tf = FlowPartials {
        v_from: w * tf * tt * v_to,
        v_to: -two * b * tt * tt * v_to + w * tf * tt * v_from,
        theta_diff: q_tf_phi,
        tap_from: w * tt * v_from * v_to,
        tap_to: -two * b * tt * v_to * v_to + w * tf * v_from * v_to,
        shift_from: q_tf_phi,
        shift_to: -q_tf_phi,
    };

    BranchPartials { p_from_to: p_ft, q_from_to: q_ft, p_to_from: p_tf, q_to_from: q_tf }
}
