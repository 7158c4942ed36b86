//! Network data model: buses, lines, routers, generators, uncertainty and
//! limits, assembled into an immutable, validated [`Network`].

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::CaseError;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus<T> {
    pub id: usize,
    /// Active load, p.u. on the system base.
    pub load_p: T,
    pub load_q: T,
    pub v_min: T,
    pub v_max: T,
}

/// Router limits, shared by both line endpoints. Shifts in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PfrPlacement<T> {
    pub tap_min: T,
    pub tap_max: T,
    pub shift_min: T,
    pub shift_max: T,
}

impl<T: Scalar> PfrPlacement<T> {
    /// Range of the shift difference `β_from - β_to`.
    pub fn delta_bounds(&self) -> (T, T) {
        (self.shift_min - self.shift_max, self.shift_max - self.shift_min)
    }

    fn validate(&self, from: usize, to: usize) -> Result<(), CaseError> {
        let ok = self.tap_min > T::zero()
            && self.tap_min <= T::one()
            && T::one() <= self.tap_max
            && self.shift_max > T::zero()
            && (self.shift_min + self.shift_max).abs() <= T::lit(1e-12) * self.shift_max.max(T::one());
        if ok {
            Ok(())
        } else {
            Err(CaseError::Invalid(format!("PFR limits on line ({from},{to}) violate 0 < tap_min <= 1 <= tap_max, shift_min = -shift_max < 0")))
        }
    }
}

/// A line `y = g + jb` between two buses, optionally fitted with a router pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line<T> {
    pub from_bus: usize,
    pub to_bus: usize,
    pub g: T,
    pub b: T,
    pub pfr: Option<PfrPlacement<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCoefficients<T> {
    pub c2: T,
    pub c1: T,
    pub c0: T,
}

impl<T: Scalar> CostCoefficients<T> {
    pub fn eval(&self, p: T) -> T {
        (self.c2 * p + self.c1) * p + self.c0
    }

    pub fn derivative(&self, p: T) -> T {
        T::lit(2.0) * self.c2 * p + self.c1
    }
}

/// Droop-controlled dispatchable generator. Gains in p.u. frequency (or
/// voltage) per p.u. power on the system base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchableDg<T> {
    pub bus: usize,
    pub k_p: T,
    pub k_q: T,
    pub p_min: T,
    pub p_max: T,
    pub q_min: T,
    pub q_max: T,
    pub cost: CostCoefficients<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewableDg<T> {
    pub bus: usize,
    pub p_forecast: T,
    /// `tan φ`: reactive output per unit of active output.
    pub power_factor_tan: T,
}

/// Zero-mean Gaussian forecast error over all buses (p.u.²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyModel<T> {
    pub covariance: Matrix<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Epsilons<T> {
    pub p: T,
    pub q: T,
    pub v: T,
    pub omega: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemLimits<T> {
    pub omega_min: T,
    pub omega_max: T,
    pub epsilons: Epsilons<T>,
}

/// Immutable, validated grid description. Buses are addressed internally by
/// position (`0..n`); ids are kept for I/O.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Network<T> {
    base_mva: T,
    buses: Vec<Bus<T>>,
    lines: Vec<Line<T>>,
    dispatchable_dgs: Vec<DispatchableDg<T>>,
    renewable_dgs: Vec<RenewableDg<T>>,
    uncertainty: UncertaintyModel<T>,
    limits: SystemLimits<T>,
    reference_bus: usize,
    #[serde(skip)]
    topo: Topology,
}

/// Index tables derived at assembly.
#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct Topology {
    pub line_ends: Vec<(usize, usize)>,
    pub dg_at_bus: Vec<Option<usize>>,
    pub dg_bus: Vec<usize>,
    /// Indices of lines carrying a router, in line order.
    pub pfr_lines: Vec<usize>,
    /// For each line, its position in `pfr_lines`.
    pub pfr_of_line: Vec<Option<usize>>,
    pub reference: usize,
    pub index_of: HashMap<usize, usize>,
}

/// Grid tables as read from a case file.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTables {
    pub base_mva: f64,
    pub buses: Vec<Bus<f64>>,
    pub lines: Vec<Line<f64>>,
}

/// Device data as read from a sidecar file, already converted to p.u.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    pub reference_bus: usize,
    pub dispatchable_dgs: Vec<DispatchableDg<f64>>,
    pub renewable_dgs: Vec<RenewableDg<f64>>,
    pub pfrs: Vec<(usize, usize, PfrPlacement<f64>)>,
    pub covariance: CovarianceSpec,
    pub limits: SystemLimits<f64>,
    /// Optional uniform bus voltage limits overriding the case file.
    pub voltage_limits: Option<(f64, f64)>,
}

/// Covariance as given in the sidecar, p.u.² on the system base.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceSpec {
    /// Standard deviation per bus id.
    DiagSigma(Vec<(usize, f64)>),
    /// Dense matrix over the renewable generators, in sidecar order.
    Dense(Vec<Vec<f64>>),
}

/// Builds and validates a [`Network`] from parsed tables.
pub fn assemble_network(grid: &GridTables, devices: &DeviceSpec) -> Result<Network<f64>, CaseError> {
    let mut lines = grid.lines.clone();
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let mut seen_pfr = HashSet::new();
    for &(f, t, placement) in &devices.pfrs {
        if !seen_pfr.insert(key(f, t)) {
            return Err(CaseError::Invalid(format!("duplicate PFR on line ({f},{t})")));
        }
        let line = lines
            .iter_mut()
            .find(|l| key(l.from_bus, l.to_bus) == key(f, t))
            .ok_or(CaseError::UnknownLine(f, t))?;
        if line.pfr.is_some() {
            return Err(CaseError::Invalid(format!("duplicate PFR on line ({f},{t})")));
        }
        // Router endpoints follow the line orientation; limits are symmetric.
        line.pfr = Some(placement);
    }

    let n = grid.buses.len();
    let mut buses = grid.buses.clone();
    if let Some((lo, hi)) = devices.voltage_limits {
        for b in &mut buses {
            b.v_min = lo;
            b.v_max = hi;
        }
    }

    let covariance = expand_covariance(&devices.covariance, &buses, &devices.renewable_dgs)?;

    Network::new(
        grid.base_mva,
        buses,
        lines,
        devices.dispatchable_dgs.clone(),
        devices.renewable_dgs.clone(),
        UncertaintyModel { covariance },
        devices.limits,
        devices.reference_bus,
    )
    .inspect(|net| {
        debug_assert_eq!(net.n_buses(), n);
    })
}

fn expand_covariance(
    spec: &CovarianceSpec,
    buses: &[Bus<f64>],
    renewables: &[RenewableDg<f64>],
) -> Result<Matrix<f64>, CaseError> {
    let n = buses.len();
    let pos = |id: usize| buses.iter().position(|b| b.id == id);
    let mut cov = Matrix::zeros(n, n);
    match spec {
        CovarianceSpec::DiagSigma(entries) => {
            for &(id, sigma) in entries {
                let i = pos(id).ok_or(CaseError::UnknownBus(id))?;
                if !renewables.iter().any(|r| r.bus == id) {
                    return Err(CaseError::Invalid(format!("covariance entry for bus {id} without a renewable DG")));
                }
                if !(sigma >= 0.0) || !sigma.is_finite() {
                    return Err(CaseError::Invalid(format!("negative or invalid standard deviation at bus {id}")));
                }
                cov[(i, i)] = sigma * sigma;
            }
        }
        CovarianceSpec::Dense(rows) => {
            let k = renewables.len();
            if rows.len() != k || rows.iter().any(|r| r.len() != k) {
                return Err(CaseError::Invalid(format!("dense covariance must be {k}x{k} (one row per renewable DG)")));
            }
            for a in 0..k {
                if rows[a][a] < 0.0 {
                    return Err(CaseError::Invalid(format!("negative variance for renewable DG at bus {}", renewables[a].bus)));
                }
                for c in 0..k {
                    let diff = (rows[a][c] - rows[c][a]).abs();
                    if diff > 1e-12 * (rows[a][c].abs() + rows[c][a].abs()).max(1e-300) {
                        return Err(CaseError::Invalid("covariance matrix is not symmetric".into()));
                    }
                    let i = pos(renewables[a].bus).ok_or(CaseError::UnknownBus(renewables[a].bus))?;
                    let j = pos(renewables[c].bus).ok_or(CaseError::UnknownBus(renewables[c].bus))?;
                    cov[(i, j)] += rows[a][c];
                }
            }
        }
    }
    Ok(cov)
}

impl<T: Scalar> Network<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        base_mva: T,
        buses: Vec<Bus<T>>,
        lines: Vec<Line<T>>,
        dispatchable_dgs: Vec<DispatchableDg<T>>,
        renewable_dgs: Vec<RenewableDg<T>>,
        uncertainty: UncertaintyModel<T>,
        limits: SystemLimits<T>,
        reference_bus: usize,
    ) -> Result<Self, CaseError> {
        let topo = validate(&buses, &lines, &dispatchable_dgs, &renewable_dgs, &uncertainty, &limits, reference_bus)?;
        Ok(Self { base_mva, buses, lines, dispatchable_dgs, renewable_dgs, uncertainty, limits, reference_bus, topo })
    }

    pub fn base_mva(&self) -> T {
        self.base_mva
    }
    pub fn buses(&self) -> &[Bus<T>] {
        &self.buses
    }
    pub fn lines(&self) -> &[Line<T>] {
        &self.lines
    }
    pub fn dispatchable_dgs(&self) -> &[DispatchableDg<T>] {
        &self.dispatchable_dgs
    }
    pub fn renewable_dgs(&self) -> &[RenewableDg<T>] {
        &self.renewable_dgs
    }
    pub fn uncertainty(&self) -> &UncertaintyModel<T> {
        &self.uncertainty
    }
    pub fn covariance(&self) -> &Matrix<T> {
        &self.uncertainty.covariance
    }
    pub fn limits(&self) -> &SystemLimits<T> {
        &self.limits
    }
    pub fn reference_bus(&self) -> usize {
        self.reference_bus
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }
    pub fn n_dgs(&self) -> usize {
        self.dispatchable_dgs.len()
    }
    pub fn n_pfrs(&self) -> usize {
        self.topo.pfr_lines.len()
    }

    /// Position of bus `id`.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.topo.index_of.get(&id).copied()
    }
    /// Position of the angle-reference bus.
    pub fn reference_index(&self) -> usize {
        self.topo.reference
    }
    /// Endpoint positions of line `l`.
    pub fn line_ends(&self, l: usize) -> (usize, usize) {
        self.topo.line_ends[l]
    }
    /// Generator at bus position `i`, if any.
    pub fn dg_at(&self, i: usize) -> Option<usize> {
        self.topo.dg_at_bus[i]
    }
    /// Bus position of generator `k`.
    pub fn dg_bus_index(&self, k: usize) -> usize {
        self.topo.dg_bus[k]
    }
    /// Line indices fitted with routers, in line order.
    pub fn pfr_lines(&self) -> &[usize] {
        &self.topo.pfr_lines
    }
    /// Router slot of line `l`.
    pub fn pfr_of_line(&self, l: usize) -> Option<usize> {
        self.topo.pfr_of_line[l]
    }

    /// Forecast renewable active output per bus position.
    pub fn renewable_forecast(&self) -> Vec<T> {
        let mut p = vec![T::zero(); self.n_buses()];
        for r in &self.renewable_dgs {
            p[self.topo.index_of[&r.bus]] += r.p_forecast;
        }
        p
    }

    /// `λ = tan φ` per bus position, zero without a renewable generator.
    pub fn power_factor_tan(&self) -> Vec<T> {
        let mut l = vec![T::zero(); self.n_buses()];
        for r in &self.renewable_dgs {
            l[self.topo.index_of[&r.bus]] = r.power_factor_tan;
        }
        l
    }

    pub fn total_load(&self) -> (T, T) {
        self.buses.iter().fold((T::zero(), T::zero()), |(p, q), b| (p + b.load_p, q + b.load_q))
    }

    /// Copy with a different covariance (validated like the original).
    pub fn with_covariance(&self, covariance: Matrix<T>) -> Result<Self, CaseError> {
        let mut uncertainty = self.uncertainty.clone();
        uncertainty.covariance = covariance;
        Self::new(
            self.base_mva,
            self.buses.clone(),
            self.lines.clone(),
            self.dispatchable_dgs.clone(),
            self.renewable_dgs.clone(),
            uncertainty,
            self.limits,
            self.reference_bus,
        )
    }

    /// Copy with every generator's droop gains replaced (p.u. values).
    pub fn with_droop_gains(&self, k_p: T, k_q: T) -> Result<Self, CaseError> {
        let mut dgs = self.dispatchable_dgs.clone();
        for dg in &mut dgs {
            dg.k_p = k_p;
            dg.k_q = k_q;
        }
        Self::new(
            self.base_mva,
            self.buses.clone(),
            self.lines.clone(),
            dgs,
            self.renewable_dgs.clone(),
            self.uncertainty.clone(),
            self.limits,
            self.reference_bus,
        )
    }

    /// Copy with new violation probabilities.
    pub fn with_epsilons(&self, epsilons: Epsilons<T>) -> Result<Self, CaseError> {
        let mut limits = self.limits;
        limits.epsilons = epsilons;
        Self::new(
            self.base_mva,
            self.buses.clone(),
            self.lines.clone(),
            self.dispatchable_dgs.clone(),
            self.renewable_dgs.clone(),
            self.uncertainty.clone(),
            limits,
            self.reference_bus,
        )
    }

    /// Converts every numeric field to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let c = |x: T| U::lit(x.to_f64_lossy());
        let placement = |p: &PfrPlacement<T>| PfrPlacement {
            tap_min: c(p.tap_min),
            tap_max: c(p.tap_max),
            shift_min: c(p.shift_min),
            shift_max: c(p.shift_max),
        };
        Network {
            base_mva: c(self.base_mva),
            buses: self
                .buses
                .iter()
                .map(|b| Bus { id: b.id, load_p: c(b.load_p), load_q: c(b.load_q), v_min: c(b.v_min), v_max: c(b.v_max) })
                .collect(),
            lines: self
                .lines
                .iter()
                .map(|l| Line { from_bus: l.from_bus, to_bus: l.to_bus, g: c(l.g), b: c(l.b), pfr: l.pfr.as_ref().map(placement) })
                .collect(),
            dispatchable_dgs: self
                .dispatchable_dgs
                .iter()
                .map(|d| DispatchableDg {
                    bus: d.bus,
                    k_p: c(d.k_p),
                    k_q: c(d.k_q),
                    p_min: c(d.p_min),
                    p_max: c(d.p_max),
                    q_min: c(d.q_min),
                    q_max: c(d.q_max),
                    cost: CostCoefficients { c2: c(d.cost.c2), c1: c(d.cost.c1), c0: c(d.cost.c0) },
                })
                .collect(),
            renewable_dgs: self
                .renewable_dgs
                .iter()
                .map(|r| RenewableDg { bus: r.bus, p_forecast: c(r.p_forecast), power_factor_tan: c(r.power_factor_tan) })
                .collect(),
            uncertainty: UncertaintyModel { covariance: self.uncertainty.covariance.map(c) },
            limits: SystemLimits {
                omega_min: c(self.limits.omega_min),
                omega_max: c(self.limits.omega_max),
                epsilons: Epsilons {
                    p: c(self.limits.epsilons.p),
                    q: c(self.limits.epsilons.q),
                    v: c(self.limits.epsilons.v),
                    omega: c(self.limits.epsilons.omega),
                },
            },
            reference_bus: self.reference_bus,
            topo: self.topo.clone(),
        }
    }
}

fn validate<T: Scalar>(
    buses: &[Bus<T>],
    lines: &[Line<T>],
    dgs: &[DispatchableDg<T>],
    renewables: &[RenewableDg<T>],
    uncertainty: &UncertaintyModel<T>,
    limits: &SystemLimits<T>,
    reference_bus: usize,
) -> Result<Topology, CaseError> {
    let n = buses.len();
    if n == 0 {
        return Err(CaseError::Invalid("network has no buses".into()));
    }
    let mut index_of = HashMap::with_capacity(n);
    for (i, b) in buses.iter().enumerate() {
        if index_of.insert(b.id, i).is_some() {
            return Err(CaseError::Invalid(format!("duplicate bus id {}", b.id)));
        }
        if !(b.v_min < b.v_max) {
            return Err(CaseError::Invalid(format!("bus {}: v_min must be below v_max", b.id)));
        }
        if !b.load_p.is_finite() || !b.load_q.is_finite() {
            return Err(CaseError::Invalid(format!("bus {}: non-finite load", b.id)));
        }
    }
    let idx = |id: usize| index_of.get(&id).copied().ok_or(CaseError::UnknownBus(id));

    let mut line_ends = Vec::with_capacity(lines.len());
    let mut pairs = HashSet::new();
    let mut pfr_lines = Vec::new();
    let mut pfr_of_line = Vec::with_capacity(lines.len());
    for (l, line) in lines.iter().enumerate() {
        let (f, t) = (idx(line.from_bus)?, idx(line.to_bus)?);
        if f == t {
            return Err(CaseError::Invalid(format!("line {l} connects bus {} to itself", line.from_bus)));
        }
        if !pairs.insert((f.min(t), f.max(t))) {
            return Err(CaseError::Invalid(format!("parallel line ({},{})", line.from_bus, line.to_bus)));
        }
        if line.g < T::zero() {
            return Err(CaseError::Invalid(format!("line ({},{}) has negative conductance", line.from_bus, line.to_bus)));
        }
        if let Some(p) = &line.pfr {
            p.validate(line.from_bus, line.to_bus)?;
            pfr_of_line.push(Some(pfr_lines.len()));
            pfr_lines.push(l);
        } else {
            pfr_of_line.push(None);
        }
        line_ends.push((f, t));
    }

    let reference = idx(reference_bus)?;

    // connectivity by breadth-first search from the reference bus
    let mut adj = vec![Vec::new(); n];
    for &(f, t) in &line_ends {
        adj[f].push(t);
        adj[t].push(f);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([reference]);
    seen[reference] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(CaseError::Disconnected(buses[i].id));
    }

    if dgs.is_empty() {
        return Err(CaseError::Invalid("at least one dispatchable DG is required".into()));
    }
    let mut dg_at_bus = vec![None; n];
    let mut dg_bus = Vec::with_capacity(dgs.len());
    for (k, dg) in dgs.iter().enumerate() {
        let i = idx(dg.bus)?;
        if dg_at_bus[i].is_some() {
            return Err(CaseError::Invalid(format!("more than one dispatchable DG at bus {}", dg.bus)));
        }
        if !(dg.k_p > T::zero() && dg.k_q > T::zero()) {
            return Err(CaseError::Invalid(format!("DG at bus {}: droop gains must be positive", dg.bus)));
        }
        if !(dg.p_min < dg.p_max && dg.q_min < dg.q_max) {
            return Err(CaseError::Invalid(format!("DG at bus {}: empty generation bounds", dg.bus)));
        }
        if dg.cost.c2 < T::zero() {
            return Err(CaseError::Invalid(format!("DG at bus {}: c2 must be non-negative", dg.bus)));
        }
        dg_at_bus[i] = Some(k);
        dg_bus.push(i);
    }
    let mut renewable_buses = HashSet::new();
    for r in renewables {
        idx(r.bus)?;
        if !renewable_buses.insert(r.bus) {
            return Err(CaseError::Invalid(format!("more than one renewable DG at bus {}", r.bus)));
        }
        if !(r.p_forecast >= T::zero()) {
            return Err(CaseError::Invalid(format!("renewable DG at bus {}: negative forecast", r.bus)));
        }
    }

    let cov = &uncertainty.covariance;
    if cov.rows() != n || cov.cols() != n {
        return Err(CaseError::Invalid(format!("covariance must be {n}x{n}")));
    }
    cov.is_symmetric(T::lit(1e-12) * cov.max_abs().max(T::one()))
        .map_err(|e| CaseError::Invalid(format!("covariance: {e}")))?;
    for (i, b) in buses.iter().enumerate() {
        if cov[(i, i)] < T::zero() {
            return Err(CaseError::Invalid(format!("negative variance at bus {}", b.id)));
        }
        if !renewable_buses.contains(&b.id) && (0..n).any(|j| cov[(i, j)] != T::zero()) {
            return Err(CaseError::Invalid(format!("covariance row for bus {} without a renewable DG must be zero", b.id)));
        }
    }

    if !(limits.omega_min < T::one() && T::one() < limits.omega_max) {
        return Err(CaseError::Invalid("frequency limits must satisfy omega_min < 1 < omega_max".into()));
    }
    let e = &limits.epsilons;
    for (name, v) in [("p", e.p), ("q", e.q), ("v", e.v), ("omega", e.omega)] {
        if !(v > T::zero() && v < T::lit(0.5)) {
            return Err(CaseError::EpsilonRange(name.into(), v.to_f64_lossy()));
        }
    }

    Ok(Topology { line_ends, dg_at_bus, dg_bus, pfr_lines, pfr_of_line, reference, index_of })
}
