use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use ccopf::ccopf::{compare_modes, solve_ccopf, CcOpfError, CcOpfResult, MarginRecord, Mode};
use ccopf::montecarlo::{validate, McError, ValidationReport};
use ccopf::opf::{diagnose_binding, BindingReport, BoundKind, OpfError, TightenedBounds};
use ccopf::powerflow::{solve_power_flow, total_losses, PowerFlowOptions};
use ccopf::sensitivity::{margins, sensitivity_matrices};
use ccopf::{MarginSet, Matrix, Network, OperatingPoint, PowerFlowError, SetPoints};
use serde::Serialize;

use crate::args::{PfArgs, SensitivityArgs, SolveArgs, ValidateArgs};
use crate::config::RunConfig;
use crate::output::{num, out_path, write_csv, write_json, write_text, Meta};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_PF_DIVERGED: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;
pub const EXIT_INFEASIBLE: u8 = 4;
pub const EXIT_VALIDATION_FAILED: u8 = 5;

/// An error carrying its process exit code.
#[derive(Debug)]
pub struct Exit {
    pub code: u8,
    pub message: String,
}

impl Exit {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

fn pf_exit(e: PowerFlowError) -> Exit {
    let code = if matches!(e, PowerFlowError::Dimension { .. }) { EXIT_USAGE } else { EXIT_PF_DIVERGED };
    Exit::new(code, format!("power flow failed: {e}"))
}

fn ccopf_exit(e: &CcOpfError) -> u8 {
    match e {
        _ if e.is_infeasible() => EXIT_INFEASIBLE,
        CcOpfError::Subsolver { source: OpfError::PowerFlow(_), .. } => EXIT_PF_DIVERGED,
        CcOpfError::Options(_) => EXIT_USAGE,
        _ => EXIT_NOT_CONVERGED,
    }
}

fn mc_exit(e: McError) -> Exit {
    let code = match e {
        McError::Forecast(_) | McError::AllFailed => EXIT_PF_DIVERGED,
        _ => EXIT_USAGE,
    };
    Exit::new(code, format!("validation failed to run: {e}"))
}

/// Set points from a `solve` output or a bare set-point object.
fn read_setpoints(path: &Path) -> Result<SetPoints> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let sp = value.get("set_points").cloned().unwrap_or(value);
    serde_json::from_value(sp).with_context(|| format!("{} holds no set points", path.display()))
}

/// Forecast errors given as `{"bus id": MW}`, returned in p.u. per bus position.
fn read_xi(path: &Path, net: &Network) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let map: BTreeMap<String, f64> =
        serde_json::from_str(&text).with_context(|| format!("parsing {} as a bus → MW map", path.display()))?;
    let mut xi = vec![0.0; net.n_buses()];
    for (key, mw) in map {
        let id: usize = key.trim().parse().with_context(|| format!("`{key}` is not a bus id"))?;
        let Some(i) = net.bus_index(id) else { bail!("unknown bus {id} in {}", path.display()) };
        xi[i] = mw / net.base_mva();
    }
    Ok(xi)
}

fn binding_report(net: &Network, r: &CcOpfResult) -> BindingReport {
    let zero = MarginSet::zero(net.n_buses(), net.n_dgs());
    let m = r.applied_margins().unwrap_or(&zero);
    let bounds = TightenedBounds::new(net, m).unwrap_or_else(|_| TightenedBounds::physical(net));
    diagnose_binding(&r.solution, &bounds, net)
}

#[derive(Serialize)]
struct PfDoc<'a> {
    #[serde(flatten)]
    meta: Meta,
    converged: bool,
    iterations: usize,
    residual_norm: f64,
    losses_mw: f64,
    xi_pu: &'a [f64],
    operating_point: &'a OperatingPoint,
}

pub fn pf(cfg: &RunConfig, args: &PfArgs) -> Result<u8> {
    let start = Instant::now();
    let net = cfg.load_network()?;
    let sp = match &args.setpoints {
        Some(p) => read_setpoints(p)?,
        None => SetPoints::nominal(&net),
    };
    let xi = match &args.xi {
        Some(p) => read_xi(p, &net)?,
        None => vec![0.0; net.n_buses()],
    };
    let sol = solve_power_flow(&net, &sp, &xi, &PowerFlowOptions::default()).map_err(pf_exit)?;
    let op = &sol.point;
    let losses = total_losses(&op.theta, &op.v, &sp, &net) * net.base_mva();
    let doc = PfDoc {
        meta: Meta::new(cfg, "pf", start.elapsed()),
        converged: true,
        iterations: sol.iterations,
        residual_norm: sol.residual_norm,
        losses_mw: losses,
        xi_pu: &xi,
        operating_point: op,
    };
    write_json(&out_path(cfg, "pf.json")?, &doc)?;
    println!(
        "power flow converged in {} iterations, residual {:.3e}, ω = {:.6}, losses {:.4} MW",
        sol.iterations, sol.residual_norm, op.omega, losses
    );
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct SolveDoc<'a> {
    #[serde(flatten)]
    meta: Meta,
    mode: Mode,
    converged: bool,
    iterations: usize,
    cost: f64,
    critical_bus: Option<usize>,
    set_points: &'a SetPoints,
    operating_point: &'a OperatingPoint,
    binding: &'a BindingReport,
    /// Margins the final solution was tightened with (chance-constrained modes only).
    #[serde(skip_serializing_if = "Option::is_none")]
    margins: Option<&'a MarginSet>,
    #[serde(skip_serializing_if = "Option::is_none")]
    margin_history: Option<&'a [MarginRecord]>,
}

pub fn solve(cfg: &RunConfig, args: &SolveArgs) -> Result<u8> {
    let start = Instant::now();
    let net = cfg.load_network()?;
    let mode = args.mode;
    let r = solve_ccopf(&net, mode, &cfg.ccopf_options()).map_err(|e| Exit::new(ccopf_exit(&e), format!("{mode}: {e}")))?;
    let binding = binding_report(&net, &r);
    let cc = mode.is_chance_constrained();
    let doc = SolveDoc {
        meta: Meta::new(cfg, "solve", start.elapsed()),
        mode,
        converged: r.converged,
        iterations: r.iterations,
        cost: r.solution.cost,
        critical_bus: binding.critical_bus(),
        set_points: &r.solution.set_points,
        operating_point: &r.solution.operating_point,
        binding: &binding,
        margins: if cc { r.applied_margins() } else { None },
        margin_history: cc.then_some(r.margin_history.as_slice()),
    };
    write_json(&out_path(cfg, &format!("solve-{mode}.json"))?, &doc)?;
    let rows: Vec<Vec<String>> = r
        .margin_history
        .iter()
        .map(|h| {
            let max_margin = h.margins.flat_margins().into_iter().fold(0.0, f64::max);
            vec![h.iteration.to_string(), num(h.cost), num(h.delta_omega), num(max_margin), h.damped.to_string()]
        })
        .collect();
    write_csv(
        &out_path(cfg, &format!("solve-{mode}-iterations.csv"))?,
        &["iteration", "cost", "delta_omega", "max_margin", "damped"],
        &rows,
    )?;
    println!(
        "{mode}: cost {:.4} $/h, {} iteration(s), {}",
        r.solution.cost,
        r.iterations,
        if r.converged { "converged" } else { "NOT converged" }
    );
    if r.converged {
        Ok(EXIT_OK)
    } else {
        eprintln!("error: {mode} did not converge in {} iterations", r.iterations);
        Ok(EXIT_NOT_CONVERGED)
    }
}

#[derive(Serialize)]
struct SensitivityDoc<'a> {
    #[serde(flatten)]
    meta: Meta,
    source: String,
    condition: f64,
    margins: &'a MarginSet,
}

fn matrix_rows(m: &Matrix, row_ids: &[(usize, usize)]) -> Vec<Vec<String>> {
    row_ids
        .iter()
        .map(|&(id, i)| std::iter::once(id.to_string()).chain(m.row(i).iter().map(|&x| num(x))).collect())
        .collect()
}

pub fn sensitivity(cfg: &RunConfig, args: &SensitivityArgs) -> Result<u8> {
    let start = Instant::now();
    let net = cfg.load_network()?;
    let (sp, source) = match &args.solution {
        Some(p) => (read_setpoints(p)?, p.display().to_string()),
        None => {
            let r = solve_ccopf(&net, Mode::Opf, &cfg.ccopf_options())
                .map_err(|e| Exit::new(ccopf_exit(&e), format!("opf: {e}")))?;
            (r.solution.set_points, "solve --mode opf".to_string())
        }
    };
    let op = solve_power_flow(&net, &sp, &vec![0.0; net.n_buses()], &PowerFlowOptions::default()).map_err(pf_exit)?.point;
    let sens = sensitivity_matrices(&net, &op, &sp).map_err(|e| Exit::new(EXIT_PF_DIVERGED, format!("sensitivity: {e}")))?;
    let m = margins(&sens, net.covariance(), &net.limits().epsilons, &net).map_err(|e| Exit::new(EXIT_USAGE, e.to_string()))?;

    let ids: Vec<usize> = net.buses().iter().map(|b| b.id).collect();
    let xi_cols: Vec<String> = ids.iter().map(|id| format!("xi_{id}")).collect();
    let header = |first: &str| -> Vec<String> { std::iter::once(first.to_string()).chain(xi_cols.iter().cloned()).collect() };
    let bus_rows: Vec<(usize, usize)> = ids.iter().copied().zip(0..).collect();
    let dg_rows: Vec<(usize, usize)> = (0..net.n_dgs()).map(|k| (net.dispatchable_dgs()[k].bus, net.dg_bus_index(k))).collect();
    for (name, mat, rows, first) in [
        ("l_v", &sens.l_v, &bus_rows, "bus"),
        ("l_p", &sens.l_p, &dg_rows, "dg_bus"),
        ("l_q", &sens.l_q, &dg_rows, "dg_bus"),
    ] {
        let h = header(first);
        let h: Vec<&str> = h.iter().map(String::as_str).collect();
        write_csv(&out_path(cfg, &format!("sensitivity/{name}.csv"))?, &h, &matrix_rows(mat, rows))?;
    }
    let omega_rows: Vec<Vec<String>> = ids.iter().zip(&sens.l_omega).map(|(id, &x)| vec![id.to_string(), num(x)]).collect();
    write_csv(&out_path(cfg, "sensitivity/l_omega.csv")?, &["xi_bus", "d_omega"], &omega_rows)?;

    let mut rows = Vec::new();
    for (k, d) in net.dispatchable_dgs().iter().enumerate() {
        rows.push(vec!["p".into(), d.bus.to_string(), num(m.dev_p[k]), num(m.omega_p[k])]);
        rows.push(vec!["q".into(), d.bus.to_string(), num(m.dev_q[k]), num(m.omega_q[k])]);
    }
    for (i, id) in ids.iter().enumerate() {
        rows.push(vec!["v".into(), id.to_string(), num(m.dev_v[i]), num(m.omega_v[i])]);
    }
    rows.push(vec!["omega".into(), "0".into(), num(m.dev_freq), num(m.omega_freq)]);
    write_csv(&out_path(cfg, "sensitivity/margins.csv")?, &["quantity", "element", "std", "margin"], &rows)?;

    let doc = SensitivityDoc { meta: Meta::new(cfg, "sensitivity", start.elapsed()), source, condition: sens.condition, margins: &m };
    write_json(&out_path(cfg, "sensitivity/sensitivity.json")?, &doc)?;
    println!("sensitivities written, Jacobian condition estimate {:.3e}", sens.condition);
    Ok(EXIT_OK)
}

fn epsilon_of(kind: BoundKind, net: &Network) -> f64 {
    let e = &net.limits().epsilons;
    match kind {
        BoundKind::PMin | BoundKind::PMax => e.p,
        BoundKind::QMin | BoundKind::QMax => e.q,
        BoundKind::VMin | BoundKind::VMax => e.v,
        _ => e.omega,
    }
}

/// Labels of constraints whose empirical violation frequency exceeds `ε + slack`.
fn exceedances(report: &ValidationReport, net: &Network, slack: f64) -> Vec<String> {
    report
        .constraints
        .iter()
        .filter(|c| c.probability > epsilon_of(c.kind, net) + slack)
        .map(|c| c.label())
        .collect()
}

#[derive(Serialize)]
struct ValidateDoc<'a> {
    #[serde(flatten)]
    meta: Meta,
    solution: String,
    slack: f64,
    passed: bool,
    exceeded: &'a [String],
    report: &'a ValidationReport,
}

pub fn validate_cmd(cfg: &RunConfig, args: &ValidateArgs) -> Result<u8> {
    let start = Instant::now();
    let net = cfg.load_network()?;
    let sp = read_setpoints(&args.solution)?;
    let report = validate(&net, &sp, cfg.scenarios, cfg.seed, cfg.bins).map_err(mc_exit)?;
    let exceeded = exceedances(&report, &net, cfg.slack);
    let passed = exceeded.is_empty();
    let doc = ValidateDoc {
        meta: Meta::new(cfg, "validate", start.elapsed()),
        solution: args.solution.display().to_string(),
        slack: cfg.slack,
        passed,
        exceeded: &exceeded,
        report: &report,
    };
    write_json(&out_path(cfg, "validation.json")?, &doc)?;
    for v in &report.voltage {
        write_text(&out_path(cfg, &format!("histograms/bus_{}.csv", v.bus))?, &v.histogram.to_csv())?;
    }
    println!(
        "{} of {} scenarios solved; Max.ε_emp = {:.4} ({})",
        report.successful, report.scenarios, report.max_violation_prob, report.max_violation_constraint
    );
    if passed {
        Ok(EXIT_OK)
    } else {
        eprintln!("error: violation frequency above ε + {} for {}", cfg.slack, exceeded.join(", "));
        Ok(EXIT_VALIDATION_FAILED)
    }
}

#[derive(Serialize)]
struct CompareRow {
    mode: Mode,
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    time_s: Option<f64>,
    cost: Option<f64>,
    iterations: Option<usize>,
    converged: Option<bool>,
    max_eps_emp: Option<f64>,
    max_eps_constraint: Option<String>,
    max_voltage_margin: Option<f64>,
    critical_bus: Option<usize>,
    critical_bus_v_std: Option<f64>,
}

#[derive(Serialize)]
struct CompareDoc<'a> {
    #[serde(flatten)]
    meta: Meta,
    scenarios: usize,
    rows: &'a [CompareRow],
}

fn opt<T>(x: Option<T>, f: impl Fn(T) -> String) -> String {
    x.map_or_else(String::new, f)
}

pub fn compare(cfg: &RunConfig) -> Result<u8> {
    let start = Instant::now();
    let net = cfg.load_network()?;
    let summaries = compare_modes(&net, &cfg.ccopf_options());
    let mut rows = Vec::new();
    for s in &summaries {
        let time_s = (!cfg.deterministic).then_some(s.elapsed.as_secs_f64());
        let mut row = CompareRow {
            mode: s.mode,
            status: String::new(),
            time_s,
            cost: None,
            iterations: None,
            converged: None,
            max_eps_emp: None,
            max_eps_constraint: None,
            max_voltage_margin: s.max_voltage_margin(),
            critical_bus: None,
            critical_bus_v_std: None,
        };
        match &s.outcome {
            Err(e) => row.status = format!("failed: {e}"),
            Ok(r) => {
                let binding = binding_report(&net, r);
                row.cost = Some(r.solution.cost);
                row.iterations = Some(r.iterations);
                row.converged = Some(r.converged);
                row.critical_bus = binding.critical_bus();
                match validate(&net, &r.solution.set_points, cfg.scenarios, cfg.seed, cfg.bins) {
                    Err(e) => row.status = format!("validation failed: {e}"),
                    Ok(report) => {
                        row.status = if r.converged { "ok".into() } else { "not converged".into() };
                        row.max_eps_emp = Some(report.max_violation_prob);
                        row.max_eps_constraint = Some(report.max_violation_constraint.clone());
                        if let Some(v) = row.critical_bus.and_then(|b| report.voltage_at(b)) {
                            row.critical_bus_v_std = Some(v.summary.std);
                            write_text(
                                &out_path(cfg, &format!("compare-histograms/{}_bus_{}.csv", s.mode, v.bus))?,
                                &v.histogram.to_csv(),
                            )?;
                        }
                    }
                }
            }
        }
        rows.push(row);
    }

    let mut header = vec!["mode", "cost", "iterations", "converged", "max_eps_emp", "max_eps_constraint"];
    header.extend(["max_voltage_margin", "critical_bus", "critical_bus_v_std"]);
    if !cfg.deterministic {
        header.push("time_s");
    }
    header.push("status");
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![
                r.mode.to_string(),
                opt(r.cost, num),
                opt(r.iterations, |x| x.to_string()),
                opt(r.converged, |x| x.to_string()),
                opt(r.max_eps_emp, num),
                r.max_eps_constraint.clone().unwrap_or_default(),
                opt(r.max_voltage_margin, num),
                opt(r.critical_bus, |x| x.to_string()),
                opt(r.critical_bus_v_std, num),
            ];
            if let Some(t) = r.time_s {
                v.push(num(t));
            }
            v.push(r.status.clone());
            v
        })
        .collect();
    write_csv(&out_path(cfg, "compare.csv")?, &header, &csv_rows)?;
    let doc = CompareDoc { meta: Meta::new(cfg, "compare", start.elapsed()), scenarios: cfg.scenarios, rows: &rows };
    write_json(&out_path(cfg, "compare.json")?, &doc)?;
    print!("{}", table(&rows, cfg.scenarios));
    Ok(EXIT_OK)
}

fn table(rows: &[CompareRow], scenarios: usize) -> String {
    let timed = rows.iter().any(|r| r.time_s.is_some());
    let mut out = format!(
        "{:<10} {:>12} {:>5} {:>5} {:>10} {:<14} {:>10} {:>5}",
        "mode", "cost ($/h)", "iter", "conv", "max ε_emp", "worst", "max Ω_V", "bus"
    );
    if timed {
        out.push_str(&format!(" {:>8}", "time (s)"));
    }
    out.push('\n');
    for r in rows {
        let line = format!(
            "{:<10} {:>12} {:>5} {:>5} {:>10} {:<14} {:>10} {:>5}",
            r.mode.as_str(),
            opt(r.cost, |c| format!("{c:.3}")),
            opt(r.iterations, |x| x.to_string()),
            opt(r.converged, |c| if c { "yes".into() } else { "no".into() }),
            opt(r.max_eps_emp, |p| format!("{:.2}%", 100.0 * p)),
            r.max_eps_constraint.clone().unwrap_or_default(),
            opt(r.max_voltage_margin, |m| format!("{m:.5}")),
            opt(r.critical_bus, |b| b.to_string()),
        );
        out.push_str(&line);
        if let Some(t) = r.time_s {
            out.push_str(&format!(" {t:>8.2}"));
        }
        if r.status != "ok" {
            out.push_str(&format!("  [{}]", r.status));
        }
        out.push('\n');
    }
    out.push_str(&format!("Max.ε_emp over {scenarios} Monte Carlo scenarios\n"));
    out
}
