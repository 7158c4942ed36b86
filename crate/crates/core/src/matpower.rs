//! Reader and writer for the numeric subset of the Matpower case format:
//! `mpc.baseMVA`, `mpc.bus` and `mpc.branch`. Other sections are skipped.
//!
//! Branch impedances are expected in p.u. on `baseMVA`; loads in MW/MVAr.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::CaseError;
use crate::model::{Bus, GridTables, Line, Network};

const BUS_COLS: usize = 13;
const BRANCH_COLS: usize = 11;

struct Section {
    line: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

/// Parses a Matpower case function into grid tables.
pub fn parse_matpower_case(text: &str) -> Result<GridTables, CaseError> {
    let (scalars, matrices) = scan(text)?;
    let base_mva = *scalars.get("baseMVA").ok_or_else(|| CaseError::MissingSection("mpc.baseMVA".into()))?;
    if !(base_mva > 0.0) {
        return Err(CaseError::Invalid("baseMVA must be positive".into()));
    }
    let bus = matrices.get("bus").ok_or_else(|| CaseError::MissingSection("mpc.bus".into()))?;
    let branch = matrices.get("branch").ok_or_else(|| CaseError::MissingSection("mpc.branch".into()))?;

    let mut buses = Vec::with_capacity(bus.rows.len());
    for (line, row) in &bus.rows {
        if row.len() < BUS_COLS {
            return Err(CaseError::Syntax { line: *line, message: format!("bus row has {} columns, expected {BUS_COLS}", row.len()) });
        }
        let id = as_id(row[0], *line)?;
        if row[4] != 0.0 || row[5] != 0.0 {
            return Err(CaseError::Shunt(id));
        }
        buses.push(Bus { id, load_p: row[2] / base_mva, load_q: row[3] / base_mva, v_min: row[12], v_max: row[11] });
    }
    if buses.is_empty() {
        return Err(CaseError::Syntax { line: bus.line, message: "empty bus matrix".into() });
    }

    let mut lines = Vec::with_capacity(branch.rows.len());
    for (line, row) in &branch.rows {
        if row.len() < BRANCH_COLS {
            return Err(CaseError::Syntax { line: *line, message: format!("branch row has {} columns, expected {BRANCH_COLS}", row.len()) });
        }
        let (f, t) = (as_id(row[0], *line)?, as_id(row[1], *line)?);
        if row[10] == 0.0 {
            continue;
        }
        let (r, x) = (row[2], row[3]);
        if row[4] != 0.0 {
            return Err(CaseError::Syntax { line: *line, message: format!("branch ({f},{t}) has line charging; shunts are not modeled") });
        }
        if (row[8] != 0.0 && row[8] != 1.0) || row[9] != 0.0 {
            return Err(CaseError::Syntax { line: *line, message: format!("branch ({f},{t}) is a transformer; only plain lines are supported") });
        }
        let z2 = r * r + x * x;
        if z2 == 0.0 {
            return Err(CaseError::ZeroImpedance(f, t));
        }
        lines.push(Line { from_bus: f, to_bus: t, g: r / z2, b: -x / z2, pfr: None });
    }

    Ok(GridTables { base_mva, buses, lines })
}

fn as_id(v: f64, line: usize) -> Result<usize, CaseError> {
    if v >= 1.0 && v.fract() == 0.0 && v < 1e9 {
        Ok(v as usize)
    } else {
        Err(CaseError::Syntax { line, message: format!("invalid bus id {v}") })
    }
}

type Scan = (HashMap<String, f64>, HashMap<String, Section>);

fn scan(text: &str) -> Result<Scan, CaseError> {
    let mut scalars = HashMap::new();
    let mut matrices = HashMap::new();
    let mut open: Option<(String, Section)> = None;

    for (ln0, raw) in text.lines().enumerate() {
        let ln = ln0 + 1;
        let code = raw.split('%').next().unwrap_or("").trim();
        if code.is_empty() {
            continue;
        }
        let mut body = code;
        if open.is_none() {
            let Some(rest) = code.strip_prefix("mpc.") else { continue };
            let Some((name, value)) = rest.split_once('=') else { continue };
            let name = name.trim().to_string();
            let value = value.trim();
            if let Some(after) = value.strip_prefix('[') {
                open = Some((name, Section { line: ln, rows: Vec::new() }));
                body = after;
            } else {
                let v = value.trim_end_matches(';').trim();
                if v.starts_with('\'') || v.starts_with('"') {
                    continue;
                }
                let num = v
                    .parse::<f64>()
                    .map_err(|_| CaseError::Syntax { line: ln, message: format!("non-numeric value `{v}` for mpc.{name}") })?;
                scalars.insert(name, num);
                continue;
            }
        }
        let (name, section) = open.as_mut().expect("open section");
        let (content, closed) = match body.find(']') {
            Some(p) => (&body[..p], true),
            None => (body, false),
        };
        for chunk in content.split(';') {
            let chunk = chunk.trim();
            if chunk.is_empty() {
                continue;
            }
            let row = chunk
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|_| CaseError::Syntax { line: ln, message: format!("non-numeric token `{tok}` in mpc.{name}") })
                })
                .collect::<Result<Vec<_>, _>>()?;
            if let Some((_, prev)) = section.rows.first() {
                if prev.len() != row.len() {
                    return Err(CaseError::Syntax { line: ln, message: format!("malformed row in mpc.{name}: {} columns, expected {}", row.len(), prev.len()) });
                }
            }
            section.rows.push((ln, row));
        }
        if closed {
            let (name, section) = open.take().expect("open section");
            matrices.insert(name, section);
        }
    }
    if let Some((name, section)) = open {
        return Err(CaseError::Syntax { line: section.line, message: format!("unterminated matrix mpc.{name}") });
    }
    Ok((scalars, matrices))
}

/// Writes the bus and branch tables of `net` in Matpower form. Round-trips
/// through [`parse_matpower_case`] up to floating-point rounding of the
/// impedance inversion.
pub fn write_matpower(net: &Network<f64>) -> String {
    let base = net.base_mva();
    let mut s = String::new();
    let _ = writeln!(s, "function mpc = case_export");
    let _ = writeln!(s, "mpc.version = '2';");
    let _ = writeln!(s, "mpc.baseMVA = {base:?};");
    let _ = writeln!(s, "%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin");
    let _ = writeln!(s, "mpc.bus = [");
    for b in net.buses() {
        let kind = if b.id == net.reference_bus() { 3 } else { 1 };
        let _ = writeln!(
            s,
            "\t{}\t{kind}\t{:?}\t{:?}\t0\t0\t1\t1\t0\t0\t1\t{:?}\t{:?};",
            b.id,
            b.load_p * base,
            b.load_q * base,
            b.v_max,
            b.v_min
        );
    }
    let _ = writeln!(s, "];");
    let _ = writeln!(s, "%% fbus tbus r x b rateA rateB rateC ratio angle status");
    let _ = writeln!(s, "mpc.branch = [");
    for l in net.lines() {
        let y2 = l.g * l.g + l.b * l.b;
        let (r, x) = (l.g / y2, -l.b / y2);
        let _ = writeln!(s, "\t{}\t{}\t{r:?}\t{x:?}\t0\t0\t0\t0\t0\t0\t1;", l.from_bus, l.to_bus);
    }
    let _ = writeln!(s, "];");
    s
}
