use super::{Branch, Bus, BusKind, Generator, GridError, NetworkCase};
use crate::scalar::Scalar;
use std::collections::{HashMap, VecDeque};
use std::fmt;

/// Non-fatal findings produced while parsing a case file.
#[derive(Debug, Clone, PartialEq)]
pub enum CaseWarning {
    /// Off-nominal tap ratio coerced to 1.0 (supported subset).
    TapCoerced { from: i64, to: i64, tap: f64 },
    InactiveGenSkipped { bus: i64 },
    InactiveBranchSkipped { from: i64, to: i64 },
    /// PV bus without an in-service generator treated as a load bus.
    PvDemoted { bus: i64 },
    /// Reactive-power cost rows (second half of gencost) ignored.
    ReactiveCostsIgnored,
}

impl fmt::Display for CaseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CaseWarning::TapCoerced { from, to, tap } => {
                write!(f, "branch {from}-{to}: tap ratio {tap} coerced to 1.0")
            }
            CaseWarning::InactiveGenSkipped { bus } => {
                write!(f, "out-of-service generator at bus {bus} skipped")
            }
            CaseWarning::InactiveBranchSkipped { from, to } => {
                write!(f, "out-of-service branch {from}-{to} skipped")
            }
            CaseWarning::PvDemoted { bus } => {
                write!(f, "PV bus {bus} has no in-service generator; treated as load bus")
            }
            CaseWarning::ReactiveCostsIgnored => {
                write!(f, "gencost has 2·ngen rows; reactive cost rows ignored")
            }
        }
    }
}

struct RawRow {
    line: usize,
    values: Vec<f64>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> GridError {
    GridError::Parse { line, msg: msg.into() }
}

/// Strips `%` comments, keeping line structure.
fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        match line.find('%') {
            Some(pos) => out.push_str(&line[..pos]),
            None => out.push_str(line),
        }
        out.push('\n');
    }
    out
}

/// Finds `mpc.<name>` where the name is not a prefix of a longer field
/// (so `gen` does not match `gencost`).
fn find_field(text: &str, name: &str) -> Option<usize> {
    let pattern = format!("mpc.{name}");
    let mut from = 0;
    while let Some(rel) = text[from..].find(&pattern) {
        let start = from + rel;
        let after = text[start + pattern.len()..].chars().next();
        match after {
            Some(c) if c.is_alphanumeric() || c == '_' => from = start + pattern.len(),
            _ => return Some(start),
        }
    }
    None
}

/// Extracts the numeric matrix assigned to `mpc.<name>`, with per-row
/// source line numbers.
fn extract_matrix(text: &str, name: &str) -> Result<Option<Vec<RawRow>>, GridError> {
    let pattern = format!("mpc.{name}");
    let Some(start) = find_field(text, name) else {
        return Ok(None);
    };
    let line_of = |byte: usize| text[..byte].matches('\n').count() + 1;

    let after = &text[start + pattern.len()..];
    let Some(eq) = after.find('=') else {
        return Err(parse_err(line_of(start), format!("expected '=' after {pattern}")));
    };
    let Some(open_rel) = after[eq..].find('[') else {
        return Err(parse_err(line_of(start), format!("expected '[' after {pattern} =")));
    };
    let body_start = start + pattern.len() + eq + open_rel + 1;
    let Some(close_rel) = text[body_start..].find(']') else {
        return Err(parse_err(line_of(start), format!("unterminated matrix {pattern}")));
    };
    let body = &text[body_start..body_start + close_rel];

    let mut rows = Vec::new();
    let mut offset = 0usize;
    for chunk in body.split(';') {
        let line = line_of(body_start + offset);
        offset += chunk.len() + 1;
        let mut values = Vec::new();
        for tok in chunk.split([' ', '\t', ',', '\n', '\r']) {
            if tok.is_empty() {
                continue;
            }
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(line, format!("bad number {tok:?} in mpc.{name}")))?;
            values.push(v);
        }
        if !values.is_empty() {
            rows.push(RawRow { line, values });
        }
    }
    Ok(Some(rows))
}

fn extract_scalar(text: &str, name: &str) -> Result<Option<f64>, GridError> {
    let pattern = format!("mpc.{name}");
    let Some(start) = find_field(text, name) else {
        return Ok(None);
    };
    let line = text[..start].matches('\n').count() + 1;
    let after = &text[start + pattern.len()..];
    let eq = after
        .find('=')
        .ok_or_else(|| parse_err(line, format!("expected '=' after {pattern}")))?;
    let rest = &after[eq + 1..];
    let end = rest.find(';').unwrap_or(rest.len());
    let tok = rest[..end].trim();
    tok.parse::<f64>()
        .map(Some)
        .map_err(|_| parse_err(line, format!("bad number {tok:?} for {pattern}")))
}

fn case_name(text: &str) -> String {
    for line in text.lines() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix("function") {
            if let Some(eq) = rest.find('=') {
                return rest[eq + 1..].trim().trim_end_matches(';').trim().to_string();
            }
        }
    }
    "case".to_string()
}

fn need(row: &RawRow, len: usize, table: &str) -> Result<(), GridError> {
    if row.values.len() < len {
        return Err(parse_err(
            row.line,
            format!("{table} row has {} columns, expected at least {len}", row.values.len()),
        ));
    }
    Ok(())
}

/// Parses a MATPOWER `.m` case (version-2 subset: polynomial costs, no
/// phase shifters, taps coerced to 1.0) into a per-unit [`NetworkCase`].
/// Warnings are reported via [`log::warn!`]; use [`parse_case_verbose`]
/// to capture them programmatically.
pub fn parse_case<T: Scalar>(text: &str) -> Result<NetworkCase<T>, GridError> {
    let (case, warnings) = parse_case_verbose(text)?;
    for w in &warnings {
        log::warn!("{}: {w}", case.name);
    }
    Ok(case)
}

pub fn parse_case_verbose<T: Scalar>(
    text: &str,
) -> Result<(NetworkCase<T>, Vec<CaseWarning>), GridError> {
    let clean = strip_comments(text);
    let mut warnings = Vec::new();

    let base_mva = extract_scalar(&clean, "baseMVA")?
        .ok_or_else(|| parse_err(1, "missing mpc.baseMVA"))?;
    if !(base_mva > 0.0) {
        return Err(GridError::Validation(format!("baseMVA must be positive, got {base_mva}")));
    }
    let bus_rows =
        extract_matrix(&clean, "bus")?.ok_or_else(|| parse_err(1, "missing mpc.bus table"))?;
    let gen_rows =
        extract_matrix(&clean, "gen")?.ok_or_else(|| parse_err(1, "missing mpc.gen table"))?;
    let branch_rows = extract_matrix(&clean, "branch")?
        .ok_or_else(|| parse_err(1, "missing mpc.branch table"))?;
    let cost_rows = extract_matrix(&clean, "gencost")?.unwrap_or_default();

    // Buses: remap external ids to dense 0-based indices in file order.
    let mut buses: Vec<Bus<T>> = Vec::with_capacity(bus_rows.len());
    let mut index_of: HashMap<i64, usize> = HashMap::new();
    for row in &bus_rows {
        need(row, 13, "bus")?;
        let v = &row.values;
        let ext_id = v[0] as i64;
        let kind = match v[1] as i64 {
            1 => BusKind::Load,
            2 => BusKind::Generator,
            3 => BusKind::Slack,
            other => {
                return Err(GridError::Validation(format!(
                    "bus {ext_id}: unsupported bus type {other}"
                )))
            }
        };
        if index_of.insert(ext_id, buses.len()).is_some() {
            return Err(GridError::Validation(format!("duplicate bus id {ext_id}")));
        }
        let (vmax, vmin) = (v[11], v[12]);
        if !(vmin > 0.0 && vmin < vmax) {
            return Err(GridError::Validation(format!(
                "bus {ext_id}: voltage bounds must satisfy 0 < vmin < vmax, got [{vmin}, {vmax}]"
            )));
        }
        buses.push(Bus {
            id: buses.len(),
            ext_id,
            kind,
            vmin: T::c(vmin),
            vmax: T::c(vmax),
            p_net_nom: T::c(v[2] / base_mva),
            q_net_nom: T::c(v[3] / base_mva),
            gs: T::c(v[4] / base_mva),
            bs: T::c(v[5] / base_mva),
            vset: T::one(),
        });
    }

    // Generators (in-service only).
    let mut generators: Vec<Generator<T>> = Vec::new();
    let mut gen_src_line = Vec::new();
    for row in &gen_rows {
        need(row, 10, "gen")?;
        let v = &row.values;
        let ext_bus = v[0] as i64;
        let &bus = index_of
            .get(&ext_bus)
            .ok_or_else(|| GridError::Validation(format!("generator references unknown bus {ext_bus}")))?;
        if v[7] <= 0.0 {
            warnings.push(CaseWarning::InactiveGenSkipped { bus: ext_bus });
            continue;
        }
        let (pmin, pmax) = (v[9] / base_mva, v[8] / base_mva);
        let (qmin, qmax) = (v[4] / base_mva, v[3] / base_mva);
        if pmin > pmax || qmin > qmax {
            return Err(GridError::Validation(format!(
                "generator at bus {ext_bus}: inverted output bounds"
            )));
        }
        generators.push(Generator {
            bus,
            pmin: T::c(pmin),
            pmax: T::c(pmax),
            qmin: T::c(qmin),
            qmax: T::c(qmax),
            c0: T::zero(),
            c1: T::zero(),
            c2: T::zero(),
            vg: T::c(v[5]),
            pg: T::c(v[1] / base_mva),
        });
        gen_src_line.push(row.line);
    }

    // Costs: polynomial model only; `gencost` may also carry reactive rows.
    if !cost_rows.is_empty() {
        let active_rows: Vec<&RawRow> = {
            let total_in_file = gen_rows.len();
            if cost_rows.len() == 2 * total_in_file {
                warnings.push(CaseWarning::ReactiveCostsIgnored);
                cost_rows.iter().take(total_in_file).collect()
            } else if cost_rows.len() == total_in_file {
                cost_rows.iter().collect()
            } else {
                return Err(GridError::Validation(format!(
                    "gencost has {} rows for {} generators",
                    cost_rows.len(),
                    total_in_file
                )));
            }
        };
        // Walk the original gen table again so cost rows line up with
        // skipped units.
        let mut kept = 0usize;
        for (raw_gen, cost) in gen_rows.iter().zip(active_rows) {
            if raw_gen.values[7] <= 0.0 {
                continue;
            }
            need(cost, 4, "gencost")?;
            let v = &cost.values;
            if v[0] as i64 != 2 {
                return Err(GridError::Validation(
                    "only polynomial (model 2) generator costs are supported".into(),
                ));
            }
            let ncost = v[3] as usize;
            need(cost, 4 + ncost, "gencost")?;
            let coeffs = &v[4..4 + ncost];
            let (c2, c1, c0) = match ncost {
                1 => (0.0, 0.0, coeffs[0]),
                2 => (0.0, coeffs[0], coeffs[1]),
                3 => (coeffs[0], coeffs[1], coeffs[2]),
                n => {
                    return Err(GridError::Validation(format!(
                        "unsupported cost polynomial order {n} (max quadratic)"
                    )))
                }
            };
            if c2 < 0.0 {
                return Err(GridError::Validation(
                    "concave generator cost (c2 < 0) is not supported".into(),
                ));
            }
            let g = &mut generators[kept];
            g.c0 = T::c(c0);
            g.c1 = T::c(c1 * base_mva);
            g.c2 = T::c(c2 * base_mva * base_mva);
            kept += 1;
        }
    }

    // Branches (in-service only), tap/shift policing.
    let mut branches: Vec<Branch<T>> = Vec::new();
    for row in &branch_rows {
        need(row, 11, "branch")?;
        let v = &row.values;
        let (ext_from, ext_to) = (v[0] as i64, v[1] as i64);
        if v[10] <= 0.0 {
            warnings.push(CaseWarning::InactiveBranchSkipped { from: ext_from, to: ext_to });
            continue;
        }
        let from = *index_of.get(&ext_from).ok_or_else(|| {
            GridError::Validation(format!("branch references unknown bus {ext_from}"))
        })?;
        let to = *index_of.get(&ext_to).ok_or_else(|| {
            GridError::Validation(format!("branch references unknown bus {ext_to}"))
        })?;
        if from == to {
            return Err(GridError::Validation(format!("branch {ext_from}-{ext_to} is a self-loop")));
        }
        let (r, x) = (v[2], v[3]);
        if r < 0.0 {
            return Err(GridError::Validation(format!(
                "branch {ext_from}-{ext_to}: negative resistance"
            )));
        }
        if x == 0.0 {
            return Err(GridError::Validation(format!(
                "branch {ext_from}-{ext_to}: zero reactance"
            )));
        }
        let tap = v[8];
        if tap != 0.0 && tap != 1.0 {
            warnings.push(CaseWarning::TapCoerced { from: ext_from, to: ext_to, tap });
        }
        if v[9] != 0.0 {
            return Err(GridError::Validation(format!(
                "branch {ext_from}-{ext_to}: phase shifters are unsupported"
            )));
        }
        let s_max = if v[5] > 0.0 { Some(T::c(v[5] / base_mva)) } else { None };
        branches.push(Branch {
            from,
            to,
            r: T::c(r),
            x: T::c(x),
            b_sh: T::c(v[4]),
            s_max,
        });
    }

    // PV buses without a unit degrade to load buses; generator buses get
    // their voltage setpoint from the first unit.
    let mut vset_of: HashMap<usize, T> = HashMap::new();
    for g in &generators {
        vset_of.entry(g.bus).or_insert(g.vg);
    }
    for bus in &mut buses {
        match bus.kind {
            BusKind::Slack => {
                let vset = vset_of.get(&bus.id).copied().ok_or_else(|| {
                    GridError::Validation(format!(
                        "slack bus {} has no in-service generator",
                        bus.ext_id
                    ))
                })?;
                bus.vset = vset;
            }
            BusKind::Generator => match vset_of.get(&bus.id) {
                Some(&v) => bus.vset = v,
                None => {
                    warnings.push(CaseWarning::PvDemoted { bus: bus.ext_id });
                    bus.kind = BusKind::Load;
                }
            },
            BusKind::Load => {}
        }
    }
    for g in &generators {
        if buses[g.bus].kind == BusKind::Load {
            return Err(GridError::Validation(format!(
                "generator at load bus {} (PQ generators unsupported)",
                buses[g.bus].ext_id
            )));
        }
    }

    let slack_count = buses.iter().filter(|b| b.kind == BusKind::Slack).count();
    if slack_count != 1 {
        return Err(GridError::Validation(format!(
            "expected exactly one slack bus, found {slack_count}"
        )));
    }

    // Connectivity over in-service branches.
    let n = buses.len();
    let mut adj = vec![Vec::new(); n];
    for br in &branches {
        adj[br.from].push(br.to);
        adj[br.to].push(br.from);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(GridError::Validation(format!(
            "network is disconnected: bus {} unreachable",
            buses[i].ext_id
        )));
    }

    let case = NetworkCase {
        name: case_name(text),
        base_mva: T::c(base_mva),
        buses,
        generators,
        branches,
    };
    Ok((case, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "\
function mpc = twobus
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
    1  3  0   0  0  0  1  1.0  0  230  1  1.1  0.9;
    2  1  10  2  0  0  1  1.0  0  230  1  1.1  0.9;
];
mpc.gen = [
    1  0  0  50  -50  1.0  100  1  100  0;
];
mpc.branch = [
    1  2  0.01  0.1  0.02  0  0  0  0  0  1  -360  360;
];
mpc.gencost = [
    2  0  0  3  0.1  20  0;
];
";

    #[test]
    fn minimal_two_bus_case() {
        let case: NetworkCase<f64> = parse_case(TWO_BUS).unwrap();
        assert_eq!(case.name, "twobus");
        assert_eq!(case.n_buses(), 2);
        assert_eq!(case.branches.len(), 1);
        assert_eq!(case.generators.len(), 1);
        assert_eq!(case.buses[1].p_net_nom, 0.1);
        assert_eq!(case.buses[1].q_net_nom, 0.02);
        assert_eq!(case.slack(), 0);
        // $/MWh 20 becomes $/pu·h 2000; 0.1 $/MW²h becomes 1000 $/pu²·h.
        assert_eq!(case.generators[0].c1, 2000.0);
        assert_eq!(case.generators[0].c2, 1000.0);
        assert!(case.branches[0].s_max.is_none());
    }

    #[test]
    fn duplicate_bus_id_is_rejected() {
        let text = TWO_BUS.replace("2  1  10", "1  1  10");
        let err = parse_case::<f64>(&text).unwrap_err();
        assert!(matches!(err, GridError::Validation(ref m) if m.contains("duplicate bus id")));
    }

    #[test]
    fn missing_slack_is_rejected() {
        let text = TWO_BUS.replace("1  3  0", "1  2  0");
        let err = parse_case::<f64>(&text).unwrap_err();
        assert!(matches!(err, GridError::Validation(ref m) if m.contains("slack")));
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let text = TWO_BUS.replace(
            "    2  1  10  2  0  0  1  1.0  0  230  1  1.1  0.9;",
            "    2  1  10  2  0  0  1  1.0  0  230  1  1.1  0.9;\n    3  1  5  1  0  0  1  1.0  0  230  1  1.1  0.9;",
        );
        let err = parse_case::<f64>(&text).unwrap_err();
        assert!(matches!(err, GridError::Validation(ref m) if m.contains("disconnected")));
    }

    #[test]
    fn malformed_number_reports_line() {
        let text = TWO_BUS.replace("0.01  0.1", "0.01  oops");
        match parse_case::<f64>(&text) {
            Err(GridError::Parse { line, .. }) => assert!(line > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn tap_coercion_warns(){
        let text = TWO_BUS.replace("0  0  0  0  0  1  -360", "0  0  0  0.98  0  1  -360");
        let (_, warnings) = parse_case_verbose::<f64>(&text).unwrap();
        assert!(warnings.iter().any(|w| matches!(w, CaseWarning::TapCoerced { .. })));
    }

    #[test]
    fn json_round_trip_is_identity() {
        let case: NetworkCase<f64> = parse_case(TWO_BUS).unwrap();
        let json = case.to_canonical_json();
        let back = NetworkCase::<f64>::from_canonical_json(&json).unwrap();
        assert_eq!(case, back);
        assert_eq!(json, back.to_canonical_json());
    }

    #[test]
    fn per_unit_is_invariant_to_mva_rescaling() {
        // Multiplying every MW/MVAr quantity and the base by the same k
        // leaves the per-unit case unchanged (gencost $/MWh coefficients
        // are per physical MW and stay put).
        let scaled = TWO_BUS
            .replace("mpc.baseMVA = 100", "mpc.baseMVA = 200")
            .replace("2  1  10  2", "2  1  20  4")
            .replace("1  0  0  50  -50  1.0  100  1  100  0", "1  0  0  100  -100  1.0  100  1  200  0")
            .replace("2  0  0  3  0.1  20  0", "2  0  0  3  0.025  10  0");
        let a: NetworkCase<f64> = parse_case(TWO_BUS).unwrap();
        let b: NetworkCase<f64> = parse_case(&scaled).unwrap();
        assert_eq!(a.buses, b.buses);
        assert_eq!(a.generators[0].pmax, b.generators[0].pmax);
        assert_eq!(a.generators[0].c1 / 1.0, 2000.0);
        assert_eq!(b.generators[0].c1, 2000.0);
    }
}
