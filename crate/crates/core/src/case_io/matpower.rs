//! MATPOWER `.m` subset reader: `mpc.baseMVA`, `mpc.bus`, `mpc.gen`, `mpc.branch`.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;

use super::{to_pair, BranchDoc, BusDoc, CaseDocument};
use crate::error::{Error, Result};
use crate::network::BusType;

#[derive(Clone, Copy, Debug, Default)]
pub struct MatpowerOptions {
    /// Replace off-nominal taps and phase shifts by a plain series branch
    /// instead of failing.
    pub force_simplify: bool,
}

pub fn import_matpower(path: impl AsRef<Path>, opts: &MatpowerOptions) -> Result<CaseDocument> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    import_matpower_str(&text, &path.display().to_string(), opts)
}

struct Table {
    line: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(k) => &line[..k],
        None => line,
    }
}

fn push_rows(table: &mut Table, body: &str, name: &str, origin: &str, ln: usize) -> Result<()> {
    for chunk in body.split(';').map(str::trim).filter(|c| !c.is_empty()) {
        let values = chunk
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    Error::schema(
                        format!("{origin}:{ln}"),
                        format!("bad number '{t}' in mpc.{name}"),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        table.rows.push((ln, values));
    }
    Ok(())
}

fn parse_tables(text: &str, origin: &str) -> Result<(Option<f64>, BTreeMap<String, Table>)> {
    let mut base = None;
    let mut tables = BTreeMap::new();
    let mut current: Option<(String, Table)> = None;
    for (ln, raw) in text.lines().enumerate() {
        let ln = ln + 1;
        let line = strip_comment(raw).trim();
        let (name, mut table, body) = match current.take() {
            Some((name, table)) => (name, table, line),
            None => {
                let Some(rest) = line.strip_prefix("mpc.") else {
                    continue;
                };
                let Some((name, value)) = rest.split_once('=') else {
                    continue;
                };
                let name = name.trim().to_string();
                let value = value.trim();
                match value.strip_prefix('[') {
                    Some(after) => (
                        name,
                        Table {
                            line: ln,
                            rows: vec![],
                        },
                        after,
                    ),
                    None => {
                        if name == "baseMVA" {
                            let v = value.trim_end_matches(';').trim();
                            base = Some(v.parse::<f64>().map_err(|_| {
                                Error::schema(format!("{origin}:{ln}"), "bad mpc.baseMVA")
                            })?);
                        }
                        continue;
                    }
                }
            }
        };
        match body.find(']') {
            Some(k) => {
                push_rows(&mut table, &body[..k], &name, origin, ln)?;
                tables.insert(name, table);
            }
            None => {
                push_rows(&mut table, body, &name, origin, ln)?;
                current = Some((name, table));
            }
        }
    }
    if let Some((name, table)) = current {
        return Err(Error::schema(
            format!("{origin}:{}", table.line),
            format!("mpc.{name} is never closed"),
        ));
    }
    Ok((base, tables))
}

fn require<'a>(
    tables: &'a BTreeMap<String, Table>,
    name: &str,
    cols: usize,
    origin: &str,
) -> Result<&'a Table> {
    let table = tables
        .get(name)
        .ok_or_else(|| Error::schema(origin, format!("missing mpc.{name}")))?;
    for (ln, row) in &table.rows {
        if row.len() < cols {
            return Err(Error::schema(
                format!("{origin}:{ln}"),
                format!("mpc.{name} row has {} columns, need {cols}", row.len()),
            ));
        }
    }
    Ok(table)
}

/// Converts MATPOWER tables to the canonical document. Line charging is
/// split evenly onto the two end-bus shunts; out-of-service branches and
/// generators are skipped.
pub fn import_matpower_str(
    text: &str,
    origin: &str,
    opts: &MatpowerOptions,
) -> Result<CaseDocument> {
    let (base, tables) = parse_tables(text, origin)?;
    let base_mva = base.ok_or_else(|| Error::schema(origin, "missing mpc.baseMVA"))?;
    let bus_t = require(&tables, "bus", 13, origin)?;
    let branch_t = require(&tables, "branch", 11, origin)?;
    let gen_t = match tables.get("gen") {
        Some(_) => Some(require(&tables, "gen", 8, origin)?),
        None => None,
    };

    let mut buses: Vec<BusDoc> = Vec::with_capacity(bus_t.rows.len());
    let mut position = BTreeMap::new();
    let mut load = Vec::new();
    let mut base_kv = None;
    for (ln, row) in &bus_t.rows {
        let id = row[0];
        if id < 0.0 || id.fract() != 0.0 {
            return Err(Error::schema(
                format!("{origin}:{ln}"),
                format!("bus id {id} is not a non-negative integer"),
            ));
        }
        let bus_type = match row[1] as i64 {
            1 => BusType::Pq,
            2 => BusType::Pv,
            3 => BusType::Slack,
            other => {
                return Err(Error::schema(
                    format!("{origin}:{ln}"),
                    format!("unsupported bus type {other}"),
                ));
            }
        };
        if base_kv.is_none() && row[9] > 0.0 {
            base_kv = Some(row[9]);
        }
        position.insert(id as u64, buses.len());
        load.push(Complex64::new(row[2], row[3]));
        buses.push(BusDoc {
            id: id as u64,
            bus_type,
            shunt: [row[4] / base_mva, row[5] / base_mva],
            injection: None,
            vm: None,
        });
    }

    let mut generation = vec![Complex64::new(0.0, 0.0); buses.len()];
    if let Some(gen_t) = gen_t {
        for (ln, row) in &gen_t.rows {
            if row[7] <= 0.0 {
                continue;
            }
            let k = *position.get(&(row[0] as u64)).ok_or_else(|| {
                Error::schema(
                    format!("{origin}:{ln}"),
                    format!("generator at unknown bus {}", row[0]),
                )
            })?;
            generation[k] += Complex64::new(row[1], row[2]);
            if buses[k].vm.is_none() && buses[k].bus_type != BusType::Pq {
                buses[k].vm = Some(row[5]);
            }
        }
    }
    for (k, bus) in buses.iter_mut().enumerate() {
        let s = (generation[k] - load[k]) / base_mva;
        bus.injection = Some(to_pair(s));
    }

    let mut branches = Vec::with_capacity(branch_t.rows.len());
    let mut offenders = Vec::new();
    for (idx, (ln, row)) in branch_t.rows.iter().enumerate() {
        if row[10] <= 0.0 {
            continue;
        }
        let (from, to) = (row[0] as u64, row[1] as u64);
        let (r, x, b) = (row[2], row[3], row[4]);
        let ratio = row.get(8).copied().unwrap_or(0.0);
        let shift = row.get(9).copied().unwrap_or(0.0);
        if !(ratio == 0.0 || ratio == 1.0) || shift != 0.0 {
            offenders.push(format!("{idx} ({from}-{to}, ratio {ratio}, shift {shift})"));
        }
        let z = Complex64::new(r, x);
        if z.norm() == 0.0 {
            return Err(Error::schema(
                format!("{origin}:{ln}"),
                "branch with zero impedance",
            ));
        }
        let y = z.inv();
        for end in [from, to] {
            let k = *position.get(&end).ok_or(Error::DanglingBranch {
                branch: idx,
                bus: end,
            })?;
            buses[k].shunt[1] += b / 2.0;
        }
        branches.push(BranchDoc {
            from,
            to,
            y_series: to_pair(y),
        });
    }
    if !offenders.is_empty() {
        if opts.force_simplify {
            log::warn!(
                "dropping taps/phase shifts on {} branches: {}",
                offenders.len(),
                offenders.join(", ")
            );
        } else {
            return Err(Error::UnsupportedBranchModel { offenders });
        }
    }

    Ok(CaseDocument {
        base_mva,
        base_kv,
        buses,
        branches,
        synthetic_shunt: None,
    })
}
