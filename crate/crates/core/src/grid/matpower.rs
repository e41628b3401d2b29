//! Reader for the MATPOWER `.m` case format, restricted to the four
//! tables the DC formulation uses: `bus`, `gen`, `branch`, `gencost`.
//! Every other table is skipped with a warning.

use super::{Branch, Bus, CostCurve, Generator, GridError, ParsedCase, PowerNetwork};
use std::collections::HashMap;

struct Table {
    name: String,
    /// (source line number, numeric row)
    rows: Vec<(usize, Vec<f64>)>,
}

pub(super) fn parse(text: &str, path: &str, name: &str) -> Result<ParsedCase, GridError> {
    let mut warnings = Vec::new();
    let mut tables: HashMap<String, Table> = HashMap::new();
    let mut base_mva: Option<f64> = None;

    let parse_err = |line: usize, message: String| GridError::Parse {
        path: path.to_string(),
        line,
        message,
    };

    let mut current: Option<Table> = None;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw.find('%') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }

        if let Some(table) = current.as_mut() {
            let (body, closes) = match line.find(']') {
                Some(p) => (&line[..p], true),
                None => (line, false),
            };
            for row in body.split(';') {
                let row = row.trim();
                if row.is_empty() {
                    continue;
                }
                table.rows.push((lineno, parse_row(row, lineno, path)?));
            }
            if closes {
                let done = current.take().unwrap();
                tables.insert(done.name.clone(), done);
            }
            continue;
        }

        if let Some(rest) = line.strip_prefix("mpc.") {
            let eq = rest
                .find('=')
                .ok_or_else(|| parse_err(lineno, "expected '=' after mpc.<field>".into()))?;
            let field = rest[..eq].trim().to_string();
            let value = rest[eq + 1..].trim();
            if let Some(after) = value.strip_prefix('[') {
                let mut table = Table {
                    name: field,
                    rows: Vec::new(),
                };
                let (body, closes) = match after.find(']') {
                    Some(p) => (&after[..p], true),
                    None => (after, false),
                };
                for row in body.split(';') {
                    let row = row.trim();
                    if row.is_empty() {
                        continue;
                    }
                    table.rows.push((lineno, parse_row(row, lineno, path)?));
                }
                if closes {
                    tables.insert(table.name.clone(), table);
                } else {
                    current = Some(table);
                }
            } else if field == "baseMVA" {
                let v = value.trim_end_matches(';').trim();
                base_mva = Some(
                    v.parse::<f64>()
                        .map_err(|_| parse_err(lineno, format!("invalid baseMVA value '{v}'")))?,
                );
            } else if field != "version" {
                warnings.push(format!("ignoring scalar field mpc.{field}"));
            }
        } else if !line.starts_with("function") && !line.starts_with("end") {
            return Err(parse_err(
                lineno,
                format!("unrecognized statement '{line}'"),
            ));
        }
    }
    if current.is_some() {
        return Err(parse_err(text.lines().count(), "unterminated table".into()));
    }

    for key in tables.keys() {
        if !matches!(key.as_str(), "bus" | "gen" | "branch" | "gencost") {
            warnings.push(format!("ignoring table mpc.{key}"));
        }
    }

    let base_mva = base_mva.ok_or_else(|| parse_err(0, "missing mpc.baseMVA".into()))?;
    let bus_table = tables
        .get("bus")
        .ok_or_else(|| parse_err(0, "missing mpc.bus table".into()))?;
    let gen_table = tables
        .get("gen")
        .ok_or_else(|| parse_err(0, "missing mpc.gen table".into()))?;
    let branch_table = tables
        .get("branch")
        .ok_or_else(|| parse_err(0, "missing mpc.branch table".into()))?;
    let gencost_table = tables
        .get("gencost")
        .ok_or_else(|| parse_err(0, "missing mpc.gencost table".into()))?;

    // Bus table: bus_i, type, Pd, ... (AC columns ignored).
    let mut buses = Vec::new();
    let mut bus_index: HashMap<u32, usize> = HashMap::new();
    let mut slack_ids: Vec<u32> = Vec::new();
    for (lineno, row) in &bus_table.rows {
        if row.len() < 3 {
            return Err(parse_err(
                *lineno,
                "bus row needs at least 3 columns".into(),
            ));
        }
        let id = row[0] as u32;
        if bus_index.insert(id, buses.len()).is_some() {
            return Err(GridError::Validation(format!("duplicate bus id {id}")));
        }
        if row[1] as i64 == 3 {
            slack_ids.push(id);
        }
        buses.push(Bus {
            id,
            load_mw: row[2],
        });
    }

    // Gen table paired with gencost rows by position.
    if gencost_table.rows.len() < gen_table.rows.len() {
        return Err(GridError::Validation(format!(
            "gencost has {} rows for {} generators",
            gencost_table.rows.len(),
            gen_table.rows.len()
        )));
    }
    if gencost_table.rows.len() > gen_table.rows.len() {
        warnings.push(format!(
            "gencost has {} extra rows (reactive cost rows?); ignoring them",
            gencost_table.rows.len() - gen_table.rows.len()
        ));
    }
    let mut generators: Vec<Generator> = Vec::new();
    for ((lineno, row), (cost_lineno, cost_row)) in
        gen_table.rows.iter().zip(gencost_table.rows.iter())
    {
        if row.len() < 10 {
            return Err(parse_err(
                *lineno,
                "gen row needs at least 10 columns".into(),
            ));
        }
        let bus_id = row[0] as u32;
        let status = row[7] != 0.0;
        let p_max = row[8];
        let p_min = row[9];
        if !status {
            warnings.push(format!("skipping out-of-service generator at bus {bus_id}"));
            continue;
        }
        let bus = *bus_index.get(&bus_id).ok_or_else(|| {
            GridError::Validation(format!("generator references unknown bus {bus_id}"))
        })?;
        let cost = parse_gencost(cost_row, *cost_lineno, path)?;
        if let Some(existing) = generators.iter_mut().find(|g| g.bus == bus) {
            if existing.cost != cost {
                return Err(GridError::Validation(format!(
                    "bus {bus_id} hosts multiple generators with differing costs; \
                     aggregate them in the case file"
                )));
            }
            existing.p_min_mw += p_min;
            existing.p_max_mw += p_max;
            warnings.push(format!(
                "aggregated co-located generators at bus {bus_id} (limits summed)"
            ));
        } else {
            generators.push(Generator {
                bus,
                p_min_mw: p_min,
                p_max_mw: p_max,
                cost,
            });
        }
    }

    // Branch table: fbus, tbus, r, x, b, rateA, ..., status at column 10.
    let mut branches = Vec::new();
    for (lineno, row) in &branch_table.rows {
        if row.len() < 6 {
            return Err(parse_err(
                *lineno,
                "branch row needs at least 6 columns".into(),
            ));
        }
        let f_id = row[0] as u32;
        let t_id = row[1] as u32;
        let x = row[3];
        let rate_a = row[5];
        let status = row.get(10).map(|&s| s != 0.0).unwrap_or(true);
        if !status {
            warnings.push(format!("skipping out-of-service branch {f_id}-{t_id}"));
            continue;
        }
        let from = *bus_index.get(&f_id).ok_or_else(|| {
            GridError::Validation(format!("branch references unknown bus {f_id}"))
        })?;
        let to = *bus_index.get(&t_id).ok_or_else(|| {
            GridError::Validation(format!("branch references unknown bus {t_id}"))
        })?;
        if rate_a <= 0.0 {
            return Err(GridError::Validation(format!(
                "branch {f_id}-{t_id} has no thermal rating (rateA={rate_a}); \
                 the formulation needs a positive line capacity"
            )));
        }
        branches.push(Branch {
            from,
            to,
            reactance_pu: x,
            capacity_mw: rate_a,
        });
    }

    // Slack designation: the declared reference bus, else the
    // lowest-numbered generator bus as a deterministic fallback.
    let slack_bus = match slack_ids.len() {
        1 => bus_index[&slack_ids[0]],
        0 => {
            let fallback = generators
                .iter()
                .map(|g| g.bus)
                .min_by_key(|&b| buses[b].id)
                .ok_or_else(|| GridError::Validation("case has no generators".into()))?;
            warnings.push(format!(
                "no reference bus declared; using lowest generator bus {}",
                buses[fallback].id
            ));
            fallback
        }
        _ => {
            return Err(GridError::Validation(format!(
                "multiple reference buses declared: {slack_ids:?}"
            )))
        }
    };

    let network = PowerNetwork {
        name: name.to_string(),
        base_mva,
        buses,
        generators,
        branches,
        slack_bus,
    };
    network.validate()?;
    Ok(ParsedCase { network, warnings })
}

fn parse_row(row: &str, lineno: usize, path: &str) -> Result<Vec<f64>, GridError> {
    row.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| GridError::Parse {
                path: path.to_string(),
                line: lineno,
                message: format!("invalid number '{tok}'"),
            })
        })
        .collect()
}

/// Polynomial gencost rows only: `2 startup shutdown n c(n-1) ... c0`
/// with n of 2 (linear) or 3 (quadratic).
fn parse_gencost(row: &[f64], lineno: usize, path: &str) -> Result<CostCurve, GridError> {
    let parse_err = |message: String| GridError::Parse {
        path: path.to_string(),
        line: lineno,
        message,
    };
    if row.len() < 4 {
        return Err(parse_err("gencost row needs at least 4 columns".into()));
    }
    if row[0] as i64 != 2 {
        return Err(GridError::Validation(format!(
            "gencost model {} unsupported; only polynomial (2) costs are handled",
            row[0]
        )));
    }
    let n = row[3] as usize;
    if row.len() < 4 + n {
        return Err(parse_err(format!(
            "gencost row declares {n} coefficients but carries {}",
            row.len() - 4
        )));
    }
    let coeffs = &row[4..4 + n];
    match n {
        3 => Ok(CostCurve {
            quadratic: coeffs[0],
            linear: coeffs[1],
            constant: coeffs[2],
        }),
        2 => Ok(CostCurve {
            quadratic: 0.0,
            linear: coeffs[0],
            constant: coeffs[1],
        }),
        _ => Err(GridError::Validation(format!(
            "gencost with {n} polynomial coefficients is not quadratic"
        ))),
    }
}
