//! Parser for the subset of the MATPOWER case format needed by the DC model:
//! `baseMVA`, `bus`, `gen` and `branch`. Extra columns and other fields are
//! ignored.

use regex::Regex;

use super::{Branch, Bus, Generator, GridCase};
use crate::error::{Error, Result};

const BUS_TYPE_SLACK: f64 = 3.0;

pub(super) fn parse_matpower(text: &str) -> Result<GridCase> {
    let text = strip_comments(text);
    let base_mva = scalar_field(&text, "baseMVA")?;

    let bus_rows = matrix_field(&text, "bus")?;
    let gen_rows = matrix_field(&text, "gen")?;
    let branch_rows = matrix_field(&text, "branch")?;

    let mut buses = Vec::with_capacity(bus_rows.len());
    for (i, row) in bus_rows.iter().enumerate() {
        require_cols(row, 3, "bus", i)?;
        buses.push(Bus {
            id: as_id(row[0], "bus", i)?,
            is_slack: row[1] == BUS_TYPE_SLACK,
            load_p: row[2] / base_mva,
        });
    }

    let mut gens = Vec::new();
    for (i, row) in gen_rows.iter().enumerate() {
        require_cols(row, 2, "gen", i)?;
        // column 8 is GEN_STATUS
        if row.get(7).is_some_and(|&s| s <= 0.0) {
            continue;
        }
        gens.push(Generator {
            bus: as_id(row[0], "gen", i)?,
            gen_p: row[1] / base_mva,
        });
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for (i, row) in branch_rows.iter().enumerate() {
        require_cols(row, 4, "branch", i)?;
        branches.push(Branch {
            index: i + 1,
            from_bus: as_id(row[0], "branch", i)?,
            to_bus: as_id(row[1], "branch", i)?,
            reactance: row[3],
            // column 11 is BR_STATUS
            in_service: row.get(10).is_none_or(|&s| s > 0.0),
        });
    }

    Ok(GridCase {
        base_mva,
        buses,
        branches,
        gens,
    })
}

fn strip_comments(text: &str) -> String {
    text.lines()
        .map(|line| match line.find('%') {
            Some(i) => &line[..i],
            None => line,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Finds `name =` or `mpc.name =` as a whole identifier and returns the text
/// after the `=`.
fn find_assignment<'a>(text: &'a str, name: &str) -> Option<&'a str> {
    let pattern = format!(r"(?m)(?:^|[^\w.])(?:mpc\.)?{}\s*=", regex::escape(name));
    let re = Regex::new(&pattern).expect("valid assignment pattern");
    let found = re
        .find_iter(text)
        .map(|m| &text[m.end()..])
        .find(|rest| !rest.starts_with('='));
    found
}

fn scalar_field(text: &str, name: &str) -> Result<f64> {
    let rest = find_assignment(text, name)
        .ok_or_else(|| Error::MalformedCase(format!("missing `{name}`")))?;
    let value = rest.split(';').next().unwrap_or("").trim();
    value
        .parse()
        .map_err(|_| Error::MalformedCase(format!("`{name}` is not a number: {value:?}")))
}

fn matrix_field(text: &str, name: &str) -> Result<Vec<Vec<f64>>> {
    let rest = find_assignment(text, name)
        .ok_or_else(|| Error::MalformedCase(format!("missing `{name}` matrix")))?;
    let rest = rest.trim_start();
    let body = rest
        .strip_prefix('[')
        .ok_or_else(|| Error::MalformedCase(format!("`{name}` is not a bracketed matrix")))?;
    let close = body
        .find(']')
        .ok_or_else(|| Error::MalformedCase(format!("unterminated `{name}` matrix")))?;
    let body = &body[..close];

    let mut rows = Vec::new();
    for raw in body.split([';', '\n']) {
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let row = raw
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    Error::MalformedCase(format!("bad number {t:?} in `{name}` matrix"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::MalformedCase(format!("`{name}` matrix is empty")));
    }
    Ok(rows)
}

fn require_cols(row: &[f64], n: usize, table: &str, i: usize) -> Result<()> {
    if row.len() < n {
        return Err(Error::MalformedCase(format!(
            "`{table}` row {} has {} columns, need at least {n}",
            i + 1,
            row.len()
        )));
    }
    Ok(())
}

fn as_id(v: f64, table: &str, i: usize) -> Result<usize> {
    if v.fract() != 0.0 || v < 0.0 || !v.is_finite() {
        return Err(Error::MalformedCase(format!(
            "`{table}` row {}: {v} is not a bus id",
            i + 1
        )));
    }
    Ok(v as usize)
}
