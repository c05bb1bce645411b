//! Whitespace-delimited turbofan files: 26 numeric columns per row (engine id,
//! cycle, 3 operating settings, 21 sensors) and one-integer-per-line truth
//! files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;

use super::{DataError, Result, Row, Trajectory, NUM_FEATURES, RAW_COLUMNS};
use crate::Real;

fn parse_index(field: &str, line: usize, what: &str) -> Result<u32> {
    let bad = || DataError::Parse {
        line,
        reason: format!("{what} '{field}' is not a positive integer"),
    };
    let value = match field.parse::<u32>() {
        Ok(v) => v,
        Err(_) => {
            let f: f64 = field.parse().map_err(|_| bad())?;
            if f.fract() != 0.0 || !(1.0..=u32::MAX as f64).contains(&f) {
                return Err(bad());
            }
            f as u32
        }
    };
    if value == 0 {
        return Err(bad());
    }
    Ok(value)
}

fn parse_value(field: &str, line: usize, column: usize) -> Result<Real> {
    match field.parse::<Real>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(DataError::Parse {
            line,
            reason: format!("column {column}: '{field}' is not a finite number"),
        }),
    }
}

/// Parses a trajectory file. Rows are grouped by engine id in order of first
/// appearance; an engine whose rows are split across the file is reassembled.
/// Within an engine, cycles must start at 1 and strictly increase.
pub fn parse_cmapss<R: BufRead>(reader: R) -> Result<Vec<Trajectory>> {
    let mut trajs: Vec<Trajectory> = Vec::new();
    let mut index: HashMap<u32, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| DataError::Parse {
            line: lineno,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != RAW_COLUMNS {
            return Err(DataError::Parse {
                line: lineno,
                reason: format!("expected {RAW_COLUMNS} columns, found {}", fields.len()),
            });
        }
        let engine_id = parse_index(fields[0], lineno, "engine id")?;
        let cycle = parse_index(fields[1], lineno, "cycle")?;
        let mut row: Row = [0.0; NUM_FEATURES];
        for (j, f) in fields[2..].iter().enumerate() {
            row[j] = parse_value(f, lineno, j + 3)?;
        }
        let slot = *index.entry(engine_id).or_insert_with(|| {
            trajs.push(Trajectory {
                engine_id,
                cycles: Vec::new(),
                steps: Vec::new(),
                true_final_rul: None,
            });
            trajs.len() - 1
        });
        let t = &mut trajs[slot];
        let expected_order = match t.cycles.last() {
            None => cycle == 1,
            Some(&prev) => cycle > prev,
        };
        if !expected_order {
            return Err(DataError::Parse {
                line: lineno,
                reason: format!(
                    "engine {engine_id}: cycle {cycle} does not continue {}",
                    t.cycles
                        .last()
                        .map_or("from the first cycle 1".to_string(), |p| format!(
                            "after cycle {p}"
                        ))
                ),
            });
        }
        t.cycles.push(cycle);
        t.steps.push(row);
    }
    Ok(trajs)
}

pub fn parse_cmapss_str(text: &str) -> Result<Vec<Trajectory>> {
    parse_cmapss(text.as_bytes())
}

/// Attaches the k-th truth value to the k-th trajectory. Values are kept as
/// given (no capping).
pub fn parse_rul_truth<R: BufRead>(
    reader: R,
    trajectories: Vec<Trajectory>,
) -> Result<Vec<Trajectory>> {
    let mut values = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| DataError::Parse {
            line: lineno,
            reason: e.to_string(),
        })?;
        let field = line.trim();
        if field.is_empty() {
            continue;
        }
        let bad = || DataError::Parse {
            line: lineno,
            reason: format!("'{field}' is not a non-negative integer"),
        };
        let v = match field.parse::<u32>() {
            Ok(v) => v,
            Err(_) => {
                let f: f64 = field.parse().map_err(|_| bad())?;
                if f.fract() != 0.0 || !(0.0..=u32::MAX as f64).contains(&f) {
                    return Err(bad());
                }
                f as u32
            }
        };
        values.push(v);
    }
    if values.len() != trajectories.len() {
        return Err(DataError::CountMismatch {
            truth: values.len(),
            trajectories: trajectories.len(),
        });
    }
    Ok(trajectories
        .into_iter()
        .zip(values)
        .map(|(mut t, v)| {
            t.true_final_rul = Some(v);
            t
        })
        .collect())
}

pub fn parse_rul_truth_str(text: &str, trajectories: Vec<Trajectory>) -> Result<Vec<Trajectory>> {
    parse_rul_truth(text.as_bytes(), trajectories)
}

/// Serializes trajectories in the 26-column layout. Values use Rust's shortest
/// round-trip formatting, so parsing the output reproduces them exactly.
pub fn write_cmapss(trajs: &[Trajectory]) -> String {
    let mut out = String::new();
    for t in trajs {
        for (cycle, row) in t.cycles.iter().zip(&t.steps) {
            let _ = write!(out, "{} {}", t.engine_id, cycle);
            for v in row {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
    }
    out
}

/// One truth value per line, in trajectory order. Trajectories without truth
/// are written as 0.
pub fn write_rul_truth(trajs: &[Trajectory]) -> String {
    trajs
        .iter()
        .map(|t| format!("{}\n", t.true_final_rul.unwrap_or(0)))
        .collect()
}
