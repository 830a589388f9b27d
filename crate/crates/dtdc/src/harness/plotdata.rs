//! Per-run plot series from a rows CSV: x, median and 5%/95% envelopes of the
//! convergence error, grouped by sample count or parameter-communication
//! rounds.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

use super::runner::{fmt_float, percentile, CSV_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Samples,
    ParamComm,
}

impl FromStr for GroupBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "samples" => Ok(Self::Samples),
            "paramComm" | "param-comm" => Ok(Self::ParamComm),
            other => Err(Error::InvalidArgument(format!(
                "unknown group key {other:?} (expected samples or param-comm)"
            ))),
        }
    }
}

struct ParsedRow {
    label: String,
    iter: usize,
    samples: usize,
    param_comm: usize,
    conv_err: f64,
}

fn parse_rows(path: &Path) -> Result<Vec<ParsedRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::Validation(format!(
                "unexpected CSV header {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Validation(format!(
                "line {}: expected 9 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Validation(format!("line {}: {e}", lineno + 2)))
        };
        let parse_f64 = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Validation(format!("line {}: {e}", lineno + 2)))
        };
        rows.push(ParsedRow {
            label: fields[0].to_string(),
            iter: parse_usize(fields[2])?,
            samples: parse_usize(fields[3])?,
            param_comm: parse_usize(fields[4])?,
            conv_err: parse_f64(fields[6])?,
        });
    }
    Ok(rows)
}

/// Writes one `series_<label>.csv` per run label with columns
/// `x,median,p5,p95`. With `x = samples`, gossip-only averaging rounds share
/// the x of the last TDC iteration; only the final record at each x is kept,
/// so series stay strictly increasing in x.
pub fn emit_plotdata(csv_path: &Path, group_by: GroupBy, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = parse_rows(csv_path)?;
    // label -> iter -> (x, errors over repetitions)
    let mut grouped: BTreeMap<String, BTreeMap<usize, (usize, Vec<f64>)>> = BTreeMap::new();
    for row in rows {
        let x = match group_by {
            GroupBy::Samples => row.samples,
            GroupBy::ParamComm => row.param_comm,
        };
        let entry = grouped
            .entry(row.label)
            .or_default()
            .entry(row.iter)
            .or_insert_with(|| (x, Vec::new()));
        entry.0 = x;
        entry.1.push(row.conv_err);
    }

    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (label, by_iter) in grouped {
        let mut text = String::from("x,median,p5,p95\n");
        let mut points: Vec<(usize, &(usize, Vec<f64>))> =
            by_iter.iter().map(|(&i, v)| (i, v)).collect();
        points.sort_by_key(|(i, _)| *i);
        // Deduplicate by x, keeping the latest record (post-averaging state).
        let mut dedup: Vec<(usize, &Vec<f64>)> = Vec::new();
        for (_, (x, errs)) in points {
            if let Some(last) = dedup.last_mut() {
                if last.0 == *x {
                    last.1 = errs;
                    continue;
                }
            }
            dedup.push((*x, errs));
        }
        for (x, errs) in dedup {
            text.push_str(&format!(
                "{x},{},{},{}\n",
                fmt_float(percentile(errs, 50.0)),
                fmt_float(percentile(errs, 5.0)),
                fmt_float(percentile(errs, 95.0)),
            ));
        }
        let path = out_dir.join(format!("series_{label}.csv"));
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}
