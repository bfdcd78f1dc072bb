//! CSV and plain-text rendering of metrics rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::workflow::Dimension;

use super::experiment::MetricsRow;

/// Column order of the CSV output.
pub const CSV_HEADER: [&str; 16] = [
    "scenario_id",
    "algorithm",
    "users",
    "groups",
    "uncertainty_pct",
    "repetition",
    "utility",
    "throughput_pct",
    "mean_delay_ms",
    "mean_power_mj",
    "mean_price_usd",
    "gain_price_pct",
    "gain_power_pct",
    "gain_delay_pct",
    "fixed_dimension",
    "seed",
];

fn csv_err(e: csv::Error) -> Error {
    Error::Io { path: "<csv>".into(), message: e.to_string() }
}

/// One header line plus one line per row; empty cells for missing values.
pub fn to_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(CSV_HEADER).map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io { path: "<csv>".into(), message: e.to_string() })?;
    String::from_utf8(bytes).map_err(|e| Error::Io { path: "<csv>".into(), message: e.to_string() })
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
pub fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

fn cell(values: &[f64], digits: usize) -> String {
    match mean_sd(values) {
        Some((m, sd)) => format!("{m:.digits$} ± {sd:.digits$}"),
        None => "-".into(),
    }
}

type Key = (u32, u32, u64, String, Option<Dimension>);

fn order_of(alg: &str) -> usize {
    ["music", "gmusic", "rsa", "greedy", "bruteforce"].iter().position(|a| *a == alg).unwrap_or(usize::MAX)
}

/// Mean ± sample stddev over repetitions per (users, groups, uncertainty,
/// algorithm), then a gain matrix of algorithm by fixed dimension when gain
/// rows are present. Rows with an infeasible allocation are counted below
/// each table.
pub fn to_table(rows: &[MetricsRow]) -> String {
    let mut groups: BTreeMap<Key, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.users, r.groups, r.uncertainty_pct.to_bits(), r.algorithm.clone(), r.fixed_dimension);
        groups.entry(key).or_default().push(r);
    }
    let mut keys: Vec<&Key> = groups.keys().collect();
    keys.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(f64::from_bits(a.2).total_cmp(&f64::from_bits(b.2)))
            .then(order_of(&a.3).cmp(&order_of(&b.3)))
            .then(a.3.cmp(&b.3))
    });

    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>5} {:>6} {:>6} {:<10} {:>4} {:>17} {:>17} {:>21} {:>21} {:>17}",
        "users", "groups", "unc%", "algorithm", "reps", "utility", "throughput %", "delay ms", "power mJ", "price $"
    );
    let mut infeasible = 0;
    for k in keys.iter().filter(|k| k.4.is_none()) {
        let rs = &groups[*k];
        let col = |f: &dyn Fn(&MetricsRow) -> Option<f64>| rs.iter().filter_map(|r| f(r)).collect::<Vec<f64>>();
        infeasible += rs.iter().filter(|r| !r.feasible).count();
        let _ = writeln!(
            out,
            "{:>5} {:>6} {:>6} {:<10} {:>4} {:>17} {:>17} {:>21} {:>21} {:>17}",
            k.0,
            k.1,
            f64::from_bits(k.2),
            k.3,
            rs.len(),
            cell(&col(&|r| Some(r.utility)), 4),
            cell(&col(&|r| r.throughput_pct), 2),
            cell(&col(&|r| Some(r.mean_delay_ms)), 1),
            cell(&col(&|r| Some(r.mean_power_mj)), 1),
            cell(&col(&|r| Some(r.mean_price_usd)), 4),
        );
    }
    if infeasible > 0 {
        let _ = writeln!(out, "{infeasible} run(s) ended with an infeasible allocation");
    }

    let gain_keys: Vec<&&Key> = keys.iter().filter(|k| k.4.is_some()).collect();
    if !gain_keys.is_empty() {
        let _ = writeln!(out, "\n2-tier gain over public-only (%)");
        let _ = writeln!(
            out,
            "{:>5} {:>6} {:>6} {:<10} {:<7} {:>17} {:>17} {:>17}",
            "users", "groups", "unc%", "algorithm", "fixed", "price", "power", "delay"
        );
        for k in gain_keys {
            let rs = &groups[*k];
            let col = |f: &dyn Fn(&MetricsRow) -> Option<f64>| rs.iter().filter_map(|r| f(r)).collect::<Vec<f64>>();
            let _ = writeln!(
                out,
                "{:>5} {:>6} {:>6} {:<10} {:<7} {:>17} {:>17} {:>17}",
                k.0,
                k.1,
                f64::from_bits(k.2),
                k.3,
                k.4.map_or("", Dimension::name),
                cell(&col(&|r| r.gain_price_pct), 2),
                cell(&col(&|r| r.gain_power_pct), 2),
                cell(&col(&|r| r.gain_delay_pct), 2),
            );
        }
    }
    out
}
