//! CSV exports of estimates and reports.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use flowinfer_core::baselines::{ComparisonReport, MeasureCorrelations};
use flowinfer_core::domain::CountryRegistry;
use flowinfer_core::estimation::{ElasticityReport, UncertaintyEstimate};
use flowinfer_core::synthetic::SweepRow;
use flowinfer_core::training::LossBreakdown;

use crate::dataset::num;
use crate::error::InputError;

pub const FLOWS_FILE: &str = "flows.csv";
pub const STOCKS_FILE: &str = "stocks.csv";
pub const NET_FILE: &str = "net.csv";

pub const FLOWS_COLS: [&str; 6] = ["year", "birth", "origin", "destination", "mean", "std"];
pub const STOCKS_COLS: [&str; 5] = ["year", "birth", "residence", "mean", "std"];
pub const NET_COLS: [&str; 4] = ["year", "country", "mean", "std"];

fn write(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// `(flows.csv, stocks.csv, net.csv)` of an estimate. Flows skip `j == k`.
pub fn estimate_files(est: &UncertaintyEstimate, registry: &CountryRegistry) -> [(&'static str, Vec<u8>); 3] {
    let n = est.n;
    let code = |i: usize| registry.code(i).to_string();
    let mut flows = Vec::new();
    for (year, s) in est.years.iter().zip(&est.flows) {
        for idx in 0..n * n * n {
            let (i, j, k) = (idx / (n * n), (idx / n) % n, idx % n);
            if j != k {
                flows.push(vec![year.to_string(), code(i), code(j), code(k), num(s.mean[idx]), num(s.std[idx])]);
            }
        }
    }
    let mut stocks = Vec::new();
    for (year, s) in est.stock_years().iter().zip(&est.stocks) {
        for c in 0..n * n {
            stocks.push(vec![year.to_string(), code(c / n), code(c % n), num(s.mean[c]), num(s.std[c])]);
        }
    }
    let mut net = Vec::new();
    for (year, s) in est.years.iter().zip(&est.net) {
        for c in 0..n {
            net.push(vec![year.to_string(), code(c), num(s.mean[c]), num(s.std[c])]);
        }
    }
    [
        (FLOWS_FILE, write(&FLOWS_COLS, flows)),
        (STOCKS_FILE, write(&STOCKS_COLS, stocks)),
        (NET_FILE, write(&NET_COLS, net)),
    ]
}

/// One exported row: key columns as strings, then mean and std.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportRow {
    pub key: Vec<String>,
    pub mean: f64,
    pub std: f64,
}

/// Read an exported file back, checking its header against `header`.
pub fn read_export(path: &Path, header: &[&str]) -> Result<Vec<ExportRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| InputError(format!("{}: {e}", path.display())))?;
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if found.iter().map(String::as_str).ne(header.iter().copied()) {
        return Err(InputError(format!("{}: expected columns {header:?}, found {found:?}", path.display())).into());
    }
    let keys = header.len() - 2;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse = |c: usize| -> Result<f64> {
            rec[c].parse().map_err(|e| InputError(format!("{}:{line}: {e}", path.display())).into())
        };
        out.push(ExportRow { key: (0..keys).map(|c| rec[c].to_string()).collect(), mean: parse(keys)?, std: parse(keys + 1)? });
    }
    Ok(out)
}

pub fn loss_history(history: &[LossBreakdown]) -> Vec<u8> {
    let rows = history
        .iter()
        .enumerate()
        .map(|(e, l)| vec![e.to_string(), num(l.stock), num(l.net), num(l.flow), num(l.total)]);
    write(&["epoch", "stock", "mu", "flow", "total"], rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Rows are methods, columns the correlation measures; undefined values empty.
pub fn comparison_report(report: &ComparisonReport) -> Vec<u8> {
    let mut header = vec!["method"];
    header.extend(MeasureCorrelations::NAMES);
    let rows = report.rows.iter().map(|(method, m)| {
        let mut r = vec![method.clone()];
        r.extend(m.values().iter().map(|v| opt(*v)));
        r
    });
    write(&header, rows)
}

pub fn elasticity_report(report: &ElasticityReport) -> Vec<u8> {
    let rows = report.entries.iter().map(|e| vec![e.component.clone(), num(e.mean), num(e.std), e.count.to_string()]);
    write(&["component", "mean", "std", "count"], rows)
}

pub fn sweep_report(rows: &[SweepRow]) -> Vec<u8> {
    let header = [
        "label", "depth", "width", "activation", "latent_dim", "lambda", "median_relative_error", "flow_correlation",
        "mean_train_corridor_r", "mean_test_corridor_r", "final_loss", "error",
    ];
    let out = rows.iter().map(|r| {
        let p = &r.point;
        let mut row = vec![
            p.label.clone(),
            p.arch.depth.to_string(),
            p.arch.hidden_width.to_string(),
            p.arch.hidden_activation.name().to_string(),
            p.arch.latent_dim.to_string(),
            num(p.config.lambda_flow),
        ];
        match &r.outcome {
            Ok((m, loss)) => row.extend([
                num(m.median_relative_error),
                opt(m.flow_correlation),
                opt(m.mean_train_corridor_r),
                opt(m.mean_test_corridor_r),
                num(*loss),
                String::new(),
            ]),
            Err(e) => row.extend([String::new(), String::new(), String::new(), String::new(), String::new(), e.clone()]),
        }
        row
    });
    write(&header, out)
}

/// Mean flows of an export grouped back into `(year, birth, origin, destination)`.
pub fn mean_by_key(rows: &[ExportRow]) -> BTreeMap<Vec<String>, f64> {
    rows.iter().map(|r| (r.key.clone(), r.mean)).collect()
}
