use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::run::{RunReport, SavingsTable};
use crate::battery::write_ledger_csv;
use crate::controller::{write_decision_csv, Algorithm, DecisionRecord, DECISION_HEADER};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Text,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "text" => Ok(ReportFormat::Text),
            other => Err(Error::Config(format!(
                "unknown report format `{other}`, expected csv or text"
            ))),
        }
    }
}

/// `<dir>/<stem>.<suffix>.csv` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}.csv"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub const COST_HEADER: [&str; 16] = [
    "slot",
    "hour",
    "theta_cnt",
    "theta_swt",
    "theta_off",
    "theta_lnk",
    "theta_dr",
    "theta_cc",
    "theta_mec",
    "theta_comm",
    "theta_edge",
    "xi",
    "fallback",
    "emergency_purchase",
    "backlog",
    "violations",
];

/// Summary lines as `key, value` pairs.
pub fn summary(report: &RunReport) -> Vec<(String, String)> {
    use super::run::Metric::*;
    let mut out = vec![
        ("algorithm".to_string(), report.algorithm.to_string()),
        ("n_bs".into(), report.n_bs.to_string()),
        ("seed".into(), report.seed.to_string()),
        ("slots".into(), report.rows.len().to_string()),
        ("theta_mec_total".into(), report.total(Mec).to_string()),
        ("theta_comm_total".into(), report.total(Comm).to_string()),
        ("theta_edge_total".into(), report.total(Edge).to_string()),
        ("violations".into(), report.violations.len().to_string()),
        ("fallback_slots".into(), report.fallbacks().to_string()),
        (
            "emergency_purchase".into(),
            report.emergency_purchase().to_string(),
        ),
        ("evaluations".into(), report.evaluations.to_string()),
    ];
    if let Some(s) = report.savings {
        out.push(("mean_savings_mec_pct".into(), s.mec.to_string()));
        out.push(("mean_savings_comm_pct".into(), s.comm.to_string()));
        out.push(("mean_savings_edge_pct".into(), s.edge.to_string()));
    }
    for (name, values) in &report.rmse {
        for (k, v) in values.iter().enumerate() {
            out.push((format!("rmse_{name}_t{}", k + 1), v.to_string()));
        }
    }
    out
}

pub fn render_text(report: &RunReport) -> String {
    let mut s = String::new();
    for (k, v) in summary(report) {
        let _ = writeln!(s, "{k:<24} {v}");
    }
    if let Some(sv) = report.savings {
        let _ = writeln!(
            s,
            "mean savings vs max-provision: MEC {:.2}%, COMM {:.2}%, EDGE {:.2}%",
            sv.mec, sv.comm, sv.edge
        );
    }
    for v in report.violations.iter().take(20) {
        let _ = writeln!(s, "violation {v}");
    }
    s
}

pub fn render_savings(table: &SavingsTable) -> String {
    let mut s = String::from("hour,savings_pct\n");
    for (h, v) in &table.hourly {
        let _ = writeln!(s, "{h},{v}");
    }
    let _ = writeln!(
        s,
        "# mean savings ({}): {:.4}%",
        table.metric, table.overall
    );
    s
}

/// Write a run to disk.
///
/// `csv` writes the decision log to `path` and the per-slot costs, the
/// energy ledger and the summary to `<stem>.costs.csv`, `<stem>.ledger.csv`
/// and `<stem>.summary.csv` beside it. `text` writes the summary only.
pub fn emit_report(report: &RunReport, path: &Path, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Text => {
            std::fs::write(path, render_text(report)).map_err(|e| Error::io(path, e))
        }
        ReportFormat::Csv => {
            write_decision_csv(create(path)?, &report.decisions()).map_err(csv_err(path))?;

            let costs = sibling(path, "costs");
            let mut w = csv::Writer::from_writer(create(&costs)?);
            let err = csv_err(&costs);
            w.write_record(COST_HEADER).map_err(&err)?;
            for r in &report.rows {
                let c = &r.cost;
                w.write_record([
                    r.slot.to_string(),
                    r.hour().to_string(),
                    c.cnt.to_string(),
                    c.swt.to_string(),
                    c.off.to_string(),
                    c.lnk.to_string(),
                    c.dr.to_string(),
                    c.cc.to_string(),
                    c.mec.to_string(),
                    c.comm.to_string(),
                    c.edge.to_string(),
                    r.xi.to_string(),
                    u8::from(r.fallback).to_string(),
                    r.emergency_purchase.to_string(),
                    r.backlog.to_string(),
                    r.violations.to_string(),
                ])
                .map_err(&err)?;
            }
            w.flush().map_err(|e| Error::io(&costs, e))?;

            let ledger = sibling(path, "ledger");
            write_ledger_csv(create(&ledger)?, &report.ledger).map_err(csv_err(&ledger))?;

            let summary_path = sibling(path, "summary");
            let mut w = csv::Writer::from_writer(create(&summary_path)?);
            let err = csv_err(&summary_path);
            w.write_record(["key", "value"]).map_err(&err)?;
            for (k, v) in summary(report) {
                w.write_record([k, v]).map_err(&err)?;
            }
            w.flush().map_err(|e| Error::io(&summary_path, e))
        }
    }
}

/// Parse a decision log written by [`emit_report`].
pub fn read_decisions(path: &Path) -> Result<Vec<DecisionRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(DECISION_HEADER) {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: format!("unexpected header, expected {}", DECISION_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let bad = |name: &str, v: &str| Error::Parse {
            path: path.display().to_string(),
            line: i + 2,
            msg: format!("bad {name} `{v}`"),
        };
        let f: Vec<&str> = rec.iter().collect();
        if f.len() != DECISION_HEADER.len() {
            return Err(bad("row", &f.join(",")));
        }
        fn num<T: FromStr>(v: &str) -> Option<T> {
            v.parse().ok()
        }
        let col = |j: usize| (DECISION_HEADER[j], f[j]);
        let get = |j: usize| {
            let (name, v) = col(j);
            num::<f64>(v).ok_or_else(|| bad(name, v))
        };
        let count = |j: usize| {
            let (name, v) = col(j);
            num::<usize>(v).ok_or_else(|| bad(name, v))
        };
        out.push(DecisionRecord {
            slot: count(0)?,
            algorithm: Algorithm::from_str(f[1]).map_err(|_| bad("algorithm", f[1]))?,
            l_in: get(2)?,
            containers: count(3)?,
            drivers: count(4)?,
            nic_active: match f[5] {
                "1" => true,
                "0" => false,
                v => return Err(bad("zeta", v)),
            },
            active_bs: count(6)?,
            j: get(7)?,
            theta_edge: get(8)?,
        });
    }
    Ok(out)
}
