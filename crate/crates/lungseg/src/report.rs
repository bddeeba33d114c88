//! Evaluation CSVs: a `slice_id,dice` table followed by a one-row footer
//! block `mean_dice,tp,fp,tn,fn,f1,rotations,threshold`.

use std::path::Path;

use lungseg_core::eval::{Confusion, MetricsReport};

use crate::error::{Error, Result};

pub const HEADER: [&str; 2] = ["slice_id", "dice"];
pub const FOOTER: [&str; 8] = ["mean_dice", "tp", "fp", "tn", "fn", "f1", "rotations", "threshold"];

#[derive(Debug, Clone, PartialEq)]
pub struct Footer {
    pub mean_dice: f64,
    pub confusion: Confusion,
    pub f1: f64,
    pub rotations: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportCsv {
    pub slices: Vec<(String, f64)>,
    pub footer: Footer,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

/// Reals are written in shortest round-trip form so the file reparses to
/// the same values.
pub fn encode(report: &MetricsReport) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    let here = Path::new("<report>");
    w.write_record(HEADER).map_err(|e| csv_err(here, e))?;
    for (id, d) in report.slice_ids.iter().zip(&report.per_slice_dice) {
        w.write_record([id.as_str(), &d.to_string()]).map_err(|e| csv_err(here, e))?;
    }
    w.write_record(FOOTER).map_err(|e| csv_err(here, e))?;
    let c = report.confusion;
    w.write_record([
        report.mean_dice.to_string(),
        c.tp.to_string(),
        c.fp.to_string(),
        c.tn.to_string(),
        c.fn_.to_string(),
        report.f1.to_string(),
        report.rotations.to_string(),
        report.threshold.to_string(),
    ])
    .map_err(|e| csv_err(here, e))?;
    w.into_inner().map_err(|e| Error::format(here, e.to_string()))
}

pub fn write_report(report: &MetricsReport, path: &Path) -> Result<()> {
    std::fs::write(path, encode(report)?).map_err(Error::io(path))
}

pub fn read_report(path: &Path) -> Result<ReportCsv> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode(path, &bytes)
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<ReportCsv> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(bytes);
    let mut records = r.records();
    let mut next = |what: &str| -> Result<csv::StringRecord> {
        records
            .next()
            .ok_or_else(|| Error::format(path, format!("missing {what}")))?
            .map_err(|e| csv_err(path, e))
    };
    let line = |rec: &csv::StringRecord| rec.position().map_or(0, |p| p.line());
    let header = next("header")?;
    if header.iter().ne(HEADER) {
        return Err(Error::format(path, format!("line 1: expected header {}", HEADER.join(","))));
    }
    let mut slices = Vec::new();
    let footer_row = loop {
        let rec = next("footer")?;
        if rec.iter().eq(FOOTER) {
            break next("footer values")?;
        }
        if rec.len() != 2 {
            return Err(Error::format(path, format!("line {}: expected slice_id,dice", line(&rec))));
        }
        let dice: f64 = rec[1]
            .parse()
            .ok()
            .filter(|d| (0.0..=1.0).contains(d))
            .ok_or_else(|| Error::format(path, format!("line {}: bad dice value {:?}", line(&rec), &rec[1])))?;
        slices.push((rec[0].to_string(), dice));
    };
    if footer_row.len() != FOOTER.len() {
        return Err(Error::format(path, format!("line {}: footer needs {} values", line(&footer_row), FOOTER.len())));
    }
    let at = line(&footer_row);
    let real = |i: usize| -> Result<f64> {
        footer_row[i].parse().map_err(|_| Error::format(path, format!("line {at}: bad {} value", FOOTER[i])))
    };
    let count = |i: usize| -> Result<usize> {
        footer_row[i].parse().map_err(|_| Error::format(path, format!("line {at}: bad {} value", FOOTER[i])))
    };
    let footer = Footer {
        mean_dice: real(0)?,
        confusion: Confusion { tp: count(1)?, fp: count(2)?, tn: count(3)?, fn_: count(4)? },
        f1: real(5)?,
        rotations: count(6)?,
        threshold: real(7)?,
    };
    if let Some(extra) = records.next() {
        let rec = extra.map_err(|e| csv_err(path, e))?;
        return Err(Error::format(path, format!("line {}: content after the footer", line(&rec))));
    }
    Ok(ReportCsv { slices, footer })
}

/// One row per run, sorted by mean dice (best first; ties keep input order).
pub fn comparison_table(runs: &[(String, ReportCsv)]) -> String {
    let mut order: Vec<&(String, ReportCsv)> = runs.iter().collect();
    order.sort_by(|a, b| b.1.footer.mean_dice.total_cmp(&a.1.footer.mean_dice));
    let width = order.iter().map(|(n, _)| n.len()).max().unwrap_or(3).max(3);
    let mut out = format!(
        "{:<width$}  {:>9}  {:>9}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>9}\n",
        "run", "rotations", "threshold", "tp", "fp", "tn", "fn", "f1", "mean_dice"
    );
    for (name, r) in order {
        let f = &r.footer;
        let c = f.confusion;
        out.push_str(&format!(
            "{name:<width$}  {:>9}  {:>9}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6.4}  {:>9.4}\n",
            f.rotations, f.threshold, c.tp, c.fp, c.tn, c.fn_, f.f1, f.mean_dice
        ));
    }
    out
}
