//! Text and CSV renderings of evaluation, audit, ablation and step logs.

use std::fmt::Write;

use pointseg_core::labels::PrecisionReport;
use pointseg_core::losses::TermStatus;
use pointseg_core::metrics::EvalReport;
use pointseg_core::pipeline::{AblationTable, StepRecord};

use crate::error::Result;

/// One row per image plus a trailing `mean` row.
pub fn eval_csv(report: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "miou", "dsc", "hd", "hd_penalized"])?;
    for r in &report.rows {
        w.write_record([
            r.id.clone(),
            format!("{:.6}", r.iou),
            format!("{:.6}", r.dice),
            format!("{:.4}", r.hd),
            (r.hd_penalized as u8).to_string(),
        ])?;
    }
    let penalized = report.rows.iter().filter(|r| r.hd_penalized).count();
    w.write_record([
        "mean".to_string(),
        format!("{:.6}", report.mean_iou),
        format!("{:.6}", report.mean_dice),
        format!("{:.4}", report.mean_hd),
        penalized.to_string(),
    ])?;
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x}"))
}

fn term(s: &TermStatus) -> (String, String, u8) {
    match s {
        TermStatus::Inactive => ("-".into(), "-".into(), 0),
        TermStatus::Skipped => ("0".into(), "0/0/0".into(), 1),
        TermStatus::Computed { value, counts } => {
            (format!("{value}"), format!("{}/{}/{}", counts.0, counts.1, counts.2), 0)
        }
    }
}

/// Machine-parsable `key=value` line for one optimizer step.
pub fn step_line(s: &StepRecord) -> String {
    let (c1, n1, skip1) = term(&s.pixel);
    let (c3, n3, skip3) = term(&s.patch);
    format!(
        "iter={} epoch={} batch={} l_box={} l_a={} l_c1={c1} l_c3={c3} l_all={} n_c1={n1} n_c3={n3} skip_c1={skip1} skip_c3={skip3}",
        s.iteration,
        s.epoch,
        s.batch,
        opt(s.box_dice),
        opt(s.alignment),
        s.total,
    )
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{:.2}%", 100.0 * x))
}

/// Label-precision table: one row per label kind, fg/bg columns per dataset.
pub fn audit_table(datasets: &[(&str, PrecisionReport, PrecisionReport)]) -> String {
    let mut out = String::new();
    let mut header = format!("{:<14}", "label");
    for (name, _, _) in datasets {
        write!(header, " | {:>10} {:>10}", format!("{name} fg"), format!("{name} bg")).unwrap();
    }
    writeln!(out, "{header}").unwrap();
    writeln!(out, "{}", "-".repeat(header.len())).unwrap();
    for (label, pick) in [("box", 0usize), ("pure fg/bg", 1)] {
        write!(out, "{label:<14}").unwrap();
        for (_, box_report, pure) in datasets {
            let r = if pick == 0 { box_report } else { pure };
            write!(out, " | {:>10} {:>10}", pct(r.fg_precision), pct(r.bg_precision)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Ablation table with one row per preset.
pub fn ablation_table(table: &AblationTable) -> String {
    let mut out = String::new();
    writeln!(out, "{:<6} {:<32} {:>8} {:>8} {:>5}", "preset", "strategy", "DSC(%)", "HD(px)", "runs").unwrap();
    for row in &table.rows {
        let fmt = |v: Option<f64>, scale: f64| v.map_or_else(|| "failed".into(), |x| format!("{:.2}", x * scale));
        writeln!(
            out,
            "{:<6} {:<32} {:>8} {:>8} {:>5}",
            row.preset.to_string(),
            row.preset.describe(),
            fmt(row.mean_dice(), 100.0),
            fmt(row.mean_hd(), 1.0),
            row.runs.len(),
        )
        .unwrap();
        for (seed, msg) in &row.failures {
            writeln!(out, "       seed {seed} failed: {msg}").unwrap();
        }
    }
    out
}
