//! Experiment reports and their csv / markdown / json renderings.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vfl_incentive_core::{NormalizationLog, Rule, TrainingConfig};

use crate::config::Variant;
use crate::error::{Error, Result};
use crate::pipeline::BudgetSplit;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowCounts {
    pub input: usize,
    pub missing_dropped: usize,
    pub duplicates_dropped: usize,
    pub train: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoalitionScore {
    pub mask: usize,
    pub parties: Vec<String>,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub baseline: f64,
    pub grand: f64,
    /// Every coalition trained, by ascending mask.
    pub coalitions: Vec<CoalitionScore>,
}

/// Outcome of one experiment. Money-like quantities are F1 percentage points,
/// except `budget` which is in currency units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationReport {
    pub description: String,
    pub dataset: String,
    pub variant: Variant,
    pub rule: Rule,
    pub active: String,
    /// Passive parties; `claims`, `payouts` and `shapley` follow this order.
    pub parties: Vec<String>,
    pub rows: RowCounts,
    pub scores: ScoreSummary,
    /// Raw estate, possibly negative.
    pub estate: f64,
    pub clamped_estate: f64,
    pub claims: Vec<f64>,
    pub payouts: Vec<f64>,
    pub payout_percent: Vec<f64>,
    pub surplus_paid: f64,
    pub undistributed: f64,
    pub normalization: NormalizationLog,
    pub federation_beneficial: bool,
    pub shapley: Option<Vec<f64>>,
    pub budget: Option<BudgetSplit>,
    pub models_trained: usize,
    pub training: TrainingConfig,
    pub split_ratio: f64,
    pub seed: u64,
    pub notes: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [
        ReportFormat::Json,
        ReportFormat::Csv,
        ReportFormat::Markdown,
    ];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
            ReportFormat::Json => "json",
        }
    }
}

/// Two decimals, never `-0.00`.
pub fn fmt2(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn header(report: &AllocationReport) -> Vec<String> {
    let mut cols = vec!["Description".to_string(), "Estate".to_string()];
    for prefix in ["Claim", "Payout"] {
        cols.extend(report.parties.iter().map(|p| format!("{prefix} {p}")));
    }
    if report.shapley.is_some() {
        cols.extend(report.parties.iter().map(|p| format!("Shapley {p}")));
    }
    cols
}

fn row(report: &AllocationReport) -> Vec<String> {
    let description = if report.description.is_empty() {
        report.dataset.clone()
    } else {
        report.description.clone()
    };
    let mut cells = vec![description, fmt2(report.estate)];
    cells.extend(report.claims.iter().map(|&x| fmt2(x)));
    cells.extend(report.payouts.iter().map(|&x| fmt2(x)));
    if let Some(phi) = &report.shapley {
        cells.extend(phi.iter().map(|&x| fmt2(x)));
    }
    cells
}

pub fn emit_report(report: &AllocationReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(header(report))?;
            w.write_record(row(report))?;
            let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
        }
        ReportFormat::Markdown => Ok(markdown(report)),
    }
}

fn markdown(report: &AllocationReport) -> String {
    let mut out = String::new();
    let head = header(report);
    let _ = writeln!(out, "| {} |", head.join(" | "));
    let align: Vec<&str> = head
        .iter()
        .enumerate()
        .map(|(i, _)| if i == 0 { "---" } else { "---:" })
        .collect();
    let _ = writeln!(out, "| {} |", align.join(" | "));
    let _ = writeln!(out, "| {} |", row(report).join(" | "));

    if let Some(b) = &report.budget {
        let _ = writeln!(
            out,
            "\nBudget {} ({} unallocated)\n",
            fmt2(b.budget),
            fmt2(b.residual)
        );
        let _ = writeln!(out, "| Party | Payout % | Share |");
        let _ = writeln!(out, "|---|---:|---:|");
        for ((p, pct), share) in report
            .parties
            .iter()
            .zip(&report.payout_percent)
            .zip(&b.shares)
        {
            let _ = writeln!(out, "| {p} | {} | {} |", fmt2(*pct), fmt2(*share));
        }
    }
    if !report.normalization.clamped_claims.is_empty() {
        let _ = writeln!(
            out,
            "\nClamped claims: {}",
            report.normalization.clamped_claims.join(", ")
        );
    }
    if !report.notes.is_empty() {
        out.push('\n');
        for note in &report.notes {
            let _ = writeln!(out, "- {note}");
        }
    }
    out
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents)
        .map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Writes `report.json`, `report.csv` and `report.md` into `dir`.
pub fn write_reports(report: &AllocationReport, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    ReportFormat::ALL
        .iter()
        .map(|&f| {
            let path = dir.join(format!("report.{}", f.extension()));
            write_atomic(&path, emit_report(report, f)?.as_bytes())?;
            Ok(path)
        })
        .collect()
}
