//! Pass-rate statistics, PPA comparisons, and report emission.
//!
//! Pass rate is m/n over the repetition rounds, where only functionally
//! passing rounds count as successes (loop exhaustion is a failure). PPA
//! reductions against a baseline are `100 * (baseline - ours) / baseline`,
//! defined only at equal clock period; negative values mean ours is worse.
//! Reports are byte-deterministic: the same workspace always renders the
//! same bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::toolchain::SynthReport;
use crate::workspace::{RunRecord, Stage, StageOutcome, Workspace, WorkspaceError, TOP_UNIT};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot compute pass rate over an empty outcome list")]
    EmptyOutcomes,
    #[error("reports not comparable: clock period {ours} ns vs {baseline} ns")]
    PeriodMismatch { ours: f64, baseline: f64 },
    #[error("degenerate baseline: {0}")]
    DegenerateBaseline(String),
    #[error("no completed rounds recorded; nothing to report")]
    NoRounds,
    #[error("workspace failure: {0}")]
    Workspace(#[from] WorkspaceError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRateStats {
    pub label: String,
    pub m: u32,
    pub n: u32,
    pub rate_percent: f64,
}

/// m counts Pass only; Fail and Exhausted both count against.
pub fn compute_pass_rate(label: &str, outcomes: &[StageOutcome]) -> Result<PassRateStats, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptyOutcomes);
    }
    let m = outcomes.iter().filter(|o| **o == StageOutcome::Pass).count() as u32;
    let n = outcomes.len() as u32;
    Ok(PassRateStats {
        label: label.to_string(),
        m,
        n,
        rate_percent: 100.0 * f64::from(m) / f64::from(n),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DesignSource {
    Agent,
    Hls,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpaComparison {
    pub benchmark: String,
    pub source: DesignSource,
    pub report: SynthReport,
    pub clock_period_ns: f64,
    pub reduction_vs_hls_area_percent: Option<f64>,
    pub reduction_vs_hls_power_percent: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reduction {
    pub area_percent: f64,
    pub power_percent: f64,
}

/// `100 * (baseline - ours) / baseline` per metric, at equal clock period.
pub fn compute_reduction(
    ours: &SynthReport,
    ours_clock_ns: f64,
    baseline: &SynthReport,
    baseline_clock_ns: f64,
) -> Result<Reduction, MetricsError> {
    if (ours_clock_ns - baseline_clock_ns).abs() > 1e-12 {
        return Err(MetricsError::PeriodMismatch {
            ours: ours_clock_ns,
            baseline: baseline_clock_ns,
        });
    }
    if baseline.area_um2 <= 0.0 {
        return Err(MetricsError::DegenerateBaseline(format!(
            "baseline area {} um^2",
            baseline.area_um2
        )));
    }
    if baseline.total_power_mw <= 0.0 {
        return Err(MetricsError::DegenerateBaseline(format!(
            "baseline power {} mW",
            baseline.total_power_mw
        )));
    }
    Ok(Reduction {
        area_percent: 100.0 * (baseline.area_um2 - ours.area_um2) / baseline.area_um2,
        power_percent: 100.0 * (baseline.total_power_mw - ours.total_power_mw)
            / baseline.total_power_mw,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocStats {
    pub source: String,
    pub total_lines: u64,
    pub code_lines: u64,
}

/// Count HDL lines; code lines exclude blank lines, `//` lines, and lines
/// that are entirely inside (or consist of) block comments.
pub fn count_hdl_lines(source: &str, text: &str) -> LocStats {
    let mut total = 0u64;
    let mut code = 0u64;
    let mut in_block = false;
    for line in text.lines() {
        total += 1;
        let mut has_code = false;
        let mut rest = line;
        loop {
            if in_block {
                match rest.find("*/") {
                    Some(i) => {
                        in_block = false;
                        rest = &rest[i + 2..];
                    }
                    None => break,
                }
            } else {
                let line_comment = rest.find("//");
                let block_start = rest.find("/*");
                let cut = match (line_comment, block_start) {
                    (Some(l), Some(b)) => l.min(b),
                    (Some(l), None) => l,
                    (None, Some(b)) => b,
                    (None, None) => rest.len(),
                };
                if !rest[..cut].trim().is_empty() {
                    has_code = true;
                }
                match (line_comment, block_start) {
                    (Some(l), Some(b)) if l < b => break, // rest of line is //
                    (Some(_), None) => break,
                    (_, Some(b)) => {
                        in_block = true;
                        rest = &rest[b + 2..];
                    }
                    (None, None) => break,
                }
            }
        }
        if has_code {
            code += 1;
        }
    }
    LocStats {
        source: source.to_string(),
        total_lines: total,
        code_lines: code,
    }
}

/// Per-round, per-stage outcomes distilled from the run records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub benchmark: String,
    pub decomposition: PassRateStats,
    pub syntax: PassRateStats,
    pub submodule_functional: PassRateStats,
    pub top_functional: PassRateStats,
    pub ppa: Vec<PpaComparison>,
    pub loc: Vec<LocStats>,
}

fn round_outcome(records: &[&RunRecord], stage: Stage, units: &BTreeSet<&str>) -> StageOutcome {
    // A round passes a stage when every unit expected at that stage passed
    // at least once in the round (latest record per unit wins).
    let mut per_unit: BTreeMap<&str, StageOutcome> = BTreeMap::new();
    for r in records.iter().filter(|r| r.stage == stage) {
        per_unit.insert(r.unit.as_str(), r.status);
    }
    if per_unit.is_empty() {
        return StageOutcome::Pending;
    }
    let all_pass = units
        .iter()
        .all(|u| per_unit.get(u).copied() == Some(StageOutcome::Pass));
    if all_pass {
        StageOutcome::Pass
    } else {
        StageOutcome::Fail
    }
}

/// Fold the run records into per-stage pass rates across rounds.
pub fn summarize_records(
    benchmark: &str,
    records: &[RunRecord],
    submodule_ids: &[String],
) -> Result<BenchmarkSummary, MetricsError> {
    let rounds: BTreeSet<u32> = records.iter().map(|r| r.round_index).collect();
    if rounds.is_empty() {
        return Err(MetricsError::NoRounds);
    }
    let sub_units: BTreeSet<&str> = submodule_ids.iter().map(|s| s.as_str()).collect();
    let top_unit: BTreeSet<&str> = [TOP_UNIT].into();
    let mut decomposition = Vec::new();
    let mut syntax = Vec::new();
    let mut submodule_functional = Vec::new();
    let mut top_functional = Vec::new();
    for round in &rounds {
        let in_round: Vec<&RunRecord> =
            records.iter().filter(|r| r.round_index == *round).collect();
        decomposition.push(round_outcome(&in_round, Stage::Decompose, &top_unit));
        syntax.push(round_outcome(&in_round, Stage::SyntaxRepair, &sub_units));
        submodule_functional.push(round_outcome(&in_round, Stage::SubmoduleVerify, &sub_units));
        top_functional.push(round_outcome(&in_round, Stage::TopVerify, &top_unit));
    }
    Ok(BenchmarkSummary {
        benchmark: benchmark.to_string(),
        decomposition: compute_pass_rate("decomposition", &decomposition)?,
        syntax: compute_pass_rate("syntax", &syntax)?,
        submodule_functional: compute_pass_rate("submodule functional", &submodule_functional)?,
        top_functional: compute_pass_rate("top functional", &top_functional)?,
        ppa: Vec::new(),
        loc: Vec::new(),
    })
}

const PPA_FILE: &str = "reports/ppa.json";
const LOC_FILE: &str = "reports/loc.json";
pub const SUMMARY_TEXT_FILE: &str = "reports/summary.txt";
pub const SUMMARY_STRUCTURED_FILE: &str = "reports/summary";

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.2}"),
        None => "n/a".to_string(),
    }
}

fn render_text_table(s: &BenchmarkSummary) -> String {
    let mut out = String::new();
    writeln!(out, "benchmark: {}", s.benchmark).unwrap();
    writeln!(out, "pass rates (m/n, percent):").unwrap();
    for p in [
        &s.decomposition,
        &s.syntax,
        &s.submodule_functional,
        &s.top_functional,
    ] {
        writeln!(
            out,
            "  {:<24} {:>2}/{:<2} {:>6.2}%",
            p.label, p.m, p.n, p.rate_percent
        )
        .unwrap();
    }
    writeln!(out, "ppa:").unwrap();
    if s.ppa.is_empty() {
        writeln!(
            out,
            "  {:<8} {:>10} {:>10} {:>10} {:>10}",
            "source", "area_um2", "power_mw", "area_red%", "power_red%"
        )
        .unwrap();
        writeln!(out, "  {:<8} {:>10} {:>10} {:>10} {:>10}", "-", "n/a", "n/a", "n/a", "n/a")
            .unwrap();
    } else {
        writeln!(
            out,
            "  {:<8} {:>10} {:>10} {:>10} {:>10}",
            "source", "area_um2", "power_mw", "area_red%", "power_red%"
        )
        .unwrap();
        for p in &s.ppa {
            writeln!(
                out,
                "  {:<8} {:>10.2} {:>10.3} {:>10} {:>10}",
                format!("{:?}", p.source),
                p.report.area_um2,
                p.report.total_power_mw,
                fmt_opt(p.reduction_vs_hls_area_percent),
                fmt_opt(p.reduction_vs_hls_power_percent),
            )
            .unwrap();
        }
    }
    writeln!(out, "lines of code:").unwrap();
    if s.loc.is_empty() {
        writeln!(out, "  n/a").unwrap();
    } else {
        for l in &s.loc {
            writeln!(out, "  {:<24} total {:>5} code {:>5}", l.source, l.total_lines, l.code_lines)
                .unwrap();
        }
    }
    out
}

/// Emit `reports/summary.txt` and the structured `reports/summary`.
///
/// PPA and LOC sections come from `reports/ppa.json` / `reports/loc.json`
/// when the evaluate stage has produced them; otherwise rendered as n/a.
pub fn emit_report(ws: &Workspace) -> Result<BenchmarkSummary, MetricsError> {
    let records = ws.load_run_records()?;
    let manifest = ws.manifest();
    let mut summary =
        summarize_records(&manifest.project_name, &records, &manifest.submodule_ids)?;
    if ws.resolve(PPA_FILE).exists() {
        let text = std::fs::read_to_string(ws.resolve(PPA_FILE))?;
        summary.ppa = serde_json::from_str(&text)
            .map_err(|e| MetricsError::Workspace(WorkspaceError::Corrupt(format!("ppa.json: {e}"))))?;
        summary.ppa.sort_by_key(|p| (p.benchmark.clone(), p.source));
    }
    if ws.resolve(LOC_FILE).exists() {
        let text = std::fs::read_to_string(ws.resolve(LOC_FILE))?;
        summary.loc = serde_json::from_str(&text)
            .map_err(|e| MetricsError::Workspace(WorkspaceError::Corrupt(format!("loc.json: {e}"))))?;
        summary.loc.sort_by(|a, b| a.source.cmp(&b.source));
    }
    let structured = serde_json::to_string_pretty(&summary)
        .map_err(|e| MetricsError::Workspace(WorkspaceError::Corrupt(e.to_string())))?;
    ws.write_atomic(SUMMARY_STRUCTURED_FILE, structured.as_bytes())?;
    ws.write_atomic(SUMMARY_TEXT_FILE, render_text_table(&summary).as_bytes())?;
    Ok(summary)
}

/// Persist PPA rows for later report emission (evaluate stage).
pub fn save_ppa(ws: &Workspace, rows: &[PpaComparison]) -> Result<(), MetricsError> {
    let mut rows = rows.to_vec();
    rows.sort_by_key(|p| (p.benchmark.clone(), p.source));
    let text = serde_json::to_string_pretty(&rows)
        .map_err(|e| MetricsError::Workspace(WorkspaceError::Corrupt(e.to_string())))?;
    ws.write_atomic(PPA_FILE, text.as_bytes())?;
    Ok(())
}

/// Persist LOC rows for later report emission (evaluate stage).
pub fn save_loc(ws: &Workspace, rows: &[LocStats]) -> Result<(), MetricsError> {
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| a.source.cmp(&b.source));
    let text = serde_json::to_string_pretty(&rows)
        .map_err(|e| MetricsError::Workspace(WorkspaceError::Corrupt(e.to_string())))?;
    ws.write_atomic(LOC_FILE, text.as_bytes())?;
    Ok(())
}
