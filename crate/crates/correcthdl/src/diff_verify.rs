//! Differential verification and the functional enhancement loop.
//!
//! The DUT and the HLS golden reference are simulated under identical
//! stimuli, their normalized traces compared transaction-by-transaction
//! (k-th output transaction against k-th, never cycle-aligned), and every
//! discrepancy recorded in a [`MismatchLog`]. A structured repair prompt is
//! then built around the log with a four-stage reasoning scaffold, and the
//! verify-feedback-repair iteration runs until equivalence or exhaustion.
//!
//! Pass is bit-exact: the verdict is Pass iff the traces are byte-equal
//! after normalization. No tolerance is applied anywhere.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    complete_with_backoff, extract_fenced_code, render_template, GatewayError, PromptTemplate,
    Provider, ProviderConfig,
};
use crate::rag::{repair_syntax_loop, Embedder, RagError, RuleLibrary, SyntaxVerdict};
use crate::toolchain::{
    normalize_dump, run_rtl_sim, CompileOutcome, DumpDialect, HdlCompiler, SimBinding, ToolError,
};
use crate::trace::PortTrace;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("interface mismatch between traces: {}", differences.join("; "))]
    Interface { differences: Vec<String> },
    #[error("coverage error: samples present in only one trace: {}", missing.iter().map(|(i, p)| format!("({i},{p})")).collect::<Vec<_>>().join(", "))]
    Coverage { missing: Vec<(u64, String)> },
    #[error("case map does not cover sample index {0}")]
    CaseMapIncomplete(u64),
    #[error("mismatch log is empty; nothing to repair")]
    EmptyLog,
    #[error("malformed mismatch log line {line}: {text:?}")]
    MalformedLog { line: usize, text: String },
    #[error("simulation failure: {0}")]
    Tool(#[from] ToolError),
    #[error("gateway failure: {0}")]
    Gateway(#[from] GatewayError),
    #[error("syntax repair failure: {0}")]
    Rag(#[from] RagError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// One (sample, port) where DUT and golden disagree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MismatchEntry {
    pub test_case_id: u64,
    pub stimulus: String,
    pub port_name: String,
    pub actual_hex: String,
    pub expected_hex: String,
    pub sample_index: u64,
}

/// Differential comparison result for one unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MismatchLog {
    pub unit: String,
    pub entries: Vec<MismatchEntry>,
    pub total_cases: u64,
    pub failing_cases: u64,
}

impl MismatchLog {
    pub fn is_pass(&self) -> bool {
        self.entries.is_empty()
    }

    /// Serialize to the bit-exact line format:
    /// `SUMMARY <failing>/<total>` then one `CASE ...` line per entry.
    pub fn to_log_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "SUMMARY {}/{}", self.failing_cases, self.total_cases).unwrap();
        for e in &self.entries {
            writeln!(
                out,
                "CASE {} PORT {} IDX {} ACTUAL {} EXPECTED {}",
                e.test_case_id, e.port_name, e.sample_index, e.actual_hex, e.expected_hex
            )
            .unwrap();
        }
        out
    }

    /// Parse the line format back. `SLICE` annotation lines are tolerated
    /// and skipped; stimulus text is not part of the wire format.
    pub fn from_log_text(unit: &str, text: &str) -> Result<MismatchLog, DiffError> {
        let mut entries = Vec::new();
        let mut total_cases = 0;
        let mut failing_cases = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with("SLICE ") {
                continue;
            }
            if let Some(rest) = line.strip_prefix("SUMMARY ") {
                let (f, t) = rest.split_once('/').ok_or_else(|| DiffError::MalformedLog {
                    line: i + 1,
                    text: raw.to_string(),
                })?;
                failing_cases = f.trim().parse().map_err(|_| DiffError::MalformedLog {
                    line: i + 1,
                    text: raw.to_string(),
                })?;
                total_cases = t.trim().parse().map_err(|_| DiffError::MalformedLog {
                    line: i + 1,
                    text: raw.to_string(),
                })?;
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 10
                || parts[0] != "CASE"
                || parts[2] != "PORT"
                || parts[4] != "IDX"
                || parts[6] != "ACTUAL"
                || parts[8] != "EXPECTED"
            {
                return Err(DiffError::MalformedLog {
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            let parse_u64 = |s: &str| {
                s.parse::<u64>().map_err(|_| DiffError::MalformedLog {
                    line: i + 1,
                    text: raw.to_string(),
                })
            };
            entries.push(MismatchEntry {
                test_case_id: parse_u64(parts[1])?,
                stimulus: String::new(),
                port_name: parts[3].to_string(),
                sample_index: parse_u64(parts[5])?,
                actual_hex: parts[7].to_string(),
                expected_hex: parts[9].to_string(),
            });
        }
        Ok(MismatchLog {
            unit: unit.to_string(),
            entries,
            total_cases,
            failing_cases,
        })
    }
}

/// Compare two canonical traces transaction-by-transaction.
///
/// `case_map` assigns each sample index to a test case; it must cover every
/// index appearing in either trace. `stimuli` optionally renders the input
/// vector per test case for mismatch entries.
pub fn compare_traces(
    unit: &str,
    dut: &PortTrace,
    golden: &PortTrace,
    case_map: &BTreeMap<u64, u64>,
    stimuli: &BTreeMap<u64, String>,
) -> Result<MismatchLog, DiffError> {
    // Header port sets and widths must agree exactly.
    let mut differences = Vec::new();
    let dut_ports: BTreeMap<&str, u32> = dut
        .header
        .iter()
        .map(|p| (p.name.as_str(), p.width_bits))
        .collect();
    let golden_ports: BTreeMap<&str, u32> = golden
        .header
        .iter()
        .map(|p| (p.name.as_str(), p.width_bits))
        .collect();
    for (name, w) in &dut_ports {
        match golden_ports.get(name) {
            None => differences.push(format!("port {name} only in DUT trace")),
            Some(gw) if gw != w => {
                differences.push(format!("port {name} width {w} (DUT) vs {gw} (golden)"))
            }
            _ => {}
        }
    }
    for name in golden_ports.keys() {
        if !dut_ports.contains_key(name) {
            differences.push(format!("port {name} only in golden trace"));
        }
    }
    if !differences.is_empty() {
        return Err(DiffError::Interface { differences });
    }

    let dut_map = dut.value_map();
    let golden_map = golden.value_map();
    let mut missing: Vec<(u64, String)> = Vec::new();
    for key in dut_map.keys() {
        if !golden_map.contains_key(key) {
            missing.push(key.clone());
        }
    }
    for key in golden_map.keys() {
        if !dut_map.contains_key(key) {
            missing.push(key.clone());
        }
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(DiffError::Coverage { missing });
    }

    let mut entries = Vec::new();
    let mut all_cases: BTreeSet<u64> = BTreeSet::new();
    let mut failing: BTreeSet<u64> = BTreeSet::new();
    for ((idx, port), actual) in &dut_map {
        let case_id = *case_map
            .get(idx)
            .ok_or(DiffError::CaseMapIncomplete(*idx))?;
        all_cases.insert(case_id);
        let expected = &golden_map[&(*idx, port.clone())];
        if actual != expected {
            failing.insert(case_id);
            entries.push(MismatchEntry {
                test_case_id: case_id,
                stimulus: stimuli
                    .get(&case_id)
                    .cloned()
                    .unwrap_or_else(|| format!("case {case_id}")),
                port_name: port.clone(),
                actual_hex: actual.clone(),
                expected_hex: expected.clone(),
                sample_index: *idx,
            });
        }
    }
    entries.sort_by_key(|e| (e.test_case_id, e.sample_index, e.port_name.clone()));
    Ok(MismatchLog {
        unit: unit.to_string(),
        entries,
        total_cases: all_cases.len() as u64,
        failing_cases: failing.len() as u64,
    })
}

/// Identity case map covering `0..n` sample indices.
pub fn identity_case_map(n: u64) -> BTreeMap<u64, u64> {
    (0..n).map(|i| (i, i)).collect()
}

/// The four-stage reasoning scaffold of the functional repair prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepairPromptBundle {
    pub dut_code: String,
    pub c_reference: String,
    pub included_entries: Vec<MismatchEntry>,
    pub summary: String,
    pub hint_tags: Vec<DiscrepancyTag>,
    pub slice_note: Option<String>,
}

pub const REASONING_STAGES: [&str; 4] = [
    "Functional understanding: analyze the C/C++ program and summarize the intended behavior.",
    "Behavior and difference analysis: review the HDL design, correlate it with the expected functionality, and identify where the mismatching outputs originate.",
    "Root cause: explain the simulation discrepancy and name the exact construct responsible.",
    "Fix: produce the corrected Verilog module.",
];

/// Build the bundle, truncating to at most `max_entries` mismatch entries
/// (earliest test cases first). The full log is always archived separately.
pub fn build_repair_bundle(
    dut_code: &str,
    c_reference: &str,
    log: &MismatchLog,
    max_entries: usize,
) -> Result<RepairPromptBundle, DiffError> {
    if log.entries.is_empty() {
        return Err(DiffError::EmptyLog);
    }
    let included: Vec<MismatchEntry> = log.entries.iter().take(max_entries).cloned().collect();
    let summary = format!(
        "{} of {} mismatching entries shown; {} of {} test cases failing",
        included.len(),
        log.entries.len(),
        log.failing_cases,
        log.total_cases
    );
    Ok(RepairPromptBundle {
        dut_code: dut_code.to_string(),
        c_reference: c_reference.to_string(),
        included_entries: included,
        summary,
        hint_tags: classify_discrepancy(log),
        slice_note: None,
    })
}

pub fn functional_repair_template() -> PromptTemplate {
    PromptTemplate::new(
        "functional_repair",
        "The Verilog module below produces wrong outputs in differential simulation \
         against a trusted reference.\n\
         \n\
         Current (incorrect) DUT code:\n```verilog\n{dut_code}\n```\n\
         \n\
         C/C++ reference defining the intended behavior:\n```c\n{c_reference}\n```\n\
         \n\
         Mismatch log ({summary}):\n{mismatch_log}\n{slice_note}\
         Advisory discrepancy hints: {hints}\n\
         \n\
         Work through these stages in order:\n{stages}\n\
         \n\
         Return the full corrected module between triple backticks with the `verilog` tag.",
        &[
            "dut_code",
            "c_reference",
            "summary",
            "mismatch_log",
            "slice_note",
            "hints",
            "stages",
        ],
    )
}

/// Render the bundle into the final prompt text.
pub fn render_repair_prompt(bundle: &RepairPromptBundle) -> Result<String, DiffError> {
    let mut log_text = String::new();
    for e in &bundle.included_entries {
        writeln!(
            log_text,
            "CASE {} STIMULUS {} PORT {} IDX {} ACTUAL {} EXPECTED {}",
            e.test_case_id, e.stimulus, e.port_name, e.sample_index, e.actual_hex, e.expected_hex
        )
        .unwrap();
    }
    let stages = REASONING_STAGES
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    let hints = if bundle.hint_tags.is_empty() {
        "none".to_string()
    } else {
        bundle
            .hint_tags
            .iter()
            .map(|t| format!("{t:?}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let mut bindings = BTreeMap::new();
    bindings.insert("dut_code".to_string(), bundle.dut_code.clone());
    bindings.insert("c_reference".to_string(), bundle.c_reference.clone());
    bindings.insert("summary".to_string(), bundle.summary.clone());
    bindings.insert("mismatch_log".to_string(), log_text);
    bindings.insert(
        "slice_note".to_string(),
        bundle
            .slice_note
            .as_ref()
            .map(|s| format!("\nFault localization: {s}\n"))
            .unwrap_or_default(),
    );
    bindings.insert("hints".to_string(), hints);
    bindings.insert("stages".to_string(), stages);
    Ok(render_template(&functional_repair_template(), &bindings)?)
}

/// Advisory discrepancy classification, never affecting the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiscrepancyTag {
    Scaling,
    ResetOrLag,
    StateRetention,
    ConstantOffset,
    Unknown,
}

fn hex_to_u128(h: &str) -> Option<u128> {
    u128::from_str_radix(h, 16).ok()
}

/// Heuristic tags over a non-empty mismatch log.
pub fn classify_discrepancy(log: &MismatchLog) -> Vec<DiscrepancyTag> {
    let mut tags = BTreeSet::new();
    let values: Vec<(u128, u128)> = log
        .entries
        .iter()
        .filter_map(|e| Some((hex_to_u128(&e.actual_hex)?, hex_to_u128(&e.expected_hex)?)))
        .collect();

    if values.len() == log.entries.len() && !values.is_empty() {
        // Scaling: a constant non-unit ratio expected/actual across all
        // entries, checked by exact cross-multiplication.
        let (a0, e0) = values[0];
        if a0 != 0 && e0 != 0 && a0 != e0 {
            let constant_ratio = values.iter().all(|&(a, e)| {
                a != 0 && e != 0 && (e as f64 / a as f64 - e0 as f64 / a0 as f64).abs() < 1e-12 && {
                    // exact check where products fit
                    match (e.checked_mul(a0), a.checked_mul(e0)) {
                        (Some(lhs), Some(rhs)) => lhs == rhs,
                        _ => true,
                    }
                }
            });
            if constant_ratio {
                tags.insert(DiscrepancyTag::Scaling);
            }
        }

        // Constant offset: identical signed difference on every entry.
        let d0 = values[0].0 as i128 - values[0].1 as i128;
        if d0 != 0 && values.iter().all(|&(a, e)| a as i128 - e as i128 == d0) {
            tags.insert(DiscrepancyTag::ConstantOffset);
        }

        // Reset-or-lag: within each port, the DUT output at transaction k
        // equals the golden output of transaction k-1.
        let mut per_port: BTreeMap<&str, Vec<&MismatchEntry>> = BTreeMap::new();
        for e in &log.entries {
            per_port.entry(e.port_name.as_str()).or_default().push(e);
        }
        let mut lag_pairs = 0usize;
        let mut lag_ok = true;
        for entries in per_port.values() {
            for pair in entries.windows(2) {
                if pair[1].sample_index == pair[0].sample_index + 1 {
                    lag_pairs += 1;
                    if pair[1].actual_hex != pair[0].expected_hex {
                        lag_ok = false;
                    }
                }
            }
        }
        if lag_pairs > 0 && lag_ok {
            tags.insert(DiscrepancyTag::ResetOrLag);
        }
    }

    // State retention: the earliest test cases pass while later ones fail.
    if !log.entries.is_empty() && log.failing_cases < log.total_cases {
        let failing: BTreeSet<u64> = log.entries.iter().map(|e| e.test_case_id).collect();
        if !failing.contains(&0) && !failing.contains(&1) {
            tags.insert(DiscrepancyTag::StateRetention);
        }
    }

    if tags.is_empty() {
        tags.insert(DiscrepancyTag::Unknown);
    }
    tags.into_iter().collect()
}

/// Verdict of the functional repair loop.
#[derive(Debug)]
pub enum FunctionalVerdict {
    Pass { final_code: String },
    Exhausted { last_log: MismatchLog },
}

/// One archived loop iteration.
#[derive(Debug, Clone)]
pub struct FunctionalAttempt {
    pub iteration: u32,
    pub dut_trace: PortTrace,
    pub golden_trace: PortTrace,
    pub mismatch_log: Option<MismatchLog>,
    pub repair_prompt: Option<String>,
    pub code_after: String,
}

pub struct FunctionalLoopConfig<'a> {
    pub unit: String,
    pub c_reference: String,
    pub dut_testbench: &'a Path,
    pub golden_design: &'a Path,
    pub golden_testbench: &'a Path,
    pub sim: &'a SimBinding,
    pub dut_dialect: DumpDialect,
    pub golden_dialect: DumpDialect,
    pub case_map: BTreeMap<u64, u64>,
    pub stimuli: BTreeMap<u64, String>,
    pub max_prompt_entries: usize,
    pub limit: u32,
    /// Directory where candidate DUT files are written for simulation.
    pub work_dir: &'a Path,
    /// Extra annotation injected into repair bundles (integration slicing).
    pub slice_note_fn: Option<&'a dyn Fn(&MismatchLog) -> Option<String>>,
}

pub struct FunctionalLoopResult {
    pub verdict: FunctionalVerdict,
    pub attempts: Vec<FunctionalAttempt>,
    pub gateway_calls: u32,
}

/// Run the verify-feedback-repair loop for one unit.
///
/// Simulator or environment failures abort without consuming attempts; a
/// syntax regression in repaired code re-enters the RAG repair loop and, if
/// unfixable, consumes the iteration.
#[allow(clippy::too_many_arguments)]
pub fn functional_repair_loop(
    initial_dut_code: &str,
    config: &FunctionalLoopConfig<'_>,
    provider: &dyn Provider,
    provider_config: &ProviderConfig,
    compiler: &dyn HdlCompiler,
    library: &RuleLibrary,
    embedder: &dyn Embedder,
) -> Result<FunctionalLoopResult, DiffError> {
    std::fs::create_dir_all(config.work_dir)?;
    let mut code = initial_dut_code.to_string();
    let mut attempts: Vec<FunctionalAttempt> = Vec::new();
    let mut gateway_calls = 0u32;

    // The golden path never changes; simulate it once.
    let golden_raw = run_rtl_sim(config.golden_design, config.golden_testbench, config.sim)?;
    let golden_trace = normalize_dump(&golden_raw, config.golden_dialect)?;

    let mut last_log: Option<MismatchLog> = None;
    for iteration in 1..=config.limit {
        let dut_path = config.work_dir.join(format!("attempt{iteration}.v"));
        std::fs::write(&dut_path, &code)?;
        let dut_raw = run_rtl_sim(&dut_path, config.dut_testbench, config.sim)?;
        let dut_trace = normalize_dump(&dut_raw, config.dut_dialect)?;
        let log = compare_traces(
            &config.unit,
            &dut_trace,
            &golden_trace,
            &config.case_map,
            &config.stimuli,
        )?;
        if log.is_pass() {
            attempts.push(FunctionalAttempt {
                iteration,
                dut_trace,
                golden_trace: golden_trace.clone(),
                mismatch_log: None,
                repair_prompt: None,
                code_after: code.clone(),
            });
            return Ok(FunctionalLoopResult {
                verdict: FunctionalVerdict::Pass { final_code: code },
                attempts,
                gateway_calls,
            });
        }
        last_log = Some(log.clone());

        let mut bundle =
            build_repair_bundle(&code, &config.c_reference, &log, config.max_prompt_entries)?;
        if let Some(f) = config.slice_note_fn {
            bundle.slice_note = f(&log);
        }
        let prompt = render_repair_prompt(&bundle)?;
        gateway_calls += 1;
        let new_code = complete_with_backoff(
            provider_config,
            provider,
            &prompt,
            Duration::from_millis(10),
        )
        .map_err(DiffError::from)
        .and_then(|ex| Ok(extract_fenced_code(&ex.response, Some("verilog"))?));

        let mut next_code = match new_code {
            Ok(c) => c,
            Err(_) => code.clone(), // consumed the iteration; carry old code
        };

        // Syntax regression check on the repaired code.
        let compile = compiler
            .compile(&next_code)
            .map_err(|e| RagError::Environment(e.to_string()))
            .map_err(DiffError::from)?;
        if compile.outcome == CompileOutcome::Fail {
            let rag_out = repair_syntax_loop(
                &next_code,
                &compile.log,
                library,
                embedder,
                provider,
                provider_config,
                compiler,
                provider_config.max_retries.max(1),
            )?;
            if rag_out.verdict == SyntaxVerdict::Pass {
                next_code = rag_out.final_code;
            }
            // unfixable regression: keep the syntactically valid old code
        }

        attempts.push(FunctionalAttempt {
            iteration,
            dut_trace,
            golden_trace: golden_trace.clone(),
            mismatch_log: Some(log),
            repair_prompt: Some(prompt),
            code_after: next_code.clone(),
        });
        code = next_code;
    }
    Ok(FunctionalLoopResult {
        verdict: FunctionalVerdict::Exhausted {
            last_log: last_log.expect("limit >= 1 guarantees at least one comparison"),
        },
        attempts,
        gateway_calls,
    })
}
