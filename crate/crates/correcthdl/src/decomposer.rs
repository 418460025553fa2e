//! Rule-constrained C/C++ decomposition and its re-integration check.
//!
//! The input program is split along function boundaries into submodule units
//! with explicit fixed-width interfaces and single, clear semantics. Plans
//! come back from the model as fenced JSON; static rule checks run before
//! anything touches a compiler, with one constrained re-prompt on violation.
//! A plan is only accepted after the decomposed sources, re-integrated
//! through the glue program, reproduce the original testbench output
//! byte-for-byte.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    complete_with_backoff, extract_fenced_code, render_template, GatewayError, PromptTemplate,
    Provider, ProviderConfig,
};
use crate::toolchain::{run_c_compile_and_exec, CcBinding, CompileOutcome, ToolError};

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error("model output unparsable as a plan: {0}")]
    Extraction(String),
    #[error("decomposition rule violations after re-prompt: {}", violations.join("; "))]
    RuleViolation { violations: Vec<String> },
    #[error("build error on {side}:\n{log}")]
    Build { side: String, log: String },
    #[error("execution error on {side}: {source}")]
    Execution {
        side: String,
        #[source]
        source: ToolError,
    },
    #[error("gateway failure: {0}")]
    Gateway(#[from] GatewayError),
    #[error("toolchain failure: {0}")]
    Tool(#[from] ToolError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortDirection {
    In,
    Out,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortSpec {
    pub name: String,
    pub direction: PortDirection,
    pub width_bits: u32,
    #[serde(default)]
    pub array_len: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterfaceContract {
    pub ports: Vec<PortSpec>,
    pub semantics_summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CSubmodule {
    pub submodule_id: String,
    pub c_source: String,
    pub entry_function: String,
    pub interface: InterfaceContract,
    pub call_order_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataflowEdge {
    pub producer: String,
    pub producer_port: String,
    pub consumer: String,
    pub consumer_port: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionPlan {
    pub submodules: Vec<CSubmodule>,
    pub top_glue: String,
    pub dataflow_edges: Vec<DataflowEdge>,
}

/// Validate the three decomposition rules plus plan-level invariants.
/// Returns every violation found, empty when the plan is clean.
pub fn check_plan_rules(plan: &DecompositionPlan) -> Vec<String> {
    let mut violations = Vec::new();
    let mut ids = BTreeSet::new();
    for sub in &plan.submodules {
        if !ids.insert(&sub.submodule_id) {
            violations.push(format!("duplicate submodule id {}", sub.submodule_id));
        }
        // Rule (1): function-level granularity, exactly one visible entry.
        let visible = visible_function_names(&sub.c_source);
        if visible.len() != 1 {
            violations.push(format!(
                "rule (1): submodule {} must define exactly one externally visible function, found [{}]",
                sub.submodule_id,
                visible.join(", ")
            ));
        } else if visible[0] != sub.entry_function {
            violations.push(format!(
                "rule (1): submodule {} entry function {} does not match the visible definition {}",
                sub.submodule_id, sub.entry_function, visible[0]
            ));
        }
        // Rule (2): explicit fixed-width I/O.
        let mut names = BTreeSet::new();
        let mut outs = 0;
        for port in &sub.interface.ports {
            if port.width_bits < 1 {
                violations.push(format!(
                    "rule (2): submodule {} port {} has no explicit width",
                    sub.submodule_id, port.name
                ));
            }
            if !names.insert(&port.name) {
                violations.push(format!(
                    "rule (2): submodule {} duplicate port name {}",
                    sub.submodule_id, port.name
                ));
            }
            if port.direction == PortDirection::Out {
                outs += 1;
            }
        }
        if outs == 0 {
            violations.push(format!(
                "rule (2): submodule {} has no out port",
                sub.submodule_id
            ));
        }
        for param in unsized_pointer_params(&sub.c_source, &sub.entry_function) {
            let covered = sub
                .interface
                .ports
                .iter()
                .any(|p| p.name == param && p.array_len.is_some());
            if !covered {
                violations.push(format!(
                    "rule (2): submodule {} parameter {} is a variable-length pointer without a static array length",
                    sub.submodule_id, param
                ));
            }
        }
        // Rule (3): single, clear semantics.
        if sub.interface.semantics_summary.trim().is_empty() {
            violations.push(format!(
                "rule (3): submodule {} is missing a semantics summary",
                sub.submodule_id
            ));
        }
    }
    // Glue must call every submodule.
    for sub in &plan.submodules {
        if !plan.top_glue.contains(&sub.entry_function) {
            violations.push(format!(
                "top_glue never calls submodule {} ({})",
                sub.submodule_id, sub.entry_function
            ));
        }
    }
    // Dataflow edges must reference known submodules and form a DAG.
    for e in &plan.dataflow_edges {
        for end in [&e.producer, &e.consumer] {
            if !plan.submodules.iter().any(|s| &s.submodule_id == end) {
                violations.push(format!("dataflow edge references unknown submodule {end}"));
            }
        }
    }
    if has_cycle(plan) {
        violations.push("dataflow_edges contain a cycle".to_string());
    }
    violations
}

/// Topological-sort cycle check over the dataflow edges.
pub fn has_cycle(plan: &DecompositionPlan) -> bool {
    let mut indegree: BTreeMap<&str, usize> = plan
        .submodules
        .iter()
        .map(|s| (s.submodule_id.as_str(), 0))
        .collect();
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut edge_set = BTreeSet::new();
    for e in &plan.dataflow_edges {
        if !indegree.contains_key(e.producer.as_str()) || !indegree.contains_key(e.consumer.as_str())
        {
            continue;
        }
        if edge_set.insert((e.producer.as_str(), e.consumer.as_str())) {
            adj.entry(e.producer.as_str())
                .or_default()
                .push(e.consumer.as_str());
            *indegree.get_mut(e.consumer.as_str()).unwrap() += 1;
        }
    }
    let mut queue: Vec<&str> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(n, _)| *n)
        .collect();
    let mut visited = 0;
    while let Some(n) = queue.pop() {
        visited += 1;
        for m in adj.get(n).into_iter().flatten() {
            let d = indegree.get_mut(m).unwrap();
            *d -= 1;
            if *d == 0 {
                queue.push(m);
            }
        }
    }
    visited != indegree.len()
}

/// Names of externally visible (non-static) function definitions.
fn visible_function_names(c_source: &str) -> Vec<String> {
    // A definition looks like `ret name(args) {` at top level; the body check
    // (brace, not semicolon) excludes prototypes.
    let re = Regex::new(
        r"(?m)^\s*(?:[A-Za-z_][A-Za-z0-9_]*[\s\*]+)+([A-Za-z_][A-Za-z0-9_]*)\s*\([^;{)]*\)\s*\{",
    )
    .unwrap();
    let mut names = Vec::new();
    for cap in re.captures_iter(c_source) {
        let whole = cap.get(0).unwrap().as_str();
        let name = cap[1].to_string();
        if whole.trim_start().starts_with("static") {
            continue;
        }
        if ["if", "for", "while", "switch", "return"].contains(&name.as_str()) {
            continue;
        }
        names.push(name);
    }
    names
}

/// Pointer parameters of the entry function that carry no static size.
fn unsized_pointer_params(c_source: &str, entry: &str) -> Vec<String> {
    let sig_re = Regex::new(&format!(
        r"{}\s*\(([^)]*)\)\s*\{{",
        regex::escape(entry)
    ))
    .unwrap();
    let mut out = Vec::new();
    if let Some(cap) = sig_re.captures(c_source) {
        for param in cap[1].split(',') {
            let param = param.trim();
            if param.is_empty() || param == "void" {
                continue;
            }
            let has_star = param.contains('*');
            let has_static_array = param.contains('[') && param.contains(']');
            if has_star && !has_static_array {
                if let Some(name) = param
                    .rsplit(|c: char| !c.is_alphanumeric() && c != '_')
                    .find(|s| !s.is_empty())
                {
                    out.push(name.to_string());
                }
            }
        }
    }
    out
}

pub fn decomposition_template() -> PromptTemplate {
    PromptTemplate::new(
        "decomposition",
        "Decompose the following C/C++ program into hardware-friendly submodules.\n\
         \n\
         Rules:\n\
         (1) Decompose along function boundaries only.\n\
         (2) Each submodule uses fixed-width scalars or static arrays as its interface, \
         with all bit widths explicitly specified.\n\
         (3) Each submodule has a single, clear semantic purpose.\n\
         \n\
         Program:\n```c\n{c_source}\n```\n{violation_note}\
         \n\
         Return a plan as JSON between triple backticks with the `json` tag, shaped as:\n\
         {{\"submodules\": [{{\"submodule_id\", \"entry_function\", \"c_source\", \
         \"call_order_index\", \"interface\": {{\"semantics_summary\", \"ports\": \
         [{{\"name\", \"direction\", \"width_bits\", \"array_len\"}}]}}}}], \
         \"top_glue\": \"C code calling the submodules in dependency order\", \
         \"dataflow_edges\": [{{\"producer\", \"producer_port\", \"consumer\", \"consumer_port\"}}]}}",
        &["c_source", "violation_note"],
    )
}

/// Ask the model for a plan, statically validate it, and re-prompt once with
/// the concrete violations before failing hard.
pub fn propose_decomposition(
    c_source: &str,
    provider: &dyn Provider,
    provider_config: &ProviderConfig,
) -> Result<DecompositionPlan, DecomposeError> {
    let template = decomposition_template();
    let mut violation_note = String::new();
    let mut last_violations = Vec::new();
    for _round in 0..2 {
        let mut bindings = BTreeMap::new();
        bindings.insert("c_source".to_string(), c_source.to_string());
        bindings.insert("violation_note".to_string(), violation_note.clone());
        let prompt = render_template(&template, &bindings)?;
        let exchange =
            complete_with_backoff(provider_config, provider, &prompt, Duration::from_millis(10))?;
        let json = extract_fenced_code(&exchange.response, Some("json"))
            .or_else(|_| extract_fenced_code(&exchange.response, None))
            .map_err(|e| DecomposeError::Extraction(e.to_string()))?;
        let plan: DecompositionPlan = serde_json::from_str(&json)
            .map_err(|e| DecomposeError::Extraction(format!("plan JSON invalid: {e}")))?;
        let violations = check_plan_rules(&plan);
        if violations.is_empty() {
            return Ok(plan);
        }
        violation_note = format!(
            "\nYour previous plan violated these rules; fix every item:\n- {}\n",
            violations.join("\n- ")
        );
        last_violations = violations;
    }
    Err(DecomposeError::RuleViolation {
        violations: last_violations,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReintegrationVerdict {
    Pass,
    Fail { diff_report: String },
}

/// Compile and run both the re-integrated plan and the original program under
/// the original testbench; Pass iff the output streams are byte-identical.
pub fn reintegrate_and_check(
    plan: &DecompositionPlan,
    original_source: &str,
    original_testbench: &str,
    binding: &CcBinding,
) -> Result<ReintegrationVerdict, DecomposeError> {
    let mut sources: Vec<&str> = plan.submodules.iter().map(|s| s.c_source.as_str()).collect();
    sources.push(plan.top_glue.as_str());
    let (reint_result, reint_out) = run_side(&sources, original_testbench, binding, "re-integrated")?;
    let (orig_result, orig_out) = run_side(&[original_source], original_testbench, binding, "original")?;
    debug_assert_eq!(reint_result.outcome, CompileOutcome::Pass);
    debug_assert_eq!(orig_result.outcome, CompileOutcome::Pass);
    if reint_out == orig_out {
        Ok(ReintegrationVerdict::Pass)
    } else {
        Ok(ReintegrationVerdict::Fail {
            diff_report: first_diff_report(&orig_out, &reint_out),
        })
    }
}

fn run_side(
    sources: &[&str],
    testbench: &str,
    binding: &CcBinding,
    side: &str,
) -> Result<(crate::toolchain::CompileResult, Vec<u8>), DecomposeError> {
    match run_c_compile_and_exec(sources, testbench, binding) {
        Ok((result, out)) => {
            if result.outcome == CompileOutcome::Fail {
                return Err(DecomposeError::Build {
                    side: side.to_string(),
                    log: result.log,
                });
            }
            Ok((result, out))
        }
        Err(e @ ToolError::Execution { .. }) => Err(DecomposeError::Execution {
            side: side.to_string(),
            source: e,
        }),
        Err(e) => Err(DecomposeError::Tool(e)),
    }
}

/// Human-readable report of the first differing output line.
fn first_diff_report(expected: &[u8], actual: &[u8]) -> String {
    let exp = String::from_utf8_lossy(expected);
    let act = String::from_utf8_lossy(actual);
    for (i, (e, a)) in exp.lines().zip(act.lines()).enumerate() {
        if e != a {
            return format!("first differing line {}: original {e:?} vs re-integrated {a:?}", i + 1);
        }
    }
    let (el, al) = (exp.lines().count(), act.lines().count());
    format!("output lengths differ: original {el} lines, re-integrated {al} lines")
}
