//! Per-submodule spec-file generation, HDL generation, and testbench
//! adaptation with the human approval gate.
//!
//! Two natural-language spec files are produced for each submodule: a
//! functional specification and an interface definition mapping C parameters
//! to Verilog ports. Port widths are never trusted from the model; the
//! interface contract always wins. The generation prompt carries, in order,
//! the C source, functional spec, interface definition, and the design and
//! formatting constraints. The adapted DUT testbench stays pending until a
//! human approves it through the CLI gate.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomposer::{CSubmodule, PortDirection};
use crate::gateway::{
    complete_with_backoff, extract_fenced_code, render_template, ChatExchange, GatewayError,
    PromptTemplate, Provider, ProviderConfig,
};

#[derive(Debug, Error)]
pub enum HdlGenError {
    #[error("spec generation failed: port {port} missing after re-prompt")]
    SpecMissingPort { port: String },
    #[error("spec output unparsable: {0}")]
    SpecUnparsable(String),
    #[error("HDL generation failed: no fenced code after re-prompt")]
    GenerationUnfenced,
    #[error("testbench adaptation failed: no trace writes for ports [{}] after re-prompt", missing.join(", "))]
    AdaptationMissingTraces { missing: Vec<String> },
    #[error("approval gate: {0}")]
    Approval(String),
    #[error("gateway failure: {0}")]
    Gateway(#[from] GatewayError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalSpec {
    pub submodule_id: String,
    pub behavior_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortMapRow {
    pub c_param: String,
    pub hdl_port: String,
    pub direction: PortDirection,
    pub width_bits: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterfaceDefinition {
    pub submodule_id: String,
    pub port_map: Vec<PortMapRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignConstraints {
    pub style_rules: Vec<String>,
    pub optimization_hints: Vec<String>,
    pub formatting_rules: Vec<String>,
}

pub const FENCE_RULE: &str =
    "Enclose the resulting HDL between triple backticks with the `verilog` tag.";

impl Default for DesignConstraints {
    fn default() -> Self {
        DesignConstraints {
            style_rules: vec![
                "Separate control logic from the datapath.".to_string(),
                "Use synchronous reset conventions.".to_string(),
                "Target the synthesizable Verilog-2001 subset.".to_string(),
            ],
            optimization_hints: vec![
                "Insert pipeline stages where they shorten the critical path.".to_string(),
            ],
            formatting_rules: vec![FENCE_RULE.to_string()],
        }
    }
}

impl DesignConstraints {
    /// The fence rule is load-bearing for extraction; re-add it if a caller
    /// constructed constraints without it.
    pub fn ensure_fence_rule(mut self) -> Self {
        if !self.formatting_rules.iter().any(|r| r == FENCE_RULE) {
            self.formatting_rules.push(FENCE_RULE.to_string());
        }
        self
    }

    pub fn render(&self) -> String {
        let mut out = String::from("Design constraints:\n");
        for r in &self.style_rules {
            out.push_str(&format!("- {r}\n"));
        }
        out.push_str("Optimization hints:\n");
        for r in &self.optimization_hints {
            out.push_str(&format!("- {r}\n"));
        }
        out.push_str("Formatting constraints:\n");
        for r in &self.formatting_rules {
            out.push_str(&format!("- {r}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyntaxStatus {
    Unchecked,
    Pass,
    Fail { log: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HdlSource {
    pub submodule_id: String,
    pub attempt_index: u32,
    pub code: String,
    pub syntax_status: SyntaxStatus,
}

fn functional_spec_template() -> PromptTemplate {
    PromptTemplate::new(
        "functional_spec",
        "Write a functional specification for the following C/C++ submodule: a detailed \
         prose description of its functionality and the expected hardware behavior. \
         Reference every interface port by name ({port_names}).\n{retry_note}\
         \nC source:\n```c\n{c_source}\n```\n\
         Return only the specification text.",
        &["c_source", "port_names", "retry_note"],
    )
}

fn interface_def_template() -> PromptTemplate {
    PromptTemplate::new(
        "interface_definition",
        "Map the C/C++ parameters of this submodule to Verilog ports. For each parameter \
         give the HDL port name, direction, and exact bit width.\n{retry_note}\
         \nC source:\n```c\n{c_source}\n```\n\
         Ports to cover: {port_names}.\n\
         Return JSON between triple backticks with the `json` tag: a list of \
         {{\"c_param\", \"hdl_port\", \"direction\", \"width_bits\"}} rows.",
        &["c_source", "port_names", "retry_note"],
    )
}

/// Generate both spec files. The interface widths are copied from the
/// contract after generation; model-emitted widths are never stored.
pub fn generate_specs(
    sub: &CSubmodule,
    provider: &dyn Provider,
    provider_config: &ProviderConfig,
) -> Result<(FunctionalSpec, InterfaceDefinition, Vec<ChatExchange>), HdlGenError> {
    let mut exchanges = Vec::new();
    let port_names: Vec<&str> = sub.interface.ports.iter().map(|p| p.name.as_str()).collect();
    let port_list = port_names.join(", ");

    // Functional spec, re-prompting once if a port is never mentioned.
    let mut retry_note = String::new();
    let mut behavior_text = String::new();
    let mut missing_port: Option<String> = None;
    for _ in 0..2 {
        let mut bindings = BTreeMap::new();
        bindings.insert("c_source".to_string(), sub.c_source.clone());
        bindings.insert("port_names".to_string(), port_list.clone());
        bindings.insert("retry_note".to_string(), retry_note.clone());
        let prompt = render_template(&functional_spec_template(), &bindings)?;
        let ex = complete_with_backoff(provider_config, provider, &prompt, Duration::from_millis(10))?;
        behavior_text = ex.response.trim().to_string();
        exchanges.push(ex);
        missing_port = port_names
            .iter()
            .find(|p| !behavior_text.contains(*p))
            .map(|p| p.to_string());
        match &missing_port {
            None => break,
            Some(p) => {
                retry_note = format!(
                    "Your previous specification never mentioned port {p:?}; describe every port.\n"
                );
            }
        }
    }
    if let Some(port) = missing_port {
        return Err(HdlGenError::SpecMissingPort { port });
    }
    if behavior_text.is_empty() {
        return Err(HdlGenError::SpecUnparsable("empty functional spec".into()));
    }

    // Interface definition, re-prompting once if a port row is missing.
    let mut retry_note = String::new();
    let mut rows: Vec<PortMapRow> = Vec::new();
    let mut missing_port: Option<String> = None;
    for _ in 0..2 {
        let mut bindings = BTreeMap::new();
        bindings.insert("c_source".to_string(), sub.c_source.clone());
        bindings.insert("port_names".to_string(), port_list.clone());
        bindings.insert("retry_note".to_string(), retry_note.clone());
        let prompt = render_template(&interface_def_template(), &bindings)?;
        let ex = complete_with_backoff(provider_config, provider, &prompt, Duration::from_millis(10))?;
        let json = extract_fenced_code(&ex.response, Some("json"))
            .or_else(|_| extract_fenced_code(&ex.response, None))
            .map_err(|e| HdlGenError::SpecUnparsable(e.to_string()))?;
        exchanges.push(ex);
        rows = serde_json::from_str(&json)
            .map_err(|e| HdlGenError::SpecUnparsable(format!("interface rows: {e}")))?;
        let covered: BTreeSet<&str> = rows.iter().map(|r| r.c_param.as_str()).collect();
        missing_port = port_names
            .iter()
            .find(|p| !covered.contains(**p))
            .map(|p| p.to_string());
        match &missing_port {
            None => break,
            Some(p) => {
                retry_note =
                    format!("Your previous mapping omitted port {p:?}; cover every port.\n");
            }
        }
    }
    if let Some(port) = missing_port {
        return Err(HdlGenError::SpecMissingPort { port });
    }

    // Contract wins: overwrite widths and directions, drop rows for unknown
    // ports, and order rows like the contract.
    let mut final_rows = Vec::new();
    for port in &sub.interface.ports {
        let row = rows.iter().find(|r| r.c_param == port.name).expect("coverage checked");
        final_rows.push(PortMapRow {
            c_param: port.name.clone(),
            hdl_port: row.hdl_port.clone(),
            direction: port.direction,
            width_bits: port.width_bits,
        });
    }

    Ok((
        FunctionalSpec {
            submodule_id: sub.submodule_id.clone(),
            behavior_text,
        },
        InterfaceDefinition {
            submodule_id: sub.submodule_id.clone(),
            port_map: final_rows,
        },
        exchanges,
    ))
}

pub fn render_interface_def(def: &InterfaceDefinition) -> String {
    let mut out = String::from("Interface definition (C parameter -> HDL port):\n");
    for r in &def.port_map {
        out.push_str(&format!(
            "- {} -> {} ({}, {} bits)\n",
            r.c_param,
            r.hdl_port,
            match r.direction {
                PortDirection::In => "input",
                PortDirection::Out => "output",
            },
            r.width_bits
        ));
    }
    out
}

fn hdl_generation_template() -> PromptTemplate {
    // Ingredient order is part of the contract: C source, functional spec,
    // interface definition, constraints.
    PromptTemplate::new(
        "hdl_generation",
        "Generate a Verilog module implementing this submodule.\n\
         \n\
         C source:\n```c\n{c_source}\n```\n\
         \n\
         Functional specification:\n{functional_spec}\n\
         \n\
         {interface_definition}\n\
         {constraints}{retry_note}",
        &[
            "c_source",
            "functional_spec",
            "interface_definition",
            "constraints",
            "retry_note",
        ],
    )
}

/// Generate HDL for one submodule. One re-prompt with an explicit fencing
/// reminder if the first response carries no extractable fence.
pub fn generate_hdl(
    sub: &CSubmodule,
    spec: &FunctionalSpec,
    interface: &InterfaceDefinition,
    constraints: &DesignConstraints,
    provider: &dyn Provider,
    provider_config: &ProviderConfig,
) -> Result<(HdlSource, Vec<ChatExchange>), HdlGenError> {
    let constraints = constraints.clone().ensure_fence_rule();
    let mut exchanges = Vec::new();
    let mut retry_note = String::new();
    for attempt in 1..=2u32 {
        let mut bindings = BTreeMap::new();
        bindings.insert("c_source".to_string(), sub.c_source.clone());
        bindings.insert("functional_spec".to_string(), spec.behavior_text.clone());
        bindings.insert(
            "interface_definition".to_string(),
            render_interface_def(interface),
        );
        bindings.insert("constraints".to_string(), constraints.render());
        bindings.insert("retry_note".to_string(), retry_note.clone());
        let prompt = render_template(&hdl_generation_template(), &bindings)?;
        let ex = complete_with_backoff(provider_config, provider, &prompt, Duration::from_millis(10))?;
        let extraction = extract_fenced_code(&ex.response, Some("verilog"));
        exchanges.push(ex);
        match extraction {
            Ok(code) => {
                return Ok((
                    HdlSource {
                        submodule_id: sub.submodule_id.clone(),
                        attempt_index: attempt,
                        code,
                        syntax_status: SyntaxStatus::Unchecked,
                    },
                    exchanges,
                ));
            }
            Err(_) => {
                retry_note = format!(
                    "\nYour previous response had no extractable code fence. {FENCE_RULE}\n"
                );
            }
        }
    }
    Err(HdlGenError::GenerationUnfenced)
}

/// Mechanical width-fidelity check: declared Verilog port widths must equal
/// the interface definition exactly. Returns one violation per port.
pub fn check_hdl_port_widths(code: &str, interface: &InterfaceDefinition) -> Vec<String> {
    let re = Regex::new(
        r"(?m)\b(input|output)\s+(?:reg\s+|wire\s+)?(?:\[\s*(\d+)\s*:\s*(\d+)\s*\]\s*)?([A-Za-z_][A-Za-z0-9_]*)",
    )
    .unwrap();
    let mut declared: BTreeMap<String, u32> = BTreeMap::new();
    for cap in re.captures_iter(code) {
        let width = match (cap.get(2), cap.get(3)) {
            (Some(msb), Some(lsb)) => {
                let msb: i64 = msb.as_str().parse().unwrap_or(0);
                let lsb: i64 = lsb.as_str().parse().unwrap_or(0);
                (msb - lsb).unsigned_abs() as u32 + 1
            }
            _ => 1,
        };
        declared.insert(cap[4].to_string(), width);
    }
    let mut violations = Vec::new();
    for row in &interface.port_map {
        match declared.get(&row.hdl_port) {
            None => violations.push(format!("port {} not declared in HDL", row.hdl_port)),
            Some(w) if *w != row.width_bits => violations.push(format!(
                "port {} declared {} bits, contract requires {}",
                row.hdl_port, w, row.width_bits
            )),
            _ => {}
        }
    }
    violations
}

fn testbench_template() -> PromptTemplate {
    PromptTemplate::new(
        "testbench_adaptation",
        "Adapt this C/C++ testbench into a Verilog testbench for the module described by \
         the interface definition below. Drive every input port with the same stimuli and, \
         after each completed output transaction, record every output port with exactly \
         this idiom (one line per output port, sample_idx counting transactions from 0):\n\
         $fwrite(trace_fd, \"%0d {port} %h\\n\", sample_idx, {port});\n\
         Open trace_fd on the file given by the plusarg +TRACE_FILE and emit a header line \
         `#port <name> <width>` per output port before the first sample.\n{retry_note}\
         \nC testbench:\n```c\n{c_testbench}\n```\n\
         \n{interface_definition}\n\
         Return the testbench between triple backticks with the `verilog` tag.",
        &["c_testbench", "interface_definition", "retry_note"],
    )
}

/// Output ports whose trace-write idiom is absent from the testbench text.
pub fn missing_trace_writes(testbench: &str, interface: &InterfaceDefinition) -> Vec<String> {
    interface
        .port_map
        .iter()
        .filter(|r| r.direction == PortDirection::Out)
        .filter(|r| {
            !testbench
                .lines()
                .any(|l| l.contains("$fwrite") && l.contains(&r.hdl_port))
        })
        .map(|r| r.hdl_port.clone())
        .collect()
}

/// Adapt the C testbench via the model. The result is pending until the CLI
/// approval gate confirms it; the static trace-write check runs here.
pub fn adapt_testbench(
    c_testbench: &str,
    interface: &InterfaceDefinition,
    provider: &dyn Provider,
    provider_config: &ProviderConfig,
) -> Result<(String, Vec<ChatExchange>), HdlGenError> {
    let mut exchanges = Vec::new();
    let mut retry_note = String::new();
    let template = testbench_template();
    for _ in 0..2 {
        let mut bindings = BTreeMap::new();
        bindings.insert("c_testbench".to_string(), c_testbench.to_string());
        bindings.insert(
            "interface_definition".to_string(),
            render_interface_def(interface),
        );
        bindings.insert("retry_note".to_string(), retry_note.clone());
        // the idiom line uses literal {port}; escape for the renderer
        bindings.insert("port".to_string(), "{port}".to_string());
        let prompt = render_template(&template, &bindings)?;
        let ex = complete_with_backoff(provider_config, provider, &prompt, Duration::from_millis(10))?;
        let extraction = extract_fenced_code(&ex.response, Some("verilog"));
        exchanges.push(ex);
        if let Ok(tb) = extraction {
            let missing = missing_trace_writes(&tb, interface);
            if missing.is_empty() {
                return Ok((tb, exchanges));
            }
            retry_note = format!(
                "\nYour previous testbench never recorded output ports [{}] with the mandated \
                 $fwrite idiom; add a trace write for each.\n",
                missing.join(", ")
            );
        } else {
            retry_note = format!("\nYour previous response had no code fence. {FENCE_RULE}\n");
        }
    }
    let missing = exchanges
        .last()
        .and_then(|ex| extract_fenced_code(&ex.response, Some("verilog")).ok())
        .map(|tb| missing_trace_writes(&tb, interface))
        .unwrap_or_else(|| vec!["<no testbench extracted>".to_string()]);
    Err(HdlGenError::AdaptationMissingTraces { missing })
}

// ---------------------------------------------------------------------------
// Approval gate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApprovalState {
    Pending,
    Approved,
    Rejected,
}

pub fn approval_marker_path(dut_dir: &Path) -> std::path::PathBuf {
    dut_dir.join("tb.approval")
}

pub fn write_pending_approval(dut_dir: &Path) -> Result<(), HdlGenError> {
    std::fs::create_dir_all(dut_dir)?;
    std::fs::write(approval_marker_path(dut_dir), "pending\n")?;
    Ok(())
}

pub fn read_approval(dut_dir: &Path) -> Result<ApprovalState, HdlGenError> {
    let path = approval_marker_path(dut_dir);
    if !path.exists() {
        return Err(HdlGenError::Approval(format!(
            "no testbench pending approval at {}",
            path.display()
        )));
    }
    match std::fs::read_to_string(&path)?.trim() {
        "pending" => Ok(ApprovalState::Pending),
        "approved" => Ok(ApprovalState::Approved),
        "rejected" => Ok(ApprovalState::Rejected),
        other => Err(HdlGenError::Approval(format!(
            "corrupt approval marker: {other:?}"
        ))),
    }
}

/// Record the human decision. Approving an already-approved testbench is
/// idempotent; deciding with nothing pending is a state error.
pub fn set_approval(dut_dir: &Path, approve: bool) -> Result<ApprovalState, HdlGenError> {
    let current = read_approval(dut_dir)?;
    let next = if approve {
        ApprovalState::Approved
    } else {
        ApprovalState::Rejected
    };
    if current == next {
        return Ok(current);
    }
    std::fs::write(
        approval_marker_path(dut_dir),
        match next {
            ApprovalState::Approved => "approved\n",
            ApprovalState::Rejected => "rejected\n",
            ApprovalState::Pending => "pending\n",
        },
    )?;
    Ok(next)
}
