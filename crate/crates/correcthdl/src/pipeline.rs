//! End-to-end pipeline orchestration and baseline modes.
//!
//! A run executes the staged flow for `repetitions_n` independent rounds:
//! decompose, generate HDL per submodule, repair syntax, differentially
//! verify each submodule against its HLS golden, integrate, verify the top,
//! then evaluate and report. Baseline modes prune that flow: the direct
//! modes generate the whole design in one shot (from C or from a natural
//! language description) with no decomposition, `NoDecompose` keeps the
//! repair loops but skips decomposition, and `TopFeedbackOnly` disables the
//! submodule-level golden feedback so mismatches surface only at the top.
//!
//! Every stage conclusion is appended to the run records, and stage outputs
//! land at canonical per-round paths, so a killed run resumes where it
//! stopped without re-consuming gateway traffic for completed stages.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomposer::{
    propose_decomposition, reintegrate_and_check, CSubmodule, DecomposeError, DecompositionPlan,
    PortDirection, ReintegrationVerdict,
};
use crate::diff_verify::{
    compare_traces, functional_repair_loop, DiffError, FunctionalLoopConfig, FunctionalVerdict,
};
use crate::gateway::{
    GatewayError, HttpChatProvider, Provider, ProviderConfig, ScriptedMock,
};
use crate::hdlgen::{
    adapt_testbench, generate_hdl, generate_specs, read_approval, set_approval,
    write_pending_approval, ApprovalState, DesignConstraints, HdlGenError, InterfaceDefinition,
    PortMapRow,
};
use crate::integrator::{
    generate_top_level, instrument_boundaries, verify_top, IntegratorError, TopLoopConfig,
};
use crate::metrics::{
    compute_reduction, count_hdl_lines, emit_report, save_loc, save_ppa, BenchmarkSummary,
    DesignSource, MetricsError, PpaComparison,
};
use crate::rag::{
    repair_syntax_loop, RagError, RuleLibrary, SyntaxVerdict, TrigramEmbedder,
};
use crate::toolchain::{
    normalize_dump, run_hls_synthesize, run_logic_synth, run_rtl_sim, CcBinding, CompileOutcome,
    DumpDialect, HdlCompiler, HlsBinding, MockHdlCompiler, RealHdlCompiler, SimBinding,
    SynthBinding, ToolError,
};
use crate::trace::PortTrace;
use crate::workspace::{
    open_workspace, RunRecord, Stage, StageOutcome, Workspace, WorkspaceError, TOP_UNIT,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("environment error: {0}")]
    Environment(String),
    #[error("testbench for {unit} awaits human approval (run approve-tb)")]
    ApprovalPending { unit: String },
    #[error("workspace failure: {0}")]
    Workspace(#[from] WorkspaceError),
    #[error("decomposition failure: {0}")]
    Decompose(#[from] DecomposeError),
    #[error("HDL generation failure: {0}")]
    HdlGen(#[from] HdlGenError),
    #[error("syntax repair failure: {0}")]
    Rag(#[from] RagError),
    #[error("differential verification failure: {0}")]
    Diff(#[from] DiffError),
    #[error("integration failure: {0}")]
    Integrator(#[from] IntegratorError),
    #[error("metrics failure: {0}")]
    Metrics(#[from] MetricsError),
    #[error("tool failure: {0}")]
    Tool(ToolError),
    #[error("gateway failure: {0}")]
    Gateway(#[from] GatewayError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ToolError> for PipelineError {
    fn from(e: ToolError) -> Self {
        match e {
            ToolError::Environment(msg) => PipelineError::Environment(msg),
            ToolError::MockMiss(key) => {
                PipelineError::Environment(format!("mock fixture miss for {key}"))
            }
            other => PipelineError::Tool(other),
        }
    }
}

/// Process exit code for an error: environment problems are distinct.
pub fn exit_code_for(err: &PipelineError) -> i32 {
    match err {
        PipelineError::Environment(_) => 2,
        _ => 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    Full,
    DirectC,
    DirectNl,
    NoDecompose,
    TopFeedbackOnly,
}

impl std::str::FromStr for BaselineMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(BaselineMode::Full),
            "direct-c" => Ok(BaselineMode::DirectC),
            "direct-nl" => Ok(BaselineMode::DirectNl),
            "no-decompose" => Ok(BaselineMode::NoDecompose),
            "top-feedback-only" => Ok(BaselineMode::TopFeedbackOnly),
            other => Err(format!(
                "unknown baseline mode {other:?} (full, direct-c, direct-nl, no-decompose, top-feedback-only)"
            )),
        }
    }
}

/// Stages a mode executes, in order. Stage-skipping assertions in tests
/// check run records against exactly this table.
pub fn stages_for_mode(mode: BaselineMode) -> Vec<Stage> {
    match mode {
        BaselineMode::Full => vec![
            Stage::Decompose,
            Stage::GenerateHdl,
            Stage::SyntaxRepair,
            Stage::SubmoduleVerify,
            Stage::Integrate,
            Stage::TopVerify,
            Stage::Evaluate,
        ],
        BaselineMode::TopFeedbackOnly => vec![
            Stage::Decompose,
            Stage::GenerateHdl,
            Stage::SyntaxRepair,
            Stage::Integrate,
            Stage::TopVerify,
            Stage::Evaluate,
        ],
        BaselineMode::DirectC | BaselineMode::DirectNl | BaselineMode::NoDecompose => vec![
            Stage::GenerateHdl,
            Stage::SyntaxRepair,
            Stage::TopVerify,
            Stage::Evaluate,
        ],
    }
}

/// How the HDL syntax checker is bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum HdlCompilerBinding {
    Real {
        command_template: String,
        timeout_secs: u64,
    },
    MockPassAll,
    MockMarkerBased,
    MockFailAll {
        log: String,
    },
}

impl HdlCompilerBinding {
    pub fn instantiate(&self) -> Box<dyn HdlCompiler> {
        match self {
            HdlCompilerBinding::Real {
                command_template,
                timeout_secs,
            } => Box::new(RealHdlCompiler {
                command_template: command_template.clone(),
                timeout: std::time::Duration::from_secs(*timeout_secs),
            }),
            HdlCompilerBinding::MockPassAll => Box::new(MockHdlCompiler::pass_all()),
            HdlCompilerBinding::MockMarkerBased => Box::new(MockHdlCompiler::MarkerBased),
            HdlCompilerBinding::MockFailAll { log } => Box::new(MockHdlCompiler::fail_all(log)),
        }
    }

    fn is_mock(&self) -> bool {
        !matches!(self, HdlCompilerBinding::Real { .. })
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AdapterBindings {
    pub cc: Option<CcBinding>,
    pub hls: Option<HlsBinding>,
    pub sim: Option<SimBinding>,
    pub synth: Option<SynthBinding>,
    pub hdl_compiler: Option<HdlCompilerBinding>,
}

impl AdapterBindings {
    /// True when every *bound* adapter is a mock (gate for --auto-approve).
    pub fn all_mock(&self) -> bool {
        let cc = !matches!(self.cc, Some(CcBinding::Real { .. }));
        let hls = !matches!(self.hls, Some(HlsBinding::Real { .. }));
        let sim = !matches!(self.sim, Some(SimBinding::Real { .. }));
        let synth = !matches!(self.synth, Some(SynthBinding::Real { .. }));
        let hdl = self.hdl_compiler.as_ref().map(|h| h.is_mock()).unwrap_or(true);
        cc && hls && sim && synth && hdl
    }
}

fn default_parallelism() -> usize {
    4
}

fn default_dialect() -> DumpDialect {
    DumpDialect::TraceV1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub workspace_root: PathBuf,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub bindings: AdapterBindings,
    pub baseline_mode: BaselineMode,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub auto_approve: bool,
    #[serde(default)]
    pub rounds_override: Option<u32>,
    /// Natural-language design description; required in direct-nl mode.
    #[serde(default)]
    pub nl_description: Option<String>,
    #[serde(default = "default_dialect")]
    pub dump_dialect: DumpDialect,
    /// Include per-submodule golden probe feedback during top verification.
    /// Forced off in top-feedback-only mode.
    #[serde(default)]
    pub probe_feedback: bool,
}

impl PipelineConfig {
    /// Check mode/binding coherence. Runs before any gateway traffic.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut missing = Vec::new();
        let need_cc = matches!(
            self.baseline_mode,
            BaselineMode::Full | BaselineMode::TopFeedbackOnly
        );
        if need_cc && self.bindings.cc.is_none() {
            missing.push("cc");
        }
        if self.bindings.hls.is_none() {
            missing.push("hls");
        }
        if self.bindings.sim.is_none() {
            missing.push("sim");
        }
        if self.bindings.hdl_compiler.is_none() {
            missing.push("hdl_compiler");
        }
        if self.baseline_mode == BaselineMode::Full && self.bindings.synth.is_none() {
            missing.push("synth");
        }
        if !missing.is_empty() {
            return Err(PipelineError::Environment(format!(
                "baseline mode {:?} requires adapter bindings: {}",
                self.baseline_mode,
                missing.join(", ")
            )));
        }
        if self.baseline_mode == BaselineMode::DirectNl && self.nl_description.is_none() {
            return Err(PipelineError::Environment(
                "direct-nl mode requires nl_description".to_string(),
            ));
        }
        if self.auto_approve && !self.bindings.all_mock() {
            return Err(PipelineError::Environment(
                "--auto-approve is permitted only when every adapter binding is a mock"
                    .to_string(),
            ));
        }
        if self.parallelism == 0 {
            return Err(PipelineError::Environment(
                "parallelism must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Load a pipeline config from a TOML file.
pub fn load_config(path: &std::path::Path) -> Result<PipelineConfig, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Environment(format!("config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| PipelineError::Environment(format!("config {}: {e}", path.display())))
}

/// Build the provider named by the config endpoint: `mock:<script path>`
/// for the scripted provider, `http(s)://...` for a live endpoint.
pub fn build_provider(config: &ProviderConfig) -> Result<Box<dyn Provider>, PipelineError> {
    if let Some(script_path) = config.endpoint.strip_prefix("mock:") {
        let text = std::fs::read_to_string(script_path).map_err(|e| {
            PipelineError::Environment(format!("mock script {script_path}: {e}"))
        })?;
        let mock = ScriptedMock::from_script_text(&text)
            .map_err(|e| PipelineError::Environment(format!("mock script parse: {e}")))?;
        return Ok(Box::new(mock));
    }
    if config.endpoint.starts_with("http://") || config.endpoint.starts_with("https://") {
        return Ok(Box::new(HttpChatProvider::new(config.clone())));
    }
    Err(PipelineError::Environment(format!(
        "unusable provider endpoint {:?} (want mock:<path> or http[s]://...)",
        config.endpoint
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRunOutcome {
    pub exit_code: i32,
    pub rounds_run: u32,
    pub top_passes: u32,
    pub summary: Option<BenchmarkSummary>,
}

struct RunCtx<'a> {
    config: &'a PipelineConfig,
    ws: &'a Workspace,
    provider: &'a dyn Provider,
    compiler: Box<dyn HdlCompiler>,
    library: RuleLibrary,
    embedder: TrigramEmbedder,
    /// (round, unit, stage) -> recorded status, for resumption.
    done: BTreeMap<(u32, String, Stage), StageOutcome>,
    /// Per-stage debug invocations stop after this stage.
    stop_after: Option<Stage>,
}

impl RunCtx<'_> {
    fn blocked(&self, stage: Stage) -> bool {
        self.stop_after
            .map(|limit| stage.order() > limit.order())
            .unwrap_or(false)
    }

    fn recorded(&self, round: u32, unit: &str, stage: Stage) -> Option<StageOutcome> {
        self.done
            .get(&(round, unit.to_string(), stage))
            .copied()
    }

    fn record(
        &self,
        round: u32,
        unit: &str,
        stage: Stage,
        status: StageOutcome,
        attempts_used: u32,
        artifact_refs: Vec<String>,
        started: Instant,
    ) -> Result<(), PipelineError> {
        self.ws.append_run_record(&RunRecord {
            round_index: round,
            unit: unit.to_string(),
            stage,
            status,
            attempts_used,
            artifact_refs,
            wall_time_secs: started.elapsed().as_secs_f64(),
        })?;
        Ok(())
    }
}

fn plan_path(round: u32) -> String {
    format!("src/plan_r{round}.json")
}

fn sub_dir(id: &str, round: u32) -> String {
    format!("submodules/{id}/r{round}")
}

fn identity_case_map_for(trace: &PortTrace) -> BTreeMap<u64, u64> {
    trace
        .samples
        .iter()
        .map(|s| (s.sample_index, s.sample_index))
        .collect()
}

/// Interface definition of the integrated top, derived from the graph.
fn top_interface(
    graph: &crate::integrator::InstanceGraph,
    defs: &BTreeMap<String, InterfaceDefinition>,
) -> InterfaceDefinition {
    let mut rows: BTreeMap<String, PortMapRow> = BTreeMap::new();
    for p in &graph.primary_inputs {
        let width = defs[&graph.modules[&p.consumer]]
            .port_map
            .iter()
            .find(|r| r.hdl_port == p.consumer_port)
            .map(|r| r.width_bits)
            .unwrap_or(1);
        rows.entry(p.top_port.clone()).or_insert(PortMapRow {
            c_param: p.top_port.clone(),
            hdl_port: p.top_port.clone(),
            direction: PortDirection::In,
            width_bits: width,
        });
    }
    for p in &graph.primary_outputs {
        let width = defs[&graph.modules[&p.producer]]
            .port_map
            .iter()
            .find(|r| r.hdl_port == p.producer_port)
            .map(|r| r.width_bits)
            .unwrap_or(1);
        rows.entry(p.top_port.clone()).or_insert(PortMapRow {
            c_param: p.top_port.clone(),
            hdl_port: p.top_port.clone(),
            direction: PortDirection::Out,
            width_bits: width,
        });
    }
    InterfaceDefinition {
        submodule_id: "top".to_string(),
        port_map: rows.into_values().collect(),
    }
}

/// Produce (or reuse) the DUT testbench for `unit` and pass it through the
/// human approval gate. Adaptation happens once per unit; the approved
/// testbench is reused across rounds.
fn gated_testbench(
    ctx: &RunCtx<'_>,
    unit: &str,
    c_testbench: &str,
    interface: &InterfaceDefinition,
) -> Result<PathBuf, PipelineError> {
    let dut_dir = ctx.ws.resolve(&format!("dut/{unit}"));
    let tb_path = dut_dir.join("tb.v");
    if !tb_path.exists() {
        let (tb, _) = adapt_testbench(c_testbench, interface, ctx.provider, &ctx.config.provider)?;
        std::fs::create_dir_all(&dut_dir)?;
        std::fs::write(&tb_path, tb)?;
        write_pending_approval(&dut_dir)?;
        if ctx.config.auto_approve {
            set_approval(&dut_dir, true)?;
        }
    }
    match read_approval(&dut_dir)? {
        ApprovalState::Approved => Ok(tb_path),
        ApprovalState::Pending => Err(PipelineError::ApprovalPending {
            unit: unit.to_string(),
        }),
        ApprovalState::Rejected => {
            // a rejected testbench is regenerated on the next run
            std::fs::remove_file(&tb_path)?;
            Err(PipelineError::ApprovalPending {
                unit: unit.to_string(),
            })
        }
    }
}

/// Outcome of one submodule within one round.
struct SubResult {
    passed: bool,
}

#[allow(clippy::too_many_arguments)]
fn run_submodule(
    ctx: &RunCtx<'_>,
    round: u32,
    sub: &CSubmodule,
    c_testbench: &str,
    submodule_feedback: bool,
    defs_out: &std::sync::Mutex<BTreeMap<String, InterfaceDefinition>>,
    probes_out: &std::sync::Mutex<BTreeMap<String, PortTrace>>,
) -> Result<SubResult, PipelineError> {
    let id = sub.submodule_id.as_str();
    if ctx.blocked(Stage::GenerateHdl) {
        return Ok(SubResult { passed: false });
    }
    let dir = sub_dir(id, round);
    let limits = &ctx.ws.manifest().iteration_limits;
    let sim = ctx.config.bindings.sim.as_ref().unwrap();
    let hls = ctx.config.bindings.hls.as_ref().unwrap();

    // HLS golden reference, shared across rounds.
    let golden_dir = ctx.ws.resolve(&format!("golden/{id}"));
    if !golden_dir.join("golden.v").exists() {
        run_hls_synthesize(id, &sub.c_source, &golden_dir, hls)?;
    }
    let golden_hdl = golden_dir.join("golden.v");
    let golden_tb = golden_dir.join("tb.v");

    // GenerateHdl
    let design_path = ctx.ws.resolve(&format!("{dir}/design.v"));
    let iface_path = ctx.ws.resolve(&format!("{dir}/interface.json"));
    let started = Instant::now();
    let interface: InterfaceDefinition;
    if let Some(status) = ctx.recorded(round, id, Stage::GenerateHdl) {
        if status != StageOutcome::Pass {
            return Ok(SubResult { passed: false });
        }
        interface = serde_json::from_str(&std::fs::read_to_string(&iface_path)?)
            .map_err(|e| PipelineError::Environment(format!("corrupt {}: {e}", iface_path.display())))?;
    } else {
        let gen = generate_specs(sub, ctx.provider, &ctx.config.provider).and_then(|(spec, iface, _)| {
            let constraints = DesignConstraints::default();
            generate_hdl(sub, &spec, &iface, &constraints, ctx.provider, &ctx.config.provider)
                .map(|(hdl, _)| (spec, iface, hdl))
        });
        match gen {
            Ok((spec, iface, hdl)) => {
                std::fs::create_dir_all(ctx.ws.resolve(&dir))?;
                std::fs::write(&design_path, &hdl.code)?;
                std::fs::write(&iface_path, serde_json::to_string_pretty(&iface).unwrap())?;
                std::fs::write(
                    ctx.ws.resolve(&format!("{dir}/spec.json")),
                    serde_json::to_string_pretty(&spec).unwrap(),
                )?;
                let r = ctx.ws.record_artifact(Stage::GenerateHdl, round, &format!("{id}_design.v"), hdl.code.as_bytes())?;
                ctx.record(round, id, Stage::GenerateHdl, StageOutcome::Pass, hdl.attempt_index, vec![r], started)?;
                interface = iface;
            }
            Err(e) => {
                ctx.record(round, id, Stage::GenerateHdl, StageOutcome::Fail, 0, vec![], started)?;
                let _ = ctx.ws.record_artifact(
                    Stage::GenerateHdl,
                    round,
                    &format!("{id}_error.txt"),
                    e.to_string().as_bytes(),
                );
                return Ok(SubResult { passed: false });
            }
        }
    }
    defs_out
        .lock()
        .unwrap()
        .insert(id.to_string(), interface.clone());

    // SyntaxRepair
    if ctx.blocked(Stage::SyntaxRepair) {
        return Ok(SubResult { passed: false });
    }
    let syntax_ok_path = ctx.ws.resolve(&format!("{dir}/syntax_ok.v"));
    let started = Instant::now();
    if let Some(status) = ctx.recorded(round, id, Stage::SyntaxRepair) {
        if status != StageOutcome::Pass {
            return Ok(SubResult { passed: false });
        }
    } else {
        let code = std::fs::read_to_string(&design_path)?;
        let compile = ctx.compiler.compile(&code).map_err(PipelineError::from)?;
        let (status, final_code, attempts) = if compile.outcome == CompileOutcome::Pass {
            (StageOutcome::Pass, code, 0)
        } else {
            let out = repair_syntax_loop(
                &code,
                &compile.log,
                &ctx.library,
                &ctx.embedder,
                ctx.provider,
                &ctx.config.provider,
                ctx.compiler.as_ref(),
                limits.syntax_repair,
            )?;
            let n = out.attempts.len() as u32;
            for a in &out.attempts {
                let _ = ctx.ws.record_artifact(
                    Stage::SyntaxRepair,
                    round,
                    &format!("{id}_attempt{}.v", a.attempt_index),
                    a.code.as_bytes(),
                );
            }
            match out.verdict {
                SyntaxVerdict::Pass => (StageOutcome::Pass, out.final_code, n),
                SyntaxVerdict::Exhausted => (StageOutcome::Exhausted, out.final_code, n),
            }
        };
        if status == StageOutcome::Pass {
            std::fs::write(&syntax_ok_path, &final_code)?;
        }
        ctx.record(round, id, Stage::SyntaxRepair, status, attempts, vec![], started)?;
        if status != StageOutcome::Pass {
            return Ok(SubResult { passed: false });
        }
    }

    if !submodule_feedback || ctx.blocked(Stage::SubmoduleVerify) {
        return Ok(SubResult {
            passed: !ctx.blocked(Stage::SubmoduleVerify),
        });
    }

    // Testbench adaptation + approval gate.
    let tb_path = gated_testbench(ctx, id, c_testbench, &interface)?;

    // SubmoduleVerify: functional loop against the golden trace.
    let final_path = ctx.ws.resolve(&format!("{dir}/final.v"));
    let probe_path = ctx.ws.resolve(&format!("dumps/{id}_r{round}_golden.trace"));
    let started = Instant::now();
    if let Some(status) = ctx.recorded(round, id, Stage::SubmoduleVerify) {
        if status == StageOutcome::Pass {
            let t = PortTrace::from_trace_v1(&std::fs::read_to_string(&probe_path)?)
                .map_err(|e| PipelineError::Environment(format!("corrupt {}: {e}", probe_path.display())))?;
            probes_out.lock().unwrap().insert(id.to_string(), t);
            return Ok(SubResult { passed: true });
        }
        return Ok(SubResult { passed: false });
    }
    let golden_raw = run_rtl_sim(&golden_hdl, &golden_tb, sim)?;
    let golden_trace = normalize_dump(&golden_raw, ctx.config.dump_dialect)?;
    let case_map = identity_case_map_for(&golden_trace);
    let work_dir = ctx.ws.resolve(&format!("{dir}/attempts"));
    let loop_cfg = FunctionalLoopConfig {
        unit: id.to_string(),
        c_reference: sub.c_source.clone(),
        dut_testbench: &tb_path,
        golden_design: &golden_hdl,
        golden_testbench: &golden_tb,
        sim,
        dut_dialect: ctx.config.dump_dialect,
        golden_dialect: ctx.config.dump_dialect,
        case_map,
        stimuli: BTreeMap::new(),
        max_prompt_entries: 20,
        limit: limits.functional_repair,
        work_dir: &work_dir,
        slice_note_fn: None,
    };
    let initial = std::fs::read_to_string(&syntax_ok_path)?;
    let result = functional_repair_loop(
        &initial,
        &loop_cfg,
        ctx.provider,
        &ctx.config.provider,
        ctx.compiler.as_ref(),
        &ctx.library,
        &ctx.embedder,
    )?;
    let mut refs = Vec::new();
    for a in &result.attempts {
        if let Some(log) = &a.mismatch_log {
            let r = ctx.ws.record_artifact(
                Stage::SubmoduleVerify,
                round,
                &format!("{id}_iter{}.mismatch", a.iteration),
                log.to_log_text().as_bytes(),
            )?;
            refs.push(r);
        }
    }
    match result.verdict {
        FunctionalVerdict::Pass { final_code } => {
            std::fs::write(&final_path, &final_code)?;
            std::fs::create_dir_all(probe_path.parent().unwrap())?;
            std::fs::write(&probe_path, golden_trace.to_trace_v1())?;
            probes_out.lock().unwrap().insert(id.to_string(), golden_trace);
            ctx.record(round, id, Stage::SubmoduleVerify, StageOutcome::Pass, result.gateway_calls, refs, started)?;
            Ok(SubResult { passed: true })
        }
        FunctionalVerdict::Exhausted { .. } => {
            ctx.record(round, id, Stage::SubmoduleVerify, StageOutcome::Exhausted, result.gateway_calls, refs, started)?;
            Ok(SubResult { passed: false })
        }
    }
}

/// One decomposed round (full or top-feedback-only). Returns whether the
/// round reached top-level Pass.
fn run_round_decomposed(ctx: &RunCtx<'_>, round: u32) -> Result<bool, PipelineError> {
    let manifest = ctx.ws.manifest().clone();
    let c_source = std::fs::read_to_string(&manifest.c_source_path)?;
    let c_testbench = std::fs::read_to_string(&manifest.c_testbench_path)?;
    let submodule_feedback = ctx.config.baseline_mode == BaselineMode::Full;
    let cc = ctx.config.bindings.cc.as_ref().unwrap();
    let sim = ctx.config.bindings.sim.as_ref().unwrap();
    let hls = ctx.config.bindings.hls.as_ref().unwrap();

    // Decompose (+ re-integration check).
    if ctx.blocked(Stage::Decompose) {
        return Ok(false);
    }
    let started = Instant::now();
    let plan: DecompositionPlan;
    match ctx.recorded(round, TOP_UNIT, Stage::Decompose) {
        Some(StageOutcome::Pass) => {
            let text = std::fs::read_to_string(ctx.ws.resolve(&plan_path(round)))?;
            plan = serde_json::from_str(&text)
                .map_err(|e| PipelineError::Environment(format!("corrupt plan: {e}")))?;
        }
        Some(_) => return Ok(false),
        None => {
            let proposed = match propose_decomposition(&c_source, ctx.provider, &ctx.config.provider)
            {
                Ok(p) => p,
                Err(DecomposeError::Gateway(e)) => return Err(e.into()),
                Err(e) => {
                    ctx.record(round, TOP_UNIT, Stage::Decompose, StageOutcome::Fail, 0, vec![], started)?;
                    let _ = ctx.ws.record_artifact(
                        Stage::Decompose,
                        round,
                        "error.txt",
                        e.to_string().as_bytes(),
                    );
                    return Ok(false);
                }
            };
            match reintegrate_and_check(&proposed, &c_source, &c_testbench, cc)? {
                ReintegrationVerdict::Pass => {
                    ctx.ws.write_atomic(
                        &plan_path(round),
                        serde_json::to_string_pretty(&proposed).unwrap().as_bytes(),
                    )?;
                    ctx.record(round, TOP_UNIT, Stage::Decompose, StageOutcome::Pass, 1, vec![], started)?;
                    plan = proposed;
                }
                ReintegrationVerdict::Fail { diff_report } => {
                    let r = ctx.ws.record_artifact(
                        Stage::Decompose,
                        round,
                        "reintegration.diff",
                        diff_report.as_bytes(),
                    )?;
                    ctx.record(round, TOP_UNIT, Stage::Decompose, StageOutcome::Fail, 1, vec![r], started)?;
                    return Ok(false);
                }
            }
        }
    }

    // Per-submodule stages, optionally in parallel.
    let defs_out = std::sync::Mutex::new(BTreeMap::new());
    let probes_out = std::sync::Mutex::new(BTreeMap::new());
    let results: Vec<Result<SubResult, PipelineError>> = if ctx.config.parallelism <= 1 {
        plan.submodules
            .iter()
            .map(|sub| {
                run_submodule(ctx, round, sub, &c_testbench, submodule_feedback, &defs_out, &probes_out)
            })
            .collect()
    } else {
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for chunk in plan.submodules.chunks(
                plan.submodules.len().div_ceil(ctx.config.parallelism).max(1),
            ) {
                handles.push(scope.spawn(|| {
                    chunk
                        .iter()
                        .map(|sub| {
                            run_submodule(
                                ctx,
                                round,
                                sub,
                                &c_testbench,
                                submodule_feedback,
                                &defs_out,
                                &probes_out,
                            )
                        })
                        .collect::<Vec<_>>()
                }));
            }
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("submodule worker panicked"))
                .collect()
        })
    };
    let mut all_pass = true;
    for r in results {
        if !r?.passed {
            all_pass = false;
        }
    }
    if !all_pass {
        return Ok(false);
    }
    let defs = defs_out.into_inner().unwrap();
    let probes = probes_out.into_inner().unwrap();

    // Integrate.
    if ctx.blocked(Stage::Integrate) {
        return Ok(false);
    }
    let started = Instant::now();
    let inst_path = ctx.ws.resolve(&format!("dut/r{round}/top_instrumented.v"));
    let top_path = ctx.ws.resolve(&format!("dut/r{round}/top.v"));
    let graph: crate::integrator::InstanceGraph;
    match ctx.recorded(round, TOP_UNIT, Stage::Integrate) {
        Some(StageOutcome::Pass) => {
            // The graph is reconstructed from the saved top, not persisted.
            let top_code = std::fs::read_to_string(&top_path)?;
            graph = crate::integrator::parse_instance_graph(&top_code, &defs)?;
        }
        Some(_) => return Ok(false),
        None => {
            let generated = generate_top_level(&plan, &c_source, &defs, ctx.provider, &ctx.config.provider);
            let (top_code, g, calls) = match generated {
                Ok(v) => v,
                Err(IntegratorError::Structure { defects }) => {
                    let r = ctx.ws.record_artifact(
                        Stage::Integrate,
                        round,
                        "defects.txt",
                        defects.join("\n").as_bytes(),
                    )?;
                    ctx.record(round, TOP_UNIT, Stage::Integrate, StageOutcome::Fail, 2, vec![r], started)?;
                    return Ok(false);
                }
                Err(e) => return Err(e.into()),
            };
            let (instrumented, _probes) = instrument_boundaries(&top_code, &g, &defs)?;
            std::fs::create_dir_all(inst_path.parent().unwrap())?;
            std::fs::write(&top_path, &top_code)?;
            std::fs::write(&inst_path, &instrumented)?;
            // canonical externally-visible copy
            ctx.ws
                .write_atomic("dut/top/top_instrumented.v", instrumented.as_bytes())?;
            ctx.record(round, TOP_UNIT, Stage::Integrate, StageOutcome::Pass, calls, vec![], started)?;
            graph = g;
        }
    }

    if ctx.blocked(Stage::TopVerify) {
        return Ok(false);
    }

    // Top golden from HLS on the ORIGINAL program.
    let golden_dir = ctx.ws.resolve("golden/top");
    if !golden_dir.join("golden.v").exists() {
        run_hls_synthesize("top", &c_source, &golden_dir, hls)?;
    }
    let golden_hdl = golden_dir.join("golden.v");
    let golden_tb = golden_dir.join("tb.v");

    // DUT top testbench through the approval gate.
    let top_iface = top_interface(&graph, &defs);
    let tb_path = gated_testbench(ctx, "top", &c_testbench, &top_iface)?;

    // TopVerify.
    let started = Instant::now();
    match ctx.recorded(round, TOP_UNIT, Stage::TopVerify) {
        Some(StageOutcome::Pass) => return Ok(true),
        Some(_) => return Ok(false),
        None => {}
    }
    let golden_raw = run_rtl_sim(&golden_hdl, &golden_tb, sim)?;
    let golden_trace = normalize_dump(&golden_raw, ctx.config.dump_dialect)?;
    let case_map = identity_case_map_for(&golden_trace);
    let use_probes = submodule_feedback && ctx.config.probe_feedback;
    let submodule_golden_probes = if use_probes {
        graph
            .modules
            .iter()
            .filter_map(|(inst, module)| probes.get(module).map(|t| (inst.clone(), t.clone())))
            .collect()
    } else {
        BTreeMap::new()
    };
    let work_dir = ctx.ws.resolve(&format!("dut/r{round}/attempts"));
    let top_cfg = TopLoopConfig {
        c_reference: c_source.clone(),
        dut_testbench: &tb_path,
        golden_design: &golden_hdl,
        golden_testbench: &golden_tb,
        sim,
        dut_dialect: ctx.config.dump_dialect,
        golden_dialect: ctx.config.dump_dialect,
        case_map,
        stimuli: BTreeMap::new(),
        max_prompt_entries: 20,
        limit: ctx.ws.manifest().iteration_limits.integration_repair,
        work_dir: &work_dir,
        graph: &graph,
        interface_defs: &defs,
        submodule_golden_probes,
    };
    let instrumented = std::fs::read_to_string(&inst_path)?;
    let result = verify_top(
        &instrumented,
        &top_cfg,
        ctx.provider,
        &ctx.config.provider,
        ctx.compiler.as_ref(),
        &ctx.library,
        &ctx.embedder,
    )?;
    let mut refs = Vec::new();
    for (i, a) in result.attempts.iter().enumerate() {
        if let Some(log) = &a.mismatch_log {
            let text = match result.slices.get(i) {
                Some(slice) => crate::integrator::annotated_log_text(log, slice),
                None => log.to_log_text(),
            };
            let r = ctx.ws.record_artifact(
                Stage::TopVerify,
                round,
                &format!("iter{}.mismatch", a.iteration),
                text.as_bytes(),
            )?;
            refs.push(r);
        }
    }
    match result.verdict {
        FunctionalVerdict::Pass { final_code } => {
            std::fs::write(ctx.ws.resolve(&format!("dut/r{round}/top_final.v")), &final_code)?;
            ctx.record(round, TOP_UNIT, Stage::TopVerify, StageOutcome::Pass, result.gateway_calls, refs, started)?;
            Ok(true)
        }
        FunctionalVerdict::Exhausted { .. } => {
            ctx.record(round, TOP_UNIT, Stage::TopVerify, StageOutcome::Exhausted, result.gateway_calls, refs, started)?;
            Ok(false)
        }
    }
}

fn direct_generation_prompt(ctx: &RunCtx<'_>, c_source: &str) -> String {
    match ctx.config.baseline_mode {
        BaselineMode::DirectNl => format!(
            "Generate a synthesizable Verilog module named `top` implementing this design \
             description. Return the module between triple backticks with the `verilog` tag.\n\
             \nDescription:\n{}\n",
            ctx.config.nl_description.as_deref().unwrap_or_default()
        ),
        _ => format!(
            "Generate a synthesizable Verilog module named `top` implementing this C/C++ \
             program. Return the module between triple backticks with the `verilog` tag.\n\
             \nC source:\n```c\n{c_source}\n```\n"
        ),
    }
}

/// One round of a no-decomposition mode (direct-c, direct-nl, no-decompose).
fn run_round_direct(ctx: &RunCtx<'_>, round: u32) -> Result<bool, PipelineError> {
    let manifest = ctx.ws.manifest().clone();
    let c_source = std::fs::read_to_string(&manifest.c_source_path)?;
    let sim = ctx.config.bindings.sim.as_ref().unwrap();
    let hls = ctx.config.bindings.hls.as_ref().unwrap();
    let with_loops = ctx.config.baseline_mode == BaselineMode::NoDecompose;
    let dir = format!("dut/r{round}");
    if ctx.blocked(Stage::GenerateHdl) {
        return Ok(false);
    }

    // GenerateHdl (one-shot prompt, no spec files).
    let design_path = ctx.ws.resolve(&format!("{dir}/design.v"));
    let started = Instant::now();
    match ctx.recorded(round, TOP_UNIT, Stage::GenerateHdl) {
        Some(StageOutcome::Pass) => {}
        Some(_) => return Ok(false),
        None => {
            let prompt = direct_generation_prompt(ctx, &c_source);
            let ex = crate::gateway::complete(&ctx.config.provider, ctx.provider, &prompt)?;
            match crate::gateway::extract_fenced_code(&ex.response, Some("verilog")) {
                Ok(code) => {
                    std::fs::create_dir_all(design_path.parent().unwrap())?;
                    std::fs::write(&design_path, &code)?;
                    ctx.record(round, TOP_UNIT, Stage::GenerateHdl, StageOutcome::Pass, 1, vec![], started)?;
                }
                Err(_) => {
                    ctx.record(round, TOP_UNIT, Stage::GenerateHdl, StageOutcome::Fail, 1, vec![], started)?;
                    return Ok(false);
                }
            }
        }
    }

    // SyntaxRepair: direct baselines get a bare check; no-decompose keeps
    // the RAG loop.
    if ctx.blocked(Stage::SyntaxRepair) {
        return Ok(false);
    }
    let syntax_ok_path = ctx.ws.resolve(&format!("{dir}/syntax_ok.v"));
    let started = Instant::now();
    match ctx.recorded(round, TOP_UNIT, Stage::SyntaxRepair) {
        Some(StageOutcome::Pass) => {}
        Some(_) => return Ok(false),
        None => {
            let code = std::fs::read_to_string(&design_path)?;
            let compile = ctx.compiler.compile(&code).map_err(PipelineError::from)?;
            let (status, final_code, attempts) = if compile.outcome == CompileOutcome::Pass {
                (StageOutcome::Pass, code, 0)
            } else if with_loops {
                let out = repair_syntax_loop(
                    &code,
                    &compile.log,
                    &ctx.library,
                    &ctx.embedder,
                    ctx.provider,
                    &ctx.config.provider,
                    ctx.compiler.as_ref(),
                    manifest.iteration_limits.syntax_repair,
                )?;
                let n = out.attempts.len() as u32;
                match out.verdict {
                    SyntaxVerdict::Pass => (StageOutcome::Pass, out.final_code, n),
                    SyntaxVerdict::Exhausted => (StageOutcome::Exhausted, out.final_code, n),
                }
            } else {
                (StageOutcome::Fail, code, 0)
            };
            if status == StageOutcome::Pass {
                std::fs::write(&syntax_ok_path, &final_code)?;
            }
            ctx.record(round, TOP_UNIT, Stage::SyntaxRepair, status, attempts, vec![], started)?;
            if status != StageOutcome::Pass {
                return Ok(false);
            }
        }
    }

    if ctx.blocked(Stage::TopVerify) {
        return Ok(false);
    }

    // Top golden; the golden testbench also drives the DUT here (direct
    // modes skip testbench adaptation).
    let golden_dir = ctx.ws.resolve("golden/top");
    if !golden_dir.join("golden.v").exists() {
        run_hls_synthesize("top", &c_source, &golden_dir, hls)?;
    }
    let golden_hdl = golden_dir.join("golden.v");
    let golden_tb = golden_dir.join("tb.v");

    // TopVerify.
    let started = Instant::now();
    match ctx.recorded(round, TOP_UNIT, Stage::TopVerify) {
        Some(StageOutcome::Pass) => return Ok(true),
        Some(_) => return Ok(false),
        None => {}
    }
    let golden_raw = run_rtl_sim(&golden_hdl, &golden_tb, sim)?;
    let golden_trace = normalize_dump(&golden_raw, ctx.config.dump_dialect)?;
    let case_map = identity_case_map_for(&golden_trace);
    if with_loops {
        let work_dir = ctx.ws.resolve(&format!("{dir}/attempts"));
        let loop_cfg = FunctionalLoopConfig {
            unit: "top".to_string(),
            c_reference: c_source.clone(),
            dut_testbench: &golden_tb,
            golden_design: &golden_hdl,
            golden_testbench: &golden_tb,
            sim,
            dut_dialect: ctx.config.dump_dialect,
            golden_dialect: ctx.config.dump_dialect,
            case_map,
            stimuli: BTreeMap::new(),
            max_prompt_entries: 20,
            limit: manifest.iteration_limits.functional_repair,
            work_dir: &work_dir,
            slice_note_fn: None,
        };
        let initial = std::fs::read_to_string(&syntax_ok_path)?;
        let result = functional_repair_loop(
            &initial,
            &loop_cfg,
            ctx.provider,
            &ctx.config.provider,
            ctx.compiler.as_ref(),
            &ctx.library,
            &ctx.embedder,
        )?;
        match result.verdict {
            FunctionalVerdict::Pass { final_code } => {
                std::fs::write(ctx.ws.resolve(&format!("{dir}/top_final.v")), &final_code)?;
                ctx.record(round, TOP_UNIT, Stage::TopVerify, StageOutcome::Pass, result.gateway_calls, vec![], started)?;
                Ok(true)
            }
            FunctionalVerdict::Exhausted { .. } => {
                ctx.record(round, TOP_UNIT, Stage::TopVerify, StageOutcome::Exhausted, result.gateway_calls, vec![], started)?;
                Ok(false)
            }
        }
    } else {
        // Single differential check, no repair traffic.
        let dut_raw = run_rtl_sim(&syntax_ok_path, &golden_tb, sim)?;
        let dut_trace = normalize_dump(&dut_raw, ctx.config.dump_dialect)?;
        let log = compare_traces("top", &dut_trace, &golden_trace, &case_map, &BTreeMap::new())?;
        let status = if log.is_pass() {
            std::fs::copy(&syntax_ok_path, ctx.ws.resolve(&format!("{dir}/top_final.v")))?;
            StageOutcome::Pass
        } else {
            let _ = ctx.ws.record_artifact(
                Stage::TopVerify,
                round,
                "direct.mismatch",
                log.to_log_text().as_bytes(),
            );
            StageOutcome::Fail
        };
        ctx.record(round, TOP_UNIT, Stage::TopVerify, status, 0, vec![], started)?;
        Ok(status == StageOutcome::Pass)
    }
}

/// Synthesis evaluation + report emission after all rounds.
fn evaluate_and_report(
    ctx: &RunCtx<'_>,
    rounds: u32,
    any_pass: bool,
) -> Result<BenchmarkSummary, PipelineError> {
    let started = Instant::now();
    let manifest = ctx.ws.manifest().clone();
    let last_final = (0..rounds)
        .rev()
        .map(|r| ctx.ws.resolve(&format!("dut/r{r}/top_final.v")))
        .find(|p| p.exists());

    if ctx.recorded(rounds.saturating_sub(1), TOP_UNIT, Stage::Evaluate).is_none() {
        if let (Some(synth), Some(final_path), true) = (
            ctx.config.bindings.synth.as_ref(),
            last_final.as_ref(),
            any_pass,
        ) {
            let golden = ctx.ws.resolve("golden/top/golden.v");
            let agent_report = run_logic_synth(final_path, manifest.clock_period_ns, synth)?;
            let mut rows = vec![PpaComparison {
                benchmark: manifest.project_name.clone(),
                source: DesignSource::Agent,
                report: agent_report.clone(),
                clock_period_ns: manifest.clock_period_ns,
                reduction_vs_hls_area_percent: None,
                reduction_vs_hls_power_percent: None,
            }];
            if golden.exists() {
                let hls_report = run_logic_synth(&golden, manifest.clock_period_ns, synth)?;
                let red = compute_reduction(
                    &agent_report,
                    manifest.clock_period_ns,
                    &hls_report,
                    manifest.clock_period_ns,
                )?;
                rows[0].reduction_vs_hls_area_percent = Some(red.area_percent);
                rows[0].reduction_vs_hls_power_percent = Some(red.power_percent);
                rows.push(PpaComparison {
                    benchmark: manifest.project_name.clone(),
                    source: DesignSource::Hls,
                    report: hls_report,
                    clock_period_ns: manifest.clock_period_ns,
                    reduction_vs_hls_area_percent: None,
                    reduction_vs_hls_power_percent: None,
                });
                let golden_text = std::fs::read_to_string(&golden)?;
                let agent_text = std::fs::read_to_string(final_path)?;
                save_loc(
                    ctx.ws,
                    &[
                        count_hdl_lines("agent_top.v", &agent_text),
                        count_hdl_lines("hls_top.v", &golden_text),
                    ],
                )?;
            }
            save_ppa(ctx.ws, &rows)?;
        }
        ctx.record(
            rounds.saturating_sub(1),
            TOP_UNIT,
            Stage::Evaluate,
            StageOutcome::Pass,
            0,
            vec![],
            started,
        )?;
    }
    Ok(emit_report(ctx.ws)?)
}

/// Execute the configured pipeline. Exit code 0 iff at least one round
/// reaches top-level Pass; verification exhaustion gives 1 with the report
/// still emitted; environment failures surface as errors (exit 2).
pub fn run_pipeline(
    config: &PipelineConfig,
    provider: &dyn Provider,
) -> Result<PipelineRunOutcome, PipelineError> {
    run_pipeline_staged(config, provider, None)
}

/// Like [`run_pipeline`] but stopping after `stop_after`, which is how the
/// per-stage debugging subcommands execute a single stage (earlier stages
/// are resumed from their records, never re-run). Staged invocations exit 0
/// unless an error occurs.
pub fn run_pipeline_staged(
    config: &PipelineConfig,
    provider: &dyn Provider,
    stop_after: Option<Stage>,
) -> Result<PipelineRunOutcome, PipelineError> {
    config.validate()?;
    let ws = open_workspace(&config.workspace_root)?;
    let embedder = TrigramEmbedder::default();
    let library = RuleLibrary::from_ndrules(crate::rag::starter_library_text(), &embedder)?;
    let mut done = BTreeMap::new();
    for r in ws.load_run_records()? {
        done.insert((r.round_index, r.unit.clone(), r.stage), r.status);
    }
    let compiler = config
        .bindings
        .hdl_compiler
        .as_ref()
        .expect("validated")
        .instantiate();
    let ctx = RunCtx {
        config,
        ws: &ws,
        provider,
        compiler,
        library,
        embedder,
        done,
        stop_after,
    };
    let rounds = config
        .rounds_override
        .unwrap_or(ws.manifest().repetitions_n)
        .max(1);

    let mut top_passes = 0u32;
    for round in 0..rounds {
        let passed = match config.baseline_mode {
            BaselineMode::Full | BaselineMode::TopFeedbackOnly => {
                run_round_decomposed(&ctx, round)?
            }
            _ => run_round_direct(&ctx, round)?,
        };
        if passed {
            top_passes += 1;
        }
    }

    let summary = if ctx.blocked(Stage::Evaluate) {
        None
    } else {
        Some(evaluate_and_report(&ctx, rounds, top_passes > 0)?)
    };
    let exit_code = if top_passes > 0 || stop_after.is_some() {
        0
    } else {
        1
    };
    Ok(PipelineRunOutcome {
        exit_code,
        rounds_run: rounds,
        top_passes,
        summary,
    })
}

/// CLI surface for the human testbench-approval gate.
pub fn approve_testbench(
    ws: &Workspace,
    unit: &str,
    approve: bool,
) -> Result<ApprovalState, PipelineError> {
    let dir = ws.resolve(&format!("dut/{unit}"));
    let was_pending = matches!(read_approval(&dir)?, ApprovalState::Pending);
    let state = set_approval(&dir, approve)?;
    if !approve && was_pending {
        ws.append_run_record(&RunRecord {
            round_index: 0,
            unit: unit.to_string(),
            stage: Stage::SubmoduleVerify,
            status: StageOutcome::Fail,
            attempts_used: 0,
            artifact_refs: vec![],
            wall_time_secs: 0.0,
        })?;
    }
    Ok(state)
}

/// Units with a testbench currently awaiting a decision.
pub fn pending_approvals(ws: &Workspace) -> Result<Vec<String>, PipelineError> {
    let mut pending = Vec::new();
    let dut = ws.resolve("dut");
    if dut.is_dir() {
        let mut names: BTreeSet<String> = BTreeSet::new();
        for entry in std::fs::read_dir(&dut)? {
            let entry = entry?;
            if entry.path().is_dir() {
                names.insert(entry.file_name().to_string_lossy().to_string());
            }
        }
        for name in names {
            let dir = dut.join(&name);
            if let Ok(ApprovalState::Pending) = read_approval(&dir) {
                pending.push(name);
            }
        }
    }
    Ok(pending)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config(root: &std::path::Path) -> PipelineConfig {
        PipelineConfig {
            workspace_root: root.to_path_buf(),
            provider: ProviderConfig::default(),
            bindings: AdapterBindings {
                cc: Some(CcBinding::Mock {
                    fixture_dir: root.join("fx/cc"),
                }),
                hls: Some(HlsBinding::Mock {
                    fixture_dir: root.join("fx/hls"),
                }),
                sim: Some(SimBinding::Mock {
                    fixture_dir: root.join("fx/sim"),
                }),
                synth: Some(SynthBinding::Mock {
                    fixture_dir: root.join("fx/synth"),
                }),
                hdl_compiler: Some(HdlCompilerBinding::MockMarkerBased),
            },
            baseline_mode: BaselineMode::Full,
            parallelism: 1,
            auto_approve: true,
            rounds_override: None,
            nl_description: None,
            dump_dialect: DumpDialect::TraceV1,
            probe_feedback: false,
        }
    }

    #[test]
    fn missing_sim_binding_is_environment_error() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = base_config(tmp.path());
        cfg.bindings.sim = None;
        let err = cfg.validate().unwrap_err();
        match &err {
            PipelineError::Environment(msg) => assert!(msg.contains("sim"), "{msg}"),
            other => panic!("wrong error: {other}"),
        }
        assert_eq!(exit_code_for(&err), 2);
    }

    #[test]
    fn full_mode_requires_all_adapter_kinds() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = base_config(tmp.path());
        cfg.bindings.synth = None;
        assert!(cfg.validate().is_err());
        cfg.baseline_mode = BaselineMode::NoDecompose;
        assert!(cfg.validate().is_ok(), "synth optional outside full mode");
    }

    #[test]
    fn auto_approve_requires_all_mock_bindings() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = base_config(tmp.path());
        cfg.bindings.sim = Some(SimBinding::Real {
            command_template: "sim {design} {testbench} {out}".into(),
            timeout_secs: 60,
        });
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("auto-approve"));
        cfg.auto_approve = false;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn direct_nl_requires_description() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = base_config(tmp.path());
        cfg.baseline_mode = BaselineMode::DirectNl;
        assert!(cfg.validate().is_err());
        cfg.nl_description = Some("an 8-bit incrementer".into());
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn mode_table_is_exact() {
        assert_eq!(stages_for_mode(BaselineMode::Full).len(), 7);
        let tfo = stages_for_mode(BaselineMode::TopFeedbackOnly);
        assert!(!tfo.contains(&Stage::SubmoduleVerify));
        assert!(tfo.contains(&Stage::Decompose));
        for m in [BaselineMode::DirectC, BaselineMode::DirectNl, BaselineMode::NoDecompose] {
            let stages = stages_for_mode(m);
            assert!(!stages.contains(&Stage::Decompose));
            assert!(!stages.contains(&Stage::Integrate));
            assert!(!stages.contains(&Stage::SubmoduleVerify));
        }
    }

    #[test]
    fn provider_endpoint_dispatch() {
        let tmp = tempfile::tempdir().unwrap();
        let script = tmp.path().join("s.ndjson");
        std::fs::write(
            &script,
            r#"{"expect_substring":"x","respond":{"response_text":"y"}}"#,
        )
        .unwrap();
        let cfg = ProviderConfig {
            endpoint: format!("mock:{}", script.display()),
            ..ProviderConfig::default()
        };
        assert!(build_provider(&cfg).is_ok());
        let bad = ProviderConfig {
            endpoint: "ftp://nope".into(),
            ..ProviderConfig::default()
        };
        assert!(build_provider(&bad).is_err());
    }

    #[test]
    fn baseline_mode_parses_from_cli_names() {
        use std::str::FromStr;
        assert_eq!(BaselineMode::from_str("full").unwrap(), BaselineMode::Full);
        assert_eq!(
            BaselineMode::from_str("top-feedback-only").unwrap(),
            BaselineMode::TopFeedbackOnly
        );
        assert!(BaselineMode::from_str("bogus").is_err());
    }
}
