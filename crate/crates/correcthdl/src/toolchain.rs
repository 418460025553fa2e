//! Adapters over external tools: C compiler/executor, HLS synthesizer, RTL
//! simulator, and logic synthesizer.
//!
//! Every adapter has a real binding (a command template resolved against the
//! system path, optionally prefixed by `CORRECTHDL_TOOLS`) and a deterministic
//! mock binding backed by a fixture directory. Mock entries are keyed by the
//! content hash of the inputs, so identical inputs replay byte-identical
//! outputs on any host. The pipeline's control flow is identical under
//! either binding.

use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Condvar, Mutex, OnceLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::trace::{PortDecl, PortTrace, TraceError};

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("environment error: {0}")]
    Environment(String),
    #[error("execution error: binary exited with code {code}; stderr: {stderr}")]
    Execution { code: i32, stderr: String },
    #[error("build error:\n{0}")]
    Build(String),
    #[error("synthesis error:\n{0}")]
    Synthesis(String),
    #[error("simulation error:\n{0}")]
    Sim(String),
    #[error("tool timed out after {0:?}")]
    Timeout(Duration),
    #[error("mock fixture miss for content hash {0}")]
    MockMiss(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("trace normalization failed: {0}")]
    Trace(#[from] TraceError),
    #[error("unparsable synthesis report, first unmatched line: {0:?}")]
    ReportParse(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

fn io_err(path: &Path, source: std::io::Error) -> ToolError {
    ToolError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn content_hash(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p);
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// Global cap on concurrent external tool processes.
struct Semaphore {
    state: Mutex<usize>,
    cv: Condvar,
    cap: usize,
}

impl Semaphore {
    fn acquire(&self) -> SemGuard<'_> {
        let mut n = self.state.lock().unwrap();
        while *n >= self.cap {
            n = self.cv.wait(n).unwrap();
        }
        *n += 1;
        SemGuard { sem: self }
    }
}

struct SemGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.sem.state.lock().unwrap();
        *n -= 1;
        self.sem.cv.notify_one();
    }
}

fn tool_semaphore() -> &'static Semaphore {
    static SEM: OnceLock<Semaphore> = OnceLock::new();
    SEM.get_or_init(|| Semaphore {
        state: Mutex::new(0),
        cv: Condvar::new(),
        cap: std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(4),
    })
}

/// Run an external command with a wall-clock timeout, honoring
/// `CORRECTHDL_TOOLS` as a search-path prefix.
fn run_command(
    program: &str,
    args: &[String],
    cwd: &Path,
    timeout: Duration,
) -> Result<(i32, Vec<u8>, Vec<u8>), ToolError> {
    let _guard = tool_semaphore().acquire();
    let mut cmd = Command::new(program);
    cmd.args(args)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if let Ok(prefix) = std::env::var("CORRECTHDL_TOOLS") {
        let path = std::env::var("PATH").unwrap_or_default();
        cmd.env("PATH", format!("{prefix}:{path}"));
    }
    let mut child = cmd.spawn().map_err(|e| {
        ToolError::Environment(format!("cannot launch {program}: {e}"))
    })?;
    let start = Instant::now();
    loop {
        match child.try_wait() {
            Ok(Some(status)) => {
                let mut stdout = Vec::new();
                let mut stderr = Vec::new();
                if let Some(mut s) = child.stdout.take() {
                    s.read_to_end(&mut stdout).ok();
                }
                if let Some(mut s) = child.stderr.take() {
                    s.read_to_end(&mut stderr).ok();
                }
                return Ok((status.code().unwrap_or(-1), stdout, stderr));
            }
            Ok(None) => {
                if start.elapsed() > timeout {
                    child.kill().ok();
                    child.wait().ok();
                    return Err(ToolError::Timeout(start.elapsed()));
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(ToolError::Environment(format!("wait on {program}: {e}"))),
        }
    }
}

fn which(program: &str) -> bool {
    let mut paths = Vec::new();
    if let Ok(prefix) = std::env::var("CORRECTHDL_TOOLS") {
        paths.push(prefix);
    }
    if let Ok(p) = std::env::var("PATH") {
        paths.extend(p.split(':').map(|s| s.to_string()));
    }
    paths
        .iter()
        .any(|dir| Path::new(dir).join(program).is_file())
}

/// Expand `{design}`, `{testbench}`, `{out}`, `{src}`, `{period}` placeholders
/// in a command template and split it into program + args.
fn render_command(template: &str, subs: &[(&str, &str)]) -> Result<(String, Vec<String>), ToolError> {
    let mut text = template.to_string();
    for (k, v) in subs {
        text = text.replace(&format!("{{{k}}}"), v);
    }
    let mut parts = text.split_whitespace().map(|s| s.to_string());
    let program = parts
        .next()
        .ok_or_else(|| ToolError::Environment("empty command template".to_string()))?;
    Ok((program, parts.collect()))
}

// ---------------------------------------------------------------------------
// C compiler / executor
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompileOutcome {
    Pass,
    Fail,
}

#[derive(Debug, Clone)]
pub struct CompileResult {
    pub outcome: CompileOutcome,
    pub log: String,
    pub artifact_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CcBinding {
    /// System C compiler, e.g. "cc" or "gcc".
    Real { compiler: String },
    /// Replay fixture stdout keyed by content hash of all inputs.
    Mock { fixture_dir: PathBuf },
}

/// Pre-populate a mock C-compiler fixture entry for the given inputs.
pub fn mock_cc_insert(
    fixture_dir: &Path,
    sources: &[&str],
    testbench: &str,
    stdout: &[u8],
) -> Result<String, ToolError> {
    fs::create_dir_all(fixture_dir).map_err(|e| io_err(fixture_dir, e))?;
    let key = cc_key(sources, testbench);
    let path = fixture_dir.join(format!("{key}.stdout"));
    fs::write(&path, stdout).map_err(|e| io_err(&path, e))?;
    Ok(key)
}

fn cc_key(sources: &[&str], testbench: &str) -> String {
    let mut parts: Vec<&[u8]> = sources.iter().map(|s| s.as_bytes()).collect();
    parts.push(testbench.as_bytes());
    content_hash(&parts)
}

/// Compile the given C sources together with a testbench and execute the
/// binary, capturing stdout byte-exactly.
pub fn run_c_compile_and_exec(
    sources: &[&str],
    testbench: &str,
    binding: &CcBinding,
) -> Result<(CompileResult, Vec<u8>), ToolError> {
    match binding {
        CcBinding::Mock { fixture_dir } => {
            let key = cc_key(sources, testbench);
            let path = fixture_dir.join(format!("{key}.stdout"));
            if !path.exists() {
                return Err(ToolError::MockMiss(key));
            }
            let stdout = fs::read(&path).map_err(|e| io_err(&path, e))?;
            Ok((
                CompileResult {
                    outcome: CompileOutcome::Pass,
                    log: String::new(),
                    artifact_path: Some(path),
                },
                stdout,
            ))
        }
        CcBinding::Real { compiler } => {
            if !which(compiler) && Command::new(compiler).arg("--version").output().is_err() {
                return Err(ToolError::Environment(format!(
                    "C compiler {compiler} not found on path"
                )));
            }
            let dir = tempfile_dir()?;
            let mut files = Vec::new();
            for (i, src) in sources.iter().enumerate() {
                let p = dir.join(format!("unit{i}.c"));
                fs::write(&p, src).map_err(|e| io_err(&p, e))?;
                files.push(p);
            }
            let tb = dir.join("testbench.c");
            fs::write(&tb, testbench).map_err(|e| io_err(&tb, e))?;
            files.push(tb);
            let bin = dir.join("prog");
            let mut args: Vec<String> = files
                .iter()
                .map(|p| p.to_string_lossy().into_owned())
                .collect();
            args.push("-o".into());
            args.push(bin.to_string_lossy().into_owned());
            let (code, _out, err) =
                run_command(compiler, &args, &dir, Duration::from_secs(60))?;
            if code != 0 {
                return Ok((
                    CompileResult {
                        outcome: CompileOutcome::Fail,
                        log: String::from_utf8_lossy(&err).into_owned(),
                        artifact_path: None,
                    },
                    Vec::new(),
                ));
            }
            let (run_code, stdout, run_err) = run_command(
                &bin.to_string_lossy(),
                &[],
                &dir,
                Duration::from_secs(60),
            )?;
            if run_code != 0 {
                return Err(ToolError::Execution {
                    code: run_code,
                    stderr: String::from_utf8_lossy(&run_err).into_owned(),
                });
            }
            Ok((
                CompileResult {
                    outcome: CompileOutcome::Pass,
                    log: String::new(),
                    artifact_path: Some(bin),
                },
                stdout,
            ))
        }
    }
}

fn tempfile_dir() -> Result<PathBuf, ToolError> {
    let base = std::env::temp_dir().join(format!(
        "correcthdl-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    ));
    fs::create_dir_all(&base).map_err(|e| io_err(&base, e))?;
    Ok(base)
}

// ---------------------------------------------------------------------------
// HDL syntax compiler (used by the RAG repair loop)
// ---------------------------------------------------------------------------

/// Syntax-checking view of an HDL compiler.
pub trait HdlCompiler: Send + Sync {
    fn compile(&self, code: &str) -> Result<CompileResult, ToolError>;
}

/// Real HDL compiler behind a command template containing `{design}`.
pub struct RealHdlCompiler {
    pub command_template: String,
    pub timeout: Duration,
}

impl HdlCompiler for RealHdlCompiler {
    fn compile(&self, code: &str) -> Result<CompileResult, ToolError> {
        let dir = tempfile_dir()?;
        let design = dir.join("design.v");
        fs::write(&design, code).map_err(|e| io_err(&design, e))?;
        let out = dir.join("design.out");
        let (program, args) = render_command(
            &self.command_template,
            &[
                ("design", &design.to_string_lossy()),
                ("out", &out.to_string_lossy()),
            ],
        )?;
        let (exit, stdout, stderr) = run_command(&program, &args, &dir, self.timeout)?;
        let log = format!(
            "{}{}",
            String::from_utf8_lossy(&stdout),
            String::from_utf8_lossy(&stderr)
        );
        Ok(CompileResult {
            outcome: if exit == 0 {
                CompileOutcome::Pass
            } else {
                CompileOutcome::Fail
            },
            log,
            artifact_path: Some(out),
        })
    }
}

/// Deterministic mock syntax checker.
///
/// `MarkerBased` fails any code containing the literal `//BUG:syntax` and
/// echoes the marker's trailing text as the error log; scripted fixtures use
/// it to stage multi-iteration repair loops.
pub enum MockHdlCompiler {
    PassAll,
    FailAll { log: String },
    MarkerBased,
}

impl MockHdlCompiler {
    pub fn pass_all() -> Self {
        MockHdlCompiler::PassAll
    }

    pub fn fail_all(log: &str) -> Self {
        MockHdlCompiler::FailAll {
            log: log.to_string(),
        }
    }
}

pub const SYNTAX_BUG_MARKER: &str = "//BUG:syntax";

impl HdlCompiler for MockHdlCompiler {
    fn compile(&self, code: &str) -> Result<CompileResult, ToolError> {
        let (outcome, log) = match self {
            MockHdlCompiler::PassAll => (CompileOutcome::Pass, String::new()),
            MockHdlCompiler::FailAll { log } => (CompileOutcome::Fail, log.clone()),
            MockHdlCompiler::MarkerBased => {
                match code.lines().find(|l| l.contains(SYNTAX_BUG_MARKER)) {
                    Some(line) => {
                        let msg = line
                            .split(SYNTAX_BUG_MARKER)
                            .nth(1)
                            .unwrap_or("syntax error")
                            .trim()
                            .to_string();
                        (CompileOutcome::Fail, msg)
                    }
                    None => (CompileOutcome::Pass, String::new()),
                }
            }
        };
        Ok(CompileResult {
            outcome,
            log,
            artifact_path: None,
        })
    }
}

// ---------------------------------------------------------------------------
// HLS synthesizer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum HlsBinding {
    /// Command template with `{src}` and `{out}` placeholders; the tool must
    /// leave `golden.v` and `tb.v` under `{out}`.
    Real { command_template: String },
    /// Fixture directory holding `{id}/golden.v` and `{id}/tb.v`
    /// (or `{id}/hls.error` to stage a synthesis failure).
    Mock { fixture_dir: PathBuf },
}

#[derive(Debug, Clone)]
pub struct HlsOutput {
    pub golden_hdl: PathBuf,
    pub golden_testbench: PathBuf,
    pub log: String,
}

/// Synthesize a C submodule into golden HDL plus the tool-translated
/// testbench, placed under `out_dir`.
pub fn run_hls_synthesize(
    submodule_id: &str,
    c_source: &str,
    out_dir: &Path,
    binding: &HlsBinding,
) -> Result<HlsOutput, ToolError> {
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    match binding {
        HlsBinding::Mock { fixture_dir } => {
            let fixture = fixture_dir.join(submodule_id);
            let err_marker = fixture.join("hls.error");
            if err_marker.exists() {
                let log = fs::read_to_string(&err_marker).map_err(|e| io_err(&err_marker, e))?;
                return Err(ToolError::Synthesis(log));
            }
            let src_hdl = fixture.join("golden.v");
            let src_tb = fixture.join("tb.v");
            if !src_hdl.exists() || !src_tb.exists() {
                return Err(ToolError::MockMiss(format!(
                    "no HLS fixture for submodule {submodule_id} under {}",
                    fixture_dir.display()
                )));
            }
            let dst_hdl = out_dir.join("golden.v");
            let dst_tb = out_dir.join("tb.v");
            fs::copy(&src_hdl, &dst_hdl).map_err(|e| io_err(&dst_hdl, e))?;
            fs::copy(&src_tb, &dst_tb).map_err(|e| io_err(&dst_tb, e))?;
            Ok(HlsOutput {
                golden_hdl: dst_hdl,
                golden_testbench: dst_tb,
                log: String::new(),
            })
        }
        HlsBinding::Real { command_template } => {
            let dir = tempfile_dir()?;
            let src = dir.join(format!("{submodule_id}.c"));
            fs::write(&src, c_source).map_err(|e| io_err(&src, e))?;
            let (program, args) = render_command(
                command_template,
                &[
                    ("src", &src.to_string_lossy()),
                    ("out", &out_dir.to_string_lossy()),
                ],
            )?;
            if !which(&program) {
                return Err(ToolError::Environment(format!(
                    "HLS tool {program} not found on path"
                )));
            }
            let (code, stdout, stderr) =
                run_command(&program, &args, &dir, Duration::from_secs(600))?;
            let log = format!(
                "{}{}",
                String::from_utf8_lossy(&stdout),
                String::from_utf8_lossy(&stderr)
            );
            if code != 0 {
                return Err(ToolError::Synthesis(log));
            }
            Ok(HlsOutput {
                golden_hdl: out_dir.join("golden.v"),
                golden_testbench: out_dir.join("tb.v"),
                log,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// RTL simulator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SimBinding {
    /// Command template with `{design}`, `{testbench}`, `{out}` placeholders;
    /// the simulator must write its dump to `{out}`.
    Real {
        command_template: String,
        #[serde(default = "default_sim_timeout")]
        timeout_secs: u64,
    },
    /// Replay fixture dumps keyed by (design hash, testbench hash).
    Mock { fixture_dir: PathBuf },
}

fn default_sim_timeout() -> u64 {
    60
}

fn sim_key(design: &[u8], testbench: &[u8]) -> String {
    content_hash(&[design, testbench])
}

/// Pre-populate a mock simulator fixture entry.
pub fn mock_sim_insert(
    fixture_dir: &Path,
    design_text: &str,
    testbench_text: &str,
    dump: &[u8],
) -> Result<String, ToolError> {
    fs::create_dir_all(fixture_dir).map_err(|e| io_err(fixture_dir, e))?;
    let key = sim_key(design_text.as_bytes(), testbench_text.as_bytes());
    let path = fixture_dir.join(format!("{key}.dump"));
    fs::write(&path, dump).map_err(|e| io_err(&path, e))?;
    Ok(key)
}

/// Simulate `design` under `testbench`, returning the raw dump bytes.
pub fn run_rtl_sim(
    design: &Path,
    testbench: &Path,
    binding: &SimBinding,
) -> Result<Vec<u8>, ToolError> {
    if !design.exists() {
        return Err(ToolError::Precondition(format!(
            "design path {} does not exist",
            design.display()
        )));
    }
    if !testbench.exists() {
        return Err(ToolError::Precondition(format!(
            "testbench path {} does not exist",
            testbench.display()
        )));
    }
    match binding {
        SimBinding::Mock { fixture_dir } => {
            let d = fs::read(design).map_err(|e| io_err(design, e))?;
            let t = fs::read(testbench).map_err(|e| io_err(testbench, e))?;
            let key = sim_key(&d, &t);
            let path = fixture_dir.join(format!("{key}.dump"));
            if !path.exists() {
                return Err(ToolError::MockMiss(key));
            }
            fs::read(&path).map_err(|e| io_err(&path, e))
        }
        SimBinding::Real {
            command_template,
            timeout_secs,
        } => {
            let dir = tempfile_dir()?;
            let out = dir.join("sim.dump");
            let (program, args) = render_command(
                command_template,
                &[
                    ("design", &design.to_string_lossy()),
                    ("testbench", &testbench.to_string_lossy()),
                    ("out", &out.to_string_lossy()),
                ],
            )?;
            if !which(&program) {
                return Err(ToolError::Environment(format!(
                    "RTL simulator {program} not found on path"
                )));
            }
            let result = run_command(&program, &args, &dir, Duration::from_secs(*timeout_secs));
            match result {
                Err(ToolError::Timeout(d)) => Err(ToolError::Timeout(d)),
                Err(e) => Err(e),
                Ok((code, stdout, stderr)) => {
                    if code != 0 {
                        return Err(ToolError::Sim(format!(
                            "{}{}",
                            String::from_utf8_lossy(&stdout),
                            String::from_utf8_lossy(&stderr)
                        )));
                    }
                    fs::read(&out).map_err(|e| io_err(&out, e))
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Dump normalization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DumpDialect {
    /// Native line-oriented trace format.
    TraceV1,
    /// Value-change-dump subset (`$var`, `#time`, scalar and vector changes).
    ValueChange,
}

/// Normalize a raw simulator dump into the canonical [`PortTrace`].
pub fn normalize_dump(raw: &[u8], dialect: DumpDialect) -> Result<PortTrace, ToolError> {
    let text = String::from_utf8_lossy(raw);
    match dialect {
        DumpDialect::TraceV1 => Ok(PortTrace::from_trace_v1(&text)?),
        DumpDialect::ValueChange => parse_vcd_subset(&text),
    }
}

/// Minimal VCD reader: one sample per timestamp, vector values binary-coded.
fn parse_vcd_subset(text: &str) -> Result<PortTrace, ToolError> {
    let mut ids: std::collections::BTreeMap<String, String> = Default::default();
    let mut header: Vec<PortDecl> = Vec::new();
    let mut samples: Vec<(u64, String, String)> = Vec::new();
    let mut time_ordinal: i64 = -1;
    for (i, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with("$date") || line.starts_with("$timescale") {
            continue;
        }
        if line.starts_with("$var") {
            // $var wire <width> <id> <name> [...] $end
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() < 5 {
                return Err(TraceError::MalformedLine {
                    line: i + 1,
                    text: raw_line.to_string(),
                }
                .into());
            }
            let width: u32 = parts[2].parse().map_err(|_| TraceError::MalformedLine {
                line: i + 1,
                text: raw_line.to_string(),
            })?;
            let id = parts[3].to_string();
            let name = parts[4].to_string();
            ids.insert(id, name.clone());
            header.push(PortDecl {
                name,
                width_bits: width,
            });
            continue;
        }
        if line.starts_with('$') {
            continue; // $scope / $upscope / $enddefinitions / $dumpvars etc.
        }
        if let Some(t) = line.strip_prefix('#') {
            let _: u64 = t.parse().map_err(|_| TraceError::MalformedLine {
                line: i + 1,
                text: raw_line.to_string(),
            })?;
            time_ordinal += 1;
            continue;
        }
        let (value_bits, id) = if let Some(rest) = line.strip_prefix('b') {
            let mut parts = rest.split_whitespace();
            match (parts.next(), parts.next()) {
                (Some(v), Some(id)) => (v.to_string(), id.to_string()),
                _ => {
                    return Err(TraceError::MalformedLine {
                        line: i + 1,
                        text: raw_line.to_string(),
                    }
                    .into())
                }
            }
        } else {
            // scalar change: <bit><id>
            let mut chars = line.chars();
            let bit = chars.next().unwrap();
            (bit.to_string(), chars.collect())
        };
        let name = ids
            .get(&id)
            .ok_or_else(|| TraceError::UndeclaredPort {
                port: id.clone(),
                line: i + 1,
            })?
            .clone();
        let value = u128::from_str_radix(&value_bits.replace(['x', 'z'], "0"), 2).map_err(|_| {
            TraceError::MalformedLine {
                line: i + 1,
                text: raw_line.to_string(),
            }
        })?;
        samples.push((time_ordinal.max(0) as u64, name, format!("{value:x}")));
    }
    let mut trace = PortTrace::new(header);
    for (idx, name, hex) in samples {
        trace.push(idx, &name, &hex)?;
    }
    Ok(trace)
}

// ---------------------------------------------------------------------------
// Logic synthesis
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub area_um2: f64,
    pub total_power_mw: f64,
    pub achieved_period_ns: f64,
    pub cell_count: u64,
    /// Set when the achieved period exceeds the requested one.
    #[serde(default)]
    pub timing_miss: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SynthBinding {
    /// Command template with `{design}`, `{period}`, `{out}` placeholders;
    /// the tool must write its report to `{out}`.
    Real {
        command_template: String,
        #[serde(default = "default_synth_timeout")]
        timeout_secs: u64,
    },
    /// Fixture report keyed by design content hash, with `default.synth`
    /// as fallback.
    Mock { fixture_dir: PathBuf },
}

fn default_synth_timeout() -> u64 {
    600
}

/// Pre-populate a mock synthesis fixture report.
pub fn mock_synth_insert(
    fixture_dir: &Path,
    design_text: Option<&str>,
    report: &SynthReport,
) -> Result<(), ToolError> {
    fs::create_dir_all(fixture_dir).map_err(|e| io_err(fixture_dir, e))?;
    let name = match design_text {
        Some(d) => format!("{}.synth", content_hash(&[d.as_bytes()])),
        None => "default.synth".to_string(),
    };
    let path = fixture_dir.join(name);
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| ToolError::Synthesis(format!("report serialize: {e}")))?;
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(())
}

/// Run logic synthesis targeting `clock_period_ns`, returning the parsed report.
pub fn run_logic_synth(
    design: &Path,
    clock_period_ns: f64,
    binding: &SynthBinding,
) -> Result<SynthReport, ToolError> {
    match binding {
        SynthBinding::Mock { fixture_dir } => {
            let d = fs::read(design).map_err(|e| io_err(design, e))?;
            let keyed = fixture_dir.join(format!("{}.synth", content_hash(&[&d])));
            let path = if keyed.exists() {
                keyed
            } else {
                let fallback = fixture_dir.join("default.synth");
                if !fallback.exists() {
                    return Err(ToolError::MockMiss(content_hash(&[&d])));
                }
                fallback
            };
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let mut report: SynthReport = serde_json::from_str(&text)
                .map_err(|e| ToolError::Synthesis(format!("fixture report parse: {e}")))?;
            report.timing_miss = report.achieved_period_ns > clock_period_ns;
            Ok(report)
        }
        SynthBinding::Real {
            command_template,
            timeout_secs,
        } => {
            let dir = tempfile_dir()?;
            let out = dir.join("synth.rpt");
            let (program, args) = render_command(
                command_template,
                &[
                    ("design", &design.to_string_lossy()),
                    ("period", &format!("{clock_period_ns}")),
                    ("out", &out.to_string_lossy()),
                ],
            )?;
            if !which(&program) {
                return Err(ToolError::Environment(format!(
                    "synthesis tool {program} not found on path"
                )));
            }
            let (code, stdout, stderr) =
                run_command(&program, &args, &dir, Duration::from_secs(*timeout_secs))?;
            if code != 0 {
                return Err(ToolError::Synthesis(format!(
                    "{}{}",
                    String::from_utf8_lossy(&stdout),
                    String::from_utf8_lossy(&stderr)
                )));
            }
            let text = fs::read_to_string(&out).map_err(|e| io_err(&out, e))?;
            let mut report = parse_synth_report(&text)?;
            report.timing_miss = report.achieved_period_ns > clock_period_ns;
            Ok(report)
        }
    }
}

/// Parse a line-oriented synthesis report of `key: value` pairs.
pub fn parse_synth_report(text: &str) -> Result<SynthReport, ToolError> {
    let mut area = None;
    let mut power = None;
    let mut period = None;
    let mut cells = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = match line.split_once(':') {
            Some(kv) => kv,
            None => return Err(ToolError::ReportParse(line.to_string())),
        };
        let value = value.trim();
        match key.trim().to_ascii_lowercase().as_str() {
            "area" | "total cell area" => {
                area = Some(value.parse().map_err(|_| ToolError::ReportParse(line.into()))?)
            }
            "power" | "total power" => {
                power = Some(value.parse().map_err(|_| ToolError::ReportParse(line.into()))?)
            }
            "period" | "achieved period" => {
                period = Some(value.parse().map_err(|_| ToolError::ReportParse(line.into()))?)
            }
            "cells" | "cell count" => {
                cells = Some(value.parse().map_err(|_| ToolError::ReportParse(line.into()))?)
            }
            _ => return Err(ToolError::ReportParse(line.to_string())),
        }
    }
    match (area, power, period) {
        (Some(area_um2), Some(total_power_mw), Some(achieved_period_ns)) => Ok(SynthReport {
            area_um2,
            total_power_mw,
            achieved_period_ns,
            cell_count: cells.unwrap_or(0),
            timing_miss: false,
        }),
        _ => Err(ToolError::ReportParse(
            "report missing area/power/period fields".to_string(),
        )),
    }
}
