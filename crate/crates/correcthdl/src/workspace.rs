//! On-disk project layout, manifests, and stage-progress records.
//!
//! A workspace is the single source of truth for a pipeline run: every
//! artifact (C source, prompts, HDL attempts, dumps, mismatch logs, reports)
//! is persisted under a deterministic path so any stage can be resumed or
//! audited after the fact. The artifact store is append-only; nothing is
//! ever overwritten.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "project.manifest";
pub const STAGE_STATUS_FILE: &str = "stage.status";
pub const RUN_RECORDS_FILE: &str = "logs/run.records";

const SKELETON_DIRS: [&str; 6] = ["src", "submodules", "golden", "dut", "dumps", "reports"];

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("workspace setup failed: {0}")]
    Setup(String),
    #[error("manifest validation failed: {}", violations.join("; "))]
    Validation { violations: Vec<String> },
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("illegal stage transition for {unit}: {reason}")]
    Ordering { unit: String, reason: String },
    #[error("invalid artifact label {0:?}: must not contain path separators")]
    BadLabel(String),
    #[error("workspace state corrupt: {0}")]
    Corrupt(String),
}

fn io_err(path: &Path, source: std::io::Error) -> WorkspaceError {
    WorkspaceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Per-loop iteration limits. Defaults to 3 for each repair loop.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct IterationLimits {
    pub syntax_repair: u32,
    pub functional_repair: u32,
    pub integration_repair: u32,
}

impl Default for IterationLimits {
    fn default() -> Self {
        IterationLimits {
            syntax_repair: 3,
            functional_repair: 3,
            integration_repair: 3,
        }
    }
}

/// Project-level configuration persisted as `project.manifest`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProjectManifest {
    pub project_name: String,
    pub c_source_path: PathBuf,
    pub c_testbench_path: PathBuf,
    /// Target clock period in nanoseconds.
    pub clock_period_ns: f64,
    #[serde(default)]
    pub iteration_limits: IterationLimits,
    pub repetitions_n: u32,
    pub submodule_ids: Vec<String>,
}

impl ProjectManifest {
    /// Check manifest invariants; returns every violated field.
    pub fn validate(&self, check_paths: bool) -> Result<(), WorkspaceError> {
        let mut violations = Vec::new();
        if self.project_name.is_empty() {
            violations.push("project_name: empty".to_string());
        }
        if self.repetitions_n < 1 {
            violations.push("repetitions_n: must be >= 1".to_string());
        }
        if self.iteration_limits.syntax_repair < 1 {
            violations.push("iteration_limits.syntax_repair: must be >= 1".to_string());
        }
        if self.iteration_limits.functional_repair < 1 {
            violations.push("iteration_limits.functional_repair: must be >= 1".to_string());
        }
        if self.iteration_limits.integration_repair < 1 {
            violations.push("iteration_limits.integration_repair: must be >= 1".to_string());
        }
        if !(self.clock_period_ns > 0.0) {
            violations.push("clock_period_ns: must be > 0".to_string());
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &self.submodule_ids {
            if !seen.insert(id) {
                violations.push(format!("submodule_ids: duplicate id {id:?}"));
            }
        }
        if check_paths {
            if !self.c_source_path.exists() {
                violations.push(format!(
                    "c_source_path: {} does not exist",
                    self.c_source_path.display()
                ));
            }
            if !self.c_testbench_path.exists() {
                violations.push(format!(
                    "c_testbench_path: {} does not exist",
                    self.c_testbench_path.display()
                ));
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(WorkspaceError::Validation { violations })
        }
    }
}

/// Pipeline stages in execution order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Stage {
    Decompose,
    GenerateHdl,
    SyntaxRepair,
    SubmoduleVerify,
    Integrate,
    TopVerify,
    Evaluate,
}

impl Stage {
    pub fn all() -> [Stage; 7] {
        [
            Stage::Decompose,
            Stage::GenerateHdl,
            Stage::SyntaxRepair,
            Stage::SubmoduleVerify,
            Stage::Integrate,
            Stage::TopVerify,
            Stage::Evaluate,
        ]
    }

    pub fn order(self) -> usize {
        Stage::all().iter().position(|s| *s == self).unwrap()
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Decompose => "decompose",
            Stage::GenerateHdl => "generate_hdl",
            Stage::SyntaxRepair => "syntax_repair",
            Stage::SubmoduleVerify => "submodule_verify",
            Stage::Integrate => "integrate",
            Stage::TopVerify => "top_verify",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageOutcome {
    Pending,
    Pass,
    Fail,
    Exhausted,
}

/// Record of one stage attempt within one repetition round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub round_index: u32,
    /// Submodule id, or "TOP" for top-level stages.
    pub unit: String,
    pub stage: Stage,
    pub status: StageOutcome,
    pub attempts_used: u32,
    pub artifact_refs: Vec<String>,
    pub wall_time_secs: f64,
}

/// Per-unit stage progress. Units are submodule ids plus the reserved "TOP".
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct StageStatus {
    pub per_unit: BTreeMap<String, BTreeMap<Stage, StageOutcome>>,
}

pub const TOP_UNIT: &str = "TOP";

impl StageStatus {
    pub fn get(&self, unit: &str, stage: Stage) -> StageOutcome {
        self.per_unit
            .get(unit)
            .and_then(|m| m.get(&stage).copied())
            .unwrap_or(StageOutcome::Pending)
    }

}

/// Open handle to a workspace rooted at a directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
    manifest: ProjectManifest,
}

/// Create a fresh workspace skeleton under `root`.
///
/// Fails (touching nothing) if the directory already holds a manifest and
/// `force` is not set.
pub fn init_workspace(
    manifest: &ProjectManifest,
    root: &Path,
    force: bool,
) -> Result<Workspace, WorkspaceError> {
    manifest.validate(true)?;
    let manifest_path = root.join(MANIFEST_FILE);
    if manifest_path.exists() && !force {
        return Err(WorkspaceError::Setup(format!(
            "{} already contains a workspace (pass force to re-init)",
            root.display()
        )));
    }
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    let probe = root.join(".write_probe");
    fs::write(&probe, b"ok").map_err(|_| {
        WorkspaceError::Setup(format!("{} is not writable", root.display()))
    })?;
    fs::remove_file(&probe).ok();
    for d in SKELETON_DIRS {
        let p = root.join(d);
        fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
    }
    fs::create_dir_all(root.join("logs")).map_err(|e| io_err(root, e))?;
    let text = toml::to_string_pretty(manifest)
        .map_err(|e| WorkspaceError::Setup(format!("manifest serialization: {e}")))?;
    fs::write(&manifest_path, text).map_err(|e| io_err(&manifest_path, e))?;
    let ws = Workspace {
        root: root.to_path_buf(),
        manifest: manifest.clone(),
    };
    ws.save_stage_status(&StageStatus::default())?;
    Ok(ws)
}

/// Open an existing workspace, restoring manifest and stage status.
pub fn open_workspace(root: &Path) -> Result<Workspace, WorkspaceError> {
    let manifest_path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: ProjectManifest = toml::from_str(&text)
        .map_err(|e| WorkspaceError::Corrupt(format!("manifest parse: {e}")))?;
    manifest.validate(false)?;
    Ok(Workspace {
        root: root.to_path_buf(),
        manifest,
    })
}

impl Workspace {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &ProjectManifest {
        &self.manifest
    }

    /// Resolve a workspace-relative path.
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Atomic write: temp file in the same directory, then rename.
    pub fn write_atomic(&self, rel: &str, bytes: &[u8]) -> Result<(), WorkspaceError> {
        let target = self.resolve(rel);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        let tmp = target.with_extension("tmp~");
        {
            let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
            f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
            f.sync_all().ok();
        }
        fs::rename(&tmp, &target).map_err(|e| io_err(&target, e))?;
        Ok(())
    }

    /// Persist an artifact under `{stage}/{round}/{label}`, never clobbering.
    ///
    /// A repeated (stage, round, label) gets a `.2`, `.3`, ... suffix so every
    /// attempt in an iterative loop stays auditable. Returns the
    /// workspace-relative path actually written.
    pub fn record_artifact(
        &self,
        stage: Stage,
        round_index: u32,
        label: &str,
        payload: &[u8],
    ) -> Result<String, WorkspaceError> {
        if label.contains('/') || label.contains('\\') || label.contains("..") {
            return Err(WorkspaceError::BadLabel(label.to_string()));
        }
        let dir_rel = format!("logs/{}/{}", stage.dir_name(), round_index);
        let dir = self.resolve(&dir_rel);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let mut rel = format!("{dir_rel}/{label}");
        let mut version = 1u32;
        while self.resolve(&rel).exists() {
            version += 1;
            rel = format!("{dir_rel}/{label}.{version}");
        }
        let path = self.resolve(&rel);
        fs::write(&path, payload).map_err(|e| io_err(&path, e))?;
        Ok(rel)
    }

    pub fn read_artifact(&self, rel: &str) -> Result<Vec<u8>, WorkspaceError> {
        let path = self.resolve(rel);
        fs::read(&path).map_err(|e| io_err(&path, e))
    }

    pub fn load_stage_status(&self) -> Result<StageStatus, WorkspaceError> {
        let path = self.resolve(STAGE_STATUS_FILE);
        if !path.exists() {
            return Ok(StageStatus::default());
        }
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| WorkspaceError::Corrupt(format!("stage status parse: {e}")))
    }

    pub fn save_stage_status(&self, status: &StageStatus) -> Result<(), WorkspaceError> {
        let text = serde_json::to_string_pretty(status)
            .map_err(|e| WorkspaceError::Corrupt(format!("stage status serialize: {e}")))?;
        self.write_atomic(STAGE_STATUS_FILE, text.as_bytes())
    }

    /// Advance a unit (submodule id or [`TOP_UNIT`]) to `stage` with `status`,
    /// enforcing the monotone stage ordering and cross-unit gating rules.
    pub fn advance_stage(
        &self,
        unit: &str,
        stage: Stage,
        status: StageOutcome,
    ) -> Result<StageStatus, WorkspaceError> {
        let mut snapshot = self.load_stage_status()?;
        self.check_transition(&snapshot, unit, stage)?;
        snapshot
            .per_unit
            .entry(unit.to_string())
            .or_default()
            .insert(stage, status);
        self.save_stage_status(&snapshot)?;
        Ok(snapshot)
    }

    fn check_transition(
        &self,
        snapshot: &StageStatus,
        unit: &str,
        stage: Stage,
    ) -> Result<(), WorkspaceError> {
        if unit == TOP_UNIT {
            if matches!(stage, Stage::Integrate | Stage::TopVerify) {
                for id in &self.manifest.submodule_ids {
                    let ok = snapshot.get(id, Stage::SubmoduleVerify) == StageOutcome::Pass;
                    if !ok {
                        return Err(WorkspaceError::Ordering {
                            unit: unit.to_string(),
                            reason: format!(
                                "cannot enter {stage:?}: submodule {id} has not passed SubmoduleVerify"
                            ),
                        });
                    }
                }
            }
        } else {
            // Submodules must pass SyntaxRepair before SubmoduleVerify, and
            // may not skip over unvisited earlier stages.
            if stage == Stage::SubmoduleVerify
                && snapshot.get(unit, Stage::SyntaxRepair) != StageOutcome::Pass
            {
                return Err(WorkspaceError::Ordering {
                    unit: unit.to_string(),
                    reason: "SubmoduleVerify requires SyntaxRepair to have passed".to_string(),
                });
            }
            let required_before: &[Stage] = match stage {
                Stage::GenerateHdl => &[],
                Stage::SyntaxRepair => &[Stage::GenerateHdl],
                Stage::SubmoduleVerify => &[Stage::GenerateHdl, Stage::SyntaxRepair],
                _ => &[],
            };
            for req in required_before {
                if self_stage_missing(snapshot, unit, *req) {
                    return Err(WorkspaceError::Ordering {
                        unit: unit.to_string(),
                        reason: format!("cannot enter {stage:?} before {req:?} has run"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Append a run record to the line-delimited log.
    pub fn append_run_record(&self, record: &RunRecord) -> Result<(), WorkspaceError> {
        let path = self.resolve(RUN_RECORDS_FILE);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        let mut line = serde_json::to_string(record)
            .map_err(|e| WorkspaceError::Corrupt(format!("run record serialize: {e}")))?;
        line.push('\n');
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| io_err(&path, e))?;
        Ok(())
    }

    pub fn load_run_records(&self) -> Result<Vec<RunRecord>, WorkspaceError> {
        let path = self.resolve(RUN_RECORDS_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let mut out = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            out.push(
                serde_json::from_str(line)
                    .map_err(|e| WorkspaceError::Corrupt(format!("run record parse: {e}")))?,
            );
        }
        Ok(out)
    }
}

fn self_stage_missing(snapshot: &StageStatus, unit: &str, stage: Stage) -> bool {
    snapshot.get(unit, stage) == StageOutcome::Pending
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_manifest(dir: &Path) -> ProjectManifest {
        let src = dir.join("prog.c");
        let tb = dir.join("tb.c");
        fs::write(&src, "int main(){return 0;}").unwrap();
        fs::write(&tb, "int main(){return 0;}").unwrap();
        ProjectManifest {
            project_name: "demo".into(),
            c_source_path: src,
            c_testbench_path: tb,
            clock_period_ns: 2.0,
            iteration_limits: IterationLimits::default(),
            repetitions_n: 1,
            submodule_ids: vec!["a".into(), "b".into()],
        }
    }

    #[test]
    fn init_creates_skeleton_and_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = fixture_manifest(tmp.path());
        let root = tmp.path().join("ws");
        let ws = init_workspace(&manifest, &root, false).unwrap();
        for d in SKELETON_DIRS {
            assert!(ws.resolve(d).is_dir(), "missing {d}");
        }
        assert!(ws.resolve(MANIFEST_FILE).is_file());
    }

    #[test]
    fn zero_repetitions_rejected_naming_field() {
        let tmp = tempfile::tempdir().unwrap();
        let mut manifest = fixture_manifest(tmp.path());
        manifest.repetitions_n = 0;
        let err = init_workspace(&manifest, &tmp.path().join("ws"), false).unwrap_err();
        assert!(err.to_string().contains("repetitions_n"));
    }

    #[test]
    fn reinit_without_force_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = fixture_manifest(tmp.path());
        let root = tmp.path().join("ws");
        init_workspace(&manifest, &root, false).unwrap();
        let before = fs::read_to_string(root.join(MANIFEST_FILE)).unwrap();
        let err = init_workspace(&manifest, &root, false).unwrap_err();
        assert!(matches!(err, WorkspaceError::Setup(_)));
        assert_eq!(fs::read_to_string(root.join(MANIFEST_FILE)).unwrap(), before);
        init_workspace(&manifest, &root, true).unwrap();
    }

    #[test]
    fn artifact_round_trip_and_versioning() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = fixture_manifest(tmp.path());
        let ws = init_workspace(&manifest, &tmp.path().join("ws"), false).unwrap();
        let p1 = ws
            .record_artifact(Stage::SyntaxRepair, 0, "attempt1.v", b"module m;")
            .unwrap();
        assert_eq!(ws.read_artifact(&p1).unwrap(), b"module m;");
        let p2 = ws
            .record_artifact(Stage::SyntaxRepair, 0, "attempt1.v", b"module n;")
            .unwrap();
        assert_ne!(p1, p2);
        assert!(p2.ends_with("attempt1.v.2"));
        assert_eq!(ws.read_artifact(&p1).unwrap(), b"module m;");
        assert_eq!(ws.read_artifact(&p2).unwrap(), b"module n;");
    }

    #[test]
    fn label_with_separator_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = fixture_manifest(tmp.path());
        let ws = init_workspace(&manifest, &tmp.path().join("ws"), false).unwrap();
        let err = ws
            .record_artifact(Stage::SyntaxRepair, 0, "../escape.v", b"x")
            .unwrap_err();
        assert!(matches!(err, WorkspaceError::BadLabel(_)));
    }

    #[test]
    fn top_gating_requires_all_submodules_pass() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = fixture_manifest(tmp.path());
        let ws = init_workspace(&manifest, &tmp.path().join("ws"), false).unwrap();
        for unit in ["a", "b"] {
            ws.advance_stage(unit, Stage::GenerateHdl, StageOutcome::Pass)
                .unwrap();
            ws.advance_stage(unit, Stage::SyntaxRepair, StageOutcome::Pass)
                .unwrap();
        }
        ws.advance_stage("a", Stage::SubmoduleVerify, StageOutcome::Pass)
            .unwrap();
        ws.advance_stage("b", Stage::SubmoduleVerify, StageOutcome::Fail)
            .unwrap();
        let err = ws
            .advance_stage(TOP_UNIT, Stage::TopVerify, StageOutcome::Pending)
            .unwrap_err();
        assert!(err.to_string().contains('b'), "error must name the blocker: {err}");
        ws.advance_stage("b", Stage::SubmoduleVerify, StageOutcome::Pass)
            .unwrap();
        ws.advance_stage(TOP_UNIT, Stage::Integrate, StageOutcome::Pass)
            .unwrap();
    }

    #[test]
    fn pending_to_verify_skipping_stages_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = fixture_manifest(tmp.path());
        let ws = init_workspace(&manifest, &tmp.path().join("ws"), false).unwrap();
        let err = ws
            .advance_stage("a", Stage::SubmoduleVerify, StageOutcome::Pass)
            .unwrap_err();
        assert!(matches!(err, WorkspaceError::Ordering { .. }));
    }

    #[test]
    fn resumability_reload_preserves_status() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = fixture_manifest(tmp.path());
        let root = tmp.path().join("ws");
        let ws = init_workspace(&manifest, &root, false).unwrap();
        ws.advance_stage("a", Stage::GenerateHdl, StageOutcome::Pass)
            .unwrap();
        let reopened = open_workspace(&root).unwrap();
        let status = reopened.load_stage_status().unwrap();
        assert_eq!(status.get("a", Stage::GenerateHdl), StageOutcome::Pass);
        assert_eq!(status.get("a", Stage::SyntaxRepair), StageOutcome::Pending);
    }
}
