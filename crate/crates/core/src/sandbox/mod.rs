//! Sandboxed execution of candidate heuristic scripts against landscape
//! files, output validation, the fix-on-failure loop, and code-complexity
//! metrics.
//!
//! Scripts run in a subprocess jail: a scratch working directory holding
//! only `input.geojson`, memory/CPU rlimits, no network, and audit hooks
//! denying file access outside the directory. Full syscall-level isolation
//! is out of scope.

mod complexity;

pub use complexity::{compute_complexity, ComplexityMetrics};

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::connectivity::DirectionRecord;
use crate::error::{Error, Result};
use crate::fitness::FitnessReport;
use crate::landscape::{parse_intervention_geojson_str, InterventionRecord};

const RUNNER_SOURCE: &str = include_str!("runner.py");

/// Multiplier applied to the maximum attainable stage error when assigning
/// the penalty for unrepaired candidates.
pub const PENALTY_FACTOR: f64 = 10.0;

/// Penalty error for an unrepaired candidate on a farm with `n_plots`
/// scored plots. Per-plot contributions max out at 2, so this sits far
/// above any valid candidate's error under both mean and sum conventions.
pub fn penalty_error(n_plots: usize) -> f64 {
    PENALTY_FACTOR * 2.0 * n_plots.max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateKind {
    #[serde(rename = "heuristic_script")]
    HeuristicScript,
    #[serde(rename = "nudge_message")]
    NudgeMessage,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineageEntry {
    pub operator: String,
    pub parents: Vec<String>,
}

/// An evolvable individual: a heuristic script or a nudge message.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub kind: CandidateKind,
    pub body: String,
    pub lineage: Vec<LineageEntry>,
    pub fitness_history: Vec<FitnessReport>,
    pub complexity: Option<ComplexityMetrics>,
    pub generation_born: u32,
}

impl Candidate {
    pub fn new(
        id: impl Into<String>,
        kind: CandidateKind,
        body: impl Into<String>,
        generation_born: u32,
    ) -> Self {
        let body = body.into();
        let complexity = match kind {
            CandidateKind::HeuristicScript => Some(compute_complexity(&body)),
            CandidateKind::NudgeMessage => None,
        };
        Candidate {
            id: id.into(),
            kind,
            body,
            lineage: Vec::new(),
            fitness_history: Vec::new(),
            complexity,
            generation_born,
        }
    }

    pub fn with_lineage(mut self, operator: impl Into<String>, parents: Vec<String>) -> Self {
        self.lineage.push(LineageEntry {
            operator: operator.into(),
            parents,
        });
        self
    }

    pub fn record_fitness(&mut self, report: FitnessReport) {
        self.fitness_history.push(report);
    }

    /// Latest recorded fitness, if any.
    pub fn fitness(&self) -> Option<f64> {
        self.fitness_history.last().map(|r| r.fitness)
    }

    pub fn latest_report(&self) -> Option<&FitnessReport> {
        self.fitness_history.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecStatus {
    #[serde(rename = "ok")]
    Ok,
    #[serde(rename = "parse_failure")]
    ParseFailure,
    #[serde(rename = "runtime_failure")]
    RuntimeFailure,
    #[serde(rename = "timeout")]
    Timeout,
    #[serde(rename = "output_invalid")]
    OutputInvalid,
}

/// Which artifact a stage expects from the candidate script.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecStage {
    /// Writes fractional interventions to `output.geojson`.
    Baseline,
    /// Writes direction records to `output.json`.
    Global,
    /// Same contract as baseline, for nudged scripts.
    Nudged,
}

impl ExecStage {
    fn output_name(&self) -> &'static str {
        match self {
            ExecStage::Baseline | ExecStage::Nudged => "output.geojson",
            ExecStage::Global => "output.json",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageOutput {
    Interventions(Vec<InterventionRecord>),
    Directions(Vec<DirectionRecord>),
}

impl StageOutput {
    pub fn interventions(&self) -> Option<&[InterventionRecord]> {
        match self {
            StageOutput::Interventions(v) => Some(v),
            StageOutput::Directions(_) => None,
        }
    }

    pub fn directions(&self) -> Option<&[DirectionRecord]> {
        match self {
            StageOutput::Directions(v) => Some(v),
            StageOutput::Interventions(_) => None,
        }
    }

    pub fn intervention_map(&self) -> BTreeMap<u32, InterventionRecord> {
        match self {
            StageOutput::Interventions(v) => v.iter().map(|r| (r.plot_id, *r)).collect(),
            StageOutput::Directions(_) => BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    pub output_records: Option<StageOutput>,
    pub trace: String,
    pub wall_time: f64,
}

impl ExecutionResult {
    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }
}

#[derive(Debug, Clone)]
pub struct ExecLimits {
    pub timeout: Duration,
    pub memory_bytes: u64,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits {
            timeout: Duration::from_secs(30),
            memory_bytes: 512 * 1024 * 1024,
        }
    }
}

/// Executes candidate scripts through an external interpreter.
#[derive(Debug, Clone)]
pub struct Sandbox {
    pub interpreter: String,
    pub limits: ExecLimits,
}

impl Default for Sandbox {
    fn default() -> Self {
        Sandbox {
            interpreter: "python3".to_string(),
            limits: ExecLimits::default(),
        }
    }
}

impl Sandbox {
    pub fn new(interpreter: impl Into<String>, limits: ExecLimits) -> Self {
        Sandbox {
            interpreter: interpreter.into(),
            limits,
        }
    }

    /// Runs a heuristic-script candidate against a landscape file. The
    /// script sees a scratch directory containing only `input.geojson` and
    /// must write the stage's output artifact there.
    pub fn execute_candidate(
        &self,
        candidate: &Candidate,
        input_file: &Path,
        stage: ExecStage,
    ) -> Result<ExecutionResult> {
        if candidate.kind != CandidateKind::HeuristicScript {
            return Err(Error::InvalidInput(
                "only heuristic_script candidates are executable".into(),
            ));
        }
        let scratch = tempfile::Builder::new().prefix("hedgerow-exec").tempdir()?;
        let workdir = scratch.path().join("work");
        fs::create_dir(&workdir)?;
        fs::copy(input_file, workdir.join("input.geojson"))?;
        let runner_path = scratch.path().join("runner.py");
        fs::write(&runner_path, RUNNER_SOURCE)?;
        let script_path = scratch.path().join("candidate.py");
        fs::write(&script_path, &candidate.body)?;

        let cpu_seconds = self.limits.timeout.as_secs() + 2;
        let start = Instant::now();
        let mut child = Command::new(&self.interpreter)
            .arg("-I")
            .arg(&runner_path)
            .arg(&workdir)
            .arg(&script_path)
            .arg(self.limits.memory_bytes.to_string())
            .arg(cpu_seconds.to_string())
            .current_dir(scratch.path())
            .env_clear()
            .env("PATH", std::env::var("PATH").unwrap_or_default())
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Sandbox(format!("failed to spawn {}: {e}", self.interpreter)))?;

        let mut stderr_handle = child.stderr.take();
        let reader = std::thread::spawn(move || {
            let mut buf = String::new();
            if let Some(stderr) = stderr_handle.as_mut() {
                let _ = stderr.read_to_string(&mut buf);
            }
            buf
        });

        let deadline = start + self.limits.timeout;
        let status = loop {
            match child.try_wait()? {
                Some(status) => break Some(status),
                None if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    break None;
                }
                None => std::thread::sleep(Duration::from_millis(5)),
            }
        };
        // Scratch paths are stripped so traces (and the fixer prompts built
        // from them) are stable across runs.
        let trace = reader
            .join()
            .unwrap_or_default()
            .replace(scratch.path().to_str().unwrap_or(""), "<sandbox>");
        let wall_time = start.elapsed().as_secs_f64();
        let timed_out = status.is_none();

        if timed_out {
            return Ok(ExecutionResult {
                status: ExecStatus::Timeout,
                output_records: None,
                trace: format!(
                    "killed after exceeding the {}s time limit",
                    self.limits.timeout.as_secs_f64()
                ),
                wall_time,
            });
        }
        let status = status.expect("status present when not timed out");
        match status.code() {
            Some(0) => {}
            Some(3) => {
                return Ok(ExecutionResult {
                    status: ExecStatus::ParseFailure,
                    output_records: None,
                    trace,
                    wall_time,
                })
            }
            _ => {
                return Ok(ExecutionResult {
                    status: ExecStatus::RuntimeFailure,
                    output_records: None,
                    trace,
                    wall_time,
                })
            }
        }

        let out_path = workdir.join(stage.output_name());
        let text = match fs::read_to_string(&out_path) {
            Ok(t) => t,
            Err(_) => {
                return Ok(ExecutionResult {
                    status: ExecStatus::OutputInvalid,
                    output_records: None,
                    trace: format!("expected artifact {} was not written", stage.output_name()),
                    wall_time,
                })
            }
        };
        match parse_stage_output(&text, stage) {
            Ok(records) => Ok(ExecutionResult {
                status: ExecStatus::Ok,
                output_records: Some(records),
                trace,
                wall_time,
            }),
            Err(e) => Ok(ExecutionResult {
                status: ExecStatus::OutputInvalid,
                output_records: None,
                trace: e.to_string(),
                wall_time,
            }),
        }
    }
}

fn parse_stage_output(text: &str, stage: ExecStage) -> Result<StageOutput> {
    match stage {
        ExecStage::Baseline | ExecStage::Nudged => {
            let records =
                parse_intervention_geojson_str(text, Path::new(stage.output_name()))?;
            Ok(StageOutput::Interventions(records))
        }
        ExecStage::Global => {
            let records: Vec<DirectionRecord> = serde_json::from_str(text).map_err(|e| {
                Error::Parse {
                    path: stage.output_name().into(),
                    message: format!("invalid direction records: {e}"),
                }
            })?;
            for rec in &records {
                rec.direction_sets().map_err(|e| Error::Parse {
                    path: stage.output_name().into(),
                    message: format!("plot {}: {e}", rec.plot_id),
                })?;
            }
            Ok(StageOutput::Directions(records))
        }
    }
}

/// Repair hook: given a failing body and its trace, propose a fixed body.
/// `None` means the fixer had nothing usable to offer.
pub trait Fixer {
    fn fix(&self, body: &str, trace: &str) -> Result<Option<String>>;
}

/// Sends the failing candidate through the fixer and re-executes, up to
/// `max_attempts` times. Returns the (possibly repaired) candidate and its
/// last execution result; the caller assigns penalty fitness when the
/// result still is not ok. Provider failures count as unrepaired.
pub fn repair_and_rescore(
    sandbox: &Sandbox,
    candidate: &Candidate,
    result: ExecutionResult,
    fixer: &dyn Fixer,
    max_attempts: u32,
    input_file: &Path,
    stage: ExecStage,
) -> Result<(Candidate, ExecutionResult)> {
    if result.is_ok() {
        return Ok((candidate.clone(), result));
    }
    let mut current = candidate.clone();
    let mut last = result;
    for _ in 0..max_attempts {
        let fixed_body = match fixer.fix(&current.body, &last.trace) {
            Ok(Some(body)) => body,
            Ok(None) => break,
            Err(_) => break,
        };
        if fixed_body.trim() == current.body.trim() {
            break; // fixer returned the same script; no progress possible
        }
        let mut repaired = Candidate::new(
            format!("{}-fix", current.id),
            current.kind,
            fixed_body,
            current.generation_born,
        );
        repaired.lineage = current.lineage.clone();
        repaired = repaired.with_lineage("fixer", vec![current.id.clone()]);
        last = sandbox.execute_candidate(&repaired, input_file, stage)?;
        current = repaired;
        if last.is_ok() {
            break;
        }
    }
    Ok((current, last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::{generate_landscape, write_farm_geojson, GeneratorConfig};
    use tempfile::TempDir;

    /// Fixture script: margins scale with yield, habitat for low yields.
    pub const GOOD_SCRIPT: &str = r#"
import json

with open("input.geojson") as fh:
    data = json.load(fh)

for feature in data["features"]:
    props = feature["properties"]
    if props.get("type") == "ag_plot":
        y = float(props.get("yield", 0.0))
        props["margin_intervention"] = max(0.0, min(1.0, y / 10.0))
        props["habitat_conversion"] = 1.0 if y < 1.0 else 0.0
    else:
        props["margin_intervention"] = 0.0
        props["habitat_conversion"] = 0.0

with open("output.geojson", "w") as fh:
    json.dump(data, fh)
"#;

    fn farm_input() -> (TempDir, std::path::PathBuf) {
        let ls = generate_landscape(7, &GeneratorConfig::default()).unwrap();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("input.geojson");
        write_farm_geojson(&ls.farms[0], &path).unwrap();
        (dir, path)
    }

    fn candidate(body: &str) -> Candidate {
        Candidate::new("test", CandidateKind::HeuristicScript, body, 0)
    }

    #[test]
    fn good_script_yields_ok_and_records() {
        let (_dir, input) = farm_input();
        let sandbox = Sandbox::default();
        let result = sandbox
            .execute_candidate(&candidate(GOOD_SCRIPT), &input, ExecStage::Baseline)
            .unwrap();
        assert_eq!(result.status, ExecStatus::Ok, "trace: {}", result.trace);
        let records = result.output_records.unwrap();
        assert_eq!(records.interventions().unwrap().len(), 9);
    }

    #[test]
    fn unbounded_loop_times_out_within_grace() {
        let (_dir, input) = farm_input();
        let sandbox = Sandbox::new(
            "python3",
            ExecLimits {
                timeout: Duration::from_secs(1),
                memory_bytes: 256 * 1024 * 1024,
            },
        );
        let start = Instant::now();
        let result = sandbox
            .execute_candidate(
                &candidate("while True:\n    pass\n"),
                &input,
                ExecStage::Baseline,
            )
            .unwrap();
        assert_eq!(result.status, ExecStatus::Timeout);
        assert!(start.elapsed() < Duration::from_secs(3));
    }

    #[test]
    fn malformed_output_is_invalid() {
        let (_dir, input) = farm_input();
        let sandbox = Sandbox::default();
        let script = "open('output.geojson', 'w').write('not json')\n";
        let result = sandbox
            .execute_candidate(&candidate(script), &input, ExecStage::Baseline)
            .unwrap();
        assert_eq!(result.status, ExecStatus::OutputInvalid);
        assert!(result.trace.contains("invalid JSON"), "{}", result.trace);
    }

    #[test]
    fn missing_output_is_invalid() {
        let (_dir, input) = farm_input();
        let result = Sandbox::default()
            .execute_candidate(&candidate("x = 1\n"), &input, ExecStage::Baseline)
            .unwrap();
        assert_eq!(result.status, ExecStatus::OutputInvalid);
        assert!(result.trace.contains("output.geojson"));
    }

    #[test]
    fn syntax_error_is_parse_failure() {
        let (_dir, input) = farm_input();
        let result = Sandbox::default()
            .execute_candidate(&candidate("def broken(:\n"), &input, ExecStage::Baseline)
            .unwrap();
        assert_eq!(result.status, ExecStatus::ParseFailure);
        assert!(result.trace.contains("SyntaxError"));
    }

    #[test]
    fn runtime_error_carries_trace() {
        let (_dir, input) = farm_input();
        let result = Sandbox::default()
            .execute_candidate(
                &candidate("raise ValueError('boom')\n"),
                &input,
                ExecStage::Baseline,
            )
            .unwrap();
        assert_eq!(result.status, ExecStatus::RuntimeFailure);
        assert!(result.trace.contains("boom"));
    }

    #[test]
    fn isolation_probe_cannot_escape_workdir() {
        let (dir, input) = farm_input();
        let outside = dir.path().join("escape.txt");
        let probe = format!(
            r#"
results = []
try:
    open({outside:?}, "w").write("escaped")
    results.append("write-abs: escaped")
except Exception:
    results.append("write-abs: blocked")
try:
    open("../escape2.txt", "w").write("escaped")
    results.append("write-rel: escaped")
except Exception:
    results.append("write-rel: blocked")
try:
    open("/etc/hostname").read()
    results.append("read-abs: escaped")
except Exception:
    results.append("read-abs: blocked")
try:
    import os
    os.chdir("/")
    results.append("chdir: escaped")
except Exception:
    results.append("chdir: blocked")
try:
    import socket
    socket.socket()
    results.append("socket: escaped")
except Exception:
    results.append("socket: blocked")
try:
    import subprocess
    subprocess.run(["true"])
    results.append("spawn: escaped")
except Exception:
    results.append("spawn: blocked")
import json
json.dump({{"type": "FeatureCollection", "features": []}}, open("output.geojson", "w"))
raise RuntimeError("PROBE:" + ";".join(results))
"#,
            outside = outside.to_str().unwrap()
        );
        let result = Sandbox::default()
            .execute_candidate(&candidate(&probe), &input, ExecStage::Baseline)
            .unwrap();
        assert_eq!(result.status, ExecStatus::RuntimeFailure);
        assert!(!result.trace.contains("escaped"), "{}", result.trace);
        assert!(result.trace.contains("write-abs: blocked"));
        assert!(result.trace.contains("read-abs: blocked"));
        assert!(result.trace.contains("socket: blocked"));
        assert!(result.trace.contains("spawn: blocked"));
        assert!(!outside.exists());
    }

    #[test]
    fn candidate_reads_allowed_inside_workdir() {
        let (_dir, input) = farm_input();
        let script = r#"
import json
data = json.load(open("input.geojson"))
for f in data["features"]:
    f["properties"]["margin_intervention"] = 0.0
    f["properties"]["habitat_conversion"] = 0.0
json.dump(data, open("output.geojson", "w"))
"#;
        let result = Sandbox::default()
            .execute_candidate(&candidate(script), &input, ExecStage::Baseline)
            .unwrap();
        assert_eq!(result.status, ExecStatus::Ok, "{}", result.trace);
    }

    #[test]
    fn deterministic_output_for_same_input() {
        let (_dir, input) = farm_input();
        let sandbox = Sandbox::default();
        let a = sandbox
            .execute_candidate(&candidate(GOOD_SCRIPT), &input, ExecStage::Baseline)
            .unwrap();
        let b = sandbox
            .execute_candidate(&candidate(GOOD_SCRIPT), &input, ExecStage::Baseline)
            .unwrap();
        assert_eq!(a.output_records, b.output_records);
    }

    #[test]
    fn global_stage_parses_direction_records() {
        let (_dir, input) = farm_input();
        let script = r#"
import json
data = json.load(open("input.geojson"))
out = []
for f in data["features"]:
    p = f["properties"]
    out.append({
        "plot_id": p["id"],
        "plot_type": p["type"],
        "label": p["label"],
        "margin_directions": ["north-east"] if p["type"] == "ag_plot" else [],
        "habitat_directions": [],
    })
json.dump(out, open("output.json", "w"))
"#;
        let result = Sandbox::default()
            .execute_candidate(&candidate(script), &input, ExecStage::Global)
            .unwrap();
        assert_eq!(result.status, ExecStatus::Ok, "{}", result.trace);
        let records = result.output_records.unwrap();
        assert_eq!(records.directions().unwrap().len(), 9);
    }

    #[test]
    fn invalid_direction_string_rejected() {
        let (_dir, input) = farm_input();
        let script = r#"
import json
json.dump([{"plot_id": 1, "plot_type": "ag_plot", "label": "Oats",
            "margin_directions": ["upwards"], "habitat_directions": []}],
          open("output.json", "w"))
"#;
        let result = Sandbox::default()
            .execute_candidate(&candidate(script), &input, ExecStage::Global)
            .unwrap();
        assert_eq!(result.status, ExecStatus::OutputInvalid);
    }

    struct ScriptedFixer {
        replacement: Option<String>,
    }

    impl Fixer for ScriptedFixer {
        fn fix(&self, _body: &str, _trace: &str) -> Result<Option<String>> {
            Ok(self.replacement.clone())
        }
    }

    #[test]
    fn repair_recovers_broken_fixture() {
        let (_dir, input) = farm_input();
        let sandbox = Sandbox::default();
        let broken = candidate("raise RuntimeError('nope')\n");
        let result = sandbox
            .execute_candidate(&broken, &input, ExecStage::Baseline)
            .unwrap();
        let fixer = ScriptedFixer {
            replacement: Some(GOOD_SCRIPT.to_string()),
        };
        let (repaired, final_result) =
            repair_and_rescore(&sandbox, &broken, result, &fixer, 1, &input, ExecStage::Baseline)
                .unwrap();
        assert!(final_result.is_ok());
        assert_eq!(repaired.lineage.last().unwrap().operator, "fixer");
    }

    #[test]
    fn unfixable_candidate_keeps_failing() {
        let (_dir, input) = farm_input();
        let sandbox = Sandbox::default();
        let broken = candidate("raise RuntimeError('nope')\n");
        let result = sandbox
            .execute_candidate(&broken, &input, ExecStage::Baseline)
            .unwrap();
        // Fixer that returns the identical broken script.
        let fixer = ScriptedFixer {
            replacement: Some(broken.body.clone()),
        };
        let (_, final_result) =
            repair_and_rescore(&sandbox, &broken, result, &fixer, 3, &input, ExecStage::Baseline)
                .unwrap();
        assert!(!final_result.is_ok());
    }

    #[test]
    fn zero_attempts_never_calls_fixer() {
        struct PanicFixer;
        impl Fixer for PanicFixer {
            fn fix(&self, _: &str, _: &str) -> Result<Option<String>> {
                panic!("fixer must not be called with max_attempts = 0");
            }
        }
        let (_dir, input) = farm_input();
        let sandbox = Sandbox::default();
        let broken = candidate("raise RuntimeError('nope')\n");
        let result = sandbox
            .execute_candidate(&broken, &input, ExecStage::Baseline)
            .unwrap();
        let (_, final_result) =
            repair_and_rescore(&sandbox, &broken, result, &PanicFixer, 0, &input, ExecStage::Baseline)
                .unwrap();
        assert!(!final_result.is_ok());
    }

    #[test]
    fn penalty_dominates_valid_errors() {
        let n = 45;
        assert!(penalty_error(n) > 2.0 * n as f64);
        let penalized = crate::fitness::fitness_of(penalty_error(n), 1e-6).unwrap();
        let worst_valid = crate::fitness::fitness_of(2.0 * n as f64, 1e-6).unwrap();
        assert!(penalized < worst_valid);
    }
}
