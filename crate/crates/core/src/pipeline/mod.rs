//! End-to-end orchestration of the four pipeline stages, configuration,
//! checkpoint/resume, the heuristics-explanation summarizer, and report
//! emission.

mod config;
mod explain;
mod groundtruth;
mod manifest;
mod report;
mod stages;

pub use config::{
    EaConfig, GroundTruthConfig, GroundTruthKind, LandscapeConfig, NudgeConfig, OperatorWeights,
    ProviderConfig, ProviderKind, RunConfig, SandboxConfig,
};
pub use explain::{explain_heuristics, stage_heuristic_files, ExplainRequest};
pub use groundtruth::{
    read_targets, write_targets, BuiltinReference, ExternalCommand, GroundTruthProvider,
};
pub use manifest::{ProviderAuditSummary, RunManifest, StageMarker};
pub use report::emit_reports;
pub use stages::{
    build_gateway, cell_dir, derive_seed, farm_dir, generate_landscape_cmd, ground_truth_provider,
    landscape_dir, run_all, run_script_stage, run_stage, run_stage1, run_stage4, stage_dir,
    stage_spec, CellOutcome, MetricKind, ScriptEvaluator, ScriptVariation, StageSpec,
};
