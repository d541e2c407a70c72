//! The run manifest: a config snapshot, stage completion markers, and an
//! index of every emitted artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StageMarker {
    pub complete: bool,
    /// Artifact paths relative to the run directory.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProviderAuditSummary {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunManifest {
    /// Verbatim TOML snapshot of the effective configuration.
    pub config_snapshot: String,
    pub stages: BTreeMap<String, StageMarker>,
    pub provider_audit: ProviderAuditSummary,
}

impl RunManifest {
    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join(MANIFEST_NAME)
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = Self::path(run_dir);
        let text = fs::read_to_string(&path).map_err(|_| {
            Error::Precondition(format!(
                "no run manifest at {}; run generate-landscape first",
                path.display()
            ))
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn load_or_default(run_dir: &Path) -> Result<Self> {
        match fs::read_to_string(Self::path(run_dir)) {
            Ok(text) => Ok(serde_json::from_str(&text)?),
            Err(_) => Ok(RunManifest::default()),
        }
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        fs::create_dir_all(run_dir)?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(Self::path(run_dir), text)?;
        Ok(())
    }

    pub fn stage_complete(&self, stage: &str) -> bool {
        self.stages.get(stage).map(|m| m.complete).unwrap_or(false)
    }

    /// Marks a stage complete after verifying each artifact exists.
    pub fn complete_stage(
        &mut self,
        run_dir: &Path,
        stage: &str,
        artifacts: Vec<String>,
    ) -> Result<()> {
        for artifact in &artifacts {
            if !run_dir.join(artifact).exists() {
                return Err(Error::Precondition(format!(
                    "stage {stage} artifact missing before completion: {artifact}"
                )));
            }
        }
        self.stages.insert(
            stage.to_string(),
            StageMarker {
                complete: true,
                artifacts,
            },
        );
        self.save(run_dir)
    }

    /// Confirms the manifest references no missing files.
    pub fn validate_artifacts(&self, run_dir: &Path) -> Result<()> {
        for (stage, marker) in &self.stages {
            for artifact in &marker.artifacts {
                if !run_dir.join(artifact).exists() {
                    return Err(Error::Precondition(format!(
                        "manifest references missing artifact {artifact} (stage {stage})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Recomputes the provider audit summary from the JSONL log.
    pub fn refresh_audit(&mut self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join("audit.jsonl");
        let mut summary = ProviderAuditSummary::default();
        if let Ok(text) = fs::read_to_string(&path) {
            for line in text.lines() {
                if line.trim().is_empty() {
                    continue;
                }
                let record: serde_json::Value = serde_json::from_str(line)?;
                summary.calls += 1;
                summary.prompt_tokens += record["prompt_tokens"].as_u64().unwrap_or(0);
                summary.completion_tokens += record["completion_tokens"].as_u64().unwrap_or(0);
            }
        }
        self.provider_audit = summary;
        Ok(())
    }
}
