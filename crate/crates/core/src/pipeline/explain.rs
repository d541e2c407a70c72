//! Heuristics-explanation pipeline: heuristic files ordered by fitness are
//! processed in fixed-size groups; an explainer role drafts a per-group
//! analysis and a merger role folds it into the running summary, with each
//! group checkpointed so interrupted runs replay only the remaining groups.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::llm::{compose_prompt, Gateway, PromptContext, Role, Stage};

pub struct ExplainRequest {
    /// Heuristic files ordered by fitness ascending.
    pub files: Vec<PathBuf>,
    pub group_size: usize,
    /// Group summaries are checkpointed here as `group_<i>.txt`.
    pub checkpoint_dir: PathBuf,
}

fn render_group(files: &[PathBuf]) -> Result<String> {
    let mut out = String::new();
    for (i, file) in files.iter().enumerate() {
        let code = fs::read_to_string(file)?;
        out.push_str(&format!("Program {}:\n```python\n{}\n```\n\n", i + 1, code.trim_end()));
    }
    Ok(out.trim_end().to_string())
}

fn group_checkpoint(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("group_{index}.txt"))
}

/// Runs the grouped explain-and-merge loop and returns the consolidated
/// summary (also written to `summary.txt` in the checkpoint dir).
pub fn explain_heuristics(request: &ExplainRequest, gateway: &Gateway) -> Result<String> {
    if request.files.is_empty() {
        return Err(Error::Precondition(
            "explanation needs at least one heuristic file".into(),
        ));
    }
    if request.group_size == 0 {
        return Err(Error::InvalidInput("group_size must be positive".into()));
    }
    fs::create_dir_all(&request.checkpoint_dir)?;

    let mut summary = String::new();
    for (index, group) in request.files.chunks(request.group_size).enumerate() {
        let checkpoint = group_checkpoint(&request.checkpoint_dir, index);
        if checkpoint.exists() {
            summary = fs::read_to_string(&checkpoint)?;
            continue;
        }

        let ctx = PromptContext {
            code: Some(render_group(group)?),
            ..PromptContext::default()
        };
        let bundle = compose_prompt(Role::Explainer, Stage::Baseline, &ctx)?;
        let explanation = gateway
            .complete(&bundle)
            .map_err(Error::Provider)?
            .parsed
            .ok_or_else(|| Error::Engine("empty explanation response".into()))?;

        summary = if index == 0 {
            // First group seeds the summary; no merge needed.
            explanation
        } else {
            let merge_ctx = PromptContext {
                previous_summary: Some(summary.clone()),
                current_explanation: Some(explanation),
                ..PromptContext::default()
            };
            let bundle = compose_prompt(Role::Merger, Stage::Baseline, &merge_ctx)?;
            gateway
                .complete(&bundle)
                .map_err(Error::Provider)?
                .parsed
                .ok_or_else(|| Error::Engine("empty merge response".into()))?
        };
        fs::write(&checkpoint, &summary)?;
    }

    fs::write(request.checkpoint_dir.join("summary.txt"), &summary)?;
    Ok(summary)
}

/// Heuristic files of a completed farm stage ordered by fitness ascending
/// (worst first), using the final generation's checkpoint.
pub fn stage_heuristic_files(farm_stage_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut latest: Option<(u32, PathBuf)> = None;
    for entry in fs::read_dir(farm_stage_dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(gen) = name.strip_prefix("gen_").and_then(|g| g.parse::<u32>().ok()) {
            if latest.as_ref().map(|(g, _)| gen > *g).unwrap_or(true) {
                latest = Some((gen, entry.path()));
            }
        }
    }
    let (_, gen_dir) = latest.ok_or_else(|| {
        Error::Precondition(format!(
            "no generation checkpoints under {}",
            farm_stage_dir.display()
        ))
    })?;
    let scores: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(gen_dir.join("scores.json"))?)?;
    let mut scored: Vec<(f64, PathBuf)> = scores["members"]
        .as_array()
        .map(|members| {
            members
                .iter()
                .filter_map(|m| {
                    let id = m["id"].as_str()?;
                    let fitness = m["fitness_history"]
                        .as_array()?
                        .last()?
                        .get("fitness")?
                        .as_f64()?;
                    Some((fitness, gen_dir.join(format!("candidate_{id}.txt"))))
                })
                .collect()
        })
        .unwrap_or_default();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    Ok(scored.into_iter().map(|(_, p)| p).collect())
}
