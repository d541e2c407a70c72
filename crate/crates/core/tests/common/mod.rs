//! Shared fixtures for the prompt golden-file checks.

use std::fs;
use std::path::PathBuf;

use hedgerow::evolve::OperatorKind;
use hedgerow::landscape::EconomicParams;
use hedgerow::llm::{
    compose_prompt, render_params_block, MechanismKind, PersonaKind, PromptContext, Role, Stage,
};

pub const PARENT_A: &str =
    "margin_intervention = min(1.0, plot_yield / 5.0)\nhabitat_conversion = 0.0";
pub const PARENT_B: &str =
    "margin_intervention = 0.25\nhabitat_conversion = 1.0 if plot_yield < 1 else 0.0";
pub const MESSAGE_A: &str = "Margins along the habitat edge qualify for a 40 percent subsidy.";
pub const MESSAGE_B: &str = "Your neighbours connected their field corners last season.";

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn base_context() -> PromptContext {
    PromptContext {
        farm_input: Some(
            r#"{"type": "FeatureCollection", "features": [{"properties": {"id": 1, "type": "ag_plot", "label": "Oats", "yield": 2.1, "nbs": [2]}}]}"#
                .to_string(),
        ),
        neighbor_exemplars: vec![
            (
                r#"{"type": "FeatureCollection", "features": [{"properties": {"id": 1, "type": "ag_plot", "label": "Barley", "yield": 3.0, "nbs": []}}]}"#.to_string(),
                r#"[{"plot_id": 1, "margin_intervention": 0.4, "habitat_conversion": 0.0}]"#.to_string(),
            ),
            (
                r#"{"type": "FeatureCollection", "features": [{"properties": {"id": 1, "type": "hab_plot", "label": "Broadleaf", "nbs": []}}]}"#.to_string(),
                r#"[]"#.to_string(),
            ),
        ],
        params_text: Some(render_params_block(&EconomicParams::default())),
        ..PromptContext::default()
    }
}

/// Every (golden name, composed text) pair covering the eight roles across
/// the three stages.
pub fn golden_grid() -> Vec<(String, String)> {
    let mut grid: Vec<(String, String)> = Vec::new();
    let mut push = |name: &str, text: String| grid.push((name.to_string(), text));

    for (stage, name) in [
        (Stage::Baseline, "generator_baseline"),
        (Stage::Global, "generator_global"),
    ] {
        push(
            name,
            compose_prompt(Role::Generator, stage, &base_context()).unwrap().text,
        );
    }

    for (op, name) in [
        (OperatorKind::Mutate, "modifier_baseline_mutate"),
        (OperatorKind::Crossover, "modifier_baseline_crossover"),
        (OperatorKind::ExploreDiverge, "modifier_baseline_explore_diverge"),
        (OperatorKind::ExploreConverge, "modifier_baseline_explore_converge"),
        (OperatorKind::Reflect, "modifier_baseline_reflect"),
    ] {
        let mut ctx = base_context();
        ctx.operator = Some(op);
        ctx.parents = vec![PARENT_A.to_string(), PARENT_B.to_string()];
        ctx.leaderboard = (0..5)
            .map(|i| (format!("margin_intervention = 0.{i}"), 10.0 - i as f64))
            .collect();
        push(name, compose_prompt(Role::Modifier, Stage::Baseline, &ctx).unwrap().text);
    }
    {
        let mut ctx = base_context();
        ctx.operator = Some(OperatorKind::Mutate);
        ctx.parents = vec![PARENT_A.to_string()];
        push(
            "modifier_global_mutate",
            compose_prompt(Role::Modifier, Stage::Global, &ctx).unwrap().text,
        );
    }

    {
        let ctx = PromptContext {
            code: Some("open('missing.json')".to_string()),
            trace: Some(
                "Traceback (most recent call last):\n  File \"candidate.py\", line 1\nFileNotFoundError: missing.json"
                    .to_string(),
            ),
            ..PromptContext::default()
        };
        push("fixer", compose_prompt(Role::Fixer, Stage::Baseline, &ctx).unwrap().text);
    }

    for (mechanism, name) in [
        (MechanismKind::Behavioral, "policy_generator_behavioral"),
        (MechanismKind::Economic, "policy_generator_economic"),
    ] {
        let mut ctx = base_context();
        ctx.baseline_code = Some(PARENT_A.to_string());
        ctx.target_code = Some("margin_directions = ['north-east']".to_string());
        ctx.mechanism = Some(mechanism);
        ctx.budget_per_farm = Some(10_000.0);
        ctx.pv_factor = Some(12.46);
        push(name, compose_prompt(Role::PolicyGenerator, Stage::Nudge, &ctx).unwrap().text);
    }

    {
        let mut ctx = base_context();
        ctx.baseline_code = Some(PARENT_A.to_string());
        ctx.target_code = Some("margin_directions = ['north-east']".to_string());
        ctx.mechanism = Some(MechanismKind::Economic);
        ctx.budget_per_farm = Some(10_000.0);
        ctx.pv_factor = Some(12.46);
        ctx.operator = Some(OperatorKind::Crossover);
        ctx.parents = vec![MESSAGE_A.to_string(), MESSAGE_B.to_string()];
        push(
            "policy_modifier_crossover",
            compose_prompt(Role::PolicyModifier, Stage::Nudge, &ctx).unwrap().text,
        );
    }

    for persona in PersonaKind::ALL {
        let ctx = PromptContext {
            baseline_code: Some(PARENT_A.to_string()),
            message: Some(MESSAGE_A.to_string()),
            persona: Some(persona),
            ..PromptContext::default()
        };
        push(
            &format!("farm_sim_{}", persona.as_str()),
            compose_prompt(Role::FarmSim, Stage::Nudge, &ctx).unwrap().text,
        );
    }
    {
        let ctx = PromptContext {
            baseline_code: Some(PARENT_A.to_string()),
            message: Some(MESSAGE_A.to_string()),
            ..PromptContext::default()
        };
        push(
            "farm_sim_generic",
            compose_prompt(Role::FarmSim, Stage::Nudge, &ctx).unwrap().text,
        );
    }

    {
        let ctx = PromptContext {
            code: Some("Program 1:\n```python\nx = 1\n```".to_string()),
            ..PromptContext::default()
        };
        push("explainer", compose_prompt(Role::Explainer, Stage::Baseline, &ctx).unwrap().text);
    }
    {
        let ctx = PromptContext {
            previous_summary: Some("Earlier scripts used flat margins.".to_string()),
            current_explanation: Some("Later scripts scale margins by yield.".to_string()),
            ..PromptContext::default()
        };
        push("merger", compose_prompt(Role::Merger, Stage::Baseline, &ctx).unwrap().text);
    }

    grid
}

/// Compares (or rewrites, under UPDATE_GOLDEN=1) one named golden file.
pub fn check_golden(name: &str, text: &str) {
    let path = golden_dir().join(format!("{name}.txt"));
    if std::env::var("UPDATE_GOLDEN").is_ok() {
        fs::create_dir_all(golden_dir()).unwrap();
        fs::write(&path, text).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path)
        .unwrap_or_else(|_| panic!("missing golden file {path:?}; run with UPDATE_GOLDEN=1"));
    assert_eq!(expected, text, "prompt for {name} drifted from its golden file");
}
