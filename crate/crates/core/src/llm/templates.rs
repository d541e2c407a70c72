//! The versioned prompt-template catalog and role-specific composition.
//!
//! Template text lives in `templates/` as data files with `{slot}` markers;
//! composition is a pure function of (role, stage, context), so identical
//! inputs yield identical bytes.

use crate::error::{Error, Result};
use crate::evolve::OperatorKind;
use crate::landscape::EconomicParams;
use crate::llm::{PromptBundle, Role, Stage};

use serde::{Deserialize, Serialize};

macro_rules! template {
    ($name:literal) => {
        include_str!(concat!("../../templates/", $name))
    };
}

const PARAMS: &str = template!("params.txt");
const S2_SYSTEM: &str = template!("stage2/system.txt");
const S2_TASK_COMMON: &str = template!("stage2/task_common.txt");
const S2_TASK_GENERATOR: &str = template!("stage2/task_generator.txt");
const S2_OPERATOR_COMMON: &str = template!("stage2/operator_common.txt");
const S3_SYSTEM: &str = template!("stage3/system.txt");
const S3_TASK_COMMON: &str = template!("stage3/task_common.txt");
const S3_TASK_GENERATOR: &str = template!("stage3/task_generator.txt");
const S3_OPERATOR_COMMON: &str = template!("stage3/operator_common.txt");
const OP_MUTATE: &str = template!("operators/mutate.txt");
const OP_CROSSOVER: &str = template!("operators/crossover.txt");
const OP_EXPLORE_DIVERGE: &str = template!("operators/explore_diverge.txt");
const OP_EXPLORE_CONVERGE: &str = template!("operators/explore_converge.txt");
const OP_REFLECT: &str = template!("operators/reflect.txt");
const FIXER_SYSTEM: &str = template!("fixer/system.txt");
const FIXER_TASK: &str = template!("fixer/task.txt");
const S4_POLICY_SYSTEM: &str = template!("stage4/policy_system.txt");
const S4_POLICY_SYSTEM_MECHANISM: &str = template!("stage4/policy_system_mechanism.txt");
const S4_POLICY_TASK: &str = template!("stage4/policy_task.txt");
const S4_POLICY_INTRO: &str = template!("stage4/policy_intro.txt");
const S4_BEHAVIORAL: &str = template!("stage4/behavioral.txt");
const S4_ECONOMIC: &str = template!("stage4/economic.txt");
const S4_ECONOMIC_TABLE: &str = template!("stage4/economic_table.txt");
const S4_OPERATOR_COMMON: &str = template!("stage4/operator_common.txt");
const S4_OP_MUTATE: &str = template!("stage4/operators/mutate.txt");
const S4_OP_CROSSOVER: &str = template!("stage4/operators/crossover.txt");
const S4_OP_EXPLORE_DIVERGE: &str = template!("stage4/operators/explore_diverge.txt");
const S4_OP_EXPLORE_CONVERGE: &str = template!("stage4/operators/explore_converge.txt");
const S4_OP_REFLECT: &str = template!("stage4/operators/reflect.txt");
const S4_FARM_SYSTEM: &str = template!("stage4/farm_system.txt");
const S4_FARM_SYSTEM_BASIC: &str = template!("stage4/farm_system_basic.txt");
const S4_FARM_TASK: &str = template!("stage4/farm_task.txt");
const S4_POLICY_MESSAGE: &str = template!("stage4/policy_message.txt");
const PERSONA_RESISTANT: &str = template!("stage4/personas/resistant.txt");
const PERSONA_ECONOMIC: &str = template!("stage4/personas/economic.txt");
const PERSONA_SOCIAL: &str = template!("stage4/personas/social.txt");
const EXPLAIN_SYSTEM: &str = template!("explain/system.txt");
const EXPLAIN_TASK: &str = template!("explain/task.txt");
const MERGE_SYSTEM: &str = template!("merge/system.txt");
const MERGE_TASK: &str = template!("merge/task.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PersonaKind {
    Resistant,
    Economic,
    Social,
}

impl PersonaKind {
    pub const ALL: [PersonaKind; 3] = [
        PersonaKind::Resistant,
        PersonaKind::Economic,
        PersonaKind::Social,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PersonaKind::Resistant => "resistant",
            PersonaKind::Economic => "economic",
            PersonaKind::Social => "social",
        }
    }

    /// The catalog prompt block for this persona.
    pub fn prompt_block(&self) -> &'static str {
        match self {
            PersonaKind::Resistant => PERSONA_RESISTANT.trim_end(),
            PersonaKind::Economic => PERSONA_ECONOMIC.trim_end(),
            PersonaKind::Social => PERSONA_SOCIAL.trim_end(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    Behavioral,
    Economic,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 2] = [MechanismKind::Behavioral, MechanismKind::Economic];

    pub fn as_str(&self) -> &'static str {
        match self {
            MechanismKind::Behavioral => "behavioral",
            MechanismKind::Economic => "economic",
        }
    }
}

/// Everything a template slot may draw from. Roles validate the fields they
/// need and report the first missing slot by name.
#[derive(Debug, Clone, Default)]
pub struct PromptContext {
    /// Current farm's input GeoJSON text.
    pub farm_input: Option<String>,
    /// (input, output) exemplar pairs from neighboring farms.
    pub neighbor_exemplars: Vec<(String, String)>,
    /// Rendered economic-parameters block.
    pub params_text: Option<String>,
    /// Parent bodies for variation operators.
    pub parents: Vec<String>,
    /// (body, fitness) leaderboard for reflect, best first.
    pub leaderboard: Vec<(String, f64)>,
    pub operator: Option<OperatorKind>,
    pub persona: Option<PersonaKind>,
    pub mechanism: Option<MechanismKind>,
    /// Budget per farm for the economic mechanism.
    pub budget_per_farm: Option<f64>,
    /// Present-value factor for 20 years of annual payments.
    pub pv_factor: Option<f64>,
    /// Baseline (profit-driven) heuristic code.
    pub baseline_code: Option<String>,
    /// Connectivity-target heuristic code.
    pub target_code: Option<String>,
    /// Nudge message under evaluation.
    pub message: Option<String>,
    /// Failing code (fixer) or grouped code listing (explainer).
    pub code: Option<String>,
    /// Stack trace for the fixer.
    pub trace: Option<String>,
    pub previous_summary: Option<String>,
    pub current_explanation: Option<String>,
}

impl PromptContext {
    fn need<'a>(&self, field: &'a Option<String>, slot: &'static str) -> Result<&'a str> {
        field.as_deref().ok_or(Error::MissingSlot(slot))
    }
}

/// Fills `{name}` markers in a single left-to-right scan of the template.
/// Values are never re-scanned, so slot-like text inside candidate bodies
/// survives verbatim; unknown markers (like `\communication{message}`) pass
/// through untouched.
fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find(|c| c == '}' || c == '{' || c == '\n') {
            Some(end) if after[end..].starts_with('}') => {
                let name = &after[..end];
                if let Some((_, value)) = slots.iter().find(|(n, _)| *n == name) {
                    out.push_str(value);
                } else {
                    out.push('{');
                    out.push_str(name);
                    out.push('}');
                }
                rest = &after[end + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Renders the shared economic-parameters block in the catalog's
/// Python-dict style.
pub fn render_params_block(params: &EconomicParams) -> String {
    let prices = params
        .crop_prices
        .iter()
        .map(|(crop, price)| format!("'{crop}': {}", fmt_num(*price)))
        .collect::<Vec<_>>()
        .join(", ");
    let costs = format!(
        "{{'margin': {{'implementation': {}, 'maintenance': {}}}, 'habitat': {{'implementation': {}, 'maintenance': {}}}, 'agriculture': {{'maintenance': {}}}}}",
        fmt_num(params.margin.implementation),
        fmt_num(params.margin.maintenance),
        fmt_num(params.habitat.implementation),
        fmt_num(params.habitat.maintenance),
        fmt_num(params.ag_maintenance),
    );
    fill(
        PARAMS.trim_end(),
        &[("crop_prices", &format!("{{{prices}}}")), ("costs", &costs)],
    )
}

/// Renders the in-context-learning data section: neighbor exemplars in
/// order, then the current farm's input.
pub fn render_icl_data(neighbor_exemplars: &[(String, String)], farm_input: &str) -> String {
    let mut out = String::new();
    for (i, (input, output)) in neighbor_exemplars.iter().enumerate() {
        out.push_str(&format!("Neighbour {}: input: {input}\nOutput: {output}\n\n", i + 1));
    }
    out.push_str(&format!("Your farm: input: {farm_input}"));
    out
}

fn render_leaderboard(leaderboard: &[(String, f64)], fenced: bool) -> String {
    leaderboard
        .iter()
        .enumerate()
        .map(|(i, (body, fitness))| {
            if fenced {
                format!("Candidate {} (fitness {:.6}):\n```python\n{body}\n```", i + 1, fitness)
            } else {
                format!("Candidate {} (fitness {:.6}): {body}", i + 1, fitness)
            }
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn script_operator_body(op: OperatorKind, ctx: &PromptContext) -> Result<String> {
    let parent = |i: usize| -> Result<&str> {
        ctx.parents
            .get(i)
            .map(String::as_str)
            .ok_or(Error::MissingSlot(match i {
                0 => "parent_code",
                _ => "parent2_code",
            }))
    };
    Ok(match op {
        OperatorKind::Mutate => fill(OP_MUTATE.trim_end(), &[("parent_code", parent(0)?)]),
        OperatorKind::Crossover => fill(
            OP_CROSSOVER.trim_end(),
            &[("parent1_code", parent(0)?), ("parent2_code", parent(1)?)],
        ),
        OperatorKind::ExploreDiverge => fill(
            OP_EXPLORE_DIVERGE.trim_end(),
            &[("parent1_code", parent(0)?), ("parent2_code", parent(1)?)],
        ),
        OperatorKind::ExploreConverge => fill(
            OP_EXPLORE_CONVERGE.trim_end(),
            &[("parent1_code", parent(0)?), ("parent2_code", parent(1)?)],
        ),
        OperatorKind::Reflect => {
            if ctx.leaderboard.is_empty() {
                return Err(Error::MissingSlot("heuristics_info"));
            }
            fill(
                OP_REFLECT.trim_end(),
                &[("heuristics_info", &render_leaderboard(&ctx.leaderboard, true))],
            )
        }
    })
}

fn message_operator_body(op: OperatorKind, ctx: &PromptContext) -> Result<String> {
    let parent = |i: usize| -> Result<&str> {
        ctx.parents
            .get(i)
            .map(String::as_str)
            .ok_or(Error::MissingSlot(match i {
                0 => "parent1_message",
                _ => "parent2_message",
            }))
    };
    Ok(match op {
        OperatorKind::Mutate => fill(
            S4_OP_MUTATE.trim_end(),
            &[("heuristic_policy", parent(0)?)],
        ),
        OperatorKind::Crossover => fill(
            S4_OP_CROSSOVER.trim_end(),
            &[("parent1_message", parent(0)?), ("parent2_message", parent(1)?)],
        ),
        OperatorKind::ExploreDiverge => fill(
            S4_OP_EXPLORE_DIVERGE.trim_end(),
            &[("parent1_message", parent(0)?), ("parent2_message", parent(1)?)],
        ),
        OperatorKind::ExploreConverge => fill(
            S4_OP_EXPLORE_CONVERGE.trim_end(),
            &[("parent1_message", parent(0)?), ("parent2_message", parent(1)?)],
        ),
        OperatorKind::Reflect => {
            if ctx.leaderboard.is_empty() {
                return Err(Error::MissingSlot("heuristics_info"));
            }
            fill(
                S4_OP_REFLECT.trim_end(),
                &[("heuristics_info", &render_leaderboard(&ctx.leaderboard, false))],
            )
        }
    })
}

fn mechanism_block(ctx: &PromptContext) -> Result<Option<String>> {
    match ctx.mechanism {
        None => Ok(None),
        Some(MechanismKind::Behavioral) => {
            let farm_input = ctx.need(&ctx.farm_input, "social_comparison_data_str")?;
            let data = render_icl_data(&ctx.neighbor_exemplars, farm_input);
            Ok(Some(fill(
                S4_BEHAVIORAL.trim_end(),
                &[("social_comparison_data_str", &data)],
            )))
        }
        Some(MechanismKind::Economic) => {
            let budget = ctx.budget_per_farm.ok_or(Error::MissingSlot("BUDGET_PER_FARM"))?;
            let pv = ctx.pv_factor.ok_or(Error::MissingSlot("PV_FACTOR_20Y_5PC"))?;
            Ok(Some(fill(
                S4_ECONOMIC.trim_end(),
                &[
                    ("BUDGET_PER_FARM", fmt_num(budget).as_str()),
                    ("PV_FACTOR_20Y_5PC", fmt_num(pv).as_str()),
                    ("economic_incentives_table_info", S4_ECONOMIC_TABLE.trim_end()),
                ],
            )))
        }
    }
}

fn policy_context(ctx: &PromptContext) -> Result<String> {
    let baseline = ctx.need(&ctx.baseline_code, "heur_eco_intens_str")?;
    let target = ctx.need(&ctx.target_code, "heur_eco_conn_str")?;
    let params = ctx.need(&ctx.params_text, "params_instructions_str")?;
    Ok(fill(
        S4_POLICY_INTRO.trim_end(),
        &[
            ("heur_eco_intens_str", baseline),
            ("heur_eco_conn_str", target),
            ("params_instructions_str", params),
        ],
    ))
}

fn join(blocks: &[&str]) -> String {
    blocks
        .iter()
        .map(|b| b.trim_end())
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Assembles the prompt for a role/stage from the template catalog. The
/// composition order follows the catalog (system, task/context, operator,
/// data, final instructions); missing context is reported by slot name.
pub fn compose_prompt(role: Role, stage: Stage, ctx: &PromptContext) -> Result<PromptBundle> {
    let text = match (role, stage) {
        (Role::Generator, Stage::Baseline | Stage::Global) => {
            let farm_input = ctx.need(&ctx.farm_input, "farm_input")?;
            let params = ctx.need(&ctx.params_text, "params_instructions_str")?;
            let data = render_icl_data(&ctx.neighbor_exemplars, farm_input);
            let (system, task) = match stage {
                Stage::Baseline => (S2_SYSTEM, S2_TASK_GENERATOR),
                _ => (S3_SYSTEM, S3_TASK_GENERATOR),
            };
            join(&[system, &fill(task.trim_end(), &[("data", &data)]), params])
        }
        (Role::Modifier, Stage::Baseline | Stage::Global) => {
            let op = ctx.operator.ok_or(Error::MissingSlot("operator"))?;
            let params = ctx.need(&ctx.params_text, "params_instructions_str")?;
            let body = script_operator_body(op, ctx)?;
            let (system, op_common, task_common) = match stage {
                Stage::Baseline => (S2_SYSTEM, S2_OPERATOR_COMMON, S2_TASK_COMMON),
                _ => (S3_SYSTEM, S3_OPERATOR_COMMON, S3_TASK_COMMON),
            };
            join(&[system, op_common, &body, task_common, params])
        }
        (Role::Fixer, _) => {
            let code = ctx.need(&ctx.code, "heuristics_code")?;
            let trace = ctx.need(&ctx.trace, "trace")?;
            join(&[
                FIXER_SYSTEM,
                &fill(FIXER_TASK.trim_end(), &[("heuristics_code", code), ("trace", trace)]),
            ])
        }
        (Role::PolicyGenerator, Stage::Nudge) => {
            let intro = policy_context(ctx)?;
            match mechanism_block(ctx)? {
                Some(mech) => join(&[S4_POLICY_SYSTEM_MECHANISM, &intro, &mech]),
                None => {
                    let params = ctx.need(&ctx.params_text, "params_instructions_str")?;
                    join(&[S4_POLICY_SYSTEM, S4_POLICY_TASK, params])
                }
            }
        }
        (Role::PolicyModifier, Stage::Nudge) => {
            let op = ctx.operator.ok_or(Error::MissingSlot("operator"))?;
            let intro = policy_context(ctx)?;
            let body = message_operator_body(op, ctx)?;
            let system = if ctx.mechanism.is_some() {
                S4_POLICY_SYSTEM_MECHANISM
            } else {
                S4_POLICY_SYSTEM
            };
            match mechanism_block(ctx)? {
                Some(mech) => join(&[system, &intro, &mech, &body, S4_OPERATOR_COMMON]),
                None => join(&[system, &intro, &body, S4_OPERATOR_COMMON]),
            }
        }
        (Role::FarmSim, Stage::Nudge) => {
            let baseline = ctx.need(&ctx.baseline_code, "heur_eco_intens")?;
            let message = ctx.need(&ctx.message, "heuristic_policy")?;
            let task = fill(S4_FARM_TASK.trim_end(), &[("heur_eco_intens", baseline)]);
            let msg = fill(S4_POLICY_MESSAGE.trim_end(), &[("heuristic_policy", message)]);
            match ctx.persona {
                Some(p) => join(&[S4_FARM_SYSTEM, p.prompt_block(), &task, &msg]),
                None => join(&[S4_FARM_SYSTEM_BASIC, &task, &msg]),
            }
        }
        (Role::Explainer, _) => {
            let code = ctx.need(&ctx.code, "code_snippet")?;
            format!(
                "{}Please analyze the following group of Python programs:\n{}\n{}\nExplain your reasoning and think step by step before providing your final explanation:",
                format_args!("{}\n\n", EXPLAIN_SYSTEM.trim_end()),
                code,
                EXPLAIN_TASK.trim_end(),
            )
        }
        (Role::Merger, _) => {
            let prev = ctx.need(&ctx.previous_summary, "previous_summary")?;
            let cur = ctx.need(&ctx.current_explanation, "current_explanation")?;
            format!(
                "{}You have a previous summary of insights:\n{}\nAdditionally, here is the new explanation for the current group:\n{}\n{}\nPlease merge the previous insights with this new analysis. Explain your reasoning and think step by step before providing your updated, consolidated summary.",
                format_args!("{}\n\n", MERGE_SYSTEM.trim_end()),
                prev,
                cur,
                MERGE_TASK.trim_end(),
            )
        }
        (role, stage) => {
            return Err(Error::InvalidInput(format!(
                "role {} is not defined for stage {}",
                role.as_str(),
                stage.as_str()
            )))
        }
    };
    Ok(PromptBundle::new(role, stage, text))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_ctx() -> PromptContext {
        PromptContext {
            farm_input: Some("{\"type\": \"FeatureCollection\"}".into()),
            neighbor_exemplars: vec![
                ("{\"farm\": 1}".into(), "[{\"plot_id\": 1}]".into()),
                ("{\"farm\": 2}".into(), "[{\"plot_id\": 2}]".into()),
            ],
            params_text: Some(render_params_block(&EconomicParams::default())),
            ..PromptContext::default()
        }
    }

    #[test]
    fn generator_prompt_contains_exemplars_in_order() {
        let bundle = compose_prompt(Role::Generator, Stage::Baseline, &base_ctx()).unwrap();
        let n1 = bundle.text.find("Neighbour 1: input: {\"farm\": 1}").unwrap();
        let n2 = bundle.text.find("Neighbour 2: input: {\"farm\": 2}").unwrap();
        let own = bundle.text.find("Your farm: input:").unwrap();
        assert!(n1 < n2 && n2 < own);
        assert!(bundle.text.contains("Save outputs to output.geojson."));
    }

    #[test]
    fn composition_is_byte_deterministic() {
        let a = compose_prompt(Role::Generator, Stage::Global, &base_ctx()).unwrap();
        let b = compose_prompt(Role::Generator, Stage::Global, &base_ctx()).unwrap();
        assert_eq!(a.text, b.text);
        assert_eq!(a.context_digest, b.context_digest);
    }

    #[test]
    fn missing_slot_is_named() {
        let ctx = PromptContext::default();
        match compose_prompt(Role::Generator, Stage::Baseline, &ctx) {
            Err(Error::MissingSlot(slot)) => assert_eq!(slot, "farm_input"),
            other => panic!("expected MissingSlot, got {other:?}"),
        }
        let mut ctx = base_ctx();
        ctx.operator = Some(OperatorKind::Mutate);
        ctx.parents.clear();
        match compose_prompt(Role::Modifier, Stage::Baseline, &ctx) {
            Err(Error::MissingSlot(slot)) => assert_eq!(slot, "parent_code"),
            other => panic!("expected MissingSlot, got {other:?}"),
        }
    }

    #[test]
    fn modifier_embeds_parent_code() {
        let mut ctx = base_ctx();
        ctx.operator = Some(OperatorKind::Crossover);
        ctx.parents = vec!["alpha = 1".into(), "beta = 2".into()];
        let bundle = compose_prompt(Role::Modifier, Stage::Baseline, &ctx).unwrap();
        assert!(bundle.text.contains("alpha = 1"));
        assert!(bundle.text.contains("beta = 2"));
        assert!(bundle.text.contains("Combine these two sets of heuristics"));
    }

    #[test]
    fn farm_sim_includes_persona_block() {
        let mut ctx = PromptContext::default();
        ctx.baseline_code = Some("margin = 0.1".into());
        ctx.message = Some("please adopt".into());
        ctx.persona = Some(PersonaKind::Resistant);
        let bundle = compose_prompt(Role::FarmSim, Stage::Nudge, &ctx).unwrap();
        assert!(bundle
            .text
            .contains("extremely resistant to changing your current practices"));
        assert!(bundle.text.contains("Message from the policy professional is: please adopt."));
    }

    #[test]
    fn economic_mechanism_fills_budget_values() {
        let mut ctx = base_ctx();
        ctx.baseline_code = Some("a = 1".into());
        ctx.target_code = Some("b = 2".into());
        ctx.mechanism = Some(MechanismKind::Economic);
        ctx.budget_per_farm = Some(10000.0);
        ctx.pv_factor = Some(12.46);
        let bundle = compose_prompt(Role::PolicyGenerator, Stage::Nudge, &ctx).unwrap();
        assert!(bundle.text.contains("BUDGET_PER_FARM:10000"));
        assert!(bundle.text.contains("PV_FACTOR_20Y_5PC:12.46"));
        assert!(bundle.text.contains("range [0, 150] currency units/ha"));
        // The literal format marker survives composition.
        assert!(bundle.text.contains(r"\communication{message}"));
    }

    #[test]
    fn params_block_renders_defaults() {
        let text = render_params_block(&EconomicParams::default());
        assert!(text.contains("'Soybeans': 370"));
        assert!(text.contains("'Spring wheat': 200"));
        assert!(text.contains("'margin': {'implementation': 400, 'maintenance': 60}"));
        assert!(text.contains("'agriculture': {'maintenance': 100}"));
    }

    #[test]
    fn fill_leaves_unknown_markers_alone() {
        let out = fill("keep \\communication{message} and {known}", &[("known", "VALUE")]);
        assert_eq!(out, "keep \\communication{message} and VALUE");
    }

    #[test]
    fn fill_never_rescans_inserted_values() {
        let out = fill("{a} {b}", &[("a", "{b}"), ("b", "x")]);
        assert_eq!(out, "{b} x");
    }

    #[test]
    fn undefined_role_stage_combination_rejected() {
        assert!(compose_prompt(Role::PolicyGenerator, Stage::Baseline, &base_ctx()).is_err());
    }
}
