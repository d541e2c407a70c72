//! Nudge-message evolution: persona-conditioned farm-agent simulation,
//! nudge scoring against connectivity targets, the economic-offer budget
//! validator, and the message search loop built on the generic engine.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::connectivity::PlotDirections;
use crate::error::{Error, Result};
use crate::evolve::{
    Engine, EngineConfig, FitnessEval, GenerationStats, NoopObserver, OperatorKind,
    OperatorLedger, Variation,
};
use crate::fitness::{error_nudge, FitnessReport};
use crate::landscape::{EconomicParams, InterventionRecord};
use crate::llm::{
    compose_prompt, Gateway, GatewayFixer, MechanismKind, PersonaKind, PromptContext, Role, Stage,
};
use crate::sandbox::{
    penalty_error, repair_and_rescore, Candidate, CandidateKind, ExecStage, Sandbox,
};

/// A farm agent's behavioral profile. The prompt block must match the
/// catalog entry for the name.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Persona {
    pub name: PersonaKind,
    pub prompt_block: String,
}

impl Persona {
    pub fn from_kind(name: PersonaKind) -> Self {
        Persona {
            name,
            prompt_block: name.prompt_block().to_string(),
        }
    }

    pub fn catalog() -> Vec<Persona> {
        PersonaKind::ALL.iter().map(|k| Persona::from_kind(*k)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt_block != self.name.prompt_block() {
            return Err(Error::InvalidInput(format!(
                "persona '{}' prompt block diverges from the catalog",
                self.name.as_str()
            )));
        }
        Ok(())
    }
}

/// Instrument ranges and budget arithmetic for a nudge mechanism.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub kind: MechanismKind,
    /// Notional budget per farm (present value), economic mechanism only.
    pub budget_per_farm: f64,
    /// PV factor for 20 years of annual payments at 5 percent.
    pub pv_factor: f64,
    /// Instrument name -> inclusive [lo, hi] range.
    pub instrument_ranges: IndexMap<String, (f64, f64)>,
}

pub const DEFAULT_BUDGET_PER_FARM: f64 = 10_000.0;
pub const DEFAULT_PV_FACTOR_20Y_5PC: f64 = 12.46;

fn default_ranges() -> IndexMap<String, (f64, f64)> {
    let mut ranges = IndexMap::new();
    ranges.insert("margin_establishment_subsidy".to_string(), (0.0, 1.0));
    ranges.insert("habitat_establishment_subsidy".to_string(), (0.0, 1.0));
    ranges.insert("margin_maintenance_subsidy".to_string(), (0.0, 1.0));
    ranges.insert("habitat_maintenance_subsidy".to_string(), (0.0, 1.0));
    ranges.insert("habitat_payment_per_ha".to_string(), (0.0, 150.0));
    ranges.insert("min_habitat_ha".to_string(), (0.0, 10.0));
    ranges.insert("min_margin_fraction".to_string(), (0.0, 0.3));
    ranges.insert("eco_premium_factor".to_string(), (1.0, 1.3));
    ranges
}

impl MechanismSpec {
    pub fn behavioral() -> Self {
        MechanismSpec {
            kind: MechanismKind::Behavioral,
            budget_per_farm: DEFAULT_BUDGET_PER_FARM,
            pv_factor: DEFAULT_PV_FACTOR_20Y_5PC,
            instrument_ranges: default_ranges(),
        }
    }

    pub fn economic() -> Self {
        MechanismSpec {
            kind: MechanismKind::Economic,
            budget_per_farm: DEFAULT_BUDGET_PER_FARM,
            pv_factor: DEFAULT_PV_FACTOR_20Y_5PC,
            instrument_ranges: default_ranges(),
        }
    }

    pub fn from_kind(kind: MechanismKind) -> Self {
        match kind {
            MechanismKind::Behavioral => Self::behavioral(),
            MechanismKind::Economic => Self::economic(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pv_factor <= 0.0 {
            return Err(Error::InvalidInput("pv_factor must be positive".into()));
        }
        for (name, (lo, hi)) in &self.instrument_ranges {
            if lo > hi {
                return Err(Error::InvalidInput(format!(
                    "instrument '{name}' has inverted range [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

/// Instrument values offered by an economic nudge message.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EconomicOffer {
    pub margin_establishment_subsidy: f64,
    pub habitat_establishment_subsidy: f64,
    pub margin_maintenance_subsidy: f64,
    pub habitat_maintenance_subsidy: f64,
    pub habitat_payment_per_ha: f64,
    pub min_habitat_ha: Option<f64>,
    pub min_margin_fraction: Option<f64>,
    pub eco_premium_factor: Option<f64>,
}

/// Assumed uptake for budget checks. Defaults to the midpoints of the
/// illustrative 1-5 ha habitat and 1-3 ha margin adoption ranges.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UptakeScenario {
    pub habitat_ha: f64,
    pub margin_ha: f64,
}

impl Default for UptakeScenario {
    fn default() -> Self {
        UptakeScenario {
            habitat_ha: 3.0,
            margin_ha: 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfferValidation {
    pub pv_cost: f64,
    pub within_budget: bool,
    pub violations: Vec<String>,
}

/// Present-value cost of an offer under an uptake scenario:
/// `margin_ha * (s_me * margin_impl + s_mm * margin_maint * PV) +
///  habitat_ha * (s_he * habitat_impl + s_hm * habitat_maint * PV + P_ha)`.
/// Instrument values outside their ranges are listed as violations rather
/// than rejected.
pub fn validate_economic_offer(
    offer: &EconomicOffer,
    mechanism: &MechanismSpec,
    uptake: UptakeScenario,
    params: &EconomicParams,
) -> Result<OfferValidation> {
    if uptake.habitat_ha < 0.0 || uptake.margin_ha < 0.0 {
        return Err(Error::InvalidInput(
            "uptake scenario quantities must be nonnegative".into(),
        ));
    }
    mechanism.validate()?;
    let pv = mechanism.pv_factor;
    let pv_cost = uptake.margin_ha
        * (offer.margin_establishment_subsidy * params.margin.implementation
            + offer.margin_maintenance_subsidy * params.margin.maintenance * pv)
        + uptake.habitat_ha
            * (offer.habitat_establishment_subsidy * params.habitat.implementation
                + offer.habitat_maintenance_subsidy * params.habitat.maintenance * pv
                + offer.habitat_payment_per_ha);

    let mut violations = Vec::new();
    let mut check = |name: &str, value: Option<f64>| {
        let value = match value {
            Some(v) => v,
            None => return,
        };
        if let Some((lo, hi)) = mechanism.instrument_ranges.get(name) {
            if value > *hi {
                violations.push(format!("{name} exceeds [{lo}, {hi}]"));
            } else if value < *lo {
                violations.push(format!("{name} falls below [{lo}, {hi}]"));
            }
        }
    };
    check("margin_establishment_subsidy", Some(offer.margin_establishment_subsidy));
    check("habitat_establishment_subsidy", Some(offer.habitat_establishment_subsidy));
    check("margin_maintenance_subsidy", Some(offer.margin_maintenance_subsidy));
    check("habitat_maintenance_subsidy", Some(offer.habitat_maintenance_subsidy));
    check("habitat_payment_per_ha", Some(offer.habitat_payment_per_ha));
    check("min_habitat_ha", offer.min_habitat_ha);
    check("min_margin_fraction", offer.min_margin_fraction);
    check("eco_premium_factor", offer.eco_premium_factor);

    Ok(OfferValidation {
        pv_cost,
        within_budget: pv_cost <= mechanism.budget_per_farm,
        violations,
    })
}

/// Result of evaluating one message against one farm.
#[derive(Debug, Clone)]
pub struct NudgeOutcome {
    pub message: Candidate,
    pub nudged_script: Candidate,
    pub actions: Vec<InterventionRecord>,
    pub fitness: FitnessReport,
    pub refused: bool,
}

fn normalize_script(body: &str) -> String {
    body.lines()
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string()
}

#[derive(Debug, Clone)]
pub struct SimDiagnostics {
    pub refused: bool,
    pub note: Option<String>,
}

/// Simulates the farm agent's response to a message: composes the
/// persona-conditioned prompt, extracts the returned script, and falls back
/// to the unchanged baseline (refusal) when extraction fails, the provider
/// errors out, or the script is byte-identical after whitespace
/// normalization.
pub fn simulate_farm_response(
    persona: &Persona,
    baseline_script: &Candidate,
    message: &str,
    gateway: &Gateway,
) -> Result<(Candidate, SimDiagnostics)> {
    persona.validate()?;
    let ctx = PromptContext {
        baseline_code: Some(baseline_script.body.clone()),
        message: Some(message.to_string()),
        persona: Some(persona.name),
        ..PromptContext::default()
    };
    let bundle = compose_prompt(Role::FarmSim, Stage::Nudge, &ctx)?;
    let response = match gateway.complete(&bundle) {
        Ok(r) => r,
        Err(e) => {
            return Ok((
                baseline_script.clone(),
                SimDiagnostics {
                    refused: true,
                    note: Some(format!("provider failure treated as refusal: {e}")),
                },
            ))
        }
    };
    match response.parsed {
        Some(script) if normalize_script(&script) != normalize_script(&baseline_script.body) => {
            let nudged = Candidate::new(
                format!("{}-nudged-{}", baseline_script.id, &bundle.context_digest[..8]),
                CandidateKind::HeuristicScript,
                script,
                baseline_script.generation_born,
            )
            .with_lineage(
                "farm_sim",
                vec![baseline_script.id.clone(), format!("message:{}", &bundle.context_digest[..8])],
            );
            Ok((nudged, SimDiagnostics { refused: false, note: None }))
        }
        Some(_) => Ok((
            baseline_script.clone(),
            SimDiagnostics {
                refused: true,
                note: Some("agent returned the original script".into()),
            },
        )),
        None => Ok((
            baseline_script.clone(),
            SimDiagnostics {
                refused: true,
                note: Some("no code block in agent response".into()),
            },
        )),
    }
}

/// Settings shared by every nudge evaluation in a run.
#[derive(Debug, Clone)]
pub struct NudgeEvalConfig {
    pub epsilon: f64,
    pub max_fix_attempts: u32,
}

impl Default for NudgeEvalConfig {
    fn default() -> Self {
        NudgeEvalConfig {
            epsilon: crate::fitness::DEFAULT_EPSILON,
            max_fix_attempts: 1,
        }
    }
}

/// Full evaluation of one message: simulate the agent, execute the nudged
/// script in the sandbox (with one repair pass on failure), and score the
/// produced amounts against the quantized direction targets.
pub fn evaluate_nudge(
    message: &Candidate,
    farm_input: &Path,
    baseline_script: &Candidate,
    gt_dirs: &BTreeMap<u32, PlotDirections>,
    persona: &Persona,
    gateway: &Gateway,
    sandbox: &Sandbox,
    cfg: &NudgeEvalConfig,
) -> Result<NudgeOutcome> {
    let (nudged, sim) = simulate_farm_response(persona, baseline_script, &message.body, gateway)?;
    let result = sandbox.execute_candidate(&nudged, farm_input, ExecStage::Nudged)?;
    let fixer = GatewayFixer::new(gateway, Stage::Nudge);
    let (nudged, result) = if result.is_ok() {
        (nudged, result)
    } else {
        repair_and_rescore(
            sandbox,
            &nudged,
            result,
            &fixer,
            cfg.max_fix_attempts,
            farm_input,
            ExecStage::Nudged,
        )?
    };

    let (actions, fitness) = if result.is_ok() {
        let output = result.output_records.as_ref().expect("ok implies records");
        let pred = output.intervention_map();
        let report = error_nudge(&pred, gt_dirs, cfg.epsilon)?;
        (output.interventions().unwrap_or_default().to_vec(), report)
    } else {
        let report = FitnessReport::penalty(
            penalty_error(gt_dirs.len()),
            cfg.epsilon,
            format!("nudged script failed: {}", result.trace),
        )?;
        (Vec::new(), report)
    };

    Ok(NudgeOutcome {
        message: message.clone(),
        nudged_script: nudged,
        actions,
        fitness,
        refused: sim.refused,
    })
}

/// Context for one (farm, persona, mechanism) message-evolution cell.
pub struct NudgeSearchContext<'a> {
    pub farm_input: PathBuf,
    /// Raw text of the farm's input file, for behavioral-mechanism data.
    pub farm_input_text: String,
    pub neighbor_exemplars: Vec<(String, String)>,
    pub baseline_script: Candidate,
    /// Connectivity-target heuristic code shown to the policy roles.
    pub target_code: String,
    pub gt_dirs: BTreeMap<u32, PlotDirections>,
    pub persona: Persona,
    pub mechanism: MechanismSpec,
    pub params: EconomicParams,
    pub gateway: &'a Gateway,
    pub sandbox: &'a Sandbox,
    pub engine: EngineConfig,
    pub eval: NudgeEvalConfig,
}

impl NudgeSearchContext<'_> {
    fn prompt_context(&self) -> PromptContext {
        PromptContext {
            farm_input: Some(self.farm_input_text.clone()),
            neighbor_exemplars: self.neighbor_exemplars.clone(),
            params_text: Some(crate::llm::render_params_block(&self.params)),
            persona: Some(self.persona.name),
            mechanism: Some(self.mechanism.kind),
            budget_per_farm: Some(self.mechanism.budget_per_farm),
            pv_factor: Some(self.mechanism.pv_factor),
            baseline_code: Some(self.baseline_script.body.clone()),
            target_code: Some(self.target_code.clone()),
            ..PromptContext::default()
        }
    }
}

struct MessageVariation<'a> {
    ctx: &'a NudgeSearchContext<'a>,
}

impl Variation for MessageVariation<'_> {
    fn generate(&self, slot: usize) -> Result<Option<String>> {
        let prompt = compose_prompt(Role::PolicyGenerator, Stage::Nudge, &self.ctx.prompt_context())?
            .resampled(slot as u32);
        match self.ctx.gateway.complete(&prompt) {
            Ok(response) => Ok(response.parsed),
            Err(_) => Ok(None),
        }
    }

    fn vary(&self, op: OperatorKind, parents: &[&Candidate]) -> Result<Option<String>> {
        let mut ctx = self.ctx.prompt_context();
        ctx.operator = Some(op);
        ctx.parents = parents.iter().map(|p| p.body.clone()).collect();
        if op == OperatorKind::Reflect {
            ctx.leaderboard = parents
                .iter()
                .map(|p| (p.body.clone(), p.fitness().unwrap_or(0.0)))
                .collect();
        }
        let prompt = compose_prompt(Role::PolicyModifier, Stage::Nudge, &ctx)?;
        match self.ctx.gateway.complete(&prompt) {
            Ok(response) => Ok(response.parsed),
            Err(e) => Err(Error::Provider(e)),
        }
    }
}

struct MessageEvaluator<'a> {
    ctx: &'a NudgeSearchContext<'a>,
}

impl FitnessEval for MessageEvaluator<'_> {
    fn evaluate(&self, candidate: &mut Candidate) -> Result<FitnessReport> {
        let outcome = evaluate_nudge(
            candidate,
            &self.ctx.farm_input,
            &self.ctx.baseline_script,
            &self.ctx.gt_dirs,
            &self.ctx.persona,
            self.ctx.gateway,
            self.ctx.sandbox,
            &self.ctx.eval,
        )?;
        candidate.record_fitness(outcome.fitness.clone());
        Ok(outcome.fitness)
    }
}

pub struct NudgeSearchResult {
    pub best: NudgeOutcome,
    pub history: Vec<GenerationStats>,
    pub ledger: OperatorLedger,
    pub persona: PersonaKind,
    pub mechanism: MechanismKind,
}

/// Evolves nudge messages for one (farm, persona, mechanism) cell and
/// returns the best outcome with its tracking series.
pub fn evolve_messages(ctx: &NudgeSearchContext<'_>) -> Result<NudgeSearchResult> {
    let variation = MessageVariation { ctx };
    let evaluator = MessageEvaluator { ctx };
    let mut config = ctx.engine.clone();
    config.kind = CandidateKind::NudgeMessage;
    let mut engine = Engine::new(config, &variation, &evaluator)?;
    let outcome = engine.run(&mut NoopObserver)?;
    let best = outcome.population.best().clone();
    let best_outcome = evaluate_nudge(
        &best,
        &ctx.farm_input,
        &ctx.baseline_script,
        &ctx.gt_dirs,
        &ctx.persona,
        ctx.gateway,
        ctx.sandbox,
        &ctx.eval,
    )?;
    Ok(NudgeSearchResult {
        best: best_outcome,
        history: outcome.history,
        ledger: engine.ledger,
        persona: ctx.persona.name,
        mechanism: ctx.mechanism.kind,
    })
}
