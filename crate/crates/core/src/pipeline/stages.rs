//! Stage orchestration: landscape generation, ground-truth emission, the
//! two script-evolution stages, and the message-evolution stage, all
//! checkpointed under a single run directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::connectivity::{DirectionRecord, PlotDirections};
use crate::error::{Error, Result};
use crate::evolve::{
    export_tracking, Engine, FitnessEval, GenerationStats, OperatorKind, OperatorLedger,
    Population, Variation,
};
use crate::fitness::{error_conn, error_npv, FitnessReport};
use crate::landscape::{
    farm_input_path, generate_landscape, read_intervention_geojson, read_landscape_dir,
    write_intervention_geojson, write_landscape_dir, Farm, InterventionRecord, Landscape,
};
use crate::llm::{
    compose_prompt, CassetteProvider, Gateway, GatewayConfig, GatewayFixer, HttpProvider,
    HttpProviderConfig, PromptContext, Role, RetryPolicy, Stage, SyntheticProvider,
};
use crate::nudge::{
    evolve_messages, MechanismSpec, NudgeEvalConfig, NudgeSearchContext, Persona,
};
use crate::pipeline::config::{ProviderKind, RunConfig};
use crate::pipeline::groundtruth::{
    read_targets, write_targets, BuiltinReference, ExternalCommand, GroundTruthProvider,
};
use crate::pipeline::manifest::RunManifest;
use crate::sandbox::{
    penalty_error, repair_and_rescore, Candidate, CandidateKind, ExecStage, Sandbox,
};

/// Which error metric a stage selects on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Npv,
    Conn,
}

/// Wiring of one script-evolution stage.
#[derive(Debug, Clone, Copy)]
pub struct StageSpec {
    pub number: u32,
    pub llm_stage: Stage,
    pub exec_stage: ExecStage,
    pub metric: MetricKind,
}

/// The fixed stage-to-evaluator mapping: stage 2 scores intervention levels
/// (mean absolute error), stage 3 scores direction sets (Jaccard).
pub fn stage_spec(number: u32) -> Result<StageSpec> {
    match number {
        2 => Ok(StageSpec {
            number: 2,
            llm_stage: Stage::Baseline,
            exec_stage: ExecStage::Baseline,
            metric: MetricKind::Npv,
        }),
        3 => Ok(StageSpec {
            number: 3,
            llm_stage: Stage::Global,
            exec_stage: ExecStage::Global,
            metric: MetricKind::Conn,
        }),
        other => Err(Error::InvalidInput(format!(
            "no script-evolution spec for stage {other}"
        ))),
    }
}

/// Stable per-(stage, farm, cell) seed derivation from the run seed.
pub fn derive_seed(base: u64, tag: &str, farm_id: u32, extra: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(farm_id.to_le_bytes());
    hasher.update(extra.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn build_gateway(config: &RunConfig, run_dir: &Path) -> Result<Gateway> {
    let gateway_config = GatewayConfig {
        retry: RetryPolicy {
            max_attempts: config.provider.max_retries.max(1),
            base_delay: Duration::from_millis(100),
        },
        min_interval: (config.provider.rate_limit_per_sec > 0.0)
            .then(|| Duration::from_secs_f64(1.0 / config.provider.rate_limit_per_sec)),
        audit_log: Some(run_dir.join("audit.jsonl")),
    };
    let provider: Box<dyn crate::llm::Provider> = match config.provider.kind {
        ProviderKind::Synthetic => Box::new(SyntheticProvider),
        ProviderKind::Cassette => {
            let dir = {
                let p = PathBuf::from(&config.provider.cassette_dir);
                if p.is_absolute() {
                    p
                } else {
                    run_dir.join(p)
                }
            };
            if config.provider.record {
                Box::new(CassetteProvider::recording(dir, http_provider(config)?))
            } else {
                Box::new(CassetteProvider::replay(dir))
            }
        }
        ProviderKind::Http => http_provider(config)?,
    };
    Gateway::new(provider, gateway_config)
}

fn http_provider(config: &RunConfig) -> Result<Box<dyn crate::llm::Provider>> {
    let api_key = std::env::var(&config.provider.api_key_env).ok();
    Ok(Box::new(
        HttpProvider::new(HttpProviderConfig {
            endpoint: config.provider.endpoint.clone(),
            model: config.provider.model.clone(),
            api_key,
            temperature: config.provider.temperature,
            timeout: Duration::from_secs_f64(config.provider.request_timeout_secs),
        })
        .map_err(Error::Provider)?,
    ))
}

pub fn ground_truth_provider(config: &RunConfig) -> Result<Box<dyn GroundTruthProvider>> {
    match config.ground_truth.kind {
        crate::pipeline::config::GroundTruthKind::Builtin => Ok(Box::new(BuiltinReference)),
        crate::pipeline::config::GroundTruthKind::Command => Ok(Box::new(
            ExternalCommand::from_command(&config.ground_truth.command)?,
        )),
    }
}

pub fn landscape_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("landscape")
}

pub fn stage_dir(run_dir: &Path, stage: u32) -> PathBuf {
    run_dir.join(format!("stage{stage}"))
}

pub fn farm_dir(run_dir: &Path, stage: u32, farm_id: u32) -> PathBuf {
    stage_dir(run_dir, stage).join(format!("farm_{farm_id}"))
}

fn rel_path(run_dir: &Path, path: &Path) -> String {
    path.strip_prefix(run_dir)
        .unwrap_or(path)
        .to_string_lossy()
        .to_string()
}

/// Generates the landscape, persists it with the config snapshot, and
/// starts the manifest.
pub fn generate_landscape_cmd(config: &RunConfig, run_dir: &Path) -> Result<Landscape> {
    config.validate()?;
    let landscape = generate_landscape(config.seed, &config.landscape.generator_config())?;
    let dir = landscape_dir(run_dir);
    write_landscape_dir(&landscape, &dir)?;
    fs::write(run_dir.join("config.toml"), config.to_toml()?)?;
    fs::write(
        run_dir.join("params.json"),
        serde_json::to_string_pretty(&config.economics)? + "\n",
    )?;

    let mut manifest = RunManifest::load_or_default(run_dir)?;
    manifest.config_snapshot = config.to_toml()?;
    let mut artifacts = vec![
        rel_path(run_dir, &dir.join("landscape.json")),
        "config.toml".to_string(),
        "params.json".to_string(),
    ];
    for farm in &landscape.farms {
        artifacts.push(rel_path(run_dir, &farm_input_path(&dir, farm.id)));
    }
    manifest.complete_stage(run_dir, "landscape", artifacts)?;
    Ok(landscape)
}

fn load_landscape(run_dir: &Path) -> Result<Landscape> {
    let dir = landscape_dir(run_dir);
    if !dir.join("landscape.json").exists() {
        return Err(Error::Precondition(format!(
            "missing artifact {}; run generate-landscape first",
            dir.join("landscape.json").display()
        )));
    }
    read_landscape_dir(&dir)
}

/// Stage 1: the ground-truth provider records per-farm baseline
/// intervention files in the stage-2 ground-truth schema.
pub fn run_stage1(config: &RunConfig, run_dir: &Path) -> Result<()> {
    let landscape = load_landscape(run_dir)?;
    let provider = ground_truth_provider(config)?;
    let mut artifacts = Vec::new();
    for farm in &landscape.farms {
        let records = provider.baseline(&landscape, farm, &config.economics)?;
        let path = farm_dir(run_dir, 1, farm.id).join("output.geojson");
        write_intervention_geojson(farm, &records, &path)?;
        // The emitted file must round-trip through the stage-2 schema.
        read_intervention_geojson(&path)?;
        artifacts.push(rel_path(run_dir, &path));
    }
    let mut manifest = RunManifest::load_or_default(run_dir)?;
    manifest.complete_stage(run_dir, "stage1", artifacts)?;
    Ok(())
}

/// Prompt-driven variation for script stages.
pub struct ScriptVariation<'a> {
    pub gateway: &'a Gateway,
    pub llm_stage: Stage,
    pub base: PromptContext,
}

impl Variation for ScriptVariation<'_> {
    fn generate(&self, slot: usize) -> Result<Option<String>> {
        let bundle = compose_prompt(Role::Generator, self.llm_stage, &self.base)?
            .resampled(slot as u32);
        match self.gateway.complete(&bundle) {
            Ok(response) => Ok(response.parsed),
            Err(_) => Ok(None),
        }
    }

    fn vary(&self, op: OperatorKind, parents: &[&Candidate]) -> Result<Option<String>> {
        let mut ctx = self.base.clone();
        ctx.operator = Some(op);
        ctx.parents = parents.iter().map(|p| p.body.clone()).collect();
        if op == OperatorKind::Reflect {
            ctx.leaderboard = parents
                .iter()
                .map(|p| (p.body.clone(), p.fitness().unwrap_or(0.0)))
                .collect();
        }
        let bundle = compose_prompt(Role::Modifier, self.llm_stage, &ctx)?;
        match self.gateway.complete(&bundle) {
            Ok(response) => Ok(response.parsed),
            Err(e) => Err(Error::Provider(e)),
        }
    }
}

/// Executes candidates in the sandbox, repairs failures through the fixer
/// role, and scores with the stage's metric (penalty fitness when
/// unrepaired).
pub struct ScriptEvaluator<'a> {
    pub sandbox: &'a Sandbox,
    pub gateway: &'a Gateway,
    pub input: PathBuf,
    pub spec: StageSpec,
    pub gt_interventions: BTreeMap<u32, InterventionRecord>,
    pub gt_directions: BTreeMap<u32, PlotDirections>,
    pub epsilon: f64,
    pub max_fix_attempts: u32,
}

impl ScriptEvaluator<'_> {
    pub fn metric(&self) -> MetricKind {
        self.spec.metric
    }

    fn plot_count(&self) -> usize {
        match self.spec.metric {
            MetricKind::Npv => self.gt_interventions.len(),
            MetricKind::Conn => self.gt_directions.len(),
        }
    }

    fn score_output(&self, output: &crate::sandbox::StageOutput) -> Result<FitnessReport> {
        match self.spec.metric {
            MetricKind::Npv => {
                let pred = output.intervention_map();
                error_npv(&pred, &self.gt_interventions, self.epsilon)
            }
            MetricKind::Conn => {
                let records = output.directions().unwrap_or_default();
                let mut pred = BTreeMap::new();
                for record in records {
                    pred.insert(record.plot_id, record.direction_sets()?);
                }
                error_conn(&pred, &self.gt_directions, self.epsilon)
            }
        }
    }
}

impl FitnessEval for ScriptEvaluator<'_> {
    fn evaluate(&self, candidate: &mut Candidate) -> Result<FitnessReport> {
        let result = self
            .sandbox
            .execute_candidate(candidate, &self.input, self.spec.exec_stage)?;
        let (repaired, result) = if result.is_ok() {
            (candidate.clone(), result)
        } else {
            let fixer = GatewayFixer::new(self.gateway, self.spec.llm_stage);
            repair_and_rescore(
                self.sandbox,
                candidate,
                result,
                &fixer,
                self.max_fix_attempts,
                &self.input,
                self.spec.exec_stage,
            )?
        };
        *candidate = repaired;
        let report = if result.is_ok() {
            let output = result.output_records.as_ref().expect("ok implies records");
            match self.score_output(output) {
                Ok(report) => report,
                Err(_) => FitnessReport::penalty(
                    penalty_error(self.plot_count()),
                    self.epsilon,
                    "output records failed validation",
                )?,
            }
        } else {
            FitnessReport::penalty(
                penalty_error(self.plot_count()),
                self.epsilon,
                format!("unrepaired {} failure: {}", status_name(&result), result.trace),
            )?
        };
        candidate.record_fitness(report.clone());
        Ok(report)
    }
}

fn status_name(result: &crate::sandbox::ExecutionResult) -> &'static str {
    match result.status {
        crate::sandbox::ExecStatus::Ok => "ok",
        crate::sandbox::ExecStatus::ParseFailure => "parse",
        crate::sandbox::ExecStatus::RuntimeFailure => "runtime",
        crate::sandbox::ExecStatus::Timeout => "timeout",
        crate::sandbox::ExecStatus::OutputInvalid => "output",
    }
}

#[derive(Serialize, Deserialize)]
struct GenCheckpoint {
    generation: u32,
    rng_word_pos: u128,
    stats: GenerationStats,
    members: Vec<Candidate>,
    elite_ids: Vec<String>,
    ledger: OperatorLedger,
}

fn checkpoint_path(farm_stage_dir: &Path, generation: u32) -> PathBuf {
    farm_stage_dir
        .join(format!("gen_{generation}"))
        .join("scores.json")
}

fn write_checkpoint(
    farm_stage_dir: &Path,
    pop: &Population,
    stats: &GenerationStats,
    rng_word_pos: u128,
    ledger: &OperatorLedger,
) -> Result<()> {
    let gen_dir = farm_stage_dir.join(format!("gen_{}", pop.generation));
    fs::create_dir_all(&gen_dir)?;
    for member in &pop.members {
        fs::write(gen_dir.join(format!("candidate_{}.txt", member.id)), &member.body)?;
    }
    let checkpoint = GenCheckpoint {
        generation: pop.generation,
        rng_word_pos,
        stats: stats.clone(),
        members: pop.members.clone(),
        elite_ids: pop.elite_ids.clone(),
        ledger: ledger.clone(),
    };
    let mut text = serde_json::to_string(&checkpoint)?;
    text.push('\n');
    fs::write(checkpoint_path(farm_stage_dir, pop.generation), text)?;
    Ok(())
}

fn latest_checkpoint(farm_stage_dir: &Path, max_gen: u32) -> Option<u32> {
    (0..=max_gen)
        .rev()
        .find(|g| checkpoint_path(farm_stage_dir, *g).exists())
}

fn load_checkpoint(farm_stage_dir: &Path, generation: u32) -> Result<GenCheckpoint> {
    let text = fs::read_to_string(checkpoint_path(farm_stage_dir, generation))?;
    Ok(serde_json::from_str(&text)?)
}

fn load_history(farm_stage_dir: &Path, upto: u32) -> Result<Vec<GenerationStats>> {
    let mut history = Vec::new();
    for g in 0..=upto {
        if checkpoint_path(farm_stage_dir, g).exists() {
            history.push(load_checkpoint(farm_stage_dir, g)?.stats);
        }
    }
    Ok(history)
}

/// Runs (or resumes) one farm's evolutionary search, checkpointing every
/// generation, and exports tracking plus the best candidate.
fn run_engine_with_checkpoints(
    engine_config: crate::evolve::EngineConfig,
    variation: &dyn Variation,
    evaluator: &dyn FitnessEval,
    farm_stage_dir: &Path,
) -> Result<(Population, Vec<GenerationStats>, OperatorLedger)> {
    fs::create_dir_all(farm_stage_dir)?;
    let generations = engine_config.generations;
    let mut engine = Engine::new(engine_config, variation, evaluator)?;

    let (mut pop, mut history) = match latest_checkpoint(farm_stage_dir, generations) {
        Some(gen) => {
            let checkpoint = load_checkpoint(farm_stage_dir, gen)?;
            engine.ledger = checkpoint.ledger;
            engine.set_rng_word_pos(checkpoint.rng_word_pos);
            let pop = Population {
                generation: checkpoint.generation,
                members: checkpoint.members,
                elite_ids: checkpoint.elite_ids,
            };
            let history = load_history(farm_stage_dir, gen)?;
            (pop, history)
        }
        None => {
            let pop = engine.init_population()?;
            let stats = stats_row(&pop);
            write_checkpoint(farm_stage_dir, &pop, &stats, engine.rng_word_pos(), &engine.ledger)?;
            (pop, vec![stats])
        }
    };

    while pop.generation < generations {
        pop = engine.step_generation(&pop)?;
        let stats = stats_row(&pop);
        write_checkpoint(farm_stage_dir, &pop, &stats, engine.rng_word_pos(), &engine.ledger)?;
        history.push(stats);
    }

    export_tracking(&farm_stage_dir.join("tracking"), &history, &engine.ledger, &pop)?;
    Ok((pop, history, engine.ledger))
}

fn stats_row(pop: &Population) -> GenerationStats {
    let best = pop.best();
    GenerationStats {
        generation: pop.generation,
        best_id: best.id.clone(),
        best_error: best.latest_report().map(|r| r.error).unwrap_or(f64::NAN),
        best_fitness: best.fitness().unwrap_or(0.0),
        mean_fitness: pop
            .members
            .iter()
            .map(|c| c.fitness().unwrap_or(0.0))
            .sum::<f64>()
            / pop.members.len() as f64,
    }
}

#[derive(Serialize, Deserialize)]
struct BestSummary {
    id: String,
    error: f64,
    fitness: f64,
    generation_born: u32,
}

fn export_best(farm_stage_dir: &Path, pop: &Population) -> Result<(PathBuf, PathBuf)> {
    let best = pop.best();
    let script = farm_stage_dir.join("best.py");
    fs::write(&script, &best.body)?;
    let summary = BestSummary {
        id: best.id.clone(),
        error: best.latest_report().map(|r| r.error).unwrap_or(f64::NAN),
        fitness: best.fitness().unwrap_or(0.0),
        generation_born: best.generation_born,
    };
    let json = farm_stage_dir.join("best.json");
    fs::write(&json, serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok((script, json))
}

fn neighbor_farms<'a>(landscape: &'a Landscape, farm: &Farm, limit: usize) -> Vec<&'a Farm> {
    let mut neighbors: Vec<&Farm> = landscape
        .farms
        .iter()
        .filter(|other| {
            other.id != farm.id
                && other
                    .geometry
                    .shared_boundary_length(&farm.geometry, 1e-6)
                    > 1e-6
        })
        .collect();
    neighbors.sort_by_key(|f| f.id);
    neighbors.truncate(limit);
    neighbors
}

fn nonzero_intervention_json(records: &[InterventionRecord]) -> Result<String> {
    let nonzero: Vec<&InterventionRecord> = records
        .iter()
        .filter(|r| r.margin_intervention != 0.0 || r.habitat_conversion != 0.0)
        .collect();
    Ok(serde_json::to_string(&nonzero)?)
}

fn stage1_output_path(run_dir: &Path, farm_id: u32) -> PathBuf {
    farm_dir(run_dir, 1, farm_id).join("output.geojson")
}

fn targets_path(run_dir: &Path, farm_id: u32) -> PathBuf {
    farm_dir(run_dir, 3, farm_id).join("targets.json")
}

fn load_stage1_gt(run_dir: &Path, farm_id: u32) -> Result<BTreeMap<u32, InterventionRecord>> {
    let path = stage1_output_path(run_dir, farm_id);
    if !path.exists() {
        return Err(Error::Precondition(format!(
            "missing artifact {}; run stage 1 first",
            path.display()
        )));
    }
    Ok(read_intervention_geojson(&path)?
        .into_iter()
        .map(|r| (r.plot_id, r))
        .collect())
}

fn direction_map(records: &[DirectionRecord]) -> Result<BTreeMap<u32, PlotDirections>> {
    records
        .iter()
        .map(|r| Ok((r.plot_id, r.direction_sets()?)))
        .collect()
}

/// Stage 2 or 3: evolve per-farm heuristic scripts against the stage's
/// ground truth.
pub fn run_script_stage(config: &RunConfig, run_dir: &Path, stage_number: u32) -> Result<()> {
    let spec = stage_spec(stage_number)?;
    let landscape = load_landscape(run_dir)?;
    let gateway = build_gateway(config, run_dir)?;
    let sandbox = config.sandbox.sandbox();
    let params_text = crate::llm::render_params_block(&config.economics);

    // Stage 3 targets come from the ground-truth provider; emit them for
    // every farm before any evaluation so exemplars can reference them.
    if spec.metric == MetricKind::Conn {
        let provider = ground_truth_provider(config)?;
        for farm in &landscape.farms {
            let path = targets_path(run_dir, farm.id);
            if !path.exists() {
                let targets = provider.global_targets(&landscape, farm, &config.economics)?;
                write_targets(&targets, &path)?;
            }
        }
    }

    let mut artifacts = Vec::new();
    for farm in &landscape.farms {
        let farm_stage_dir = farm_dir(run_dir, stage_number, farm.id);

        let input = farm_input_path(&landscape_dir(run_dir), farm.id);
        let farm_input_text = fs::read_to_string(&input)?;

        let mut exemplars = Vec::new();
        for neighbor in neighbor_farms(&landscape, farm, config.landscape.icl_neighbors) {
            let neighbor_input =
                fs::read_to_string(farm_input_path(&landscape_dir(run_dir), neighbor.id))?;
            let output = match spec.metric {
                MetricKind::Npv => {
                    let gt = load_stage1_gt(run_dir, neighbor.id)?;
                    let records: Vec<InterventionRecord> = gt.values().copied().collect();
                    nonzero_intervention_json(&records)?
                }
                MetricKind::Conn => {
                    let targets = read_targets(&targets_path(run_dir, neighbor.id))?;
                    serde_json::to_string(&targets)?
                }
            };
            exemplars.push((neighbor_input, output));
        }

        let (gt_interventions, gt_directions) = match spec.metric {
            MetricKind::Npv => (load_stage1_gt(run_dir, farm.id)?, BTreeMap::new()),
            MetricKind::Conn => {
                let targets = read_targets(&targets_path(run_dir, farm.id))?;
                (BTreeMap::new(), direction_map(&targets)?)
            }
        };

        let variation = ScriptVariation {
            gateway: &gateway,
            llm_stage: spec.llm_stage,
            base: PromptContext {
                farm_input: Some(farm_input_text),
                neighbor_exemplars: exemplars,
                params_text: Some(params_text.clone()),
                ..PromptContext::default()
            },
        };
        let evaluator = ScriptEvaluator {
            sandbox: &sandbox,
            gateway: &gateway,
            input: input.clone(),
            spec,
            gt_interventions,
            gt_directions,
            epsilon: config.epsilon,
            max_fix_attempts: config.sandbox.max_fix_attempts,
        };

        let engine_config = config
            .ea
            .engine_config(derive_seed(config.seed, &format!("stage{stage_number}"), farm.id, ""));
        let (pop, _history, _ledger) =
            run_engine_with_checkpoints(engine_config, &variation, &evaluator, &farm_stage_dir)?;
        let (script, json) = export_best(&farm_stage_dir, &pop)?;
        artifacts.push(rel_path(run_dir, &script));
        artifacts.push(rel_path(run_dir, &json));
        artifacts.push(rel_path(run_dir, &farm_stage_dir.join("tracking/fitness.csv")));
        if spec.metric == MetricKind::Conn {
            artifacts.push(rel_path(run_dir, &targets_path(run_dir, farm.id)));
        }
    }

    let mut manifest = RunManifest::load_or_default(run_dir)?;
    manifest.refresh_audit(run_dir)?;
    manifest.complete_stage(run_dir, &format!("stage{stage_number}"), artifacts)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct CellOutcome {
    pub farm_id: u32,
    pub persona: String,
    pub mechanism: String,
    pub best_message: String,
    pub best_error: f64,
    pub best_fitness: f64,
    pub refused: bool,
    pub actions: Vec<InterventionRecord>,
}

pub fn cell_dir(run_dir: &Path, farm_id: u32, persona: &str, mechanism: &str) -> PathBuf {
    farm_dir(run_dir, 4, farm_id).join(format!("{persona}_{mechanism}"))
}

/// Stage 4: evolve nudge messages per (farm, persona, mechanism) cell.
pub fn run_stage4(config: &RunConfig, run_dir: &Path) -> Result<()> {
    let landscape = load_landscape(run_dir)?;
    let gateway = build_gateway(config, run_dir)?;
    let sandbox = config.sandbox.sandbox();
    let mut artifacts = Vec::new();
    let mut matrix_rows: Vec<CellOutcome> = Vec::new();

    for farm in &landscape.farms {
        let baseline_path = farm_dir(run_dir, 2, farm.id).join("best.py");
        let target_code_path = farm_dir(run_dir, 3, farm.id).join("best.py");
        for (what, path) in [("stage-2 winner", &baseline_path), ("stage-3 winner", &target_code_path)] {
            if !path.exists() {
                return Err(Error::Precondition(format!(
                    "missing {what} at {}; run the earlier stages first",
                    path.display()
                )));
            }
        }
        let baseline_script = Candidate::new(
            format!("farm{}_baseline", farm.id),
            CandidateKind::HeuristicScript,
            fs::read_to_string(&baseline_path)?,
            0,
        );
        let target_code = fs::read_to_string(&target_code_path)?;
        let gt_dirs = direction_map(&read_targets(&targets_path(run_dir, farm.id))?)?;
        let input = farm_input_path(&landscape_dir(run_dir), farm.id);
        let farm_input_text = fs::read_to_string(&input)?;

        let exemplars: Vec<(String, String)> = neighbor_farms(&landscape, farm, config.landscape.icl_neighbors)
            .iter()
            .map(|neighbor| -> Result<(String, String)> {
                let neighbor_input =
                    fs::read_to_string(farm_input_path(&landscape_dir(run_dir), neighbor.id))?;
                let targets = read_targets(&targets_path(run_dir, neighbor.id))?;
                Ok((neighbor_input, serde_json::to_string(&targets)?))
            })
            .collect::<Result<_>>()?;

        for persona_kind in &config.nudge.personas {
            for mechanism_kind in &config.nudge.mechanisms {
                let cell = cell_dir(
                    run_dir,
                    farm.id,
                    persona_kind.as_str(),
                    mechanism_kind.as_str(),
                );
                let outcome_path = cell.join("outcomes.json");
                if !outcome_path.exists() {
                    let mut mechanism = MechanismSpec::from_kind(*mechanism_kind);
                    mechanism.budget_per_farm = config.nudge.budget_per_farm;
                    mechanism.pv_factor = config.nudge.pv_factor;
                    let ctx = NudgeSearchContext {
                        farm_input: input.clone(),
                        farm_input_text: farm_input_text.clone(),
                        neighbor_exemplars: exemplars.clone(),
                        baseline_script: baseline_script.clone(),
                        target_code: target_code.clone(),
                        gt_dirs: gt_dirs.clone(),
                        persona: Persona::from_kind(*persona_kind),
                        mechanism,
                        params: config.economics.clone(),
                        gateway: &gateway,
                        sandbox: &sandbox,
                        engine: config.ea.engine_config(derive_seed(
                            config.seed,
                            "stage4",
                            farm.id,
                            &format!("{}_{}", persona_kind.as_str(), mechanism_kind.as_str()),
                        )),
                        eval: NudgeEvalConfig {
                            epsilon: config.epsilon,
                            max_fix_attempts: config.sandbox.max_fix_attempts,
                        },
                    };
                    let result = evolve_messages(&ctx)?;

                    let messages_dir = cell.join("messages");
                    fs::create_dir_all(&messages_dir)?;
                    fs::write(
                        messages_dir.join(format!("msg_{}.txt", result.best.message.id)),
                        &result.best.message.body,
                    )?;
                    let scripts_dir = cell.join("nudged_scripts");
                    fs::create_dir_all(&scripts_dir)?;
                    fs::write(scripts_dir.join("best.py"), &result.best.nudged_script.body)?;
                    export_tracking(
                        &cell.join("tracking"),
                        &result.history,
                        &result.ledger,
                        &Population {
                            generation: result.history.last().map(|s| s.generation).unwrap_or(0),
                            members: vec![result.best.message.clone()],
                            elite_ids: vec![],
                        },
                    )?;
                    let outcome = CellOutcome {
                        farm_id: farm.id,
                        persona: persona_kind.as_str().to_string(),
                        mechanism: mechanism_kind.as_str().to_string(),
                        best_message: result.best.message.body.clone(),
                        best_error: result.best.fitness.error,
                        best_fitness: result.best.fitness.fitness,
                        refused: result.best.refused,
                        actions: result.best.actions.clone(),
                    };
                    fs::write(&outcome_path, serde_json::to_string_pretty(&outcome)? + "\n")?;
                }
                let outcome: CellOutcome =
                    serde_json::from_str(&fs::read_to_string(&outcome_path)?)?;
                matrix_rows.push(outcome);
                artifacts.push(rel_path(run_dir, &outcome_path));
            }
        }
    }

    // Persona-by-mechanism matrix for reporting.
    let matrix_path = stage_dir(run_dir, 4).join("persona_mechanism.csv");
    fs::create_dir_all(stage_dir(run_dir, 4))?;
    let mut writer = csv::Writer::from_path(&matrix_path)?;
    writer.write_record(["farm", "persona", "mechanism", "label", "best_error", "best_fitness", "best_accuracy", "refused"])?;
    for row in &matrix_rows {
        writer.write_record([
            row.farm_id.to_string(),
            row.persona.clone(),
            row.mechanism.clone(),
            format!("(P:{}, N:{})", row.persona, row.mechanism),
            row.best_error.to_string(),
            row.best_fitness.to_string(),
            (1.0 - row.best_error).to_string(),
            row.refused.to_string(),
        ])?;
    }
    writer.flush()?;
    artifacts.push(rel_path(run_dir, &matrix_path));

    let mut manifest = RunManifest::load_or_default(run_dir)?;
    manifest.refresh_audit(run_dir)?;
    manifest.complete_stage(run_dir, "stage4", artifacts)?;
    Ok(())
}

/// Runs every stage in order, resuming from whatever already completed.
pub fn run_all(config: &RunConfig, run_dir: &Path) -> Result<()> {
    let manifest = RunManifest::load_or_default(run_dir)?;
    if !manifest.stage_complete("landscape") {
        generate_landscape_cmd(config, run_dir)?;
    }
    let manifest = RunManifest::load_or_default(run_dir)?;
    if !manifest.stage_complete("stage1") {
        run_stage1(config, run_dir)?;
    }
    run_script_stage(config, run_dir, 2)?;
    run_script_stage(config, run_dir, 3)?;
    run_stage4(config, run_dir)?;
    Ok(())
}

pub fn run_stage(config: &RunConfig, run_dir: &Path, stage: u32) -> Result<()> {
    match stage {
        1 => run_stage1(config, run_dir),
        2 | 3 => run_script_stage(config, run_dir, stage),
        4 => run_stage4(config, run_dir),
        other => Err(Error::InvalidInput(format!(
            "unknown stage {other}; expected 1, 2, 3 or 4"
        ))),
    }
}
