//! Generic evolutionary engine over candidates: initialization, the five
//! variation operators, elitism plus score-proportional selection, and full
//! lineage/operator-delta tracking. The engine is agnostic to candidate
//! kind; scripts and messages run through the same machinery.

use std::collections::BTreeMap;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitness::FitnessReport;
use crate::sandbox::{Candidate, CandidateKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperatorKind {
    Mutate,
    Crossover,
    ExploreDiverge,
    ExploreConverge,
    Reflect,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 5] = [
        OperatorKind::Mutate,
        OperatorKind::Crossover,
        OperatorKind::ExploreDiverge,
        OperatorKind::ExploreConverge,
        OperatorKind::Reflect,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OperatorKind::Mutate => "mutate",
            OperatorKind::Crossover => "crossover",
            OperatorKind::ExploreDiverge => "explore_diverge",
            OperatorKind::ExploreConverge => "explore_converge",
            OperatorKind::Reflect => "reflect",
        }
    }

    /// Number of parents the operator consumes (reflect takes the top 5).
    pub fn arity(&self) -> usize {
        match self {
            OperatorKind::Mutate => 1,
            OperatorKind::Crossover | OperatorKind::ExploreDiverge | OperatorKind::ExploreConverge => 2,
            OperatorKind::Reflect => 5,
        }
    }
}

/// Operator weights; reflect can additionally be capped at one application
/// per generation (excess draws fall back to mutate).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorSchedule {
    pub weights: Vec<(OperatorKind, f64)>,
    pub reflect_once_per_generation: bool,
}

impl Default for OperatorSchedule {
    fn default() -> Self {
        OperatorSchedule {
            weights: OperatorKind::ALL.iter().map(|op| (*op, 1.0)).collect(),
            reflect_once_per_generation: true,
        }
    }
}

impl OperatorSchedule {
    pub fn single(op: OperatorKind) -> Self {
        OperatorSchedule {
            weights: vec![(op, 1.0)],
            reflect_once_per_generation: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::Config("operator schedule must not be empty".into()));
        }
        let total: f64 = self.weights.iter().map(|(_, w)| w).sum();
        if self.weights.iter().any(|(_, w)| *w < 0.0) || total <= 0.0 {
            return Err(Error::Config(
                "operator weights must be nonnegative with positive sum".into(),
            ));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng, reflect_used: bool) -> OperatorKind {
        let total: f64 = self.weights.iter().map(|(_, w)| w).sum();
        let mut draw = rng.gen::<f64>() * total;
        let mut picked = self.weights[0].0;
        for (op, w) in &self.weights {
            if draw < *w {
                picked = *op;
                break;
            }
            draw -= w;
        }
        if picked == OperatorKind::Reflect && self.reflect_once_per_generation && reflect_used {
            OperatorKind::Mutate
        } else {
            picked
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Population size K; constant at every generation boundary.
    pub population_size: usize,
    pub generations: u32,
    pub elitism_k: usize,
    /// Offspring produced per generation; member j is the primary parent of
    /// offspring j mod K, so every member gets variation pressure.
    pub offspring_per_generation: usize,
    pub schedule: OperatorSchedule,
    pub seed: u64,
    pub kind: CandidateKind,
    /// Per-slot retry budget while seeding the initial population.
    pub init_retries: u32,
    /// Worker threads for offspring evaluation (1 = sequential).
    pub workers: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            population_size: 25,
            generations: 25,
            elitism_k: 2,
            offspring_per_generation: 25,
            schedule: OperatorSchedule::default(),
            seed: 0,
            kind: CandidateKind::HeuristicScript,
            init_retries: 3,
            workers: 1,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Config("population_size must be at least 2".into()));
        }
        if self.elitism_k >= self.population_size {
            return Err(Error::Config(
                "elitism_k must be smaller than population_size".into(),
            ));
        }
        if self.offspring_per_generation == 0 {
            return Err(Error::Config("offspring_per_generation must be positive".into()));
        }
        self.schedule.validate()
    }
}

/// Produces candidate bodies. `Ok(None)` signals an unusable response
/// (extraction failure / provider refusal); the engine skips or retries.
pub trait Variation: Sync {
    fn generate(&self, slot: usize) -> Result<Option<String>>;
    fn vary(&self, op: OperatorKind, parents: &[&Candidate]) -> Result<Option<String>>;
}

/// Scores a candidate, recording the report into its fitness history. The
/// evaluator may rewrite the candidate (repair path).
pub trait FitnessEval: Sync {
    fn evaluate(&self, candidate: &mut Candidate) -> Result<FitnessReport>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Population {
    pub generation: u32,
    pub members: Vec<Candidate>,
    /// Best-first elite ids from the last selection.
    pub elite_ids: Vec<String>,
}

impl Population {
    pub fn best(&self) -> &Candidate {
        self.members
            .iter()
            .max_by(|a, b| cmp_fitness(a, b))
            .expect("population is never empty")
    }

    fn sorted_desc(&self) -> Vec<&Candidate> {
        let mut v: Vec<&Candidate> = self.members.iter().collect();
        v.sort_by(|a, b| cmp_fitness(b, a));
        v
    }
}

fn cmp_fitness(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    let fa = a.fitness().unwrap_or(0.0);
    let fb = b.fitness().unwrap_or(0.0);
    fa.partial_cmp(&fb)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then_with(|| b.id.cmp(&a.id))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OpStats {
    pub applications: u64,
    pub cumulative_fitness_delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChildRecord {
    pub operator: String,
    pub parent_ids: Vec<String>,
    /// The parent whose fitness is the delta baseline (best parent).
    pub baseline_parent: String,
    pub baseline_fitness: f64,
    pub fitness: f64,
    pub delta: f64,
    pub generation: u32,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OperatorLedger {
    pub per_operator: BTreeMap<String, OpStats>,
    pub children: BTreeMap<String, ChildRecord>,
    /// Generation-0 member fitness by id.
    pub founders: BTreeMap<String, f64>,
    /// Generations whose offspring were all invalid.
    pub stagnation_events: Vec<u32>,
    /// Operator applications whose response was unusable.
    pub skipped: BTreeMap<String, u64>,
}

impl OperatorLedger {
    /// Operator sequence reaching `id` from its founder by following
    /// best-parent links; deltas telescope to (fitness(id) - founder
    /// fitness).
    pub fn best_trajectory(&self, id: &str) -> Vec<(String, String, f64)> {
        let mut chain = Vec::new();
        let mut cursor = id.to_string();
        while let Some(rec) = self.children.get(&cursor) {
            chain.push((cursor.clone(), rec.operator.clone(), rec.delta));
            cursor = rec.baseline_parent.clone();
        }
        chain.reverse();
        chain
    }

    pub fn founder_of(&self, id: &str) -> String {
        let mut cursor = id.to_string();
        while let Some(rec) = self.children.get(&cursor) {
            cursor = rec.baseline_parent.clone();
        }
        cursor
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: u32,
    pub best_id: String,
    pub best_error: f64,
    pub best_fitness: f64,
    pub mean_fitness: f64,
}

fn stats_of(pop: &Population) -> GenerationStats {
    let best = pop.best();
    let mean = pop
        .members
        .iter()
        .map(|c| c.fitness().unwrap_or(0.0))
        .sum::<f64>()
        / pop.members.len() as f64;
    GenerationStats {
        generation: pop.generation,
        best_id: best.id.clone(),
        best_error: best.latest_report().map(|r| r.error).unwrap_or(f64::NAN),
        best_fitness: best.fitness().unwrap_or(0.0),
        mean_fitness: mean,
    }
}

/// Called at every generation boundary; used for checkpointing.
pub trait RunObserver {
    fn on_generation(&mut self, population: &Population, stats: &GenerationStats) -> Result<()>;
}

pub struct NoopObserver;

impl RunObserver for NoopObserver {
    fn on_generation(&mut self, _: &Population, _: &GenerationStats) -> Result<()> {
        Ok(())
    }
}

pub struct RunOutcome {
    pub population: Population,
    pub history: Vec<GenerationStats>,
}

pub struct Engine<'a> {
    pub config: EngineConfig,
    variation: &'a dyn Variation,
    evaluator: &'a dyn FitnessEval,
    rng: ChaCha8Rng,
    pub ledger: OperatorLedger,
}

impl<'a> Engine<'a> {
    pub fn new(
        config: EngineConfig,
        variation: &'a dyn Variation,
        evaluator: &'a dyn FitnessEval,
    ) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Engine {
            config,
            variation,
            evaluator,
            rng,
            ledger: OperatorLedger::default(),
        })
    }

    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_rng_word_pos(&mut self, pos: u128) {
        self.rng.set_word_pos(pos);
    }

    /// Seeds generation 0 from the generator role and scores every member.
    pub fn init_population(&mut self) -> Result<Population> {
        let k = self.config.population_size;
        let mut members = Vec::with_capacity(k);
        for slot in 0..k {
            let mut body = None;
            for _ in 0..=self.config.init_retries {
                if let Some(b) = self.variation.generate(slot)? {
                    body = Some(b);
                    break;
                }
            }
            let body = body.ok_or_else(|| {
                Error::Engine(format!(
                    "seeding failed: no valid generator response for slot {slot} after {} retries",
                    self.config.init_retries
                ))
            })?;
            let mut candidate = Candidate::new(format!("g0_c{slot}"), self.config.kind, body, 0);
            let report = self.evaluator.evaluate(&mut candidate)?;
            if candidate.latest_report().is_none() {
                candidate.record_fitness(report);
            }
            self.ledger
                .founders
                .insert(candidate.id.clone(), candidate.fitness().unwrap_or(0.0));
            members.push(candidate);
        }
        Ok(Population {
            generation: 0,
            members,
            elite_ids: Vec::new(),
        })
    }

    /// One generation: produce offspring per the schedule, pool them with
    /// the parents, keep the elites unconditionally and fill the rest by
    /// fitness-proportional selection without replacement.
    pub fn step_generation(&mut self, pop: &Population) -> Result<Population> {
        let k = self.config.population_size;
        let next_gen = pop.generation + 1;
        let ranked = pop.sorted_desc();

        // Offspring plans are drawn up-front so the RNG stream does not
        // depend on evaluation timing.
        struct Plan {
            op: OperatorKind,
            parent_idx: Vec<usize>,
        }
        let mut plans: Vec<Plan> = Vec::with_capacity(self.config.offspring_per_generation);
        let mut reflect_used = false;
        for j in 0..self.config.offspring_per_generation {
            let op = self.config.schedule.sample(&mut self.rng, reflect_used);
            if op == OperatorKind::Reflect {
                reflect_used = true;
            }
            let primary = j % pop.members.len();
            let parent_idx = match op {
                OperatorKind::Mutate => vec![primary],
                OperatorKind::Crossover
                | OperatorKind::ExploreDiverge
                | OperatorKind::ExploreConverge => {
                    let mut partner = self.rng.gen_range(0..pop.members.len());
                    if pop.members.len() > 1 {
                        while partner == primary {
                            partner = self.rng.gen_range(0..pop.members.len());
                        }
                    }
                    vec![primary, partner]
                }
                OperatorKind::Reflect => ranked
                    .iter()
                    .take(5)
                    .map(|c| pop.members.iter().position(|m| m.id == c.id).unwrap())
                    .collect(),
            };
            plans.push(Plan { op, parent_idx });
        }

        let mut produced: Vec<(usize, Option<Candidate>)> = Vec::new();
        for (j, plan) in plans.iter().enumerate() {
            let parents: Vec<&Candidate> =
                plan.parent_idx.iter().map(|i| &pop.members[*i]).collect();
            let body = match self.variation.vary(plan.op, &parents) {
                Ok(Some(body)) => body,
                Ok(None) => {
                    *self
                        .ledger
                        .skipped
                        .entry(plan.op.name().to_string())
                        .or_default() += 1;
                    produced.push((j, None));
                    continue;
                }
                Err(Error::Provider(_)) => {
                    *self
                        .ledger
                        .skipped
                        .entry(plan.op.name().to_string())
                        .or_default() += 1;
                    produced.push((j, None));
                    continue;
                }
                Err(e) => return Err(e),
            };
            let child = Candidate::new(format!("g{next_gen}_c{j}"), self.config.kind, body, next_gen)
                .with_lineage(plan.op.name(), parents.iter().map(|p| p.id.clone()).collect());
            produced.push((j, Some(child)));
        }

        // Evaluate offspring (optionally across a scoped worker pool);
        // results are keyed by index so ordering stays deterministic.
        let pending: Vec<(usize, Candidate)> = produced
            .into_iter()
            .filter_map(|(j, c)| c.map(|c| (j, c)))
            .collect();
        let workers = self.config.workers.max(1);
        let mut evaluated: Vec<(usize, Candidate)> = Vec::new();
        if workers <= 1 || pending.len() <= 1 {
            for (j, mut child) in pending {
                let report = self.evaluator.evaluate(&mut child)?;
                if child.latest_report().is_none() {
                    child.record_fitness(report);
                }
                evaluated.push((j, child));
            }
        } else {
            let evaluator = self.evaluator;
            let chunk_size = (pending.len() + workers - 1) / workers;
            let results: Vec<Result<(usize, Candidate)>> = std::thread::scope(|scope| {
                let mut handles = Vec::new();
                for chunk in pending.chunks(chunk_size) {
                    let chunk: Vec<(usize, Candidate)> = chunk.to_vec();
                    handles.push(scope.spawn(move || {
                        let mut out: Vec<Result<(usize, Candidate)>> = Vec::new();
                        for (j, mut child) in chunk {
                            match evaluator.evaluate(&mut child) {
                                Ok(report) => {
                                    if child.latest_report().is_none() {
                                        child.record_fitness(report);
                                    }
                                    out.push(Ok((j, child)));
                                }
                                Err(e) => out.push(Err(e)),
                            }
                        }
                        out
                    }));
                }
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("evaluation worker panicked"))
                    .collect()
            });
            for r in results {
                evaluated.push(r?);
            }
            evaluated.sort_by_key(|(j, _)| *j);
        }

        let mut offspring: Vec<Candidate> = Vec::new();
        for (j, child) in evaluated {
            let plan = &plans[j];
            let parents: Vec<&Candidate> =
                plan.parent_idx.iter().map(|i| &pop.members[*i]).collect();
            let baseline = parents
                .iter()
                .max_by(|a, b| cmp_fitness(a, b))
                .expect("operators have at least one parent");
            let delta = child.fitness().unwrap_or(0.0) - baseline.fitness().unwrap_or(0.0);
            let stats = self
                .ledger
                .per_operator
                .entry(plan.op.name().to_string())
                .or_default();
            stats.applications += 1;
            stats.cumulative_fitness_delta += delta;
            self.ledger.children.insert(
                child.id.clone(),
                ChildRecord {
                    operator: plan.op.name().to_string(),
                    parent_ids: parents.iter().map(|p| p.id.clone()).collect(),
                    baseline_parent: baseline.id.clone(),
                    baseline_fitness: baseline.fitness().unwrap_or(0.0),
                    fitness: child.fitness().unwrap_or(0.0),
                    delta,
                    generation: next_gen,
                },
            );
            offspring.push(child);
        }

        if offspring.is_empty() {
            self.ledger.stagnation_events.push(next_gen);
            return Ok(Population {
                generation: next_gen,
                members: pop.members.clone(),
                elite_ids: pop.elite_ids.clone(),
            });
        }

        let mut pool: Vec<Candidate> = pop.members.clone();
        pool.extend(offspring);
        pool.sort_by(|a, b| cmp_fitness(b, a));

        let mut members: Vec<Candidate> = pool.drain(..self.config.elitism_k).collect();
        let elite_ids: Vec<String> = members.iter().map(|c| c.id.clone()).collect();
        let need = k - members.len();
        members.extend(weighted_sample_without_replacement(&mut self.rng, pool, need));

        members.sort_by(|a, b| cmp_fitness(b, a));
        Ok(Population {
            generation: next_gen,
            members,
            elite_ids,
        })
    }

    /// Runs init plus `generations` steps, reporting each boundary to the
    /// observer.
    pub fn run(&mut self, observer: &mut dyn RunObserver) -> Result<RunOutcome> {
        let pop = self.init_population()?;
        let stats = stats_of(&pop);
        observer.on_generation(&pop, &stats)?;
        self.run_from(pop, vec![stats], observer)
    }

    /// Continues from a checkpointed population until the configured
    /// generation count is reached.
    pub fn run_from(
        &mut self,
        mut pop: Population,
        mut history: Vec<GenerationStats>,
        observer: &mut dyn RunObserver,
    ) -> Result<RunOutcome> {
        while pop.generation < self.config.generations {
            pop = self.step_generation(&pop)?;
            let stats = stats_of(&pop);
            observer.on_generation(&pop, &stats)?;
            history.push(stats);
        }
        Ok(RunOutcome {
            population: pop,
            history,
        })
    }
}

fn weighted_sample_without_replacement(
    rng: &mut ChaCha8Rng,
    mut pool: Vec<Candidate>,
    count: usize,
) -> Vec<Candidate> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count.min(pool.len()) {
        let total: f64 = pool.iter().map(|c| c.fitness().unwrap_or(0.0).max(0.0)).sum();
        let idx = if total <= 0.0 {
            rng.gen_range(0..pool.len())
        } else {
            let mut draw = rng.gen::<f64>() * total;
            let mut chosen = pool.len() - 1;
            for (i, c) in pool.iter().enumerate() {
                let w = c.fitness().unwrap_or(0.0).max(0.0);
                if draw < w {
                    chosen = i;
                    break;
                }
                draw -= w;
            }
            chosen
        };
        out.push(pool.swap_remove(idx));
    }
    out
}

/// Tracking artifacts sufficient to re-plot fitness curves, operator
/// contributions, the best trajectory and complexity-vs-fitness tables.
pub fn export_tracking(
    dir: &Path,
    history: &[GenerationStats],
    ledger: &OperatorLedger,
    population: &Population,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut fitness = csv::Writer::from_path(dir.join("fitness.csv"))?;
    fitness.write_record(["generation", "best_error", "best_fitness", "mean_fitness", "best_accuracy"])?;
    for s in history {
        fitness.write_record([
            s.generation.to_string(),
            s.best_error.to_string(),
            s.best_fitness.to_string(),
            s.mean_fitness.to_string(),
            (1.0 - s.best_error).to_string(),
        ])?;
    }
    fitness.flush()?;

    let mut operators = csv::Writer::from_path(dir.join("operators.csv"))?;
    operators.write_record(["operator", "applications", "cumulative_fitness_delta"])?;
    for (name, stats) in &ledger.per_operator {
        operators.write_record([
            name.clone(),
            stats.applications.to_string(),
            stats.cumulative_fitness_delta.to_string(),
        ])?;
    }
    operators.flush()?;

    let best = population.best();
    let mut trajectory = csv::Writer::from_path(dir.join("trajectory.csv"))?;
    trajectory.write_record(["step", "candidate_id", "operator", "delta"])?;
    for (step, (id, op, delta)) in ledger.best_trajectory(&best.id).iter().enumerate() {
        trajectory.write_record([step.to_string(), id.clone(), op.clone(), delta.to_string()])?;
    }
    trajectory.flush()?;

    let mut complexity = csv::Writer::from_path(dir.join("complexity.csv"))?;
    complexity.write_record([
        "candidate_id",
        "generation",
        "error",
        "fitness",
        "accuracy",
        "lloc",
        "cyclomatic",
        "halstead_n1",
        "halstead_n2",
        "difficulty",
        "volume",
        "maintainability_index",
    ])?;
    for member in &population.members {
        if let (Some(metrics), Some(report)) = (member.complexity, member.latest_report()) {
            complexity.write_record([
                member.id.clone(),
                member.generation_born.to_string(),
                report.error.to_string(),
                report.fitness.to_string(),
                (1.0 - report.error).to_string(),
                metrics.lloc.to_string(),
                metrics.cyclomatic.to_string(),
                metrics.halstead_n1.to_string(),
                metrics.halstead_n2.to_string(),
                metrics.difficulty.to_string(),
                metrics.volume.to_string(),
                metrics.maintainability_index.to_string(),
            ])?;
        }
    }
    complexity.flush()?;

    let ledger_json = serde_json::to_string_pretty(ledger)?;
    std::fs::write(dir.join("ledger.json"), ledger_json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitness::{fitness_of, Diagnostics, FitnessReport};
    use std::sync::atomic::{AtomicU64, Ordering};

    /// Candidate bodies are "error=<x>"; mutation halves x, other operators
    /// carry the better parent's value forward.
    struct NumericVariation {
        initial: f64,
    }

    fn body_error(body: &str) -> f64 {
        body.trim()
            .strip_prefix("error=")
            .and_then(|v| v.parse().ok())
            .unwrap_or(f64::MAX)
    }

    impl Variation for NumericVariation {
        fn generate(&self, slot: usize) -> Result<Option<String>> {
            Ok(Some(format!("error={}", self.initial * (1.0 + slot as f64))))
        }

        fn vary(&self, op: OperatorKind, parents: &[&Candidate]) -> Result<Option<String>> {
            let best = parents
                .iter()
                .map(|p| body_error(&p.body))
                .fold(f64::INFINITY, f64::min);
            let value = match op {
                OperatorKind::Mutate => best / 2.0,
                _ => best,
            };
            Ok(Some(format!("error={value}")))
        }
    }

    struct NumericEval;

    impl FitnessEval for NumericEval {
        fn evaluate(&self, candidate: &mut Candidate) -> Result<FitnessReport> {
            let error = body_error(&candidate.body);
            let report = FitnessReport {
                error,
                fitness: fitness_of(error, 1e-6)?,
                per_plot: vec![],
                diagnostics: Diagnostics::default(),
            };
            candidate.record_fitness(report.clone());
            Ok(report)
        }
    }

    fn engine_config(kind: CandidateKind, k: usize, gens: u32) -> EngineConfig {
        EngineConfig {
            population_size: k,
            generations: gens,
            elitism_k: 1,
            offspring_per_generation: k,
            schedule: OperatorSchedule::single(OperatorKind::Mutate),
            seed: 42,
            kind,
            ..EngineConfig::default()
        }
    }

    #[test]
    fn halve_error_mock_gives_exact_closed_form() {
        let variation = NumericVariation { initial: 0.8 };
        for g in 1..=10u32 {
            let mut engine = Engine::new(
                engine_config(CandidateKind::NudgeMessage, 4, g),
                &variation,
                &NumericEval,
            )
            .unwrap();
            let outcome = engine.run(&mut NoopObserver).unwrap();
            let best_error = outcome.population.best().latest_report().unwrap().error;
            let expected = 0.8 * 0.5f64.powi(g as i32);
            assert_eq!(best_error, expected, "generation {g}");
        }
    }

    #[test]
    fn elitism_keeps_best_fitness_monotone() {
        for seed in 0..20 {
            let variation = NumericVariation { initial: 1.0 };
            let cfg = EngineConfig {
                population_size: 6,
                generations: 25,
                elitism_k: 1,
                offspring_per_generation: 6,
                schedule: OperatorSchedule::default(),
                seed,
                kind: CandidateKind::NudgeMessage,
                ..EngineConfig::default()
            };
            let mut engine = Engine::new(cfg, &variation, &NumericEval).unwrap();
            let outcome = engine.run(&mut NoopObserver).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for s in &outcome.history {
                assert!(
                    s.best_fitness >= prev,
                    "seed {seed}: fitness dropped from {prev} to {}",
                    s.best_fitness
                );
                prev = s.best_fitness;
            }
            assert_eq!(outcome.population.members.len(), 6);
        }
    }

    #[test]
    fn population_size_constant_every_generation() {
        struct SizeCheck {
            expected: usize,
        }
        impl RunObserver for SizeCheck {
            fn on_generation(&mut self, pop: &Population, _: &GenerationStats) -> Result<()> {
                assert_eq!(pop.members.len(), self.expected);
                Ok(())
            }
        }
        let variation = NumericVariation { initial: 1.0 };
        let mut engine = Engine::new(
            engine_config(CandidateKind::NudgeMessage, 5, 8),
            &variation,
            &NumericEval,
        )
        .unwrap();
        engine.run(&mut SizeCheck { expected: 5 }).unwrap();
    }

    #[test]
    fn mutate_only_schedule_stamps_lineage() {
        let variation = NumericVariation { initial: 1.0 };
        let mut engine = Engine::new(
            engine_config(CandidateKind::NudgeMessage, 4, 3),
            &variation,
            &NumericEval,
        )
        .unwrap();
        let outcome = engine.run(&mut NoopObserver).unwrap();
        for member in &outcome.population.members {
            for entry in &member.lineage {
                assert_eq!(entry.operator, "mutate");
                assert_eq!(entry.parents.len(), 1);
            }
        }
    }

    #[test]
    fn reflect_receives_top_five_in_score_order() {
        struct ReflectProbe {
            calls: AtomicU64,
        }
        impl Variation for ReflectProbe {
            fn generate(&self, slot: usize) -> Result<Option<String>> {
                Ok(Some(format!("error={}", 0.1 * (slot + 1) as f64)))
            }
            fn vary(&self, op: OperatorKind, parents: &[&Candidate]) -> Result<Option<String>> {
                assert_eq!(op, OperatorKind::Reflect);
                assert_eq!(parents.len(), 5);
                let errors: Vec<f64> = parents.iter().map(|p| body_error(&p.body)).collect();
                for pair in errors.windows(2) {
                    assert!(pair[0] <= pair[1], "not in score order: {errors:?}");
                }
                self.calls.fetch_add(1, Ordering::SeqCst);
                Ok(Some("error=0.05".to_string()))
            }
        }
        let variation = ReflectProbe {
            calls: AtomicU64::new(0),
        };
        let mut cfg = engine_config(CandidateKind::NudgeMessage, 6, 1);
        cfg.schedule = OperatorSchedule {
            weights: vec![(OperatorKind::Reflect, 1.0)],
            reflect_once_per_generation: false,
        };
        let mut engine = Engine::new(cfg, &variation, &NumericEval).unwrap();
        engine.run(&mut NoopObserver).unwrap();
        assert!(variation.calls.load(Ordering::SeqCst) > 0);
    }

    #[test]
    fn reflect_gate_limits_to_one_per_generation() {
        struct CountReflect {
            reflects: AtomicU64,
        }
        impl Variation for CountReflect {
            fn generate(&self, slot: usize) -> Result<Option<String>> {
                Ok(Some(format!("error={}", slot as f64 + 1.0)))
            }
            fn vary(&self, op: OperatorKind, parents: &[&Candidate]) -> Result<Option<String>> {
                if op == OperatorKind::Reflect {
                    self.reflects.fetch_add(1, Ordering::SeqCst);
                }
                Ok(Some(parents[0].body.clone()))
            }
        }
        let variation = CountReflect {
            reflects: AtomicU64::new(0),
        };
        let mut cfg = engine_config(CandidateKind::NudgeMessage, 8, 4);
        cfg.schedule = OperatorSchedule {
            weights: vec![(OperatorKind::Reflect, 1.0)],
            reflect_once_per_generation: true,
        };
        let mut engine = Engine::new(cfg, &variation, &NumericEval).unwrap();
        engine.run(&mut NoopObserver).unwrap();
        assert_eq!(variation.reflects.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn crossover_lineage_names_both_parents() {
        let variation = NumericVariation { initial: 1.0 };
        let mut cfg = engine_config(CandidateKind::NudgeMessage, 4, 1);
        cfg.schedule = OperatorSchedule::single(OperatorKind::Crossover);
        let mut engine = Engine::new(cfg, &variation, &NumericEval).unwrap();
        let pop = engine.init_population().unwrap();
        let next = engine.step_generation(&pop).unwrap();
        let child = next
            .members
            .iter()
            .find(|c| !c.lineage.is_empty())
            .expect("some offspring survive selection");
        let entry = child.lineage.last().unwrap();
        assert_eq!(entry.operator, "crossover");
        assert_eq!(entry.parents.len(), 2);
        assert_ne!(entry.parents[0], entry.parents[1]);
    }

    #[test]
    fn all_invalid_offspring_is_stagnation() {
        struct RefusingVariation;
        impl Variation for RefusingVariation {
            fn generate(&self, slot: usize) -> Result<Option<String>> {
                Ok(Some(format!("error={}", slot as f64 + 1.0)))
            }
            fn vary(&self, _: OperatorKind, _: &[&Candidate]) -> Result<Option<String>> {
                Ok(None)
            }
        }
        let mut engine = Engine::new(
            engine_config(CandidateKind::NudgeMessage, 3, 1),
            &RefusingVariation,
            &NumericEval,
        )
        .unwrap();
        let pop = engine.init_population().unwrap();
        let ids: Vec<String> = pop.members.iter().map(|c| c.id.clone()).collect();
        let next = engine.step_generation(&pop).unwrap();
        let next_ids: Vec<String> = next.members.iter().map(|c| c.id.clone()).collect();
        assert_eq!(ids, next_ids);
        assert_eq!(engine.ledger.stagnation_events, vec![1]);
    }

    #[test]
    fn seeding_failure_is_engine_error() {
        struct NoGenerator;
        impl Variation for NoGenerator {
            fn generate(&self, _: usize) -> Result<Option<String>> {
                Ok(None)
            }
            fn vary(&self, _: OperatorKind, _: &[&Candidate]) -> Result<Option<String>> {
                Ok(None)
            }
        }
        let mut engine = Engine::new(
            engine_config(CandidateKind::NudgeMessage, 3, 1),
            &NoGenerator,
            &NumericEval,
        )
        .unwrap();
        assert!(engine.init_population().is_err());
    }

    #[test]
    fn minimum_population_of_two_works() {
        let variation = NumericVariation { initial: 0.4 };
        let mut engine = Engine::new(
            engine_config(CandidateKind::NudgeMessage, 2, 2),
            &variation,
            &NumericEval,
        )
        .unwrap();
        let outcome = engine.run(&mut NoopObserver).unwrap();
        assert_eq!(outcome.population.members.len(), 2);
    }

    #[test]
    fn deltas_telescope_along_best_trajectory() {
        let variation = NumericVariation { initial: 0.9 };
        let mut engine = Engine::new(
            EngineConfig {
                population_size: 5,
                generations: 8,
                elitism_k: 2,
                offspring_per_generation: 5,
                schedule: OperatorSchedule::default(),
                seed: 7,
                kind: CandidateKind::NudgeMessage,
                ..EngineConfig::default()
            },
            &variation,
            &NumericEval,
        )
        .unwrap();
        let outcome = engine.run(&mut NoopObserver).unwrap();
        let best = outcome.population.best();
        let chain = engine.ledger.best_trajectory(&best.id);
        let founder = engine.ledger.founder_of(&best.id);
        let founder_fitness = engine.ledger.founders[&founder];
        let delta_sum: f64 = chain.iter().map(|(_, _, d)| d).sum();
        let diff = (best.fitness().unwrap() - founder_fitness) - delta_sum;
        assert!(diff.abs() < 1e-9, "telescoping violated by {diff}");
    }

    #[test]
    fn operator_counts_match_offspring_produced() {
        let variation = NumericVariation { initial: 1.0 };
        let mut cfg = engine_config(CandidateKind::NudgeMessage, 4, 6);
        cfg.schedule = OperatorSchedule::default();
        let mut engine = Engine::new(cfg, &variation, &NumericEval).unwrap();
        engine.run(&mut NoopObserver).unwrap();
        let total: u64 = engine
            .ledger
            .per_operator
            .values()
            .map(|s| s.applications)
            .sum();
        assert_eq!(total as usize, engine.ledger.children.len());
        assert_eq!(total, 4 * 6);
    }

    #[test]
    fn engine_is_candidate_kind_agnostic() {
        let variation = NumericVariation { initial: 0.8 };
        let run = |kind| {
            let mut engine =
                Engine::new(engine_config(kind, 4, 5), &variation, &NumericEval).unwrap();
            let outcome = engine.run(&mut NoopObserver).unwrap();
            outcome
                .history
                .iter()
                .map(|s| (s.best_error, s.mean_fitness))
                .collect::<Vec<_>>()
        };
        assert_eq!(
            run(CandidateKind::HeuristicScript),
            run(CandidateKind::NudgeMessage)
        );
    }

    #[test]
    fn parallel_evaluation_matches_sequential() {
        let variation = NumericVariation { initial: 0.8 };
        let run = |workers| {
            let mut cfg = engine_config(CandidateKind::NudgeMessage, 6, 6);
            cfg.schedule = OperatorSchedule::default();
            cfg.workers = workers;
            let mut engine = Engine::new(cfg, &variation, &NumericEval).unwrap();
            let outcome = engine.run(&mut NoopObserver).unwrap();
            outcome
                .population
                .members
                .iter()
                .map(|c| c.id.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn export_tracking_writes_artifacts() {
        let variation = NumericVariation { initial: 0.5 };
        let mut engine = Engine::new(
            engine_config(CandidateKind::HeuristicScript, 4, 4),
            &variation,
            &NumericEval,
        )
        .unwrap();
        let outcome = engine.run(&mut NoopObserver).unwrap();
        let dir = tempfile::TempDir::new().unwrap();
        export_tracking(dir.path(), &outcome.history, &engine.ledger, &outcome.population)
            .unwrap();
        for name in ["fitness.csv", "operators.csv", "trajectory.csv", "complexity.csv", "ledger.json"] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        let fitness = std::fs::read_to_string(dir.path().join("fitness.csv")).unwrap();
        assert_eq!(fitness.lines().count(), 1 + 5); // header + gens 0..4
    }
}
