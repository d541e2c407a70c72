//! Offline end-to-end pipeline tests: the full four-stage run against the
//! deterministic provider, checkpoint/resume, stage isolation, and the CLI
//! surface.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use hedgerow::llm::{MechanismKind, PersonaKind};
use hedgerow::pipeline::{
    farm_dir, run_all, run_script_stage, run_stage1, stage_dir, stage_spec, MetricKind, RunConfig,
    RunManifest,
};
use tempfile::TempDir;

fn small_config() -> RunConfig {
    let mut config = RunConfig::default();
    config.seed = 11;
    config.landscape.n_farms = 5;
    config.landscape.plots_per_farm = 4;
    config.ea.population = 3;
    config.ea.generations = 1;
    config.ea.elitism = 1;
    config.ea.workers = 2;
    config.sandbox.timeout_secs = 20.0;
    config.nudge.personas = vec![PersonaKind::Social];
    config.nudge.mechanisms = vec![MechanismKind::Behavioral];
    config
}

fn snapshot_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    if !root.exists() {
        return out;
    }
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_string_lossy().to_string(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

#[test]
fn full_offline_run_emits_every_stage_artifact() {
    let dir = TempDir::new().unwrap();
    let config = small_config();
    run_all(&config, dir.path()).unwrap();

    let manifest = RunManifest::load(dir.path()).unwrap();
    for stage in ["landscape", "stage1", "stage2", "stage3", "stage4"] {
        assert!(manifest.stage_complete(stage), "{stage} incomplete");
    }
    manifest.validate_artifacts(dir.path()).unwrap();
    assert!(manifest.provider_audit.calls > 0);

    for farm_id in 1..=5u32 {
        assert!(farm_dir(dir.path(), 1, farm_id).join("output.geojson").exists());
        for stage in [2u32, 3u32] {
            let base = farm_dir(dir.path(), stage, farm_id);
            assert!(base.join("best.py").exists(), "stage {stage} farm {farm_id}");
            assert!(base.join("best.json").exists());
            assert!(base.join("tracking/fitness.csv").exists());
            assert!(base.join("gen_0/scores.json").exists());
        }
        assert!(farm_dir(dir.path(), 3, farm_id).join("targets.json").exists());
        let cell = hedgerow::pipeline::cell_dir(dir.path(), farm_id, "social", "behavioral");
        assert!(cell.join("outcomes.json").exists(), "farm {farm_id} cell missing");
        assert!(cell.join("nudged_scripts/best.py").exists());
    }

    let matrix = fs::read_to_string(stage_dir(dir.path(), 4).join("persona_mechanism.csv")).unwrap();
    assert!(matrix.contains("(P:social, N:behavioral)"));
    assert_eq!(matrix.lines().count(), 1 + 5); // header + one row per farm

    // Reports regenerate from tracking exports.
    let reports = hedgerow::pipeline::emit_reports(dir.path()).unwrap();
    assert!(reports.iter().any(|p| p.to_string_lossy().contains("accuracy_stage2")));
    assert!(reports.iter().any(|p| p.to_string_lossy().contains("persona_mechanism")));
}

#[test]
fn interrupted_stage2_resumes_from_last_completed_generation() {
    let base = {
        let mut c = small_config();
        c.landscape.n_farms = 2;
        c.landscape.plots_per_farm = 3;
        c
    };
    let setup = |dir: &Path| {
        hedgerow::pipeline::generate_landscape_cmd(&base, dir).unwrap();
        run_stage1(&base, dir).unwrap();
    };

    // Reference: uninterrupted two-generation run.
    let full_dir = TempDir::new().unwrap();
    setup(full_dir.path());
    let mut two_gen = base.clone();
    two_gen.ea.generations = 2;
    run_script_stage(&two_gen, full_dir.path(), 2).unwrap();

    // Interrupted: run one generation (simulating a kill after the gen-1
    // checkpoint), then resume with the two-generation config.
    let resumed_dir = TempDir::new().unwrap();
    setup(resumed_dir.path());
    let mut one_gen = base.clone();
    one_gen.ea.generations = 1;
    run_script_stage(&one_gen, resumed_dir.path(), 2).unwrap();
    let gen1_before =
        fs::read(farm_dir(resumed_dir.path(), 2, 1).join("gen_1/scores.json")).unwrap();
    run_script_stage(&two_gen, resumed_dir.path(), 2).unwrap();
    let gen1_after =
        fs::read(farm_dir(resumed_dir.path(), 2, 1).join("gen_1/scores.json")).unwrap();
    assert_eq!(gen1_before, gen1_after, "resume must not redo generation 1");

    for farm_id in [1u32, 2u32] {
        let reference =
            fs::read(farm_dir(full_dir.path(), 2, farm_id).join("gen_2/scores.json")).unwrap();
        let resumed =
            fs::read(farm_dir(resumed_dir.path(), 2, farm_id).join("gen_2/scores.json")).unwrap();
        assert_eq!(
            reference, resumed,
            "farm {farm_id}: resumed run diverged from the uninterrupted one"
        );
    }
}

#[test]
fn rerunning_stage4_never_touches_earlier_stages() {
    let dir = TempDir::new().unwrap();
    let mut config = small_config();
    config.landscape.n_farms = 2;
    config.landscape.plots_per_farm = 3;
    config.ea.population = 2;
    run_all(&config, dir.path()).unwrap();

    let before: Vec<_> = (1..=3u32)
        .map(|s| snapshot_tree(&stage_dir(dir.path(), s)))
        .collect();
    fs::remove_dir_all(stage_dir(dir.path(), 4)).unwrap();
    hedgerow::pipeline::run_stage4(&config, dir.path()).unwrap();
    let after: Vec<_> = (1..=3u32)
        .map(|s| snapshot_tree(&stage_dir(dir.path(), s)))
        .collect();
    assert_eq!(before, after, "stage 1-3 artifacts changed during a stage-4 rerun");
    assert!(stage_dir(dir.path(), 4).join("persona_mechanism.csv").exists());
}

#[test]
fn offline_pipeline_is_deterministic_across_run_dirs() {
    let mut config = small_config();
    config.landscape.n_farms = 2;
    config.landscape.plots_per_farm = 3;
    config.ea.population = 2;

    let run = |dir: &Path| {
        run_all(&config, dir).unwrap();
        let mut interesting = BTreeMap::new();
        for (name, path) in [
            ("manifest", dir.join("manifest.json")),
            ("farm1_input", dir.join("landscape/farm_1/input.geojson")),
            ("stage1", farm_dir(dir, 1, 1).join("output.geojson")),
            ("stage2_best", farm_dir(dir, 2, 1).join("best.py")),
            ("stage2_fitness", farm_dir(dir, 2, 1).join("tracking/fitness.csv")),
            ("stage3_best", farm_dir(dir, 3, 1).join("best.py")),
            ("targets", farm_dir(dir, 3, 1).join("targets.json")),
            (
                "outcomes",
                hedgerow::pipeline::cell_dir(dir, 1, "social", "behavioral").join("outcomes.json"),
            ),
        ] {
            interesting.insert(name, fs::read(&path).unwrap());
        }
        interesting
    };

    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    assert_eq!(run(a.path()), run(b.path()));
}

#[test]
fn missing_prerequisites_name_the_missing_artifact() {
    let dir = TempDir::new().unwrap();
    let config = small_config();

    let err = run_script_stage(&config, dir.path(), 2).unwrap_err().to_string();
    assert!(err.contains("landscape.json"), "{err}");

    hedgerow::pipeline::generate_landscape_cmd(&config, dir.path()).unwrap();
    let err = run_script_stage(&config, dir.path(), 2).unwrap_err().to_string();
    assert!(err.contains("stage1") || err.contains("output.geojson"), "{err}");

    run_stage1(&config, dir.path()).unwrap();
    let err = hedgerow::pipeline::run_stage4(&config, dir.path()).unwrap_err().to_string();
    assert!(err.contains("stage-2 winner"), "{err}");
}

#[test]
fn stage_metric_wiring_matches_contract() {
    assert_eq!(stage_spec(2).unwrap().metric, MetricKind::Npv);
    assert_eq!(stage_spec(3).unwrap().metric, MetricKind::Conn);
    assert!(stage_spec(4).is_err());
    assert_eq!(stage_spec(2).unwrap().llm_stage, hedgerow::llm::Stage::Baseline);
    assert_eq!(stage_spec(3).unwrap().llm_stage, hedgerow::llm::Stage::Global);
}

#[test]
fn script_evaluator_applies_the_stage_metric() {
    use hedgerow::evolve::FitnessEval;
    use hedgerow::fitness::error_npv;
    use hedgerow::landscape::{generate_landscape, write_farm_geojson, InterventionRecord};
    use hedgerow::sandbox::{Candidate, CandidateKind, Sandbox};

    let config = small_config();
    let ls = generate_landscape(3, &config.landscape.generator_config()).unwrap();
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("input.geojson");
    write_farm_geojson(&ls.farms[0], &input).unwrap();

    // Ground truth: margin 0.5 everywhere on agricultural plots.
    let gt: BTreeMap<u32, InterventionRecord> = ls.farms[0]
        .plots
        .iter()
        .map(|p| {
            (
                p.id,
                InterventionRecord {
                    plot_id: p.id,
                    margin_intervention: if p.is_ag() { 0.5 } else { 0.0 },
                    habitat_conversion: 0.0,
                },
            )
        })
        .collect();

    let gateway = hedgerow::llm::Gateway::offline_synthetic();
    let sandbox = Sandbox::default();
    let evaluator = hedgerow::pipeline::ScriptEvaluator {
        sandbox: &sandbox,
        gateway: &gateway,
        input: input.clone(),
        spec: stage_spec(2).unwrap(),
        gt_interventions: gt.clone(),
        gt_directions: BTreeMap::new(),
        epsilon: 1e-6,
        max_fix_attempts: 0,
    };
    assert_eq!(evaluator.metric(), MetricKind::Npv);

    // A script emitting zeros everywhere: the evaluator's score must equal
    // a direct error_npv computation against the same ground truth.
    let script = r#"
import json
data = json.load(open("input.geojson"))
for f in data["features"]:
    f["properties"]["margin_intervention"] = 0.0
    f["properties"]["habitat_conversion"] = 0.0
json.dump(data, open("output.geojson", "w"))
"#;
    let mut candidate = Candidate::new("zeros", CandidateKind::HeuristicScript, script, 0);
    let report = evaluator.evaluate(&mut candidate).unwrap();
    let zeros: BTreeMap<u32, InterventionRecord> = gt
        .keys()
        .map(|id| (*id, InterventionRecord::zero(*id)))
        .collect();
    let direct = error_npv(&zeros, &gt, 1e-6).unwrap();
    assert_eq!(report.error, direct.error);
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hedgerow"))
}

#[test]
fn cli_exit_codes_and_flow() {
    let dir = TempDir::new().unwrap();
    let run_dir = dir.path().join("run");

    // User error: stage run before any landscape exists.
    let out = bin()
        .args(["--run-dir", run_dir.to_str().unwrap(), "run", "--stage", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));

    // Write a small config and generate the landscape.
    let config_path = dir.path().join("config.toml");
    fs::write(
        &config_path,
        "seed = 5\n[landscape]\nn_farms = 2\nplots_per_farm = 3\n[ea]\npopulation = 2\ngenerations = 1\nelitism = 1\n[nudge]\npersonas = [\"social\"]\nmechanisms = [\"behavioral\"]\n",
    )
    .unwrap();
    let out = bin()
        .args([
            "--run-dir",
            run_dir.to_str().unwrap(),
            "--config",
            config_path.to_str().unwrap(),
            "generate-landscape",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("landscape/landscape.json").exists());

    // The config snapshot now drives later invocations without --config.
    let out = bin()
        .args(["--run-dir", run_dir.to_str().unwrap(), "run", "--stage", "all"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let out = bin()
        .args(["--run-dir", run_dir.to_str().unwrap(), "explain", "--farm", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out.stdout.is_empty());

    let out = bin()
        .args(["--run-dir", run_dir.to_str().unwrap(), "report"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(run_dir.join("reports").exists());

    // Resume on a finished run is a no-op success.
    let out = bin()
        .args(["--run-dir", run_dir.to_str().unwrap(), "resume"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));

    // Bad config: user error.
    fs::write(&config_path, "epsilon = -1.0\n").unwrap();
    let out = bin()
        .args([
            "--run-dir",
            run_dir.to_str().unwrap(),
            "--config",
            config_path.to_str().unwrap(),
            "run",
            "--stage",
            "1",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
