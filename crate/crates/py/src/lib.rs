//! Python bindings over the core toolkit: landscape synthesis,
//! connectivity scoring, the fitness metrics, candidate-script execution,
//! complexity metrics, and response parsing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use hedgerow::connectivity::{self, HabitatGraph, HabitatPatch, PatchSource, PlotDirections};
use hedgerow::fitness::{self, FitnessReport};
use hedgerow::landscape::{DirectionSet, EconomicParams, GeneratorConfig, InterventionRecord};
use hedgerow::nudge::{EconomicOffer, MechanismSpec, UptakeScenario};
use hedgerow::sandbox::{Candidate, CandidateKind, ExecStage, Sandbox};
use hedgerow::Error;

fn to_py_err(err: Error) -> PyErr {
    if err.is_user_error() {
        PyValueError::new_err(err.to_string())
    } else {
        PyRuntimeError::new_err(err.to_string())
    }
}

fn directions_from(names: Vec<String>) -> PyResult<DirectionSet> {
    DirectionSet::from_names(&names).map_err(to_py_err)
}

fn intervention_map(rows: Vec<(u32, f64, f64)>) -> BTreeMap<u32, InterventionRecord> {
    rows.into_iter()
        .map(|(plot_id, margin_intervention, habitat_conversion)| {
            (
                plot_id,
                InterventionRecord {
                    plot_id,
                    margin_intervention,
                    habitat_conversion,
                },
            )
        })
        .collect()
}

fn direction_map(
    rows: Vec<(u32, Vec<String>, Vec<String>)>,
) -> PyResult<BTreeMap<u32, PlotDirections>> {
    rows.into_iter()
        .map(|(id, margin, habitat)| {
            Ok((
                id,
                PlotDirections {
                    margin: directions_from(margin)?,
                    habitat: directions_from(habitat)?,
                },
            ))
        })
        .collect()
}

fn report_dict<'py>(py: Python<'py>, report: &FitnessReport) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new_bound(py);
    out.set_item("error", report.error)?;
    out.set_item("fitness", report.fitness)?;
    let per_plot = PyList::empty_bound(py);
    for row in &report.per_plot {
        per_plot.append((row.plot_id, row.contribution))?;
    }
    out.set_item("per_plot", per_plot)?;
    out.set_item("missing_pred", report.diagnostics.missing_pred)?;
    out.set_item("missing_gt", report.diagnostics.missing_gt)?;
    Ok(out)
}

/// Generates a synthetic landscape and writes one GeoJSON per farm under
/// `out_dir`, returning a summary dict.
#[pyfunction]
#[pyo3(signature = (seed, out_dir, n_farms=5, plots_per_farm=9, ag_probability=0.6, extent=(1000.0, 1000.0)))]
fn generate_landscape(
    py: Python<'_>,
    seed: u64,
    out_dir: PathBuf,
    n_farms: u32,
    plots_per_farm: u32,
    ag_probability: f64,
    extent: (f64, f64),
) -> PyResult<Py<PyDict>> {
    let config = GeneratorConfig {
        n_farms,
        plots_per_farm,
        ag_probability,
        extent,
        ..GeneratorConfig::default()
    };
    let landscape = hedgerow::landscape::generate_landscape(seed, &config).map_err(to_py_err)?;
    hedgerow::landscape::write_landscape_dir(&landscape, &out_dir).map_err(to_py_err)?;
    let out = PyDict::new_bound(py);
    out.set_item("farms", landscape.farms.len())?;
    out.set_item("plots", landscape.total_plots())?;
    out.set_item(
        "ag_plots",
        landscape
            .farms
            .iter()
            .flat_map(|f| f.plots.iter())
            .filter(|p| p.is_ag())
            .count(),
    )?;
    out.set_item("out_dir", out_dir.to_string_lossy())?;
    Ok(out.into())
}

/// Integral Index of Connectivity over patch areas (ha), edges, and the
/// total landscape area (ha).
#[pyfunction]
fn compute_iic(areas: Vec<f64>, edges: Vec<(u32, u32)>, total_landscape_area: f64) -> PyResult<f64> {
    let nodes = areas
        .iter()
        .enumerate()
        .map(|(i, a)| HabitatPatch {
            id: i as u32,
            area: *a,
            source: PatchSource::ExistingHabitat,
        })
        .collect();
    let graph = HabitatGraph::new(nodes, edges, total_landscape_area).map_err(to_py_err)?;
    Ok(connectivity::compute_iic(&graph).map_err(to_py_err)?.iic)
}

/// Jaccard distance between two direction-name lists.
#[pyfunction]
fn jaccard_distance(a: Vec<String>, b: Vec<String>) -> PyResult<f64> {
    Ok(fitness::jaccard_distance(
        directions_from(a)?,
        directions_from(b)?,
    ))
}

/// Mean absolute error between predicted and target intervention levels.
/// Rows are (plot_id, margin_intervention, habitat_conversion).
#[pyfunction]
#[pyo3(signature = (pred, gt, epsilon=1e-6))]
fn error_npv(
    py: Python<'_>,
    pred: Vec<(u32, f64, f64)>,
    gt: Vec<(u32, f64, f64)>,
    epsilon: f64,
) -> PyResult<Py<PyDict>> {
    let report = fitness::error_npv(&intervention_map(pred), &intervention_map(gt), epsilon)
        .map_err(to_py_err)?;
    Ok(report_dict(py, &report)?.into())
}

/// Direction-set error. Rows are (plot_id, margin_directions, habitat_directions).
#[pyfunction]
#[pyo3(signature = (pred, gt, epsilon=1e-6))]
fn error_conn(
    py: Python<'_>,
    pred: Vec<(u32, Vec<String>, Vec<String>)>,
    gt: Vec<(u32, Vec<String>, Vec<String>)>,
    epsilon: f64,
) -> PyResult<Py<PyDict>> {
    let report = fitness::error_conn(&direction_map(pred)?, &direction_map(gt)?, epsilon)
        .map_err(to_py_err)?;
    Ok(report_dict(py, &report)?.into())
}

/// Error between fractional amounts and quantized direction targets.
#[pyfunction]
#[pyo3(signature = (pred, gt_dirs, epsilon=1e-6))]
fn error_nudge(
    py: Python<'_>,
    pred: Vec<(u32, f64, f64)>,
    gt_dirs: Vec<(u32, Vec<String>, Vec<String>)>,
    epsilon: f64,
) -> PyResult<Py<PyDict>> {
    let report = fitness::error_nudge(&intervention_map(pred), &direction_map(gt_dirs)?, epsilon)
        .map_err(to_py_err)?;
    Ok(report_dict(py, &report)?.into())
}

/// Fractional level implied by a direction set: len/4.
#[pyfunction]
fn quantize_directions(directions: Vec<String>) -> PyResult<f64> {
    Ok(connectivity::quantize_directions(directions_from(directions)?))
}

/// Directions whose fraction strictly exceeds the threshold.
#[pyfunction]
fn extract_directions(fractions: Vec<(String, f64)>, threshold: f64) -> PyResult<Vec<String>> {
    let parsed: Vec<(hedgerow::landscape::Direction, f64)> = fractions
        .into_iter()
        .map(|(name, frac)| {
            Ok((
                hedgerow::landscape::Direction::parse(&name).map_err(to_py_err)?,
                frac,
            ))
        })
        .collect::<PyResult<_>>()?;
    Ok(connectivity::extract_directions(&parsed, threshold)
        .map_err(to_py_err)?
        .names())
}

/// Token-level complexity metrics of a candidate script.
#[pyfunction]
fn compute_complexity(py: Python<'_>, body: &str) -> PyResult<Py<PyDict>> {
    let m = hedgerow::sandbox::compute_complexity(body);
    let out = PyDict::new_bound(py);
    out.set_item("parse_ok", m.parse_ok)?;
    out.set_item("lloc", m.lloc)?;
    out.set_item("cyclomatic", m.cyclomatic)?;
    out.set_item("halstead_n1", m.halstead_n1)?;
    out.set_item("halstead_n2", m.halstead_n2)?;
    out.set_item("halstead_N1", m.halstead_big_n1)?;
    out.set_item("halstead_N2", m.halstead_big_n2)?;
    out.set_item("difficulty", m.difficulty)?;
    out.set_item("volume", m.volume)?;
    out.set_item("maintainability_index", m.maintainability_index)?;
    Ok(out.into())
}

/// Last fenced code block of a model response, if any.
#[pyfunction]
fn extract_code(raw: &str) -> Option<String> {
    hedgerow::llm::extract_code(raw)
}

/// Contents of the last communication block of a model response, if any.
#[pyfunction]
fn extract_message(raw: &str) -> Option<String> {
    hedgerow::llm::extract_message(raw)
}

/// Present-value cost and range check of an economic offer.
/// `offer` keys: margin_establishment_subsidy, habitat_establishment_subsidy,
/// margin_maintenance_subsidy, habitat_maintenance_subsidy,
/// habitat_payment_per_ha, min_habitat_ha, min_margin_fraction,
/// eco_premium_factor.
#[pyfunction]
#[pyo3(signature = (offer, habitat_ha=3.0, margin_ha=2.0, budget_per_farm=10000.0, pv_factor=12.46))]
fn validate_economic_offer(
    py: Python<'_>,
    offer: &Bound<'_, PyDict>,
    habitat_ha: f64,
    margin_ha: f64,
    budget_per_farm: f64,
    pv_factor: f64,
) -> PyResult<Py<PyDict>> {
    let get = |key: &str| -> PyResult<f64> {
        match offer.get_item(key)? {
            Some(v) => v.extract(),
            None => Ok(0.0),
        }
    };
    let get_opt = |key: &str| -> PyResult<Option<f64>> {
        match offer.get_item(key)? {
            Some(v) => Ok(Some(v.extract()?)),
            None => Ok(None),
        }
    };
    let parsed = EconomicOffer {
        margin_establishment_subsidy: get("margin_establishment_subsidy")?,
        habitat_establishment_subsidy: get("habitat_establishment_subsidy")?,
        margin_maintenance_subsidy: get("margin_maintenance_subsidy")?,
        habitat_maintenance_subsidy: get("habitat_maintenance_subsidy")?,
        habitat_payment_per_ha: get("habitat_payment_per_ha")?,
        min_habitat_ha: get_opt("min_habitat_ha")?,
        min_margin_fraction: get_opt("min_margin_fraction")?,
        eco_premium_factor: get_opt("eco_premium_factor")?,
    };
    let mut mechanism = MechanismSpec::economic();
    mechanism.budget_per_farm = budget_per_farm;
    mechanism.pv_factor = pv_factor;
    let validation = hedgerow::nudge::validate_economic_offer(
        &parsed,
        &mechanism,
        UptakeScenario {
            habitat_ha,
            margin_ha,
        },
        &EconomicParams::default(),
    )
    .map_err(to_py_err)?;
    let out = PyDict::new_bound(py);
    out.set_item("pv_cost", validation.pv_cost)?;
    out.set_item("within_budget", validation.within_budget)?;
    out.set_item("violations", validation.violations)?;
    Ok(out.into())
}

/// Runs a heuristic script in the subprocess jail against a farm file.
/// `stage` is "baseline", "global" or "nudged"; returns status, trace and
/// the parsed records.
#[pyfunction]
#[pyo3(signature = (script, input_geojson, stage="baseline", timeout_secs=30.0))]
fn execute_heuristic(
    py: Python<'_>,
    script: &str,
    input_geojson: PathBuf,
    stage: &str,
    timeout_secs: f64,
) -> PyResult<Py<PyDict>> {
    let exec_stage = match stage {
        "baseline" => ExecStage::Baseline,
        "global" => ExecStage::Global,
        "nudged" => ExecStage::Nudged,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown stage '{other}' (expected baseline, global or nudged)"
            )))
        }
    };
    let mut sandbox = Sandbox::default();
    sandbox.limits.timeout = std::time::Duration::from_secs_f64(timeout_secs);
    let candidate = Candidate::new("py-call", CandidateKind::HeuristicScript, script, 0);
    let result = sandbox
        .execute_candidate(&candidate, Path::new(&input_geojson), exec_stage)
        .map_err(to_py_err)?;

    let out = PyDict::new_bound(py);
    out.set_item(
        "status",
        match result.status {
            hedgerow::sandbox::ExecStatus::Ok => "ok",
            hedgerow::sandbox::ExecStatus::ParseFailure => "parse_failure",
            hedgerow::sandbox::ExecStatus::RuntimeFailure => "runtime_failure",
            hedgerow::sandbox::ExecStatus::Timeout => "timeout",
            hedgerow::sandbox::ExecStatus::OutputInvalid => "output_invalid",
        },
    )?;
    out.set_item("trace", result.trace)?;
    out.set_item("wall_time", result.wall_time)?;
    let records = PyList::empty_bound(py);
    if let Some(output) = &result.output_records {
        if let Some(rows) = output.interventions() {
            for r in rows {
                records.append((r.plot_id, r.margin_intervention, r.habitat_conversion))?;
            }
        }
        if let Some(rows) = output.directions() {
            for r in rows {
                records.append((
                    r.plot_id,
                    r.margin_directions.clone(),
                    r.habitat_directions.clone(),
                ))?;
            }
        }
    }
    out.set_item("records", records)?;
    Ok(out.into())
}

#[pymodule]
fn hedgerow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate_landscape, m)?)?;
    m.add_function(wrap_pyfunction!(compute_iic, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard_distance, m)?)?;
    m.add_function(wrap_pyfunction!(error_npv, m)?)?;
    m.add_function(wrap_pyfunction!(error_conn, m)?)?;
    m.add_function(wrap_pyfunction!(error_nudge, m)?)?;
    m.add_function(wrap_pyfunction!(quantize_directions, m)?)?;
    m.add_function(wrap_pyfunction!(extract_directions, m)?)?;
    m.add_function(wrap_pyfunction!(compute_complexity, m)?)?;
    m.add_function(wrap_pyfunction!(extract_code, m)?)?;
    m.add_function(wrap_pyfunction!(extract_message, m)?)?;
    m.add_function(wrap_pyfunction!(validate_economic_offer, m)?)?;
    m.add_function(wrap_pyfunction!(execute_heuristic, m)?)?;
    Ok(())
}
