//! Pluggable ground-truth providers for baseline interventions (stage 1)
//! and connectivity-target directions (stage 3): a built-in rule-based
//! reference generator keeping the pipeline self-contained, plus an adapter
//! for external solvers speaking the landscape file formats.

use std::fs;
use std::path::Path;
use std::process::Command;

use crate::connectivity::DirectionRecord;
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::landscape::{
    write_farm_geojson, Direction, DirectionSet, EconomicParams, Farm, InterventionRecord,
    Landscape, PlotType,
};

pub trait GroundTruthProvider {
    /// Profit-driven baseline intervention levels per plot.
    fn baseline(
        &self,
        landscape: &Landscape,
        farm: &Farm,
        params: &EconomicParams,
    ) -> Result<Vec<InterventionRecord>>;

    /// Connectivity-optimal direction targets per plot.
    fn global_targets(
        &self,
        landscape: &Landscape,
        farm: &Farm,
        params: &EconomicParams,
    ) -> Result<Vec<DirectionRecord>>;
}

/// Rule-based reference generator. Not a solver: a documented deterministic
/// stand-in so the pipeline runs self-contained.
///
/// Baseline rule: scale each agricultural plot's revenue (yield times
/// price) against the farm maximum; the bottom quarter converts interior
/// habitat with intensity growing as revenue falls, the middle band takes
/// margins, high-revenue plots do nothing.
///
/// Target rule: margin directions face every neighboring habitat plot (or
/// the farm's largest habitat patch when the plot has none); plots in the
/// bottom revenue quarter additionally convert all four quadrants.
pub struct BuiltinReference;

fn relative_revenue(farm: &Farm, params: &EconomicParams) -> Vec<(u32, f64)> {
    let revenues: Vec<(u32, f64)> = farm
        .ag_plots()
        .map(|p| {
            let price = params.price(&p.label).unwrap_or(0.0);
            (p.id, p.yield_value.unwrap_or(0.0) * price)
        })
        .collect();
    let max = revenues.iter().map(|(_, r)| *r).fold(0.0, f64::max);
    revenues
        .into_iter()
        .map(|(id, r)| (id, if max > 0.0 { r / max } else { 0.0 }))
        .collect()
}

fn bearing(from: Point, to: Point) -> Direction {
    match (to.x >= from.x, to.y >= from.y) {
        (true, true) => Direction::NorthEast,
        (false, true) => Direction::NorthWest,
        (true, false) => Direction::SouthEast,
        (false, false) => Direction::SouthWest,
    }
}

impl GroundTruthProvider for BuiltinReference {
    fn baseline(
        &self,
        _landscape: &Landscape,
        farm: &Farm,
        params: &EconomicParams,
    ) -> Result<Vec<InterventionRecord>> {
        let rel = relative_revenue(farm, params);
        let mut records = Vec::with_capacity(farm.plots.len());
        for plot in &farm.plots {
            let mut record = InterventionRecord::zero(plot.id);
            if let Some((_, r)) = rel.iter().find(|(id, _)| *id == plot.id) {
                if *r < 0.25 {
                    record.habitat_conversion = (0.8 * (1.0 - r)).clamp(0.0, 1.0);
                } else if *r < 0.75 {
                    record.margin_intervention = (0.6 * (1.0 - r)).clamp(0.0, 1.0);
                }
            }
            record.validate()?;
            records.push(record);
        }
        Ok(records)
    }

    fn global_targets(
        &self,
        _landscape: &Landscape,
        farm: &Farm,
        params: &EconomicParams,
    ) -> Result<Vec<DirectionRecord>> {
        let rel = relative_revenue(farm, params);
        let largest_hab = farm
            .plots
            .iter()
            .filter(|p| p.plot_type == PlotType::Hab)
            .max_by(|a, b| {
                a.geometry
                    .area()
                    .partial_cmp(&b.geometry.area())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
        let mut records = Vec::with_capacity(farm.plots.len());
        for plot in &farm.plots {
            let mut margin = DirectionSet::EMPTY;
            let mut habitat = DirectionSet::EMPTY;
            if plot.is_ag() {
                let centroid = plot.geometry.centroid();
                for nb in &plot.nbs {
                    if let Some(other) = farm.plot(*nb) {
                        if other.plot_type == PlotType::Hab {
                            margin.insert(bearing(centroid, other.geometry.centroid()));
                        }
                    }
                }
                if margin.is_empty() {
                    if let Some(hab) = largest_hab {
                        margin.insert(bearing(centroid, hab.geometry.centroid()));
                    }
                }
                let low_revenue = rel
                    .iter()
                    .find(|(id, _)| *id == plot.id)
                    .map(|(_, r)| *r < 0.25)
                    .unwrap_or(false);
                if low_revenue {
                    habitat = DirectionSet::all();
                }
            }
            records.push(DirectionRecord {
                plot_id: plot.id,
                plot_type: plot.plot_type.as_str().to_string(),
                label: plot.label.clone(),
                margin_directions: margin.names(),
                habitat_directions: habitat.names(),
            });
        }
        Ok(records)
    }
}

/// Adapter for an external solver. The command is invoked as
/// `program [args...] --mode {baseline|targets} --dir WORKDIR` where
/// WORKDIR contains the farm's `input.geojson`; it must write
/// `output.geojson` (baseline) or `output.json` (targets) in WORKDIR.
pub struct ExternalCommand {
    pub program: String,
    pub args: Vec<String>,
}

impl ExternalCommand {
    pub fn from_command(command: &[String]) -> Result<Self> {
        let (program, args) = command.split_first().ok_or_else(|| {
            Error::Config("ground_truth.command must name a program".into())
        })?;
        Ok(ExternalCommand {
            program: program.clone(),
            args: args.to_vec(),
        })
    }

    fn run(&self, farm: &Farm, mode: &str) -> Result<String> {
        let scratch = tempfile::Builder::new().prefix("hedgerow-gt").tempdir()?;
        write_farm_geojson(farm, &scratch.path().join("input.geojson"))?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg("--mode")
            .arg(mode)
            .arg("--dir")
            .arg(scratch.path())
            .status()
            .map_err(|e| {
                Error::Precondition(format!(
                    "ground-truth command '{}' failed to start: {e}; configure ground_truth.command or switch to the builtin provider",
                    self.program
                ))
            })?;
        if !status.success() {
            return Err(Error::Precondition(format!(
                "ground-truth command exited with {status}; check the external solver setup"
            )));
        }
        let out_name = if mode == "baseline" { "output.geojson" } else { "output.json" };
        fs::read_to_string(scratch.path().join(out_name)).map_err(|_| {
            Error::Precondition(format!(
                "ground-truth command produced no {out_name}; the adapter contract requires it"
            ))
        })
    }
}

impl GroundTruthProvider for ExternalCommand {
    fn baseline(
        &self,
        _landscape: &Landscape,
        farm: &Farm,
        _params: &EconomicParams,
    ) -> Result<Vec<InterventionRecord>> {
        let text = self.run(farm, "baseline")?;
        crate::landscape::parse_intervention_geojson_str(&text, Path::new("output.geojson"))
    }

    fn global_targets(
        &self,
        _landscape: &Landscape,
        farm: &Farm,
        _params: &EconomicParams,
    ) -> Result<Vec<DirectionRecord>> {
        let text = self.run(farm, "targets")?;
        let records: Vec<DirectionRecord> = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: "output.json".into(),
            message: format!("invalid target records: {e}"),
        })?;
        for record in &records {
            record.direction_sets().map_err(|e| Error::Parse {
                path: "output.json".into(),
                message: e.to_string(),
            })?;
        }
        Ok(records)
    }
}

/// Writes stage-3 target records to `targets.json`.
pub fn write_targets(records: &[DirectionRecord], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(records)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_targets(path: &Path) -> Result<Vec<DirectionRecord>> {
    let text = fs::read_to_string(path).map_err(|_| {
        Error::Precondition(format!(
            "missing stage-3 targets at {}; run stage 3 first",
            path.display()
        ))
    })?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::{generate_landscape, GeneratorConfig};

    fn sample() -> Landscape {
        generate_landscape(7, &GeneratorConfig::default()).unwrap()
    }

    #[test]
    fn builtin_baseline_is_deterministic_and_valid() {
        let ls = sample();
        let params = EconomicParams::default();
        let farm = &ls.farms[0];
        let a = BuiltinReference.baseline(&ls, farm, &params).unwrap();
        let b = BuiltinReference.baseline(&ls, farm, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), farm.plots.len());
        for record in &a {
            record.validate().unwrap();
        }
        // Habitat plots never intervene.
        for plot in farm.plots.iter().filter(|p| !p.is_ag()) {
            let rec = a.iter().find(|r| r.plot_id == plot.id).unwrap();
            assert_eq!(rec.margin_intervention, 0.0);
            assert_eq!(rec.habitat_conversion, 0.0);
        }
    }

    #[test]
    fn builtin_targets_cover_all_plots_with_valid_directions() {
        let ls = sample();
        let params = EconomicParams::default();
        for farm in &ls.farms {
            let targets = BuiltinReference.global_targets(&ls, farm, &params).unwrap();
            assert_eq!(targets.len(), farm.plots.len());
            for rec in &targets {
                rec.direction_sets().unwrap();
                let plot = farm.plot(rec.plot_id).unwrap();
                if !plot.is_ag() {
                    assert!(rec.margin_directions.is_empty());
                    assert!(rec.habitat_directions.is_empty());
                }
            }
            // At least one agricultural plot gets a margin target.
            assert!(targets.iter().any(|r| !r.margin_directions.is_empty()));
        }
    }

    #[test]
    fn external_stub_echoing_zeros_is_accepted() {
        let ls = sample();
        let params = EconomicParams::default();
        let dir = tempfile::TempDir::new().unwrap();
        let stub = dir.path().join("stub.py");
        std::fs::write(
            &stub,
            r#"
import argparse, json, os
parser = argparse.ArgumentParser()
parser.add_argument("--mode")
parser.add_argument("--dir")
ns = parser.parse_args()
with open(os.path.join(ns.dir, "input.geojson")) as fh:
    data = json.load(fh)
if ns.mode == "baseline":
    for f in data["features"]:
        f["properties"]["margin_intervention"] = 0.0
        f["properties"]["habitat_conversion"] = 0.0
    json.dump(data, open(os.path.join(ns.dir, "output.geojson"), "w"))
else:
    out = [{"plot_id": f["properties"]["id"], "plot_type": f["properties"]["type"],
            "label": f["properties"]["label"], "margin_directions": [],
            "habitat_directions": []} for f in data["features"]]
    json.dump(out, open(os.path.join(ns.dir, "output.json"), "w"))
"#,
        )
        .unwrap();
        let provider = ExternalCommand {
            program: "python3".into(),
            args: vec![stub.to_str().unwrap().to_string()],
        };
        let baseline = provider.baseline(&ls, &ls.farms[0], &params).unwrap();
        assert_eq!(baseline.len(), ls.farms[0].plots.len());
        assert!(baseline
            .iter()
            .all(|r| r.margin_intervention == 0.0 && r.habitat_conversion == 0.0));
        let targets = provider.global_targets(&ls, &ls.farms[0], &params).unwrap();
        assert_eq!(targets.len(), ls.farms[0].plots.len());
    }

    #[test]
    fn missing_external_command_reports_remediation() {
        let ls = sample();
        let provider = ExternalCommand {
            program: "definitely-not-a-real-solver".into(),
            args: vec![],
        };
        let err = provider
            .baseline(&ls, &ls.farms[0], &EconomicParams::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("builtin"), "{err}");
    }
}
