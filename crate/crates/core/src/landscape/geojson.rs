//! GeoJSON serialization of farms and intervention records.
//!
//! Each farm file is a FeatureCollection whose features carry exactly the
//! properties `id`, `type`, `label`, `yield` (agricultural plots only) and
//! `nbs`. Ground-truth and candidate-output files reuse the same layout plus
//! `margin_intervention` / `habitat_conversion` properties.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geom::{Point, Polygon};
use crate::landscape::{Farm, InterventionRecord, Landscape, Plot, PlotType};

#[derive(Serialize)]
struct FeatureCollectionOut<T: Serialize> {
    r#type: &'static str,
    features: Vec<T>,
}

#[derive(Serialize)]
struct FeatureOut {
    r#type: &'static str,
    properties: PropsOut,
    geometry: GeomOut,
}

#[derive(Serialize)]
struct PropsOut {
    id: u32,
    r#type: &'static str,
    label: String,
    #[serde(rename = "yield", skip_serializing_if = "Option::is_none")]
    yield_value: Option<f64>,
    nbs: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    margin_intervention: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    habitat_conversion: Option<f64>,
}

#[derive(Serialize)]
struct GeomOut {
    r#type: &'static str,
    coordinates: Vec<Vec<[f64; 2]>>,
}

fn geometry_out(poly: &Polygon) -> GeomOut {
    let mut ring: Vec<[f64; 2]> = poly.ring().iter().map(|p| [p.x, p.y]).collect();
    if let Some(first) = ring.first().copied() {
        ring.push(first); // GeoJSON rings repeat the first position
    }
    GeomOut {
        r#type: "Polygon",
        coordinates: vec![ring],
    }
}

fn feature_out(plot: &Plot, intervention: Option<&InterventionRecord>) -> FeatureOut {
    FeatureOut {
        r#type: "Feature",
        properties: PropsOut {
            id: plot.id,
            r#type: plot.plot_type.as_str(),
            label: plot.label.clone(),
            yield_value: plot.yield_value,
            nbs: plot.nbs.clone(),
            margin_intervention: intervention.map(|r| r.margin_intervention),
            habitat_conversion: intervention.map(|r| r.habitat_conversion),
        },
        geometry: geometry_out(&plot.geometry),
    }
}

/// Writes one farm as `input.geojson`-style FeatureCollection.
pub fn write_farm_geojson(farm: &Farm, path: &Path) -> Result<()> {
    farm.validate()?;
    let fc = FeatureCollectionOut {
        r#type: "FeatureCollection",
        features: farm.plots.iter().map(|p| feature_out(p, None)).collect(),
    };
    write_json(path, &fc)
}

/// Writes a farm with per-plot intervention properties attached (ground
/// truth or reference outputs).
pub fn write_intervention_geojson(
    farm: &Farm,
    records: &[InterventionRecord],
    path: &Path,
) -> Result<()> {
    let lookup = |id: u32| {
        records
            .iter()
            .find(|r| r.plot_id == id)
            .copied()
            .unwrap_or(InterventionRecord::zero(id))
    };
    let fc = FeatureCollectionOut {
        r#type: "FeatureCollection",
        features: farm
            .plots
            .iter()
            .map(|p| feature_out(p, Some(&lookup(p.id))))
            .collect(),
    };
    write_json(path, &fc)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn feature_label(obj: &serde_json::Map<String, Value>, index: usize) -> String {
    obj.get("properties")
        .and_then(|p| p.get("id"))
        .and_then(Value::as_i64)
        .map(|id| format!("feature id {id}"))
        .unwrap_or_else(|| format!("feature at index {index}"))
}

fn ring_from_geometry(
    geometry: &Value,
    path: &Path,
    who: &str,
) -> Result<Polygon> {
    let obj = geometry
        .as_object()
        .ok_or_else(|| parse_err(path, format!("{who}: geometry is not an object")))?;
    match obj.get("type").and_then(Value::as_str) {
        Some("Polygon") => {}
        Some(other) => {
            return Err(parse_err(
                path,
                format!("{who}: unsupported geometry type '{other}' (expected Polygon)"),
            ))
        }
        None => return Err(parse_err(path, format!("{who}: geometry missing 'type'"))),
    }
    let coords = obj
        .get("coordinates")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err(path, format!("{who}: geometry missing coordinates")))?;
    if coords.len() != 1 {
        return Err(parse_err(
            path,
            format!("{who}: expected a single exterior ring, got {} rings", coords.len()),
        ));
    }
    let ring = coords[0]
        .as_array()
        .ok_or_else(|| parse_err(path, format!("{who}: exterior ring is not an array")))?;
    let mut points = Vec::with_capacity(ring.len());
    for pos in ring {
        let pair = pos
            .as_array()
            .filter(|a| a.len() >= 2)
            .ok_or_else(|| parse_err(path, format!("{who}: malformed coordinate pair")))?;
        let x = pair[0]
            .as_f64()
            .ok_or_else(|| parse_err(path, format!("{who}: non-numeric coordinate")))?;
        let y = pair[1]
            .as_f64()
            .ok_or_else(|| parse_err(path, format!("{who}: non-numeric coordinate")))?;
        points.push(Point::new(x, y));
    }
    Polygon::new(points).map_err(|e| parse_err(path, format!("{who}: {e}")))
}

fn features_of<'a>(doc: &'a Value, path: &Path) -> Result<&'a Vec<Value>> {
    let obj = doc
        .as_object()
        .ok_or_else(|| parse_err(path, "document is not a JSON object"))?;
    match obj.get("type").and_then(Value::as_str) {
        Some("FeatureCollection") => {}
        _ => return Err(parse_err(path, "expected a FeatureCollection")),
    }
    obj.get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err(path, "missing 'features' array"))
}

/// Reads a farm-level feature collection. The returned plots carry
/// `farm_id = 0`; the caller assigns farm membership.
pub fn read_farm_geojson(path: &Path) -> Result<Vec<Plot>> {
    let text = fs::read_to_string(path)?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| parse_err(path, format!("invalid JSON: {e}")))?;
    let features = features_of(&doc, path)?;

    let mut plots = Vec::with_capacity(features.len());
    for (index, feature) in features.iter().enumerate() {
        let obj = feature
            .as_object()
            .ok_or_else(|| parse_err(path, format!("feature at index {index} is not an object")))?;
        let who = feature_label(obj, index);
        let props = obj
            .get("properties")
            .and_then(Value::as_object)
            .ok_or_else(|| parse_err(path, format!("{who}: missing properties")))?;

        let id = props
            .get("id")
            .and_then(Value::as_u64)
            .ok_or_else(|| parse_err(path, format!("{who}: missing required property 'id'")))?
            as u32;
        let plot_type = match props.get("type").and_then(Value::as_str) {
            Some("ag_plot") => PlotType::Ag,
            Some("hab_plot") => PlotType::Hab,
            Some(other) => {
                return Err(parse_err(
                    path,
                    format!("{who}: unknown plot type '{other}'"),
                ))
            }
            None => {
                return Err(parse_err(
                    path,
                    format!("{who}: missing required property 'type'"),
                ))
            }
        };
        let label = props
            .get("label")
            .and_then(Value::as_str)
            .ok_or_else(|| parse_err(path, format!("{who}: missing required property 'label'")))?
            .to_string();
        let yield_value = match props.get("yield") {
            Some(v) => Some(
                v.as_f64()
                    .ok_or_else(|| parse_err(path, format!("{who}: non-numeric yield")))?,
            ),
            None => None,
        };
        let nbs = match props.get("nbs") {
            Some(v) => v
                .as_array()
                .ok_or_else(|| parse_err(path, format!("{who}: 'nbs' is not an array")))?
                .iter()
                .map(|n| {
                    n.as_u64()
                        .map(|n| n as u32)
                        .ok_or_else(|| parse_err(path, format!("{who}: non-integer neighbor id")))
                })
                .collect::<Result<Vec<u32>>>()?,
            None => Vec::new(),
        };
        let geometry = obj
            .get("geometry")
            .ok_or_else(|| parse_err(path, format!("{who}: missing geometry")))?;
        let geometry = ring_from_geometry(geometry, path, &who)?;

        let plot = Plot {
            id,
            farm_id: 0,
            geometry,
            plot_type,
            label,
            yield_value,
            nbs,
        };
        plot.validate()
            .map_err(|e| parse_err(path, e.to_string()))?;
        plots.push(plot);
    }
    Ok(plots)
}

/// Reads intervention records from a candidate-output or ground-truth
/// GeoJSON file. Features without intervention properties contribute zero
/// levels; values outside [0, 1] by more than a hair are rejected, tiny
/// float noise is clamped.
pub fn read_intervention_geojson(path: &Path) -> Result<Vec<InterventionRecord>> {
    let text = fs::read_to_string(path)?;
    parse_intervention_geojson_str(&text, path)
}

/// Parses intervention records from GeoJSON text; `path` is only used in
/// error messages.
pub fn parse_intervention_geojson_str(text: &str, path: &Path) -> Result<Vec<InterventionRecord>> {
    const SLACK: f64 = 1e-9;
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| parse_err(path, format!("invalid JSON: {e}")))?;
    let features = features_of(&doc, path)?;
    let mut records = Vec::with_capacity(features.len());
    for (index, feature) in features.iter().enumerate() {
        let obj = feature
            .as_object()
            .ok_or_else(|| parse_err(path, format!("feature at index {index} is not an object")))?;
        let who = feature_label(obj, index);
        let props = obj
            .get("properties")
            .and_then(Value::as_object)
            .ok_or_else(|| parse_err(path, format!("{who}: missing properties")))?;
        let id = props
            .get("id")
            .and_then(Value::as_u64)
            .ok_or_else(|| parse_err(path, format!("{who}: missing required property 'id'")))?
            as u32;
        let level = |key: &str| -> Result<f64> {
            let v = match props.get(key) {
                Some(v) => v
                    .as_f64()
                    .ok_or_else(|| parse_err(path, format!("{who}: non-numeric {key}")))?,
                None => 0.0,
            };
            if !v.is_finite() || v < -SLACK || v > 1.0 + SLACK {
                return Err(parse_err(
                    path,
                    format!("{who}: {key} = {v} outside [0, 1]"),
                ));
            }
            Ok(v.clamp(0.0, 1.0))
        };
        records.push(InterventionRecord {
            plot_id: id,
            margin_intervention: level("margin_intervention")?,
            habitat_conversion: level("habitat_conversion")?,
        });
    }
    Ok(records)
}

#[derive(Serialize, serde::Deserialize)]
struct LandscapeDoc {
    crs_note: String,
    boundary: Vec<[f64; 2]>,
    farms: Vec<FarmDoc>,
}

#[derive(Serialize, serde::Deserialize)]
struct FarmDoc {
    id: u32,
    geometry: Vec<[f64; 2]>,
}

fn ring_doc(poly: &Polygon) -> Vec<[f64; 2]> {
    poly.ring().iter().map(|p| [p.x, p.y]).collect()
}

fn ring_from_doc(ring: &[[f64; 2]]) -> Result<Polygon> {
    Polygon::new(ring.iter().map(|[x, y]| Point::new(*x, *y)).collect())
}

/// Writes a landscape under `dir`: one `farm_<k>/input.geojson` per farm
/// plus a `landscape.json` carrying the boundary and farm geometries.
pub fn write_landscape_dir(landscape: &Landscape, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for farm in &landscape.farms {
        write_farm_geojson(farm, &farm_input_path(dir, farm.id))?;
    }
    let doc = LandscapeDoc {
        crs_note: landscape.crs_note.clone(),
        boundary: ring_doc(&landscape.boundary),
        farms: landscape
            .farms
            .iter()
            .map(|f| FarmDoc {
                id: f.id,
                geometry: ring_doc(&f.geometry),
            })
            .collect(),
    };
    write_json(&dir.join("landscape.json"), &doc)
}

pub fn farm_input_path(dir: &Path, farm_id: u32) -> PathBuf {
    dir.join(format!("farm_{farm_id}")).join("input.geojson")
}

/// Reads a landscape previously written by [`write_landscape_dir`].
pub fn read_landscape_dir(dir: &Path) -> Result<Landscape> {
    let meta_path = dir.join("landscape.json");
    let text = fs::read_to_string(&meta_path)?;
    let doc: LandscapeDoc = serde_json::from_str(&text)
        .map_err(|e| parse_err(&meta_path, format!("invalid landscape manifest: {e}")))?;
    let boundary = ring_from_doc(&doc.boundary)?;
    let mut farms = Vec::with_capacity(doc.farms.len());
    for fdoc in &doc.farms {
        let plots_path = farm_input_path(dir, fdoc.id);
        let mut plots = read_farm_geojson(&plots_path)?;
        for p in &mut plots {
            p.farm_id = fdoc.id;
        }
        farms.push(Farm {
            id: fdoc.id,
            geometry: ring_from_doc(&fdoc.geometry)?,
            plots,
        });
    }
    Ok(Landscape {
        farms,
        boundary,
        crs_note: doc.crs_note,
    })
}
