//! Habitat-graph construction from interventions and the Integral Index of
//! Connectivity, plus the direction extraction/quantization used to derive
//! placement targets.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Region;
use crate::landscape::{
    realize_intervention_geometry, Direction, DirectionSet, Landscape, PlotType, SplitCenter,
};

/// Square metres per hectare.
const M2_PER_HA: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatchSource {
    #[serde(rename = "existing_habitat")]
    ExistingHabitat,
    #[serde(rename = "converted_habitat")]
    ConvertedHabitat,
    #[serde(rename = "margin_strip")]
    MarginStrip,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HabitatPatch {
    pub id: u32,
    /// Patch area in hectares.
    pub area: f64,
    pub source: PatchSource,
}

/// Area-weighted habitat graph: nodes are habitat patches, edges connect
/// patches whose geometries touch (after optional buffering).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HabitatGraph {
    pub nodes: Vec<HabitatPatch>,
    pub edges: Vec<(u32, u32)>,
    /// Total landscape area in hectares.
    pub total_landscape_area: f64,
}

impl HabitatGraph {
    pub fn new(
        nodes: Vec<HabitatPatch>,
        edges: Vec<(u32, u32)>,
        total_landscape_area: f64,
    ) -> Result<Self> {
        if total_landscape_area <= 0.0 {
            return Err(Error::InvalidInput(
                "total_landscape_area must be positive".into(),
            ));
        }
        let graph = HabitatGraph {
            nodes,
            edges,
            total_landscape_area,
        };
        graph.validate()?;
        Ok(graph)
    }

    pub fn validate(&self) -> Result<()> {
        for node in &self.nodes {
            if node.area <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "patch {} has non-positive area {}",
                    node.id, node.area
                )));
            }
        }
        for (u, v) in &self.edges {
            if u == v {
                return Err(Error::InvalidInput(format!("self-loop on patch {u}")));
            }
            for id in [u, v] {
                if !self.nodes.iter().any(|n| n.id == *id) {
                    return Err(Error::InvalidInput(format!(
                        "edge references missing patch {id}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn adjacency(&self) -> BTreeMap<u32, Vec<u32>> {
        let mut adj: BTreeMap<u32, Vec<u32>> =
            self.nodes.iter().map(|n| (n.id, Vec::new())).collect();
        for (u, v) in &self.edges {
            adj.get_mut(u).unwrap().push(*v);
            adj.get_mut(v).unwrap().push(*u);
        }
        adj
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityScore {
    /// Integral Index of Connectivity, dimensionless in (0, 1] for patch
    /// sets covering at most the landscape.
    pub iic: f64,
    /// Patch count per connected component.
    pub component_sizes: Vec<usize>,
}

/// Per-plot direction choices for both intervention kinds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PlotDirections {
    pub margin: DirectionSet,
    pub habitat: DirectionSet,
}

/// Stage-3 target/prediction file row. Direction strings are exactly
/// "north-west", "north-east", "south-west", "south-east".
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DirectionRecord {
    pub plot_id: u32,
    pub plot_type: String,
    pub label: String,
    pub margin_directions: Vec<String>,
    pub habitat_directions: Vec<String>,
}

impl DirectionRecord {
    pub fn direction_sets(&self) -> Result<PlotDirections> {
        Ok(PlotDirections {
            margin: DirectionSet::from_names(&self.margin_directions)?,
            habitat: DirectionSet::from_names(&self.habitat_directions)?,
        })
    }
}

/// Builds the habitat graph for a landscape under the given per-plot
/// intervention directions, keyed by (farm id, plot id). Nodes are existing
/// habitat plots plus realized margin strips and converted quadrants; an
/// edge joins two patches whose geometries come within `adjacency_buffer`
/// of each other.
pub fn build_habitat_graph(
    landscape: &Landscape,
    interventions: &BTreeMap<(u32, u32), PlotDirections>,
    margin_width: f64,
    adjacency_buffer: f64,
) -> Result<HabitatGraph> {
    for (farm_id, plot_id) in interventions.keys() {
        let farm = landscape
            .farm(*farm_id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown farm {farm_id}")))?;
        farm.plot(*plot_id)
            .ok_or_else(|| Error::InvalidInput(format!("farm {farm_id} has no plot {plot_id}")))?;
    }

    let mut geometries: Vec<(Region, PatchSource)> = Vec::new();
    for farm in &landscape.farms {
        for plot in &farm.plots {
            if plot.plot_type == PlotType::Hab {
                geometries.push((
                    Region::from_polygon(plot.geometry.clone()),
                    PatchSource::ExistingHabitat,
                ));
            }
            if let Some(dirs) = interventions.get(&(farm.id, plot.id)) {
                let realized = realize_intervention_geometry(
                    &plot.geometry,
                    dirs.margin,
                    dirs.habitat,
                    margin_width,
                    SplitCenter::Centroid,
                )?;
                for (_, region) in realized.habitat_regions {
                    if !region.is_empty() {
                        geometries.push((region, PatchSource::ConvertedHabitat));
                    }
                }
                for (_, region) in realized.margin_strips {
                    if !region.is_empty() {
                        geometries.push((region, PatchSource::MarginStrip));
                    }
                }
            }
        }
    }

    let nodes: Vec<HabitatPatch> = geometries
        .iter()
        .enumerate()
        .map(|(i, (region, source))| HabitatPatch {
            id: i as u32,
            area: region.area / M2_PER_HA,
            source: *source,
        })
        .collect();

    let mut edges = Vec::new();
    for i in 0..geometries.len() {
        for j in (i + 1)..geometries.len() {
            if geometries[i].0.distance(&geometries[j].0) <= adjacency_buffer + 1e-9 {
                edges.push((i as u32, j as u32));
            }
        }
    }

    HabitatGraph::new(nodes, edges, landscape.boundary.area() / M2_PER_HA)
}

/// Integral Index of Connectivity:
/// `IIC = [sum_i sum_j a_i * a_j / (1 + nl_ij)] / A_L^2`, where `nl_ij` is
/// the minimum number of links between patches i and j (0 for i = j) and
/// pairs in different components contribute nothing.
pub fn compute_iic(graph: &HabitatGraph) -> Result<ConnectivityScore> {
    if graph.total_landscape_area <= 0.0 {
        return Err(Error::InvalidInput(
            "total_landscape_area must be positive".into(),
        ));
    }
    if graph.nodes.is_empty() {
        return Ok(ConnectivityScore {
            iic: 0.0,
            component_sizes: Vec::new(),
        });
    }
    graph.validate()?;

    let adj = graph.adjacency();
    let area: BTreeMap<u32, f64> = graph.nodes.iter().map(|n| (n.id, n.area)).collect();

    let mut numer = 0.0;
    let mut seen: BTreeMap<u32, bool> = BTreeMap::new();
    let mut component_sizes = Vec::new();

    for node in &graph.nodes {
        // BFS link counts from this node.
        let mut dist: BTreeMap<u32, usize> = BTreeMap::new();
        dist.insert(node.id, 0);
        let mut queue = VecDeque::from([node.id]);
        while let Some(u) = queue.pop_front() {
            let du = dist[&u];
            for v in &adj[&u] {
                if !dist.contains_key(v) {
                    dist.insert(*v, du + 1);
                    queue.push_back(*v);
                }
            }
        }
        for (v, nl) in &dist {
            numer += area[&node.id] * area[v] / (1.0 + *nl as f64);
        }
        if !seen.contains_key(&node.id) {
            for v in dist.keys() {
                seen.insert(*v, true);
            }
            component_sizes.push(dist.len());
        }
    }

    Ok(ConnectivityScore {
        iic: numer / (graph.total_landscape_area * graph.total_landscape_area),
        component_sizes,
    })
}

/// Returns the quadrant directions whose intervention fraction strictly
/// exceeds `threshold`.
pub fn extract_directions(fractions: &[(Direction, f64)], threshold: f64) -> Result<DirectionSet> {
    if threshold <= 0.0 || threshold >= 1.0 {
        return Err(Error::InvalidInput(format!(
            "threshold {threshold} must lie in (0, 1)"
        )));
    }
    let mut set = DirectionSet::EMPTY;
    for (dir, frac) in fractions {
        if !(0.0..=1.0).contains(frac) {
            return Err(Error::InvalidInput(format!(
                "fraction {frac} for {} outside [0, 1]",
                dir.as_str()
            )));
        }
        if *frac > threshold {
            set.insert(*dir);
        }
    }
    Ok(set)
}

/// Maps a direction set to the fractional intervention level it implies:
/// |dirs| / 4, one of {0, 0.25, 0.5, 0.75, 1.0}.
pub fn quantize_directions(dirs: DirectionSet) -> f64 {
    dirs.len() as f64 / 4.0
}
