//! Synthetic landscape generation: a rectangular cluster boundary is split
//! into farms by Voronoi tessellation of random seed points, each farm is
//! split into plots the same way, and plot attributes (type, label, yield)
//! are drawn from configured distributions.

use indexmap::IndexMap;
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};
use crate::geom::{voronoi_partition, Point, Polygon};
use crate::landscape::{Farm, Landscape, Plot, PlotType};

/// Bounded retries for degenerate Voronoi seed sets.
const MAX_PARTITION_RETRIES: usize = 16;
/// Neighbors share at least this much boundary length (metres).
const NEIGHBOR_MIN_SHARED: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LabelWeight {
    pub label: String,
    pub weight: f64,
}

/// Truncated-normal yield sampler parameters (tonnes/ha).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YieldDistribution {
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
}

impl YieldDistribution {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        let normal = match Normal::new(self.mean, self.std_dev) {
            Ok(n) => n,
            Err(_) => return self.mean.clamp(self.min, self.max),
        };
        for _ in 0..128 {
            let v = normal.sample(rng);
            if v >= self.min && v <= self.max {
                return v;
            }
        }
        self.mean.clamp(self.min, self.max)
    }
}

/// Whether plot neighbor lists may cross farm boundaries. Cross-farm scope
/// switches plot ids to a landscape-wide sequence so references stay
/// unambiguous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeighborScope {
    #[default]
    WithinFarm,
    CrossFarm,
}

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub n_farms: u32,
    pub plots_per_farm: u32,
    /// Probability that a plot is agricultural rather than habitat.
    pub ag_probability: f64,
    /// Boundary rectangle extent in metres.
    pub extent: (f64, f64),
    pub ag_labels: Vec<LabelWeight>,
    pub hab_labels: Vec<LabelWeight>,
    pub yields: IndexMap<String, YieldDistribution>,
    pub neighbor_scope: NeighborScope,
    pub crs_note: String,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let uniform = |labels: &[&str]| {
            labels
                .iter()
                .map(|l| LabelWeight {
                    label: l.to_string(),
                    weight: 1.0,
                })
                .collect::<Vec<_>>()
        };
        let mut yields = IndexMap::new();
        for (crop, mean, sd) in [
            ("Soybeans", 2.9, 0.7),
            ("Oats", 2.8, 0.9),
            ("Corn", 9.5, 2.0),
            ("Canola/rapeseed", 2.3, 0.6),
            ("Barley", 3.5, 0.9),
            ("Spring wheat", 3.1, 0.8),
        ] {
            yields.insert(
                crop.to_string(),
                YieldDistribution {
                    mean,
                    std_dev: sd,
                    min: 0.2,
                    max: mean + 4.0 * sd,
                },
            );
        }
        GeneratorConfig {
            n_farms: 5,
            plots_per_farm: 9,
            ag_probability: 0.6,
            extent: (1000.0, 1000.0),
            ag_labels: uniform(&[
                "Soybeans",
                "Oats",
                "Corn",
                "Canola/rapeseed",
                "Barley",
                "Spring wheat",
            ]),
            hab_labels: uniform(&[
                "Broadleaf",
                "Grassland",
                "Shrubland",
                "Wetland",
                "Exposed land/barren",
            ]),
            yields,
            neighbor_scope: NeighborScope::WithinFarm,
            crs_note: "local planar grid, metres".to_string(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_farms < 1 {
            return Err(Error::InvalidInput("n_farms must be at least 1".into()));
        }
        if self.plots_per_farm < 1 {
            return Err(Error::InvalidInput("plots_per_farm must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ag_probability) {
            return Err(Error::InvalidInput(format!(
                "ag_probability {} outside [0, 1]",
                self.ag_probability
            )));
        }
        if self.extent.0 <= 0.0 || self.extent.1 <= 0.0 {
            return Err(Error::InvalidInput("boundary extent must be positive".into()));
        }
        for (name, labels) in [("ag_labels", &self.ag_labels), ("hab_labels", &self.hab_labels)] {
            if labels.is_empty() {
                return Err(Error::InvalidInput(format!("{name} must not be empty")));
            }
            let total: f64 = labels.iter().map(|l| l.weight).sum();
            if labels.iter().any(|l| l.weight < 0.0) || total <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "{name} weights must be nonnegative and normalizable"
                )));
            }
        }
        for lw in &self.ag_labels {
            if !self.yields.contains_key(&lw.label) {
                return Err(Error::InvalidInput(format!(
                    "no yield distribution configured for crop '{}'",
                    lw.label
                )));
            }
        }
        Ok(())
    }
}

/// Samples `n` points inside `boundary`, keeping a minimum pairwise
/// separation where possible.
fn sample_points(
    rng: &mut impl Rng,
    boundary: &Polygon,
    n: usize,
    min_sep: f64,
) -> Result<Vec<Point>> {
    let (lo, hi) = boundary.bbox();
    let mut points: Vec<Point> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut placed = false;
        for attempt in 0..400 {
            let p = Point::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
            if !boundary.contains(p) {
                continue;
            }
            // Relax the separation requirement on late attempts so thin
            // cells cannot wedge the generator.
            let sep = if attempt < 200 { min_sep } else { min_sep * 0.01 };
            if points.iter().all(|q| q.dist(p) > sep) {
                points.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place {n} seed points inside the region"
            )));
        }
    }
    Ok(points)
}

fn weighted_label(rng: &mut impl Rng, labels: &[LabelWeight]) -> String {
    let dist = WeightedIndex::new(labels.iter().map(|l| l.weight))
        .expect("weights validated as normalizable");
    labels[dist.sample(rng)].label.clone()
}

/// Deterministically generates a landscape for a seed and configuration.
pub fn generate_landscape(seed: u64, cfg: &GeneratorConfig) -> Result<Landscape> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = cfg.extent;
    let boundary = Polygon::rect(0.0, 0.0, w, h)?;

    let farm_cells = partition_with_retries(
        &mut rng,
        &boundary,
        cfg.n_farms as usize,
        w.min(h) / (cfg.n_farms as f64 * 4.0),
    )?;

    let mut farms = Vec::with_capacity(farm_cells.len());
    let mut next_global_id: u32 = 1;
    for (k, cell) in farm_cells.into_iter().enumerate() {
        let farm_id = (k + 1) as u32;
        let (lo, hi) = cell.bbox();
        let diag = lo.dist(hi);
        let plot_cells = partition_with_retries(
            &mut rng,
            &cell,
            cfg.plots_per_farm as usize,
            diag / (cfg.plots_per_farm as f64 * 4.0),
        )?;

        let mut plots = Vec::with_capacity(plot_cells.len());
        for (i, geometry) in plot_cells.into_iter().enumerate() {
            let id = match cfg.neighbor_scope {
                NeighborScope::WithinFarm => (i + 1) as u32,
                NeighborScope::CrossFarm => {
                    let id = next_global_id;
                    next_global_id += 1;
                    id
                }
            };
            let is_ag = rng.gen_bool(cfg.ag_probability);
            let (plot_type, label, yield_value) = if is_ag {
                let label = weighted_label(&mut rng, &cfg.ag_labels);
                let dist = cfg.yields[&label];
                let y = dist.sample(&mut rng).max(0.0);
                (PlotType::Ag, label, Some(y))
            } else {
                (PlotType::Hab, weighted_label(&mut rng, &cfg.hab_labels), None)
            };
            plots.push(Plot {
                id,
                farm_id,
                geometry,
                plot_type,
                label,
                yield_value,
                nbs: Vec::new(),
            });
        }

        fill_neighbors(&mut plots);
        farms.push(Farm {
            id: farm_id,
            geometry: cell,
            plots,
        });
    }

    if cfg.neighbor_scope == NeighborScope::CrossFarm {
        fill_cross_farm_neighbors(&mut farms);
    }

    let landscape = Landscape {
        farms,
        boundary,
        crs_note: cfg.crs_note.clone(),
    };
    landscape.validate()?;
    Ok(landscape)
}

fn partition_with_retries(
    rng: &mut impl Rng,
    boundary: &Polygon,
    n: usize,
    min_sep: f64,
) -> Result<Vec<Polygon>> {
    let mut last_err = None;
    for _ in 0..MAX_PARTITION_RETRIES {
        let points = match sample_points(rng, boundary, n, min_sep) {
            Ok(p) => p,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        match voronoi_partition(boundary, &points) {
            Ok(cells) => return Ok(cells),
            Err(e) => last_err = Some(e),
        }
    }
    Err(Error::Generation(format!(
        "voronoi partition failed after {MAX_PARTITION_RETRIES} attempts: {}",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

fn fill_neighbors(plots: &mut [Plot]) {
    let n = plots.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let shared = plots[i]
                .geometry
                .shared_boundary_length(&plots[j].geometry, 1e-6);
            if shared > NEIGHBOR_MIN_SHARED {
                let (a, b) = (plots[i].id, plots[j].id);
                plots[i].nbs.push(b);
                plots[j].nbs.push(a);
            }
        }
    }
    for p in plots {
        p.nbs.sort_unstable();
    }
}

fn fill_cross_farm_neighbors(farms: &mut [Farm]) {
    let n = farms.len();
    for a in 0..n {
        for b in (a + 1)..n {
            for i in 0..farms[a].plots.len() {
                for j in 0..farms[b].plots.len() {
                    let shared = farms[a].plots[i]
                        .geometry
                        .shared_boundary_length(&farms[b].plots[j].geometry, 1e-6);
                    if shared > NEIGHBOR_MIN_SHARED {
                        let (pa, pb) = (farms[a].plots[i].id, farms[b].plots[j].id);
                        farms[a].plots[i].nbs.push(pb);
                        farms[b].plots[j].nbs.push(pa);
                    }
                }
            }
        }
    }
    for farm in farms {
        for p in &mut farm.plots {
            p.nbs.sort_unstable();
        }
    }
}
