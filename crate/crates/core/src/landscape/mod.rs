//! Domain model for farms and plots, the synthetic landscape generator, and
//! landscape-file serialization.

mod generate;
mod geojson;
mod realize;

pub use generate::{generate_landscape, GeneratorConfig, LabelWeight, NeighborScope, YieldDistribution};
pub use geojson::{
    farm_input_path, parse_intervention_geojson_str, read_farm_geojson,
    read_intervention_geojson, read_landscape_dir, write_farm_geojson,
    write_intervention_geojson, write_landscape_dir,
};
pub use realize::{realize_intervention_geometry, RealizedInterventions, SplitCenter};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Polygon;

/// Land-use class of a plot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlotType {
    #[serde(rename = "ag_plot")]
    Ag,
    #[serde(rename = "hab_plot")]
    Hab,
}

impl PlotType {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlotType::Ag => "ag_plot",
            PlotType::Hab => "hab_plot",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Plot {
    pub id: u32,
    pub farm_id: u32,
    pub geometry: Polygon,
    pub plot_type: PlotType,
    pub label: String,
    /// Tonnes per hectare; present exactly for agricultural plots.
    pub yield_value: Option<f64>,
    /// Ids of plots sharing a boundary segment.
    pub nbs: Vec<u32>,
}

impl Plot {
    pub fn validate(&self) -> Result<()> {
        match (self.plot_type, self.yield_value) {
            (PlotType::Hab, Some(_)) => Err(Error::InvalidInput(format!(
                "plot {}: habitat plots cannot carry a yield",
                self.id
            ))),
            (PlotType::Ag, None) => Err(Error::InvalidInput(format!(
                "plot {}: agricultural plots need a yield",
                self.id
            ))),
            (PlotType::Ag, Some(y)) if y < 0.0 => Err(Error::InvalidInput(format!(
                "plot {}: negative yield {y}",
                self.id
            ))),
            _ => Ok(()),
        }
    }

    pub fn is_ag(&self) -> bool {
        self.plot_type == PlotType::Ag
    }
}

#[derive(Debug, Clone)]
pub struct Farm {
    pub id: u32,
    pub geometry: Polygon,
    pub plots: Vec<Plot>,
}

impl Farm {
    /// Checks per-plot invariants and neighbor symmetry. Neighbor ids that
    /// do not resolve within this farm are left to
    /// [`Landscape::validate`], which handles cross-farm references.
    pub fn validate(&self) -> Result<()> {
        for plot in &self.plots {
            plot.validate()?;
            for nb in &plot.nbs {
                if let Some(other) = self.plot(*nb) {
                    if !other.nbs.contains(&plot.id) {
                        return Err(Error::InvalidInput(format!(
                            "neighbor list not symmetric between plots {} and {nb}",
                            plot.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn plot(&self, id: u32) -> Option<&Plot> {
        self.plots.iter().find(|p| p.id == id)
    }

    pub fn ag_plots(&self) -> impl Iterator<Item = &Plot> {
        self.plots.iter().filter(|p| p.is_ag())
    }
}

#[derive(Debug, Clone)]
pub struct Landscape {
    pub farms: Vec<Farm>,
    pub boundary: Polygon,
    pub crs_note: String,
}

impl Landscape {
    pub fn farm(&self, id: u32) -> Option<&Farm> {
        self.farms.iter().find(|f| f.id == id)
    }

    pub fn total_plots(&self) -> usize {
        self.farms.iter().map(|f| f.plots.len()).sum()
    }

    /// Validates per-farm invariants plus resolution and symmetry of
    /// neighbor ids that point at plots in other farms.
    pub fn validate(&self) -> Result<()> {
        for farm in &self.farms {
            farm.validate()?;
        }
        for farm in &self.farms {
            for plot in &farm.plots {
                for nb in &plot.nbs {
                    if farm.plot(*nb).is_some() {
                        continue;
                    }
                    let other = self
                        .farms
                        .iter()
                        .filter(|f| f.id != farm.id)
                        .flat_map(|f| f.plots.iter())
                        .find(|p| p.id == *nb)
                        .ok_or_else(|| {
                            Error::InvalidInput(format!(
                                "plot {} in farm {}: neighbor {nb} does not exist anywhere",
                                plot.id, farm.id
                            ))
                        })?;
                    if !other.nbs.contains(&plot.id) {
                        return Err(Error::InvalidInput(format!(
                            "cross-farm neighbor list not symmetric between plots {} and {nb}",
                            plot.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-plot fractional intervention levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub plot_id: u32,
    pub margin_intervention: f64,
    pub habitat_conversion: f64,
}

impl InterventionRecord {
    pub fn zero(plot_id: u32) -> Self {
        InterventionRecord {
            plot_id,
            margin_intervention: 0.0,
            habitat_conversion: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("margin_intervention", self.margin_intervention),
            ("habitat_conversion", self.habitat_conversion),
        ] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "plot {}: {name} = {v} outside [0, 1]",
                    self.plot_id
                )));
            }
        }
        Ok(())
    }
}

/// Quadrant directions produced by splitting a plot with a horizontal and a
/// vertical line through its centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    NorthWest,
    NorthEast,
    SouthWest,
    SouthEast,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::NorthWest,
        Direction::NorthEast,
        Direction::SouthWest,
        Direction::SouthEast,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::NorthWest => "north-west",
            Direction::NorthEast => "north-east",
            Direction::SouthWest => "south-west",
            Direction::SouthEast => "south-east",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "north-west" => Ok(Direction::NorthWest),
            "north-east" => Ok(Direction::NorthEast),
            "south-west" => Ok(Direction::SouthWest),
            "south-east" => Ok(Direction::SouthEast),
            other => Err(Error::InvalidInput(format!(
                "unknown direction '{other}' (expected north-west, north-east, south-west or south-east)"
            ))),
        }
    }

    fn bit(&self) -> u8 {
        match self {
            Direction::NorthWest => 1,
            Direction::NorthEast => 2,
            Direction::SouthWest => 4,
            Direction::SouthEast => 8,
        }
    }
}

/// A subset of the four quadrant directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct DirectionSet(u8);

impl DirectionSet {
    pub const EMPTY: DirectionSet = DirectionSet(0);

    pub fn all() -> Self {
        DirectionSet(0b1111)
    }

    pub fn insert(&mut self, d: Direction) {
        self.0 |= d.bit();
    }

    pub fn with(mut self, d: Direction) -> Self {
        self.insert(d);
        self
    }

    pub fn contains(&self, d: Direction) -> bool {
        self.0 & d.bit() != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn union(&self, other: DirectionSet) -> DirectionSet {
        DirectionSet(self.0 | other.0)
    }

    pub fn intersection(&self, other: DirectionSet) -> DirectionSet {
        DirectionSet(self.0 & other.0)
    }

    /// Iterates in the fixed order NW, NE, SW, SE.
    pub fn iter(&self) -> impl Iterator<Item = Direction> + '_ {
        Direction::ALL.into_iter().filter(|d| self.contains(*d))
    }

    pub fn names(&self) -> Vec<String> {
        self.iter().map(|d| d.as_str().to_string()).collect()
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut set = DirectionSet::EMPTY;
        for n in names {
            set.insert(Direction::parse(n.as_ref())?);
        }
        Ok(set)
    }
}

impl FromIterator<Direction> for DirectionSet {
    fn from_iter<T: IntoIterator<Item = Direction>>(iter: T) -> Self {
        let mut set = DirectionSet::EMPTY;
        for d in iter {
            set.insert(d);
        }
        set
    }
}

/// One-time and yearly costs for an intervention, in currency units per ha.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub implementation: f64,
    pub maintenance: f64,
}

/// Prices and costs shared by prompts, the budget validator, and the
/// built-in ground-truth rules.
#[derive(Debug, Clone, PartialEq)]
pub struct EconomicParams {
    /// Crop → price in USD per tonne.
    pub crop_prices: IndexMap<String, f64>,
    pub margin: CostEntry,
    pub habitat: CostEntry,
    /// Agricultural upkeep in USD/ha/year.
    pub ag_maintenance: f64,
}

pub const DEFAULT_CROPS: [&str; 6] = [
    "Soybeans",
    "Oats",
    "Corn",
    "Canola/rapeseed",
    "Barley",
    "Spring wheat",
];

impl Default for EconomicParams {
    fn default() -> Self {
        let mut crop_prices = IndexMap::new();
        for (crop, price) in [
            ("Soybeans", 370.0),
            ("Oats", 95.0),
            ("Corn", 190.0),
            ("Canola/rapeseed", 1100.0),
            ("Barley", 120.0),
            ("Spring wheat", 200.0),
        ] {
            crop_prices.insert(crop.to_string(), price);
        }
        EconomicParams {
            crop_prices,
            margin: CostEntry {
                implementation: 400.0,
                maintenance: 60.0,
            },
            habitat: CostEntry {
                implementation: 300.0,
                maintenance: 70.0,
            },
            ag_maintenance: 100.0,
        }
    }
}

impl EconomicParams {
    pub fn validate(&self) -> Result<()> {
        for crop in DEFAULT_CROPS {
            match self.crop_prices.get(crop) {
                Some(p) if *p > 0.0 => {}
                Some(p) => {
                    return Err(Error::InvalidInput(format!(
                        "crop price for {crop} must be positive, got {p}"
                    )))
                }
                None => {
                    return Err(Error::InvalidInput(format!(
                        "economic params must list a price for {crop}"
                    )))
                }
            }
        }
        for (name, v) in [
            ("margin implementation", self.margin.implementation),
            ("margin maintenance", self.margin.maintenance),
            ("habitat implementation", self.habitat.implementation),
            ("habitat maintenance", self.habitat.maintenance),
            ("agriculture maintenance", self.ag_maintenance),
        ] {
            if v <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "{name} cost must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn price(&self, crop: &str) -> Option<f64> {
        self.crop_prices.get(crop).copied()
    }
}

// The on-disk JSON document nests margin/habitat/agriculture under "costs".
#[derive(Serialize, Deserialize)]
struct ParamsDoc {
    crop_prices: IndexMap<String, f64>,
    costs: CostsDoc,
}

#[derive(Serialize, Deserialize)]
struct CostsDoc {
    margin: CostEntry,
    habitat: CostEntry,
    agriculture: AgCosts,
}

#[derive(Serialize, Deserialize)]
struct AgCosts {
    maintenance: f64,
}

impl Serialize for EconomicParams {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsDoc {
            crop_prices: self.crop_prices.clone(),
            costs: CostsDoc {
                margin: self.margin,
                habitat: self.habitat,
                agriculture: AgCosts {
                    maintenance: self.ag_maintenance,
                },
            },
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EconomicParams {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = ParamsDoc::deserialize(deserializer)?;
        Ok(EconomicParams {
            crop_prices: doc.crop_prices,
            margin: doc.costs.margin,
            habitat: doc.costs.habitat,
            ag_maintenance: doc.costs.agriculture.maintenance,
        })
    }
}
