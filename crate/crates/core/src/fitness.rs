//! Stage-specific error metrics and the shared error-to-fitness transform.
//!
//! All three errors average a per-plot contribution in [0, 2] over the set
//! of scored plots; fitness is `1 / (error + epsilon)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::connectivity::{quantize_directions, PlotDirections};
use crate::error::{Error, Result};
use crate::landscape::InterventionRecord;

/// Default epsilon for the fitness transform.
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotError {
    pub plot_id: u32,
    pub contribution: f64,
}

/// Bookkeeping accumulated while scoring a candidate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Plots scored as zero interventions because the prediction omitted
    /// them.
    pub missing_pred: usize,
    /// Plots present in the prediction but absent from the ground truth.
    pub missing_gt: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessReport {
    pub error: f64,
    pub fitness: f64,
    pub per_plot: Vec<PlotError>,
    pub diagnostics: Diagnostics,
}

impl FitnessReport {
    pub fn from_parts(per_plot: Vec<PlotError>, diagnostics: Diagnostics, epsilon: f64) -> Result<Self> {
        let error = if per_plot.is_empty() {
            0.0
        } else {
            per_plot.iter().map(|p| p.contribution).sum::<f64>() / per_plot.len() as f64
        };
        Ok(FitnessReport {
            error,
            fitness: fitness_of(error, epsilon)?,
            per_plot,
            diagnostics,
        })
    }

    /// A report carrying a flat penalty error (failed candidates).
    pub fn penalty(error: f64, epsilon: f64, note: impl Into<String>) -> Result<Self> {
        Ok(FitnessReport {
            error,
            fitness: fitness_of(error, epsilon)?,
            per_plot: Vec::new(),
            diagnostics: Diagnostics {
                notes: vec![note.into()],
                ..Diagnostics::default()
            },
        })
    }
}

/// `1 - |a ∩ b| / |a ∪ b|`; two empty sets count as a perfect match (0).
pub fn jaccard_distance(
    a: crate::landscape::DirectionSet,
    b: crate::landscape::DirectionSet,
) -> f64 {
    let union = a.union(b).len();
    if union == 0 {
        return 0.0;
    }
    1.0 - a.intersection(b).len() as f64 / union as f64
}

fn align_ids<K: Ord + Copy, A, B>(
    pred: &BTreeMap<K, A>,
    gt: &BTreeMap<K, B>,
) -> (Vec<K>, Diagnostics) {
    let mut ids: Vec<K> = gt.keys().copied().collect();
    let mut diagnostics = Diagnostics::default();
    for k in pred.keys() {
        if !gt.contains_key(k) {
            ids.push(*k);
            diagnostics.missing_gt += 1;
        }
    }
    diagnostics.missing_pred = gt.keys().filter(|k| !pred.contains_key(k)).count();
    ids.sort_unstable();
    (ids, diagnostics)
}

/// Mean absolute error between predicted and ground-truth intervention
/// levels: `(1/N) * sum(|m_gt - m_p| + |h_gt - h_p|)`. Plots missing from
/// either side are treated as zero interventions and counted in the
/// diagnostics.
pub fn error_npv(
    pred: &BTreeMap<u32, InterventionRecord>,
    gt: &BTreeMap<u32, InterventionRecord>,
    epsilon: f64,
) -> Result<FitnessReport> {
    for rec in pred.values().chain(gt.values()) {
        rec.validate()?;
    }
    let (ids, diagnostics) = align_ids(pred, gt);
    let per_plot = ids
        .iter()
        .map(|id| {
            let p = pred.get(id).copied().unwrap_or(InterventionRecord::zero(*id));
            let g = gt.get(id).copied().unwrap_or(InterventionRecord::zero(*id));
            PlotError {
                plot_id: *id,
                contribution: (g.margin_intervention - p.margin_intervention).abs()
                    + (g.habitat_conversion - p.habitat_conversion).abs(),
            }
        })
        .collect();
    FitnessReport::from_parts(per_plot, diagnostics, epsilon)
}

/// Mean per-plot sum of Jaccard distances between predicted and
/// ground-truth margin and habitat direction sets.
pub fn error_conn(
    pred: &BTreeMap<u32, PlotDirections>,
    gt: &BTreeMap<u32, PlotDirections>,
    epsilon: f64,
) -> Result<FitnessReport> {
    let (ids, diagnostics) = align_ids(pred, gt);
    let per_plot = ids
        .iter()
        .map(|id| {
            let p = pred.get(id).copied().unwrap_or_default();
            let g = gt.get(id).copied().unwrap_or_default();
            PlotError {
                plot_id: *id,
                contribution: jaccard_distance(g.margin, p.margin)
                    + jaccard_distance(g.habitat, p.habitat),
            }
        })
        .collect();
    FitnessReport::from_parts(per_plot, diagnostics, epsilon)
}

/// Mean absolute error between predicted fractional amounts and the target
/// amounts implied by the ground-truth direction sets:
/// `(1/N) * sum(| |MD_gt|/4 - m_p | + | |HD_gt|/4 - h_p |)`.
pub fn error_nudge(
    pred: &BTreeMap<u32, InterventionRecord>,
    gt_dirs: &BTreeMap<u32, PlotDirections>,
    epsilon: f64,
) -> Result<FitnessReport> {
    for rec in pred.values() {
        rec.validate()?;
    }
    let (ids, diagnostics) = align_ids(pred, gt_dirs);
    let per_plot = ids
        .iter()
        .map(|id| {
            let p = pred.get(id).copied().unwrap_or(InterventionRecord::zero(*id));
            let g = gt_dirs.get(id).copied().unwrap_or_default();
            PlotError {
                plot_id: *id,
                contribution: (quantize_directions(g.margin) - p.margin_intervention).abs()
                    + (quantize_directions(g.habitat) - p.habitat_conversion).abs(),
            }
        })
        .collect();
    FitnessReport::from_parts(per_plot, diagnostics, epsilon)
}

/// `1 / (error + epsilon)`.
pub fn fitness_of(error: f64, epsilon: f64) -> Result<f64> {
    if error < 0.0 || !error.is_finite() {
        return Err(Error::InvalidInput(format!(
            "error must be a nonnegative finite value, got {error}"
        )));
    }
    if epsilon <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    Ok(1.0 / (error + epsilon))
}
