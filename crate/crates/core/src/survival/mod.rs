//! Discrete-time survival modelling and evaluation statistics.

mod loss;
mod stats;

pub use loss::{alignment_loss, nll_survival_loss, total_loss, AlignmentMetric, HAZARD_CLAMP};
pub use stats::{concordance_index, kaplan_meier, logrank_test, stratify, KmCurve, LogrankResult, RiskGroup};

use serde::{Deserialize, Serialize};

use crate::error::{CmtaError, Result};

/// Per-interval hazards with the survival curve and risk score they imply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalOutput {
    pub hazards: Vec<f64>,
    /// `survival[j] = Π_{k≤j} (1 − hazards[k])`
    pub survival: Vec<f64>,
    /// `−Σ_j survival[j]`; higher means earlier expected event.
    pub risk: f64,
}

impl SurvivalOutput {
    pub fn from_hazards(hazards: Vec<f64>) -> Self {
        let survival: Vec<f64> = hazards
            .iter()
            .scan(1.0, |s, h| {
                *s *= 1.0 - h;
                Some(*s)
            })
            .collect();
        let risk = -survival.iter().sum::<f64>();
        SurvivalOutput { hazards, survival, risk }
    }
}

/// Interior thresholds splitting follow-up time into discrete intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEdges {
    edges: Vec<f64>,
}

impl BinEdges {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CmtaError::Binning(format!("bin edges must be finite and strictly increasing: {edges:?}")));
        }
        Ok(BinEdges { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn num_bins(&self) -> usize {
        self.edges.len() + 1
    }

    /// Intervals are closed on the left: a time equal to an edge falls in the
    /// upper interval.
    pub fn bin_of(&self, time: f64) -> usize {
        self.edges.iter().filter(|&&e| e <= time).count()
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Edges at the `1/B, …, (B−1)/B` quantiles of the uncensored times.
pub fn compute_bins(times: &[f64], censored: &[bool], bins: usize) -> Result<BinEdges> {
    if times.len() != censored.len() {
        return Err(CmtaError::dim("compute_bins", &[times.len()], &[censored.len()]));
    }
    if bins < 2 {
        return Err(CmtaError::Binning(format!("need at least 2 bins, got {bins}")));
    }
    let mut events: Vec<f64> = times.iter().zip(censored).filter(|(_, &c)| !c).map(|(&t, _)| t).collect();
    events.sort_by(f64::total_cmp);
    let mut distinct = events.clone();
    distinct.dedup();
    if distinct.len() < bins {
        return Err(CmtaError::Binning(format!(
            "{} distinct uncensored times cannot support {bins} bins; use fewer bins",
            distinct.len()
        )));
    }
    let edges = (1..bins).map(|i| quantile_sorted(&events, i as f64 / bins as f64)).collect();
    BinEdges::new(edges).map_err(|_| {
        CmtaError::Binning(format!("tied uncensored times collapse the {bins}-bin quantiles; use fewer bins"))
    })
}
