//! Two-level goal utility and selection.
//!
//! First level trades path length against entropy gain at the goal; the best
//! `shortlist_n` candidates are then re-ranked with the information their
//! paths collect from mapped landmarks.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::fisher::PathInformation;
use crate::frontier::FrontierCluster;
use crate::grid::Cell;
use crate::planner::Path;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UtilityParams {
    /// Weight of the distance term in u1.
    pub alpha: f64,
    /// Weight of u1 in u2.
    pub beta: f64,
    pub shortlist_n: usize,
}

impl Default for UtilityParams {
    fn default() -> Self {
        Self {
            alpha: 0.35,
            beta: 0.4,
            shortlist_n: 7,
        }
    }
}

impl UtilityParams {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if self.shortlist_n == 0 {
            return Err("shortlist size must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateGoal {
    pub cluster: FrontierCluster,
    pub path: Path,
    /// Path length in meters, clamped below at one grid resolution.
    pub rho: f64,
    /// Entropy gain at the goal in bits.
    pub delta_e: f64,
    pub theta_star: f64,
    pub u1: f64,
    pub info: Option<PathInformation>,
    pub u2: Option<f64>,
}

impl CandidateGoal {
    pub fn new(cluster: FrontierCluster, path: Path, rho: f64, delta_e: f64, theta_star: f64) -> Self {
        Self {
            cluster,
            path,
            rho,
            delta_e,
            theta_star,
            u1: 0.0,
            info: None,
            u2: None,
        }
    }

    pub fn goal(&self) -> Cell {
        self.cluster.candidate
    }
}

/// Ascending rho, then row-major goal index.
pub fn nearer_first(a: &CandidateGoal, b: &CandidateGoal) -> Ordering {
    a.rho
        .total_cmp(&b.rho)
        .then_with(|| (a.goal().j, a.goal().i).cmp(&(b.goal().j, b.goal().i)))
}

fn rank_by(score: impl Fn(&CandidateGoal) -> f64) -> impl Fn(&CandidateGoal, &CandidateGoal) -> Ordering {
    move |a, b| score(b).total_cmp(&score(a)).then_with(|| nearer_first(a, b))
}

/// Sets `u1` on every candidate. Normalizers are reciprocal maxima over the set.
pub fn compute_u1(candidates: &mut [CandidateGoal], params: &UtilityParams) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    let max_inv_rho = candidates.iter().map(|c| 1.0 / c.rho).fold(0.0, f64::max);
    let max_de = candidates.iter().map(|c| c.delta_e).fold(0.0, f64::max);
    for c in candidates.iter_mut() {
        debug_assert!(c.rho > 0.0 && c.delta_e >= 0.0);
        let dist = (1.0 / c.rho) / max_inv_rho;
        let gain = if max_de > 0.0 { c.delta_e / max_de } else { 0.0 };
        c.u1 = params.alpha * dist + (1.0 - params.alpha) * gain;
    }
    Ok(())
}

/// Top `n` by u1; ties go to the shorter path, then the row-major goal index.
pub fn shortlist(candidates: &[CandidateGoal], n: usize) -> Vec<CandidateGoal> {
    let mut ranked = candidates.to_vec();
    ranked.sort_by(rank_by(|c| c.u1));
    ranked.truncate(n);
    ranked
}

/// Sets `u2` on every shortlisted candidate and returns the index of the best.
pub fn select_best(shortlisted: &mut [CandidateGoal], params: &UtilityParams) -> Result<usize> {
    if shortlisted.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    for c in shortlisted.iter_mut() {
        let info = c.info.as_ref().map_or(0.0, |i| i.value);
        c.u2 = Some(params.beta * c.u1 + (1.0 - params.beta) * info);
    }
    let order = rank_by(|c| c.u2.unwrap_or(f64::NEG_INFINITY));
    let mut best = 0;
    for k in 1..shortlisted.len() {
        if order(&shortlisted[k], &shortlisted[best]) == Ordering::Less {
            best = k;
        }
    }
    Ok(best)
}
