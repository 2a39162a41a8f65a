use serde::Serialize;

use super::{non_increasing_with_inversions, run_exit_campaign, verify_preconditions, CampaignOptions, LevelPlan, Prepared};
use crate::error::{Error, Result};
use crate::sde::ExitRecord;

/// Required excess of `inf_N W_a - W_a(a)` over H.
pub const COST_GAP_MARGIN: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocationLevel {
    pub sigma: f64,
    pub exits: usize,
    pub in_set: usize,
    pub frequency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocationReport {
    pub exit_set: Vec<String>,
    /// `inf_N W_a - W_a(a)`.
    pub set_cost: f64,
    pub h: f64,
    /// Levels in order of decreasing σ.
    pub levels: Vec<LocationLevel>,
    pub monotone: bool,
    pub ceiling: f64,
    pub pass: bool,
}

/// `(exits, hits)` at `sigma`: uncensored runs, and those landing on one of
/// `labels`.
pub fn exit_frequency(records: &[ExitRecord], sigma: f64, labels: &[String]) -> (usize, usize) {
    let exits: Vec<&ExitRecord> = records.iter().filter(|r| r.sigma == sigma && !r.censored).collect();
    let hits = exits
        .iter()
        .filter(|r| r.boundary_component.as_ref().is_some_and(|c| labels.contains(c)))
        .count();
    (exits.len(), hits)
}

/// `inf_N W_a - W_a(a)` over the boundary components in `labels`, checked
/// against `H + COST_GAP_MARGIN`.
pub fn exit_set_gap(prep: &Prepared, labels: &[String]) -> Result<f64> {
    let known = prep.domain.component_labels();
    if labels.is_empty() {
        return Err(Error::Config("exit set is empty".into()));
    }
    if let Some(bad) = labels.iter().find(|l| !known.contains(l)) {
        return Err(Error::Config(format!("unknown boundary component {bad:?}, expected one of {known:?}")));
    }
    let points = if prep.domain.has_discrete_boundary() {
        prep.domain.endpoints()?.to_vec()
    } else {
        prep.domain
            .boundary_sample(prep.config.verification.exit_cost_budget, prep.config.simulation.seed)?
    };
    let mut cost = points
        .iter()
        .filter(|p| labels.contains(&p.component))
        .map(|p| prep.w.height(&p.point))
        .fold(f64::INFINITY, f64::min);
    if labels.contains(&prep.exit_cost.component) {
        cost = cost.min(prep.h());
    }
    if !(cost > prep.h() + COST_GAP_MARGIN) {
        return Err(Error::Precondition(format!(
            "exit set {labels:?} has cost {cost:.6}, not above H = {:.6} by {COST_GAP_MARGIN}",
            prep.h()
        )));
    }
    Ok(cost)
}

/// Frequencies of exits in the set, the trend over decreasing σ (one
/// inversion allowed) and the ceiling at the smallest σ.
pub fn exit_location_report(prep: &Prepared, records: &[ExitRecord], sigmas: &[f64], labels: &[String], ceiling: f64) -> Result<LocationReport> {
    let set_cost = exit_set_gap(prep, labels)?;
    let mut order = sigmas.to_vec();
    order.sort_by(|a, b| b.total_cmp(a));
    let levels: Vec<LocationLevel> = order
        .iter()
        .map(|&sigma| {
            let (exits, in_set) = exit_frequency(records, sigma, labels);
            LocationLevel {
                sigma,
                exits,
                in_set,
                frequency: if exits == 0 { f64::NAN } else { in_set as f64 / exits as f64 },
            }
        })
        .collect();
    let freqs: Vec<f64> = levels.iter().map(|l| l.frequency).collect();
    let monotone = freqs.iter().all(|f| f.is_finite()) && non_increasing_with_inversions(&freqs, 1);
    let last = freqs.last().copied().unwrap_or(f64::NAN);
    Ok(LocationReport {
        exit_set: labels.to_vec(),
        set_cost,
        h: prep.h(),
        levels,
        monotone,
        ceiling,
        pass: monotone && last <= ceiling,
    })
}

pub fn run_exit_location(prep: &Prepared, labels: &[String]) -> Result<(LocationReport, Vec<ExitRecord>)> {
    let cfg = &prep.config;
    exit_set_gap(prep, labels)?;
    verify_preconditions(prep)?;
    let records = run_exit_campaign(
        prep,
        &LevelPlan::from_config(cfg),
        CampaignOptions {
            couple_after: cfg.couple_after(),
            coupling_eta: Some(cfg.verification.coupling_eta),
        },
    )?;
    let report = exit_location_report(prep, &records, &cfg.simulation.sigmas, labels, cfg.verification.exit_ceiling)?;
    Ok((report, records))
}
