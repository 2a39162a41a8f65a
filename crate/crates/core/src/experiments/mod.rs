//! Verification campaigns: σ sweeps for the exit-time law, exit-location
//! frequencies, law control and coupling checks, plus their persistence.

mod config;
mod coupling;
mod kramers;
mod law;
mod location;
mod report;

pub use config::{CoupleKeyword, CoupleSpec, DomainSpec, ExperimentConfig, OutputSection, SimulationSection, VerificationSection};
pub use coupling::{coupling_report, run_coupling_check, CouplingLevel, CouplingReport, COUPLING_CEILING};
pub use kramers::{run_kramers_sweep, summarize_kramers, write_kramers_csv, KramersLevel, KramersSummary, KRAMERS_CSV_HEADER};
pub use law::{law_level_verdict, run_law_control, LawLevel, LawReport, LAW_SEED_SHARE, OUT_OF_REGIME_RATIO};
pub use location::{exit_frequency, exit_location_report, exit_set_gap, run_exit_location, LocationLevel, LocationReport, COST_GAP_MARGIN};
pub use report::{write_path_csv, Summary};

use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flows::stabilization_time;
use crate::geometry::{check_domain_stability, exit_cost, Domain, ExitCostResult};
use crate::potentials::{check_assumptions, make_builtin, AssumptionId, AssumptionReport, CheckStatus, EffectivePotential, PotentialModel};
use crate::sde::{run_until_exit, CoupleAfter, ExitRecord, ExitSetup};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Replication seed: `splitmix(splitmix(splitmix(master) ^ level) ^ rep)`.
/// Part of the output format; do not change.
pub fn derive_seed(master: u64, level: u64, rep: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ level) ^ rep)
}

/// Salt mixed into the master seed for law-control ensembles, so they do not
/// reuse the exit-campaign seeds.
pub const LAW_SEED_SALT: u64 = 0x4C41_5743_4F4E_5452;

/// Model, domain and reference exit cost built from a config.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub model: Arc<PotentialModel>,
    pub w: EffectivePotential,
    pub domain: Domain,
    pub exit_cost: ExitCostResult,
}

impl Prepared {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let model = Arc::new(make_builtin(&config.potential)?);
        let w = model.effective();
        let domain = config.domain.build(&w)?;
        if config.simulation.x_init.len() != model.dim {
            return Err(Error::DimensionMismatch {
                expected: model.dim,
                got: config.simulation.x_init.len(),
            });
        }
        let exit_cost = exit_cost(&w, &domain, config.verification.exit_cost_budget, config.simulation.seed)?;
        Ok(Prepared {
            config,
            model,
            w,
            domain,
            exit_cost,
        })
    }

    pub fn h(&self) -> f64 {
        self.exit_cost.h
    }

    /// Radius ρ of the convexity ball, shrunk so that `B_ρ(a) ⊂ D`.
    pub fn rho(&self) -> f64 {
        let inside = -self.domain.signed_margin(&self.model.attractor);
        self.w.convexity_radius.min(inside)
    }

    /// Step cap for one run at `sigma`: `factor * exp(2H/σ²)` time units,
    /// bounded by the configured hard cap.
    pub fn max_steps(&self, sigma: f64) -> u64 {
        let s = &self.config.simulation;
        let horizon = s.horizon_cap_factor * (2.0 * self.h() / (sigma * sigma)).exp();
        let steps = (horizon / self.config.dt_for(sigma)).ceil();
        let steps = if steps.is_finite() && steps < u64::MAX as f64 { steps as u64 } else { u64::MAX };
        s.max_steps.map_or(steps, |cap| cap.min(steps))
    }
}

/// A-6 (γ stays in D and reaches `a`) and A-7 (stability of D). Returns the
/// report, or a precondition error carrying it.
pub fn verify_preconditions(prep: &Prepared) -> Result<AssumptionReport> {
    let mut report = AssumptionReport::default();
    push_a6(prep, &mut report);
    push_a7(prep, &mut report);
    if report.failed().is_empty() {
        Ok(report)
    } else {
        Err(Error::Precondition(report.to_string()))
    }
}

fn push_a6(prep: &Prepared, report: &mut AssumptionReport) {
    let x_init = &prep.config.simulation.x_init;
    match stabilization_time(&prep.model, x_init, prep.config.simulation.kappa, &prep.domain) {
        Ok(st) => report.push(
            AssumptionId::A6,
            CheckStatus::Pass,
            false,
            format!("gamma reaches B_(kappa/3)(a) at t = {:.4}, margin to the boundary {:.4}", st.time, st.margin),
        ),
        Err(Error::PathLeavesDomain { time }) => report.push(
            AssumptionId::A6,
            CheckStatus::Fail,
            false,
            format!("gamma from {x_init:?} leaves D at t = {time:.4}"),
        ),
        Err(e) => report.push(AssumptionId::A6, CheckStatus::Fail, false, e.to_string()),
    }
}

fn push_a7(prep: &Prepared, report: &mut AssumptionReport) {
    let v = &prep.config.verification;
    match check_domain_stability(&prep.w, &prep.domain, v.stability_horizon, 64, prep.config.simulation.seed) {
        Ok(st) => report.push(AssumptionId::A7, st.status, !prep.domain.has_discrete_boundary(), st.detail),
        Err(e) => report.push(AssumptionId::A7, CheckStatus::Fail, true, e.to_string()),
    }
}

fn push_a5(prep: &Prepared, report: &mut AssumptionReport) {
    let a = &prep.model.attractor;
    let bounded = match &prep.domain {
        Domain::Interval { lo, hi } => lo.is_finite() && hi.is_finite(),
        Domain::Box { lo, hi } => lo.iter().chain(hi).all(|v| v.is_finite()),
        Domain::Ball { radius, .. } => radius.is_finite(),
        Domain::Sublevel(s) => {
            // every axis ray must cross the level set
            let d = a.len();
            (0..2 * d).all(|k| {
                let mut dir = vec![0.0; d];
                dir[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
                s.ray_crossing(&dir).is_ok()
            })
        }
    };
    let contains = prep.domain.contains(a);
    let status = if bounded && contains { CheckStatus::Pass } else { CheckStatus::Fail };
    let detail = match (bounded, contains) {
        (true, true) => format!("D is bounded, open and connected and contains a = {a:?}"),
        (false, _) => "D is unbounded".to_string(),
        (true, false) => format!("a = {a:?} is not in D"),
    };
    report.push(AssumptionId::A5, status, matches!(prep.domain, Domain::Sublevel(_)), detail);
}

/// All assumption checks: the model ones and A-5, A-6, A-7 for the domain.
pub fn check_all(prep: &Prepared) -> AssumptionReport {
    let mut report = check_assumptions(&prep.model, prep.config.verification.assumption_budget, prep.config.simulation.seed);
    push_a5(prep, &mut report);
    push_a6(prep, &mut report);
    push_a7(prep, &mut report);
    report
}

/// One σ level of a campaign.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelPlan {
    /// Position in the config's σ list (enters the seed derivation).
    pub index: u64,
    pub sigma: f64,
    pub reps: usize,
}

impl LevelPlan {
    /// All configured levels with the configured replication count.
    pub fn from_config(cfg: &ExperimentConfig) -> Vec<LevelPlan> {
        cfg.simulation
            .sigmas
            .iter()
            .enumerate()
            .map(|(i, &sigma)| LevelPlan {
                index: i as u64,
                sigma,
                reps: cfg.simulation.replications,
            })
            .collect()
    }
}

/// Options for [`run_exit_campaign`] beyond the config.
#[derive(Clone, Copy, Debug)]
pub struct CampaignOptions {
    pub couple_after: CoupleAfter,
    /// Coupling window end is `exp(2(H + eta)/σ²)`; `None` means no limit.
    pub coupling_eta: Option<f64>,
}

/// Runs independent ensembles for every `(level, replication)` pair.
/// Records come back ordered by level then replication, whatever the
/// worker count.
pub fn run_exit_campaign(prep: &Prepared, plan: &[LevelPlan], opts: CampaignOptions) -> Result<Vec<ExitRecord>> {
    let cfg = &prep.config;
    let master = cfg.simulation.seed;
    let y_ball = 0.5 * prep.rho();
    let tasks: Vec<(LevelPlan, u64)> = plan
        .iter()
        .flat_map(|lvl| (0..lvl.reps as u64).map(move |r| (*lvl, r)))
        .collect();
    for lvl in plan {
        info!(
            "level sigma={} reps={} dt={} cap={} steps",
            lvl.sigma,
            lvl.reps,
            cfg.dt_for(lvl.sigma),
            prep.max_steps(lvl.sigma)
        );
    }
    let records: Result<Vec<ExitRecord>> = tasks
        .par_iter()
        .map(|(lvl, rep)| {
            let seed = derive_seed(master, lvl.index, *rep);
            let params = cfg.params(lvl.sigma, seed);
            let mut setup = ExitSetup::new(&prep.domain, &cfg.simulation.x_init, cfg.simulation.kappa, prep.max_steps(lvl.sigma));
            setup.couple_after = opts.couple_after;
            setup.y_ball_radius = y_ball;
            setup.sample_every = cfg.simulation.sample_every;
            if let Some(eta) = opts.coupling_eta {
                setup.coupling_window_end = (2.0 * (prep.h() + eta) / (lvl.sigma * lvl.sigma)).exp();
            }
            run_until_exit(&prep.model, &params, &setup)
        })
        .collect();
    let records = records?;
    let censored = records.iter().filter(|r| r.censored).count();
    if censored > 0 {
        warn!("{censored} of {} runs censored", records.len());
    }
    Ok(records)
}

/// Records of one σ level, in replication order.
pub fn level_records(records: &[ExitRecord], sigma: f64) -> Vec<&ExitRecord> {
    records.iter().filter(|r| r.sigma == sigma).collect()
}

/// Monotone-trend test: values listed in order of decreasing σ should not
/// increase, with at most `allowed` inversions.
pub fn non_increasing_with_inversions(values: &[f64], allowed: usize) -> bool {
    values.windows(2).filter(|w| w[1] > w[0]).count() <= allowed
}
