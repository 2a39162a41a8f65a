use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use super::{derive_seed, verify_preconditions, Prepared, LAW_SEED_SALT};
use crate::diagnostics::{empirical_stopping_times, LawTrace};
use crate::error::{invalid, Result};
use crate::flows::stabilization_time;
use crate::sde::{trace_ensemble, Horizon, TraceSetup};

/// Levels with `2H/σ²` below this are flagged as outside the small-noise
/// regime.
pub const OUT_OF_REGIME_RATIO: f64 = 2.0;

/// Required share of passing seeds per level.
pub const LAW_SEED_SHARE: f64 = 0.9;

#[derive(Clone, Debug, Serialize)]
pub struct LawLevel {
    pub sigma: f64,
    pub kappa: f64,
    /// Deterministic stabilization time `T̄_st(κ)`.
    pub t_bar: f64,
    pub horizon: f64,
    pub seeds: usize,
    /// Seeds with `Ŵ₂ ≤ κ` on every sample in `[T̄_st, horizon]`.
    pub controlled: usize,
    /// Seeds among those with no `Ŝ_st` before the horizon.
    pub controlled_no_exit: usize,
    /// Largest `Ŵ₂` over the window, per seed.
    pub worst_w2: Vec<f64>,
    pub out_of_regime: bool,
    pub skipped: Option<String>,
    #[serde(skip)]
    pub first_trace: Option<LawTrace>,
}

impl LawLevel {
    pub fn pass(&self) -> bool {
        self.skipped.is_none() && self.seeds > 0 && self.controlled_no_exit as f64 >= LAW_SEED_SHARE * self.seeds as f64
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LawReport {
    pub levels: Vec<LawLevel>,
    pub pass: bool,
}

/// Law-control check at one σ over `seeds` independent ensembles.
///
/// `level_index` enters the seed derivation. Runs last
/// `min(exp(2H/σ²), hard_cap)` time units; when `max_steps` cannot cover
/// that horizon the level is skipped.
pub fn law_level_verdict(prep: &Prepared, level_index: u64, sigma: f64, kappa: f64, seeds: usize, hard_cap: f64) -> Result<LawLevel> {
    let cfg = &prep.config;
    let h = prep.h();
    let horizon = (2.0 * h / (sigma * sigma)).exp().min(hard_cap);
    let dt = cfg.dt_for(sigma);
    let out_of_regime = 2.0 * h / (sigma * sigma) < OUT_OF_REGIME_RATIO;
    let mut level = LawLevel {
        sigma,
        kappa,
        t_bar: f64::NAN,
        horizon,
        seeds,
        controlled: 0,
        controlled_no_exit: 0,
        worst_w2: Vec::new(),
        out_of_regime,
        skipped: None,
        first_trace: None,
    };
    if !(kappa > 0.0) {
        // W₂ of an ensemble with noise is positive almost surely
        level.skipped = Some(format!("kappa = {kappa} admits no control"));
        return Ok(level);
    }
    if let Some(cap) = cfg.simulation.max_steps {
        if (horizon / dt).ceil() > cap as f64 {
            warn!("sigma={sigma}: law-control horizon {horizon:.1} exceeds the step cap, level skipped");
            level.skipped = Some(format!("horizon {horizon:.1} needs more than {cap} steps"));
            return Ok(level);
        }
    }
    let t_bar = stabilization_time(&prep.model, &cfg.simulation.x_init, kappa, &prep.domain)?.time;
    level.t_bar = t_bar;
    let setup = TraceSetup {
        x_init: cfg.simulation.x_init.clone(),
        horizon,
        sample_every: cfg.simulation.sample_every,
        ball_radius: 0.5 * prep.rho(),
        couple_at: None,
    };
    let master = cfg.simulation.seed ^ LAW_SEED_SALT;
    let traces: Result<Vec<(f64, bool, Option<LawTrace>)>> = (0..seeds as u64)
        .into_par_iter()
        .map(|rep| {
            let mut params = cfg.params(sigma, derive_seed(master, level_index, rep));
            params.horizon = Horizon::Time(horizon);
            let trace = trace_ensemble(&prep.model, &params, &setup)?;
            let worst = trace
                .sample_times
                .iter()
                .zip(&trace.w2_to_dirac)
                .filter(|(t, _)| **t >= t_bar)
                .map(|(_, w)| *w)
                .fold(0.0, f64::max);
            let no_exit = empirical_stopping_times(&trace, kappa).s_st.is_none();
            Ok((worst, no_exit, (rep == 0).then_some(trace)))
        })
        .collect();
    for (worst, no_exit, trace) in traces? {
        if worst <= kappa {
            level.controlled += 1;
            if no_exit {
                level.controlled_no_exit += 1;
            }
        }
        level.worst_w2.push(worst);
        if trace.is_some() {
            level.first_trace = trace;
        }
    }
    Ok(level)
}

/// Law control at the two smallest configured σ levels.
pub fn run_law_control(prep: &Prepared, hard_cap: f64) -> Result<LawReport> {
    let cfg = &prep.config;
    let v = &cfg.verification;
    if v.law_seeds == 0 {
        return Err(invalid("law_seeds", "must be at least 1"));
    }
    verify_preconditions(prep)?;
    let mut idx: Vec<usize> = (0..cfg.simulation.sigmas.len()).collect();
    idx.sort_by(|&a, &b| cfg.simulation.sigmas[a].total_cmp(&cfg.simulation.sigmas[b]));
    idx.truncate(2);
    let levels = idx
        .into_iter()
        .map(|i| law_level_verdict(prep, i as u64, cfg.simulation.sigmas[i], v.law_kappa, v.law_seeds, hard_cap))
        .collect::<Result<Vec<_>>>()?;
    let pass = levels.iter().all(LawLevel::pass);
    Ok(LawReport { levels, pass })
}

#[cfg(test)]
mod tests {
    use super::super::tests::sample_config;
    use super::*;

    #[test]
    fn zero_kappa_fails() {
        let prep = Prepared::new(sample_config()).unwrap();
        let lvl = law_level_verdict(&prep, 0, 0.5, 0.0, 3, 10.0).unwrap();
        assert!(!lvl.pass());
    }

    #[test]
    fn large_sigma_flagged() {
        let prep = Prepared::new(sample_config()).unwrap();
        let lvl = law_level_verdict(&prep, 0, 0.8, 0.25, 2, 5.0).unwrap();
        assert!(lvl.out_of_regime);
        assert!((lvl.horizon - (0.6f64 / 0.64).exp()).abs() < 1e-12);
        let small = law_level_verdict(&prep, 0, 0.3, 0.25, 1, 1.0).unwrap();
        assert!(!small.out_of_regime);
    }

    #[test]
    fn small_noise_short_horizon_controlled() {
        let prep = Prepared::new(sample_config()).unwrap();
        let lvl = law_level_verdict(&prep, 0, 0.15, 0.25, 4, 20.0).unwrap();
        assert_eq!(lvl.seeds, 4);
        assert_eq!(lvl.t_bar, 0.0);
        assert!(lvl.pass(), "{:?}", lvl.worst_w2);
        assert!(lvl.first_trace.as_ref().is_some_and(|t| !t.is_empty()));
    }

    #[test]
    fn step_cap_skips_level() {
        let mut cfg = sample_config();
        cfg.simulation.max_steps = Some(100);
        let prep = Prepared::new(cfg).unwrap();
        let lvl = law_level_verdict(&prep, 0, 0.3, 0.25, 2, 1e9).unwrap();
        assert!(lvl.skipped.is_some());
        assert!(!lvl.pass());
    }
}
