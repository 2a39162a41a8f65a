use std::io::Write;

use log::warn;
use serde::Serialize;

use super::{run_exit_campaign, verify_preconditions, CampaignOptions, LevelPlan, Prepared};
use crate::error::{invalid, Error, Result};
use crate::sde::ExitRecord;

/// Exit-time statistics of one σ level. Censored runs are left out of the
/// τ statistics and only enter the censoring rate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KramersLevel {
    pub sigma: f64,
    pub count: usize,
    pub censored: usize,
    pub censoring_rate: f64,
    pub median_tau: f64,
    pub mean_log_tau: f64,
    /// 95% normal half-width for `mean_log_tau`.
    pub ci_half_width: f64,
    /// Smallest δ with `|σ²/2 log τ - H| <= δ` for the configured coverage.
    pub delta_band: f64,
    pub used_in_fit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KramersSummary {
    pub levels: Vec<KramersLevel>,
    /// Least-squares slope of mean log τ against `2/σ²`.
    pub slope: f64,
    pub intercept: f64,
    pub h_reference: f64,
    pub slope_relative_error: f64,
}

impl KramersSummary {
    pub fn within(&self, rel_tol: f64) -> bool {
        self.slope_relative_error.abs() <= rel_tol
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = pos.ceil() as usize;
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

fn level_stats(sigma: f64, records: &[&ExitRecord], h: f64, max_censoring: f64, coverage: f64) -> KramersLevel {
    let count = records.len();
    let censored = records.iter().filter(|r| r.censored).count();
    let censoring_rate = if count == 0 { 1.0 } else { censored as f64 / count as f64 };
    let mut taus: Vec<f64> = records.iter().filter(|r| !r.censored).map(|r| r.tau).collect();
    taus.sort_by(f64::total_cmp);
    let logs: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = if logs.len() > 1 {
        logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        f64::NAN
    };
    let mut dev: Vec<f64> = logs.iter().map(|l| (0.5 * sigma * sigma * l - h).abs()).collect();
    dev.sort_by(f64::total_cmp);
    KramersLevel {
        sigma,
        count,
        censored,
        censoring_rate,
        median_tau: quantile(&taus, 0.5),
        mean_log_tau: mean,
        ci_half_width: 1.96 * (var / n).sqrt(),
        delta_band: quantile(&dev, coverage),
        used_in_fit: !taus.is_empty() && censoring_rate < max_censoring,
    }
}

/// Ordinary least squares `y = slope * x + intercept`.
fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Per-level statistics and the slope fit. `sigmas` fixes the level order;
/// records of other levels are ignored.
pub fn summarize_kramers(
    records: &[ExitRecord],
    sigmas: &[f64],
    h: f64,
    max_censoring: f64,
    coverage: f64,
) -> Result<KramersSummary> {
    let levels: Vec<KramersLevel> = sigmas
        .iter()
        .map(|&s| {
            let recs: Vec<&ExitRecord> = records.iter().filter(|r| r.sigma == s).collect();
            let lvl = level_stats(s, &recs, h, max_censoring, coverage);
            if !lvl.used_in_fit {
                warn!("sigma={s}: censoring rate {:.3}, level left out of the fit", lvl.censoring_rate);
            }
            lvl
        })
        .collect();
    let used: Vec<&KramersLevel> = levels.iter().filter(|l| l.used_in_fit).collect();
    let distinct = {
        let mut s: Vec<f64> = used.iter().map(|l| l.sigma).collect();
        s.dedup();
        s.len()
    };
    if distinct < 2 {
        return Err(Error::InsufficientData(format!(
            "slope needs at least 2 usable sigma levels, have {distinct}"
        )));
    }
    let x: Vec<f64> = used.iter().map(|l| 2.0 / (l.sigma * l.sigma)).collect();
    let y: Vec<f64> = used.iter().map(|l| l.mean_log_tau).collect();
    let (slope, intercept) = fit_line(&x, &y);
    Ok(KramersSummary {
        levels,
        slope,
        intercept,
        h_reference: h,
        slope_relative_error: (slope - h) / h,
    })
}

pub const KRAMERS_CSV_HEADER: &str =
    "sigma,inv_sigma2_x2,count,censored,censoring_rate,median_tau,mean_log_tau,ci_half_width,delta_band,used_in_fit";

/// Per-level table with columns [`KRAMERS_CSV_HEADER`].
pub fn write_kramers_csv<W: Write>(mut out: W, summary: &KramersSummary) -> Result<()> {
    writeln!(out, "{KRAMERS_CSV_HEADER}")?;
    for l in &summary.levels {
        writeln!(
            out,
            "{:.16e},{:.16e},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            l.sigma,
            2.0 / (l.sigma * l.sigma),
            l.count,
            l.censored,
            l.censoring_rate,
            l.median_tau,
            l.mean_log_tau,
            l.ci_half_width,
            l.delta_band,
            l.used_in_fit
        )?;
    }
    Ok(())
}

/// Full sweep over the configured σ levels.
pub fn run_kramers_sweep(prep: &Prepared) -> Result<(KramersSummary, Vec<ExitRecord>)> {
    let cfg = &prep.config;
    if cfg.simulation.sigmas.len() < 2 {
        return Err(invalid("sigmas", "slope needs at least 2 levels"));
    }
    verify_preconditions(prep)?;
    let plan = LevelPlan::from_config(cfg);
    let records = run_exit_campaign(
        prep,
        &plan,
        CampaignOptions {
            couple_after: cfg.couple_after(),
            coupling_eta: Some(cfg.verification.coupling_eta),
        },
    )?;
    let v = &cfg.verification;
    let summary = summarize_kramers(&records, &cfg.simulation.sigmas, prep.h(), v.max_censoring, v.delta_coverage)?;
    Ok((summary, records))
}
