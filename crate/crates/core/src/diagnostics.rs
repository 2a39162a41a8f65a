//! Law-control and coupling instrumentation.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;

/// Sampled law diagnostics of one ensemble.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LawTrace {
    pub sample_times: Vec<f64>,
    pub w2_to_dirac: Vec<f64>,
    /// Fraction of particles outside the ball around `a`.
    pub frac_outside: Vec<f64>,
    pub y_outside: Vec<bool>,
    /// `|X_tagged - Y|`, NaN before the coupling starts.
    pub coupling_gap: Vec<f64>,
}

impl LawTrace {
    pub fn len(&self) -> usize {
        self.sample_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_times.is_empty()
    }

    /// Builds a trace with only times and W₂ values (other series zeroed).
    pub fn from_w2(times: Vec<f64>, w2: Vec<f64>) -> Self {
        let n = times.len();
        assert_eq!(n, w2.len(), "series lengths differ");
        LawTrace {
            sample_times: times,
            w2_to_dirac: w2,
            frac_outside: vec![0.0; n],
            y_outside: vec![false; n],
            coupling_gap: vec![f64::NAN; n],
        }
    }

    /// CSV with header `t,w2,frac_outside,y_outside,coupling_gap`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,w2,frac_outside,y_outside,coupling_gap")?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{},{:.16e}",
                self.sample_times[i],
                self.w2_to_dirac[i],
                self.frac_outside[i],
                u8::from(self.y_outside[i]),
                self.coupling_gap[i]
            )?;
        }
        Ok(())
    }
}

/// `W₂(μ̂, δ_a) = sqrt((1/N) Σ |x_i - a|²)` over flat `N x dim` positions.
pub fn w2_to_dirac(positions: &[f64], dim: usize, a: &[f64]) -> f64 {
    let n = positions.len() / dim;
    let sq: Vec<f64> = positions
        .chunks_exact(dim)
        .map(|x| x.iter().zip(a).map(|(v, c)| (v - c) * (v - c)).sum())
        .collect();
    (linalg::pairwise_sum(&sq) / n as f64).sqrt()
}

pub fn frac_outside_ball(positions: &[f64], dim: usize, a: &[f64], radius: f64) -> f64 {
    let n = positions.len() / dim;
    let r2 = radius * radius;
    let out = positions
        .chunks_exact(dim)
        .filter(|x| x.iter().zip(a).map(|(v, c)| (v - c) * (v - c)).sum::<f64>() > r2)
        .count();
    out as f64 / n as f64
}

/// Empirical stabilization and destabilization times.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StoppingTimes {
    pub t_st: Option<f64>,
    pub s_st: Option<f64>,
}

/// First sampled time with `W₂ ≤ κ`, then first later sampled time with
/// `W₂ > κ`.
pub fn empirical_stopping_times(trace: &LawTrace, kappa: f64) -> StoppingTimes {
    let series = trace.sample_times.iter().zip(&trace.w2_to_dirac);
    let mut t_st = None;
    let mut s_st = None;
    for (&t, &w) in series {
        match t_st {
            None if w <= kappa => t_st = Some(t),
            Some(_) if w > kappa => {
                s_st = Some(t);
                break;
            }
            _ => {}
        }
    }
    StoppingTimes { t_st, s_st }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ContractionFit {
    /// Largest rate for which the bound holds on 95% of increments.
    pub k1: f64,
    /// Fitted coefficient of the outside-mass slack.
    pub k2: f64,
    /// RMS residual of the fitted relation.
    pub residual: f64,
    /// Fraction of increments satisfying the bound at `k1`.
    pub holds_fraction: f64,
    /// True when no positive rate is consistent with the data.
    pub violation: bool,
}

pub const CONTRACTION_MIN_SAMPLES: usize = 20;
const CONTRACTION_QUANTILE: f64 = 0.05;

/// Fits `ξ' ≤ -K₁ ξ + dσ² + K₂ sqrt(frac_outside)` with `ξ = W₂²` on the
/// finite differences of the trace. Purely descriptive.
pub fn contraction_monitor(trace: &LawTrace, sigma: f64, dim: usize) -> Result<ContractionFit> {
    let n = trace.len();
    if n < CONTRACTION_MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "contraction fit needs at least {CONTRACTION_MIN_SAMPLES} samples, got {n}"
        )));
    }
    let noise = dim as f64 * sigma * sigma;
    let mut xi = Vec::with_capacity(n - 1);
    let mut dxi = Vec::with_capacity(n - 1);
    let mut s = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        let h = trace.sample_times[k + 1] - trace.sample_times[k];
        let (a, b) = (trace.w2_to_dirac[k].powi(2), trace.w2_to_dirac[k + 1].powi(2));
        xi.push(0.5 * (a + b));
        dxi.push((b - a) / h);
        s.push((0.5 * (trace.frac_outside[k] + trace.frac_outside[k + 1])).sqrt());
    }

    // Least squares for ξ' - dσ² = -K₁ ξ + K₂ s.
    let target: Vec<f64> = dxi.iter().map(|v| v - noise).collect();
    let (sxx, sxs, sss) = xi.iter().zip(&s).fold((0.0, 0.0, 0.0), |acc, (x, w)| {
        (acc.0 + x * x, acc.1 + x * w, acc.2 + w * w)
    });
    let (sxy, ssy) = xi
        .iter()
        .zip(&s)
        .zip(&target)
        .fold((0.0, 0.0), |acc, ((x, w), y)| (acc.0 + x * y, acc.1 + w * y));
    let det = sxx * sss - sxs * sxs;
    let k2 = if sss > 0.0 && det.abs() > 1e-300 {
        // columns are (-ξ, s)
        ((sxx * ssy - sxs * sxy) / det).max(0.0)
    } else {
        0.0
    };

    let mut q: Vec<f64> = xi
        .iter()
        .zip(&dxi)
        .zip(&s)
        .filter(|((x, _), _)| **x > 0.0)
        .map(|((x, d), w)| (noise + k2 * w - d) / x)
        .collect();
    if q.is_empty() {
        return Err(Error::InsufficientData("W2 vanishes on every increment".into()));
    }
    q.sort_by(f64::total_cmp);
    let idx = ((CONTRACTION_QUANTILE * q.len() as f64).floor() as usize).min(q.len() - 1);
    let k1 = q[idx];
    let holds = q.iter().filter(|v| **v >= k1).count() as f64 / q.len() as f64;
    let res2: f64 = xi
        .iter()
        .zip(&dxi)
        .zip(&s)
        .map(|((x, d), w)| (d + k1 * x - noise - k2 * w).powi(2))
        .sum::<f64>()
        / xi.len() as f64;
    Ok(ContractionFit {
        k1,
        k2,
        residual: res2.sqrt(),
        holds_fraction: holds,
        violation: !(k1 > 0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn w2_examples() {
        assert_eq!(w2_to_dirac(&[-1.0, -1.0, -1.0], 1, &[-1.0]), 0.0);
        assert_eq!(w2_to_dirac(&[1.0, 2.0, 1.0, 0.0], 2, &[1.0, 1.0]), 1.0);
        assert_eq!(w2_to_dirac(&[0.0, 2.0], 1, &[0.0]), 2f64.sqrt());
    }

    #[test]
    fn outside_fraction() {
        assert_eq!(frac_outside_ball(&[0.0, 0.5, 1.5, -2.0], 1, &[0.0], 1.0), 0.5);
    }

    fn trace(w2: &[f64]) -> LawTrace {
        LawTrace::from_w2((0..w2.len()).map(|i| i as f64).collect(), w2.to_vec())
    }

    #[test]
    fn stopping_time_examples() {
        let s = empirical_stopping_times(&trace(&[0.5, 0.3, 0.1, 0.05]), 0.2);
        assert_eq!(s, StoppingTimes { t_st: Some(2.0), s_st: None });
        let s = empirical_stopping_times(&trace(&[0.1, 0.3]), 0.2);
        assert_eq!(s, StoppingTimes { t_st: Some(0.0), s_st: Some(1.0) });
        let s = empirical_stopping_times(&trace(&[0.4; 5]), 0.2);
        assert_eq!(s, StoppingTimes { t_st: None, s_st: None });
    }

    #[test]
    fn contraction_recovers_rate() {
        let (c, sigma, xi0) = (1.5, 0.3, 1.0);
        let times: Vec<f64> = (0..200).map(|i| i as f64 * 0.01).collect();
        let w2: Vec<f64> = times
            .iter()
            .map(|t| (xi0 * (-c * t).exp() + sigma * sigma / c).sqrt())
            .collect();
        let fit = contraction_monitor(&LawTrace::from_w2(times, w2), sigma, 1).unwrap();
        assert!((fit.k1 - c).abs() <= 0.2 * c, "{fit:?}");
        assert!(!fit.violation);
    }

    #[test]
    fn contraction_stationary_case() {
        let (k1, sigma) = (2.0f64, 0.3f64);
        let xi = sigma * sigma / k1;
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let fit = contraction_monitor(&LawTrace::from_w2(times, vec![xi.sqrt(); 50]), sigma, 1).unwrap();
        assert!((fit.k1 - k1).abs() < 1e-9);
        assert!(fit.residual < 1e-9);
        assert_eq!(fit.holds_fraction, 1.0);
    }

    #[test]
    fn contraction_flags_growth() {
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let w2: Vec<f64> = times.iter().map(|t| 0.1 + t).collect();
        let fit = contraction_monitor(&LawTrace::from_w2(times, w2), 0.0, 1).unwrap();
        assert!(fit.violation);
        assert!(matches!(
            contraction_monitor(&trace(&[0.1; 10]), 0.3, 1),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn csv_header() {
        let mut buf = Vec::new();
        trace(&[0.5]).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,w2,frac_outside,y_outside,coupling_gap\n"));
        assert_eq!(text.lines().count(), 2);
    }
}
