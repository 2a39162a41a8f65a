use std::io::Write;

use serde::Serialize;

use super::{step, step_tagged_only, EnsembleState, Horizon, SimulationParams};
use crate::diagnostics::{frac_outside_ball, w2_to_dirac, LawTrace};
use crate::error::{invalid, Error, Result};
use crate::geometry::Domain;
use crate::linalg;
use crate::potentials::PotentialModel;

/// When the coupled diffusion Y is started.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CoupleAfter {
    Never,
    At(f64),
    /// First sampled time with `W₂(μ̂_t, δ_a) ≤ κ`.
    AtStabilization,
}

#[derive(Clone, Debug)]
pub struct ExitSetup<'a> {
    pub domain: &'a Domain,
    pub x_init: Vec<f64>,
    pub couple_after: CoupleAfter,
    pub kappa: f64,
    /// Radius of the ball around `a` used for the Y occupancy count
    /// (normally ρ/2).
    pub y_ball_radius: f64,
    /// Steps between law samples; `None` means `⌈0.01/dt⌉`.
    pub sample_every: Option<u64>,
    pub max_steps: u64,
    /// Coupling gap and Y occupancy are only recorded up to this time.
    pub coupling_window_end: f64,
}

impl<'a> ExitSetup<'a> {
    pub fn new(domain: &'a Domain, x_init: &[f64], kappa: f64, max_steps: u64) -> Self {
        ExitSetup {
            domain,
            x_init: x_init.to_vec(),
            couple_after: CoupleAfter::AtStabilization,
            kappa,
            y_ball_radius: f64::INFINITY,
            sample_every: None,
            max_steps,
            coupling_window_end: f64::INFINITY,
        }
    }
}

pub(crate) fn cadence(sample_every: Option<u64>, dt: f64) -> u64 {
    sample_every.unwrap_or_else(|| (0.01 / dt - 1e-9).ceil().max(1.0) as u64)
}

/// One Monte Carlo exit observation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExitRecord {
    pub seed: u64,
    pub sigma: f64,
    pub dt: f64,
    pub n_particles: usize,
    /// Exit time, or the time reached when censored (a lower bound).
    pub tau: f64,
    pub censored: bool,
    pub exit_point: Vec<f64>,
    pub boundary_component: Option<String>,
    pub coupled_active: bool,
    pub coupling_start: Option<f64>,
    /// `sup |X_tagged - Y|` over the steps before exit.
    pub max_coupling_gap: f64,
    /// Law samples after coupling start at which Y was outside the ball.
    pub y_outside_samples: u64,
    pub coupled_samples: u64,
    pub notes: Vec<String>,
}

/// Runs one ensemble until the tagged particle leaves the domain or the
/// step cap is reached.
pub fn run_until_exit(model: &PotentialModel, params: &SimulationParams, setup: &ExitSetup) -> Result<ExitRecord> {
    params.validate(model)?;
    let d = model.dim;
    if setup.x_init.len() != d || setup.domain.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if setup.x_init.len() != d { setup.x_init.len() } else { setup.domain.dim() },
        });
    }
    if !setup.domain.contains(&setup.x_init) {
        return Err(Error::Precondition("x_init must lie inside the domain".into()));
    }
    if setup.couple_after == CoupleAfter::AtStabilization && !(setup.kappa > 0.0) {
        return Err(invalid("kappa", "must be positive"));
    }
    let max_steps = match params.horizon {
        Horizon::UntilExit => setup.max_steps,
        Horizon::Time(t) => ((t / params.dt).round() as u64).min(setup.max_steps),
    };
    let every = cadence(setup.sample_every, params.dt);
    let a = &model.attractor;
    // Without interaction the tagged particle ignores the others, and the
    // law is only needed to decide when to couple.
    let solo = model.interaction.is_zero() && setup.couple_after != CoupleAfter::AtStabilization;

    let mut state = EnsembleState::new(params.n_particles, &setup.x_init, params.seed);
    let mut rec = ExitRecord {
        seed: params.seed,
        sigma: params.sigma,
        dt: params.dt,
        n_particles: params.n_particles,
        tau: 0.0,
        censored: false,
        exit_point: Vec::new(),
        boundary_component: None,
        coupled_active: false,
        coupling_start: None,
        max_coupling_gap: 0.0,
        y_outside_samples: 0,
        coupled_samples: 0,
        notes: Vec::new(),
    };
    if solo {
        rec.notes.push("tagged-only".into());
    }

    let try_couple = |state: &mut EnsembleState, rec: &mut ExitRecord| {
        let go = match setup.couple_after {
            CoupleAfter::Never => false,
            CoupleAfter::At(t0) => state.time >= t0 - 0.5 * params.dt,
            CoupleAfter::AtStabilization => w2_to_dirac(state.positions(), d, a) <= setup.kappa,
        };
        if go {
            state.activate_coupling();
            rec.coupled_active = true;
            rec.coupling_start = Some(state.time);
        }
    };
    try_couple(&mut state, &mut rec);

    loop {
        if state.steps >= max_steps {
            rec.censored = true;
            rec.tau = state.time;
            rec.exit_point = state.tagged_position().to_vec();
            rec.notes.push("censored".into());
            break;
        }
        if solo {
            step_tagged_only(&mut state, model, params)?;
        } else {
            step(&mut state, model, params)?;
        }
        let in_window = state.time <= setup.coupling_window_end;
        if let Some(gap) = state.coupling_gap().filter(|_| in_window) {
            let x = state.tagged_position();
            if setup.domain.contains(x) {
                rec.max_coupling_gap = rec.max_coupling_gap.max(gap);
            }
        }
        let x = state.tagged_position();
        if !setup.domain.contains(x) {
            rec.tau = state.time;
            rec.exit_point = x.to_vec();
            rec.boundary_component = Some(setup.domain.component_of(x));
            break;
        }
        if state.steps % every == 0 {
            if rec.coupled_active && in_window {
                rec.coupled_samples += 1;
                let y = state.y_position().expect("coupling active");
                if linalg::dist(y, a) > setup.y_ball_radius {
                    rec.y_outside_samples += 1;
                }
            } else if !rec.coupled_active && setup.couple_after != CoupleAfter::Never {
                try_couple(&mut state, &mut rec);
            }
        }
    }
    Ok(rec)
}

/// Law sampling options for [`trace_ensemble`].
#[derive(Clone, Debug)]
pub struct TraceSetup {
    pub x_init: Vec<f64>,
    pub horizon: f64,
    /// Steps between samples; `None` means `⌈0.01/dt⌉`.
    pub sample_every: Option<u64>,
    /// Ball radius for the outside fractions (normally ρ/2).
    pub ball_radius: f64,
    /// Coupling start time, if any.
    pub couple_at: Option<f64>,
}

/// Runs an ensemble for a fixed horizon and records the law diagnostics.
pub fn trace_ensemble(model: &PotentialModel, params: &SimulationParams, setup: &TraceSetup) -> Result<LawTrace> {
    params.validate(model)?;
    let d = model.dim;
    if setup.x_init.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: setup.x_init.len(),
        });
    }
    let a = &model.attractor;
    let every = cadence(setup.sample_every, params.dt);
    let n_steps = (setup.horizon / params.dt).round() as u64;
    let mut state = EnsembleState::new(params.n_particles, &setup.x_init, params.seed);
    let mut trace = LawTrace::default();
    let record = |state: &mut EnsembleState, trace: &mut LawTrace| {
        if let Some(t0) = setup.couple_at {
            if state.y_position().is_none() && state.time >= t0 - 0.5 * params.dt {
                state.activate_coupling();
            }
        }
        trace.sample_times.push(state.time);
        trace.w2_to_dirac.push(w2_to_dirac(state.positions(), d, a));
        trace.frac_outside.push(frac_outside_ball(state.positions(), d, a, setup.ball_radius));
        let y_out = state.y_position().map(|y| linalg::dist(y, a) > setup.ball_radius);
        trace.y_outside.push(y_out.unwrap_or(false));
        trace.coupling_gap.push(state.coupling_gap().unwrap_or(f64::NAN));
    };
    record(&mut state, &mut trace);
    while state.steps < n_steps {
        step(&mut state, model, params)?;
        if state.steps % every == 0 {
            record(&mut state, &mut trace);
        }
    }
    Ok(trace)
}

pub const EXIT_CSV_FIXED: [&str; 6] = ["seed", "sigma", "dt", "N", "tau", "censored"];

/// Writes records as CSV (`seed,sigma,dt,N,tau,censored,exit_x1..exit_xd,
/// boundary_component,max_coupling_gap`), floats with 17 significant digits.
pub fn write_exit_csv<W: Write>(mut out: W, records: &[ExitRecord], dim: usize) -> Result<()> {
    let mut header: Vec<String> = EXIT_CSV_FIXED.iter().map(|s| s.to_string()).collect();
    header.extend((1..=dim).map(|i| format!("exit_x{i}")));
    header.push("boundary_component".into());
    header.push("max_coupling_gap".into());
    writeln!(out, "{}", header.join(","))?;
    for r in records {
        let mut row = vec![
            r.seed.to_string(),
            format!("{:.16e}", r.sigma),
            format!("{:.16e}", r.dt),
            r.n_particles.to_string(),
            format!("{:.16e}", r.tau),
            r.censored.to_string(),
        ];
        for k in 0..dim {
            row.push(format!("{:.16e}", r.exit_point.get(k).copied().unwrap_or(f64::NAN)));
        }
        row.push(r.boundary_component.clone().unwrap_or_default());
        row.push(format!("{:.16e}", r.max_coupling_gap));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{integrate_flow, FlowOptions};
    use crate::potentials::{make_builtin, Coupling, PotentialSpec};
    use crate::sde::InteractionMode;

    fn dw(alpha: f64) -> PotentialModel {
        make_builtin(&PotentialSpec::quadratic("doublewell1d", alpha, Coupling::Attractive)).unwrap()
    }

    fn interval() -> Domain {
        Domain::Interval { lo: -2.0, hi: 0.0 }
    }

    #[test]
    fn zero_noise_at_attractor_is_censored() {
        let m = dw(0.1);
        let d = interval();
        let mut p = SimulationParams::new(0.0, 1e-3, 4, 1);
        // the step rule dt ≤ 0.01σ² admits no step at σ = 0
        p.unsafe_dt = true;
        let rec = run_until_exit(&m, &p, &ExitSetup::new(&d, &[-1.0], 0.2, 20_000)).unwrap();
        assert!(rec.censored);
        assert_eq!(rec.tau, 20.0);
        assert_eq!(rec.exit_point, vec![-1.0]);
    }

    #[test]
    fn majority_exits_right() {
        let m = dw(0.1);
        let d = interval();
        let mut right = 0;
        let n_seeds = 100;
        for seed in 0..n_seeds {
            let mut p = SimulationParams::new(0.5, 1e-3, 256, seed);
            p.interaction_mode = InteractionMode::MeanfieldLinear;
            let rec = run_until_exit(&m, &p, &ExitSetup::new(&d, &[-1.0], 0.2, 5_000_000)).unwrap();
            assert!(!rec.censored && rec.tau > 0.0);
            assert!(d.signed_margin(&rec.exit_point).abs() <= 0.5 * (1e-3f64).sqrt() * 6.0);
            if rec.boundary_component.as_deref() == Some("hi") {
                assert!(rec.exit_point[0].abs() < 0.2);
                right += 1;
            }
        }
        assert!(right * 2 > n_seeds, "{right} of {n_seeds}");
    }

    #[test]
    fn zero_interaction_gap_is_exactly_zero() {
        let m = make_builtin(&PotentialSpec::new("doublewell1d", "none")).unwrap();
        let d = interval();
        for seed in 0..5 {
            let p = SimulationParams::new(0.5, 1e-3, 16, seed);
            let mut s = ExitSetup::new(&d, &[-1.0], 0.2, 2_000_000);
            s.couple_after = CoupleAfter::At(0.0);
            let rec = run_until_exit(&m, &p, &s).unwrap();
            assert!(rec.coupled_active);
            assert_eq!(rec.max_coupling_gap, 0.0);
        }
    }

    #[test]
    fn tagged_only_records_match_full_ensemble() {
        let m = make_builtin(&PotentialSpec::new("doublewell1d", "none")).unwrap();
        let d = interval();
        for seed in 10..13 {
            let p = SimulationParams::new(0.5, 1e-3, 8, seed);
            let mut s = ExitSetup::new(&d, &[-1.0], 0.2, 2_000_000);
            s.couple_after = CoupleAfter::At(0.0);
            let solo = run_until_exit(&m, &p, &s).unwrap();
            // stabilization coupling forces the full ensemble; with all
            // particles at a it also starts at t = 0
            s.couple_after = CoupleAfter::AtStabilization;
            let full = run_until_exit(&m, &p, &s).unwrap();
            assert_eq!(solo.notes, vec!["tagged-only".to_string()]);
            assert!(full.notes.is_empty());
            assert_eq!(solo.tau.to_bits(), full.tau.to_bits());
            assert_eq!(solo.exit_point, full.exit_point);
            assert_eq!(solo.coupling_start, full.coupling_start);
        }
    }

    #[test]
    fn reruns_are_bit_identical_across_pool_sizes() {
        let m = make_builtin(&PotentialSpec::gaussian("doublewell1d", 0.5, 1.0)).unwrap();
        let d = interval();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut p = SimulationParams::new(0.5, 1e-3, 600, 3);
                p.horizon = Horizon::Time(2.0);
                let s = ExitSetup::new(&d, &[-1.0], 0.2, u64::MAX);
                run_until_exit(&m, &p, &s).unwrap()
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a, b);
        assert_eq!(a.tau.to_bits(), b.tau.to_bits());
    }

    #[test]
    fn zero_noise_matches_flow() {
        // coinciding particles feel no interaction, so the ensemble follows -∇V
        let m = dw(0.1);
        let mut p = SimulationParams::new(0.0, 1e-3, 2, 0);
        p.horizon = Horizon::Time(10.0);
        let mut s = EnsembleState::new(2, &[-0.4], 0);
        let opts = FlowOptions {
            dt: 1e-3,
            horizon: 10.0,
            ..FlowOptions::default()
        };
        let flow = integrate_flow(|x, out| m.grad_v(x, out), &[-0.4], &opts).unwrap();
        let mut worst: f64 = 0.0;
        while s.steps < 10_000 {
            step(&mut s, &m, &p).unwrap();
            if s.steps % 1000 == 0 {
                let i = flow.times.iter().position(|t| (t - s.time).abs() < 1e-9).unwrap();
                worst = worst.max((flow.points[i][0] - s.particle(0)[0]).abs());
            }
        }
        assert!(worst > 0.0 && worst <= 5e-3, "{worst}");
    }

    #[test]
    fn csv_layout() {
        let rec = ExitRecord {
            seed: 7,
            sigma: 0.3,
            dt: 1e-3,
            n_particles: 256,
            tau: 12.5,
            censored: false,
            exit_point: vec![0.01],
            boundary_component: Some("hi".into()),
            coupled_active: true,
            coupling_start: Some(0.0),
            max_coupling_gap: 0.05,
            y_outside_samples: 0,
            coupled_samples: 3,
            notes: vec![],
        };
        let mut buf = Vec::new();
        write_exit_csv(&mut buf, &[rec], 1).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "seed,sigma,dt,N,tau,censored,exit_x1,boundary_component,max_coupling_gap");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 9);
        assert_eq!(row[1], "2.9999999999999999e-1");
        assert_eq!(row[1].parse::<f64>().unwrap(), 0.3);
        assert_eq!(row[7], "hi");
    }
}
