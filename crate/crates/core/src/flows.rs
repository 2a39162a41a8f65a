//! Deterministic gradient flows: `γ' = -∇V(γ)` from the initial point and
//! `ψ' = -∇W_a(ψ)`, integrated with classical RK4.

use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::linalg;
use crate::potentials::PotentialModel;

pub const DEFAULT_CONVERGENCE_TOL: f64 = 1e-6;
const HARD_STEP_CAP: u64 = 100_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TerminalReason {
    Horizon,
    Converged,
    LeftRegion,
}

#[derive(Clone, Debug)]
pub struct FlowTrajectory {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub terminal_reason: TerminalReason,
}

impl FlowTrajectory {
    pub fn last(&self) -> &[f64] {
        self.points.last().expect("trajectory has at least one point")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap()
    }
}

/// Integration controls for [`integrate_flow`].
#[derive(Clone, Debug)]
pub struct FlowOptions<'a> {
    pub dt: f64,
    pub horizon: f64,
    /// Stop as soon as the trajectory enters this ball.
    pub stop_ball: Option<(Vec<f64>, f64)>,
    /// Largest allowed displacement `|field| * dt` per step; the step is
    /// halved until it fits.
    pub max_step_length: f64,
    /// Stop when the trajectory leaves this region.
    pub region: Option<&'a Domain>,
    pub max_steps: u64,
}

impl Default for FlowOptions<'_> {
    fn default() -> Self {
        FlowOptions {
            dt: 1e-3,
            horizon: 100.0,
            stop_ball: None,
            max_step_length: 0.05,
            region: None,
            max_steps: HARD_STEP_CAP,
        }
    }
}

fn rk4_step<G: Fn(&[f64], &mut [f64])>(field: &G, x: &[f64], h: f64, k: &mut [Vec<f64>; 4], tmp: &mut [f64]) -> Vec<f64> {
    let d = x.len();
    field(x, &mut k[0]);
    for i in 0..d {
        tmp[i] = x[i] - 0.5 * h * k[0][i];
    }
    field(tmp, &mut k[1]);
    for i in 0..d {
        tmp[i] = x[i] - 0.5 * h * k[1][i];
    }
    field(tmp, &mut k[2]);
    for i in 0..d {
        tmp[i] = x[i] - h * k[2][i];
    }
    field(tmp, &mut k[3]);
    (0..d)
        .map(|i| x[i] - h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]))
        .collect()
}

/// Integrates `x' = -field(x)` from `x0`.
///
/// `field` writes the gradient at its first argument into the second.
pub fn integrate_flow<G: Fn(&[f64], &mut [f64])>(field: G, x0: &[f64], opts: &FlowOptions) -> Result<FlowTrajectory> {
    if !(opts.dt > 0.0) {
        return Err(crate::error::invalid("dt", "must be positive"));
    }
    if opts.horizon < opts.dt {
        return Err(crate::error::invalid("horizon", "must be at least dt"));
    }
    let d = x0.len();
    let in_stop = |x: &[f64]| match &opts.stop_ball {
        Some((c, r)) => linalg::dist(x, c) <= *r,
        None => false,
    };
    let mut times = vec![0.0];
    let mut points = vec![x0.to_vec()];
    if in_stop(x0) {
        return Ok(FlowTrajectory {
            times,
            points,
            terminal_reason: TerminalReason::Converged,
        });
    }
    let mut k = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut tmp = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut steps = 0u64;
    loop {
        if steps >= opts.max_steps {
            return Err(Error::StepCapExceeded(opts.max_steps));
        }
        field(&x, &mut g);
        let speed = linalg::norm(&g);
        if !speed.is_finite() {
            return Err(Error::NonFinite("flow field"));
        }
        let remaining = opts.horizon - t;
        let mut h = opts.dt.min(remaining);
        while speed * h > opts.max_step_length && h > 1e-12 {
            h *= 0.5;
        }
        x = rk4_step(&field, &x, h, &mut k, &mut tmp);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow state"));
        }
        // guard against accumulated rounding making the last step tiny
        t = if remaining - h <= 1e-12 * opts.horizon { opts.horizon } else { t + h };
        steps += 1;
        times.push(t);
        points.push(x.clone());
        if in_stop(&x) {
            return Ok(FlowTrajectory {
                times,
                points,
                terminal_reason: TerminalReason::Converged,
            });
        }
        if let Some(region) = opts.region {
            if !region.contains(&x) {
                return Ok(FlowTrajectory {
                    times,
                    points,
                    terminal_reason: TerminalReason::LeftRegion,
                });
            }
        }
        if t >= opts.horizon {
            return Ok(FlowTrajectory {
                times,
                points,
                terminal_reason: TerminalReason::Horizon,
            });
        }
    }
}

/// The zero-noise path `γ` of the confinement flow.
pub fn gamma_flow(model: &PotentialModel, x_init: &[f64], opts: &FlowOptions) -> Result<FlowTrajectory> {
    integrate_flow(|x, out| model.grad_v(x, out), x_init, opts)
}

/// Outcome of [`stabilization_time`].
#[derive(Clone, Debug)]
pub struct Stabilization {
    /// First grid time with `|γ_t - a| <= kappa / 3`.
    pub time: f64,
    /// Smallest distance from the path to ∂D, up to that time.
    pub margin: f64,
}

/// Deterministic stabilization time: first time the confinement flow from
/// `x_init` enters `B_{kappa/3}(a)`. Fails when the flow leaves D or comes
/// within `kappa / 3` of ∂D.
pub fn stabilization_time(model: &PotentialModel, x_init: &[f64], kappa: f64, domain: &Domain) -> Result<Stabilization> {
    stabilization_time_with(model, x_init, kappa, domain, 1e-3, 1e4)
}

pub fn stabilization_time_with(
    model: &PotentialModel,
    x_init: &[f64],
    kappa: f64,
    domain: &Domain,
    dt: f64,
    horizon: f64,
) -> Result<Stabilization> {
    if !(kappa > 0.0) {
        return Err(crate::error::invalid("kappa", "must be positive"));
    }
    if !domain.contains(x_init) {
        return Err(Error::PathLeavesDomain { time: 0.0 });
    }
    let opts = FlowOptions {
        dt,
        horizon,
        stop_ball: Some((model.attractor.clone(), kappa / 3.0)),
        region: Some(domain),
        ..Default::default()
    };
    let traj = gamma_flow(model, x_init, &opts)?;
    match traj.terminal_reason {
        TerminalReason::LeftRegion => Err(Error::PathLeavesDomain {
            time: traj.final_time(),
        }),
        TerminalReason::Horizon => Err(Error::NoConvergence {
            iterations: traj.times.len(),
            context: "gamma flow did not reach B_{kappa/3}(a) within the horizon",
        }),
        TerminalReason::Converged => {
            let margin = traj
                .points
                .iter()
                .map(|p| -domain.signed_margin(p))
                .fold(f64::INFINITY, f64::min);
            if margin <= kappa / 3.0 {
                return Err(Error::MarginTooSmall {
                    margin,
                    required: kappa / 3.0,
                });
            }
            Ok(Stabilization {
                time: traj.final_time(),
                margin,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{make_builtin, Coupling, PotentialSpec};
    use std::sync::Arc;

    fn model() -> PotentialModel {
        make_builtin(&PotentialSpec::quadratic("doublewell1d", 0.1, Coupling::Attractive)).unwrap()
    }

    #[test]
    fn converges_to_left_well() {
        let m = model();
        let opts = FlowOptions {
            dt: 1e-3,
            horizon: 50.0,
            ..Default::default()
        };
        let traj = gamma_flow(&m, &[-0.5], &opts).unwrap();
        assert!((traj.last()[0] + 1.0).abs() <= 1e-6);
        assert_eq!(traj.times[0], 0.0);
        assert_eq!(traj.times.len(), traj.points.len());
    }

    #[test]
    fn linear_field_matches_exponential() {
        let opts = FlowOptions {
            dt: 1e-2,
            horizon: 1.0,
            ..Default::default()
        };
        let traj = integrate_flow(|x, out| out[0] = x[0], &[1.0], &opts).unwrap();
        assert_eq!(traj.terminal_reason, TerminalReason::Horizon);
        assert!((traj.last()[0] - (-1f64).exp()).abs() <= 1e-6);
        assert!((traj.final_time() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_at_attractor() {
        let m = Arc::new(model());
        let w = m.effective();
        let opts = FlowOptions {
            horizon: 5.0,
            ..Default::default()
        };
        let traj = integrate_flow(|x, out| w.gradient(x, out), &m.attractor, &opts).unwrap();
        assert!(traj.points.iter().all(|p| (p[0] - m.attractor[0]).abs() < 1e-15));
    }

    #[test]
    fn stop_ball_terminates_early() {
        let m = model();
        let opts = FlowOptions {
            horizon: 100.0,
            stop_ball: Some((vec![-1.0], 1e-3)),
            ..Default::default()
        };
        let traj = gamma_flow(&m, &[-0.5], &opts).unwrap();
        assert_eq!(traj.terminal_reason, TerminalReason::Converged);
        assert!(traj.final_time() < 100.0);
        assert!((traj.last()[0] + 1.0).abs() <= 1e-3);
    }

    #[test]
    fn energy_descends_along_flows() {
        let m = Arc::new(model());
        let w = m.effective();
        let opts = FlowOptions {
            horizon: 20.0,
            dt: 1e-2,
            ..Default::default()
        };
        for x0 in [-1.9, -0.5, 0.4, 1.7, 2.5] {
            let g = gamma_flow(&m, &[x0], &opts).unwrap();
            for p in g.points.windows(2) {
                assert!(m.v(&p[1]) <= m.v(&p[0]) + 1e-12);
            }
            let psi = integrate_flow(|x, out| w.gradient(x, out), &[x0], &opts).unwrap();
            for p in psi.points.windows(2) {
                assert!(w.value(&p[1]) <= w.value(&p[0]) + 1e-12);
            }
        }
    }

    #[test]
    fn step_halving_robustness() {
        let m = make_builtin(&PotentialSpec::new("doublewell2d", "none")).unwrap();
        let run = |dt: f64, x0: &[f64]| {
            let opts = FlowOptions {
                dt,
                horizon: 3.0,
                ..Default::default()
            };
            gamma_flow(&m, x0, &opts).unwrap().last().to_vec()
        };
        for x0 in [[0.3, 0.4], [-1.5, 0.8], [1.2, -0.2]] {
            let coarse = run(2e-3, &x0);
            let fine = run(1e-3, &x0);
            assert!(linalg::dist(&coarse, &fine) <= 1e-6, "{x0:?}");
        }
    }

    #[test]
    fn stabilization_examples() {
        let m = model();
        let d = Domain::Interval { lo: -2.0, hi: 0.0 };
        let s = stabilization_time(&m, &[-0.5], 0.3, &d).unwrap();
        assert!(s.time > 0.0 && s.time.is_finite());
        assert!((s.margin - 0.5).abs() < 1e-12);
        assert_eq!(stabilization_time(&m, &[-1.0], 0.3, &d).unwrap().time, 0.0);
        assert!(matches!(
            stabilization_time(&m, &[0.5], 0.3, &d),
            Err(Error::PathLeavesDomain { .. })
        ));
    }

    #[test]
    fn stabilization_time_non_increasing_in_kappa() {
        let m = model();
        let d = Domain::Interval { lo: -2.0, hi: 0.0 };
        let times: Vec<f64> = [0.05, 0.1, 0.2, 0.4, 0.55]
            .iter()
            .map(|k| stabilization_time(&m, &[-1.8], *k, &d).unwrap().time)
            .collect();
        assert!(times.windows(2).all(|w| w[1] <= w[0]), "{times:?}");
    }
}
