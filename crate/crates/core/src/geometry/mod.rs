//! Exit domains, their enlargements and constrictions, exit costs
//! `H = inf_{∂D} (W_a - W_a(a))`, sublevel sets, and the domain-stability
//! check under the flow of `-∇W_a`.

mod domain;

pub use domain::{BoundaryPoint, Domain, SublevelSet};

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::flows::{integrate_flow, FlowOptions, TerminalReason};
use crate::linalg;
use crate::potentials::{CheckStatus, EffectivePotential};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitCostMethod {
    EndpointEval,
    GridRefine,
}

#[derive(Clone, Debug)]
pub struct ExitCostResult {
    /// `inf_{z ∈ ∂D} W_a(z) - W_a(a)`.
    pub h: f64,
    pub argmin: Vec<f64>,
    pub component: String,
    pub method: ExitCostMethod,
    pub tolerance: f64,
    /// Refinement failed; `h` is the best sampled value.
    pub grid_only: bool,
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

// Height first; near-ties resolved by the lexicographically smallest point.
fn better(h1: f64, p1: &[f64], h2: f64, p2: &[f64]) -> bool {
    let scale = 1e-12 * h1.abs().max(h2.abs()).max(1.0);
    if (h1 - h2).abs() <= scale {
        lex_cmp(p1, p2) == Ordering::Less
    } else {
        h1 < h2
    }
}

const REFINE_STARTS: usize = 10;
const REFINE_ITERS: usize = 2000;

fn refine_on_boundary(w: &EffectivePotential, domain: &Domain, start: &BoundaryPoint) -> Result<(f64, Vec<f64>, f64)> {
    let mut x = start.point.clone();
    let mut hx = w.height(&x);
    let mut eta = 0.1;
    for _ in 0..REFINE_ITERS {
        let g = w.gradient_vec(&x);
        let trial_free: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - eta * gi).collect();
        let trial = domain.project_to_boundary(&trial_free, &start.component)?;
        let ht = w.height(&trial);
        if !ht.is_finite() {
            return Err(Error::NonFinite("exit-cost refinement"));
        }
        if ht < hx {
            let moved = linalg::dist(&trial, &x);
            x = trial;
            hx = ht;
            eta *= 1.5;
            if moved < 1e-13 {
                break;
            }
        } else {
            eta *= 0.5;
            if eta < 1e-14 {
                break;
            }
        }
    }
    Ok((hx, x, eta))
}

/// Minimum of `W_a - W_a(a)` over ∂D.
///
/// One-dimensional domains are evaluated exactly at their two endpoints.
/// Otherwise `budget` boundary points are sampled and the best ten are
/// refined by projected gradient descent along ∂D.
pub fn exit_cost(w: &EffectivePotential, domain: &Domain, budget: usize, seed: u64) -> Result<ExitCostResult> {
    if !domain.contains(&w.center) {
        return Err(Error::AttractorOutsideDomain);
    }
    if domain.has_discrete_boundary() {
        let ends = domain.endpoints()?;
        let (h0, h1) = (w.height(&ends[0].point), w.height(&ends[1].point));
        let pick = if better(h1, &ends[1].point, h0, &ends[0].point) { 1 } else { 0 };
        return Ok(ExitCostResult {
            h: h0.min(h1),
            argmin: ends[pick].point.clone(),
            component: ends[pick].component.clone(),
            method: ExitCostMethod::EndpointEval,
            tolerance: 0.0,
            grid_only: false,
        });
    }
    let n_components = domain.component_labels().len();
    if budget < n_components {
        return Err(Error::Precondition(format!(
            "budget {budget} below the number of boundary components {n_components}"
        )));
    }
    let samples = domain.boundary_sample(budget, seed)?;
    let mut scored: Vec<(f64, BoundaryPoint)> = samples.into_iter().map(|b| (w.height(&b.point), b)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| lex_cmp(&a.1.point, &b.1.point)));
    let (grid_h, grid_best) = scored
        .first()
        .map(|(h, b)| (*h, b.clone()))
        .ok_or_else(|| Error::BoundarySampling("no boundary points".into()))?;

    let mut best: Option<(f64, Vec<f64>, String, f64)> = None;
    for (_, start) in scored.iter().take(REFINE_STARTS) {
        match refine_on_boundary(w, domain, start) {
            Ok((h, p, eta)) => {
                let replace = match &best {
                    None => true,
                    Some((hb, pb, _, _)) => better(h, &p, *hb, pb),
                };
                if replace {
                    best = Some((h, p, start.component.clone(), eta));
                }
            }
            Err(e) => log::warn!("exit-cost refinement failed from {:?}: {e}", start.point),
        }
    }
    Ok(match best {
        Some((h, argmin, component, eta)) => ExitCostResult {
            h,
            argmin,
            component,
            method: ExitCostMethod::GridRefine,
            tolerance: eta.max(1e-12),
            grid_only: false,
        },
        None => ExitCostResult {
            h: grid_h,
            argmin: grid_best.point,
            component: grid_best.component,
            method: ExitCostMethod::GridRefine,
            tolerance: f64::NAN,
            grid_only: true,
        },
    })
}

/// The component of `{W_a - W_a(a) < level}` that contains `a`.
pub fn sublevel_component(w: &EffectivePotential, level: f64) -> Result<Domain> {
    if !(level > 0.0) {
        return Err(crate::error::invalid("level", "must be positive"));
    }
    let a = &w.center;
    let g = linalg::norm(&w.gradient_vec(a));
    let lam = w.min_hessian_eigenvalue(a);
    if g > 1e-6 || lam <= 0.0 {
        return Err(Error::NotAMinimum { min_eigenvalue: lam });
    }
    Ok(Domain::Sublevel(SublevelSet {
        potential: w.clone(),
        base: w.value(a),
        level,
        seed: a.clone(),
    }))
}

/// Outcome of [`check_domain_stability`].
#[derive(Clone, Debug)]
pub struct StabilityReport {
    pub status: CheckStatus,
    /// Largest positive signed margin reached by any boundary trajectory.
    pub worst_excursion: f64,
    /// Largest final distance to `a`.
    pub worst_final_distance: f64,
    pub worst_start: Option<Vec<f64>>,
    pub trajectories: usize,
    pub detail: String,
}

/// Integrates `ψ` from boundary samples and checks that each trajectory stays
/// in the closure of D and reaches `B_{1e-3}(a)` within `flow_horizon`.
pub fn check_domain_stability(
    w: &EffectivePotential,
    domain: &Domain,
    flow_horizon: f64,
    n_boundary: usize,
    seed: u64,
) -> Result<StabilityReport> {
    const MARGIN_TOL: f64 = 1e-6;
    const ARRIVAL: f64 = 1e-3;
    if !(flow_horizon > 0.0) {
        return Err(crate::error::invalid("flow_horizon", "must be positive"));
    }
    let mut starts = domain.boundary_sample(n_boundary.max(10), seed)?;
    starts.dedup_by(|a, b| a.point == b.point);
    if domain.has_discrete_boundary() {
        starts.truncate(2);
    }
    let opts = FlowOptions {
        dt: 1e-3,
        horizon: flow_horizon,
        stop_ball: Some((w.center.clone(), 0.5 * ARRIVAL)),
        ..Default::default()
    };
    let mut status = CheckStatus::Pass;
    let mut worst_excursion = f64::NEG_INFINITY;
    let mut worst_final = 0.0f64;
    let mut worst_start = None;
    let mut detail = String::new();
    for start in &starts {
        let traj = integrate_flow(|x, out| w.gradient(x, out), &start.point, &opts)?;
        let excursion = traj
            .points
            .iter()
            .skip(1)
            .map(|p| domain.signed_margin(p))
            .fold(f64::NEG_INFINITY, f64::max);
        let end = traj.last();
        let final_dist = linalg::dist(end, &w.center);
        let stuck_at_critical = linalg::norm(&w.gradient_vec(end)) < 1e-6;
        let failed = excursion > MARGIN_TOL || final_dist > ARRIVAL || traj.terminal_reason == TerminalReason::LeftRegion;
        if excursion > worst_excursion || final_dist > worst_final {
            worst_start = Some(start.point.clone());
        }
        worst_excursion = worst_excursion.max(excursion);
        worst_final = worst_final.max(final_dist);
        if failed {
            let this = if matches!(domain, Domain::Sublevel(_)) && stuck_at_critical && excursion <= MARGIN_TOL {
                // boundary passes through another critical point: the level
                // sits at a saddle height
                CheckStatus::Inconclusive
            } else {
                CheckStatus::Fail
            };
            if status != CheckStatus::Fail {
                status = this;
            }
            if detail.is_empty() {
                detail = format!(
                    "trajectory from {:?}: max margin {excursion:.3e}, final distance to a {final_dist:.3e}",
                    start.point
                );
            }
        }
    }
    if detail.is_empty() {
        detail = format!(
            "{} boundary trajectories stay in the closure and reach a (max margin {worst_excursion:.2e}, max final distance {worst_final:.2e})",
            starts.len()
        );
    }
    Ok(StabilityReport {
        status,
        worst_excursion,
        worst_final_distance: worst_final,
        worst_start,
        trajectories: starts.len(),
        detail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{make_builtin, Coupling, PotentialSpec};
    use std::sync::Arc;

    fn w1d() -> EffectivePotential {
        Arc::new(make_builtin(&PotentialSpec::quadratic("doublewell1d", 0.1, Coupling::Attractive)).unwrap()).effective()
    }

    #[test]
    fn interval_exit_cost_endpoint_oracle() {
        let w = w1d();
        let d = Domain::Interval { lo: -2.0, hi: 0.0 };
        let r = exit_cost(&w, &d, 100, 0).unwrap();
        // W_a(0) = 0.05, W_a(-2) = 2.05, W_a(-1) = -0.25
        assert!((r.h - 0.30).abs() < 1e-14);
        assert_eq!(r.argmin, vec![0.0]);
        assert_eq!(r.component, "hi");
        assert_eq!(r.method, ExitCostMethod::EndpointEval);
    }

    #[test]
    fn ball_exit_cost_is_min_of_endpoints() {
        let w = w1d();
        let half = 0.5 * w.convexity_radius;
        let d = Domain::Ball {
            center: vec![-1.0],
            radius: half,
        };
        let r = exit_cost(&w, &d, 100, 0).unwrap();
        let oracle = w.height(&[-1.0 - half]).min(w.height(&[-1.0 + half]));
        assert_eq!(r.h, oracle);
        assert!(r.h > 0.0);
    }

    #[test]
    fn attractor_on_boundary_is_rejected() {
        let w = w1d();
        let d = Domain::Interval { lo: -1.0, hi: 0.0 };
        assert!(matches!(exit_cost(&w, &d, 10, 0), Err(Error::AttractorOutsideDomain)));
    }

    #[test]
    fn sublevel_membership() {
        let w = w1d();
        let l35 = sublevel_component(&w, 0.35).unwrap();
        assert!(l35.contains(&[-1.0]));
        assert!(l35.contains(&[0.0]));
        let l25 = sublevel_component(&w, 0.25).unwrap();
        assert!(!l25.contains(&[0.0]));
        // boundary points lie on the level set
        for b in l25.boundary_sample(4, 0).unwrap() {
            assert!(l25.signed_margin(&b.point).abs() <= 1e-8);
        }
    }

    #[test]
    fn sublevel_requires_minimum() {
        let m = Arc::new(make_builtin(&PotentialSpec::new("doublewell1d", "none")).unwrap());
        let w = EffectivePotential::new(m, &[0.0]);
        assert!(sublevel_component(&w, 0.1).is_err());
    }

    #[test]
    fn ball_exit_cost_in_2d_matches_dense_scan() {
        let m = Arc::new(make_builtin(&PotentialSpec::quadratic("doublewell2d", 0.3, Coupling::Attractive)).unwrap());
        let w = m.effective();
        let d = Domain::Ball {
            center: m.attractor.clone(),
            radius: 0.4,
        };
        let r = exit_cost(&w, &d, 200, 11).unwrap();
        let scan = (0..20000)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / 20000.0;
                w.height(&[m.attractor[0] + 0.4 * t.cos(), m.attractor[1] + 0.4 * t.sin()])
            })
            .fold(f64::INFINITY, f64::min);
        assert!(r.h <= scan + 1e-9 && r.h >= scan - 1e-6, "{} vs {}", r.h, scan);
        assert!(d.signed_margin(&r.argmin).abs() <= 1e-8);
        // deterministic for a fixed seed
        let again = exit_cost(&w, &d, 200, 11).unwrap();
        assert_eq!(r.h.to_bits(), again.h.to_bits());
        assert_eq!(r.argmin, again.argmin);
    }

    #[test]
    fn exit_cost_monotone_under_inflation() {
        let w = w1d();
        let d = Domain::Interval { lo: -2.0, hi: 0.0 };
        let h = exit_cost(&w, &d, 10, 0).unwrap().h;
        let mut prev_gap = f64::INFINITY;
        for kappa in [0.2, 0.1, 0.05] {
            let he = exit_cost(&w, &d.inflate(kappa).unwrap(), 10, 0).unwrap().h;
            let hc = exit_cost(&w, &d.deflate(kappa, &[-1.0]).unwrap(), 10, 0).unwrap().h;
            assert!(hc <= h && h <= he);
            let gap = he - hc;
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
    }

    #[test]
    fn stability_examples() {
        let w = w1d();
        let good = check_domain_stability(&w, &Domain::Interval { lo: -2.0, hi: 0.0 }, 50.0, 10, 0).unwrap();
        assert_eq!(good.status, CheckStatus::Pass, "{}", good.detail);
        let bad = check_domain_stability(&w, &Domain::Interval { lo: -2.0, hi: 0.5 }, 50.0, 10, 0).unwrap();
        assert_eq!(bad.status, CheckStatus::Fail);
        let small = Domain::Ball {
            center: vec![-1.0],
            radius: 0.5 * w.convexity_radius,
        };
        assert_eq!(check_domain_stability(&w, &small, 50.0, 10, 0).unwrap().status, CheckStatus::Pass);
    }

    #[test]
    fn sublevel_below_saddle_is_stable() {
        let w = w1d();
        let d = sublevel_component(&w, 0.2).unwrap();
        let r = check_domain_stability(&w, &d, 50.0, 10, 0).unwrap();
        assert_eq!(r.status, CheckStatus::Pass, "{}", r.detail);
    }
}
