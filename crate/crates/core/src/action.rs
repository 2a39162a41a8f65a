//! Discretized rate function
//!
//! ```text
//! I_T(φ) = 1/4 ∫_0^T |φ' + ∇V(φ) + ∇F(φ - γ)|² dt
//! ```
//!
//! and its minimization over paths with fixed endpoints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::Domain;
use crate::linalg;
use crate::potentials::PotentialModel;

/// What the interaction is measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// `γ ≡ a`: the drift is `-∇W_a`.
    FrozenAtA,
    /// `γ` solves `γ' = -∇V(γ)` from the path's initial point.
    DeterministicFlow,
}

/// A path sampled at `n_segments + 1` uniform times on `[0, T]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathGrid {
    pub t_final: f64,
    pub n_segments: usize,
    pub points: Vec<Vec<f64>>,
    pub endpoints_fixed: (bool, bool),
}

impl PathGrid {
    pub fn straight_line(x0: &[f64], x1: &[f64], t_final: f64, n_segments: usize) -> Self {
        let points = (0..=n_segments)
            .map(|k| {
                let s = k as f64 / n_segments as f64;
                x0.iter().zip(x1).map(|(a, b)| a + s * (b - a)).collect()
            })
            .collect();
        PathGrid {
            t_final,
            n_segments,
            points,
            endpoints_fixed: (true, true),
        }
    }

    pub fn from_fn(t_final: f64, n_segments: usize, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let h = t_final / n_segments as f64;
        PathGrid {
            t_final,
            n_segments,
            points: (0..=n_segments).map(|k| f(k as f64 * h)).collect(),
            endpoints_fixed: (true, true),
        }
    }

    pub fn step(&self) -> f64 {
        self.t_final / self.n_segments as f64
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn times(&self) -> Vec<f64> {
        let h = self.step();
        (0..=self.n_segments).map(|k| k as f64 * h).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.n_segments < 2 || self.points.len() != self.n_segments + 1 {
            return Err(invalid("n_segments", "need at least 2 segments and n_segments + 1 points"));
        }
        if !(self.t_final > 0.0) {
            return Err(invalid("T", "must be positive"));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("path"));
        }
        Ok(())
    }
}

/// `γ` at the segment midpoints.
fn gamma_midpoints(model: &PotentialModel, path: &PathGrid, mode: GammaMode) -> Vec<Vec<f64>> {
    let n = path.n_segments;
    match mode {
        GammaMode::FrozenAtA => vec![model.attractor.clone(); n],
        GammaMode::DeterministicFlow => {
            // RK4 on the half-step grid, refined to at most 1e-3 per substep
            let d = path.dim();
            let half = 0.5 * path.step();
            let sub = (half / 1e-3).ceil().max(1.0) as usize;
            let dt = half / sub as f64;
            let f = |x: &[f64]| -> Vec<f64> {
                let mut g = vec![0.0; d];
                model.grad_v(x, &mut g);
                g.iter().map(|v| -v).collect()
            };
            let advance = |x: &mut Vec<f64>| {
                for _ in 0..sub {
                    let k1 = f(x);
                    let x2: Vec<f64> = x.iter().zip(&k1).map(|(a, k)| a + 0.5 * dt * k).collect();
                    let k2 = f(&x2);
                    let x3: Vec<f64> = x.iter().zip(&k2).map(|(a, k)| a + 0.5 * dt * k).collect();
                    let k3 = f(&x3);
                    let x4: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a + dt * k).collect();
                    let k4 = f(&x4);
                    for c in 0..d {
                        x[c] += dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
                    }
                }
            };
            let mut x = path.points[0].clone();
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                advance(&mut x);
                out.push(x.clone());
                advance(&mut x);
            }
            out
        }
    }
}

struct Evaluation {
    value: f64,
    residuals: Vec<Vec<f64>>,
    midpoints: Vec<Vec<f64>>,
}

fn evaluate(points: &[Vec<f64>], h: f64, model: &PotentialModel, gamma: &[Vec<f64>]) -> Evaluation {
    let d = points[0].len();
    let n = points.len() - 1;
    let mut residuals = Vec::with_capacity(n);
    let mut midpoints = Vec::with_capacity(n);
    let mut sq = Vec::with_capacity(n);
    let mut gv = vec![0.0; d];
    let mut gf = vec![0.0; d];
    for k in 0..n {
        let (p, q) = (&points[k], &points[k + 1]);
        let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
        let shifted = linalg::sub(&m, &gamma[k]);
        model.grad_v(&m, &mut gv);
        model.grad_f(&shifted, &mut gf);
        let r: Vec<f64> = (0..d).map(|c| (q[c] - p[c]) / h + gv[c] + gf[c]).collect();
        sq.push(linalg::dot(&r, &r));
        residuals.push(r);
        midpoints.push(m);
    }
    Evaluation {
        value: 0.25 * h * linalg::pairwise_sum(&sq),
        residuals,
        midpoints,
    }
}

/// Midpoint-rule action of a path.
pub fn action(path: &PathGrid, model: &PotentialModel, mode: GammaMode) -> Result<f64> {
    path.validate()?;
    let gamma = gamma_midpoints(model, path, mode);
    let v = evaluate(&path.points, path.step(), model, &gamma).value;
    if !v.is_finite() {
        return Err(Error::NonFinite("action"));
    }
    Ok(v)
}

fn gradient_from(eval: &Evaluation, h: f64, model: &PotentialModel, gamma: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = eval.residuals.len();
    let d = eval.residuals[0].len();
    // J_k r_k with J = ∇²V(m_k) + ∇²F(m_k - γ_k)
    let mut hv = vec![0.0; d * d];
    let mut hf = vec![0.0; d * d];
    let jr: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let m = &eval.midpoints[k];
            model.hess_v(m, &mut hv);
            model.hess_f(&linalg::sub(m, &gamma[k]), &mut hf);
            let j: Vec<f64> = hv.iter().zip(&hf).map(|(a, b)| a + b).collect();
            linalg::mat_vec(&j, &eval.residuals[k])
        })
        .collect();
    let mut grad = vec![vec![0.0; d]; n + 1];
    for (k, r) in eval.residuals.iter().enumerate() {
        for c in 0..d {
            // ∂r_k/∂φ_k = -1/h + J/2, ∂r_k/∂φ_{k+1} = 1/h + J/2
            grad[k][c] += 0.5 * h * (-r[c] / h + 0.5 * jr[k][c]);
            grad[k + 1][c] += 0.5 * h * (r[c] / h + 0.5 * jr[k][c]);
        }
    }
    grad
}

/// Gradient of the discrete action with respect to every grid point.
/// Rows for fixed endpoints are included; callers ignore them.
pub fn action_gradient(path: &PathGrid, model: &PotentialModel, mode: GammaMode) -> Result<Vec<Vec<f64>>> {
    path.validate()?;
    let gamma = gamma_midpoints(model, path, mode);
    let h = path.step();
    let eval = evaluate(&path.points, h, model, &gamma);
    Ok(gradient_from(&eval, h, model, &gamma))
}

#[derive(Clone, Debug, Serialize)]
pub struct MinimizedPath {
    pub path: PathGrid,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Accepted values, non-increasing.
    pub history: Vec<f64>,
}

pub const ACTION_REL_TOL: f64 = 1e-6;
const TOL_WINDOW: usize = 500;
const ABS_FLOOR: f64 = 1e-14;

/// Minimizes the action between fixed endpoints.
///
/// Runs accelerated gradient descent on the interior points from the
/// straight line plus seeded jitter. When the horizon is long enough, a
/// second run starts from the minimizer over the last quarter of the
/// horizon padded with `x_start` in front; the better result is returned.
/// Long straight-line starts tend to settle on paths that overshoot a
/// saddle and slide back, which the padded start avoids.
#[allow(clippy::too_many_arguments)]
pub fn minimize_action(
    x_start: &[f64],
    x_end: &[f64],
    t_final: f64,
    n_segments: usize,
    model: &PotentialModel,
    mode: GammaMode,
    iters: usize,
    seed: u64,
) -> Result<MinimizedPath> {
    if x_start.len() != model.dim || x_end.len() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            got: x_start.len().max(x_end.len()),
        });
    }
    let mut path = PathGrid::straight_line(x_start, x_end, t_final, n_segments);
    path.validate()?;
    let n = n_segments;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 0.01 * linalg::dist(x_start, x_end);
    if scale > 0.0 {
        for p in &mut path.points[1..n] {
            for v in p.iter_mut() {
                *v += scale * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
    }
    let mut best = descend(path, model, mode, iters)?;

    let n_warm = n / 4;
    let h = t_final / n as f64;
    if n_warm >= 2 && t_final / 4.0 >= WARM_MIN_HORIZON {
        let warm = minimize_action(x_start, x_end, n_warm as f64 * h, n_warm, model, mode, iters, seed ^ 0x5bd1e995)?;
        let mut points = vec![x_start.to_vec(); n - n_warm];
        points.extend(warm.path.points);
        let padded = PathGrid {
            t_final,
            n_segments: n,
            points,
            endpoints_fixed: (true, true),
        };
        let run = descend(padded, model, mode, iters)?;
        if run.value < best.value {
            best = run;
        }
    }
    Ok(best)
}

const WARM_MIN_HORIZON: f64 = 1.0;

fn descend(mut path: PathGrid, model: &PotentialModel, mode: GammaMode, iters: usize) -> Result<MinimizedPath> {
    let d = model.dim;
    let n = path.n_segments;
    let h = path.step();
    let gamma = gamma_midpoints(model, &path, mode);
    let mut x = path.points.clone();
    let mut fx = evaluate(&x, h, model, &gamma).value;
    if !fx.is_finite() {
        return Err(Error::NonFinite("action"));
    }
    // Preconditioner: Hessian of the kinetic part plus a curvature shift.
    let shift = 0.5 * h * model.params.theta1.max(1.0).powi(2);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut lip = 1.0;
    let mut history = vec![fx];
    let mut converged = fx <= ABS_FLOOR;
    let mut it = 0;
    while it < iters && !converged {
        it += 1;
        let ey = evaluate(&y, h, model, &gamma);
        let gy = gradient_from(&ey, h, model, &gamma);
        let dir = precondition(&gy, h, shift);
        let gd: f64 = (1..n).map(|k| linalg::dot(&gy[k], &dir[k])).sum();
        if !(gd > 0.0) {
            converged = true;
            break;
        }
        let (x_new, f_new) = loop {
            let mut cand = y.clone();
            for k in 1..n {
                for c in 0..d {
                    cand[k][c] -= dir[k][c] / lip;
                }
            }
            let fc = evaluate(&cand, h, model, &gamma).value;
            if fc.is_finite() && fc <= ey.value - 0.5 / lip * gd {
                break (cand, fc);
            }
            lip *= 2.0;
            if lip > 1e30 {
                return Err(Error::NonFinite("action descent"));
            }
        };
        if f_new > fx {
            // momentum overshot: restart from the last accepted point
            y = x.clone();
            t = 1.0;
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_new;
        y = x_new
            .iter()
            .zip(&x)
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + beta * (p - q)).collect())
            .collect();
        x = x_new;
        fx = f_new;
        t = t_new;
        lip *= 0.9;
        history.push(fx);
        let m = history.len();
        if fx <= ABS_FLOOR {
            converged = true;
        } else if m > TOL_WINDOW {
            converged = history[m - 1 - TOL_WINDOW] - fx <= ACTION_REL_TOL * fx.abs();
        }
    }
    path.points = x;
    for p in &path.points {
        debug_assert_eq!(p.len(), d);
    }
    Ok(MinimizedPath {
        path,
        value: fx,
        iterations: it,
        converged,
        history,
    })
}

/// Solves `(L/(2h) + shift) p = g` on the interior rows, `L` the Dirichlet
/// second-difference matrix, coordinate by coordinate (Thomas algorithm).
fn precondition(g: &[Vec<f64>], h: f64, shift: f64) -> Vec<Vec<f64>> {
    let n = g.len() - 1;
    let d = g[0].len();
    let (diag, off) = (1.0 / h + shift, -0.5 / h);
    let mut out = vec![vec![0.0; d]; n + 1];
    let mut cp = vec![0.0; n + 1];
    let mut dp = vec![0.0; n + 1];
    for c in 0..d {
        for k in 1..n {
            let (lower, prev_c, prev_d) = if k == 1 { (0.0, 0.0, 0.0) } else { (off, cp[k - 1], dp[k - 1]) };
            let denom = diag - lower * prev_c;
            cp[k] = off / denom;
            dp[k] = (g[k][c] - lower * prev_d) / denom;
        }
        let mut next = 0.0;
        for k in (1..n).rev() {
            next = dp[k] - cp[k] * next;
            out[k][c] = next;
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub value: f64,
    pub argmin: Vec<f64>,
    pub component: String,
    /// `(target, value)` for every sampled boundary point.
    pub candidates: Vec<(Vec<f64>, f64)>,
    pub all_converged: bool,
}

const TIE_REL: f64 = 1e-5;

/// Minimal action from the attractor to sampled boundary points.
pub fn boundary_action_sweep(
    domain: &Domain,
    model: &PotentialModel,
    t_final: f64,
    n_segments: usize,
    n_boundary: usize,
    iters: usize,
    seed: u64,
) -> Result<SweepResult> {
    let targets = domain.boundary_sample(n_boundary, seed)?;
    let a = &model.attractor;
    let mut candidates = Vec::with_capacity(targets.len());
    let mut all_converged = true;
    let mut best: Option<(f64, Vec<f64>, String)> = None;
    for (i, b) in targets.iter().enumerate() {
        let run = minimize_action(a, &b.point, t_final, n_segments, model, GammaMode::FrozenAtA, iters, seed.wrapping_add(i as u64))?;
        all_converged &= run.converged;
        candidates.push((b.point.clone(), run.value));
        let better = match &best {
            None => true,
            Some((v, p, _)) => {
                let tie = (run.value - v).abs() <= TIE_REL * v.abs().max(run.value.abs()).max(1e-12);
                if tie {
                    b.point.partial_cmp(p) == Some(std::cmp::Ordering::Less)
                } else {
                    run.value < *v
                }
            }
        };
        if better {
            best = Some((run.value, b.point.clone(), b.component.clone()));
        }
    }
    let (value, argmin, component) = best.ok_or_else(|| Error::BoundarySampling("no boundary points".into()))?;
    Ok(SweepResult {
        value,
        argmin,
        component,
        candidates,
        all_converged,
    })
}
