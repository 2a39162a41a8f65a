use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::potentials::EffectivePotential;

/// Number of points probed along the segment from the seed when testing
/// whether a point of a sublevel set belongs to the seed's component.
const COMPONENT_PROBES: usize = 32;
const RAY_MAX_RADIUS: f64 = 1e3;

/// The connected component of `{x : W_a(x) - W_a(a) < level}` containing `seed`.
///
/// Membership of the component is decided along the straight segment from
/// the seed, and boundary points are found by bisection along rays from it.
#[derive(Clone, Debug)]
pub struct SublevelSet {
    pub potential: EffectivePotential,
    pub base: f64,
    pub level: f64,
    pub seed: Vec<f64>,
}

impl SublevelSet {
    pub fn g(&self, x: &[f64]) -> f64 {
        self.potential.value(x) - self.base
    }

    fn grad_g_norm(&self, x: &[f64]) -> f64 {
        linalg::norm(&self.potential.gradient_vec(x))
    }

    fn on_seed_component(&self, x: &[f64]) -> bool {
        (1..COMPONENT_PROBES).all(|k| {
            let t = k as f64 / COMPONENT_PROBES as f64;
            let p: Vec<f64> = self.seed.iter().zip(x).map(|(s, xi)| s + t * (xi - s)).collect();
            self.g(&p) < self.level
        })
    }

    /// First crossing of the level set along the ray `seed + t * dir`.
    pub fn ray_crossing(&self, dir: &[f64]) -> Result<Vec<f64>> {
        let at = |t: f64| -> Vec<f64> { self.seed.iter().zip(dir).map(|(s, u)| s + t * u).collect() };
        let mut step = 1e-2;
        let mut t_in = 0.0;
        let mut t_out = step;
        while self.g(&at(t_out)) < self.level {
            t_in = t_out;
            step *= 1.1;
            t_out += step;
            if t_out > RAY_MAX_RADIUS {
                return Err(Error::BoundarySampling(format!(
                    "level {} not reached within radius {RAY_MAX_RADIUS}",
                    self.level
                )));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (t_in + t_out);
            if mid <= t_in || mid >= t_out {
                break;
            }
            if self.g(&at(mid)) < self.level {
                t_in = mid;
            } else {
                t_out = mid;
            }
        }
        Ok(at(t_out))
    }
}

/// An open region D used for exit experiments.
#[derive(Clone, Debug)]
pub enum Domain {
    Interval { lo: f64, hi: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Sublevel(SublevelSet),
}

/// A sampled point of ∂D with the label of its boundary component.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryPoint {
    pub point: Vec<f64>,
    pub component: String,
}

fn unit_direction(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let u: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = linalg::norm(&u);
        if n > 1e-12 {
            return u.into_iter().map(|v| v / n).collect();
        }
    }
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Box { lo, .. } => lo.len(),
            Domain::Ball { center, .. } => center.len(),
            Domain::Sublevel(s) => s.seed.len(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Domain::Interval { lo, hi } => x[0] > *lo && x[0] < *hi,
            Domain::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| v > l && v < h),
            Domain::Ball { center, radius } => linalg::dist(x, center) < *radius,
            Domain::Sublevel(s) => s.g(x) < s.level && s.on_seed_component(x),
        }
    }

    /// Negative inside, positive outside; approximately the distance to ∂D.
    pub fn signed_margin(&self, x: &[f64]) -> f64 {
        match self {
            Domain::Interval { lo, hi } => (lo - x[0]).max(x[0] - hi),
            Domain::Box { lo, hi } => {
                let mut outside = 0.0;
                let mut inside = f64::NEG_INFINITY;
                for ((v, l), h) in x.iter().zip(lo).zip(hi) {
                    let q = (l - v).max(v - h);
                    if q > 0.0 {
                        outside += q * q;
                    }
                    inside = inside.max(q);
                }
                if outside > 0.0 {
                    outside.sqrt()
                } else {
                    inside
                }
            }
            Domain::Ball { center, radius } => linalg::dist(x, center) - radius,
            Domain::Sublevel(s) => {
                let gn = s.grad_g_norm(x).max(1e-300);
                let m = (s.g(x) - s.level) / gn;
                if m < 0.0 && !s.on_seed_component(x) {
                    -m
                } else {
                    m
                }
            }
        }
    }

    /// Label of the boundary component closest to `x` (used to classify exits).
    pub fn component_of(&self, x: &[f64]) -> String {
        match self {
            Domain::Interval { lo, hi } => {
                if (x[0] - lo).abs() <= (x[0] - hi).abs() {
                    "lo".into()
                } else {
                    "hi".into()
                }
            }
            Domain::Box { lo, hi } => {
                let mut best = (f64::INFINITY, String::new());
                for (i, ((v, l), h)) in x.iter().zip(lo).zip(hi).enumerate() {
                    let dl = (v - l).abs();
                    if dl < best.0 {
                        best = (dl, format!("x{}-lo", i + 1));
                    }
                    let dh = (v - h).abs();
                    if dh < best.0 {
                        best = (dh, format!("x{}-hi", i + 1));
                    }
                }
                best.1
            }
            Domain::Ball { center, .. } => {
                if center.len() == 1 {
                    if x[0] < center[0] { "lo".into() } else { "hi".into() }
                } else {
                    "sphere".into()
                }
            }
            Domain::Sublevel(s) => {
                if s.seed.len() == 1 {
                    if x[0] < s.seed[0] { "lo".into() } else { "hi".into() }
                } else {
                    "level".into()
                }
            }
        }
    }

    /// Labels of all boundary components.
    pub fn component_labels(&self) -> Vec<String> {
        match self {
            Domain::Interval { .. } => vec!["lo".into(), "hi".into()],
            Domain::Box { lo, .. } => (1..=lo.len())
                .flat_map(|i| [format!("x{i}-lo"), format!("x{i}-hi")])
                .collect(),
            Domain::Ball { center, .. } if center.len() == 1 => vec!["lo".into(), "hi".into()],
            Domain::Sublevel(s) if s.seed.len() == 1 => vec!["lo".into(), "hi".into()],
            Domain::Ball { .. } => vec!["sphere".into()],
            Domain::Sublevel(_) => vec!["level".into()],
        }
    }

    /// Whether ∂D is a finite point set (one-dimensional domains).
    pub fn has_discrete_boundary(&self) -> bool {
        self.dim() == 1
    }

    /// The two boundary points of a one-dimensional domain.
    pub fn endpoints(&self) -> Result<[BoundaryPoint; 2]> {
        let (lo, hi) = match self {
            Domain::Interval { lo, hi } => (*lo, *hi),
            Domain::Box { lo, hi } if lo.len() == 1 => (lo[0], hi[0]),
            Domain::Ball { center, radius } if center.len() == 1 => (center[0] - radius, center[0] + radius),
            Domain::Sublevel(s) if s.seed.len() == 1 => (s.ray_crossing(&[-1.0])?[0], s.ray_crossing(&[1.0])?[0]),
            _ => return Err(Error::Precondition("endpoints of a multi-dimensional domain".into())),
        };
        let (lo_label, hi_label) = match self {
            Domain::Box { .. } => ("x1-lo", "x1-hi"),
            _ => ("lo", "hi"),
        };
        Ok([
            BoundaryPoint {
                point: vec![lo],
                component: lo_label.into(),
            },
            BoundaryPoint {
                point: vec![hi],
                component: hi_label.into(),
            },
        ])
    }

    /// `n` points on ∂D. One-dimensional domains cycle through their two
    /// endpoints; the sample is deterministic given `seed`.
    pub fn boundary_sample(&self, n: usize, seed: u64) -> Result<Vec<BoundaryPoint>> {
        if n == 0 {
            return Err(Error::BoundarySampling("empty boundary sample requested".into()));
        }
        if self.has_discrete_boundary() {
            let ends = self.endpoints()?;
            return Ok((0..n).map(|k| ends[k % 2].clone()).collect());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim();
        let mut out = Vec::with_capacity(n);
        match self {
            Domain::Box { lo, hi } => {
                // faces chosen proportionally to their (d-1)-volume
                let widths: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| h - l).collect();
                let total: f64 = widths.iter().product();
                let face_area: Vec<f64> = widths.iter().map(|w| total / w).collect();
                let faces: Vec<(usize, bool, f64)> = face_area
                    .iter()
                    .enumerate()
                    .flat_map(|(i, a)| [(i, false, *a), (i, true, *a)])
                    .collect();
                let sum_area: f64 = faces.iter().map(|f| f.2).sum();
                for _ in 0..n {
                    let mut pick = rng.random::<f64>() * sum_area;
                    let &(axis, upper, _) = faces
                        .iter()
                        .find(|f| {
                            if pick < f.2 {
                                true
                            } else {
                                pick -= f.2;
                                false
                            }
                        })
                        .unwrap_or(faces.last().unwrap());
                    let mut p: Vec<f64> = (0..d).map(|i| lo[i] + widths[i] * rng.random::<f64>()).collect();
                    p[axis] = if upper { hi[axis] } else { lo[axis] };
                    out.push(BoundaryPoint {
                        point: p,
                        component: format!("x{}-{}", axis + 1, if upper { "hi" } else { "lo" }),
                    });
                }
            }
            Domain::Ball { center, radius } => {
                for _ in 0..n {
                    let u = unit_direction(&mut rng, d);
                    out.push(BoundaryPoint {
                        point: center.iter().zip(&u).map(|(c, ui)| c + radius * ui).collect(),
                        component: "sphere".into(),
                    });
                }
            }
            Domain::Sublevel(s) => {
                for _ in 0..n {
                    let u = unit_direction(&mut rng, d);
                    out.push(BoundaryPoint {
                        point: s.ray_crossing(&u)?,
                        component: "level".into(),
                    });
                }
            }
            Domain::Interval { .. } => unreachable!(),
        }
        Ok(out)
    }

    /// Projects a point near ∂D back onto the boundary (face, sphere, or
    /// ray bisection for sublevel sets).
    pub fn project_to_boundary(&self, x: &[f64], component: &str) -> Result<Vec<f64>> {
        match self {
            Domain::Interval { .. } => Ok(x.to_vec()),
            Domain::Box { lo, hi } => {
                let mut p: Vec<f64> = x.iter().zip(lo.iter().zip(hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect();
                let (axis, side) = component
                    .strip_prefix('x')
                    .and_then(|r| r.split_once('-'))
                    .ok_or_else(|| Error::Precondition(format!("bad box component `{component}`")))?;
                let axis: usize = axis
                    .parse::<usize>()
                    .map_err(|_| Error::Precondition(format!("bad box component `{component}`")))?
                    - 1;
                p[axis] = if side == "hi" { hi[axis] } else { lo[axis] };
                Ok(p)
            }
            Domain::Ball { center, radius } => {
                let v = linalg::sub(x, center);
                let n = linalg::norm(&v);
                if n < 1e-300 {
                    return Err(Error::Precondition("cannot project the centre onto the sphere".into()));
                }
                Ok(center.iter().zip(&v).map(|(c, vi)| c + radius * vi / n).collect())
            }
            Domain::Sublevel(s) => {
                let v = linalg::sub(x, &s.seed);
                let n = linalg::norm(&v);
                if n < 1e-300 {
                    return Err(Error::Precondition("cannot project the seed onto the level set".into()));
                }
                let u: Vec<f64> = v.iter().map(|vi| vi / n).collect();
                s.ray_crossing(&u)
            }
        }
    }

    /// Enlargement `D^e_kappa`.
    pub fn inflate(&self, kappa: f64) -> Result<Domain> {
        if !(kappa > 0.0) {
            return Err(crate::error::invalid("kappa", "must be positive"));
        }
        Ok(match self {
            Domain::Interval { lo, hi } => Domain::Interval {
                lo: lo - kappa,
                hi: hi + kappa,
            },
            Domain::Box { lo, hi } => Domain::Box {
                lo: lo.iter().map(|v| v - kappa).collect(),
                hi: hi.iter().map(|v| v + kappa).collect(),
            },
            Domain::Ball { center, radius } => Domain::Ball {
                center: center.clone(),
                radius: radius + kappa,
            },
            Domain::Sublevel(s) => {
                let mut t = s.clone();
                t.level += kappa * self.gradient_scale(s)?;
                Domain::Sublevel(t)
            }
        })
    }

    /// Constriction `D^c_kappa`; must keep `keep` (normally the attractor) inside.
    pub fn deflate(&self, kappa: f64, keep: &[f64]) -> Result<Domain> {
        if !(kappa > 0.0) {
            return Err(crate::error::invalid("kappa", "must be positive"));
        }
        let out = match self {
            Domain::Interval { lo, hi } => {
                if hi - lo <= 2.0 * kappa {
                    return Err(Error::EmptyDomain(kappa));
                }
                Domain::Interval {
                    lo: lo + kappa,
                    hi: hi - kappa,
                }
            }
            Domain::Box { lo, hi } => {
                if lo.iter().zip(hi).any(|(l, h)| h - l <= 2.0 * kappa) {
                    return Err(Error::EmptyDomain(kappa));
                }
                Domain::Box {
                    lo: lo.iter().map(|v| v + kappa).collect(),
                    hi: hi.iter().map(|v| v - kappa).collect(),
                }
            }
            Domain::Ball { center, radius } => {
                if *radius <= kappa {
                    return Err(Error::EmptyDomain(kappa));
                }
                Domain::Ball {
                    center: center.clone(),
                    radius: radius - kappa,
                }
            }
            Domain::Sublevel(s) => {
                let mut t = s.clone();
                t.level -= kappa * self.gradient_scale(s)?;
                if t.level <= 0.0 {
                    return Err(Error::EmptyDomain(kappa));
                }
                Domain::Sublevel(t)
            }
        };
        if !out.contains(keep) {
            return Err(Error::AttractorOutsideDomain);
        }
        Ok(out)
    }

    // Median of |∇g| over a fixed boundary sample: converts a distance shift
    // into a level shift.
    fn gradient_scale(&self, s: &SublevelSet) -> Result<f64> {
        let pts = self.boundary_sample(64, 0x6ea1)?;
        let mut norms: Vec<f64> = pts.iter().map(|b| s.grad_g_norm(&b.point)).collect();
        norms.sort_by(|a, b| a.total_cmp(b));
        Ok(norms[norms.len() / 2])
    }
}
