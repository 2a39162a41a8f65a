//! Confinement and interaction potentials, the effective potential
//! `W_a = V + F(· - a)`, and sampled checks of the standing assumptions.

mod checks;
mod fields;

pub use checks::{check_assumptions, AssumptionId, AssumptionReport, CheckEntry, CheckStatus};
pub use fields::{Confinement, Coupling, Interaction, ScalarField};

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;

/// Constants attached to a model: the admissible values for the growth,
/// convexity-at-infinity and interaction-curvature assumptions.
#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionParams {
    /// Polynomial growth exponent `r`: `|∇V(x)| <= C (1 + |x|^(2r-1))`.
    pub growth_degree: u32,
    /// Radius `R` beyond which `∇²V >= theta1 Id`.
    pub convexity_radius: f64,
    pub theta1: f64,
    /// Lower curvature bound of the interaction: `∇²F >= -theta2 Id`.
    pub theta2: f64,
    /// Optional local-Lipschitz constants; carried as metadata only.
    pub lipschitz_v: Option<f64>,
    pub lipschitz_f: Option<f64>,
}

/// A confinement/interaction pair together with its attractor `a`.
#[derive(Clone, Debug)]
pub struct PotentialModel {
    pub dim: usize,
    pub confinement: Confinement,
    pub interaction: Interaction,
    pub params: AssumptionParams,
    pub attractor: Vec<f64>,
}

impl PotentialModel {
    /// Builds a model and refines `attractor_guess` to a local minimum of V.
    pub fn new(
        dim: usize,
        confinement: Confinement,
        interaction: Interaction,
        params: AssumptionParams,
        attractor_guess: &[f64],
    ) -> Result<Self> {
        if attractor_guess.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: attractor_guess.len(),
            });
        }
        let mut model = PotentialModel {
            dim,
            confinement,
            interaction,
            params,
            attractor: attractor_guess.to_vec(),
        };
        model.attractor = locate_attractor(&model, attractor_guess)?.point;
        Ok(model)
    }

    pub fn v(&self, x: &[f64]) -> f64 {
        self.confinement.value(x)
    }

    #[inline]
    pub fn grad_v(&self, x: &[f64], out: &mut [f64]) {
        self.confinement.gradient(x, out)
    }

    pub fn hess_v(&self, x: &[f64], out: &mut [f64]) {
        self.confinement.hessian(x, out)
    }

    pub fn f(&self, x: &[f64]) -> f64 {
        self.interaction.value(x)
    }

    #[inline]
    pub fn grad_f(&self, x: &[f64], out: &mut [f64]) {
        self.interaction.gradient(x, out)
    }

    pub fn hess_f(&self, x: &[f64], out: &mut [f64]) {
        self.interaction.hessian(x, out)
    }

    pub fn grad_v_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.grad_v(x, &mut g);
        g
    }

    /// Effective potential centred at the model's attractor.
    pub fn effective(self: &Arc<Self>) -> EffectivePotential {
        EffectivePotential::new(self.clone(), &self.attractor.clone())
    }
}

/// Serializable description of a builtin model, as it appears in the
/// `[potential]` section of an experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    /// `doublewell1d` or `doublewell2d`.
    pub confinement: String,
    /// `none`, `quadratic` or `gaussian`.
    #[serde(default = "default_interaction")]
    pub interaction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// `attractive` or `repulsive` (quadratic only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// Starting guess for the attractor; refined by Newton iteration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attractor: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convexity_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_degree: Option<u32>,
}

fn default_interaction() -> String {
    "none".into()
}

impl PotentialSpec {
    pub fn new(confinement: &str, interaction: &str) -> Self {
        PotentialSpec {
            confinement: confinement.into(),
            interaction: interaction.into(),
            alpha: None,
            sign: None,
            c: None,
            theta: None,
            attractor: None,
            theta1: None,
            theta2: None,
            convexity_radius: None,
            growth_degree: None,
        }
    }

    pub fn quadratic(confinement: &str, alpha: f64, coupling: Coupling) -> Self {
        let mut s = Self::new(confinement, "quadratic");
        s.alpha = Some(alpha);
        s.sign = Some(
            match coupling {
                Coupling::Attractive => "attractive",
                Coupling::Repulsive => "repulsive",
            }
            .into(),
        );
        s
    }

    pub fn gaussian(confinement: &str, c: f64, theta: f64) -> Self {
        let mut s = Self::new(confinement, "gaussian");
        s.c = Some(c);
        s.theta = Some(theta);
        s
    }

    pub fn with_attractor(mut self, a: &[f64]) -> Self {
        self.attractor = Some(a.to_vec());
        self
    }
}

fn positive(name: &'static str, v: Option<f64>) -> Result<f64> {
    match v {
        None => Err(invalid(name, "missing")),
        Some(x) if x.is_finite() && x > 0.0 => Ok(x),
        Some(x) => Err(invalid(name, format!("must be strictly positive, got {x}"))),
    }
}

/// Builds one of the builtin models.
///
/// `doublewell1d` carries `R = 1`, `theta1 = 2` (since `V'' = 3x² - 1`) and
/// `r = 2`; `doublewell2d` carries `R = 1.5`, `theta1 = 6.5` (sampled minimum
/// Hessian eigenvalue on `|x| ∈ [1.5, 4.5]` is about 6.95) and `r = 2`.
/// `theta2` is the smallest admissible interaction-curvature bound.
pub fn make_builtin(spec: &PotentialSpec) -> Result<PotentialModel> {
    let (dim, confinement, mut params, default_a) = match spec.confinement.as_str() {
        "doublewell1d" => (
            1,
            Confinement::DoubleWell1d,
            AssumptionParams {
                growth_degree: 2,
                convexity_radius: 1.0,
                theta1: 2.0,
                theta2: 0.0,
                lipschitz_v: None,
                lipschitz_f: None,
            },
            vec![-1.0],
        ),
        "doublewell2d" => (
            2,
            Confinement::DoubleWell2d,
            AssumptionParams {
                growth_degree: 2,
                convexity_radius: 1.5,
                theta1: 6.5,
                theta2: 0.0,
                lipschitz_v: None,
                lipschitz_f: None,
            },
            vec![-1.07, 0.0],
        ),
        other => return Err(Error::UnknownBuiltin(other.into())),
    };
    if let Some(t1) = spec.theta1 {
        params.theta1 = positive("theta1", Some(t1))?;
    }
    if let Some(r) = spec.convexity_radius {
        params.convexity_radius = positive("convexity_radius", Some(r))?;
    }
    if let Some(r) = spec.growth_degree {
        if r == 0 {
            return Err(invalid("growth_degree", "must be >= 1"));
        }
        params.growth_degree = r;
    }

    let interaction = match spec.interaction.as_str() {
        "none" | "zero" => Interaction::Zero,
        "quadratic" => {
            let alpha = positive("alpha", spec.alpha)?;
            let coupling = match spec.sign.as_deref().unwrap_or("attractive") {
                "attractive" | "+" => Coupling::Attractive,
                "repulsive" | "-" => Coupling::Repulsive,
                other => return Err(invalid("sign", format!("unknown sign `{other}`"))),
            };
            Interaction::Quadratic { alpha, coupling }
        }
        "gaussian" => Interaction::Gaussian {
            c: positive("c", spec.c)?,
            theta: positive("theta", spec.theta)?,
        },
        other => return Err(Error::UnknownBuiltin(other.into())),
    };

    // smallest admissible curvature bound of F
    let natural_theta2 = match &interaction {
        Interaction::Zero => 0.0,
        Interaction::Quadratic { alpha, coupling } => match coupling {
            Coupling::Attractive => 0.0,
            Coupling::Repulsive => *alpha,
        },
        Interaction::Gaussian { c, theta } => c * theta,
        Interaction::Custom(_) => unreachable!(),
    };
    params.theta2 = match spec.theta2 {
        Some(t2) if t2 >= natural_theta2 => t2,
        Some(t2) => {
            return Err(invalid(
                "theta2",
                format!("{t2} is below the interaction's curvature bound {natural_theta2}"),
            ))
        }
        None => natural_theta2,
    };
    if params.theta2 >= params.theta1 {
        return Err(invalid(
            "theta2",
            format!(
                "interaction curvature bound {} must stay below theta1 = {} (F-5)",
                params.theta2, params.theta1
            ),
        ));
    }

    let a = spec.attractor.clone().unwrap_or(default_a);
    PotentialModel::new(dim, confinement, interaction, params, &a)
}

/// Result of [`locate_attractor`].
#[derive(Clone, Debug)]
pub struct Attractor {
    pub point: Vec<f64>,
    pub gradient_norm: f64,
    pub min_eigenvalue: f64,
    pub iterations: usize,
}

/// Damped Newton iteration on `∇V` from `x0`, with a gradient step and
/// Armijo backtracking on `V` wherever the Hessian is not positive definite.
pub fn locate_attractor(model: &PotentialModel, x0: &[f64]) -> Result<Attractor> {
    const MAX_ITER: usize = 500;
    let d = model.dim;
    let mut x = x0.to_vec();
    let mut g = vec![0.0; d];
    let mut h = vec![0.0; d * d];
    for it in 0..MAX_ITER {
        model.grad_v(&x, &mut g);
        let gn = linalg::norm(&g);
        if !gn.is_finite() {
            return Err(Error::NonFinite("locate_attractor"));
        }
        model.hess_v(&x, &mut h);
        let lam = linalg::min_eigenvalue(&h, d);
        if gn <= 1e-12 {
            if lam <= 0.0 {
                return Err(Error::NotAMinimum { min_eigenvalue: lam });
            }
            return Ok(Attractor {
                point: x,
                gradient_norm: gn,
                min_eigenvalue: lam,
                iterations: it,
            });
        }
        let newton = if lam > 0.0 {
            linalg::solve(&h, &g.iter().map(|v| -v).collect::<Vec<_>>())
        } else {
            None
        };
        let dir = newton.unwrap_or_else(|| g.iter().map(|v| -v).collect());
        let slope = linalg::dot(&dir, &g);
        let v0 = model.v(&x);
        let mut step = 1.0;
        let mut trial = x.clone();
        loop {
            for i in 0..d {
                trial[i] = x[i] + step * dir[i];
            }
            let v1 = model.v(&trial);
            // Near the minimum V is flat to rounding; accept the full Newton step.
            if v1 <= v0 + 1e-4 * step * slope || (lam > 0.0 && gn < 1e-6) {
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                break;
            }
        }
        x.copy_from_slice(&trial);
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITER,
        context: "locate_attractor",
    })
}

/// `W_a(x) = V(x) + F(x - a)` with its convexity radius `rho` and the
/// curvature floor `C_W` realised on `B_rho(a)`.
#[derive(Clone, Debug)]
pub struct EffectivePotential {
    pub model: Arc<PotentialModel>,
    pub center: Vec<f64>,
    pub convexity_radius: f64,
    pub convexity_constant: f64,
}

/// Default eigenvalue floor for the convexity-radius bisection.
pub const CONVEXITY_FLOOR: f64 = 1e-3;

impl EffectivePotential {
    pub fn new(model: Arc<PotentialModel>, center: &[f64]) -> Self {
        Self::with_floor(model, center, CONVEXITY_FLOOR)
    }

    pub fn with_floor(model: Arc<PotentialModel>, center: &[f64], floor: f64) -> Self {
        let mut w = EffectivePotential {
            model,
            center: center.to_vec(),
            convexity_radius: 0.0,
            convexity_constant: 0.0,
        };
        let (rho, cw) = w.convexity_radius_search(floor);
        w.convexity_radius = rho;
        w.convexity_constant = cw;
        w
    }

    pub fn dim(&self) -> usize {
        self.model.dim
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let shifted = linalg::sub(x, &self.center);
        self.model.v(x) + self.model.f(&shifted)
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let shifted = linalg::sub(x, &self.center);
        let mut gf = vec![0.0; d];
        self.model.grad_v(x, out);
        self.model.grad_f(&shifted, &mut gf);
        for i in 0..d {
            out[i] += gf[i];
        }
    }

    pub fn gradient_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient(x, &mut g);
        g
    }

    pub fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let shifted = linalg::sub(x, &self.center);
        let mut hf = vec![0.0; d * d];
        self.model.hess_v(x, out);
        self.model.hess_f(&shifted, &mut hf);
        for i in 0..d * d {
            out[i] += hf[i];
        }
    }

    pub fn min_hessian_eigenvalue(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut h = vec![0.0; d * d];
        self.hessian(x, &mut h);
        linalg::min_eigenvalue(&h, d)
    }

    /// `W_a(x) - W_a(a)`.
    pub fn height(&self, x: &[f64]) -> f64 {
        self.value(x) - self.value(&self.center)
    }

    // Fixed unit-ball sample, scaled by the trial radius; the sphere points
    // come first so the extreme shell is always covered.
    fn unit_ball_sample(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_c0);
        let mut pts = Vec::new();
        if d == 1 {
            for k in 0..=200 {
                pts.push(vec![-1.0 + 2.0 * k as f64 / 200.0]);
            }
            return pts;
        }
        for k in 0..400 {
            let mut u: Vec<f64> = (0..d)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let n = linalg::norm(&u);
            u.iter_mut().for_each(|v| *v /= n);
            let r = if k < 200 { 1.0 } else { rng.random::<f64>().powf(1.0 / d as f64) };
            pts.push(u.iter().map(|v| v * r).collect());
        }
        pts.push(vec![0.0; d]);
        pts
    }

    fn min_eig_on_ball(&self, unit: &[Vec<f64>], rho: f64) -> f64 {
        unit.iter()
            .map(|u| {
                let x: Vec<f64> = u.iter().zip(&self.center).map(|(ui, ci)| ci + rho * ui).collect();
                self.min_hessian_eigenvalue(&x)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn convexity_radius_search(&self, floor: f64) -> (f64, f64) {
        const RHO_MAX: f64 = 10.0;
        let unit = self.unit_ball_sample();
        if self.min_eig_on_ball(&unit, 0.0) <= floor {
            return (0.0, self.min_eig_on_ball(&unit, 0.0));
        }
        let mut lo = 0.0;
        let mut hi = 0.05;
        while self.min_eig_on_ball(&unit, hi) > floor {
            lo = hi;
            hi *= 2.0;
            if hi > RHO_MAX {
                return (RHO_MAX, self.min_eig_on_ball(&unit, RHO_MAX));
            }
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.min_eig_on_ball(&unit, mid) > floor {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo, self.min_eig_on_ball(&unit, lo))
    }
}
