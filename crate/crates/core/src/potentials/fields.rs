use std::fmt;
use std::sync::Arc;

/// A C² scalar field on R^d with analytic first and second derivatives.
///
/// Hessians are written row-major into a `d * d` slice.
pub trait ScalarField: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    fn hessian(&self, x: &[f64], out: &mut [f64]);
}

/// Confinement potential V.
#[derive(Clone)]
pub enum Confinement {
    /// `x^4/4 - x^2/2` on the line.
    DoubleWell1d,
    /// Planar four-term quartic with two wells near `(±1.1, 0)`.
    DoubleWell2d,
    /// `k/2 |x|^2`; `k < 0` gives a concave potential.
    Harmonic { stiffness: f64 },
    Custom(Arc<dyn ScalarField>),
}

impl fmt::Debug for Confinement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Confinement::DoubleWell1d => write!(f, "DoubleWell1d"),
            Confinement::DoubleWell2d => write!(f, "DoubleWell2d"),
            Confinement::Harmonic { stiffness } => write!(f, "Harmonic({stiffness})"),
            Confinement::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl ScalarField for Confinement {
    fn value(&self, x: &[f64]) -> f64 {
        match self {
            Confinement::DoubleWell1d => {
                let x2 = x[0] * x[0];
                0.25 * x2 * x2 - 0.5 * x2
            }
            Confinement::DoubleWell2d => {
                let (a, b) = (x[0], x[1]);
                let s = 1.0 - a * a - b * b;
                let u = a + b;
                let w = a - b;
                1.5 * s * s
                    + (a * a - 2.0).powi(2) / 3.0
                    + (u * u - 1.0).powi(2) / 6.0
                    + (w * w - 1.0).powi(2) / 6.0
            }
            Confinement::Harmonic { stiffness } => 0.5 * stiffness * crate::linalg::dot(x, x),
            Confinement::Custom(f) => f.value(x),
        }
    }

    #[inline]
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Confinement::DoubleWell1d => {
                let v = x[0];
                out[0] = v * v * v - v;
            }
            Confinement::DoubleWell2d => {
                let (a, b) = (x[0], x[1]);
                let s = 1.0 - a * a - b * b;
                let u = a + b;
                let w = a - b;
                let gu = 2.0 / 3.0 * u * (u * u - 1.0);
                let gw = 2.0 / 3.0 * w * (w * w - 1.0);
                out[0] = -6.0 * s * a + 4.0 / 3.0 * a * (a * a - 2.0) + gu + gw;
                out[1] = -6.0 * s * b + gu - gw;
            }
            Confinement::Harmonic { stiffness } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = stiffness * xi;
                }
            }
            Confinement::Custom(f) => f.gradient(x, out),
        }
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Confinement::DoubleWell1d => out[0] = 3.0 * x[0] * x[0] - 1.0,
            Confinement::DoubleWell2d => {
                let (a, b) = (x[0], x[1]);
                let s = 1.0 - a * a - b * b;
                let u = a + b;
                let w = a - b;
                let hu = 2.0 * u * u - 2.0 / 3.0;
                let hw = 2.0 * w * w - 2.0 / 3.0;
                out[0] = -6.0 * s + 12.0 * a * a + 4.0 * a * a - 8.0 / 3.0 + hu + hw;
                out[1] = 12.0 * a * b + hu - hw;
                out[2] = out[1];
                out[3] = -6.0 * s + 12.0 * b * b + hu + hw;
            }
            Confinement::Harmonic { stiffness } => {
                let d = x.len();
                out.iter_mut().for_each(|o| *o = 0.0);
                for i in 0..d {
                    out[i * d + i] = *stiffness;
                }
            }
            Confinement::Custom(f) => f.hessian(x, out),
        }
    }
}

/// Sign of a quadratic interaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coupling {
    Attractive,
    Repulsive,
}

/// Interaction potential F.
#[derive(Clone)]
pub enum Interaction {
    Zero,
    /// `±alpha/2 |x|^2`.
    Quadratic { alpha: f64, coupling: Coupling },
    /// `c exp(-theta |x|^2 / 2)`.
    Gaussian { c: f64, theta: f64 },
    Custom(Arc<dyn ScalarField>),
}

impl fmt::Debug for Interaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Interaction::Zero => write!(f, "Zero"),
            Interaction::Quadratic { alpha, coupling } => write!(f, "Quadratic({coupling:?}, {alpha})"),
            Interaction::Gaussian { c, theta } => write!(f, "Gaussian(c={c}, theta={theta})"),
            Interaction::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Interaction {
    /// Coefficient `k` such that `∇F(x) = k x`, when the interaction is linear.
    pub fn linear_coefficient(&self) -> Option<f64> {
        match self {
            Interaction::Zero => Some(0.0),
            Interaction::Quadratic { alpha, coupling } => Some(match coupling {
                Coupling::Attractive => *alpha,
                Coupling::Repulsive => -alpha,
            }),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Interaction::Zero)
    }
}

impl ScalarField for Interaction {
    fn value(&self, x: &[f64]) -> f64 {
        let r2 = crate::linalg::dot(x, x);
        match self {
            Interaction::Zero => 0.0,
            Interaction::Quadratic { .. } => 0.5 * self.linear_coefficient().unwrap() * r2,
            Interaction::Gaussian { c, theta } => c * (-0.5 * theta * r2).exp(),
            Interaction::Custom(f) => f.value(x),
        }
    }

    #[inline]
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Interaction::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            Interaction::Quadratic { .. } => {
                let k = self.linear_coefficient().unwrap();
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = k * xi;
                }
            }
            Interaction::Gaussian { c, theta } => {
                let r2 = crate::linalg::dot(x, x);
                let s = -theta * c * (-0.5 * theta * r2).exp();
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = s * xi;
                }
            }
            Interaction::Custom(f) => f.gradient(x, out),
        }
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        match self {
            Interaction::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            Interaction::Quadratic { .. } => {
                let k = self.linear_coefficient().unwrap();
                out.iter_mut().for_each(|o| *o = 0.0);
                for i in 0..d {
                    out[i * d + i] = k;
                }
            }
            Interaction::Gaussian { c, theta } => {
                let r2 = crate::linalg::dot(x, x);
                let s = theta * c * (-0.5 * theta * r2).exp();
                for i in 0..d {
                    for j in 0..d {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        out[i * d + j] = s * (theta * x[i] * x[j] - delta);
                    }
                }
            }
            Interaction::Custom(f) => f.hessian(x, out),
        }
    }
}
