use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{PotentialModel, ScalarField};
use crate::linalg;

/// Named standing assumption.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AssumptionId {
    /// V uniformly convex outside `B_R`.
    V2,
    /// Polynomial growth of `∇V`.
    V3,
    /// `a` is a nondegenerate critical point of V.
    V4,
    /// F is rotationally invariant.
    F2,
    /// Polynomial growth of `∇F`.
    F3,
    /// `∇²F >= -theta2 Id` with `theta1 > theta2`.
    F5,
    /// `∇²W_a(a)` positive definite.
    A4,
    /// Bounded domain containing `a`.
    A5,
    /// Domain contains the deterministic path from `x_init`, which converges to `a`.
    A6,
    /// Domain is stable under `-∇W_a` and boundary trajectories converge to `a`.
    A7,
}

impl fmt::Display for AssumptionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AssumptionId::V2 => "V-2",
            AssumptionId::V3 => "V-3",
            AssumptionId::V4 => "V-4",
            AssumptionId::F2 => "F-2",
            AssumptionId::F3 => "F-3",
            AssumptionId::F5 => "F-5",
            AssumptionId::A4 => "A-4",
            AssumptionId::A5 => "A-5",
            AssumptionId::A6 => "A-6",
            AssumptionId::A7 => "A-7",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Inconclusive,
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Clone, Debug)]
pub struct CheckEntry {
    pub id: AssumptionId,
    pub status: CheckStatus,
    pub detail: String,
    /// Evidence from sampled points rather than a proof.
    pub sampled: bool,
}

#[derive(Clone, Debug, Default)]
pub struct AssumptionReport {
    pub entries: Vec<CheckEntry>,
}

impl AssumptionReport {
    pub fn push(&mut self, id: AssumptionId, status: CheckStatus, sampled: bool, detail: impl Into<String>) {
        self.entries.push(CheckEntry {
            id,
            status,
            detail: detail.into(),
            sampled,
        });
    }

    pub fn merge(&mut self, other: AssumptionReport) {
        self.entries.extend(other.entries);
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.status == CheckStatus::Pass)
    }

    pub fn failed(&self) -> Vec<AssumptionId> {
        self.entries
            .iter()
            .filter(|e| e.status == CheckStatus::Fail)
            .map(|e| e.id)
            .collect()
    }

    pub fn status_of(&self, id: AssumptionId) -> Option<CheckStatus> {
        self.entries.iter().find(|e| e.id == id).map(|e| e.status)
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<5} {:<12} {}{}",
                e.id,
                e.status,
                e.detail,
                if e.sampled { " [sampled]" } else { "" }
            )?;
        }
        Ok(())
    }
}

fn random_direction(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let u: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = linalg::norm(&u);
        if n > 1e-12 {
            return u.into_iter().map(|v| v / n).collect();
        }
    }
}

fn shell_point(rng: &mut ChaCha8Rng, d: usize, r_lo: f64, r_hi: f64) -> Vec<f64> {
    let r = r_lo + (r_hi - r_lo) * rng.random::<f64>();
    random_direction(rng, d).into_iter().map(|v| v * r).collect()
}

// Ratio |∇G(x)| / (1 + |x|^(2r-1)) over log-spaced radii bands; bounded when
// the outermost band does not exceed twice the inner bands.
fn growth_check<G: ScalarField + ?Sized>(
    field: &G,
    d: usize,
    r: u32,
    budget: usize,
    rng: &mut ChaCha8Rng,
) -> (bool, f64, f64) {
    let per_band = (budget / 3).max(10);
    let mut band_max = [0.0f64; 3];
    let mut g = vec![0.0; d];
    for (b, band) in band_max.iter_mut().enumerate() {
        let (lo, hi) = (10f64.powi(b as i32), 10f64.powi(b as i32 + 1));
        for _ in 0..per_band {
            let rad = lo * (hi / lo).powf(rng.random::<f64>());
            let x: Vec<f64> = random_direction(rng, d).into_iter().map(|v| v * rad).collect();
            field.gradient(&x, &mut g);
            let ratio = linalg::norm(&g) / (1.0 + rad.powi(2 * r as i32 - 1));
            *band = band.max(ratio);
        }
    }
    let inner = band_max[0].max(band_max[1]);
    let outer = band_max[2];
    (outer.is_finite() && outer <= 2.0 * inner + 1e-12, inner, outer)
}

/// Sampled checks of the confinement/interaction assumptions and of the
/// nondegeneracy of `W_a` at `a`. Failures are report entries, never errors.
pub fn check_assumptions(model: &PotentialModel, sample_budget: usize, rng_seed: u64) -> AssumptionReport {
    let budget = sample_budget.max(100);
    let d = model.dim;
    let p = &model.params;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut report = AssumptionReport::default();
    let mut h = vec![0.0; d * d];

    // (V-2)
    let r_big = p.convexity_radius;
    let tol1 = 1e-9 * p.theta1.abs().max(1.0);
    let mut min_eig = f64::INFINITY;
    for k in 0..budget {
        let x = if d == 1 {
            // deterministic endpoints of both shells plus random fill
            let r = r_big + 2.0 * r_big * (k as f64 / (budget - 1) as f64);
            vec![if k % 2 == 0 { r } else { -r }]
        } else {
            shell_point(&mut rng, d, r_big, 3.0 * r_big)
        };
        model.hess_v(&x, &mut h);
        min_eig = min_eig.min(linalg::min_eigenvalue(&h, d));
    }
    report.push(
        AssumptionId::V2,
        if min_eig >= p.theta1 - tol1 { CheckStatus::Pass } else { CheckStatus::Fail },
        true,
        format!(
            "min eig ∇²V on |x| ∈ [{r_big}, {}] = {min_eig:.6}, theta1 = {}",
            3.0 * r_big,
            p.theta1
        ),
    );

    // (V-3)
    let (ok, inner, outer) = growth_check(&model.confinement, d, p.growth_degree, budget, &mut rng);
    report.push(
        AssumptionId::V3,
        if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        true,
        format!(
            "|∇V|/(1+|x|^{}) max {inner:.4e} on |x| < 100, {outer:.4e} on [100, 1000]",
            2 * p.growth_degree - 1
        ),
    );

    // (V-4)
    let a = &model.attractor;
    let ga = linalg::norm(&model.grad_v_vec(a));
    model.hess_v(a, &mut h);
    let lam_a = linalg::min_eigenvalue(&h, d);
    report.push(
        AssumptionId::V4,
        if ga <= 1e-8 && lam_a > 0.0 { CheckStatus::Pass } else { CheckStatus::Fail },
        false,
        format!("|∇V(a)| = {ga:.3e}, min eig ∇²V(a) = {lam_a:.6}"),
    );

    // (F-2)
    let mut worst = 0.0f64;
    let mut g1 = vec![0.0; d];
    let mut g2 = vec![0.0; d];
    model.grad_f(&vec![0.0; d], &mut g1);
    let at_zero = linalg::norm(&g1);
    for _ in 0..budget {
        let x = shell_point(&mut rng, d, 0.0, 5.0);
        let q = linalg::random_orthogonal(d, &mut rng);
        let qx = linalg::mat_vec(&q, &x);
        model.grad_f(&qx, &mut g1);
        model.grad_f(&x, &mut g2);
        let qg = linalg::mat_vec(&q, &g2);
        let err = linalg::dist(&g1, &qg) / (1.0 + linalg::norm(&g2));
        worst = worst.max(err);
    }
    report.push(
        AssumptionId::F2,
        if worst <= 1e-10 && at_zero <= 1e-12 { CheckStatus::Pass } else { CheckStatus::Fail },
        true,
        format!("max |∇F(Qx) - Q∇F(x)| (relative) = {worst:.3e}, |∇F(0)| = {at_zero:.3e}"),
    );

    // (F-3)
    let (ok, inner, outer) = growth_check(&model.interaction, d, p.growth_degree, budget, &mut rng);
    report.push(
        AssumptionId::F3,
        if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        true,
        format!("|∇F| growth ratio max {inner:.4e} inner, {outer:.4e} outer"),
    );

    // (F-5)
    let mut min_f = f64::INFINITY;
    for k in 0..budget {
        let x = if d == 1 {
            vec![-10.0 + 20.0 * k as f64 / (budget - 1) as f64]
        } else if k == 0 {
            vec![0.0; d]
        } else {
            shell_point(&mut rng, d, 0.0, 10.0)
        };
        model.hess_f(&x, &mut h);
        min_f = min_f.min(linalg::min_eigenvalue(&h, d));
    }
    let tol2 = 1e-9 * p.theta2.abs().max(1.0);
    let ok = min_f >= -p.theta2 - tol2 && p.theta1 > p.theta2;
    report.push(
        AssumptionId::F5,
        if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        true,
        format!(
            "min eig ∇²F sampled = {min_f:.6}, theta2 = {}, theta1 = {}",
            p.theta2, p.theta1
        ),
    );

    // (A-4)
    let mut hf = vec![0.0; d * d];
    model.hess_v(a, &mut h);
    model.hess_f(&vec![0.0; d], &mut hf);
    for i in 0..d * d {
        h[i] += hf[i];
    }
    let lam_w = linalg::min_eigenvalue(&h, d);
    report.push(
        AssumptionId::A4,
        if lam_w > 0.0 { CheckStatus::Pass } else { CheckStatus::Fail },
        false,
        format!("min eig ∇²W_a(a) = {lam_w:.6}"),
    );

    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{make_builtin, Confinement, Coupling, Interaction, PotentialSpec};

    #[test]
    fn builtins_pass() {
        for spec in [
            PotentialSpec::quadratic("doublewell1d", 0.1, Coupling::Attractive),
            PotentialSpec::new("doublewell1d", "none"),
            PotentialSpec::gaussian("doublewell1d", 1.0, 1.0),
            PotentialSpec::quadratic("doublewell2d", 0.5, Coupling::Repulsive),
            PotentialSpec::gaussian("doublewell2d", 1.0, 2.0),
        ] {
            let m = make_builtin(&spec).unwrap();
            let r = check_assumptions(&m, 500, 7);
            assert!(r.passed(), "{spec:?}\n{r}");
        }
    }

    #[test]
    fn gaussian_theta2_is_c_theta() {
        let m = make_builtin(&PotentialSpec::gaussian("doublewell1d", 1.0, 1.0)).unwrap();
        assert_eq!(m.params.theta2, 1.0);
        // 1D scan of the Gaussian Hessian: min at r = 0 equals -c theta
        let mut h = [0.0];
        let mut lo = f64::INFINITY;
        for k in 0..=4000 {
            let r = k as f64 * 1e-3;
            m.hess_f(&[r], &mut h);
            lo = lo.min(h[0]);
        }
        assert!((lo + 1.0).abs() < 1e-12);
        assert_eq!(check_assumptions(&m, 200, 1).status_of(AssumptionId::F5), Some(CheckStatus::Pass));
    }

    #[test]
    fn concave_at_infinity_fails_v2() {
        let base = make_builtin(&PotentialSpec::new("doublewell1d", "none")).unwrap();
        // V(x) = -|x|^2 has no minimum, so assemble the model by hand.
        let m = PotentialModel {
            dim: 1,
            confinement: Confinement::Harmonic { stiffness: -2.0 },
            interaction: Interaction::Zero,
            params: base.params.clone(),
            attractor: vec![0.0],
        };
        let r = check_assumptions(&m, 200, 3);
        assert_eq!(r.status_of(AssumptionId::V2), Some(CheckStatus::Fail));
        assert!(r.failed().contains(&AssumptionId::V2));
    }
}
