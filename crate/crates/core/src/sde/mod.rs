//! Interacting particle approximation of the self-stabilizing diffusion
//!
//! ```text
//! dX^i = σ dB^i - ∇V(X^i) dt - (1/N) Σ_j ∇F(X^i - X^j) dt
//! ```
//!
//! advanced by Euler-Maruyama, together with the coupled linear diffusion
//! `dY = σ dB^tagged - ∇V(Y) dt - ∇F(Y - a) dt` driven by the tagged
//! particle's increments.

mod exit;
mod noise;

pub use exit::{run_until_exit, trace_ensemble, write_exit_csv, CoupleAfter, ExitRecord, ExitSetup, TraceSetup, EXIT_CSV_FIXED};
pub use noise::NoiseStream;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::potentials::PotentialModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    /// O(N²) evaluation of `(1/N) Σ_j ∇F(X^i - X^j)`.
    PairwiseExact,
    /// O(N) evaluation `k (X^i - mean)`, valid when `∇F(x) = k x`.
    MeanfieldLinear,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Horizon {
    Time(f64),
    UntilExit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationParams {
    pub sigma: f64,
    pub dt: f64,
    pub n_particles: usize,
    pub horizon: Horizon,
    pub seed: u64,
    pub interaction_mode: InteractionMode,
    /// Allows `dt > 0.01 min(1, σ²)`.
    pub unsafe_dt: bool,
}

impl SimulationParams {
    pub fn new(sigma: f64, dt: f64, n_particles: usize, seed: u64) -> Self {
        SimulationParams {
            sigma,
            dt,
            n_particles,
            horizon: Horizon::UntilExit,
            seed,
            interaction_mode: InteractionMode::PairwiseExact,
            unsafe_dt: false,
        }
    }

    /// Default step for a given noise level: `min(1e-3, σ²/100)`.
    pub fn default_dt(sigma: f64) -> f64 {
        (1e-3f64).min(sigma * sigma / 100.0)
    }

    pub fn validate(&self, model: &PotentialModel) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(invalid("sigma", "must be a finite non-negative number"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("dt", "must be positive"));
        }
        let safe = 0.01 * self.sigma.powi(2).min(1.0);
        if self.dt > safe && !self.unsafe_dt {
            return Err(invalid(
                "dt",
                format!("{} exceeds 0.01 min(1, σ²) = {safe:e}; set unsafe_dt to override", self.dt),
            ));
        }
        if self.n_particles == 0 {
            return Err(invalid("n_particles", "must be positive"));
        }
        if self.n_particles < 2 && !model.interaction.is_zero() {
            return Err(invalid("n_particles", "need at least 2 particles with a non-zero interaction"));
        }
        if self.interaction_mode == InteractionMode::MeanfieldLinear && model.interaction.linear_coefficient().is_none() {
            return Err(Error::NonLinearInteraction);
        }
        Ok(())
    }
}

/// Particle positions, the coupled diffusion, and the per-particle noise
/// streams.
#[derive(Clone, Debug)]
pub struct EnsembleState {
    pub time: f64,
    pub steps: u64,
    dim: usize,
    positions: Vec<f64>,
    pub tagged: usize,
    y: Option<Vec<f64>>,
    streams: Vec<NoiseStream>,
    drift: Vec<f64>,
    tagged_noise: Vec<f64>,
    grad: Vec<f64>,
}

impl EnsembleState {
    /// All particles start at `x_init`; particle 0 is tagged.
    pub fn new(n_particles: usize, x_init: &[f64], seed: u64) -> Self {
        let dim = x_init.len();
        let positions = x_init.iter().cloned().cycle().take(n_particles * dim).collect();
        EnsembleState {
            time: 0.0,
            steps: 0,
            dim,
            positions,
            tagged: 0,
            y: None,
            streams: (0..n_particles as u64).map(|i| NoiseStream::new(seed, i)).collect(),
            drift: vec![0.0; n_particles * dim],
            tagged_noise: vec![0.0; dim],
            grad: vec![0.0; dim],
        }
    }

    /// Builds a state from explicit positions (flat `n x dim`).
    pub fn from_positions(positions: Vec<f64>, dim: usize, seed: u64) -> Self {
        let n = positions.len() / dim;
        let mut s = Self::new(n, &vec![0.0; dim], seed);
        s.positions = positions;
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_particles(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn tagged_position(&self) -> &[f64] {
        self.particle(self.tagged)
    }

    pub fn y_position(&self) -> Option<&[f64]> {
        self.y.as_deref()
    }

    pub fn streams(&self) -> &[NoiseStream] {
        &self.streams
    }

    /// Starts the coupled diffusion at the tagged particle's position.
    pub fn activate_coupling(&mut self) {
        self.y = Some(self.tagged_position().to_vec());
    }

    /// `|X_tagged - Y|`, when the coupling is active.
    pub fn coupling_gap(&self) -> Option<f64> {
        self.y.as_ref().map(|y| linalg::dist(y, self.tagged_position()))
    }

    // Y's drift ∇V(Y) + ∇F(Y - a), applied with the tagged particle's noise.
    fn advance_y(&mut self, model: &PotentialModel, dt: f64, noise_scale: f64) {
        if let Some(y) = self.y.as_mut() {
            let d = self.dim;
            let mut gv = vec![0.0; d];
            let mut gf = vec![0.0; d];
            let shifted = linalg::sub(y, &model.attractor);
            model.grad_v(y, &mut gv);
            model.grad_f(&shifted, &mut gf);
            for k in 0..d {
                let drift = gv[k] + gf[k];
                y[k] = euler(y[k], drift, dt, noise_scale, self.tagged_noise[k]);
            }
        }
    }
}

#[inline(always)]
fn euler(x: f64, drift: f64, dt: f64, noise_scale: f64, z: f64) -> f64 {
    x - drift * dt + noise_scale * z
}

/// One Euler-Maruyama step of the whole ensemble (and of Y, if active).
pub fn step(state: &mut EnsembleState, model: &PotentialModel, params: &SimulationParams) -> Result<()> {
    let d = state.dim;
    let n = state.n_particles();
    let dt = params.dt;
    let noise_scale = params.sigma * dt.sqrt();
    let tagged = state.tagged;

    match params.interaction_mode {
        InteractionMode::MeanfieldLinear => {
            let k = model.interaction.linear_coefficient().ok_or(Error::NonLinearInteraction)?;
            let mut mean = [0.0f64; 8];
            let mut mean_vec;
            let mean: &mut [f64] = if d <= 8 {
                &mut mean[..d]
            } else {
                mean_vec = vec![0.0; d];
                &mut mean_vec
            };
            if k != 0.0 {
                for (c, m) in mean.iter_mut().enumerate() {
                    *m = linalg::pairwise_sum_strided(&state.positions, d, c) / n as f64;
                }
            }
            // draw first so the update loop below stays free of RNG state
            for (z, stream) in state.drift.chunks_exact_mut(d).zip(state.streams.iter_mut()) {
                for v in z.iter_mut() {
                    *v = stream.normal();
                }
            }
            state.tagged_noise.copy_from_slice(&state.drift[tagged * d..(tagged + 1) * d]);
            let mut finite = true;
            let grad = &mut state.grad;
            for (x, z) in state.positions.chunks_exact_mut(d).zip(state.drift.chunks_exact(d)) {
                model.grad_v(x, grad);
                for c in 0..d {
                    let drift = if k != 0.0 { grad[c] + k * (x[c] - mean[c]) } else { grad[c] + 0.0 };
                    x[c] = euler(x[c], drift, dt, noise_scale, z[c]);
                    finite &= x[c].is_finite();
                }
            }
            if !finite {
                return Err(Error::BlowUp { time: state.time });
            }
        }
        InteractionMode::PairwiseExact => {
            let positions = &state.positions;
            let interacting = !model.interaction.is_zero();
            let fill = |(i, out): (usize, &mut [f64])| {
                let xi = &positions[i * d..(i + 1) * d];
                model.grad_v(xi, out);
                if interacting {
                    let mut stack = [0.0f64; 24];
                    let mut heap;
                    let buf: &mut [f64] = if d <= 8 {
                        &mut stack[..3 * d]
                    } else {
                        heap = vec![0.0; 3 * d];
                        &mut heap
                    };
                    let (acc, rest) = buf.split_at_mut(d);
                    let (diff, gf) = rest.split_at_mut(d);
                    for xj in positions.chunks_exact(d) {
                        for c in 0..d {
                            diff[c] = xi[c] - xj[c];
                        }
                        model.grad_f(diff, gf);
                        for c in 0..d {
                            acc[c] += gf[c];
                        }
                    }
                    for c in 0..d {
                        out[c] += acc[c] / n as f64;
                    }
                } else {
                    for o in out.iter_mut() {
                        *o += 0.0;
                    }
                }
            };
            if interacting && n >= 512 {
                state.drift.par_chunks_exact_mut(d).enumerate().for_each(fill);
            } else {
                state.drift.chunks_exact_mut(d).enumerate().for_each(fill);
            }
            let mut finite = true;
            for (i, ((x, drift), stream)) in state
                .positions
                .chunks_exact_mut(d)
                .zip(state.drift.chunks_exact(d))
                .zip(state.streams.iter_mut())
                .enumerate()
            {
                for c in 0..d {
                    let z = stream.normal();
                    if i == tagged {
                        state.tagged_noise[c] = z;
                    }
                    x[c] = euler(x[c], drift[c], dt, noise_scale, z);
                    finite &= x[c].is_finite();
                }
            }
            if !finite {
                return Err(Error::BlowUp { time: state.time });
            }
        }
    }
    state.advance_y(model, dt, noise_scale);
    state.steps += 1;
    state.time = state.steps as f64 * dt;
    Ok(())
}

/// Advances only the tagged particle (and Y). Valid when the interaction
/// vanishes: the other particles then have no influence on it, and because
/// each particle owns its noise stream the tagged path is bit-identical to
/// the one produced by [`step`].
pub(crate) fn step_tagged_only(state: &mut EnsembleState, model: &PotentialModel, params: &SimulationParams) -> Result<()> {
    debug_assert!(model.interaction.is_zero());
    let d = state.dim;
    let dt = params.dt;
    let noise_scale = params.sigma * dt.sqrt();
    let t = state.tagged;
    let x = &mut state.positions[t * d..(t + 1) * d];
    let stream = &mut state.streams[t];
    model.grad_v(x, &mut state.grad);
    let mut finite = true;
    for c in 0..d {
        let z = stream.normal();
        state.tagged_noise[c] = z;
        x[c] = euler(x[c], state.grad[c] + 0.0, dt, noise_scale, z);
        finite &= x[c].is_finite();
    }
    if !finite {
        return Err(Error::BlowUp { time: state.time });
    }
    state.advance_y(model, dt, noise_scale);
    state.steps += 1;
    state.time = state.steps as f64 * dt;
    Ok(())
}

/// Moments of the empirical measure.
#[derive(Clone, Debug, PartialEq)]
pub struct LawSummary {
    pub mean: Vec<f64>,
    /// Per-coordinate variance.
    pub variance: Vec<f64>,
    /// `E|X - a|²`.
    pub second_moment: f64,
    /// `E|X - a|⁴`.
    pub fourth_moment: f64,
    /// `max_i |X^i|`.
    pub max_norm: f64,
}

pub fn sample_law(state: &EnsembleState, a: &[f64]) -> LawSummary {
    let d = state.dim;
    let n = state.n_particles() as f64;
    let pos = &state.positions;
    let mean: Vec<f64> = (0..d).map(|c| linalg::pairwise_sum_strided(pos, d, c) / n).collect();
    let variance: Vec<f64> = (0..d)
        .map(|c| {
            let dev: Vec<f64> = pos.chunks_exact(d).map(|x| (x[c] - mean[c]).powi(2)).collect();
            linalg::pairwise_sum(&dev) / n
        })
        .collect();
    let sq: Vec<f64> = pos
        .chunks_exact(d)
        .map(|x| x.iter().zip(a).map(|(v, c)| (v - c) * (v - c)).sum())
        .collect();
    let second_moment = linalg::pairwise_sum(&sq) / n;
    let fourth: Vec<f64> = sq.iter().map(|s| s * s).collect();
    let fourth_moment = linalg::pairwise_sum(&fourth) / n;
    let max_norm = pos.chunks_exact(d).map(linalg::norm).fold(0.0, f64::max);
    LawSummary {
        mean,
        variance,
        second_moment,
        fourth_moment,
        max_norm,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{make_builtin, AssumptionParams, Confinement, Coupling, Interaction, PotentialSpec};

    fn harmonic() -> PotentialModel {
        PotentialModel::new(
            1,
            Confinement::Harmonic { stiffness: 1.0 },
            Interaction::Zero,
            AssumptionParams {
                growth_degree: 1,
                convexity_radius: 1.0,
                theta1: 1.0,
                theta2: 0.0,
                lipschitz_v: None,
                lipschitz_f: None,
            },
            &[0.0],
        )
        .unwrap()
    }

    #[test]
    fn deterministic_euler_step() {
        let m = harmonic();
        let mut p = SimulationParams::new(0.0, 0.1, 1, 0);
        p.unsafe_dt = true;
        p.validate(&m).unwrap();
        let mut s = EnsembleState::new(1, &[1.0], 0);
        step(&mut s, &m, &p).unwrap();
        assert_eq!(s.particle(0), &[0.9]);
        assert_eq!(s.time, 0.1);
    }

    #[test]
    fn equal_particles_stay_equal_without_noise() {
        let m = make_builtin(&PotentialSpec::quadratic("doublewell1d", 0.1, Coupling::Attractive)).unwrap();
        let mut p = SimulationParams::new(0.0, 0.01, 8, 0);
        p.unsafe_dt = true;
        let mut s = EnsembleState::new(8, &[-0.3], 0);
        for _ in 0..100 {
            step(&mut s, &m, &p).unwrap();
        }
        let first = s.particle(0)[0];
        assert!(s.positions().iter().all(|x| *x == first));
    }

    #[test]
    fn meanfield_matches_pairwise() {
        for coupling in [Coupling::Attractive, Coupling::Repulsive] {
            let m = make_builtin(&PotentialSpec::quadratic("doublewell2d", 0.4, coupling)).unwrap();
            let init: Vec<f64> = (0..64).map(|i| ((i * 37) % 17) as f64 / 10.0 - 0.8).collect();
            let mut a = EnsembleState::from_positions(init.clone(), 2, 9);
            let mut b = EnsembleState::from_positions(init, 2, 9);
            let mut p = SimulationParams::new(0.3, 1e-3, 32, 9);
            p.unsafe_dt = true;
            step(&mut a, &m, &p).unwrap();
            p.interaction_mode = InteractionMode::MeanfieldLinear;
            step(&mut b, &m, &p).unwrap();
            for (x, y) in a.positions().iter().zip(b.positions()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn validation_rules() {
        let m = make_builtin(&PotentialSpec::gaussian("doublewell1d", 1.0, 1.0)).unwrap();
        let mut p = SimulationParams::new(0.3, 1e-3, 16, 0);
        assert!(p.validate(&m).is_err()); // dt > 0.01 σ²
        p.dt = 5e-4;
        assert!(p.validate(&m).is_ok());
        p.interaction_mode = InteractionMode::MeanfieldLinear;
        assert!(matches!(p.validate(&m), Err(Error::NonLinearInteraction)));
        p.interaction_mode = InteractionMode::PairwiseExact;
        p.n_particles = 1;
        assert!(p.validate(&m).is_err());
        assert_eq!(SimulationParams::default_dt(0.3), 9e-4);
        assert_eq!(SimulationParams::default_dt(0.5), 1e-3);
    }

    #[test]
    fn blow_up_is_reported() {
        let m = make_builtin(&PotentialSpec::new("doublewell1d", "none")).unwrap();
        let mut p = SimulationParams::new(0.0, 1.0, 2, 0);
        p.unsafe_dt = true;
        let mut s = EnsembleState::new(2, &[50.0], 0);
        let mut res = Ok(());
        for _ in 0..10 {
            res = step(&mut s, &m, &p);
            if res.is_err() {
                break;
            }
        }
        assert!(matches!(res, Err(Error::BlowUp { .. })));
    }

    #[test]
    fn law_summary_examples() {
        let s = EnsembleState::new(5, &[-1.0], 0);
        assert_eq!(sample_law(&s, &[-1.0]).second_moment, 0.0);
        let s = EnsembleState::from_positions(vec![-2.0, 0.0], 1, 0);
        let law = sample_law(&s, &[-1.0]);
        assert_eq!(law.second_moment, 1.0);
        assert_eq!(law.fourth_moment, 1.0);
        assert_eq!(law.mean, vec![-1.0]);
        assert_eq!(law.variance, vec![1.0]);
        assert_eq!(law.max_norm, 2.0);
    }

    #[test]
    fn tagged_only_matches_full_step() {
        let m = make_builtin(&PotentialSpec::new("doublewell1d", "none")).unwrap();
        let mut p = SimulationParams::new(0.5, 1e-3, 16, 77);
        p.interaction_mode = InteractionMode::MeanfieldLinear;
        let mut full = EnsembleState::new(16, &[-1.0], 77);
        let mut solo = EnsembleState::new(16, &[-1.0], 77);
        full.activate_coupling();
        solo.activate_coupling();
        for _ in 0..5000 {
            step(&mut full, &m, &p).unwrap();
            step_tagged_only(&mut solo, &m, &p).unwrap();
        }
        assert_eq!(full.tagged_position()[0].to_bits(), solo.tagged_position()[0].to_bits());
        assert_eq!(full.coupling_gap(), Some(0.0));
        assert_eq!(solo.coupling_gap(), Some(0.0));
    }
}
