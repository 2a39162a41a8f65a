use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{sublevel_component, Domain};
use crate::potentials::{EffectivePotential, PotentialSpec};
use crate::sde::{CoupleAfter, InteractionMode, SimulationParams};

/// Domain description as written in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Interval { lo: f64, hi: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// Component of `{W_a - W_a(a) < level}` containing `a`.
    Sublevel { level: f64 },
}

impl DomainSpec {
    pub fn build(&self, w: &EffectivePotential) -> Result<Domain> {
        let d = w.dim();
        let check_dim = |n: usize| {
            if n == d {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { expected: d, got: n })
            }
        };
        match self {
            DomainSpec::Interval { lo, hi } => {
                check_dim(1)?;
                if !(lo < hi) {
                    return Err(invalid("domain", "interval needs lo < hi"));
                }
                Ok(Domain::Interval { lo: *lo, hi: *hi })
            }
            DomainSpec::Box { lo, hi } => {
                check_dim(lo.len())?;
                check_dim(hi.len())?;
                if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
                    return Err(invalid("domain", "box needs lo < hi in every coordinate"));
                }
                Ok(Domain::Box {
                    lo: lo.clone(),
                    hi: hi.clone(),
                })
            }
            DomainSpec::Ball { center, radius } => {
                check_dim(center.len())?;
                if !(*radius > 0.0) {
                    return Err(invalid("domain", "ball radius must be positive"));
                }
                Ok(Domain::Ball {
                    center: center.clone(),
                    radius: *radius,
                })
            }
            DomainSpec::Sublevel { level } => sublevel_component(w, *level),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CoupleKeyword {
    #[serde(rename = "at-stabilization")]
    AtStabilization,
    #[serde(rename = "never")]
    Never,
}

/// `couple_after`: a time, `"at-stabilization"` or `"never"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoupleSpec {
    Time(f64),
    Keyword(CoupleKeyword),
}

impl Default for CoupleSpec {
    fn default() -> Self {
        CoupleSpec::Keyword(CoupleKeyword::AtStabilization)
    }
}

impl From<CoupleSpec> for CoupleAfter {
    fn from(c: CoupleSpec) -> Self {
        match c {
            CoupleSpec::Time(t) => CoupleAfter::At(t),
            CoupleSpec::Keyword(CoupleKeyword::AtStabilization) => CoupleAfter::AtStabilization,
            CoupleSpec::Keyword(CoupleKeyword::Never) => CoupleAfter::Never,
        }
    }
}

fn default_kappa() -> f64 {
    0.2
}
fn default_cap_factor() -> f64 {
    50.0
}
fn default_mode() -> InteractionMode {
    InteractionMode::PairwiseExact
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub x_init: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub n_particles: usize,
    pub replications: usize,
    /// Master seed; replication seeds are derived from it.
    pub seed: u64,
    /// Fixed step; when absent each level uses `min(1e-3, σ²/100)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default)]
    pub unsafe_dt: bool,
    #[serde(default = "default_mode")]
    pub interaction_mode: InteractionMode,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub couple_after: CoupleSpec,
    /// Runs are censored at `factor * exp(2H/σ²)` time units.
    #[serde(default = "default_cap_factor")]
    pub horizon_cap_factor: f64,
    /// Hard cap on steps per run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_every: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationSection {
    /// Boundary components forming the exit-location test set.
    pub exit_set: Vec<String>,
    pub exit_ceiling: f64,
    pub law_kappa: f64,
    pub law_seeds: usize,
    pub coupling_eta: f64,
    /// Levels censored at this rate or more are left out of the slope fit.
    pub max_censoring: f64,
    /// Coverage of the reported δ band.
    pub delta_coverage: f64,
    pub instanton_horizon: f64,
    pub instanton_segments: usize,
    pub instanton_iters: usize,
    pub exit_cost_budget: usize,
    pub stability_horizon: f64,
    pub assumption_budget: usize,
}

impl Default for VerificationSection {
    fn default() -> Self {
        VerificationSection {
            exit_set: vec!["lo".into()],
            exit_ceiling: 0.05,
            law_kappa: 0.25,
            law_seeds: 50,
            coupling_eta: 0.0,
            max_censoring: 0.1,
            delta_coverage: 0.9,
            instanton_horizon: 20.0,
            instanton_segments: 400,
            instanton_iters: 20_000,
            exit_cost_budget: 2000,
            stability_horizon: 200.0,
            assumption_budget: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

/// A campaign description, stored as TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub potential: PotentialSpec,
    pub domain: DomainSpec,
    pub simulation: SimulationSection,
    #[serde(default)]
    pub verification: VerificationSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.simulation;
        if s.replications == 0 {
            return Err(invalid("replications", "must be at least 1"));
        }
        if s.n_particles == 0 {
            return Err(invalid("n_particles", "must be positive"));
        }
        if s.sigmas.is_empty() {
            return Err(invalid("sigmas", "need at least one level"));
        }
        for (i, a) in s.sigmas.iter().enumerate() {
            if !(*a > 0.0) || !a.is_finite() {
                return Err(invalid("sigmas", format!("{a} is not strictly positive")));
            }
            if s.sigmas[..i].contains(a) {
                return Err(invalid("sigmas", format!("{a} appears twice")));
            }
        }
        if let Some(dt) = s.dt {
            if !(dt > 0.0) {
                return Err(invalid("dt", "must be positive"));
            }
        }
        if !(s.horizon_cap_factor > 0.0) {
            return Err(invalid("horizon_cap_factor", "must be positive"));
        }
        if s.seed > i64::MAX as u64 {
            return Err(invalid("seed", "must fit in 63 bits"));
        }
        Ok(())
    }

    pub fn dt_for(&self, sigma: f64) -> f64 {
        self.simulation.dt.unwrap_or_else(|| SimulationParams::default_dt(sigma))
    }

    pub fn couple_after(&self) -> CoupleAfter {
        self.simulation.couple_after.into()
    }

    /// Simulation parameters for one run.
    pub fn params(&self, sigma: f64, seed: u64) -> SimulationParams {
        let s = &self.simulation;
        SimulationParams {
            sigma,
            dt: self.dt_for(sigma),
            n_particles: s.n_particles,
            horizon: crate::sde::Horizon::UntilExit,
            seed,
            interaction_mode: s.interaction_mode,
            unsafe_dt: s.unsafe_dt,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
[potential]
confinement = "doublewell1d"
interaction = "quadratic"
alpha = 0.1
sign = "attractive"

[domain]
kind = "interval"
lo = -2.0
hi = 0.0

[simulation]
x_init = [-1.0]
sigmas = [0.45, 0.4, 0.35, 0.3]
n_particles = 256
replications = 100
seed = 20240501
dt = 0.001
unsafe_dt = true
interaction_mode = "meanfield_linear"
kappa = 0.2
couple_after = "at-stabilization"

[output]
dir = "out/dw1d"
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.simulation.sigmas, vec![0.45, 0.4, 0.35, 0.3]);
        assert_eq!(cfg.couple_after(), CoupleAfter::AtStabilization);
        assert_eq!(cfg.verification, VerificationSection::default());
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
        for (a, b) in cfg.simulation.sigmas.iter().zip(&back.simulation.sigmas) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn couple_after_forms() {
        let t = SAMPLE.replace("couple_after = \"at-stabilization\"", "couple_after = 0.0");
        assert_eq!(ExperimentConfig::from_toml(&t).unwrap().couple_after(), CoupleAfter::At(0.0));
        let t = SAMPLE.replace("couple_after = \"at-stabilization\"", "couple_after = \"never\"");
        assert_eq!(ExperimentConfig::from_toml(&t).unwrap().couple_after(), CoupleAfter::Never);
        let t = SAMPLE.replace("couple_after = \"at-stabilization\"", "couple_after = \"later\"");
        assert!(ExperimentConfig::from_toml(&t).is_err());
    }

    #[test]
    fn rejects_bad_levels() {
        let t = SAMPLE.replace("[0.45, 0.4, 0.35, 0.3]", "[0.45, 0.45]");
        assert!(ExperimentConfig::from_toml(&t).is_err());
        let t = SAMPLE.replace("[0.45, 0.4, 0.35, 0.3]", "[0.45, -0.1]");
        assert!(ExperimentConfig::from_toml(&t).is_err());
        let t = SAMPLE.replace("replications = 100", "replications = 0");
        assert!(ExperimentConfig::from_toml(&t).is_err());
        let t = SAMPLE.replace("kappa = 0.2", "kappa = 0.2\nbogus = 1");
        assert!(matches!(ExperimentConfig::from_toml(&t), Err(Error::Config(_))));
    }

    #[test]
    fn dt_rule() {
        let t = SAMPLE.replace("dt = 0.001\n", "");
        let cfg = ExperimentConfig::from_toml(&t).unwrap();
        assert_eq!(cfg.dt_for(0.45), 1e-3);
        assert!((cfg.dt_for(0.3) - 9e-4).abs() < 1e-18);
    }
}
