//! Simulation and verification toolkit for self-stabilizing
//! (McKean-Vlasov) diffusions.

pub mod action;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod flows;
pub mod geometry;
mod linalg;
pub mod potentials;
pub mod sde;

pub use error::{Error, Result};
pub use experiments::ExperimentConfig;
pub use geometry::Domain;
pub use potentials::{EffectivePotential, PotentialModel, PotentialSpec};
pub use sde::{EnsembleState, ExitRecord, InteractionMode, SimulationParams};
