//! Metropolis-corrected underdamped Langevin sampling.
//!
//! The OBABO splitting of underdamped Langevin dynamics (gradient-guided
//! Monte Carlo) has a closed-form Metropolis-Hastings acceptance ratio that
//! depends only on the energy error of its inner leapfrog step. HMC
//! (`γ = 0`) and SGLD / MALA (`γ → ∞`) are its limits. The symplectic
//! Euler-Maruyama scheme used by SGHMC, by contrast, has no realizable
//! backward transition and so cannot be corrected at all.
//!
//! Deferring the accept/reject over several steps lets the intermediate
//! steps use minibatch gradients, provided the step schedule is
//! time-symmetric.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod integrators;
pub mod mh;
pub mod params;
pub mod phase;
pub mod rng;
pub mod sampler;
pub mod targets;

pub use error::{Error, Result};
pub use integrators::{IntegratorKind, StepNoise, StepTrace};
pub use mh::{AcceptanceRecord, MultiStepAccumulator};
pub use phase::{kinetic_energy, MassMatrix, PhaseState, SamplerConfig};
pub use sampler::{Chain, ChainSettings, Correction, GradientMode, MomentumRefresh};
pub use targets::Target;
