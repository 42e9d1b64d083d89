//! Conversions between sampler parameters `(h, γ)` and the deep-learning
//! parameterization of SGD with momentum `(ℓ, β)` on a data set of size `N`.
//!
//! For OBABO:
//!
//! ```text
//! h = √(ℓ/N)      γ = −√(N/ℓ) ln β      ℓ = N h²      β = e^{−γh}
//! ```
//!
//! and for symplectic Euler-Maruyama `β = 1 − γh`, `γ = (1 − β)√(N/ℓ)`.
//! `β = 0` is the infinite-friction limit, which is SGLD.
//!
//! Temperature and mass are not part of the mapping and pass through
//! unchanged.

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdParams {
    learning_rate: f64,
    momentum: f64,
    data_size: usize,
}

impl SgdParams {
    /// `ℓ > 0`, `0 ≤ β < 1`, `N ≥ 1`.
    pub fn new(learning_rate: f64, momentum: f64, data_size: usize) -> Result<Self> {
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(invalid(format!("learning rate must be finite and > 0, got {learning_rate}")));
        }
        if !(momentum.is_finite() && (0.0..1.0).contains(&momentum)) {
            return Err(invalid(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        if data_size == 0 {
            return Err(invalid("data size must be >= 1"));
        }
        Ok(Self {
            learning_rate,
            momentum,
            data_size,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn data_size(&self) -> usize {
        self.data_size
    }

    /// `h = √(ℓ/N)`
    pub fn step_size(&self) -> f64 {
        (self.learning_rate / self.data_size as f64).sqrt()
    }
}

/// Sampler parameters selected by an SGD configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerParams {
    Langevin { step_size: f64, friction: f64 },
    /// `β = 0`: no momentum is retained, the integrator is SGLD.
    Sgld { step_size: f64 },
}

impl SamplerParams {
    pub fn step_size(&self) -> f64 {
        match *self {
            SamplerParams::Langevin { step_size, .. } | SamplerParams::Sgld { step_size } => step_size,
        }
    }

    /// `None` for the SGLD limit.
    pub fn friction(&self) -> Option<f64> {
        match *self {
            SamplerParams::Langevin { friction, .. } => Some(friction),
            SamplerParams::Sgld { .. } => None,
        }
    }
}

/// `(ℓ, β) → (h, γ)` for OBABO.
pub fn sgd_to_sampler(params: &SgdParams) -> SamplerParams {
    let step_size = params.step_size();
    if params.momentum == 0.0 {
        return SamplerParams::Sgld { step_size };
    }
    let friction = -params.momentum.ln() / step_size;
    SamplerParams::Langevin { step_size, friction }
}

/// Result of [`sampler_to_sgd`]. `β = 1` (zero friction) lies outside the
/// [`SgdParams`] domain and is reported rather than rejected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdEquivalent {
    pub learning_rate: f64,
    pub momentum: f64,
    pub data_size: usize,
}

impl SgdEquivalent {
    /// `β = 1`: no momentum refresh, i.e. Hamiltonian dynamics.
    pub fn is_hmc_regime(&self) -> bool {
        self.momentum == 1.0
    }

    pub fn to_params(&self) -> Result<SgdParams> {
        SgdParams::new(self.learning_rate, self.momentum, self.data_size)
    }
}

/// `(h, γ) → (ℓ, β)` for OBABO: `ℓ = N h²`, `β = e^{−γh}`.
pub fn sampler_to_sgd(step_size: f64, friction: f64, data_size: usize) -> Result<SgdEquivalent> {
    check_sampler(step_size, friction, data_size)?;
    Ok(SgdEquivalent {
        learning_rate: data_size as f64 * step_size * step_size,
        momentum: (-friction * step_size).exp(),
        data_size,
    })
}

/// `(ℓ, β) → (h, γ)` for symplectic Euler-Maruyama: `γ = (1 − β)√(N/ℓ)`.
pub fn sgd_to_em_sampler(params: &SgdParams) -> (f64, f64) {
    let step_size = params.step_size();
    (step_size, (1.0 - params.momentum) / step_size)
}

/// `(h, γ) → (ℓ, β)` for symplectic Euler-Maruyama: `β = 1 − γh`, which must
/// lie in `[0, 1]`.
pub fn em_sampler_to_sgd(step_size: f64, friction: f64, data_size: usize) -> Result<SgdEquivalent> {
    check_sampler(step_size, friction, data_size)?;
    let momentum = 1.0 - friction * step_size;
    if momentum < 0.0 {
        return Err(invalid(format!(
            "friction × step size = {} exceeds 1; no Euler-Maruyama momentum equivalent",
            friction * step_size
        )));
    }
    Ok(SgdEquivalent {
        learning_rate: data_size as f64 * step_size * step_size,
        momentum,
        data_size,
    })
}

fn check_sampler(step_size: f64, friction: f64, data_size: usize) -> Result<()> {
    if !(step_size.is_finite() && step_size > 0.0) {
        return Err(invalid(format!("step size must be finite and > 0, got {step_size}")));
    }
    if !(friction.is_finite() && friction >= 0.0) {
        return Err(invalid(format!("friction must be finite and >= 0, got {friction}")));
    }
    if data_size == 0 {
        return Err(invalid("data size must be >= 1"));
    }
    Ok(())
}
