//! Phase-space state, the diagonal mass matrix and the Boltzmann density.
//!
//! The chain lives on `s = (θ, m)`. The joint target is
//! `exp(-(U(θ) + K(m)) / T)` with `K(m) = ½ mᵀ M⁻¹ m`; only unnormalized log
//! densities are computed since every consumer works with ratios.

use crate::error::{check_dim, invalid, Error, Result};
use crate::targets::Target;

/// Position and momentum of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    theta: Vec<f64>,
    momentum: Vec<f64>,
}

impl PhaseState {
    pub fn new(theta: Vec<f64>, momentum: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(invalid("phase state needs dimension >= 1"));
        }
        check_dim(theta.len(), momentum.len())?;
        if !theta.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("theta"));
        }
        if !momentum.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("momentum"));
        }
        Ok(Self { theta, momentum })
    }

    /// State at rest: zero momentum.
    pub fn at_rest(theta: Vec<f64>) -> Result<Self> {
        let d = theta.len();
        Self::new(theta, vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn momentum(&self) -> &[f64] {
        &self.momentum
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.theta, self.momentum)
    }

    /// `(θ, m) ↦ (θ, −m)`. Leaves the Boltzmann density unchanged.
    pub fn negate_momentum(&self) -> Self {
        Self {
            theta: self.theta.clone(),
            momentum: self.momentum.iter().map(|m| -m).collect(),
        }
    }

    /// Internal constructor for integrator outputs that are checked by the caller.
    pub(crate) fn from_parts_unchecked(theta: Vec<f64>, momentum: Vec<f64>) -> Self {
        debug_assert_eq!(theta.len(), momentum.len());
        Self { theta, momentum }
    }
}

/// Free function form of [`PhaseState::negate_momentum`].
pub fn negate_momentum(state: &PhaseState) -> PhaseState {
    state.negate_momentum()
}

/// Diagonal, strictly positive mass matrix `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct MassMatrix {
    diag: Vec<f64>,
}

impl MassMatrix {
    pub fn new(diag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(invalid("mass matrix needs dimension >= 1"));
        }
        if let Some(bad) = diag.iter().find(|&&x| !(x.is_finite() && x > 0.0)) {
            return Err(invalid(format!(
                "mass matrix entries must be finite and > 0, got {bad}"
            )));
        }
        Ok(Self { diag })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            diag: vec![1.0; dim.max(1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// `M v`
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.zip_map(v, |m, x| m * x)
    }

    /// `M⁻¹ v`
    pub fn apply_inverse(&self, v: &[f64]) -> Vec<f64> {
        self.zip_map(v, |m, x| x / m)
    }

    /// `M^{1/2} v`
    pub fn apply_sqrt(&self, v: &[f64]) -> Vec<f64> {
        self.zip_map(v, |m, x| m.sqrt() * x)
    }

    /// `M^{-1/2} v`
    pub fn apply_inv_sqrt(&self, v: &[f64]) -> Vec<f64> {
        self.zip_map(v, |m, x| x / m.sqrt())
    }

    /// `log det M`
    pub fn log_det(&self) -> f64 {
        self.diag.iter().map(|m| m.ln()).sum()
    }

    /// `½ mᵀ M⁻¹ m`, without the dimension check.
    pub(crate) fn quadratic(&self, m: &[f64]) -> f64 {
        debug_assert_eq!(m.len(), self.diag.len());
        0.5 * m
            .iter()
            .zip(&self.diag)
            .map(|(x, mass)| x * x / mass)
            .sum::<f64>()
    }

    fn zip_map(&self, v: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.diag.len());
        self.diag.iter().zip(v).map(|(&m, &x)| f(m, x)).collect()
    }
}

/// `K(m) = ½ mᵀ M⁻¹ m`.
pub fn kinetic_energy(momentum: &[f64], mass: &MassMatrix) -> Result<f64> {
    check_dim(mass.dim(), momentum.len())?;
    Ok(mass.quadratic(momentum))
}

/// Step size `h`, friction `γ`, temperature `T` and mass matrix `M`.
///
/// Infinite friction is never stored; the SGLD integrator stands in for it.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    step_size: f64,
    friction: f64,
    temperature: f64,
    mass: MassMatrix,
}

impl SamplerConfig {
    pub fn new(step_size: f64, friction: f64, temperature: f64, mass: MassMatrix) -> Result<Self> {
        if !(step_size.is_finite() && step_size > 0.0) {
            return Err(invalid(format!("step size must be finite and > 0, got {step_size}")));
        }
        if !(friction.is_finite() && friction >= 0.0) {
            return Err(invalid(format!("friction must be finite and >= 0, got {friction}")));
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(invalid(format!(
                "temperature must be finite and > 0, got {temperature}"
            )));
        }
        Ok(Self {
            step_size,
            friction,
            temperature,
            mass,
        })
    }

    /// Unit temperature, identity mass.
    pub fn standard(step_size: f64, friction: f64, dim: usize) -> Result<Self> {
        Self::new(step_size, friction, 1.0, MassMatrix::identity(dim))
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn friction(&self) -> f64 {
        self.friction
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn mass(&self) -> &MassMatrix {
        &self.mass
    }

    pub fn dim(&self) -> usize {
        self.mass.dim()
    }

    /// Same config with a different `(h, γ)` pair.
    pub fn with_step(&self, step_size: f64, friction: f64) -> Result<Self> {
        Self::new(step_size, friction, self.temperature, self.mass.clone())
    }

    /// Momentum permanence `a = e^{-γh}`.
    pub fn permanence(&self) -> f64 {
        (-self.friction * self.step_size).exp()
    }

    /// `1 − a`, computed without cancellation.
    pub fn refresh_fraction(&self) -> f64 {
        -(-self.friction * self.step_size).exp_m1()
    }
}

/// Unnormalized `log ρ(θ, m) = −(U(θ) + K(m)) / T`.
pub fn log_boltzmann(state: &PhaseState, target: &dyn Target, config: &SamplerConfig) -> Result<f64> {
    check_dim(target.dim(), state.dim())?;
    let u = target.potential(state.theta());
    if !u.is_finite() {
        return Err(Error::NonFinite("potential"));
    }
    let k = kinetic_energy(state.momentum(), config.mass())?;
    Ok(-(u + k) / config.temperature())
}
