//! One-step transition kernels.
//!
//! * symplectic Euler-Maruyama, the SGHMC discretisation (momentum first, then
//!   position);
//! * OBABO: partial refresh, half kick, drift, half kick, partial refresh;
//! * leapfrog: the inner BAB of OBABO;
//! * SGLD: the `a → 0` limit of OBABO with the momentum folded away.
//!
//! OBABO and leapfrog return a [`StepTrace`] holding everything the
//! acceptance computation and a bit-exact replay need.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::phase::{PhaseState, SamplerConfig};
use crate::targets::Target;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntegratorKind {
    EulerMaruyama,
    Obabo,
    Leapfrog,
    Sgld,
}

impl IntegratorKind {
    pub const ALL: [IntegratorKind; 4] = [
        IntegratorKind::EulerMaruyama,
        IntegratorKind::Obabo,
        IntegratorKind::Leapfrog,
        IntegratorKind::Sgld,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IntegratorKind::EulerMaruyama => "euler-maruyama",
            IntegratorKind::Obabo => "obabo",
            IntegratorKind::Leapfrog => "leapfrog",
            IntegratorKind::Sgld => "sgld",
        }
    }

    /// Whether the kernel has a realizable backward transition and so can be
    /// Metropolis-corrected.
    pub fn is_correctable(self) -> bool {
        matches!(self, IntegratorKind::Obabo | IntegratorKind::Leapfrog)
    }
}

impl fmt::Display for IntegratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IntegratorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "euler-maruyama" | "em" | "sghmc" => Ok(IntegratorKind::EulerMaruyama),
            "obabo" | "ggmc" => Ok(IntegratorKind::Obabo),
            "leapfrog" | "hmc" => Ok(IntegratorKind::Leapfrog),
            "sgld" | "mala" => Ok(IntegratorKind::Sgld),
            other => Err(format!("unknown integrator '{other}'")),
        }
    }
}

/// Which gradient a kick uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientSource<'a> {
    Exact,
    Minibatch(&'a [usize]),
}

impl GradientSource<'_> {
    pub fn evaluate(&self, target: &dyn Target, theta: &[f64]) -> Vec<f64> {
        match self {
            GradientSource::Exact => target.gradient(theta),
            GradientSource::Minibatch(batch) => target.minibatch_gradient(theta, batch),
        }
    }
}

/// Gradient sources of the two half kicks of one OBABO step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kicks<'a> {
    pub first: GradientSource<'a>,
    pub second: GradientSource<'a>,
}

impl<'a> Kicks<'a> {
    pub const EXACT: Kicks<'static> = Kicks {
        first: GradientSource::Exact,
        second: GradientSource::Exact,
    };

    /// Both kicks use the same batch.
    pub fn minibatch(batch: &'a [usize]) -> Self {
        Kicks {
            first: GradientSource::Minibatch(batch),
            second: GradientSource::Minibatch(batch),
        }
    }
}

/// The two standard-normal vectors `ε, ε′` consumed by O.1 and O.2.
#[derive(Debug, Clone, PartialEq)]
pub struct StepNoise {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl StepNoise {
    pub fn zeros(dim: usize) -> Self {
        Self {
            first: vec![0.0; dim],
            second: vec![0.0; dim],
        }
    }
}

/// Intermediate momenta, noises and gradients of one OBABO step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepTrace {
    /// `m_{n+1/4}`, after O.1.
    pub m_quarter: Vec<f64>,
    /// `m_{n+1/2}`, after B.1.
    pub m_half: Vec<f64>,
    /// `m_{n+3/4}`, after B.2.
    pub m_three_quarter: Vec<f64>,
    pub noise_1: Vec<f64>,
    pub noise_2: Vec<f64>,
    /// Gradient used in B.1 (at `θ_n`).
    pub gradient_start: Vec<f64>,
    /// Gradient used in B.2 (at `θ_{n+1}`).
    pub gradient_end: Vec<f64>,
}

impl StepTrace {
    /// Re-run O.1/B.1/A/B.2/O.2 from `start` with the recorded noises and
    /// gradients.
    pub fn replay(&self, start: &PhaseState, config: &SamplerConfig) -> PhaseState {
        let m_quarter = o_step(start.momentum(), &self.noise_1, config);
        let m_half = b_step(&m_quarter, &self.gradient_start, config.step_size());
        let theta = a_step(start.theta(), &m_half, config);
        let m_three_quarter = b_step(&m_half, &self.gradient_end, config.step_size());
        let momentum = o_step(&m_three_quarter, &self.noise_2, config);
        PhaseState::from_parts_unchecked(theta, momentum)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    O1,
    B1,
    A,
    B2,
    O2,
    /// Euler-Maruyama / SGLD update.
    Update,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::O1 => "O.1",
            Stage::B1 => "B.1",
            Stage::A => "A",
            Stage::B2 => "B.2",
            Stage::O2 => "O.2",
            Stage::Update => "update",
        };
        f.write_str(s)
    }
}

/// Non-finite value mid-step. Callers treat it as a forced rejection.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("non-finite value at stage {stage}")]
pub struct StepError {
    pub stage: Stage,
    /// Everything computed before the failure; later fields are empty.
    pub partial: Box<StepTrace>,
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn fail(stage: Stage, partial: StepTrace) -> StepError {
    StepError {
        stage,
        partial: Box::new(partial),
    }
}

/// O: `√a m + √((1−a)T) M^{1/2} ε`.
pub(crate) fn o_step(m: &[f64], noise: &[f64], config: &SamplerConfig) -> Vec<f64> {
    let sqrt_a = config.permanence().sqrt();
    let scale = (config.refresh_fraction() * config.temperature()).sqrt();
    m.iter()
        .zip(noise)
        .zip(config.mass().diag())
        .map(|((&m, &e), &mass)| sqrt_a * m + scale * mass.sqrt() * e)
        .collect()
}

/// B: `m − (h/2) g`.
pub(crate) fn b_step(m: &[f64], gradient: &[f64], step_size: f64) -> Vec<f64> {
    let half = 0.5 * step_size;
    m.iter().zip(gradient).map(|(m, g)| m - half * g).collect()
}

/// A: `θ + h M⁻¹ m`.
pub(crate) fn a_step(theta: &[f64], m: &[f64], config: &SamplerConfig) -> Vec<f64> {
    let h = config.step_size();
    theta
        .iter()
        .zip(m)
        .zip(config.mass().diag())
        .map(|((t, m), mass)| t + h * (m / mass))
        .collect()
}

/// Symplectic Euler-Maruyama (SGHMC):
/// `m' = (1 − hγ) m − h g + √h M^{1/2} √(2γT) ε`, then `θ' = θ + h M⁻¹ m'`.
///
/// `gradient` may be any estimate `g_n` of `∇U(θ_n)`.
pub fn step_euler_maruyama(
    state: &PhaseState,
    gradient: &[f64],
    config: &SamplerConfig,
    noise: &[f64],
) -> Result<PhaseState, StepError> {
    if !all_finite(gradient) {
        return Err(fail(Stage::Update, StepTrace::default()));
    }
    let h = config.step_size();
    let gamma = config.friction();
    let damping = 1.0 - h * gamma;
    let noise_scale = h.sqrt() * (2.0 * gamma * config.temperature()).sqrt();
    let momentum: Vec<f64> = state
        .momentum()
        .iter()
        .zip(gradient)
        .zip(noise)
        .zip(config.mass().diag())
        .map(|(((&m, &g), &e), &mass)| damping * m - h * g + noise_scale * mass.sqrt() * e)
        .collect();
    let theta = a_step(state.theta(), &momentum, config);
    if !(all_finite(&momentum) && all_finite(&theta)) {
        return Err(fail(Stage::Update, StepTrace::default()));
    }
    Ok(PhaseState::from_parts_unchecked(theta, momentum))
}

/// One OBABO step, evaluating the starting gradient with `kicks.first`.
pub fn step_obabo(
    state: &PhaseState,
    target: &dyn Target,
    config: &SamplerConfig,
    kicks: Kicks<'_>,
    noise: &StepNoise,
) -> Result<(PhaseState, StepTrace), StepError> {
    let start = kicks.first.evaluate(target, state.theta());
    step_obabo_from(state, target, config, start, kicks.second, noise)
}

/// One OBABO step with a precomputed gradient at `θ_n` (e.g. the cached
/// `gradient_end` of the previous exact-gradient step).
pub fn step_obabo_from(
    state: &PhaseState,
    target: &dyn Target,
    config: &SamplerConfig,
    gradient_start: Vec<f64>,
    second: GradientSource<'_>,
    noise: &StepNoise,
) -> Result<(PhaseState, StepTrace), StepError> {
    let h = config.step_size();
    let mut trace = StepTrace {
        noise_1: noise.first.clone(),
        noise_2: noise.second.clone(),
        ..StepTrace::default()
    };

    trace.m_quarter = o_step(state.momentum(), &noise.first, config);
    if !all_finite(&trace.m_quarter) {
        return Err(fail(Stage::O1, trace));
    }

    if !all_finite(&gradient_start) {
        trace.gradient_start = gradient_start;
        return Err(fail(Stage::B1, trace));
    }
    trace.m_half = b_step(&trace.m_quarter, &gradient_start, h);
    trace.gradient_start = gradient_start;
    if !all_finite(&trace.m_half) {
        return Err(fail(Stage::B1, trace));
    }

    let theta = a_step(state.theta(), &trace.m_half, config);
    if !all_finite(&theta) {
        return Err(fail(Stage::A, trace));
    }

    let gradient_end = second.evaluate(target, &theta);
    if !all_finite(&gradient_end) {
        trace.gradient_end = gradient_end;
        return Err(fail(Stage::B2, trace));
    }
    trace.m_three_quarter = b_step(&trace.m_half, &gradient_end, h);
    trace.gradient_end = gradient_end;
    if !all_finite(&trace.m_three_quarter) {
        return Err(fail(Stage::B2, trace));
    }

    let momentum = o_step(&trace.m_three_quarter, &noise.second, config);
    if !all_finite(&momentum) {
        return Err(fail(Stage::O2, trace));
    }
    Ok((PhaseState::from_parts_unchecked(theta, momentum), trace))
}

/// One leapfrog step (B, A, B) with exact gradients. The friction in
/// `config` is ignored.
pub fn step_leapfrog(
    state: &PhaseState,
    target: &dyn Target,
    config: &SamplerConfig,
) -> Result<(PhaseState, StepTrace), StepError> {
    let start = target.gradient(state.theta());
    step_leapfrog_from(state, target, config, start, GradientSource::Exact)
}

pub fn step_leapfrog_from(
    state: &PhaseState,
    target: &dyn Target,
    config: &SamplerConfig,
    gradient_start: Vec<f64>,
    second: GradientSource<'_>,
) -> Result<(PhaseState, StepTrace), StepError> {
    let h = config.step_size();
    let dim = state.dim();
    let mut trace = StepTrace {
        m_quarter: state.momentum().to_vec(),
        noise_1: vec![0.0; dim],
        noise_2: vec![0.0; dim],
        ..StepTrace::default()
    };
    if !all_finite(&gradient_start) {
        trace.gradient_start = gradient_start;
        return Err(fail(Stage::B1, trace));
    }
    trace.m_half = b_step(state.momentum(), &gradient_start, h);
    trace.gradient_start = gradient_start;
    let theta = a_step(state.theta(), &trace.m_half, config);
    if !(all_finite(&trace.m_half) && all_finite(&theta)) {
        return Err(fail(Stage::A, trace));
    }
    let gradient_end = second.evaluate(target, &theta);
    if !all_finite(&gradient_end) {
        trace.gradient_end = gradient_end;
        return Err(fail(Stage::B2, trace));
    }
    let momentum = b_step(&trace.m_half, &gradient_end, h);
    trace.gradient_end = gradient_end;
    if !all_finite(&momentum) {
        return Err(fail(Stage::B2, trace));
    }
    trace.m_three_quarter = momentum.clone();
    Ok((PhaseState::from_parts_unchecked(theta, momentum), trace))
}

/// SGLD / MALA proposal, the `γ → ∞` limit of OBABO:
/// `θ' = θ + h M⁻¹(√T M^{1/2} ε − (h/2) g)`. No momentum is carried.
pub fn step_sgld(
    theta: &[f64],
    target: &dyn Target,
    config: &SamplerConfig,
    source: GradientSource<'_>,
    noise: &[f64],
) -> Result<Vec<f64>, StepError> {
    let g = source.evaluate(target, theta);
    sgld_update(theta, &g, config, noise)
}

pub(crate) fn sgld_update(
    theta: &[f64],
    gradient: &[f64],
    config: &SamplerConfig,
    noise: &[f64],
) -> Result<Vec<f64>, StepError> {
    if !all_finite(gradient) {
        return Err(fail(Stage::Update, StepTrace::default()));
    }
    let h = config.step_size();
    let sqrt_t = config.temperature().sqrt();
    let out: Vec<f64> = theta
        .iter()
        .zip(gradient)
        .zip(noise)
        .zip(config.mass().diag())
        .map(|(((&t, &g), &e), &mass)| {
            let fresh = sqrt_t * mass.sqrt() * e;
            t + h * ((fresh - 0.5 * h * g) / mass)
        })
        .collect();
    if !all_finite(&out) {
        return Err(fail(Stage::Update, StepTrace::default()));
    }
    Ok(out)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Both support conditions of the Euler-Maruyama kernel:
/// `θ_{n+1} = θ_n + h M⁻¹ m_{n+1}` (forward) and
/// `θ_n = θ_{n+1} + h M⁻¹(−m_n)` (backward from the negated end state).
/// With `h > 0` they hold together only when `m_n = m_{n+1}`. The backward
/// condition is checked in that momentum form as well, since for tiny `h`
/// the position shift `h M⁻¹(m_{n+1} − m_n)` falls below the resolution of
/// `θ` and a position comparison alone would pass spuriously.
pub fn check_backward_realizability_em(
    start: &PhaseState,
    end: &PhaseState,
    config: &SamplerConfig,
) -> bool {
    let h = config.step_size();
    let mass = config.mass().diag();
    (0..start.dim()).all(|i| {
        let forward = start.theta()[i] + h * (end.momentum()[i] / mass[i]);
        let backward = end.theta()[i] + h * (-start.momentum()[i] / mass[i]);
        close(end.theta()[i], forward)
            && close(start.theta()[i], backward)
            && close(start.momentum()[i], end.momentum()[i])
    })
}
