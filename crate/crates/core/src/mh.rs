//! Metropolis-Hastings acceptance for the OBABO (GGMC) kernel.
//!
//! For one OBABO step the log acceptance reduces to
//!
//! ```text
//! log α = −(1/T) (U(θ_{n+1}) − U(θ_n) + K(m_{n+3/4}) − K(m_{n+1/4}))
//! ```
//!
//! which involves neither the friction nor the outer momenta. The O-steps are
//! exact for the momentum marginal, so only the BAB leapfrog error is
//! penalised. [`oracle_log_accept`] computes the same quantity from the
//! explicit forward and backward Gaussian transition densities and is kept
//! as an independent check.
//!
//! Over `N` steps the per-step ratios multiply. The intermediate Boltzmann
//! factors telescope, so a multi-step round needs the exact potential only at
//! its two endpoints ([`MultiStepAccumulator`]). The steps in between may use
//! stochastic gradients as long as the step schedule (step sizes, frictions,
//! and gradient laws of the half kicks) reads the same backwards
//! ([`validate_schedule_symmetry`]); otherwise the backward trajectory is not
//! realizable and the acceptance probability is zero.

use crate::error::{check_dim, invalid, Result};
use crate::integrators::{check_backward_realizability_em, StepNoise, StepTrace};
use crate::phase::{PhaseState, SamplerConfig};
use crate::rng::NoiseStream;
use crate::targets::Target;

/// Outcome of one Metropolis-Hastings test.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceRecord {
    /// Log acceptance ratio before `min(1, ·)`.
    pub log_alpha: f64,
    pub accepted: bool,
    pub potential_start: f64,
    pub potential_end: f64,
    /// `K(m_{n+1/4})`, summed over the steps of a multi-step round.
    pub kinetic_quarter: f64,
    /// `K(m_{n+3/4})`, summed over the steps of a multi-step round.
    pub kinetic_three_quarter: f64,
    pub note: Option<RecordNote>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordNote {
    /// A non-finite energy or gradient forced the rejection.
    NonFinite,
    /// The multi-step schedule is not time-symmetric.
    AsymmetricSchedule,
}

impl RecordNote {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordNote::NonFinite => "non-finite energy or gradient",
            RecordNote::AsymmetricSchedule => {
                "schedule is not time-symmetric: backward trajectory unrealizable, acceptance probability zero"
            }
        }
    }
}

impl AcceptanceRecord {
    /// Record with the closed-form log acceptance computed from the energies.
    pub fn from_energies(
        potential_start: f64,
        potential_end: f64,
        kinetic_quarter: f64,
        kinetic_three_quarter: f64,
        temperature: f64,
    ) -> Self {
        let mut record = Self {
            log_alpha: 0.0,
            accepted: false,
            potential_start,
            potential_end,
            kinetic_quarter,
            kinetic_three_quarter,
            note: None,
        };
        record.log_alpha = record.recompute_log_alpha(temperature);
        if record.log_alpha == f64::NEG_INFINITY
            && ![potential_start, potential_end, kinetic_quarter, kinetic_three_quarter]
                .iter()
                .all(|x| x.is_finite())
        {
            record.note = Some(RecordNote::NonFinite);
        }
        record
    }

    /// Forced rejection.
    pub fn rejected(note: RecordNote, potential_start: f64) -> Self {
        Self {
            log_alpha: f64::NEG_INFINITY,
            accepted: false,
            potential_start,
            potential_end: f64::NAN,
            kinetic_quarter: f64::NAN,
            kinetic_three_quarter: f64::NAN,
            note: Some(note),
        }
    }

    /// `−(1/T)(U_end − U_start + K_{3/4} − K_{1/4})` from the stored
    /// energies; `−∞` when any of them is non-finite.
    pub fn recompute_log_alpha(&self, temperature: f64) -> f64 {
        energy_log_alpha(
            self.potential_start,
            self.potential_end,
            self.kinetic_quarter,
            self.kinetic_three_quarter,
            temperature,
        )
    }

    /// `min(1, α)`.
    pub fn acceptance_probability(&self) -> f64 {
        if self.log_alpha.is_nan() {
            0.0
        } else {
            self.log_alpha.min(0.0).exp()
        }
    }
}

fn energy_log_alpha(u0: f64, u1: f64, k14: f64, k34: f64, temperature: f64) -> f64 {
    let value = -((u1 - u0) + (k34 - k14)) / temperature;
    let overflow = value == f64::INFINITY && [u0, u1, k14, k34].iter().all(|x| x.is_finite());
    if value.is_finite() || overflow {
        value
    } else {
        f64::NEG_INFINITY
    }
}

/// Closed-form GGMC log acceptance for one OBABO step. `u_start`/`u_end` are
/// exact potentials; non-finite input yields `−∞`.
pub fn ggmc_log_accept(trace: &StepTrace, u_start: f64, u_end: f64, config: &SamplerConfig) -> f64 {
    let mass = config.mass();
    if trace.m_quarter.len() != mass.dim() || trace.m_three_quarter.len() != mass.dim() {
        return f64::NEG_INFINITY;
    }
    let k14 = mass.quadratic(&trace.m_quarter);
    let k34 = mass.quadratic(&trace.m_three_quarter);
    energy_log_alpha(u_start, u_end, k14, k34, config.temperature())
}

/// Result of [`oracle_log_accept`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleAcceptance {
    pub log_alpha: f64,
    /// `γ = 0`: the O-step Gaussians are degenerate and the BAB-only limit
    /// (Boltzmann ratio of a reversible, volume-preserving map) was used.
    pub degenerate: bool,
}

/// Log acceptance from first principles: Boltzmann log ratio plus the log
/// ratio of backward to forward transition densities, each density being a
/// product of two normalized Gaussians in the O-step increments
/// `r = m_{n+1/4} − √a m_n`, `r′ = m_{n+1} − √a m_{n+3/4}` with covariance
/// `(1 − a) T M`, times the Jacobian factor `h⁻¹ det M`.
pub fn oracle_log_accept(
    start: &PhaseState,
    end: &PhaseState,
    trace: &StepTrace,
    target: &dyn Target,
    config: &SamplerConfig,
) -> OracleAcceptance {
    oracle_log_accept_with(start, end, trace, target, config, true)
}

pub(crate) fn oracle_log_accept_with(
    start: &PhaseState,
    end: &PhaseState,
    trace: &StepTrace,
    target: &dyn Target,
    config: &SamplerConfig,
    normalized: bool,
) -> OracleAcceptance {
    let t = config.temperature();
    let mass = config.mass();
    let log_boltzmann_ratio = -((target.potential(end.theta()) - target.potential(start.theta()))
        + (mass.quadratic(end.momentum()) - mass.quadratic(start.momentum())))
        / t;

    if config.friction() == 0.0 {
        return OracleAcceptance {
            log_alpha: finite_or_neg_inf(log_boltzmann_ratio),
            degenerate: true,
        };
    }

    let a = config.permanence();
    let sqrt_a = a.sqrt();
    let variance = config.refresh_fraction() * t;
    let dim = start.dim();
    let log_jacobian = mass.log_det() - config.step_size().ln();

    let log_gauss = |x: &[f64]| -> f64 {
        // log N(x | 0, variance · M)
        let quad: f64 = x.iter().zip(mass.diag()).map(|(v, m)| v * v / (variance * m)).sum();
        let mut value = -0.5 * quad;
        if normalized {
            value -= 0.5
                * (dim as f64 * (2.0 * std::f64::consts::PI * variance).ln() + mass.log_det());
        }
        value
    };
    let combo = |x: &[f64], y: &[f64], sy: f64, sx: f64| -> Vec<f64> {
        x.iter().zip(y).map(|(a, b)| sx * a + sy * b).collect()
    };

    let m0 = start.momentum();
    let m1 = end.momentum();
    let m14 = &trace.m_quarter;
    let m34 = &trace.m_three_quarter;

    // forward: r = m_{1/4} − √a m_n,  r′ = m_{n+1} − √a m_{3/4}
    let forward = log_jacobian
        + log_gauss(&combo(m14, m0, -sqrt_a, 1.0))
        + log_gauss(&combo(m1, m34, -sqrt_a, 1.0));
    // backward from (θ_{n+1}, −m_{n+1}) to (θ_n, −m_n):
    // −m_{3/4} + √a m_{n+1}  and  −m_n + √a m_{1/4}
    let backward = log_jacobian
        + log_gauss(&combo(m34, m1, sqrt_a, -1.0))
        + log_gauss(&combo(m0, m14, sqrt_a, -1.0));

    OracleAcceptance {
        log_alpha: finite_or_neg_inf(log_boltzmann_ratio + backward - forward),
        degenerate: false,
    }
}

fn finite_or_neg_inf(x: f64) -> f64 {
    if x.is_nan() {
        f64::NEG_INFINITY
    } else {
        x
    }
}

/// Log acceptance of a symplectic Euler-Maruyama (SGHMC) step.
///
/// The backward density is zero unless the backward support condition holds,
/// which with `h > 0` requires `m_n = m_{n+1}`, a probability-zero event. In
/// that measure-zero case the Gaussian momentum densities are evaluated.
pub fn em_log_accept(
    start: &PhaseState,
    end: &PhaseState,
    target: &dyn Target,
    config: &SamplerConfig,
) -> f64 {
    if !check_backward_realizability_em(start, end, config) {
        return f64::NEG_INFINITY;
    }
    let h = config.step_size();
    let gamma = config.friction();
    let t = config.temperature();
    let mass = config.mass();
    let (m0, m1) = (start.momentum(), end.momentum());
    let g0 = target.gradient(start.theta());
    let g1 = target.gradient(end.theta());

    let log_boltzmann_ratio = -((target.potential(end.theta()) - target.potential(start.theta()))
        + (mass.quadratic(m1) - mass.quadratic(m0)))
        / t;

    // forward residual: m_{n+1} − ((1−hγ) m_n − h g_n)
    let forward: Vec<f64> = (0..m0.len())
        .map(|i| m1[i] - ((1.0 - h * gamma) * m0[i] - h * g0[i]))
        .collect();
    // backward residual: −m_n − ((1−hγ)(−m_{n+1}) − h g_{n+1})
    let backward: Vec<f64> = (0..m0.len())
        .map(|i| -m0[i] - ((1.0 - h * gamma) * (-m1[i]) - h * g1[i]))
        .collect();

    if gamma == 0.0 {
        let tiny = |r: &[f64]| r.iter().all(|x| x.abs() <= 1e-12);
        return if tiny(&forward) && tiny(&backward) {
            finite_or_neg_inf(log_boltzmann_ratio)
        } else {
            f64::NEG_INFINITY
        };
    }
    // N(· | ·, 2hγT M): log density is −K(r) / (2hγT) up to a shared constant
    let variance = 2.0 * h * gamma * t;
    let log_ratio = -(mass.quadratic(&backward) - mass.quadratic(&forward)) / variance;
    finite_or_neg_inf(log_boltzmann_ratio + log_ratio)
}

/// Accept `proposal` if `log u < log α`; otherwise keep `θ_old` with the
/// momentum negated, which keeps the Boltzmann distribution invariant for
/// partial-refresh kernels.
pub fn accept_reject(
    old: &PhaseState,
    proposal: PhaseState,
    mut record: AcceptanceRecord,
    u: f64,
) -> (PhaseState, AcceptanceRecord) {
    debug_assert!(u > 0.0 && u < 1.0);
    record.accepted = u.ln() < record.log_alpha;
    if record.accepted {
        (proposal, record)
    } else {
        (old.negate_momentum(), record)
    }
}

/// Gradient law of one half kick inside a multi-step round.
#[derive(Debug, Clone, PartialEq)]
pub enum GradientLaw {
    Exact,
    /// Minibatch estimate on this (sorted) index set.
    Batch(Vec<usize>),
}

/// Per-step parameters of a multi-step round.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledStep {
    pub step_size: f64,
    pub friction: f64,
    pub first_kick: GradientLaw,
    pub second_kick: GradientLaw,
}

impl ScheduledStep {
    pub fn exact(step_size: f64, friction: f64) -> Self {
        Self {
            step_size,
            friction,
            first_kick: GradientLaw::Exact,
            second_kick: GradientLaw::Exact,
        }
    }

    pub fn config(&self, base: &SamplerConfig) -> Result<SamplerConfig> {
        base.with_step(self.step_size, self.friction)
    }
}

/// Constant `(h, γ)` with exact gradients.
pub fn constant_schedule(steps: usize, step_size: f64, friction: f64) -> Vec<ScheduledStep> {
    vec![ScheduledStep::exact(step_size, friction); steps]
}

/// Cosine decay from `h_max` to `h_min` across the round (the usual
/// cyclical learning-rate shape). Strictly decreasing for `h_max > h_min`.
pub fn cosine_schedule(steps: usize, h_max: f64, h_min: f64, friction: f64) -> Vec<ScheduledStep> {
    (0..steps)
        .map(|i| {
            let phase = std::f64::consts::PI * i as f64 / steps as f64;
            let h = h_min + 0.5 * (h_max - h_min) * (1.0 + phase.cos());
            ScheduledStep::exact(h, friction)
        })
        .collect()
}

/// Half-kick batches `c₁..c_N` mirrored so that step `i` kicks with `c_i`
/// then `c_{N+1−i}`. The sequence of all `2N` kicks is a palindrome.
pub fn mirrored_batch_schedule(
    batches: Vec<Vec<usize>>,
    step_size: f64,
    friction: f64,
) -> Vec<ScheduledStep> {
    let n = batches.len();
    (0..n)
        .map(|i| ScheduledStep {
            step_size,
            friction,
            first_kick: GradientLaw::Batch(batches[i].clone()),
            second_kick: GradientLaw::Batch(batches[n - 1 - i].clone()),
        })
        .collect()
}

fn same(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// `true` iff the schedule reads the same backwards: `(h_i, γ_i) =
/// (h_{N+1−i}, γ_{N+1−i})` and the gradient law of every half kick matches
/// its mirror image (the first kick of step `i` against the second kick of
/// step `N+1−i`). O-step noise is standard normal at every step.
pub fn validate_schedule_symmetry(schedule: &[ScheduledStep]) -> bool {
    let n = schedule.len();
    (0..n).all(|i| {
        let a = &schedule[i];
        let b = &schedule[n - 1 - i];
        same(a.step_size, b.step_size) && same(a.friction, b.friction) && a.first_kick == b.second_kick
    })
}

/// Deferred acceptance over a round of `N` OBABO steps.
#[derive(Debug, Clone)]
pub struct MultiStepAccumulator {
    start_state: PhaseState,
    potential_start: Option<f64>,
    potential_end: Option<f64>,
    schedule: Vec<ScheduledStep>,
    symmetric: bool,
    steps_taken: usize,
    /// `Σ −(1/T)(K(m_{i,3/4}) − K(m_{i,1/4}))`
    log_alpha_sum: f64,
    kinetic_quarter_sum: f64,
    kinetic_three_quarter_sum: f64,
    pre_drawn_noises: Option<Vec<StepNoise>>,
    temperature: f64,
    base: SamplerConfig,
}

impl MultiStepAccumulator {
    /// Start a round at `state`. With `pre_draw` set, every O-step noise of
    /// the round is drawn up front from the stream, in step order.
    pub fn begin(
        state: PhaseState,
        schedule: Vec<ScheduledStep>,
        base: &SamplerConfig,
        pre_draw: Option<&mut NoiseStream>,
    ) -> Result<Self> {
        if schedule.is_empty() {
            return Err(invalid("multi-step round needs N >= 1 steps"));
        }
        check_dim(base.dim(), state.dim())?;
        for step in &schedule {
            step.config(base)?;
        }
        let dim = state.dim();
        let pre_drawn_noises = pre_draw.map(|stream| {
            (0..schedule.len())
                .map(|_| StepNoise {
                    first: stream.standard_normal(dim),
                    second: stream.standard_normal(dim),
                })
                .collect()
        });
        Ok(Self {
            symmetric: validate_schedule_symmetry(&schedule),
            start_state: state,
            potential_start: None,
            potential_end: None,
            schedule,
            steps_taken: 0,
            log_alpha_sum: 0.0,
            kinetic_quarter_sum: 0.0,
            kinetic_three_quarter_sum: 0.0,
            pre_drawn_noises,
            temperature: base.temperature(),
            base: base.clone(),
        })
    }

    /// Supply the exact potential at the start state if it is already known
    /// (e.g. from the previous round), saving one evaluation at finalize.
    pub fn with_start_potential(mut self, potential: f64) -> Self {
        self.potential_start = Some(potential);
        self
    }

    /// Supply the exact potential at the final state if the caller has
    /// already evaluated it.
    pub fn with_end_potential(mut self, potential: f64) -> Self {
        self.potential_end = Some(potential);
        self
    }

    pub fn start_state(&self) -> &PhaseState {
        &self.start_state
    }

    pub fn schedule(&self) -> &[ScheduledStep] {
        &self.schedule
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn steps_total(&self) -> usize {
        self.schedule.len()
    }

    pub fn log_alpha_sum(&self) -> f64 {
        self.log_alpha_sum
    }

    /// Configuration of the next step.
    pub fn next_config(&self) -> Result<SamplerConfig> {
        let step = self
            .schedule
            .get(self.steps_taken)
            .ok_or_else(|| invalid("multi-step round already complete"))?;
        step.config(&self.base)
    }

    pub fn next_step(&self) -> Option<&ScheduledStep> {
        self.schedule.get(self.steps_taken)
    }

    /// Noise for the next step: pre-drawn if available, else drawn now.
    pub fn next_noise(&self, stream: &mut NoiseStream) -> StepNoise {
        match &self.pre_drawn_noises {
            Some(noises) => noises[self.steps_taken].clone(),
            None => {
                let d = self.start_state.dim();
                StepNoise {
                    first: stream.standard_normal(d),
                    second: stream.standard_normal(d),
                }
            }
        }
    }

    /// Add the kinetic terms of one completed step.
    pub fn record(&mut self, trace: &StepTrace) -> Result<()> {
        if self.steps_taken >= self.schedule.len() {
            return Err(invalid("multi-step round already complete"));
        }
        let mass = self.base.mass();
        check_dim(mass.dim(), trace.m_quarter.len())?;
        check_dim(mass.dim(), trace.m_three_quarter.len())?;
        let k14 = mass.quadratic(&trace.m_quarter);
        let k34 = mass.quadratic(&trace.m_three_quarter);
        self.kinetic_quarter_sum += k14;
        self.kinetic_three_quarter_sum += k34;
        self.log_alpha_sum += -(k34 - k14) / self.temperature;
        self.steps_taken += 1;
        Ok(())
    }

    /// Evaluate the exact potential at both endpoints and return
    /// `−(1/T)(U(θ_end) − U(θ_start)) + Σ −(1/T)(K_{3/4} − K_{1/4})`, or `−∞`
    /// for an asymmetric schedule. `accepted` is left false for
    /// [`accept_reject`] to decide.
    pub fn finalize(self, target: &dyn Target, final_state: &PhaseState) -> Result<AcceptanceRecord> {
        if self.steps_taken != self.schedule.len() {
            return Err(invalid(format!(
                "multi-step round incomplete: {} of {} steps recorded",
                self.steps_taken,
                self.schedule.len()
            )));
        }
        check_dim(self.start_state.dim(), final_state.dim())?;
        let u0 = self
            .potential_start
            .unwrap_or_else(|| target.potential(self.start_state.theta()));
        if !self.symmetric {
            return Ok(AcceptanceRecord::rejected(RecordNote::AsymmetricSchedule, u0));
        }
        let u1 = self
            .potential_end
            .unwrap_or_else(|| target.potential(final_state.theta()));
        let mut record = AcceptanceRecord::from_energies(
            u0,
            u1,
            self.kinetic_quarter_sum,
            self.kinetic_three_quarter_sum,
            self.temperature,
        );
        // summed per step rather than recomputed from the totals
        let value = -(u1 - u0) / self.temperature + self.log_alpha_sum;
        record.log_alpha = if value.is_nan() || !u0.is_finite() || !u1.is_finite() {
            f64::NEG_INFINITY
        } else {
            value
        };
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::{step_euler_maruyama, step_obabo, Kicks};
    use crate::phase::MassMatrix;
    use crate::targets::Gaussian;

    fn state(t: &[f64], m: &[f64]) -> PhaseState {
        PhaseState::new(t.to_vec(), m.to_vec()).unwrap()
    }

    fn random_step(
        stream: &mut NoiseStream,
        target: &dyn Target,
        config: &SamplerConfig,
    ) -> (PhaseState, PhaseState, StepTrace) {
        let d = config.dim();
        let theta = stream.standard_normal(d);
        let m = stream.standard_normal(d);
        let s = state(&theta, &m);
        let noise = StepNoise {
            first: stream.standard_normal(d),
            second: stream.standard_normal(d),
        };
        let (out, trace) = step_obabo(&s, target, config, Kicks::EXACT, &noise).unwrap();
        (s, out, trace)
    }

    #[test]
    fn free_particle_accepts_with_probability_one() {
        let flat = Gaussian::new(vec![0.0, 0.0], vec![f64::MAX, f64::MAX]).unwrap();
        let c = SamplerConfig::standard(0.3, 0.7, 2).unwrap();
        let mut stream = NoiseStream::new(1, 0);
        let (s, out, trace) = random_step(&mut stream, &flat, &c);
        let u0 = flat.potential(s.theta());
        let u1 = flat.potential(out.theta());
        let la = ggmc_log_accept(&trace, u0, u1, &c);
        assert!(la.abs() < 1e-12, "{la}");
    }

    #[test]
    fn ggmc_matches_oracle_on_gaussian() {
        let g = Gaussian::standard(1);
        let c = SamplerConfig::standard(0.4, 1.3, 1).unwrap();
        let mut stream = NoiseStream::new(2, 0);
        for _ in 0..100 {
            let (s, out, trace) = random_step(&mut stream, &g, &c);
            let fast = ggmc_log_accept(&trace, g.potential(s.theta()), g.potential(out.theta()), &c);
            let oracle = oracle_log_accept(&s, &out, &trace, &g, &c);
            assert!(!oracle.degenerate);
            assert!((fast - oracle.log_alpha).abs() < 1e-10, "{fast} vs {oracle:?}");
        }
    }

    #[test]
    fn doubling_temperature_halves_log_alpha() {
        let g = Gaussian::standard(1);
        let c1 = SamplerConfig::new(0.5, 1.0, 1.0, MassMatrix::identity(1)).unwrap();
        let c2 = SamplerConfig::new(0.5, 1.0, 2.0, MassMatrix::identity(1)).unwrap();
        let mut stream = NoiseStream::new(3, 0);
        let (s, out, trace) = random_step(&mut stream, &g, &c1);
        let (u0, u1) = (g.potential(s.theta()), g.potential(out.theta()));
        let a1 = ggmc_log_accept(&trace, u0, u1, &c1);
        let a2 = ggmc_log_accept(&trace, u0, u1, &c2);
        assert!((a2 - a1 / 2.0).abs() < 1e-15);
        assert_ne!(a1, 0.0);
    }

    #[test]
    fn ggmc_ignores_friction() {
        let g = Gaussian::standard(2);
        let c = SamplerConfig::standard(0.5, 0.2, 2).unwrap();
        let mut stream = NoiseStream::new(4, 0);
        let (s, out, trace) = random_step(&mut stream, &g, &c);
        let (u0, u1) = (g.potential(s.theta()), g.potential(out.theta()));
        let base = ggmc_log_accept(&trace, u0, u1, &c);
        for gamma in [0.0, 0.01, 3.0, 100.0] {
            let other = c.with_step(0.5, gamma).unwrap();
            assert_eq!(ggmc_log_accept(&trace, u0, u1, &other), base);
        }
    }

    #[test]
    fn ggmc_non_finite_is_neg_infinity() {
        let c = SamplerConfig::standard(0.5, 0.2, 1).unwrap();
        let trace = StepTrace {
            m_quarter: vec![0.1],
            m_three_quarter: vec![0.2],
            ..StepTrace::default()
        };
        assert_eq!(ggmc_log_accept(&trace, 0.0, f64::NAN, &c), f64::NEG_INFINITY);
        assert_eq!(ggmc_log_accept(&trace, 0.0, f64::INFINITY, &c), f64::NEG_INFINITY);
        let bad = StepTrace {
            m_quarter: vec![f64::NAN],
            m_three_quarter: vec![0.2],
            ..StepTrace::default()
        };
        assert_eq!(ggmc_log_accept(&bad, 0.0, 0.0, &c), f64::NEG_INFINITY);
    }

    #[test]
    fn oracle_transition_ratio_vanishes_when_kinetics_cancel() {
        // m_{n+1} = m_n and m_{3/4} = m_{1/4}: every kinetic term cancels
        let flat = Gaussian::new(vec![0.0], vec![f64::MAX]).unwrap();
        let c = SamplerConfig::standard(0.2, 0.9, 1).unwrap();
        let s = state(&[0.0], &[0.4]);
        let trace = StepTrace {
            m_quarter: vec![1.1],
            m_three_quarter: vec![1.1],
            ..StepTrace::default()
        };
        let end = state(&[0.2 * 1.1], &[0.4]);
        let o = oracle_log_accept(&s, &end, &trace, &flat, &c);
        assert!(o.log_alpha.abs() < 1e-12);
    }

    #[test]
    fn oracle_normalization_constants_cancel() {
        let g = Gaussian::new(vec![0.2, -0.1, 0.0], vec![1.0, 2.0, 0.5]).unwrap();
        let c = SamplerConfig::new(0.3, 2.0, 1.4, MassMatrix::new(vec![0.5, 1.0, 3.0]).unwrap()).unwrap();
        let mut stream = NoiseStream::new(5, 0);
        for _ in 0..50 {
            let (s, out, trace) = random_step(&mut stream, &g, &c);
            let n = oracle_log_accept_with(&s, &out, &trace, &g, &c, true);
            let u = oracle_log_accept_with(&s, &out, &trace, &g, &c, false);
            assert!((n.log_alpha - u.log_alpha).abs() < 1e-10);
        }
    }

    #[test]
    fn oracle_degenerate_friction_uses_boltzmann_ratio() {
        let g = Gaussian::standard(1);
        let c = SamplerConfig::standard(0.4, 0.0, 1).unwrap();
        let mut stream = NoiseStream::new(6, 0);
        let (s, out, trace) = random_step(&mut stream, &g, &c);
        let o = oracle_log_accept(&s, &out, &trace, &g, &c);
        assert!(o.degenerate);
        let fast = ggmc_log_accept(&trace, g.potential(s.theta()), g.potential(out.theta()), &c);
        assert!((o.log_alpha - fast).abs() < 1e-12);
    }

    #[test]
    fn em_acceptance_is_zero() {
        let g = Gaussian::standard(1);
        let mut stream = NoiseStream::new(7, 0);
        for h in [0.1, 1e-3, 1e-6] {
            let c = SamplerConfig::standard(h, 0.5, 1).unwrap();
            let mut s = state(&[0.5], &[0.0]);
            for _ in 0..10_000 {
                let next = step_euler_maruyama(&s, &g.gradient(s.theta()), &c, &stream.standard_normal(1)).unwrap();
                assert_eq!(em_log_accept(&s, &next, &g, &c), f64::NEG_INFINITY);
                s = next;
            }
        }
    }

    #[test]
    fn em_acceptance_finite_on_measure_zero_event() {
        let g = Gaussian::standard(1);
        let c = SamplerConfig::standard(0.1, 0.5, 1).unwrap();
        let s = state(&[0.3], &[0.8]);
        let end = state(&[0.3 + 0.1 * 0.8], &[0.8]);
        let la = em_log_accept(&s, &end, &g, &c);
        assert!(la.is_finite());

        // independent evaluation of the Gaussian momentum densities
        let (h, gamma) = (0.1, 0.5);
        let var = 2.0 * h * gamma;
        let fwd = 0.8 - ((1.0 - h * gamma) * 0.8 - h * 0.3);
        let t1 = 0.3 + 0.1 * 0.8;
        let bwd = -0.8 - ((1.0 - h * gamma) * -0.8 - h * t1);
        let expected = -(t1 * t1 / 2.0 - 0.3 * 0.3 / 2.0) - (bwd * bwd - fwd * fwd) / (2.0 * var);
        assert!((la - expected).abs() < 1e-12, "{la} vs {expected}");
    }

    #[test]
    fn accept_reject_examples() {
        let old = state(&[1.0], &[2.0]);
        let new = state(&[3.0], &[4.0]);
        let mut stream = NoiseStream::new(8, 0);
        let rec = |la: f64| AcceptanceRecord {
            log_alpha: la,
            ..AcceptanceRecord::rejected(RecordNote::NonFinite, 0.0)
        };
        for _ in 0..1000 {
            let u = stream.uniform_open();
            let (s, r) = accept_reject(&old, new.clone(), rec(0.0), u);
            assert!(r.accepted);
            assert_eq!(s, new);
            let (s, r) = accept_reject(&old, new.clone(), rec(f64::NEG_INFINITY), u);
            assert!(!r.accepted);
            assert_eq!(s.theta(), old.theta());
            assert_eq!(s.momentum(), &[-2.0]);
            let (_, r) = accept_reject(&old, new.clone(), rec(f64::NAN), u);
            assert!(!r.accepted);
        }
        let n = 100_000;
        let accepted = (0..n)
            .filter(|_| accept_reject(&old, new.clone(), rec(0.3f64.ln()), stream.uniform_open()).1.accepted)
            .count();
        let freq = accepted as f64 / n as f64;
        assert!((freq - 0.3).abs() < 0.005, "{freq}");
    }

    #[test]
    fn record_recomputes_log_alpha() {
        let r = AcceptanceRecord::from_energies(1.0, 1.5, 0.7, 0.2, 2.0);
        assert!((r.log_alpha - (-(0.5 - 0.5) / 2.0)).abs() < 1e-15);
        assert!((r.recompute_log_alpha(2.0) - r.log_alpha).abs() < 1e-14);
        assert_eq!(r.acceptance_probability(), 1.0);
        let r = AcceptanceRecord::from_energies(0.0, f64::NAN, 0.0, 0.0, 1.0);
        assert_eq!(r.log_alpha, f64::NEG_INFINITY);
        assert_eq!(r.note, Some(RecordNote::NonFinite));
    }

    #[test]
    fn schedule_symmetry_examples() {
        assert!(validate_schedule_symmetry(&constant_schedule(7, 0.1, 1.0)));
        let pal: Vec<_> = [0.1, 0.2, 0.2, 0.1].iter().map(|&h| ScheduledStep::exact(h, 1.0)).collect();
        assert!(validate_schedule_symmetry(&pal));
        assert!(!validate_schedule_symmetry(&cosine_schedule(10, 0.2, 0.01, 1.0)));
        let mut gam = constant_schedule(4, 0.1, 1.0);
        gam[0].friction = 2.0;
        assert!(!validate_schedule_symmetry(&gam));
        assert!(validate_schedule_symmetry(&[]));
    }

    #[test]
    fn batch_schedule_symmetry() {
        let batches = vec![vec![0, 1], vec![2, 3], vec![4, 5]];
        let mirrored = mirrored_batch_schedule(batches.clone(), 0.1, 1.0);
        assert!(validate_schedule_symmetry(&mirrored));
        // same batch for both kicks, not palindromic across steps
        let naive: Vec<_> = batches
            .iter()
            .map(|b| ScheduledStep {
                step_size: 0.1,
                friction: 1.0,
                first_kick: GradientLaw::Batch(b.clone()),
                second_kick: GradientLaw::Batch(b.clone()),
            })
            .collect();
        assert!(!validate_schedule_symmetry(&naive));
    }

    #[test]
    fn multi_step_single_step_equals_ggmc() {
        let g = Gaussian::new(vec![0.3], vec![2.0]).unwrap();
        let c = SamplerConfig::standard(0.5, 0.8, 1).unwrap();
        let mut stream = NoiseStream::new(9, 0);
        let (s, out, trace) = random_step(&mut stream, &g, &c);
        let mut acc = MultiStepAccumulator::begin(s.clone(), constant_schedule(1, 0.5, 0.8), &c, None).unwrap();
        acc.record(&trace).unwrap();
        let rec = acc.finalize(&g, &out).unwrap();
        let single = ggmc_log_accept(&trace, g.potential(s.theta()), g.potential(out.theta()), &c);
        assert!((rec.log_alpha - single).abs() < 1e-12);
    }

    #[test]
    fn multi_step_sums_per_step_values() {
        let g = Gaussian::standard(1);
        let c = SamplerConfig::standard(0.4, 1.0, 1).unwrap();
        let mut stream = NoiseStream::new(10, 0);
        let start = state(&[0.7], &[-0.2]);
        let mut acc = MultiStepAccumulator::begin(start.clone(), constant_schedule(5, 0.4, 1.0), &c, None).unwrap();
        let mut s = start;
        let mut per_step = 0.0;
        while acc.steps_taken() < acc.steps_total() {
            let noise = acc.next_noise(&mut stream);
            let cfg = acc.next_config().unwrap();
            let (out, trace) = step_obabo(&s, &g, &cfg, Kicks::EXACT, &noise).unwrap();
            per_step += ggmc_log_accept(&trace, g.potential(s.theta()), g.potential(out.theta()), &cfg);
            acc.record(&trace).unwrap();
            s = out;
        }
        let rec = acc.finalize(&g, &s).unwrap();
        assert!((rec.log_alpha - per_step).abs() < 1e-12);
        assert!((rec.recompute_log_alpha(1.0) - rec.log_alpha).abs() < 1e-12);
    }

    #[test]
    fn multi_step_asymmetric_is_zero() {
        let g = Gaussian::standard(1);
        let c = SamplerConfig::standard(0.2, 1.0, 1).unwrap();
        let sched = cosine_schedule(4, 0.2, 0.05, 1.0);
        let start = state(&[0.1], &[0.1]);
        let mut acc = MultiStepAccumulator::begin(start.clone(), sched, &c, None).unwrap();
        assert!(!acc.is_symmetric());
        let mut stream = NoiseStream::new(11, 0);
        let mut s = start;
        for _ in 0..4 {
            let noise = acc.next_noise(&mut stream);
            let cfg = acc.next_config().unwrap();
            let (out, trace) = step_obabo(&s, &g, &cfg, Kicks::EXACT, &noise).unwrap();
            acc.record(&trace).unwrap();
            s = out;
        }
        let rec = acc.finalize(&g, &s).unwrap();
        assert_eq!(rec.log_alpha, f64::NEG_INFINITY);
        assert_eq!(rec.note, Some(RecordNote::AsymmetricSchedule));
        assert_eq!(rec.acceptance_probability(), 0.0);
    }

    #[test]
    fn multi_step_guards() {
        let g = Gaussian::standard(1);
        let c = SamplerConfig::standard(0.2, 1.0, 1).unwrap();
        let s = state(&[0.0], &[0.0]);
        assert!(MultiStepAccumulator::begin(s.clone(), vec![], &c, None).is_err());
        assert!(MultiStepAccumulator::begin(s.clone(), constant_schedule(2, -1.0, 1.0), &c, None).is_err());
        let acc = MultiStepAccumulator::begin(s.clone(), constant_schedule(2, 0.2, 1.0), &c, None).unwrap();
        assert!(acc.finalize(&g, &s).is_err());
    }

    #[test]
    fn pre_drawn_noise_matches_lazy_draws() {
        let c = SamplerConfig::standard(0.2, 1.0, 3).unwrap();
        let s = state(&[0.0; 3], &[0.0; 3]);
        let mut a = NoiseStream::new(12, 0);
        let mut b = NoiseStream::new(12, 0);
        let mut pre = MultiStepAccumulator::begin(s.clone(), constant_schedule(3, 0.2, 1.0), &c, Some(&mut a)).unwrap();
        let mut lazy = MultiStepAccumulator::begin(s, constant_schedule(3, 0.2, 1.0), &c, None).unwrap();
        let trace = StepTrace {
            m_quarter: vec![0.0; 3],
            m_three_quarter: vec![0.0; 3],
            ..StepTrace::default()
        };
        for _ in 0..3 {
            assert_eq!(pre.next_noise(&mut a), lazy.next_noise(&mut b));
            pre.record(&trace).unwrap();
            lazy.record(&trace).unwrap();
        }
        assert_eq!(a.word_position(), b.word_position());
    }
}
