//! Chain driver.
//!
//! A [`Chain`] advances in units: one integrator step when uncorrected or
//! corrected per step, or one round of `N` steps followed by a single
//! deferred accept/reject when corrected over multiple steps. Leapfrog runs
//! as HMC, with the momentum fully resampled at the start of every unit.
//!
//! Draw order within a unit is fixed (momentum resample, batches, step
//! noises in step order, then the uniform for the MH test), so a chain is a
//! deterministic function of `(seed, chain index)`.
//!
//! [`MalaChain`] is an exact-gradient MALA sampler written directly from the
//! Gaussian proposal density, used as an independent reference.

use crate::error::{check_dim, invalid, Error, Result};
use crate::integrators::{
    step_euler_maruyama, step_leapfrog_from, step_obabo_from, sgld_update, GradientSource,
    IntegratorKind, StepError, StepNoise, StepTrace,
};
use crate::mh::{
    accept_reject, constant_schedule, mirrored_batch_schedule, AcceptanceRecord,
    GradientLaw, MultiStepAccumulator, RecordNote, ScheduledStep,
};
use crate::phase::{PhaseState, SamplerConfig};
use crate::rng::NoiseStream;
use crate::targets::{MinibatchSchedule, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correction {
    None,
    PerStep,
    /// Deferred acceptance every `N` steps.
    MultiStep(usize),
}

impl Correction {
    pub fn steps_per_unit(self) -> usize {
        match self {
            Correction::MultiStep(n) => n,
            _ => 1,
        }
    }

    pub fn label(self) -> String {
        match self {
            Correction::None => "none".into(),
            Correction::PerStep => "per-step".into(),
            Correction::MultiStep(n) => format!("multi-step({n})"),
        }
    }
}

/// Momentum handling between multi-step rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MomentumRefresh {
    /// Only the O-steps refresh the momentum.
    #[default]
    Partial,
    /// Resample `m ~ N(0, TM)` at the start of every round.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    #[default]
    Exact,
    /// Epoch-wise minibatches of this size. A multi-step round mirrors its
    /// batches so the kick sequence is a palindrome.
    Minibatch { batch_size: usize },
}

#[derive(Debug, Clone)]
pub struct ChainSettings {
    pub integrator: IntegratorKind,
    pub correction: Correction,
    pub config: SamplerConfig,
    pub gradient: GradientMode,
    pub refresh: MomentumRefresh,
    pub seed: u64,
    /// Selects the noise stream; chains with different indices are
    /// independent.
    pub chain: u64,
}

impl ChainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.correction != Correction::None && !self.integrator.is_correctable() {
            return Err(Error::InvalidSpec(format!(
                "{} cannot be Metropolis-corrected: its backward transition is unrealizable, so \
                 the acceptance probability is zero almost surely (see the theorem1-demo subcommand)",
                self.integrator
            )));
        }
        if self.correction == Correction::MultiStep(0) {
            return Err(Error::InvalidSpec("multi-step correction needs N >= 1".into()));
        }
        Ok(())
    }
}

/// State of the chain after one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Integrator steps taken so far.
    pub step: usize,
    pub state: PhaseState,
    /// Exact potential at the new position.
    pub potential: f64,
    pub kinetic: f64,
    /// `NaN` for uncorrected chains.
    pub log_alpha: f64,
    pub accepted: bool,
    pub note: Option<RecordNote>,
}

struct Cache {
    theta: Vec<f64>,
    potential: Option<f64>,
    gradient: Option<Vec<f64>>,
}

pub struct Chain<'a> {
    target: &'a dyn Target,
    settings: ChainSettings,
    state: PhaseState,
    stream: NoiseStream,
    batches: Option<MinibatchSchedule>,
    cache: Option<Cache>,
    steps: usize,
}

impl<'a> Chain<'a> {
    /// Start at `theta` with momentum drawn from `N(0, TM)` (zero for SGLD).
    pub fn new(target: &'a dyn Target, settings: ChainSettings, theta: Vec<f64>) -> Result<Self> {
        settings.validate()?;
        check_dim(target.dim(), theta.len())?;
        check_dim(target.dim(), settings.config.dim())?;
        let mut stream = NoiseStream::new(settings.seed, settings.chain);
        let batches = match settings.gradient {
            GradientMode::Exact => None,
            GradientMode::Minibatch { batch_size } => Some(MinibatchSchedule::new(
                target.data_size(),
                batch_size,
                NoiseStream::derive_seed(settings.seed, settings.chain, 1),
            )?),
        };
        let momentum = if settings.integrator == IntegratorKind::Sgld {
            vec![0.0; theta.len()]
        } else {
            stationary_momentum(&mut stream, &settings.config)
        };
        let state = PhaseState::new(theta, momentum)?;
        Ok(Self {
            target,
            settings,
            state,
            stream,
            batches,
            cache: None,
            steps: 0,
        })
    }

    pub fn state(&self) -> &PhaseState {
        &self.state
    }

    pub fn settings(&self) -> &ChainSettings {
        &self.settings
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Advance by one unit. Uncorrected chains fail with [`Error::BlowUp`] on
    /// a non-finite step; corrected chains reject such proposals.
    pub fn advance(&mut self) -> Result<Transition> {
        match (self.settings.integrator, self.settings.correction) {
            (IntegratorKind::EulerMaruyama, _) => self.advance_euler_maruyama(),
            (IntegratorKind::Sgld, _) => self.advance_sgld(),
            (_, Correction::None) => self.advance_uncorrected(),
            (_, Correction::PerStep) => self.advance_round(1),
            (_, Correction::MultiStep(n)) => self.advance_round(n),
        }
    }

    fn blow_up(&self, e: StepError) -> Error {
        Error::BlowUp {
            chain: self.settings.chain as usize,
            step: self.steps + 1,
            reason: format!("non-finite value at stage {}", e.stage),
        }
    }

    fn potential_at(&mut self, theta: &[f64]) -> f64 {
        if let Some(c) = &mut self.cache {
            if c.theta == theta {
                return *c.potential.get_or_insert_with(|| self.target.potential(theta));
            }
        }
        let potential = self.target.potential(theta);
        self.cache = Some(Cache {
            theta: theta.to_vec(),
            potential: Some(potential),
            gradient: None,
        });
        potential
    }

    fn exact_gradient_at(&mut self, theta: &[f64]) -> Vec<f64> {
        if let Some(Cache {
            theta: t,
            gradient: Some(g),
            ..
        }) = &self.cache
        {
            if t == theta {
                return g.clone();
            }
        }
        let g = self.target.gradient(theta);
        match &mut self.cache {
            Some(c) if c.theta == theta => c.gradient = Some(g.clone()),
            _ => {
                self.cache = Some(Cache {
                    theta: theta.to_vec(),
                    potential: None,
                    gradient: Some(g.clone()),
                })
            }
        }
        g
    }

    fn finish(&mut self, log_alpha: f64, accepted: bool, note: Option<RecordNote>) -> Transition {
        let theta = self.state.theta().to_vec();
        let potential = self.potential_at(&theta);
        Transition {
            step: self.steps,
            potential,
            kinetic: self.settings.config.mass().quadratic(self.state.momentum()),
            state: self.state.clone(),
            log_alpha,
            accepted,
            note,
        }
    }

    fn next_batch(&mut self) -> Option<Vec<usize>> {
        self.batches.as_mut().map(|b| b.next_batch())
    }

    fn step_noise(&mut self) -> StepNoise {
        let d = self.state.dim();
        StepNoise {
            first: self.stream.standard_normal(d),
            second: self.stream.standard_normal(d),
        }
    }

    fn advance_euler_maruyama(&mut self) -> Result<Transition> {
        let batch = self.next_batch();
        let gradient = match &batch {
            Some(b) => self.target.minibatch_gradient(self.state.theta(), b),
            None => self.target.gradient(self.state.theta()),
        };
        let noise = self.stream.standard_normal(self.state.dim());
        let next = step_euler_maruyama(&self.state, &gradient, &self.settings.config, &noise)
            .map_err(|e| self.blow_up(e))?;
        self.state = next;
        self.steps += 1;
        Ok(self.finish(f64::NAN, true, None))
    }

    fn advance_sgld(&mut self) -> Result<Transition> {
        let batch = self.next_batch();
        let source = match &batch {
            Some(b) => GradientSource::Minibatch(b),
            None => GradientSource::Exact,
        };
        let gradient = source.evaluate(self.target, self.state.theta());
        let noise = self.stream.standard_normal(self.state.dim());
        let theta = sgld_update(self.state.theta(), &gradient, &self.settings.config, &noise)
            .map_err(|e| self.blow_up(e))?;
        self.state = PhaseState::at_rest(theta)?;
        self.steps += 1;
        Ok(self.finish(f64::NAN, true, None))
    }

    fn integrate(
        &mut self,
        state: &PhaseState,
        config: &SamplerConfig,
        step: &ScheduledStep,
        noise: &StepNoise,
    ) -> std::result::Result<(PhaseState, StepTrace), StepError> {
        let gradient_start = match &step.first_kick {
            GradientLaw::Exact => self.exact_gradient_at(state.theta()),
            GradientLaw::Batch(b) => self.target.minibatch_gradient(state.theta(), b),
        };
        let second = match &step.second_kick {
            GradientLaw::Exact => GradientSource::Exact,
            GradientLaw::Batch(b) => GradientSource::Minibatch(b),
        };
        let result = if self.settings.integrator == IntegratorKind::Leapfrog {
            step_leapfrog_from(state, self.target, config, gradient_start, second)
        } else {
            step_obabo_from(state, self.target, config, gradient_start, second, noise)
        };
        if let (Ok((next, trace)), GradientLaw::Exact) = (&result, &step.second_kick) {
            // end-of-step exact gradient is the next step's starting gradient
            self.cache = Some(Cache {
                theta: next.theta().to_vec(),
                potential: None,
                gradient: Some(trace.gradient_end.clone()),
            });
        }
        result
    }

    /// Schedule for one unit of `n` steps.
    fn unit_schedule(&mut self, n: usize) -> Vec<ScheduledStep> {
        let (h, gamma) = (self.settings.config.step_size(), self.settings.config.friction());
        match self.batches.as_mut() {
            None => constant_schedule(n, h, gamma),
            Some(b) => {
                let batches = (0..n).map(|_| b.next_batch()).collect();
                mirrored_batch_schedule(batches, h, gamma)
            }
        }
    }

    fn advance_uncorrected(&mut self) -> Result<Transition> {
        if self.settings.integrator == IntegratorKind::Leapfrog {
            let m = stationary_momentum(&mut self.stream, &self.settings.config);
            self.state = PhaseState::new(self.state.theta().to_vec(), m)?;
        }
        let step = match self.next_batch() {
            Some(b) => ScheduledStep {
                step_size: self.settings.config.step_size(),
                friction: self.settings.config.friction(),
                first_kick: GradientLaw::Batch(b.clone()),
                second_kick: GradientLaw::Batch(b),
            },
            None => ScheduledStep::exact(self.settings.config.step_size(), self.settings.config.friction()),
        };
        let noise = self.step_noise();
        let config = self.settings.config.clone();
        let start = self.state.clone();
        let (next, _) = self
            .integrate(&start, &config, &step, &noise)
            .map_err(|e| self.blow_up(e))?;
        self.state = next;
        self.steps += 1;
        Ok(self.finish(f64::NAN, true, None))
    }

    fn advance_round(&mut self, n: usize) -> Result<Transition> {
        let resample = self.settings.integrator == IntegratorKind::Leapfrog
            || (self.settings.refresh == MomentumRefresh::Full
                && matches!(self.settings.correction, Correction::MultiStep(_)));
        if resample {
            let m = stationary_momentum(&mut self.stream, &self.settings.config);
            self.state = PhaseState::new(self.state.theta().to_vec(), m)?;
        }
        let schedule = if n == 1 {
            // a single step kicks twice with the same batch, which is its own mirror
            match self.next_batch() {
                Some(b) => vec![ScheduledStep {
                    step_size: self.settings.config.step_size(),
                    friction: self.settings.config.friction(),
                    first_kick: GradientLaw::Batch(b.clone()),
                    second_kick: GradientLaw::Batch(b),
                }],
                None => self.unit_schedule(1),
            }
        } else {
            self.unit_schedule(n)
        };

        let start = self.state.clone();
        let theta0 = start.theta().to_vec();
        let u0 = self.potential_at(&theta0);
        let mut acc = MultiStepAccumulator::begin(start.clone(), schedule, &self.settings.config, None)?
            .with_start_potential(u0);

        let mut current = start.clone();
        let mut failure = false;
        while acc.steps_taken() < acc.steps_total() {
            let noise = acc.next_noise(&mut self.stream);
            let config = acc.next_config()?;
            let step = acc.next_step().cloned().expect("step within schedule");
            match self.integrate(&current, &config, &step, &noise) {
                Ok((next, trace)) => {
                    acc.record(&trace)?;
                    current = next;
                }
                Err(_) => {
                    // keep the draw count independent of where the failure happened
                    for _ in acc.steps_taken() + 1..acc.steps_total() {
                        self.step_noise();
                    }
                    failure = true;
                    break;
                }
            }
        }
        self.steps += n;

        let record = if failure {
            AcceptanceRecord::rejected(RecordNote::NonFinite, u0)
        } else {
            let theta1 = current.theta().to_vec();
            let u1 = self.potential_at(&theta1);
            acc.with_start_potential(u0)
                .with_end_potential(u1)
                .finalize(self.target, &current)?
        };

        let u = self.stream.uniform_open();
        let (next, record) = accept_reject(&start, current, record, u);
        self.state = next;
        Ok(self.finish(record.log_alpha, record.accepted, record.note))
    }
}

/// `m ~ N(0, TM)`.
pub fn stationary_momentum(stream: &mut NoiseStream, config: &SamplerConfig) -> Vec<f64> {
    let e = stream.standard_normal(config.dim());
    let scale = config.temperature().sqrt();
    config.mass().apply_sqrt(&e).iter().map(|x| scale * x).collect()
}

/// Exact-gradient MALA with proposal
/// `θ' ~ N(θ − (h²/2) M⁻¹∇U(θ), h² T M⁻¹)` targeting `exp(−U/T)`.
pub struct MalaChain<'a> {
    target: &'a dyn Target,
    step_size: f64,
    temperature: f64,
    inv_mass: Vec<f64>,
    stream: NoiseStream,
    theta: Vec<f64>,
    potential: f64,
    gradient: Vec<f64>,
    accepted: usize,
    steps: usize,
}

impl<'a> MalaChain<'a> {
    pub fn new(
        target: &'a dyn Target,
        config: &SamplerConfig,
        seed: u64,
        stream: u64,
        theta: Vec<f64>,
    ) -> Result<Self> {
        check_dim(target.dim(), theta.len())?;
        check_dim(target.dim(), config.dim())?;
        let potential = target.potential(&theta);
        if !potential.is_finite() {
            return Err(invalid("MALA start has non-finite potential"));
        }
        Ok(Self {
            target,
            step_size: config.step_size(),
            temperature: config.temperature(),
            inv_mass: config.mass().diag().iter().map(|m| 1.0 / m).collect(),
            stream: NoiseStream::new(seed, stream),
            gradient: target.gradient(&theta),
            theta,
            potential,
            accepted: 0,
            steps: 0,
        })
    }

    fn drift_mean(&self, theta: &[f64], gradient: &[f64]) -> Vec<f64> {
        let h2 = self.step_size * self.step_size;
        theta
            .iter()
            .zip(gradient)
            .zip(&self.inv_mass)
            .map(|((t, g), w)| t - 0.5 * h2 * w * g)
            .collect()
    }

    /// `log q(to | from)` up to a constant shared by both directions.
    fn log_proposal(&self, to: &[f64], mean: &[f64]) -> f64 {
        let var = self.step_size * self.step_size * self.temperature;
        -to.iter()
            .zip(mean)
            .zip(&self.inv_mass)
            .map(|((x, mu), w)| (x - mu) * (x - mu) / w)
            .sum::<f64>()
            / (2.0 * var)
    }

    /// One proposal and accept/reject; returns whether it was accepted.
    pub fn step(&mut self) -> bool {
        let e = self.stream.standard_normal(self.theta.len());
        let sd = self.step_size * self.temperature.sqrt();
        let forward_mean = self.drift_mean(&self.theta, &self.gradient);
        let proposal: Vec<f64> = forward_mean
            .iter()
            .zip(&e)
            .zip(&self.inv_mass)
            .map(|((mu, e), w)| mu + sd * w.sqrt() * e)
            .collect();
        let u_new = self.target.potential(&proposal);
        let g_new = self.target.gradient(&proposal);
        let backward_mean = self.drift_mean(&proposal, &g_new);
        let log_alpha = -(u_new - self.potential) / self.temperature
            + self.log_proposal(&self.theta, &backward_mean)
            - self.log_proposal(&proposal, &forward_mean);
        let u = self.stream.uniform_open();
        self.steps += 1;
        let accept = u.ln() < log_alpha && u_new.is_finite() && g_new.iter().all(|g| g.is_finite());
        if accept {
            self.theta = proposal;
            self.potential = u_new;
            self.gradient = g_new;
            self.accepted += 1;
        }
        accept
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }
}
