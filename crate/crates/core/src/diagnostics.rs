//! Chain statistics: moments, effective sample size, acceptance rate and
//! energy averages.
//!
//! ESS uses Geyer's initial positive sequence: autocorrelations come from an
//! FFT of the zero-padded centred chain, are summed in adjacent pairs
//! `ρ_{2k} + ρ_{2k+1}`, and the sum stops at the first non-positive pair.
//! The estimate is clamped to `[1, n]`; a zero-variance chain reports 1.
//! ESS depends on sample order, the moments do not.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{check_dim, invalid, Error, Result};
use crate::phase::MassMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSummary {
    pub n_samples: usize,
    pub mean: Vec<f64>,
    /// Unbiased (`n − 1`) sample variance.
    pub variance: Vec<f64>,
    pub ess: Vec<f64>,
    /// `None` if the chain made no accept/reject decisions.
    pub acceptance_rate: Option<f64>,
    pub mean_potential: Option<f64>,
    pub mean_kinetic: Option<f64>,
}

impl ChainSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `√(var / ESS)` per coordinate.
    pub fn mean_standard_error(&self) -> Vec<f64> {
        self.variance
            .iter()
            .zip(&self.ess)
            .map(|(v, e)| (v / e).sqrt())
            .collect()
    }

    pub fn with_energies(mut self, potentials: &[f64], kinetics: &[f64]) -> Self {
        self.mean_potential = mean_of(potentials);
        self.mean_kinetic = mean_of(kinetics);
        self
    }
}

fn mean_of(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Summary of `samples` (one row per retained sample) and the
/// accept/reject decisions of the chain.
pub fn summarize(samples: &[Vec<f64>], accepted: &[bool]) -> Result<ChainSummary> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let dim = samples[0].len();
    for row in samples {
        check_dim(dim, row.len())?;
    }
    let mut mean = Vec::with_capacity(dim);
    let mut variance = Vec::with_capacity(dim);
    let mut ess = Vec::with_capacity(dim);
    let mut column = vec![0.0; n];
    for j in 0..dim {
        for (c, row) in column.iter_mut().zip(samples) {
            *c = row[j];
        }
        let (m, v) = mean_variance(&column);
        mean.push(m);
        variance.push(v);
        ess.push(effective_sample_size(&column)?);
    }
    let acceptance_rate = if accepted.is_empty() {
        None
    } else {
        Some(accepted.iter().filter(|&&a| a).count() as f64 / accepted.len() as f64)
    };
    Ok(ChainSummary {
        n_samples: n,
        mean,
        variance,
        ess,
        acceptance_rate,
        mean_potential: None,
        mean_kinetic: None,
    })
}

/// Mean and unbiased variance.
pub fn mean_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, if xs.len() > 1 { ss / (n - 1.0) } else { 0.0 })
}

/// Normalised autocorrelation `ρ_0..ρ_{n−1}` of a series; all zero if the
/// series is constant.
pub fn autocorrelation(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let len = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = xs
        .iter()
        .map(|x| Complex::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let c0 = buf[0].re;
    if c0 <= 0.0 || !c0.is_finite() {
        return vec![0.0; n];
    }
    buf[..n].iter().map(|z| z.re / c0).collect()
}

/// Geyer initial-positive-sequence ESS, clamped to `[1, n]`.
pub fn effective_sample_size(xs: &[f64]) -> Result<f64> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("chain sample"));
    }
    let rho = autocorrelation(xs);
    if rho[0] == 0.0 {
        return Ok(1.0);
    }
    let mut tau = -1.0;
    let mut k = 0;
    while k + 1 < n {
        let pair = rho[k] + rho[k + 1];
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 2;
    }
    if tau <= 0.0 {
        return Ok(n as f64);
    }
    Ok((n as f64 / tau).clamp(1.0, n as f64))
}

/// Standard error of the sample variance, from the ESS of the squared
/// deviations.
pub fn variance_standard_error(xs: &[f64]) -> Result<f64> {
    let (mean, _) = mean_variance(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let (_, v) = mean_variance(&sq);
    Ok((v / effective_sample_size(&sq)?).sqrt())
}

/// `2 · mean(K) / d`, which estimates `T` at stationarity.
pub fn kinetic_temperature(momenta: &[Vec<f64>], mass: &MassMatrix) -> Result<f64> {
    Ok(kinetic_temperature_series(momenta, mass)?.iter().sum::<f64>() / momenta.len() as f64)
}

/// [`kinetic_temperature`] together with its ESS-based standard error.
pub fn kinetic_temperature_with_error(momenta: &[Vec<f64>], mass: &MassMatrix) -> Result<(f64, f64)> {
    let series = kinetic_temperature_series(momenta, mass)?;
    let (mean, var) = mean_variance(&series);
    let ess = effective_sample_size(&series)?;
    Ok((mean, (var / ess).sqrt()))
}

fn kinetic_temperature_series(momenta: &[Vec<f64>], mass: &MassMatrix) -> Result<Vec<f64>> {
    if momenta.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: momenta.len(),
        });
    }
    let d = mass.dim();
    if d == 0 {
        return Err(invalid("mass matrix has dimension 0"));
    }
    momenta
        .iter()
        .map(|m| {
            check_dim(d, m.len())?;
            Ok(2.0 * mass.quadratic(m) / d as f64)
        })
        .collect()
}
