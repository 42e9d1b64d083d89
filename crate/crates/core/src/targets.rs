//! Target distributions: potential `U(θ) = −log ρ̃(θ)`, its exact gradient, and
//! an unbiased minibatch gradient estimate.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, invalid, Result};

/// A differentiable potential energy.
///
/// `minibatch_gradient` must be unbiased for `gradient` under uniformly drawn
/// batches and must equal it when the batch is the full index set
/// `0..data_size()`.
pub trait Target: Send + Sync {
    fn dim(&self) -> usize;

    /// Number of data points; 1 for analytic targets.
    fn data_size(&self) -> usize {
        1
    }

    fn potential(&self, theta: &[f64]) -> f64;

    fn gradient(&self, theta: &[f64]) -> Vec<f64>;

    fn minibatch_gradient(&self, theta: &[f64], _batch: &[usize]) -> Vec<f64> {
        self.gradient(theta)
    }
}

/// Axis-aligned Gaussian, `U(θ) = Σ (θᵢ − μᵢ)² / (2σᵢ²)`.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: Vec<f64>,
    variances: Vec<f64>,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(invalid("gaussian target needs dimension >= 1"));
        }
        check_dim(mean.len(), variances.len())?;
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid("gaussian variances must be finite and > 0"));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(invalid("gaussian mean must be finite"));
        }
        Ok(Self { mean, variances })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            variances: vec![1.0; dim],
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }
}

pub fn make_gaussian(mean: Vec<f64>, variances: Vec<f64>) -> Result<Gaussian> {
    Gaussian::new(mean, variances)
}

impl Target for Gaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn potential(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(&self.mean)
            .zip(&self.variances)
            .map(|((t, m), v)| {
                let d = t - m;
                d * d / (2.0 * v)
            })
            .sum()
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.mean)
            .zip(&self.variances)
            .map(|((t, m), v)| (t - m) / v)
            .collect()
    }
}

/// Rosenbrock-style warp of a 2D Gaussian:
/// `U = θ₁²/(2s²) + (θ₂ − b(θ₁² − s²))²/2`.
#[derive(Debug, Clone)]
pub struct Banana {
    curvature: f64,
    scale: f64,
}

impl Banana {
    pub fn new(curvature: f64, scale: f64) -> Result<Self> {
        if !curvature.is_finite() {
            return Err(invalid("banana curvature must be finite"));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(invalid("banana scale must be finite and > 0"));
        }
        Ok(Self { curvature, scale })
    }

    fn ridge(&self, t1: f64) -> f64 {
        self.curvature * (t1 * t1 - self.scale * self.scale)
    }
}

pub fn make_banana(curvature: f64, scale: f64) -> Result<Banana> {
    Banana::new(curvature, scale)
}

impl Target for Banana {
    fn dim(&self) -> usize {
        2
    }

    fn potential(&self, theta: &[f64]) -> f64 {
        let (t1, t2) = (theta[0], theta[1]);
        let r = t2 - self.ridge(t1);
        t1 * t1 / (2.0 * self.scale * self.scale) + 0.5 * r * r
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let (t1, t2) = (theta[0], theta[1]);
        let r = t2 - self.ridge(t1);
        vec![
            t1 / (self.scale * self.scale) - r * 2.0 * self.curvature * t1,
            r,
        ]
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Bayesian logistic regression with a Gaussian prior of precision `λ`:
/// `U(θ) = Σₙ log(1 + exp(−yₙ xₙᵀθ)) + (λ/2)‖θ‖²`, `yₙ ∈ {−1, +1}`.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    features: Vec<f64>,
    signs: Vec<f64>,
    n_features: usize,
    prior_precision: f64,
}

/// Parameters of the synthetic logistic-regression data set.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub data_size: usize,
    pub n_features: usize,
    pub seed: u64,
    /// Probability of flipping each generated label.
    pub label_noise: f64,
    pub prior_precision: f64,
}

impl Default for SyntheticData {
    fn default() -> Self {
        Self {
            data_size: 500,
            n_features: 2,
            seed: 20_211_014,
            label_noise: 0.0,
            prior_precision: 1.0,
        }
    }
}

impl LogisticRegression {
    /// `features` is `N` rows of `p` columns; labels are 0/1.
    pub fn new(features: &[Vec<f64>], labels: &[u8], prior_precision: f64) -> Result<Self> {
        if features.is_empty() {
            return Err(invalid("logistic regression needs N >= 1"));
        }
        check_dim(features.len(), labels.len())?;
        let p = features[0].len();
        if p == 0 {
            return Err(invalid("logistic regression needs p >= 1"));
        }
        let mut flat = Vec::with_capacity(features.len() * p);
        for row in features {
            check_dim(p, row.len())?;
            if row.iter().any(|x| !x.is_finite()) {
                return Err(invalid("features must be finite"));
            }
            flat.extend_from_slice(row);
        }
        let signs = labels
            .iter()
            .map(|&l| match l {
                0 => Ok(-1.0),
                1 => Ok(1.0),
                other => Err(invalid(format!("labels must be 0 or 1, got {other}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if !(prior_precision.is_finite() && prior_precision >= 0.0) {
            return Err(invalid("prior precision must be finite and >= 0"));
        }
        Ok(Self {
            features: flat,
            signs,
            n_features: p,
            prior_precision,
        })
    }

    /// Features `x ~ N(0, I)`, true coefficients `θ* ~ N(0, I)`, labels
    /// `y ~ Bernoulli(σ(xᵀθ*))`, each label flipped with probability
    /// `label_noise`. Returns the model and `θ*`.
    pub fn synthetic(spec: &SyntheticData) -> Result<(Self, Vec<f64>)> {
        if spec.data_size == 0 || spec.n_features == 0 {
            return Err(invalid("synthetic data needs N >= 1 and p >= 1"));
        }
        if !(0.0..=1.0).contains(&spec.label_noise) {
            return Err(invalid("label noise must lie in [0, 1]"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let truth: Vec<f64> = (0..spec.n_features)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let mut rows = Vec::with_capacity(spec.data_size);
        let mut labels = Vec::with_capacity(spec.data_size);
        for _ in 0..spec.data_size {
            let x: Vec<f64> = (0..spec.n_features)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let z: f64 = x.iter().zip(&truth).map(|(a, b)| a * b).sum();
            let mut y = rng.random::<f64>() < sigmoid(z);
            if rng.random::<f64>() < spec.label_noise {
                y = !y;
            }
            rows.push(x);
            labels.push(u8::from(y));
        }
        Ok((Self::new(&rows, &labels, spec.prior_precision)?, truth))
    }

    fn row(&self, n: usize) -> &[f64] {
        &self.features[n * self.n_features..(n + 1) * self.n_features]
    }

    fn margin(&self, n: usize, theta: &[f64]) -> f64 {
        self.signs[n] * self.row(n).iter().zip(theta).map(|(a, b)| a * b).sum::<f64>()
    }

    fn accumulate_likelihood_grad(&self, theta: &[f64], n: usize, out: &mut [f64]) {
        // d/dθ log(1 + e^{−y xᵀθ}) = −y x σ(−y xᵀθ)
        let w = -self.signs[n] * sigmoid(-self.margin(n, theta));
        for (o, x) in out.iter_mut().zip(self.row(n)) {
            *o += w * x;
        }
    }

    fn add_prior_grad(&self, theta: &[f64], out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(theta) {
            *o += self.prior_precision * t;
        }
    }
}

pub fn make_logistic_regression(
    features: &[Vec<f64>],
    labels: &[u8],
    prior_precision: f64,
) -> Result<LogisticRegression> {
    LogisticRegression::new(features, labels, prior_precision)
}

impl Target for LogisticRegression {
    fn dim(&self) -> usize {
        self.n_features
    }

    fn data_size(&self) -> usize {
        self.signs.len()
    }

    fn potential(&self, theta: &[f64]) -> f64 {
        let nll: f64 = (0..self.signs.len())
            .map(|n| softplus(-self.margin(n, theta)))
            .sum();
        let prior: f64 = theta.iter().map(|t| t * t).sum::<f64>() * self.prior_precision / 2.0;
        nll + prior
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n_features];
        for n in 0..self.signs.len() {
            self.accumulate_likelihood_grad(theta, n, &mut g);
        }
        self.add_prior_grad(theta, &mut g);
        g
    }

    /// Batch sum scaled by `N / |batch|`, plus the full prior gradient.
    fn minibatch_gradient(&self, theta: &[f64], batch: &[usize]) -> Vec<f64> {
        let mut g = vec![0.0; self.n_features];
        if batch.is_empty() {
            self.add_prior_grad(theta, &mut g);
            return g;
        }
        for &n in batch {
            self.accumulate_likelihood_grad(theta, n, &mut g);
        }
        let scale = self.signs.len() as f64 / batch.len() as f64;
        if scale != 1.0 {
            for x in &mut g {
                *x *= scale;
            }
        }
        self.add_prior_grad(theta, &mut g);
        g
    }
}

/// Epoch-wise sampling without replacement: each epoch is a fresh random
/// permutation of `0..data_size` cut into consecutive batches.
#[derive(Debug, Clone)]
pub struct MinibatchSchedule {
    data_size: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
    permutation: Vec<usize>,
    position: usize,
    epoch: u64,
}

impl MinibatchSchedule {
    pub fn new(data_size: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || data_size == 0 {
            return Err(invalid("batch size and data size must be >= 1"));
        }
        if !data_size.is_multiple_of(batch_size) {
            return Err(invalid(format!(
                "batch size {batch_size} must divide the data size {data_size}"
            )));
        }
        let mut schedule = Self {
            data_size,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
            permutation: (0..data_size).collect(),
            position: 0,
            epoch: 0,
        };
        schedule.permutation.shuffle(&mut schedule.rng);
        Ok(schedule)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn data_size(&self) -> usize {
        self.data_size
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.data_size / self.batch_size
    }

    /// Completed epochs so far.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Position within the current epoch, in data points.
    pub fn position(&self) -> usize {
        self.position
    }

    /// Next batch of indices, sorted ascending.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.position == self.data_size {
            self.permutation.shuffle(&mut self.rng);
            self.position = 0;
            self.epoch += 1;
        }
        let mut batch = self.permutation[self.position..self.position + self.batch_size].to_vec();
        batch.sort_unstable();
        self.position += self.batch_size;
        batch
    }
}
