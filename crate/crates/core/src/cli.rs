//! Command-line harness.
//!
//! Every run is described by a flat set of `key = value` settings. A
//! `--config` file supplies defaults, command-line flags override it, and a
//! sweep overrides one key per axis for every grid cell. [`RunSpec`] is the
//! validated form.
//!
//! Output files contain only seed-determined values, so the same spec and
//! seed reproduce them byte for byte. Wall time goes to stdout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::diagnostics::{summarize, ChainSummary};
use crate::error::{Error, Result};
use crate::integrators::{step_euler_maruyama, check_backward_realizability_em, IntegratorKind};
use crate::mh::em_log_accept;
use crate::params::{
    em_sampler_to_sgd, sampler_to_sgd, sgd_to_em_sampler, sgd_to_sampler, SamplerParams, SgdParams,
};
use crate::phase::{MassMatrix, PhaseState, SamplerConfig};
use crate::rng::NoiseStream;
use crate::sampler::{Chain, ChainSettings, Correction, GradientMode, MomentumRefresh, Transition};
use crate::targets::{Banana, Gaussian, LogisticRegression, SyntheticData, Target};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "GGMC_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "ggmc-out";
const MAX_ROWS: usize = 100_000;
const MAX_THETA_COLUMNS: usize = 32;

const KEYS: &[&str] = &[
    "target",
    "integrator",
    "correction",
    "multi-step-n",
    "steps",
    "chains",
    "seed",
    "out",
    "lr",
    "momentum",
    "step-size",
    "friction",
    "temperature",
    "batch-size",
    "refresh",
    "thin",
    "burn-in",
];

/// Settings as `key → value`, keys normalised to lower-case kebab form.
pub type Settings = BTreeMap<String, String>;

fn normalise_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}

/// Parse a flat `key = value` file. `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Settings> {
    let mut out = Settings::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidSpec(format!("config line {}: expected key = value", i + 1)))?;
        let key = normalise_key(k);
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::InvalidSpec(format!("config line {}: unknown key '{key}'", i + 1)));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    /// Zero-mean axis-aligned Gaussian with these variances.
    Gaussian(Vec<f64>),
    Banana { curvature: f64, scale: f64 },
    Logistic(SyntheticData),
}

impl TargetSpec {
    /// `gaussian-1d`, `harmonic`, `gaussian-<d>d`, `gaussian:v1,v2,...`,
    /// `banana[:b,s]`, `logistic[:N,p,seed]`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, args) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s.as_str(), None),
        };
        let numbers = |a: &str| -> Result<Vec<f64>> {
            a.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidSpec(format!("bad number '{x}' in target '{s}'")))
                })
                .collect()
        };
        let bad = || Error::InvalidSpec(format!("unknown target '{s}'"));
        match (name, args) {
            ("harmonic", None) => Ok(TargetSpec::Gaussian(vec![1.0])),
            ("gaussian", Some(a)) => Ok(TargetSpec::Gaussian(numbers(a)?)),
            ("banana", None) => Ok(TargetSpec::Banana { curvature: 1.0, scale: 1.0 }),
            ("banana", Some(a)) => match numbers(a)?.as_slice() {
                [b, sc] => Ok(TargetSpec::Banana { curvature: *b, scale: *sc }),
                _ => Err(bad()),
            },
            ("logistic", None) => Ok(TargetSpec::Logistic(SyntheticData::default())),
            ("logistic", Some(a)) => {
                let parts: Vec<&str> = a.split(',').map(str::trim).collect();
                let int = |x: &str| x.parse::<u64>().map_err(|_| bad());
                let mut data = SyntheticData::default();
                match parts.as_slice() {
                    [n, p] => {
                        data.data_size = int(n)? as usize;
                        data.n_features = int(p)? as usize;
                    }
                    [n, p, seed] => {
                        data.data_size = int(n)? as usize;
                        data.n_features = int(p)? as usize;
                        data.seed = int(seed)?;
                    }
                    _ => return Err(bad()),
                }
                Ok(TargetSpec::Logistic(data))
            }
            (n, None) if n.starts_with("gaussian-") && n.ends_with('d') => {
                let d: usize = n["gaussian-".len()..n.len() - 1].parse().map_err(|_| bad())?;
                if d == 0 {
                    return Err(bad());
                }
                Ok(TargetSpec::Gaussian(vec![1.0; d]))
            }
            _ => Err(bad()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Target>> {
        Ok(match self {
            TargetSpec::Gaussian(v) => Box::new(Gaussian::new(vec![0.0; v.len()], v.clone())?),
            TargetSpec::Banana { curvature, scale } => Box::new(Banana::new(*curvature, *scale)?),
            TargetSpec::Logistic(data) => Box::new(LogisticRegression::synthetic(data)?.0),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub target: TargetSpec,
    pub integrator: IntegratorKind,
    pub correction: Correction,
    /// Integrator steps per chain.
    pub steps: usize,
    pub chains: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub step_size: f64,
    pub friction: f64,
    pub temperature: f64,
    pub gradient: GradientMode,
    pub refresh: MomentumRefresh,
    /// Keep every `thin`-th unit in the samples file.
    pub thin: usize,
    /// Units dropped from the summary statistics.
    pub burn_in: usize,
    /// The SGD pair the step size and friction were derived from, if any.
    pub sgd: Option<(f64, f64)>,
}

fn get<T: std::str::FromStr>(s: &Settings, key: &str) -> Result<Option<T>> {
    s.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|_| Error::InvalidSpec(format!("invalid value '{v}' for '{key}'")))
        })
        .transpose()
}

impl RunSpec {
    /// Validate a settings map. `default_out` is used when `out` is absent.
    pub fn from_settings(s: &Settings, default_out: &Path) -> Result<Self> {
        for key in s.keys() {
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::InvalidSpec(format!("unknown setting '{key}'")));
            }
        }
        let target = TargetSpec::parse(s.get("target").map(String::as_str).unwrap_or("gaussian-1d"))?;
        let mut integrator: IntegratorKind = match s.get("integrator") {
            Some(v) => v.parse().map_err(Error::InvalidSpec)?,
            None => IntegratorKind::Obabo,
        };
        let multi_n: Option<usize> = get(s, "multi-step-n")?;
        let correction = match s.get("correction").map(|c| c.to_ascii_lowercase().replace('_', "-")) {
            None => match multi_n {
                Some(n) => Correction::MultiStep(n),
                None => Correction::None,
            },
            Some(c) => match c.as_str() {
                "none" => Correction::None,
                "per-step" => Correction::PerStep,
                "multi-step" => Correction::MultiStep(multi_n.ok_or_else(|| {
                    Error::InvalidSpec("multi-step correction needs multi-step-n".into())
                })?),
                other => return Err(Error::InvalidSpec(format!("unknown correction '{other}'"))),
            },
        };
        if multi_n.is_some() && !matches!(correction, Correction::MultiStep(_)) {
            return Err(Error::InvalidSpec("multi-step-n given without multi-step correction".into()));
        }

        let built = target.build()?;
        let data_size = built.data_size();

        let sampler_native = s.contains_key("step-size") || s.contains_key("friction");
        let sgd_native = s.contains_key("lr") || s.contains_key("momentum");
        if sampler_native && sgd_native {
            return Err(Error::InvalidSpec(
                "mixed parameterizations: give either lr/momentum or step-size/friction, not both".into(),
            ));
        }
        let (step_size, friction, sgd) = if sgd_native {
            let lr: f64 = get(s, "lr")?.ok_or_else(|| Error::InvalidSpec("lr needs momentum as well".into()))?;
            let beta: f64 =
                get(s, "momentum")?.ok_or_else(|| Error::InvalidSpec("momentum needs lr as well".into()))?;
            let p = SgdParams::new(lr, beta, data_size).map_err(|e| Error::InvalidSpec(e.to_string()))?;
            if integrator == IntegratorKind::EulerMaruyama {
                let (h, g) = sgd_to_em_sampler(&p);
                (h, g, Some((lr, beta)))
            } else {
                match sgd_to_sampler(&p) {
                    SamplerParams::Langevin { step_size, friction } => (step_size, friction, Some((lr, beta))),
                    SamplerParams::Sgld { step_size } => {
                        integrator = IntegratorKind::Sgld;
                        (step_size, 0.0, Some((lr, beta)))
                    }
                }
            }
        } else {
            (
                get(s, "step-size")?.unwrap_or(0.1),
                get(s, "friction")?.unwrap_or(1.0),
                None,
            )
        };
        let temperature: f64 = get(s, "temperature")?.unwrap_or(1.0);
        SamplerConfig::new(step_size, friction, temperature, MassMatrix::identity(built.dim()))
            .map_err(|e| Error::InvalidSpec(e.to_string()))?;

        let steps: usize = get(s, "steps")?.unwrap_or(10_000);
        let chains: usize = get(s, "chains")?.unwrap_or(1);
        if chains == 0 {
            return Err(Error::InvalidSpec("chains must be >= 1".into()));
        }
        let per_unit = correction.steps_per_unit();
        if per_unit == 0 {
            return Err(Error::InvalidSpec("multi-step-n must be >= 1".into()));
        }
        if steps == 0 || !steps.is_multiple_of(per_unit) {
            return Err(Error::InvalidSpec(format!(
                "steps ({steps}) must be a positive multiple of the steps per acceptance test ({per_unit})"
            )));
        }
        let gradient = match get::<usize>(s, "batch-size")? {
            None => GradientMode::Exact,
            Some(b) => {
                if b == 0 || !data_size.is_multiple_of(b) {
                    return Err(Error::InvalidSpec(format!(
                        "batch-size {b} must divide the data size {data_size}"
                    )));
                }
                GradientMode::Minibatch { batch_size: b }
            }
        };
        let refresh = match s.get("refresh").map(|r| r.to_ascii_lowercase()) {
            None => MomentumRefresh::Partial,
            Some(r) if r == "partial" => MomentumRefresh::Partial,
            Some(r) if r == "full" => MomentumRefresh::Full,
            Some(r) => return Err(Error::InvalidSpec(format!("unknown refresh '{r}'"))),
        };
        let units = steps / per_unit;
        let thin = match get::<usize>(s, "thin")? {
            Some(0) => return Err(Error::InvalidSpec("thin must be >= 1".into())),
            Some(k) => k,
            None => (units * chains).div_ceil(MAX_ROWS).max(1),
        };
        let burn_in: usize = get(s, "burn-in")?.unwrap_or(0);
        if burn_in + 2 > units {
            return Err(Error::InvalidSpec(format!(
                "burn-in ({burn_in}) leaves fewer than 2 of {units} units for the summary"
            )));
        }
        let out = s.get("out").map(PathBuf::from).unwrap_or_else(|| default_out.to_path_buf());
        let spec = Self {
            target,
            integrator,
            correction,
            steps,
            chains,
            seed: get(s, "seed")?.unwrap_or(0),
            out,
            step_size,
            friction,
            temperature,
            gradient,
            refresh,
            thin,
            burn_in,
            sgd,
        };
        spec.chain_settings(0)?.validate()?;
        Ok(spec)
    }

    pub fn config(&self) -> Result<SamplerConfig> {
        let dim = self.target.build()?.dim();
        SamplerConfig::new(self.step_size, self.friction, self.temperature, MassMatrix::identity(dim))
    }

    pub fn chain_settings(&self, chain: usize) -> Result<ChainSettings> {
        Ok(ChainSettings {
            integrator: self.integrator,
            correction: self.correction,
            config: self.config()?,
            gradient: self.gradient,
            refresh: self.refresh,
            seed: self.seed,
            chain: chain as u64,
        })
    }

    pub fn units(&self) -> usize {
        self.steps / self.correction.steps_per_unit()
    }
}

/// Per-chain result of [`run`].
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub rows: Vec<Transition>,
    pub summary: Option<ChainSummary>,
    pub error: Option<Error>,
}

/// Outcome of [`run`]; files are already written.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub chains: Vec<ChainOutput>,
    pub samples_path: PathBuf,
    pub summary_path: PathBuf,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn first_error(&self) -> Option<&Error> {
        self.chains.iter().find_map(|c| c.error.as_ref())
    }

    /// Accepted fraction over all chains, `None` when uncorrected.
    pub fn acceptance_rate(&self) -> Option<f64> {
        let rates: Vec<(f64, usize)> = self
            .chains
            .iter()
            .filter_map(|c| c.summary.as_ref())
            .filter_map(|s| s.acceptance_rate.map(|r| (r, s.n_samples)))
            .collect();
        if rates.is_empty() {
            return None;
        }
        let total: usize = rates.iter().map(|r| r.1).sum();
        Some(rates.iter().map(|(r, n)| r * *n as f64).sum::<f64>() / total as f64)
    }

    fn pooled(&self, f: impl Fn(&ChainSummary) -> Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = self.chains.iter().filter_map(|c| c.summary.as_ref()).filter_map(f).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    pub fn mean_potential(&self) -> Option<f64> {
        self.pooled(|s| s.mean_potential)
    }

    pub fn mean_kinetic(&self) -> Option<f64> {
        self.pooled(|s| s.mean_kinetic)
    }
}

fn run_chain(target: &dyn Target, spec: &RunSpec, chain: usize) -> ChainOutput {
    let mut rows = Vec::new();
    let mut error = None;
    let mut all_theta = Vec::new();
    let mut accepted = Vec::new();
    let mut potentials = Vec::new();
    let mut kinetics = Vec::new();
    let started = spec
        .chain_settings(chain)
        .and_then(|s| Chain::new(target, s, vec![0.0; target.dim()]));
    match started {
        Err(e) => error = Some(e),
        Ok(mut c) => {
            for unit in 0..spec.units() {
                match c.advance() {
                    Ok(t) => {
                        if unit >= spec.burn_in {
                            all_theta.push(t.state.theta().to_vec());
                            if !t.log_alpha.is_nan() {
                                accepted.push(t.accepted);
                            }
                            potentials.push(t.potential);
                            kinetics.push(t.kinetic);
                        }
                        if (unit + 1) % spec.thin == 0 {
                            rows.push(t);
                        }
                    }
                    Err(e) => {
                        error = Some(e);
                        break;
                    }
                }
            }
        }
    }
    let summary = if error.is_none() {
        match summarize(&all_theta, &accepted) {
            Ok(s) => Some(s.with_energies(&potentials, &kinetics)),
            Err(e) => {
                error = Some(e);
                None
            }
        }
    } else {
        None
    };
    ChainOutput { rows, summary, error }
}

fn theta_header(dim: usize) -> Vec<String> {
    if dim <= MAX_THETA_COLUMNS {
        (0..dim).map(|i| format!("theta_{i}")).collect()
    } else {
        vec!["theta_norm".into(), "theta_max_abs".into()]
    }
}

fn theta_fields(theta: &[f64]) -> Vec<String> {
    if theta.len() <= MAX_THETA_COLUMNS {
        theta.iter().map(|x| x.to_string()).collect()
    } else {
        vec![
            theta.iter().map(|x| x * x).sum::<f64>().sqrt().to_string(),
            theta.iter().fold(0.0f64, |m, x| m.max(x.abs())).to_string(),
        ]
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Run every chain of `spec` (one thread per chain) and write
/// `samples.csv` and `summary.csv` into `spec.out`. Partial output is
/// written before a chain error is returned.
pub fn run(spec: &RunSpec) -> Result<RunReport> {
    let clock = Instant::now();
    let target = spec.target.build()?;
    let target: &dyn Target = target.as_ref();
    let chains: Vec<ChainOutput> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..spec.chains)
            .map(|c| scope.spawn(move || run_chain(target, spec, c)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    });

    fs::create_dir_all(&spec.out)?;
    let dim = target.dim();
    let mut samples = String::new();
    let mut header = vec!["chain".to_string(), "step".to_string()];
    header.extend(theta_header(dim));
    header.extend(["potential", "kinetic", "log_alpha", "accepted"].map(String::from));
    writeln!(samples, "{}", header.join(",")).unwrap();
    for (c, out) in chains.iter().enumerate() {
        for t in &out.rows {
            let mut fields = vec![c.to_string(), t.step.to_string()];
            fields.extend(theta_fields(t.state.theta()));
            fields.push(t.potential.to_string());
            fields.push(t.kinetic.to_string());
            fields.push(t.log_alpha.to_string());
            fields.push((t.accepted as u8).to_string());
            writeln!(samples, "{}", fields.join(",")).unwrap();
        }
    }

    let mut summary = String::from(
        "chain,coordinate,mean,variance,ess,mean_standard_error,acceptance_rate,mean_potential,mean_kinetic,n_samples\n",
    );
    for (c, out) in chains.iter().enumerate() {
        if let Some(s) = &out.summary {
            let se = s.mean_standard_error();
            for (j, se) in se.iter().enumerate() {
                writeln!(
                    summary,
                    "{c},{j},{},{},{},{},{},{},{},{}",
                    s.mean[j],
                    s.variance[j],
                    s.ess[j],
                    se,
                    opt(s.acceptance_rate),
                    opt(s.mean_potential),
                    opt(s.mean_kinetic),
                    s.n_samples
                )
                .unwrap();
            }
        }
    }

    let samples_path = spec.out.join("samples.csv");
    let summary_path = spec.out.join("summary.csv");
    fs::write(&samples_path, samples)?;
    fs::write(&summary_path, summary)?;
    let report = RunReport {
        chains,
        samples_path,
        summary_path,
        wall_seconds: clock.elapsed().as_secs_f64(),
    };
    if let Some(e) = report.first_error() {
        return Err(e.clone());
    }
    Ok(report)
}

/// One row of a sweep table.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub axis_values: Vec<String>,
    pub out: PathBuf,
    pub result: Result<(Option<f64>, Option<f64>, Option<f64>)>,
}

/// Cartesian product of the axes, each `(key, values)`. No axes gives an
/// empty grid.
pub fn grid(axes: &[(String, Vec<String>)]) -> Vec<Vec<String>> {
    if axes.is_empty() {
        return Vec::new();
    }
    let mut cells: Vec<Vec<String>> = vec![Vec::new()];
    for (_, values) in axes {
        cells = cells
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push(v.clone());
                    c
                })
            })
            .collect();
    }
    cells
}

/// Parse `key=v1,v2,...`.
pub fn parse_axis(s: &str) -> Result<(String, Vec<String>)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidSpec(format!("axis '{s}' must look like key=v1,v2")))?;
    let key = normalise_key(k);
    if !KEYS.contains(&key.as_str()) || key == "out" {
        return Err(Error::InvalidSpec(format!("'{key}' cannot be swept")));
    }
    let values: Vec<String> = v.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect();
    if values.is_empty() {
        return Err(Error::InvalidSpec(format!("axis '{key}' has no values")));
    }
    Ok((key, values))
}

/// Run every grid cell in parallel, each into `out/cell_<i>`, and write
/// `out/sweep.csv`. Cell failures are recorded in the table.
pub fn sweep(base: &Settings, axes: &[(String, Vec<String>)], out: &Path) -> Result<Vec<SweepCell>> {
    let cells = grid(axes);
    let results: Vec<SweepCell> = std::thread::scope(|scope| {
        let handles: Vec<_> = cells
            .iter()
            .enumerate()
            .map(|(i, values)| {
                scope.spawn(move || {
                    let mut settings = base.clone();
                    for ((key, _), v) in axes.iter().zip(values) {
                        settings.insert(key.clone(), v.clone());
                    }
                    let cell_out = out.join(format!("cell_{i}"));
                    settings.insert("out".into(), cell_out.to_string_lossy().into_owned());
                    let result = RunSpec::from_settings(&settings, &cell_out)
                        .and_then(|spec| run(&spec))
                        .map(|r| (r.acceptance_rate(), r.mean_potential(), r.mean_kinetic()));
                    SweepCell {
                        axis_values: values.clone(),
                        out: cell_out,
                        result,
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep thread panicked")).collect()
    });

    fs::create_dir_all(out)?;
    let mut table = String::from("cell");
    for (key, _) in axes {
        table.push(',');
        table.push_str(key);
    }
    table.push_str(",status,acceptance_rate,mean_potential,mean_kinetic,error\n");
    for (i, cell) in results.iter().enumerate() {
        let mut fields = vec![i.to_string()];
        fields.extend(cell.axis_values.iter().cloned());
        match &cell.result {
            Ok((a, u, k)) => fields.extend(["ok".into(), opt(*a), opt(*u), opt(*k), String::new()]),
            Err(e) => fields.extend([
                "error".into(),
                String::new(),
                String::new(),
                String::new(),
                csv_quote(&e.to_string()),
            ]),
        }
        writeln!(table, "{}", fields.join(",")).unwrap();
    }
    fs::write(out.join("sweep.csv"), table)?;
    Ok(results)
}

fn csv_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// Counts from [`theorem1_demo`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DemoReport {
    pub steps: usize,
    pub realizable: usize,
    pub neg_infinite: usize,
}

/// Euler-Maruyama steps on the 1D standard Gaussian, counting how many have
/// a realizable backward transition and how many get `log α = −∞`.
pub fn theorem1_demo(steps: usize, step_size: f64, friction: f64, seed: u64) -> Result<DemoReport> {
    let target = Gaussian::standard(1);
    let config = SamplerConfig::standard(step_size, friction, 1)?;
    let mut stream = NoiseStream::new(seed, 0);
    let mut state = PhaseState::new(stream.standard_normal(1), stream.standard_normal(1))?;
    let mut report = DemoReport {
        steps,
        realizable: 0,
        neg_infinite: 0,
    };
    for i in 0..steps {
        let noise = stream.standard_normal(1);
        let next = step_euler_maruyama(&state, &target.gradient(state.theta()), &config, &noise).map_err(|e| {
            Error::BlowUp {
                chain: 0,
                step: i + 1,
                reason: e.to_string(),
            }
        })?;
        report.realizable += check_backward_realizability_em(&state, &next, &config) as usize;
        report.neg_infinite += (em_log_accept(&state, &next, &target, &config) == f64::NEG_INFINITY) as usize;
        state = next;
    }
    Ok(report)
}

#[derive(Parser, Debug)]
#[command(name = "ggmc", version, about = "Metropolis-corrected Langevin samplers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run chains and write samples.csv and summary.csv.
    Run(RunArgs),
    /// Run a grid of specs and write a combined sweep.csv.
    Sweep(SweepArgs),
    /// Count realizable backward transitions of Euler-Maruyama steps.
    #[command(name = "theorem1-demo")]
    Theorem1Demo(DemoArgs),
    /// Convert between (lr, momentum) and (step size, friction).
    #[command(name = "convert-params")]
    ConvertParams(ConvertArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct RunArgs {
    /// Flat key = value file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub integrator: Option<String>,
    /// none | per-step | multi-step
    #[arg(long)]
    pub correction: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub multi_step_n: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub friction: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// partial | full
    #[arg(long)]
    pub refresh: Option<String>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Output directory (default: $GGMC_OUT_DIR, else ./ggmc-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    /// Config file settings overridden by the flags that were given.
    pub fn settings(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(path) => parse_config(&fs::read_to_string(path)?)?,
            None => Settings::new(),
        };
        let mut set = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                s.insert(k.to_string(), v);
            }
        };
        let str_of = |x: Option<f64>| x.map(|v| v.to_string());
        set("target", self.target.clone());
        set("integrator", self.integrator.clone());
        set("correction", self.correction.clone());
        set("steps", self.steps.map(|v| v.to_string()));
        set("multi-step-n", self.multi_step_n.map(|v| v.to_string()));
        set("lr", str_of(self.lr));
        set("momentum", str_of(self.momentum));
        set("step-size", str_of(self.step_size));
        set("friction", str_of(self.friction));
        set("temperature", str_of(self.temperature));
        set("seed", self.seed.map(|v| v.to_string()));
        set("chains", self.chains.map(|v| v.to_string()));
        set("batch-size", self.batch_size.map(|v| v.to_string()));
        set("refresh", self.refresh.clone());
        set("thin", self.thin.map(|v| v.to_string()));
        set("burn-in", self.burn_in.map(|v| v.to_string()));
        set("out", self.out.as_ref().map(|p| p.to_string_lossy().into_owned()));
        Ok(s)
    }
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub base: RunArgs,
    /// Swept setting, `key=v1,v2,...`; repeat for a grid.
    #[arg(long = "axis")]
    pub axes: Vec<String>,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 10_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub step_size: f64,
    #[arg(long, default_value_t = 0.5)]
    pub friction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub friction: Option<f64>,
    #[arg(long)]
    pub data_size: usize,
}

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn convert(args: &ConvertArgs) -> Result<String> {
    match (args.lr, args.momentum, args.step_size, args.friction) {
        (Some(lr), Some(beta), None, None) => {
            let p = SgdParams::new(lr, beta, args.data_size)?;
            let mut out = match sgd_to_sampler(&p) {
                SamplerParams::Langevin { step_size, friction } => {
                    format!("obabo: step_size={step_size} friction={friction} permanence={beta}\n")
                }
                SamplerParams::Sgld { step_size } => format!("sgld: step_size={step_size}\n"),
            };
            let (h, g) = sgd_to_em_sampler(&p);
            writeln!(out, "euler-maruyama: step_size={h} friction={g}").unwrap();
            Ok(out)
        }
        (None, None, Some(h), Some(g)) => {
            let e = sampler_to_sgd(h, g, args.data_size)?;
            let mut out = format!("obabo: lr={} momentum={}", e.learning_rate, e.momentum);
            if e.is_hmc_regime() {
                out.push_str(" (momentum 1: Hamiltonian regime)");
            }
            out.push('\n');
            match em_sampler_to_sgd(h, g, args.data_size) {
                Ok(e) => writeln!(out, "euler-maruyama: lr={} momentum={}", e.learning_rate, e.momentum).unwrap(),
                Err(err) => writeln!(out, "euler-maruyama: {err}").unwrap(),
            }
            Ok(out)
        }
        _ => Err(Error::InvalidSpec(
            "give exactly one of --lr/--momentum or --step-size/--friction".into(),
        )),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let spec = RunSpec::from_settings(&args.settings()?, &default_out_dir())?;
            let report = run(&spec)?;
            println!("samples: {}", report.samples_path.display());
            println!("summary: {}", report.summary_path.display());
            if let Some(a) = report.acceptance_rate() {
                println!("acceptance rate: {a}");
            }
            println!("wall time: {:.3} s", report.wall_seconds);
            Ok(())
        }
        Command::Sweep(args) => {
            let axes = args.axes.iter().map(|a| parse_axis(a)).collect::<Result<Vec<_>>>()?;
            let base = args.base.settings()?;
            let out = base.get("out").map(PathBuf::from).unwrap_or_else(default_out_dir);
            let clock = Instant::now();
            let cells = sweep(&base, &axes, &out)?;
            let failed = cells.iter().filter(|c| c.result.is_err()).count();
            println!("sweep: {} cells, {} failed -> {}", cells.len(), failed, out.join("sweep.csv").display());
            println!("wall time: {:.3} s", clock.elapsed().as_secs_f64());
            Ok(())
        }
        Command::Theorem1Demo(args) => {
            let clock = Instant::now();
            let r = theorem1_demo(args.steps, args.step_size, args.friction, args.seed)?;
            println!("backward-realizable: {} / {}", r.realizable, r.steps);
            println!("log acceptance = -inf: {} / {}", r.neg_infinite, r.steps);
            println!("wall time: {:.3} s", clock.elapsed().as_secs_f64());
            Ok(())
        }
        Command::ConvertParams(args) => {
            print!("{}", convert(&args)?);
            Ok(())
        }
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
