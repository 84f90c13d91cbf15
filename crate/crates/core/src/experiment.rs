//! Monte Carlo harness: repeated simulate-then-estimate runs summarized as
//! coverage, rejection rates and scaled MSE per sample size, plus a log-log
//! regression of the subset-sampling error on the number of draws.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cwls::{solve_cwls, ConstraintSystem};
use crate::error::{Result, SpvimError};
use crate::kernel::{all_subsets, exact_shapley, sample_subsets};
use crate::pipeline::{estimate_spvim, EstimationConfig, SpvimResult};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::simulate::{simulate, true_spvim, DgpSpec};

pub const MIN_REPLICATES: usize = 50;
/// Share of replicates allowed to fail before the experiment is aborted.
pub const FAILURE_BUDGET: f64 = 0.05;

fn default_replicates() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub dgp: DgpSpec,
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Master seed; per-replicate data and estimation seeds derive from it.
    #[serde(default)]
    pub seed: u64,
    /// Replicates run in parallel on this many threads (0 = all cores). Each
    /// replicate's estimate runs single-threaded.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub sampling_check: Option<SamplingCheckSpec>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.replicates < MIN_REPLICATES {
            return Err(SpvimError::Config(format!(
                "at least {MIN_REPLICATES} replicates are needed, got {}",
                self.replicates
            )));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(SpvimError::Config("sample_sizes must be nonempty and positive".into()));
        }
        if self.estimation.groups.is_some() || self.estimation.subpopulation.is_some() {
            return Err(SpvimError::Config(
                "experiments compare against feature-level truth; groups and subpopulations are not supported".into(),
            ));
        }
        self.estimation.validate()
    }
}

fn default_check_p() -> usize {
    8
}

fn default_log2_draws() -> Vec<u32> {
    (7..=13).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingCheckSpec {
    #[serde(default = "default_check_p")]
    pub p: usize,
    /// Draw counts are `2^k` for each listed `k`.
    #[serde(default = "default_log2_draws")]
    pub log2_draws: Vec<u32>,
    #[serde(default = "default_replicates")]
    pub seeds: usize,
}

impl Default for SamplingCheckSpec {
    fn default() -> Self {
        Self { p: default_check_p(), log2_draws: default_log2_draws(), seeds: default_replicates() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub feature: String,
    pub truth: Option<f64>,
    pub mean_estimate: f64,
    /// `n` times the mean squared error against the truth.
    pub scaled_mse: Option<f64>,
    pub coverage: Option<f64>,
    /// Type I error for null features, power otherwise.
    pub rejection_rate: Option<f64>,
    pub tested: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub n: usize,
    pub replicates: usize,
    pub failures: usize,
    pub failure_messages: Vec<String>,
    pub features: Vec<FeatureSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingRateResult {
    pub draws: Vec<usize>,
    pub rmse: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub sizes: Vec<SizeSummary>,
    pub sampling: Option<SamplingRateResult>,
}

impl ExperimentReport {
    /// Plain-text tables, one per sample size.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for size in &self.sizes {
            out.push_str(&format!(
                "n = {} ({} replicates, {} failed)\n{:<16} {:>9} {:>9} {:>11} {:>9} {:>9}\n",
                size.n, size.replicates, size.failures, "feature", "truth", "mean", "n*MSE", "coverage", "reject"
            ));
            let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            for f in &size.features {
                out.push_str(&format!(
                    "{:<16} {:>9} {:>9.4} {:>11} {:>9} {:>9}\n",
                    f.feature,
                    fmt(f.truth),
                    f.mean_estimate,
                    fmt(f.scaled_mse),
                    fmt(f.coverage),
                    fmt(f.rejection_rate)
                ));
            }
            out.push('\n');
        }
        if let Some(s) = &self.sampling {
            out.push_str(&format!("sampling error: log RMSE = {:.3} {:+.3} log m\n", s.intercept, s.slope));
            for (m, r) in s.draws.iter().zip(&s.rmse) {
                out.push_str(&format!("  m = {m:>6}  rmse = {r:.5}\n"));
            }
        }
        out
    }
}

fn replicate(spec: &ExperimentSpec, n: usize, seed: u64) -> Result<SpvimResult> {
    let data = simulate(&spec.dgp, n, derive_seed(seed, Stream::Simulation, 0))?;
    let config =
        EstimationConfig { seed: derive_seed(seed, Stream::Replicate, 0), workers: 1, ..spec.estimation.clone() };
    estimate_spvim(&data, &config)
}

fn summarize(n: usize, truth: Option<&[f64]>, runs: &[SpvimResult], labels: &[String]) -> Vec<FeatureSummary> {
    let count = runs.len() as f64;
    (0..labels.len())
        .map(|j| {
            let truth_j = truth.map(|t| t[j]);
            let mean_estimate = runs.iter().map(|r| r.psi[j]).sum::<f64>() / count;
            let scaled_mse =
                truth_j.map(|t| n as f64 * runs.iter().map(|r| (r.psi[j] - t).powi(2)).sum::<f64>() / count);
            let coverage = truth_j.map(|t| {
                runs.iter().filter(|r| r.intervals[j].lower <= t && t <= r.intervals[j].upper).count() as f64 / count
            });
            let tests: Vec<bool> = runs.iter().filter_map(|r| r.tests[j].as_ref().map(|t| t.reject)).collect();
            let rejection_rate =
                (!tests.is_empty()).then(|| tests.iter().filter(|&&r| r).count() as f64 / tests.len() as f64);
            FeatureSummary {
                feature: labels[j].clone(),
                truth: truth_j,
                mean_estimate,
                scaled_mse,
                coverage,
                rejection_rate,
                tested: tests.len(),
            }
        })
        .collect()
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let truth = match spec.estimation.measure {
        crate::predictiveness::PredictivenessMeasure::RSquared => true_spvim(&spec.dgp).ok(),
        _ => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| SpvimError::Config(format!("cannot start {} workers: {e}", spec.workers)))?;

    let mut sizes = Vec::new();
    for (k, &n) in spec.sample_sizes.iter().enumerate() {
        let size_seed = derive_seed(spec.seed, Stream::Replicate, k as u64);
        let outcomes: Vec<Result<SpvimResult>> = pool.install(|| {
            (0..spec.replicates)
                .into_par_iter()
                .map(|r| replicate(spec, n, derive_seed(size_seed, Stream::Replicate, r as u64 + 1)))
                .collect()
        });
        let mut runs = Vec::new();
        let mut failure_messages = Vec::new();
        for (r, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(run) => runs.push(run),
                Err(e) => failure_messages.push(format!("replicate {r}: {e}")),
            }
        }
        let failures = failure_messages.len();
        if failures as f64 > FAILURE_BUDGET * spec.replicates as f64 || runs.is_empty() {
            return Err(SpvimError::FailureBudget {
                failed: failures,
                total: spec.replicates,
                first: failure_messages.first().cloned().unwrap_or_default(),
            });
        }
        log::info!("n = {n}: {} replicates, {failures} failed", runs.len());
        let labels = runs[0].features.clone();
        let features = summarize(n, truth.as_deref(), &runs, &labels);
        sizes.push(SizeSummary { n, replicates: spec.replicates, failures, failure_messages, features });
    }
    let sampling = match &spec.sampling_check {
        Some(check) => Some(pool.install(|| sampling_rate_check(check, spec.seed))?),
        None => None,
    };
    Ok(ExperimentReport { spec: spec.clone(), sizes, sampling })
}

/// A fixed game on `p` players: `v(empty) = 0`, every other value uniform on
/// `[0, 1)`. Indexed by subset bitmask.
pub fn synthetic_game(p: usize, seed: u64) -> Vec<f64> {
    use rand::Rng;
    let mut rng = stream_rng(seed, Stream::Simulation, 0);
    let mut v: Vec<f64> = (0..1usize << p).map(|_| rng.random::<f64>()).collect();
    v[0] = 0.0;
    v
}

/// Least-squares fit of `y = a + b x`; returns `(a, b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

/// RMSE of the sampled-subset solution (true values plugged in) against the
/// exact Shapley values, for each draw count; then the log-log slope.
pub fn sampling_rate_check(spec: &SamplingCheckSpec, seed: u64) -> Result<SamplingRateResult> {
    let p = spec.p;
    let game = synthetic_game(p, derive_seed(seed, Stream::Simulation, 1));
    let ordered: Vec<f64> = all_subsets(p)?.iter().map(|s| game[s.mask() as usize]).collect();
    let exact = exact_shapley(&ordered, p)?;
    let constraint = ConstraintSystem::new(p, game[0], game[(1 << p) - 1])?;
    let draws: Vec<usize> = spec.log2_draws.iter().map(|&k| 1usize << k).collect();
    let mut rmse = Vec::with_capacity(draws.len());
    for (k, &m) in draws.iter().enumerate() {
        let errors: Vec<f64> = (0..spec.seeds)
            .into_par_iter()
            .map(|s| -> Result<f64> {
                let dist =
                    sample_subsets(p, m, derive_seed(seed, Stream::SubsetSampling, (k * spec.seeds + s) as u64))?;
                let v: Vec<f64> = dist.subsets().iter().map(|sub| game[sub.mask() as usize]).collect();
                let sol = solve_cwls(&dist, &v, &constraint)?;
                Ok((1..=p).map(|j| (sol.psi[j] - exact[j]).powi(2)).sum::<f64>())
            })
            .collect::<Result<_>>()?;
        rmse.push((errors.iter().sum::<f64>() / (spec.seeds * p) as f64).sqrt());
    }
    let lx: Vec<f64> = draws.iter().map(|&m| (m as f64).ln()).collect();
    let ly: Vec<f64> = rmse.iter().map(|r| r.ln()).collect();
    let (intercept, slope) = linear_fit(&lx, &ly);
    Ok(SamplingRateResult { draws, rmse, slope, intercept })
}
