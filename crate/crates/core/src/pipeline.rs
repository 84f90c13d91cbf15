//! End-to-end estimation: sample subsets, cross-fit predictiveness for each
//! unique subset, solve the constrained regression, estimate the covariance,
//! and optionally run the per-feature split tests.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cwls::{solve_cwls, solve_cwls_nonnegative, ConstraintSystem, CwlsSolution, NonnegativeOptions};
use crate::data::{Dataset, Task};
use crate::error::{Result, ResultExt, SpvimError};
use crate::inference::{
    estimate_covariance, spvim_test, wald_intervals, CovarianceEstimate, Interval, NullPortion, TestPortion, TestResult,
};
use crate::kernel::{sample_subsets, EmpiricalSubsetDistribution, FeatureSubset};
use crate::learners::LearnerSpec;
use crate::predictiveness::{CrossFitter, PredictivenessEstimate, PredictivenessMeasure, Scheme};
use crate::rng::{derive_seed, stream_rng, Stream};

/// Rows per feature below which results get a small-sample warning.
pub const ROWS_PER_FEATURE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

impl Comparator {
    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Comparator::Lt => a < b,
            Comparator::Le => a <= b,
            Comparator::Gt => a > b,
            Comparator::Ge => a >= b,
            Comparator::Eq => a == b,
            Comparator::Ne => a != b,
        }
    }
}

/// `column comparator threshold`, on a covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub column: String,
    pub comparator: Comparator,
    pub threshold: f64,
}

impl Condition {
    pub fn new(column: impl Into<String>, comparator: Comparator, threshold: f64) -> Self {
        Self { column: column.into(), comparator, threshold }
    }
}

/// Conjunction of conditions selecting the evaluation rows. The outcome
/// column cannot appear in a predicate.
pub fn evaluate_predicate(data: &Dataset, predicate: &[Condition]) -> Result<Vec<bool>> {
    let mut mask = vec![true; data.n()];
    for c in predicate {
        let j = data.column_index(&c.column).ok_or_else(|| {
            if c.column == data.outcome_name() {
                SpvimError::Config("subpopulation predicates may only use covariates".into())
            } else {
                SpvimError::Config(format!("unknown predicate column '{}'", c.column))
            }
        })?;
        for (i, keep) in mask.iter_mut().enumerate() {
            *keep &= c.comparator.holds(data.x()[(i, j)], c.threshold);
        }
    }
    Ok(mask)
}

fn default_gamma() -> f64 {
    2.0
}

fn default_alpha() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

fn default_test_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    /// Subsets sampled per evaluation row: `m = ceil(gamma n)`.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_measure")]
    pub measure: PredictivenessMeasure,
    #[serde(default = "default_learner")]
    pub learner: LearnerSpec,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub delta: f64,
    /// Run the split-sample test for every feature.
    #[serde(default = "default_true")]
    pub test: bool,
    /// Share of rows in the first test portion.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub bonferroni: bool,
    /// Constrain feature estimates to be nonnegative.
    #[serde(default)]
    pub nonnegative: bool,
    /// Partition of the features (1-based column indices) for group importance.
    #[serde(default)]
    pub groups: Option<Vec<Vec<usize>>>,
    /// Covariate predicate restricting evaluation to a subpopulation.
    #[serde(default)]
    pub subpopulation: Option<Vec<Condition>>,
}

fn default_measure() -> PredictivenessMeasure {
    PredictivenessMeasure::RSquared
}

fn default_learner() -> LearnerSpec {
    LearnerSpec::linear_ols()
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            gamma: default_gamma(),
            scheme: Scheme::default(),
            measure: default_measure(),
            learner: default_learner(),
            workers: 0,
            seed: 0,
            alpha: default_alpha(),
            delta: 0.0,
            test: true,
            test_fraction: default_test_fraction(),
            bonferroni: false,
            nonnegative: false,
            groups: None,
            subpopulation: None,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 1.0) || !self.gamma.is_finite() {
            return Err(SpvimError::Config(format!("gamma must be >= 1, got {}", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SpvimError::Config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if !(self.delta >= 0.0) {
            return Err(SpvimError::Config(format!("delta must be >= 0, got {}", self.delta)));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(SpvimError::Config("test_fraction must be in (0, 1)".into()));
        }
        self.scheme.validate()?;
        self.learner.validate()
    }

    fn check_task(&self, task: Task) -> Result<()> {
        if self.measure.needs_binary_outcome() && task != Task::Binary {
            return Err(SpvimError::Config(format!("measure {} needs a binary outcome", self.measure.name())));
        }
        if matches!(self.learner.kind, crate::learners::LearnerKind::LogisticIrls) && task != Task::Binary {
            return Err(SpvimError::Config("logistic_irls needs a binary outcome".into()));
        }
        Ok(())
    }
}

/// Disjoint groups covering every feature (0-based internally).
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    groups: Vec<Vec<usize>>,
    p: usize,
}

impl Partition {
    /// Validates 1-based column groups for `p` features.
    pub fn new(groups: &[Vec<usize>], p: usize) -> Result<Self> {
        if groups.len() < 2 {
            return Err(SpvimError::Partition(format!("need at least 2 groups, got {}", groups.len())));
        }
        let mut seen = vec![false; p];
        for (g, cols) in groups.iter().enumerate() {
            if cols.is_empty() {
                return Err(SpvimError::Partition(format!("group {} is empty", g + 1)));
            }
            for &c in cols {
                if c == 0 || c > p {
                    return Err(SpvimError::Partition(format!("column {c} outside 1..={p}")));
                }
                if std::mem::replace(&mut seen[c - 1], true) {
                    return Err(SpvimError::Partition(format!("column {c} appears in more than one group")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(SpvimError::Partition(format!("column {} is not in any group", missing + 1)));
        }
        let groups = groups
            .iter()
            .map(|g| {
                let mut g = g.clone();
                g.sort_unstable();
                g
            })
            .collect();
        Ok(Self { groups, p })
    }

    pub fn singletons(p: usize) -> Self {
        Self { groups: (1..=p).map(|j| vec![j]).collect(), p }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Union of the member groups' columns.
    pub fn expand(&self, meta: &FeatureSubset) -> FeatureSubset {
        let cols = meta.indices().iter().flat_map(|&g| self.groups[g - 1].iter().copied());
        FeatureSubset::new(cols, self.p).expect("partition columns are valid")
    }

    fn labels(&self, names: &[String]) -> Vec<String> {
        self.groups.iter().map(|g| g.iter().map(|&c| names[c - 1].as_str()).collect::<Vec<_>>().join("+")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetValue {
    pub subset: Vec<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_rows: usize,
    pub n_eval: usize,
    pub p: usize,
    pub unique_subsets: usize,
    pub draws: usize,
    pub gamma: f64,
    /// Subsets for which prediction functions were fit.
    pub fitted_subsets: usize,
    pub kkt_condition_number: f64,
    pub lambda: [f64; 2],
    pub v_empty: f64,
    pub v_full: f64,
    pub dropped_rows: usize,
    pub predictiveness: Vec<SubsetValue>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpvimResult {
    /// Labels for indices `0..=p`; index 0 is the null predictiveness.
    pub features: Vec<String>,
    pub psi: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub intervals: Vec<Interval>,
    /// Per index; `None` for index 0 and when testing is off.
    pub tests: Vec<Option<TestResult>>,
    pub covariance: CovarianceEstimate,
    pub diagnostics: Diagnostics,
    pub wall_time_secs: f64,
}

/// Output of the core estimate on one dataset.
struct CoreFit {
    dist: EmpiricalSubsetDistribution,
    estimates: Vec<PredictivenessEstimate>,
    solution: CwlsSolution,
    psi: Vec<f64>,
    cov: CovarianceEstimate,
    n_eval: usize,
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| SpvimError::Config(format!("cannot start {workers} workers: {e}")))
}

fn core_fit(
    data: &Dataset,
    config: &EstimationConfig,
    partition: &Partition,
    mask: Option<&[bool]>,
    master: u64,
    pool: &rayon::ThreadPool,
) -> Result<CoreFit> {
    let fitter = CrossFitter::new(
        &config.learner,
        data,
        config.scheme,
        config.measure,
        derive_seed(master, Stream::Folds, 0),
        mask,
    )
    .at("cross-fitting setup")?;
    let n_eval = fitter.rows().len();
    let m = (config.gamma * n_eval as f64).ceil() as usize;
    let dist =
        sample_subsets(partition.len(), m, derive_seed(master, Stream::SubsetSampling, 0)).at("subset sampling")?;

    let estimates: Vec<PredictivenessEstimate> = pool.install(|| {
        dist.subsets()
            .par_iter()
            .map(|s| fitter.estimate(&partition.expand(s)).at(format!("predictiveness of subset {s}")))
            .collect::<Result<Vec<_>>>()
    })?;
    drop(fitter);

    let v: Vec<f64> = estimates.iter().map(|e| e.value).collect();
    let constraint =
        ConstraintSystem::new(partition.len(), v[dist.empty_position()], v[dist.full_position()]).at("constraint")?;
    let solution = solve_cwls(&dist, &v, &constraint).at("constrained solve")?;
    let psi = if config.nonnegative {
        solve_cwls_nonnegative(&dist, &v, &constraint, NonnegativeOptions::default()).at("nonnegative solve")?
    } else {
        solution.psi.clone()
    };
    let cov = estimate_covariance(&dist, &estimates, &solution, &constraint).at("covariance")?;
    Ok(CoreFit { dist, estimates, solution, psi, cov, n_eval })
}

/// Row split for the test: stratified by outcome for binary tasks.
fn test_split(data: &Dataset, fraction: f64, master: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = stream_rng(master, Stream::TestSplit, 0);
    let n = data.n();
    let y = data.y();
    let strata: Vec<Vec<usize>> = match data.task() {
        Task::Binary => vec![(0..n).filter(|&i| y[i] == 0.0).collect(), (0..n).filter(|&i| y[i] != 0.0).collect()],
        Task::Regression => vec![(0..n).collect()],
    };
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for mut rows in strata {
        rows.shuffle(&mut rng);
        let cut = (fraction * rows.len() as f64).round() as usize;
        first.extend_from_slice(&rows[..cut]);
        second.extend_from_slice(&rows[cut..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    (first, second)
}

fn split_tests(
    data: &Dataset,
    config: &EstimationConfig,
    partition: &Partition,
    mask: Option<&[bool]>,
    pool: &rayon::ThreadPool,
    warnings: &mut Vec<String>,
) -> Result<Vec<Option<TestResult>>> {
    let (rows1, rows2) = test_split(data, config.test_fraction, config.seed);
    let sub_mask = |rows: &[usize]| mask.map(|m| rows.iter().map(|&r| m[r]).collect::<Vec<bool>>());
    let portion_seed = derive_seed(config.seed, Stream::TestSplit, 1);

    let d1 = data.select_rows(&rows1);
    let m1 = sub_mask(&rows1);
    let fit1 = core_fit(&d1, config, partition, m1.as_deref(), portion_seed, pool).at("test portion 1")?;

    let d2 = data.select_rows(&rows2);
    let m2 = sub_mask(&rows2);
    let null = CrossFitter::new(
        &config.learner,
        &d2,
        config.scheme,
        config.measure,
        derive_seed(portion_seed, Stream::Folds, 1),
        m2.as_deref(),
    )
    .and_then(|f| f.estimate(&FeatureSubset::empty(data.p())))
    .at("test portion 2")?;
    let n2 = null.rows.len();
    let variance = null.influence.iter().map(|v| v * v).sum::<f64>() / n2 as f64;

    let portion1 = TestPortion {
        psi: fit1.psi.clone(),
        sigma_diag: (0..=partition.len()).map(|j| fit1.cov.sigma[(j, j)]).collect(),
        n: fit1.n_eval,
    };
    let portion2 = NullPortion { value: null.value, variance, n: n2 };
    let alpha = if config.bonferroni { config.alpha / partition.len() as f64 } else { config.alpha };
    let mut tests = vec![None];
    for j in 1..=partition.len() {
        match spvim_test(&portion1, &portion2, j, config.delta, alpha) {
            Ok(t) => tests.push(Some(t)),
            Err(e @ SpvimError::DegenerateVariance { .. }) => {
                warnings.push(e.to_string());
                tests.push(None);
            }
            Err(e) => return Err(e.at("split test")),
        }
    }
    Ok(tests)
}

fn run(
    data: &Dataset,
    config: &EstimationConfig,
    partition: &Partition,
    labels: Vec<String>,
    mask: Option<Vec<bool>>,
) -> Result<SpvimResult> {
    let start = Instant::now();
    config.validate()?;
    config.check_task(data.task())?;
    let pool = thread_pool(config.workers)?;
    let p = partition.len();
    let fit = core_fit(data, config, partition, mask.as_deref(), config.seed, &pool)?;

    let mut warnings = fit.cov.warnings.clone();
    if fit.n_eval < ROWS_PER_FEATURE * (p + 1) {
        warnings.push(format!(
            "{} evaluation rows for {p} features; at least {} are recommended",
            fit.n_eval,
            ROWS_PER_FEATURE * (p + 1)
        ));
    }
    if let Some(j) = (1..=p).find(|&j| fit.psi[j] < 0.0) {
        warnings.push(format!(
            "negative estimate for {} (and possibly others); negative estimates are usually close to zero",
            labels[j]
        ));
    }
    if config.nonnegative {
        warnings.push("nonnegative solve: standard errors are those of the unconstrained estimate".into());
    }
    let (intervals, iv_warnings) = wald_intervals(&fit.psi, &fit.cov, config.alpha)?;
    warnings.extend(iv_warnings);

    let tests = if config.test {
        split_tests(data, config, partition, mask.as_deref(), &pool, &mut warnings)?
    } else {
        vec![None; p + 1]
    };

    let empty = fit.dist.empty_position();
    let full = fit.dist.full_position();
    let diagnostics = Diagnostics {
        n_rows: data.n(),
        n_eval: fit.n_eval,
        p,
        unique_subsets: fit.dist.len(),
        draws: fit.dist.draws(),
        gamma: fit.cov.gamma,
        fitted_subsets: fit.estimates.len(),
        kkt_condition_number: fit.solution.kkt_condition_number,
        lambda: fit.solution.lambda,
        v_empty: fit.estimates[empty].value,
        v_full: fit.estimates[full].value,
        dropped_rows: data.dropped_rows(),
        predictiveness: fit
            .dist
            .subsets()
            .iter()
            .zip(&fit.estimates)
            .map(|(s, e)| SubsetValue { subset: s.indices().to_vec(), value: e.value })
            .collect(),
        warnings,
    };
    Ok(SpvimResult {
        features: labels,
        std_errors: fit.cov.std_errors(),
        psi: fit.psi,
        intervals,
        tests,
        covariance: fit.cov,
        diagnostics,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

fn labels_with_null(mut names: Vec<String>) -> Vec<String> {
    names.insert(0, "(null)".into());
    names
}

/// Feature-level estimate. Group and subpopulation settings in `config` are
/// honored, so this is the single entry point the CLI uses.
pub fn estimate_spvim(data: &Dataset, config: &EstimationConfig) -> Result<SpvimResult> {
    match (&config.groups, &config.subpopulation) {
        (Some(groups), _) => {
            let groups = groups.clone();
            group_spvim(data, &groups, config)
        }
        (None, Some(predicate)) => subpopulation_spvim(data, predicate, config),
        (None, None) => {
            run(data, config, &Partition::singletons(data.p()), labels_with_null(data.names().to_vec()), None)
        }
    }
}

/// Importance of feature groups: each group acts as one player.
pub fn group_spvim(data: &Dataset, partition: &[Vec<usize>], config: &EstimationConfig) -> Result<SpvimResult> {
    let partition = Partition::new(partition, data.p())?;
    let labels = labels_with_null(partition.labels(data.names()));
    let mask = match &config.subpopulation {
        Some(pred) => Some(subpopulation_mask(data, pred, partition.len())?),
        None => None,
    };
    run(data, config, &partition, labels, mask)
}

fn subpopulation_mask(data: &Dataset, predicate: &[Condition], p: usize) -> Result<Vec<bool>> {
    let mask = evaluate_predicate(data, predicate)?;
    let count = mask.iter().filter(|&&m| m).count();
    let needed = ROWS_PER_FEATURE * (p + 1);
    match count {
        0 => Err(SpvimError::SubpopulationSize("the predicate selects no rows".into())),
        1 => Err(SpvimError::SubpopulationSize(
            "the predicate selects a single observation; importance for one observation has no valid \
             inference, widen the predicate"
                .into(),
        )),
        c if c < needed => Err(SpvimError::SubpopulationSize(format!(
            "the predicate selects {c} rows; at least {needed} are needed for {p} features"
        ))),
        _ => Ok(mask),
    }
}

/// Importance within the subpopulation selected by `predicate`: models train
/// on every row, predictiveness is evaluated on the selected rows only.
pub fn subpopulation_spvim(data: &Dataset, predicate: &[Condition], config: &EstimationConfig) -> Result<SpvimResult> {
    let mask = subpopulation_mask(data, predicate, data.p())?;
    run(data, config, &Partition::singletons(data.p()), labels_with_null(data.names().to_vec()), Some(mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_validation() {
        assert!(Partition::new(&[vec![1, 2], vec![3]], 3).is_ok());
        assert!(matches!(Partition::new(&[vec![1, 2], vec![2, 3]], 3), Err(SpvimError::Partition(_))));
        assert!(matches!(Partition::new(&[vec![1], vec![2]], 3), Err(SpvimError::Partition(_))));
        assert!(matches!(Partition::new(&[vec![1, 2, 3]], 3), Err(SpvimError::Partition(_))));
        assert!(matches!(Partition::new(&[vec![1, 4], vec![2, 3]], 3), Err(SpvimError::Partition(_))));
        let part = Partition::new(&[vec![3, 1], vec![2]], 3).unwrap();
        let meta = FeatureSubset::new([1], 2).unwrap();
        assert_eq!(part.expand(&meta).indices(), &[1, 3]);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = EstimationConfig::default();
        assert_eq!(c.gamma, 2.0);
        assert_eq!(c.scheme, Scheme::Kfold { k: 5 });
        c.validate().unwrap();
        let bad = EstimationConfig { gamma: 0.5, ..Default::default() };
        assert_eq!(bad.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn config_parses_from_toml() {
        let c: EstimationConfig = toml::from_str(
            r#"
            gamma = 3
            measure = "auc"
            seed = 11
            learner = { kind = "logistic_irls", ridge = 0.1 }
            subpopulation = [{ column = "x1", comparator = ">", threshold = 0.0 }]
            "#,
        )
        .unwrap();
        assert_eq!(c.gamma, 3.0);
        assert_eq!(c.measure, PredictivenessMeasure::Auc);
        assert_eq!(c.learner.ridge, 0.1);
        assert_eq!(c.subpopulation.unwrap()[0].comparator, Comparator::Gt);
        assert!(toml::from_str::<EstimationConfig>("gama = 3").is_err());
    }
}
