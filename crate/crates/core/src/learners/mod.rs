//! Prediction-function fitting for a feature subset.
//!
//! Built-in learners work on an expanded design: an intercept column plus, for
//! each feature, either the raw value or a block of step indicators. Only the
//! blocks of features in the subset are used, so predictions ignore every
//! other column.

pub mod linear;
pub mod logistic;
pub mod runner;

use std::ops::Range;
use std::sync::Mutex;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Result, SpvimError};
use crate::kernel::FeatureSubset;
pub use runner::{RunnerMessage, RunnerSession};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerKind {
    MeanOnly,
    LinearOls,
    LogisticIrls,
    External {
        command: String,
        #[serde(default)]
        args: Vec<String>,
    },
}

/// Per-feature basis used by the built-in regression learners.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Basis {
    #[default]
    Linear,
    /// Indicators of the intervals `(b_i, b_{i+1}]` and `(b_last, inf)`; the
    /// lowest interval is the baseline absorbed by the intercept.
    Steps { breakpoints: Vec<f64> },
}

impl Basis {
    fn width(&self) -> usize {
        match self {
            Basis::Linear => 1,
            Basis::Steps { breakpoints } => breakpoints.len(),
        }
    }

    fn fill(&self, value: f64, out: &mut [f64]) {
        match self {
            Basis::Linear => out[0] = value,
            Basis::Steps { breakpoints } => {
                for (i, slot) in out.iter_mut().enumerate() {
                    let above = value > breakpoints[i];
                    let below_next = breakpoints.get(i + 1).is_none_or(|&b| value <= b);
                    *slot = f64::from(u8::from(above && below_next));
                }
            }
        }
    }
}

fn default_max_iter() -> usize {
    100
}

fn default_tol() -> f64 {
    1e-8
}

fn default_true() -> bool {
    true
}

fn default_timeout() -> f64 {
    DEFAULT_RUNNER_TIMEOUT_SECS
}

pub const DEFAULT_RUNNER_TIMEOUT_SECS: f64 = 120.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    #[serde(flatten)]
    pub kind: LearnerKind,
    #[serde(default)]
    pub ridge: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub basis: Basis,
    /// Fall back to a tiny ridge penalty when the OLS Gram matrix is
    /// numerically singular.
    #[serde(default = "default_true")]
    pub ridge_fallback: bool,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind) -> Self {
        Self {
            kind,
            ridge: 0.0,
            max_iter: default_max_iter(),
            tol: default_tol(),
            basis: Basis::Linear,
            ridge_fallback: true,
            timeout_secs: DEFAULT_RUNNER_TIMEOUT_SECS,
        }
    }

    pub fn mean_only() -> Self {
        Self::new(LearnerKind::MeanOnly)
    }

    pub fn linear_ols() -> Self {
        Self::new(LearnerKind::LinearOls)
    }

    pub fn logistic_irls() -> Self {
        Self::new(LearnerKind::LogisticIrls)
    }

    pub fn external(command: impl Into<String>, args: Vec<String>) -> Self {
        Self::new(LearnerKind::External { command: command.into(), args })
    }

    pub fn with_basis(mut self, basis: Basis) -> Self {
        self.basis = basis;
        self
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = ridge;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(SpvimError::Config(format!("ridge penalty must be >= 0, got {}", self.ridge)));
        }
        if self.max_iter == 0 {
            return Err(SpvimError::Config("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(SpvimError::Config("tol must be positive".into()));
        }
        if let Basis::Steps { breakpoints } = &self.basis {
            if breakpoints.is_empty() || breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(SpvimError::Config("breakpoints must be non-empty and increasing".into()));
            }
        }
        if let LearnerKind::External { command, .. } = &self.kind {
            if command.trim().is_empty() {
                return Err(SpvimError::Config("external learner needs a command".into()));
            }
        }
        if !(self.timeout_secs > 0.0) {
            return Err(SpvimError::Config("timeout_secs must be positive".into()));
        }
        Ok(())
    }

    pub fn is_external(&self) -> bool {
        matches!(self.kind, LearnerKind::External { .. })
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn start_session(&self) -> Result<RunnerSession> {
        match &self.kind {
            LearnerKind::External { command, args } => RunnerSession::start(command, args, self.timeout()),
            _ => Err(SpvimError::InvalidArgument("not an external learner".into())),
        }
    }
}

/// Expanded design: intercept in column 0, then one block per feature.
#[derive(Debug, Clone)]
pub struct Design {
    matrix: DMatrix<f64>,
    blocks: Vec<Range<usize>>,
}

impl Design {
    pub fn new(x: &DMatrix<f64>, basis: &Basis) -> Self {
        let (n, p) = x.shape();
        let w = basis.width();
        let mut matrix = DMatrix::zeros(n, 1 + p * w);
        matrix.column_mut(0).fill(1.0);
        let mut buf = vec![0.0; w];
        for j in 0..p {
            for i in 0..n {
                basis.fill(x[(i, j)], &mut buf);
                for (t, v) in buf.iter().enumerate() {
                    matrix[(i, 1 + j * w + t)] = *v;
                }
            }
        }
        let blocks = (0..p).map(|j| (1 + j * w)..(1 + (j + 1) * w)).collect();
        Self { matrix, blocks }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Design columns used by a subset (intercept first).
    pub fn columns(&self, subset: &FeatureSubset) -> Vec<usize> {
        let mut cols = vec![0];
        for &j in subset.indices() {
            cols.extend(self.blocks[j - 1].clone());
        }
        cols
    }
}

fn check_shapes(subset: &FeatureSubset, train_x: &DMatrix<f64>, train_y: &[f64], eval_x: &DMatrix<f64>) -> Result<()> {
    if train_x.nrows() != train_y.len() {
        return Err(SpvimError::InvalidArgument(format!(
            "{} training rows but {} outcomes",
            train_x.nrows(),
            train_y.len()
        )));
    }
    if train_x.ncols() != subset.p() || eval_x.ncols() != subset.p() {
        return Err(SpvimError::InvalidArgument(format!(
            "subset is over {} features but the data has {} columns",
            subset.p(),
            train_x.ncols()
        )));
    }
    if train_y.is_empty() {
        return Err(SpvimError::InvalidArgument("no training rows".into()));
    }
    Ok(())
}

fn mean(y: &[f64]) -> f64 {
    y.iter().sum::<f64>() / y.len() as f64
}

/// Fits on the subset columns of `train_x` and predicts `eval_x`. The empty
/// subset always gets the training mean, whatever the learner.
pub fn fit_predict(
    spec: &LearnerSpec,
    subset: &FeatureSubset,
    train_x: &DMatrix<f64>,
    train_y: &[f64],
    task: Task,
    eval_x: &DMatrix<f64>,
    seed: u64,
) -> Result<Vec<f64>> {
    spec.validate()?;
    check_shapes(subset, train_x, train_y, eval_x)?;
    if subset.is_empty() || matches!(spec.kind, LearnerKind::MeanOnly) {
        return Ok(vec![mean(train_y); eval_x.nrows()]);
    }
    if let LearnerKind::External { .. } = spec.kind {
        let mut session = spec.start_session()?;
        session.fit(subset, train_x, train_y, task, seed)?;
        let predictions = session.predict(eval_x)?;
        session.shutdown()?;
        return Ok(predictions);
    }
    let train = Design::new(train_x, &spec.basis);
    let eval = Design::new(eval_x, &spec.basis);
    let cols = train.columns(subset);
    let xt = train.matrix.select_columns(&cols);
    let xe = eval.matrix.select_columns(&cols);
    let beta = fit_columns(spec, &xt, train_y)?;
    Ok(predict_columns(spec, &xe, &beta))
}

fn fit_columns(spec: &LearnerSpec, x: &DMatrix<f64>, y: &[f64]) -> Result<DVector<f64>> {
    match spec.kind {
        LearnerKind::LinearOls => {
            let yv = DVector::from_column_slice(y);
            linear::solve_normal_equations(&(x.transpose() * x), &(x.transpose() * yv), spec.ridge, spec.ridge_fallback)
        }
        LearnerKind::LogisticIrls => {
            let fit = logistic::fit_irls(x, y, spec.ridge, spec.max_iter, spec.tol)?;
            if !fit.converged {
                log::debug!("IRLS stopped after {} iterations without converging", fit.iterations);
            }
            Ok(fit.beta)
        }
        _ => unreachable!("only built-in parametric learners reach fit_columns"),
    }
}

fn predict_columns(spec: &LearnerSpec, x: &DMatrix<f64>, beta: &DVector<f64>) -> Vec<f64> {
    let eta = x * beta;
    match spec.kind {
        LearnerKind::LogisticIrls => eta.iter().map(|&e| logistic::sigmoid(e)).collect(),
        _ => eta.iter().copied().collect(),
    }
}

/// A learner bound to one dataset and a fixed set of (train, eval) row
/// splits. Work that does not depend on the subset (the expanded design, and
/// for OLS the per-split Gram matrix) is done once; external learners keep a
/// small pool of runner sessions.
pub struct PreparedLearner<'a> {
    spec: LearnerSpec,
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    task: Task,
    splits: Vec<(Vec<usize>, Vec<usize>)>,
    design: Option<Design>,
    grams: Vec<(DMatrix<f64>, DVector<f64>)>,
    sessions: Mutex<Vec<RunnerSession>>,
    seed: u64,
}

impl<'a> PreparedLearner<'a> {
    pub fn new(
        spec: &LearnerSpec,
        x: &'a DMatrix<f64>,
        y: &'a [f64],
        task: Task,
        splits: Vec<(Vec<usize>, Vec<usize>)>,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let builtin = matches!(spec.kind, LearnerKind::LinearOls | LearnerKind::LogisticIrls);
        let design = builtin.then(|| Design::new(x, &spec.basis));
        let mut grams = Vec::new();
        if let (LearnerKind::LinearOls, Some(d)) = (&spec.kind, &design) {
            for (train, _) in &splits {
                let xt = d.matrix.select_rows(train);
                let yt = DVector::from_iterator(train.len(), train.iter().map(|&r| y[r]));
                grams.push((xt.transpose() * &xt, xt.transpose() * yt));
            }
        }
        Ok(Self { spec: spec.clone(), x, y, task, splits, design, grams, sessions: Mutex::new(Vec::new()), seed })
    }

    pub fn splits(&self) -> &[(Vec<usize>, Vec<usize>)] {
        &self.splits
    }

    /// Predictions for the eval rows of split `k` from a model fit on its
    /// train rows.
    pub fn predict_split(&self, subset: &FeatureSubset, k: usize) -> Result<Vec<f64>> {
        let (train, eval) = &self.splits[k];
        if subset.is_empty() || matches!(self.spec.kind, LearnerKind::MeanOnly) {
            let m = train.iter().map(|&r| self.y[r]).sum::<f64>() / train.len() as f64;
            return Ok(vec![m; eval.len()]);
        }
        match &self.spec.kind {
            LearnerKind::LinearOls => {
                let design = self.design.as_ref().expect("built-in learners have a design");
                let cols = design.columns(subset);
                let (gram, xty) = &self.grams[k];
                let g = gram.select_rows(&cols).select_columns(&cols);
                let b = DVector::from_iterator(cols.len(), cols.iter().map(|&c| xty[c]));
                let beta = linear::solve_normal_equations(&g, &b, self.spec.ridge, self.spec.ridge_fallback)?;
                Ok(eval
                    .iter()
                    .map(|&r| cols.iter().zip(beta.iter()).map(|(&c, b)| design.matrix[(r, c)] * b).sum())
                    .collect())
            }
            LearnerKind::LogisticIrls => {
                let design = self.design.as_ref().expect("built-in learners have a design");
                let cols = design.columns(subset);
                let xt = design.matrix.select_rows(train).select_columns(&cols);
                let yt: Vec<f64> = train.iter().map(|&r| self.y[r]).collect();
                let beta = fit_columns(&self.spec, &xt, &yt)?;
                let xe = design.matrix.select_rows(eval).select_columns(&cols);
                Ok(predict_columns(&self.spec, &xe, &beta))
            }
            LearnerKind::External { .. } => {
                let pooled = self.sessions.lock().expect("session pool").pop();
                let mut session = match pooled {
                    Some(s) => s,
                    None => self.spec.start_session()?,
                };
                let xt = self.x.select_rows(train);
                let yt: Vec<f64> = train.iter().map(|&r| self.y[r]).collect();
                session.fit(subset, &xt, &yt, self.task, self.seed)?;
                let out = session.predict(&self.x.select_rows(eval))?;
                self.sessions.lock().expect("session pool").push(session);
                Ok(out)
            }
            LearnerKind::MeanOnly => unreachable!(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subset(ix: &[usize], p: usize) -> FeatureSubset {
        FeatureSubset::new(ix.iter().copied(), p).unwrap()
    }

    #[test]
    fn mean_only_predicts_training_mean() {
        let x = DMatrix::zeros(3, 2);
        let e = DMatrix::zeros(2, 2);
        let f = fit_predict(&LearnerSpec::mean_only(), &subset(&[1], 2), &x, &[1.0, 2.0, 3.0], Task::Regression, &e, 0)
            .unwrap();
        assert_eq!(f, vec![2.0, 2.0]);
    }

    #[test]
    fn ols_interpolates_noiseless_line() {
        let x = DMatrix::from_fn(10, 2, |i, j| (i as f64 + 1.0) * if j == 0 { 0.3 } else { -1.7 } + j as f64);
        let y: Vec<f64> = (0..10).map(|i| 2.0 * x[(i, 0)]).collect();
        let e = DMatrix::from_row_slice(2, 2, &[5.0, 100.0, -1.0, 7.0]);
        let f = fit_predict(&LearnerSpec::linear_ols(), &subset(&[1], 2), &x, &y, Task::Regression, &e, 0).unwrap();
        assert!((f[0] - 10.0).abs() < 1e-10 && (f[1] + 2.0).abs() < 1e-10);
    }

    #[test]
    fn predictions_ignore_columns_outside_subset() {
        let x = DMatrix::from_fn(30, 3, |i, j| ((i * 7 + j * 13) % 11) as f64 - 5.0);
        let y: Vec<f64> = (0..30).map(|i| x[(i, 0)] - 0.5 * x[(i, 2)] + (i % 3) as f64).collect();
        let e = DMatrix::from_row_slice(2, 3, &[1.0, 9.0, -2.0, 1.0, -40.0, -2.0]);
        for spec in [
            LearnerSpec::linear_ols(),
            LearnerSpec::linear_ols().with_basis(Basis::Steps { breakpoints: vec![-2.0, 0.0, 2.0] }),
        ] {
            let f = fit_predict(&spec, &subset(&[1, 3], 3), &x, &y, Task::Regression, &e, 0).unwrap();
            assert_eq!(f[0], f[1]);
        }
    }

    #[test]
    fn logistic_outputs_probabilities_and_beats_mean() {
        let n = 20;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / 2.0 - 4.75);
        let y: Vec<f64> = (0..n).map(|i| f64::from(u8::from(i >= 10))).collect();
        let spec = LearnerSpec::logistic_irls().with_ridge(0.1);
        let s = subset(&[1], 1);
        let f = fit_predict(&spec, &s, &x, &y, Task::Binary, &x, 0).unwrap();
        assert!(f.iter().all(|&v| v > 0.0 && v < 1.0));
        let logloss = |f: &[f64]| -> f64 {
            f.iter().zip(&y).map(|(p, yi)| -(yi * p.ln() + (1.0 - yi) * (1.0 - p).ln())).sum::<f64>()
        };
        let m = fit_predict(&LearnerSpec::mean_only(), &s, &x, &y, Task::Binary, &x, 0).unwrap();
        assert!(logloss(&f) < logloss(&m));
    }

    #[test]
    fn step_basis_indicators() {
        let b = Basis::Steps { breakpoints: vec![-1.0, 0.0, 1.0] };
        let mut out = [0.0; 3];
        b.fill(-5.0, &mut out);
        assert_eq!(out, [0.0, 0.0, 0.0]);
        b.fill(-0.5, &mut out);
        assert_eq!(out, [1.0, 0.0, 0.0]);
        b.fill(0.0, &mut out);
        assert_eq!(out, [1.0, 0.0, 0.0]);
        b.fill(0.5, &mut out);
        assert_eq!(out, [0.0, 1.0, 0.0]);
        b.fill(3.0, &mut out);
        assert_eq!(out, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn prepared_ols_matches_direct_fit() {
        let x = DMatrix::from_fn(40, 3, |i, j| (((i + 1) * (j + 3) * 37) % 17) as f64 / 4.0 - 2.0);
        let y: Vec<f64> = (0..40).map(|i| x[(i, 1)] * 0.7 + ((i * 5) % 7) as f64 * 0.1).collect();
        let train: Vec<usize> = (0..30).collect();
        let eval: Vec<usize> = (30..40).collect();
        let spec = LearnerSpec::linear_ols();
        let prepared =
            PreparedLearner::new(&spec, &x, &y, Task::Regression, vec![(train.clone(), eval.clone())], 0).unwrap();
        let s = subset(&[2, 3], 3);
        let a = prepared.predict_split(&s, 0).unwrap();
        let yt: Vec<f64> = train.iter().map(|&r| y[r]).collect();
        let b =
            fit_predict(&spec, &s, &x.select_rows(&train), &yt, Task::Regression, &x.select_rows(&eval), 0).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
    }
}
