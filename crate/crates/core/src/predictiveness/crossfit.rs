//! Cross-fitted and split-sample predictiveness estimates.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::measure::{measure_value_and_influence, PredictivenessMeasure};
use crate::data::{Dataset, Task};
use crate::error::{Result, SpvimError};
use crate::kernel::FeatureSubset;
use crate::learners::{LearnerSpec, PreparedLearner};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Scheme {
    /// Train on `fraction` of the rows, evaluate on the rest.
    Split { fraction: f64 },
    /// K-fold cross-fitting.
    Kfold { k: usize },
}

impl Default for Scheme {
    fn default() -> Self {
        Scheme::Kfold { k: 5 }
    }
}

impl Scheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Scheme::Split { fraction } if !(fraction > 0.0 && fraction < 1.0) => {
                Err(SpvimError::Config(format!("split fraction must be in (0, 1), got {fraction}")))
            }
            Scheme::Kfold { k } if k < 2 => Err(SpvimError::Config(format!("need at least 2 folds, got {k}"))),
            _ => Ok(()),
        }
    }

    fn groups(&self) -> usize {
        match *self {
            Scheme::Split { .. } => 2,
            Scheme::Kfold { k } => k,
        }
    }

    fn min_rows(&self) -> usize {
        4 * self.groups()
    }
}

/// Fold label per row. For binary outcomes each class is shuffled and dealt
/// out separately so every fold sees both classes.
pub fn make_folds(y: &[f64], task: Task, scheme: Scheme, seed: u64) -> Vec<usize> {
    let mut rng = stream_rng(seed, Stream::Folds, 0);
    let n = y.len();
    let strata: Vec<Vec<usize>> = match task {
        Task::Binary => vec![(0..n).filter(|&i| y[i] == 0.0).collect(), (0..n).filter(|&i| y[i] != 0.0).collect()],
        Task::Regression => vec![(0..n).collect()],
    };
    let mut fold = vec![0; n];
    // dealing continues where the previous stratum stopped to keep folds balanced
    let mut offset = 0;
    for mut rows in strata {
        rows.shuffle(&mut rng);
        match scheme {
            Scheme::Kfold { k } => {
                for (pos, &r) in rows.iter().enumerate() {
                    fold[r] = (offset + pos) % k;
                }
                offset += rows.len();
            }
            Scheme::Split { fraction } => {
                let n_train = (fraction * rows.len() as f64).round() as usize;
                for (pos, &r) in rows.iter().enumerate() {
                    fold[r] = usize::from(pos >= n_train);
                }
            }
        }
    }
    fold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictivenessEstimate {
    pub subset: FeatureSubset,
    pub value: f64,
    /// Influence values, aligned with `rows`.
    pub influence: Vec<f64>,
    /// Fold of each evaluation row.
    pub fold_assignment: Vec<usize>,
    /// Evaluation row indices (ascending).
    pub rows: Vec<usize>,
}

/// Everything about cross-fitting that does not depend on the subset: the
/// fold plan, which rows are evaluated, and the prepared learner.
pub struct CrossFitter<'a> {
    data: &'a Dataset,
    measure: PredictivenessMeasure,
    /// (fold, evaluation rows of that fold) for each fold that is evaluated.
    eval_folds: Vec<(usize, Vec<usize>)>,
    learner: PreparedLearner<'a>,
    rows: Vec<usize>,
    fold_of_row: Vec<usize>,
    kfold: bool,
}

impl<'a> CrossFitter<'a> {
    /// `eval_mask`, when given, restricts evaluation (not training) to the
    /// flagged rows.
    pub fn new(
        learner: &LearnerSpec,
        data: &'a Dataset,
        scheme: Scheme,
        measure: PredictivenessMeasure,
        seed: u64,
        eval_mask: Option<&[bool]>,
    ) -> Result<Self> {
        scheme.validate()?;
        let n = data.n();
        if n < scheme.min_rows() {
            return Err(SpvimError::Data(format!(
                "{n} rows is too few for {} folds (need at least {})",
                scheme.groups(),
                scheme.min_rows()
            )));
        }
        if measure.needs_binary_outcome() && data.task() != Task::Binary {
            return Err(SpvimError::Config(format!("{} needs a binary outcome", measure.name())));
        }
        let folds = make_folds(data.y(), data.task(), scheme, seed);
        let evaluated = |i: usize| eval_mask.is_none_or(|m| m[i]);
        let (splits, eval_folds, kfold) = match scheme {
            Scheme::Kfold { k } => {
                let mut splits = Vec::with_capacity(k);
                let mut eval_folds = Vec::with_capacity(k);
                for f in 0..k {
                    let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
                    let eval: Vec<usize> = (0..n).filter(|&i| folds[i] == f && evaluated(i)).collect();
                    eval_folds.push((f, eval.clone()));
                    splits.push((train, eval));
                }
                (splits, eval_folds, true)
            }
            Scheme::Split { .. } => {
                let train: Vec<usize> = (0..n).filter(|&i| folds[i] == 0).collect();
                let eval: Vec<usize> = (0..n).filter(|&i| folds[i] == 1 && evaluated(i)).collect();
                (vec![(train, eval.clone())], vec![(1, eval)], false)
            }
        };
        for (f, eval) in &eval_folds {
            if eval.len() < 2 {
                return Err(SpvimError::DegenerateFold {
                    fold: *f,
                    reason: format!("only {} evaluation rows", eval.len()),
                });
            }
        }
        let mut rows: Vec<usize> = eval_folds.iter().flat_map(|(_, e)| e.iter().copied()).collect();
        rows.sort_unstable();
        let fold_of_row = rows.iter().map(|&r| folds[r]).collect();
        let learner = PreparedLearner::new(learner, data.x(), data.y(), data.task(), splits, seed)?;
        Ok(Self { data, measure, eval_folds, learner, rows, fold_of_row, kfold })
    }

    /// Evaluation rows shared by every estimate from this cross-fitter.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn estimate(&self, subset: &FeatureSubset) -> Result<PredictivenessEstimate> {
        if subset.p() != self.data.p() {
            return Err(SpvimError::InvalidArgument(format!(
                "subset over {} features for data with {}",
                subset.p(),
                self.data.p()
            )));
        }
        let y = self.data.y();
        let mut influence_by_row = vec![0.0; self.data.n()];
        let mut total = 0.0;
        for (split, (fold, eval)) in self.eval_folds.iter().enumerate() {
            let predictions = self.learner.predict_split(subset, split)?;
            let outcomes: Vec<f64> = eval.iter().map(|&r| y[r]).collect();
            let (value, infl) =
                measure_value_and_influence(self.measure, &predictions, &outcomes).map_err(|e| match e {
                    SpvimError::DegenerateOutcome(reason) => SpvimError::DegenerateFold { fold: *fold, reason },
                    other => other,
                })?;
            total += value;
            for (&r, v) in eval.iter().zip(infl) {
                influence_by_row[r] = v;
            }
        }
        let value = total / self.eval_folds.len() as f64;
        let influence = self.rows.iter().map(|&r| influence_by_row[r]).collect();
        let fold_assignment = if self.kfold { self.fold_of_row.clone() } else { vec![0; self.rows.len()] };
        Ok(PredictivenessEstimate {
            subset: subset.clone(),
            value,
            influence,
            fold_assignment,
            rows: self.rows.clone(),
        })
    }
}

/// One-shot cross-fitted estimate for a single subset.
pub fn cross_fit_predictiveness(
    learner: &LearnerSpec,
    data: &Dataset,
    subset: &FeatureSubset,
    scheme: Scheme,
    measure: PredictivenessMeasure,
    seed: u64,
) -> Result<PredictivenessEstimate> {
    CrossFitter::new(learner, data, scheme, measure, seed, None)?.estimate(subset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn linear_data(n: usize, seed: u64) -> Dataset {
        let mut rng = stream_rng(seed, Stream::Simulation, 0);
        let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = (0..n).map(|i| x[(i, 0)] + rng.sample::<f64, _>(StandardNormal)).collect();
        Dataset::new(vec!["x1".into(), "x2".into()], x, y, Task::Regression).unwrap()
    }

    #[test]
    fn folds_are_balanced_and_stratified() {
        let y: Vec<f64> = (0..103).map(|i| f64::from(u8::from(i % 10 == 0))).collect();
        let folds = make_folds(&y, Task::Binary, Scheme::Kfold { k: 5 }, 1);
        for f in 0..5 {
            let size = folds.iter().filter(|&&x| x == f).count();
            assert!((20..=21).contains(&size));
            let pos = (0..103).filter(|&i| folds[i] == f && y[i] == 1.0).count();
            assert!((2..=3).contains(&pos));
        }
        assert_eq!(folds, make_folds(&y, Task::Binary, Scheme::Kfold { k: 5 }, 1));
    }

    #[test]
    fn empty_subset_r2_is_near_zero() {
        let d = linear_data(2000, 3);
        let est = cross_fit_predictiveness(
            &LearnerSpec::linear_ols(),
            &d,
            &FeatureSubset::empty(2),
            Scheme::default(),
            PredictivenessMeasure::RSquared,
            1,
        )
        .unwrap();
        assert!(est.value.abs() <= 0.05);
        assert_eq!(est.rows.len(), 2000);
        assert!(est.influence.iter().sum::<f64>().abs() / 2000.0 < 1e-8);
    }

    #[test]
    fn signal_subset_r2_matches_analytic() {
        let d = linear_data(5000, 4);
        let s = FeatureSubset::new([1], 2).unwrap();
        let est = cross_fit_predictiveness(
            &LearnerSpec::linear_ols(),
            &d,
            &s,
            Scheme::default(),
            PredictivenessMeasure::RSquared,
            1,
        )
        .unwrap();
        assert!((est.value - 0.5).abs() < 0.03, "{}", est.value);
    }

    #[test]
    fn split_scheme_evaluates_validation_rows_only() {
        let d = linear_data(100, 5);
        let est = cross_fit_predictiveness(
            &LearnerSpec::linear_ols(),
            &d,
            &FeatureSubset::full(2),
            Scheme::Split { fraction: 0.7 },
            PredictivenessMeasure::RSquared,
            2,
        )
        .unwrap();
        assert_eq!(est.rows.len(), 30);
    }

    #[test]
    fn auc_on_empty_subset_is_one_half() {
        let mut rng = stream_rng(9, Stream::Simulation, 0);
        let n = 2000;
        let x = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = (0..n).map(|_| f64::from(u8::from(rng.random::<f64>() < 0.3))).collect();
        let d = Dataset::new(vec!["x".into()], x, y, Task::Binary).unwrap();
        let est = cross_fit_predictiveness(
            &LearnerSpec::logistic_irls(),
            &d,
            &FeatureSubset::empty(1),
            Scheme::default(),
            PredictivenessMeasure::Auc,
            3,
        )
        .unwrap();
        assert!((est.value - 0.5).abs() < 0.05);
    }

    #[test]
    fn single_class_fold_is_named() {
        let x = DMatrix::from_fn(40, 1, |i, _| i as f64);
        let mut y = vec![0.0; 40];
        y[0] = 1.0;
        let d = Dataset::new(vec!["x".into()], x, y, Task::Binary).unwrap();
        let err = cross_fit_predictiveness(
            &LearnerSpec::logistic_irls(),
            &d,
            &FeatureSubset::full(1),
            Scheme::default(),
            PredictivenessMeasure::Auc,
            3,
        )
        .unwrap_err();
        assert!(matches!(err, SpvimError::DegenerateFold { .. }), "{err}");
    }
}
