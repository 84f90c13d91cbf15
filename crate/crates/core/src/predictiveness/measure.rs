//! Predictiveness measures and their influence functions, evaluated at the
//! empirical distribution of the evaluation rows.
//!
//! With `MSE`, `var` and `mean` the evaluation-set moments:
//!
//! * R-squared `1 - MSE/var`:
//!   `phi = -((y - f)^2 - MSE)/var + MSE/var^2 * ((y - mean)^2 - var)`
//! * accuracy (class 1 iff `f >= 0.5`): `phi = 1{class = y} - V`
//! * AUC, with `pi1` the prevalence and `G0(t)` / `G1(t)` the fractions of
//!   class-0 / class-1 scores below `t` (ties count one half):
//!   `phi = y/pi1 G0(f) + (1-y)/pi0 (1 - G1(f)) - (y/pi1 + (1-y)/pi0) AUC`

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpvimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictivenessMeasure {
    #[serde(alias = "r2")]
    RSquared,
    Accuracy,
    Auc,
}

impl PredictivenessMeasure {
    pub fn name(self) -> &'static str {
        match self {
            PredictivenessMeasure::RSquared => "r_squared",
            PredictivenessMeasure::Accuracy => "accuracy",
            PredictivenessMeasure::Auc => "auc",
        }
    }

    pub fn needs_binary_outcome(self) -> bool {
        !matches!(self, PredictivenessMeasure::RSquared)
    }
}

impl std::str::FromStr for PredictivenessMeasure {
    type Err = SpvimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "r2" | "r_squared" => Ok(Self::RSquared),
            "accuracy" => Ok(Self::Accuracy),
            "auc" => Ok(Self::Auc),
            other => Err(SpvimError::Config(format!("unknown measure '{other}' (expected r2, accuracy or auc)"))),
        }
    }
}

fn check(predictions: &[f64], outcomes: &[f64]) -> Result<()> {
    if predictions.len() != outcomes.len() {
        return Err(SpvimError::InvalidArgument(format!(
            "{} predictions for {} outcomes",
            predictions.len(),
            outcomes.len()
        )));
    }
    if predictions.len() < 2 {
        return Err(SpvimError::InvalidArgument("need at least two evaluation rows".into()));
    }
    if predictions.iter().any(|v| !v.is_finite()) {
        return Err(SpvimError::InvalidArgument("non-finite prediction".into()));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn r_squared(f: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mu = mean(y);
    let var = y.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / y.len() as f64;
    if var <= 0.0 {
        return Err(SpvimError::DegenerateOutcome("outcome has zero variance".into()));
    }
    let sq: Vec<f64> = f.iter().zip(y).map(|(a, b)| (b - a).powi(2)).collect();
    let mse = mean(&sq);
    let value = 1.0 - mse / var;
    let mut infl: Vec<f64> =
        sq.iter().zip(y).map(|(s, yi)| -(s - mse) / var + mse / (var * var) * ((yi - mu).powi(2) - var)).collect();
    center(&mut infl);
    Ok((value, infl))
}

fn accuracy(f: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let hits: Vec<f64> = f.iter().zip(y).map(|(&fi, &yi)| f64::from(f64::from(u8::from(fi >= 0.5)) == yi)).collect();
    let value = mean(&hits);
    (value, hits.iter().map(|h| h - value).collect())
}

/// Fraction of `sorted` strictly below `t`, with ties counted one half.
fn below(sorted: &[f64], t: f64) -> f64 {
    let lo = sorted.partition_point(|&s| s < t);
    let hi = sorted.partition_point(|&s| s <= t);
    (lo as f64 + 0.5 * (hi - lo) as f64) / sorted.len() as f64
}

fn auc(f: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut pos: Vec<f64> = Vec::new();
    let mut neg: Vec<f64> = Vec::new();
    for (&fi, &yi) in f.iter().zip(y) {
        if yi == 1.0 {
            pos.push(fi);
        } else if yi == 0.0 {
            neg.push(fi);
        } else {
            return Err(SpvimError::DegenerateOutcome(format!("AUC needs 0/1 outcomes, found {yi}")));
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(SpvimError::DegenerateOutcome("AUC needs both outcome classes".into()));
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let n = y.len() as f64;
    let pi1 = pos.len() as f64 / n;
    let pi0 = 1.0 - pi1;
    let value = pos.iter().map(|&t| below(&neg, t)).sum::<f64>() / pos.len() as f64;
    let mut infl: Vec<f64> = f
        .iter()
        .zip(y)
        .map(
            |(&fi, &yi)| {
                if yi == 1.0 {
                    (below(&neg, fi) - value) / pi1
                } else {
                    (1.0 - below(&pos, fi) - value) / pi0
                }
            },
        )
        .collect();
    center(&mut infl);
    Ok((value, infl))
}

/// Removes floating-point drift so the influence values average to zero.
fn center(x: &mut [f64]) {
    let m = mean(x);
    x.iter_mut().for_each(|v| *v -= m);
}

pub fn measure_value_and_influence(
    measure: PredictivenessMeasure,
    predictions: &[f64],
    outcomes: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check(predictions, outcomes)?;
    match measure {
        PredictivenessMeasure::RSquared => r_squared(predictions, outcomes),
        PredictivenessMeasure::Accuracy => Ok(accuracy(predictions, outcomes)),
        PredictivenessMeasure::Auc => auc(predictions, outcomes),
    }
}

pub fn measure_value(measure: PredictivenessMeasure, predictions: &[f64], outcomes: &[f64]) -> Result<f64> {
    measure_value_and_influence(measure, predictions, outcomes).map(|r| r.0)
}

pub fn measure_influence(measure: PredictivenessMeasure, predictions: &[f64], outcomes: &[f64]) -> Result<Vec<f64>> {
    measure_value_and_influence(measure, predictions, outcomes).map(|r| r.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use PredictivenessMeasure::*;

    #[test]
    fn examples() {
        let y = [0.3, -1.2, 2.0, 0.7];
        assert_relative_eq!(measure_value(RSquared, &y, &y).unwrap(), 1.0);
        assert_eq!(measure_value(Auc, &[0.1, 0.9], &[0.0, 1.0]).unwrap(), 1.0);
        assert_relative_eq!(measure_value(Accuracy, &[0.6, 0.4, 0.7], &[1.0, 1.0, 0.0]).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn constant_accuracy_influence() {
        let y = [1.0, 0.0, 1.0, 1.0];
        let infl = measure_influence(Accuracy, &[0.8; 4], &y).unwrap();
        assert_eq!(infl, vec![0.25, -0.75, 0.25, 0.25]);
    }

    #[test]
    fn perfect_r2_has_zero_influence() {
        let y = [0.3, -1.2, 2.0, 0.7];
        let infl = measure_influence(RSquared, &y, &y).unwrap();
        assert!(infl.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(measure_value(Auc, &[0.1, 0.2], &[1.0, 1.0]), Err(SpvimError::DegenerateOutcome(_))));
        assert!(matches!(measure_value(RSquared, &[0.1, 0.2], &[1.0, 1.0]), Err(SpvimError::DegenerateOutcome(_))));
        assert!(measure_value(RSquared, &[0.1], &[1.0]).is_err());
    }

    #[test]
    fn auc_ties_count_half() {
        // one tie between a positive and a negative
        let v = measure_value(Auc, &[0.5, 0.5, 0.9, 0.1], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_relative_eq!(v, (0.5 + 1.0 + 1.0 + 1.0) / 4.0);
    }

    #[test]
    fn auc_is_rank_invariant() {
        let f = [0.3, -0.2, 1.5, 0.9, 0.1, 0.7];
        let y = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let g: Vec<f64> = f.iter().map(|v: &f64| v.exp() * 3.0 + 1.0).collect();
        assert_eq!(measure_value(Auc, &f, &y).unwrap(), measure_value(Auc, &g, &y).unwrap());
    }
}
