//! Predictiveness of a subset's prediction function: measures, influence
//! functions and cross-fitting.

pub mod crossfit;
pub mod measure;

pub use crossfit::{cross_fit_predictiveness, make_folds, CrossFitter, PredictivenessEstimate, Scheme};
pub use measure::{measure_influence, measure_value, measure_value_and_influence, PredictivenessMeasure};
