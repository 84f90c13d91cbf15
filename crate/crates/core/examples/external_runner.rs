//! Driving the estimator through an external model runner process.
//!
//! Requires `python3` with numpy; uses the least-squares runner from the test
//! fixtures.

use std::path::Path;

use spvim::learners::LearnerSpec;
use spvim::pipeline::{estimate_spvim, EstimationConfig};
use spvim::simulate::{simulate, DgpSpec};

fn main() -> spvim::Result<()> {
    let runner = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/lstsq_runner.py");
    let data = simulate(&DgpSpec::Linear { p: 3, coefficients: vec![1.0, 0.5], noise: 1.0 }, 300, 4)?;
    let config = EstimationConfig {
        seed: 4,
        workers: 2,
        learner: LearnerSpec::external("python3", vec![runner.display().to_string()]),
        ..Default::default()
    };
    let result = estimate_spvim(&data, &config)?;
    for (label, psi) in result.features.iter().zip(&result.psi) {
        println!("{label:>6} {psi:.4}");
    }
    Ok(())
}
