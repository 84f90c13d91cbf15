//! A small simulation study: bias, coverage and rejection rates against the
//! known importance of a linear model.

use spvim::experiment::{run_experiment, ExperimentSpec};
use spvim::pipeline::EstimationConfig;
use spvim::simulate::DgpSpec;

fn main() -> spvim::Result<()> {
    let spec = ExperimentSpec {
        dgp: DgpSpec::Linear { p: 4, coefficients: vec![1.0], noise: 1.0 },
        sample_sizes: vec![300, 600],
        replicates: 50,
        seed: 8,
        workers: 0,
        estimation: EstimationConfig::default(),
        sampling_check: None,
    };
    let report = run_experiment(&spec)?;
    print!("{}", report.to_table());
    Ok(())
}
