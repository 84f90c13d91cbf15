//! Feature importance with intervals and tests on the bundled example data.

use std::path::Path;

use spvim::data::{load_dataset, Task};
use spvim::pipeline::{estimate_spvim, EstimationConfig};

fn main() -> spvim::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/example.csv");
    let data = load_dataset(path, "y", Task::Regression)?;
    let config = EstimationConfig { seed: 2024, ..Default::default() };
    let result = estimate_spvim(&data, &config)?;

    println!("{:>8} {:>9} {:>9} {:>20} {:>9}", "feature", "estimate", "se", "95% ci", "p-value");
    for j in 0..result.psi.len() {
        let ci = result.intervals[j];
        let p_value = result.tests[j].map_or("-".to_string(), |t| format!("{:.4}", t.p_value));
        println!(
            "{:>8} {:>9.4} {:>9.4} {:>20} {:>9}",
            result.features[j],
            result.psi[j],
            result.std_errors[j],
            format!("[{:.3}, {:.3}]", ci.lower, ci.upper),
            p_value
        );
    }
    println!("{} unique subsets from {} draws", result.diagnostics.unique_subsets, result.diagnostics.draws);
    Ok(())
}
