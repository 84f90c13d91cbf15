//! Writes a report and its forest plot to the system temp directory.

use spvim::pipeline::{estimate_spvim, EstimationConfig};
use spvim::plot::forest_plot;
use spvim::report::Report;
use spvim::simulate::{simulate, DgpSpec};

fn main() -> spvim::Result<()> {
    let data = simulate(&DgpSpec::Linear { p: 5, coefficients: vec![1.0, 0.6, 0.3], noise: 1.0 }, 800, 9)?;
    let config = EstimationConfig { seed: 9, ..Default::default() };
    let report = Report::new(&estimate_spvim(&data, &config)?, &config);
    let dir = std::env::temp_dir();
    report.write(dir.join("spvim_report.json"))?;
    std::fs::write(dir.join("spvim_forest.svg"), forest_plot(&report)?)?;
    println!("wrote {}", dir.join("spvim_forest.svg").display());
    Ok(())
}
