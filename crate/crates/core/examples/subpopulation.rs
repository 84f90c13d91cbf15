//! Importance restricted to a covariate-defined subpopulation.

use spvim::pipeline::{estimate_spvim, subpopulation_spvim, Comparator, Condition, EstimationConfig};
use spvim::simulate::{simulate, DgpSpec};

fn main() -> spvim::Result<()> {
    let dgp = DgpSpec::Linear { p: 3, coefficients: vec![1.0, 1.0], noise: 1.0 };
    let data = simulate(&dgp, 2000, 5)?;
    let config = EstimationConfig { seed: 5, test: false, ..Default::default() };
    let everyone = estimate_spvim(&data, &config)?;
    let name = &data.names()[0];
    let predicate = [Condition::new(name.clone(), Comparator::Gt, 0.0)];
    let subgroup = subpopulation_spvim(&data, &predicate, &config)?;
    println!("{:>8} {:>10} {:>10}", "feature", "all rows", format!("{name} > 0"));
    for j in 1..everyone.psi.len() {
        println!("{:>8} {:>10.4} {:>10.4}", everyone.features[j], everyone.psi[j], subgroup.psi[j]);
    }
    Ok(())
}
