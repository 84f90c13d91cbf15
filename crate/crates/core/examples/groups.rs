//! Importance of feature groups: the signal pair against the noise block.

use spvim::pipeline::{group_spvim, EstimationConfig};
use spvim::simulate::{simulate, DgpSpec};

fn main() -> spvim::Result<()> {
    let dgp = DgpSpec::Linear { p: 6, coefficients: vec![1.0, 0.5], noise: 1.0 };
    let data = simulate(&dgp, 1000, 3)?;
    let groups = vec![vec![1, 2], vec![3, 4, 5, 6]];
    let config = EstimationConfig { seed: 3, ..Default::default() };
    let result = group_spvim(&data, &groups, &config)?;
    for (label, (psi, se)) in result.features.iter().zip(result.psi.iter().zip(&result.std_errors)) {
        println!("{label:>12} {psi:>8.4} (se {se:.4})");
    }
    Ok(())
}
