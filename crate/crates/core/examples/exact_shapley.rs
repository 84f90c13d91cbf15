//! Shapley values of a small game, exactly and through the constrained
//! weighted least-squares solve on a sampled subset distribution.

use spvim::cwls::{solve_cwls, ConstraintSystem};
use spvim::kernel::{all_subsets, exact_shapley, sample_subsets, EmpiricalSubsetDistribution};

fn main() -> spvim::Result<()> {
    let p = 4;
    // v(S) = (sum of indices in S)^2 / 100, listed in canonical subset order
    let subsets = all_subsets(p)?;
    let game: Vec<f64> = subsets.iter().map(|s| s.indices().iter().sum::<usize>().pow(2) as f64 / 100.0).collect();
    let (v_empty, v_full) = (game[0], game[game.len() - 1]);

    let exact = exact_shapley(&game, p)?;
    let constraint = ConstraintSystem::new(p, v_empty, v_full)?;
    let full = solve_cwls(&EmpiricalSubsetDistribution::exact(p)?, &game, &constraint)?;

    let sampled = sample_subsets(p, 200, 1)?;
    let values: Vec<f64> =
        sampled.subsets().iter().map(|s| game[subsets.iter().position(|t| t == s).unwrap()]).collect();
    let approx = solve_cwls(&sampled, &values, &constraint)?;

    println!("{:>4} {:>10} {:>10} {:>10}", "j", "exact", "cwls", "sampled");
    for (j, ((e, f), a)) in exact.iter().zip(&full.psi).zip(&approx.psi).enumerate() {
        println!("{j:>4} {e:>10.5} {f:>10.5} {a:>10.5}");
    }
    Ok(())
}
