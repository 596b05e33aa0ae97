//! Solve one noisy epoch with equal and with custom weights.
//!
//! cargo run --example solve_epoch

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use satweight::model::ConstellationId;
use satweight::sim::random_geometry_epoch;
use satweight::solver::{linearized_covariance, solve_equal, solve_wls, SolverConfig, WeightVector};

fn main() -> satweight::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut epoch = random_geometry_epoch(&mut rng, 9, &[ConstellationId::Gps, ConstellationId::Galileo], 10.0);
    let truth = epoch.truth.expect("generated epochs carry truth");
    epoch.measurements[3].pseudorange += 40.0;
    let cfg = SolverConfig::default();

    let equal = solve_equal(&epoch, None, &cfg)?;
    println!(
        "equal weights: error {:.2} m after {} iterations, cost {:.1} m^2",
        equal.state.position.distance(truth),
        equal.iterations,
        equal.final_cost
    );

    let mut w = vec![1.0; epoch.len()];
    w[3] = 0.0;
    let weights = WeightVector::new(w)?;
    let fixed = solve_wls(&epoch, &weights, Some(&equal.state), &cfg)?;
    println!("faulty row switched off: error {:.2e} m", fixed.state.position.distance(truth));

    let cov = linearized_covariance(&fixed.state, &epoch, &weights)?;
    println!(
        "1-sigma position spread per meter of range noise: {:.2} m",
        (cov[(0, 0)] + cov[(1, 1)] + cov[(2, 2)]).sqrt()
    );
    Ok(())
}
