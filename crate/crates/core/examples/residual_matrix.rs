//! Leave-one-out residual matrix of an epoch with one biased measurement.
//!
//! cargo run --example residual_matrix

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use satweight::model::ConstellationId;
use satweight::residuals::build_residual_matrix;
use satweight::sim::random_geometry_epoch;
use satweight::solver::SolverConfig;

fn main() -> satweight::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut epoch = random_geometry_epoch(&mut rng, 8, &[ConstellationId::Gps], 10.0);
    epoch.measurements[5].pseudorange += 50.0;
    let m = build_residual_matrix(&epoch, &SolverConfig::default())?;
    println!("row n: residuals after solving without measurement n (diagonal = gamma)");
    for r in 0..m.dim() {
        let cells: Vec<String> = m
            .row(r)
            .iter()
            .enumerate()
            .map(|(c, v)| if c == r { "   gamma".into() } else { format!("{v:8.2}") })
            .collect();
        let peak = m.off_diagonal(r).map(f64::abs).fold(0.0, f64::max);
        println!("{r}: {}   max |r| {peak:6.2}", cells.join(" "));
    }
    println!("row 5 is the only row without the biased measurement, so it is the clean one");
    Ok(())
}
