use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satweight::model::{residual, ConstellationId};
use satweight::residuals::{build_residual_matrix, GAMMA, SUMMARY_WIDTH};
use satweight::sim::random_geometry_epoch;
use satweight::solver::{solve_equal, SolverConfig};

#[test]
fn single_bias_is_isolated_by_its_own_row() {
    let cfg = SolverConfig::default();
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut e = random_geometry_epoch(&mut rng, 10, &[ConstellationId::Gps, ConstellationId::Galileo], 10.0);
        let bad = rng.random_range(0..10);
        e.measurements[bad].pseudorange += 50.0;
        let m = build_residual_matrix(&e, &cfg).unwrap();
        for n in 0..10 {
            // Brute-force reference for this row.
            let sub = e.subset(|i| i != n);
            let rep = solve_equal(&sub, None, &cfg).unwrap();
            let worst = (0..10)
                .filter(|i| *i != n)
                .map(|i| residual(&rep.state, &e.measurements[i]).unwrap().abs())
                .fold(0.0, f64::max);
            let got = m.off_diagonal(n).map(f64::abs).fold(0.0, f64::max);
            assert!((got - worst).abs() < 1e-6);
            if n == bad {
                assert!(got < 1e-6, "seed {seed}: clean row has {got} m");
            } else {
                assert!(got > 1.0, "seed {seed}: row {n} containing the fault peaks at {got} m");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn summaries_are_ordered_and_exclude_the_diagonal(seed in any::<u64>(), n in 6usize..13) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut e = random_geometry_epoch(&mut rng, n, &[ConstellationId::Gps], 10.0);
        for m in &mut e.measurements {
            m.pseudorange += rng.random_range(-10.0..10.0);
        }
        let m = build_residual_matrix(&e, &SolverConfig::default()).unwrap();
        for r in 0..n {
            prop_assert_eq!(m.get(r, r), GAMMA);
            let s = m.row_summary(r);
            prop_assert_eq!(s.len(), SUMMARY_WIDTH);
            let (mean, std, min, max, median, mean_abs) = (s[0], s[1], s[2], s[3], s[4], s[5]);
            prop_assert!(min <= median && median <= max);
            prop_assert!(min <= mean && mean <= max);
            prop_assert!(std >= 0.0 && mean_abs >= mean.abs() - 1e-12);
            prop_assert!(max.abs() < GAMMA && min.abs() < GAMMA);
            prop_assert!(s[6] >= s[7] && s[7] >= 0.0 && s[6] <= (n - 1) as f64);
        }
    }
}
