//! Calibrate the parametric sigma model on a simulated campaign and run the
//! fault detection and exclusion baseline on held-out epochs.
//!
//! cargo run --release --example sota_fde

use satweight::baselines::{calibrate_sota, fde_solve, sota_sigmas, FdeConfig};
use satweight::geo::ecef_to_geodetic;
use satweight::io::Split;
use satweight::pipeline::{calibration_samples, prepare_dataset};
use satweight::sim::{generate_campaign, CampaignConfig};
use satweight::solver::SolverConfig;

fn main() -> satweight::Result<()> {
    let cfg = CampaignConfig {
        sessions_per_profile: 5,
        duration: 60.0,
        ..CampaignConfig::default()
    };
    let (dataset, _) = generate_campaign(&cfg, 5)?;
    let solver = SolverConfig::default();
    let prepared = prepare_dataset(&dataset, &solver);

    let fit = calibrate_sota(&calibration_samples(&prepared))?;
    println!("calibrated over {} bins: {:?}", fit.bins, fit.params);

    let fde = FdeConfig::default();
    let (mut excluded, mut epochs, mut err) = (0, 0, 0.0);
    for p in prepared.ready_in(Split::Test) {
        let rx = ecef_to_geodetic(p.anchor.position)?;
        let sigmas = sota_sigmas(&p.epoch, rx, p.accel, &fit.params)?;
        let out = fde_solve(&p.epoch, &sigmas, &fde, &solver)?;
        excluded += out.excluded.len();
        epochs += 1;
        if let Some(t) = p.epoch.truth {
            err += out.report.state.position.distance(t);
        }
    }
    println!(
        "{epochs} test epochs, {:.2} exclusions per epoch, mean 3D error {:.2} m",
        excluded as f64 / epochs as f64,
        err / epochs as f64
    );
    Ok(())
}
