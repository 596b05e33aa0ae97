//! Simulate a small urban campaign, train both weight models and compare
//! every strategy on the held-out sessions.
//!
//! cargo run --release --example end_to_end -- [sessions] [seconds] [hidden] [max_epochs]

use std::time::Instant;

use satweight::eval::{compare_strategies, render_table, Strategies, Strategy};
use satweight::io::Split;
use satweight::nn::{FeatureSet, TrainConfig};
use satweight::pipeline::{prepare_dataset, sota_params, train_model};
use satweight::sim::{generate_campaign, CampaignConfig};
use satweight::solver::SolverConfig;

fn arg<T: std::str::FromStr>(k: usize, default: T) -> T {
    std::env::args().nth(k).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> satweight::Result<()> {
    let sessions: usize = arg(1, 10);
    let duration: f64 = arg(2, 60.0);
    let hidden: usize = arg(3, 32);
    let max_epochs: usize = arg(4, 15);
    let seed = 2024;

    let clock = Instant::now();
    let campaign = CampaignConfig {
        sessions_per_profile: sessions,
        duration,
        ..CampaignConfig::default()
    };
    let (dataset, _) = generate_campaign(&campaign, seed)?;
    println!("simulated {} epochs in {:.1?}", dataset.records.len(), clock.elapsed());

    let clock = Instant::now();
    let solver = SolverConfig::default();
    let prepared = prepare_dataset(&dataset, &solver);
    println!("prepared features in {:.1?}", clock.elapsed());

    let train_cfg = TrainConfig {
        hidden,
        max_epochs,
        seed,
        ..TrainConfig::default()
    };
    let clock = Instant::now();
    let full = train_model(&prepared, FeatureSet::Full, &train_cfg, None)?;
    println!(
        "full model: best val loss {:.4} at epoch {} ({:.1?})",
        full.report.best_val_loss,
        full.report.best_epoch,
        clock.elapsed()
    );
    let clock = Instant::now();
    let residual = train_model(&prepared, FeatureSet::ResidualOnly, &train_cfg, None)?;
    println!(
        "residual-only model: best val loss {:.4} at epoch {} ({:.1?})",
        residual.report.best_val_loss,
        residual.report.best_epoch,
        clock.elapsed()
    );

    let plan = Strategies {
        list: Strategy::ALL.to_vec(),
        full: Some(&full),
        residual: Some(&residual),
        sota: sota_params(&prepared, None)?,
        fde: Default::default(),
        solver,
    };
    let test: Vec<_> = prepared.split(Split::Test).collect();
    let report = compare_strategies(&test, &plan, seed)?;
    println!("sigma model: {:?}", plan.sota);
    print!("{}", render_table(&report));
    Ok(())
}
