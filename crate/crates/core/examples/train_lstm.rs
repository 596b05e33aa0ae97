//! Train the recurrent weight model on a small campaign, save the checkpoint
//! and resume it for a few more passes.
//!
//! cargo run --release --example train_lstm

use satweight::nn::{Checkpoint, FeatureSet, TrainConfig};
use satweight::pipeline::{prepare_dataset, train_model};
use satweight::sim::{generate_campaign, CampaignConfig};
use satweight::solver::SolverConfig;

fn main() -> satweight::Result<()> {
    let campaign = CampaignConfig {
        sessions_per_profile: 5,
        duration: 40.0,
        ..CampaignConfig::default()
    };
    let (dataset, _) = generate_campaign(&campaign, 8)?;
    let prepared = prepare_dataset(&dataset, &SolverConfig::default());

    let mut cfg = TrainConfig {
        hidden: 16,
        max_epochs: 5,
        ..TrainConfig::default()
    };
    let first = train_model(&prepared, FeatureSet::Full, &cfg, None)?;
    for e in &first.report.history {
        println!("epoch {:2}  train {:.4}  val {:.4}", e.epoch, e.train_loss, e.val_loss);
    }
    let path = std::env::temp_dir().join("satweight-example.json");
    first.save(&path)?;

    cfg.max_epochs = 8;
    let resumed = train_model(&prepared, FeatureSet::Full, &cfg, Some(&Checkpoint::load(&path)?))?;
    for e in &resumed.report.history[first.report.history.len()..] {
        println!("epoch {:2}  train {:.4}  val {:.4}  (resumed)", e.epoch, e.train_loss, e.val_loss);
    }
    println!(
        "best validation loss {:.4} at epoch {}",
        resumed.report.best_val_loss, resumed.report.best_epoch
    );
    Ok(())
}
