//! Generate a mixed-profile campaign, write it as JSON lines and read it back.
//!
//! cargo run --release --example simulate_campaign -- [out.jsonl]

use satweight::io::{read_dataset, write_dataset, Split};
use satweight::sim::{generate_campaign, CampaignConfig, Profile, ProfileSpec};

fn main() -> satweight::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "campaign.jsonl".into());
    let cfg = CampaignConfig {
        profiles: [Profile::OpenSky, Profile::Suburban, Profile::UrbanCanyon]
            .into_iter()
            .map(ProfileSpec::new)
            .collect(),
        sessions_per_profile: 5,
        duration: 30.0,
        ..CampaignConfig::default()
    };
    let (dataset, truths) = generate_campaign(&cfg, 11)?;
    for (info, truth) in dataset.header.sessions.iter().zip(&truths) {
        let faulty = truth.epochs.iter().filter(|e| e.fault_count() > 0).count();
        println!(
            "session {:2} {:12} {:10} {:4} epochs, {:5.1}% with an NLOS link",
            info.id,
            info.profile.as_str(),
            info.split.as_str(),
            truth.epochs.len(),
            100.0 * faulty as f64 / truth.epochs.len() as f64
        );
    }
    write_dataset(&dataset, &out)?;
    let back = read_dataset(&out)?;
    assert_eq!(back, dataset);
    println!(
        "wrote and re-read {} epochs to {out}; test sessions {:?}",
        back.records.len(),
        back.sessions_in(Split::Test)
    );
    Ok(())
}
