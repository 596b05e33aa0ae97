//! Per-link C/N0 tracking windows over a short sequence with a dropout.
//!
//! cargo run --example sliding_window

use satweight::features::TrackingHistory;
use satweight::geo::{EcefPosition, GeodeticPosition};
use satweight::model::{Band, ConstellationId, Epoch, PseudorangeMeasurement};

fn meas(sv: u16, cn0: f64) -> PseudorangeMeasurement {
    PseudorangeMeasurement {
        constellation: ConstellationId::Gps,
        sv_id: sv,
        band: Band::L1,
        pseudorange: 2.2e7,
        sat_pos: EcefPosition::new(1.5e7, 1e6 * sv as f64, 2.1e7),
        cn0,
        lock_time: 0.0,
    }
}

fn main() -> satweight::Result<()> {
    let rx = GeodeticPosition::from_degrees(45.0, 7.0, 250.0);
    let mut history = TrackingHistory::new();
    for k in 0..14 {
        let t = k as f64 * 0.2;
        let mut ms = vec![meas(1, 40.0 + (k % 3) as f64)];
        // Satellite 2 drops out between 1.0 s and 1.6 s and starts over.
        if !(5..8).contains(&k) {
            ms.push(meas(2, 35.0 + k as f64 * 0.5));
        }
        let epoch = Epoch::new(t, ms, None)?;
        let feats = history.update_and_extract(&epoch, rx)?;
        let line: Vec<String> = epoch
            .measurements
            .iter()
            .zip(&feats)
            .map(|(m, f)| format!("sv{} n={:2} mean={:5.2} var={:9.2}", m.sv_id, f.window_size, f.cn0_mean, f.cn0_var))
            .collect();
        println!("t={t:.1}  {}", line.join("  |  "));
    }
    Ok(())
}
