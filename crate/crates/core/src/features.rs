//! Per-link signal features with a variable-size C/N0 sliding window.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{elevation_azimuth, GeodeticPosition};
use crate::model::{Epoch, LinkKey};

pub const WINDOW_CAPACITY: usize = 10;
/// A link absent for longer than this (s) starts a fresh window.
pub const CONTINUITY_HORIZON: f64 = 0.4;
/// Variance reported for single-entry windows, (dB-Hz)².
pub const VARIANCE_SENTINEL: f64 = 1e4;

const TIME_EPS: f64 = 1e-9;

pub const PER_LINK_WIDTH: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerLinkFeatures {
    /// Radians.
    pub elevation: f64,
    /// Seconds.
    pub lock_time: f64,
    /// dB-Hz.
    pub cn0: f64,
    pub cn0_mean: f64,
    /// (dB-Hz)², or [`VARIANCE_SENTINEL`] for a single-entry window.
    pub cn0_var: f64,
    pub window_size: usize,
}

impl PerLinkFeatures {
    pub fn to_array(&self) -> [f64; PER_LINK_WIDTH] {
        [
            self.elevation,
            self.lock_time,
            self.cn0,
            self.cn0_mean,
            self.cn0_var,
            self.window_size as f64,
        ]
    }
}

/// Sample mean and `(n−1)` variance; the variance is the sentinel when `n == 1`.
pub fn window_stats(values: impl ExactSizeIterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.len();
    assert!(n > 0, "window is never empty");
    let mean = values.clone().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, VARIANCE_SENTINEL);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (n as f64 - 1.0))
}

/// Recent C/N0 history of every tracked link in one navigation session.
#[derive(Clone, Debug, Default)]
pub struct TrackingHistory {
    windows: BTreeMap<LinkKey, VecDeque<(f64, f64)>>,
    last_time: Option<f64>,
}

impl TrackingHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn window(&self, key: &LinkKey) -> Option<&VecDeque<(f64, f64)>> {
        self.windows.get(key)
    }

    pub fn tracked_links(&self) -> usize {
        self.windows.len()
    }

    /// Pushes this epoch's C/N0 values and returns features in the epoch's order.
    ///
    /// `rx_approx` only feeds the elevation angle. On error the history is
    /// left untouched.
    pub fn update_and_extract(&mut self, epoch: &Epoch, rx_approx: GeodeticPosition) -> Result<Vec<PerLinkFeatures>> {
        let t = epoch.time;
        if let Some(previous) = self.last_time {
            if t < previous {
                return Err(Error::NonMonotonicTime { previous, got: t });
            }
        }
        let elevations = epoch
            .measurements
            .iter()
            .map(|m| elevation_azimuth(m.sat_pos, rx_approx).map(|(el, _)| el))
            .collect::<Result<Vec<_>>>()?;

        self.last_time = Some(t);
        self.windows
            .retain(|_, w| w.back().is_some_and(|(last, _)| t - last <= CONTINUITY_HORIZON + TIME_EPS));

        let mut out = Vec::with_capacity(epoch.len());
        for (m, elevation) in epoch.measurements.iter().zip(elevations) {
            let window = self.windows.entry(m.key()).or_default();
            if window.back().is_some_and(|(last, _)| *last == t) {
                // Same epoch fed twice: replace rather than double count.
                window.pop_back();
            }
            window.push_back((t, m.cn0));
            while window.len() > WINDOW_CAPACITY {
                window.pop_front();
            }
            let (cn0_mean, cn0_var) = window_stats(window.iter().map(|(_, c)| *c));
            out.push(PerLinkFeatures {
                elevation,
                lock_time: m.lock_time,
                cn0: m.cn0,
                cn0_mean,
                cn0_var,
                window_size: window.len(),
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{geodetic_to_ecef, EcefPosition};
    use crate::model::{Band, ConstellationId, PseudorangeMeasurement};
    use proptest::prelude::*;

    fn rx() -> GeodeticPosition {
        GeodeticPosition::from_degrees(45.0, 7.0, 200.0)
    }

    fn epoch(t: f64, links: &[(u16, f64)]) -> Epoch {
        let base = geodetic_to_ecef(rx());
        let ms = links
            .iter()
            .map(|(sv, cn0)| PseudorangeMeasurement {
                constellation: ConstellationId::Gps,
                sv_id: *sv,
                band: Band::L1,
                pseudorange: 2.2e7,
                sat_pos: EcefPosition::new(base.x * 4.0, base.y * 4.0 + *sv as f64 * 1e6, base.z * 4.0),
                cn0: *cn0,
                lock_time: t,
            })
            .collect();
        Epoch::new(t, ms, None).unwrap()
    }

    #[test]
    fn arithmetic() {
        let (m, v) = window_stats([40.0, 42.0, 44.0].into_iter());
        assert_eq!((m, v), (42.0, 4.0));
        let (m, v) = window_stats([37.5; 10].into_iter());
        assert_eq!((m, v), (37.5, 0.0));
        assert_eq!(window_stats([12.0].into_iter()), (12.0, VARIANCE_SENTINEL));
    }

    #[test]
    fn first_observation_gets_the_sentinel() {
        let mut h = TrackingHistory::new();
        let f = h.update_and_extract(&epoch(0.0, &[(3, 41.0)]), rx()).unwrap();
        assert_eq!(f[0].window_size, 1);
        assert_eq!(f[0].cn0_var, VARIANCE_SENTINEL);
        assert_eq!(f[0].cn0_mean, 41.0);
    }

    #[test]
    fn window_is_capped() {
        let mut h = TrackingHistory::new();
        let mut last = Vec::new();
        for k in 0..12 {
            last = h.update_and_extract(&epoch(0.2 * k as f64, &[(5, 30.0 + k as f64)]), rx()).unwrap();
        }
        assert_eq!(last[0].window_size, WINDOW_CAPACITY);
        assert!((last[0].cn0_mean - 36.5).abs() < 1e-12);
    }

    #[test]
    fn gap_resets_and_time_must_not_go_back() {
        let mut h = TrackingHistory::new();
        h.update_and_extract(&epoch(0.0, &[(1, 40.0)]), rx()).unwrap();
        h.update_and_extract(&epoch(0.2, &[(1, 42.0)]), rx()).unwrap();
        let f = h.update_and_extract(&epoch(1.0, &[(1, 44.0)]), rx()).unwrap();
        assert_eq!(f[0].window_size, 1);
        let before = h.window(&epoch(0.0, &[(1, 0.0)]).measurements[0].key()).cloned();
        assert!(matches!(
            h.update_and_extract(&epoch(0.8, &[(1, 40.0)]), rx()),
            Err(Error::NonMonotonicTime { .. })
        ));
        assert_eq!(h.window(&epoch(0.0, &[(1, 0.0)]).measurements[0].key()).cloned(), before);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn matches_naive_per_link_windows(
            steps in prop::collection::vec((prop::bool::weighted(0.8), prop::collection::btree_map(1u16..6, 20.0f64..55.0, 1..5)), 1..40)
        ) {
            let mut h = TrackingHistory::new();
            let mut naive: BTreeMap<u16, Vec<(f64, f64)>> = BTreeMap::new();
            let mut t = 0.0;
            for (short_step, links) in steps {
                t += if short_step { 0.2 } else { 0.7 };
                let links: Vec<(u16, f64)> = links.into_iter().collect();
                let got = h.update_and_extract(&epoch(t, &links), rx()).unwrap();
                for ((sv, cn0), f) in links.iter().zip(&got) {
                    let w = naive.entry(*sv).or_default();
                    if w.last().is_some_and(|(last, _)| t - last > CONTINUITY_HORIZON + 1e-9) {
                        w.clear();
                    }
                    w.push((t, *cn0));
                    if w.len() > 10 {
                        w.remove(0);
                    }
                    let n = w.len() as f64;
                    let mean = w.iter().map(|x| x.1).sum::<f64>() / n;
                    let var = if w.len() == 1 {
                        1e4
                    } else {
                        w.iter().map(|x| (x.1 - mean).powi(2)).sum::<f64>() / (n - 1.0)
                    };
                    prop_assert!(f.window_size <= 10);
                    prop_assert_eq!(f.window_size, w.len());
                    prop_assert!((f.cn0_mean - mean).abs() < 1e-9);
                    prop_assert!((f.cn0_var - var).abs() < 1e-9 * var.max(1.0));
                }
            }
        }
    }
}
