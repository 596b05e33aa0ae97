//! Pseudorange measurements, epochs and the navigation state.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::EcefPosition;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub const MIN_PSEUDORANGE: f64 = 1e6;
pub const MAX_PSEUDORANGE: f64 = 5e7;
pub const MAX_CN0: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ConstellationId {
    Gps,
    Glonass,
    Galileo,
    Beidou,
}

impl ConstellationId {
    pub const ALL: [ConstellationId; 4] = [
        ConstellationId::Gps,
        ConstellationId::Glonass,
        ConstellationId::Galileo,
        ConstellationId::Beidou,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConstellationId::Gps => "GPS",
            ConstellationId::Glonass => "GLONASS",
            ConstellationId::Galileo => "GALILEO",
            ConstellationId::Beidou => "BEIDOU",
        }
    }
}

impl fmt::Display for ConstellationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Carrier band. `L5` also stands for Galileo E5a.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    L1,
    L2,
    L5,
}

impl Band {
    pub fn as_str(self) -> &'static str {
        match self {
            Band::L1 => "L1",
            Band::L2 => "L2",
            Band::L5 => "L5",
        }
    }
}

/// Identity of one tracked signal; also the canonical sort key within an epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkKey {
    pub constellation: ConstellationId,
    pub sv_id: u16,
    pub band: Band,
}

impl fmt::Display for LinkKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}/{}", self.constellation, self.sv_id, self.band.as_str())
    }
}

/// One corrected pseudorange with the transmitting satellite's position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudorangeMeasurement {
    pub constellation: ConstellationId,
    pub sv_id: u16,
    pub band: Band,
    /// Meters, with satellite clock and atmospheric corrections already applied.
    pub pseudorange: f64,
    pub sat_pos: EcefPosition,
    /// dB-Hz.
    pub cn0: f64,
    /// Seconds of continuous carrier lock.
    pub lock_time: f64,
}

impl PseudorangeMeasurement {
    pub fn key(&self) -> LinkKey {
        LinkKey {
            constellation: self.constellation,
            sv_id: self.sv_id,
            band: self.band,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::InvalidMeasurement {
                key: self.key(),
                reason,
            })
        };
        if self.sv_id < 1 {
            return fail("sv_id must be >= 1".into());
        }
        if !(self.pseudorange > MIN_PSEUDORANGE && self.pseudorange < MAX_PSEUDORANGE) {
            return fail(format!(
                "pseudorange {} m outside ({MIN_PSEUDORANGE:e}, {MAX_PSEUDORANGE:e})",
                self.pseudorange
            ));
        }
        if !(0.0..=MAX_CN0).contains(&self.cn0) {
            return fail(format!("cn0 {} dB-Hz outside [0, {MAX_CN0}]", self.cn0));
        }
        if !(self.lock_time >= 0.0 && self.lock_time.is_finite()) {
            return fail(format!("lock_time {} s must be finite and >= 0", self.lock_time));
        }
        if !self.sat_pos.is_finite() {
            return fail("satellite position is not finite".into());
        }
        Ok(())
    }
}

/// Receiver position plus one clock bias (seconds) per constellation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    pub position: EcefPosition,
    pub clock_bias: BTreeMap<ConstellationId, f64>,
}

impl NavState {
    pub fn new(position: EcefPosition) -> Self {
        Self {
            position,
            clock_bias: BTreeMap::new(),
        }
    }

    pub fn with_bias(mut self, constellation: ConstellationId, seconds: f64) -> Self {
        self.clock_bias.insert(constellation, seconds);
        self
    }

    pub fn bias(&self, constellation: ConstellationId) -> Result<f64> {
        self.clock_bias
            .get(&constellation)
            .copied()
            .ok_or(Error::MissingClockBias(constellation))
    }
}

/// One measurement snapshot. Measurements are kept in canonical
/// `(constellation, sv_id, band)` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub time: f64,
    pub measurements: Vec<PseudorangeMeasurement>,
    pub truth: Option<EcefPosition>,
}

impl Epoch {
    /// Validates every measurement, sorts canonically and rejects duplicates.
    pub fn new(
        time: f64,
        mut measurements: Vec<PseudorangeMeasurement>,
        truth: Option<EcefPosition>,
    ) -> Result<Self> {
        if !time.is_finite() {
            return Err(Error::InvalidEpoch(format!("time {time} is not finite")));
        }
        if measurements.is_empty() {
            return Err(Error::InvalidEpoch("epoch has no measurements".into()));
        }
        for m in &measurements {
            m.validate()?;
        }
        measurements.sort_by_key(|m| m.key());
        for pair in measurements.windows(2) {
            if pair[0].key() == pair[1].key() {
                return Err(Error::DuplicateMeasurement(pair[0].key()));
            }
        }
        if let Some(t) = truth {
            if !t.is_finite() {
                return Err(Error::InvalidEpoch("truth position is not finite".into()));
            }
        }
        Ok(Self {
            time,
            measurements,
            truth,
        })
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    /// Constellations present, in canonical order.
    pub fn constellations(&self) -> Vec<ConstellationId> {
        let mut out: Vec<ConstellationId> = self.measurements.iter().map(|m| m.constellation).collect();
        out.dedup();
        out
    }

    /// Number of unknowns: three position coordinates plus one bias per constellation.
    pub fn state_dim(&self) -> usize {
        3 + self.constellations().len()
    }

    /// Copy of this epoch keeping only measurements whose index passes `keep`.
    pub fn subset(&self, keep: impl Fn(usize) -> bool) -> Epoch {
        Epoch {
            time: self.time,
            measurements: self
                .measurements
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(_, m)| m.clone())
                .collect(),
            truth: self.truth,
        }
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Euclidean distance as an unevaluated sum `hi + lo`, accurate to a few
/// units in the last place of `lo`.
pub(crate) fn range_parts(a: [f64; 3], b: [f64; 3]) -> (f64, f64) {
    let mut hi = 0.0;
    let mut lo = 0.0;
    for k in 0..3 {
        let (d, dl) = two_sum(a[k], -b[k]);
        let p = d * d;
        let pe = d.mul_add(d, -p) + 2.0 * d * dl;
        let (s, se) = two_sum(hi, p);
        hi = s;
        lo += se + pe;
    }
    let (hi, l) = two_sum(hi, lo);
    let r = hi.sqrt();
    let corr = (-r.mul_add(r, -hi) + l) / (2.0 * r);
    (r, corr)
}

/// `ρ − (range + clock)` with the range carried in two parts; `clock` in meters.
pub(crate) fn range_residual(pseudorange: f64, rx: [f64; 3], sat: [f64; 3], clock: f64) -> f64 {
    let (r, rl) = range_parts(rx, sat);
    ((pseudorange - r) - clock) - rl
}

fn xyz(p: EcefPosition) -> [f64; 3] {
    [p.x, p.y, p.z]
}

/// Predicted pseudorange: geometric range plus the constellation's clock term.
pub fn observation_function(state: &NavState, m: &PseudorangeMeasurement) -> Result<f64> {
    let bias = state.bias(m.constellation)?;
    let (r, rl) = range_parts(xyz(state.position), xyz(m.sat_pos));
    Ok(r + (SPEED_OF_LIGHT * bias + rl))
}

/// Measured minus predicted pseudorange.
pub fn residual(state: &NavState, m: &PseudorangeMeasurement) -> Result<f64> {
    let bias = state.bias(m.constellation)?;
    Ok(range_residual(m.pseudorange, xyz(state.position), xyz(m.sat_pos), SPEED_OF_LIGHT * bias))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meas(c: ConstellationId, sv: u16, band: Band, pr: f64) -> PseudorangeMeasurement {
        PseudorangeMeasurement {
            constellation: c,
            sv_id: sv,
            band,
            pseudorange: pr,
            sat_pos: EcefPosition::new(2e7, 0.0, 0.0),
            cn0: 45.0,
            lock_time: 3.0,
        }
    }

    #[test]
    fn pure_distance_and_clock_term() {
        let m = meas(ConstellationId::Gps, 1, Band::L1, 2e7);
        let s = NavState::new(EcefPosition::default()).with_bias(ConstellationId::Gps, 0.0);
        assert_eq!(observation_function(&s, &m).unwrap(), 2e7);
        let s = s.with_bias(ConstellationId::Gps, 1e-3);
        assert_eq!(observation_function(&s, &m).unwrap(), 2e7 + 299_792.458);
    }

    #[test]
    fn residual_is_linear_in_pseudorange() {
        let s = NavState::new(EcefPosition::new(6.4e6, 0.0, 0.0)).with_bias(ConstellationId::Galileo, 2e-4);
        let mut m = meas(ConstellationId::Galileo, 3, Band::L1, 0.0);
        m.pseudorange = observation_function(&s, &m).unwrap();
        let half_ulp = 0.5 * (m.pseudorange.next_up() - m.pseudorange);
        assert!(residual(&s, &m).unwrap().abs() <= half_ulp);
        m.pseudorange += 5.0;
        assert!((residual(&s, &m).unwrap() - 5.0).abs() < 1e-8);
    }

    #[test]
    fn missing_bias() {
        let m = meas(ConstellationId::Beidou, 1, Band::L1, 2e7);
        let s = NavState::new(EcefPosition::default());
        assert!(matches!(
            observation_function(&s, &m),
            Err(Error::MissingClockBias(ConstellationId::Beidou))
        ));
    }

    #[test]
    fn epoch_sorts_and_rejects_duplicates() {
        let e = Epoch::new(
            0.0,
            vec![
                meas(ConstellationId::Galileo, 2, Band::L1, 2e7),
                meas(ConstellationId::Gps, 9, Band::L5, 2e7),
                meas(ConstellationId::Gps, 9, Band::L1, 2e7),
                meas(ConstellationId::Gps, 3, Band::L1, 2e7),
            ],
            None,
        )
        .unwrap();
        let keys: Vec<_> = e.measurements.iter().map(|m| (m.constellation, m.sv_id, m.band)).collect();
        assert_eq!(
            keys,
            vec![
                (ConstellationId::Gps, 3, Band::L1),
                (ConstellationId::Gps, 9, Band::L1),
                (ConstellationId::Gps, 9, Band::L5),
                (ConstellationId::Galileo, 2, Band::L1),
            ]
        );
        assert_eq!(e.state_dim(), 5);

        let dup = Epoch::new(
            0.0,
            vec![meas(ConstellationId::Gps, 3, Band::L1, 2e7), meas(ConstellationId::Gps, 3, Band::L1, 2.1e7)],
            None,
        );
        assert!(matches!(dup, Err(Error::DuplicateMeasurement(_))));
    }

    #[test]
    fn measurement_bounds() {
        let mut m = meas(ConstellationId::Gps, 1, Band::L1, 5e5);
        assert!(m.validate().is_err());
        m.pseudorange = 2e7;
        m.cn0 = 61.0;
        assert!(m.validate().is_err());
        m.cn0 = 40.0;
        m.sv_id = 0;
        assert!(m.validate().is_err());
        m.sv_id = 1;
        assert!(m.validate().is_ok());
    }

    #[test]
    fn constellation_names_roundtrip() {
        for c in ConstellationId::ALL {
            let s = serde_json::to_string(&c).unwrap();
            assert_eq!(s, format!("\"{}\"", c.as_str()));
            assert_eq!(serde_json::from_str::<ConstellationId>(&s).unwrap(), c);
        }
    }
}
