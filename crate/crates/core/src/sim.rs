//! Synthetic measurement campaigns.
//!
//! Satellites ride circular shells with a slow angular drift, the receiver
//! follows a waypoint route at a modulated speed, and each visible link
//! carries a two-state line-of-sight / NLOS Markov chain whose stationary
//! probability is a piecewise-linear function of elevation. LOS noise follows
//! the parametric elevation / C/N0 / acceleration sigma model; NLOS links add
//! a strictly positive exponential bias, lose C/N0 and gain C/N0 variance.
//!
//! Every session owns one `ChaCha8Rng` stream, so output depends only on the
//! seed.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{cn0_linear, ELEVATION_MASK_DEG};
use crate::error::{Error, Result};
use crate::geo::{
    ecef_delta_to_enu, elevation_azimuth, enu_rotation, enu_to_ecef, geodetic_to_ecef, EcefPosition, EnuVector,
    GeodeticPosition, WGS84_A,
};
use crate::io::{Dataset, DatasetHeader, EpochRecord, SessionInfo, Split};
use crate::model::{
    observation_function, Band, ConstellationId, Epoch, LinkKey, NavState, PseudorangeMeasurement, MAX_CN0, SPEED_OF_LIGHT,
};

const EARTH_GM: f64 = 3.986_004_418e14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    OpenSky,
    Suburban,
    UrbanCanyon,
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::OpenSky => "open_sky",
            Profile::Suburban => "suburban",
            Profile::UrbanCanyon => "urban_canyon",
        }
    }
}

/// One constellation's orbital shell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellConfig {
    pub constellation: ConstellationId,
    pub planes: usize,
    pub per_plane: usize,
    /// Orbit radius (m).
    pub radius: f64,
    pub inclination_deg: f64,
}

impl ShellConfig {
    pub fn gps() -> Self {
        Self {
            constellation: ConstellationId::Gps,
            planes: 6,
            per_plane: 4,
            radius: 26.56e6,
            inclination_deg: 55.0,
        }
    }

    pub fn glonass() -> Self {
        Self {
            constellation: ConstellationId::Glonass,
            planes: 3,
            per_plane: 8,
            radius: 25.51e6,
            inclination_deg: 64.8,
        }
    }

    pub fn galileo() -> Self {
        Self {
            constellation: ConstellationId::Galileo,
            planes: 3,
            per_plane: 8,
            radius: 29.6e6,
            inclination_deg: 56.0,
        }
    }

    pub fn beidou() -> Self {
        Self {
            constellation: ConstellationId::Beidou,
            planes: 3,
            per_plane: 8,
            radius: 27.91e6,
            inclination_deg: 55.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Seconds.
    pub duration: f64,
    /// Epochs per second.
    pub rate: f64,
    pub shells: Vec<ShellConfig>,
    pub bands: Vec<Band>,
    pub elevation_mask_deg: f64,
    /// Zenith LOS noise sigma (m).
    pub noise_sigma: f64,
    /// C/N0 noise coefficient (m² times linear C/N0).
    pub noise_cn0_coeff: f64,
    /// Acceleration noise coefficient (m² per (m/s²)²).
    pub noise_accel_coeff: f64,
    /// `(elevation_deg, probability)` knots of the stationary NLOS probability.
    pub nlos_curve: Vec<[f64; 2]>,
    /// Per-epoch mixing rate of the NLOS chain; 1 draws every epoch independently.
    pub nlos_switch_rate: f64,
    /// Mean of the exponential NLOS bias (m).
    pub nlos_bias_mean: f64,
    /// Probability that NLOS onset resets the carrier lock.
    pub nlos_lock_reset_prob: f64,
    /// Zenith C/N0 (dB-Hz).
    pub cn0_base: f64,
    /// C/N0 drop from zenith to horizon (dB).
    pub cn0_elevation_gain: f64,
    /// Mean C/N0 loss under NLOS (dB).
    pub cn0_nlos_penalty: f64,
    /// dB-Hz.
    pub cn0_noise_sigma: f64,
    /// Extra C/N0 variance under NLOS, (dB-Hz)².
    pub multipath_cn0_var: f64,
    /// Receiver clock random walk (s per √s).
    pub clock_walk: f64,
    /// Spread of inter-system clock offsets (s).
    pub intersystem_sigma: f64,
    pub profile: Profile,
    /// `(lat_deg, lon_deg, height_m)` route vertices, driven back and forth.
    pub waypoints: Vec<[f64; 3]>,
    /// Mean speed (m/s).
    pub speed: f64,
    /// Speed modulation amplitude (m/s).
    pub speed_swing: f64,
    /// Speed modulation period (s).
    pub speed_period: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::for_profile(Profile::UrbanCanyon)
    }
}

impl ScenarioConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (curve, bias, noise, penalty): (Vec<[f64; 2]>, f64, f64, f64) = match profile {
            Profile::OpenSky => (vec![[5.0, 0.04], [30.0, 0.01], [90.0, 0.0]], 10.0, 0.5, 8.0),
            Profile::Suburban => (vec![[5.0, 0.3], [30.0, 0.12], [60.0, 0.04], [90.0, 0.01]], 20.0, 0.6, 10.0),
            Profile::UrbanCanyon => (
                vec![[5.0, 0.55], [20.0, 0.45], [45.0, 0.22], [70.0, 0.08], [90.0, 0.04]],
                30.0,
                0.7,
                10.0,
            ),
        };
        Self {
            seed: 1,
            duration: 60.0,
            rate: 5.0,
            shells: vec![ShellConfig::gps(), ShellConfig::galileo()],
            bands: vec![Band::L1],
            elevation_mask_deg: ELEVATION_MASK_DEG,
            noise_sigma: noise,
            noise_cn0_coeff: 1.0e4,
            noise_accel_coeff: 0.05,
            nlos_curve: curve,
            nlos_switch_rate: 0.1,
            nlos_bias_mean: bias,
            nlos_lock_reset_prob: 0.5,
            cn0_base: 50.0,
            cn0_elevation_gain: 15.0,
            cn0_nlos_penalty: penalty,
            cn0_noise_sigma: 1.0,
            multipath_cn0_var: 9.0,
            clock_walk: 1e-9,
            intersystem_sigma: 2e-8,
            profile,
            waypoints: vec![[48.8566, 2.3522, 40.0], [48.8611, 2.3522, 40.0], [48.8611, 2.3590, 45.0]],
            speed: 8.0,
            speed_swing: 3.0,
            speed_period: 40.0,
        }
    }

    /// Copy with every stochastic error source switched off.
    pub fn noise_free(mut self) -> Self {
        self.noise_sigma = 0.0;
        self.noise_cn0_coeff = 0.0;
        self.noise_accel_coeff = 0.0;
        for knot in &mut self.nlos_curve {
            knot[1] = 0.0;
        }
        self
    }

    pub fn epoch_count(&self) -> usize {
        (self.duration * self.rate).round() as usize
    }

    /// Stationary NLOS probability at `elevation` (radians).
    pub fn nlos_probability(&self, elevation: f64) -> f64 {
        let e = elevation.to_degrees();
        let c = &self.nlos_curve;
        if e <= c[0][0] {
            return c[0][1];
        }
        for w in c.windows(2) {
            if e <= w[1][0] {
                let f = (e - w[0][0]) / (w[1][0] - w[0][0]);
                return w[0][1] + f * (w[1][1] - w[0][1]);
            }
        }
        c[c.len() - 1][1]
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_as("scenario")
    }

    pub(crate) fn validate_as(&self, prefix: &str) -> Result<()> {
        let field = |name: &str| format!("{prefix}.{name}");
        let positive = [
            ("duration", self.duration),
            ("rate", self.rate),
            ("speed_period", self.speed_period),
            ("cn0_base", self.cn0_base),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field(name), "must be finite and > 0"));
            }
        }
        let non_negative = [
            ("noise_sigma", self.noise_sigma),
            ("noise_cn0_coeff", self.noise_cn0_coeff),
            ("noise_accel_coeff", self.noise_accel_coeff),
            ("nlos_bias_mean", self.nlos_bias_mean),
            ("cn0_elevation_gain", self.cn0_elevation_gain),
            ("cn0_nlos_penalty", self.cn0_nlos_penalty),
            ("cn0_noise_sigma", self.cn0_noise_sigma),
            ("multipath_cn0_var", self.multipath_cn0_var),
            ("clock_walk", self.clock_walk),
            ("intersystem_sigma", self.intersystem_sigma),
            ("speed", self.speed),
            ("speed_swing", self.speed_swing),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field(name), "must be finite and >= 0"));
            }
        }
        if self.speed_swing > self.speed {
            return Err(Error::config(field("speed_swing"), "must not exceed speed"));
        }
        if !(self.elevation_mask_deg >= 0.0 && self.elevation_mask_deg < 90.0) {
            return Err(Error::config(field("elevation_mask_deg"), "must lie in [0, 90)"));
        }
        if !(self.nlos_switch_rate > 0.0 && self.nlos_switch_rate <= 1.0) {
            return Err(Error::config(field("nlos_switch_rate"), "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.nlos_lock_reset_prob) {
            return Err(Error::config(field("nlos_lock_reset_prob"), "probability must lie in [0, 1]"));
        }
        if self.nlos_curve.is_empty() {
            return Err(Error::config(field("nlos_curve"), "needs at least one knot"));
        }
        for (k, knot) in self.nlos_curve.iter().enumerate() {
            if !(0.0..=1.0).contains(&knot[1]) {
                return Err(Error::config(
                    format!("{prefix}.nlos_curve[{k}]"),
                    format!("probability {} must lie in [0, 1]", knot[1]),
                ));
            }
            if !(0.0..=90.0).contains(&knot[0]) || (k > 0 && knot[0] <= self.nlos_curve[k - 1][0]) {
                return Err(Error::config(
                    format!("{prefix}.nlos_curve[{k}]"),
                    "elevations must be increasing within [0, 90] degrees",
                ));
            }
        }
        if self.shells.is_empty() {
            return Err(Error::config(field("shells"), "needs at least one constellation"));
        }
        for (k, s) in self.shells.iter().enumerate() {
            if s.planes == 0 || s.per_plane == 0 || s.planes * s.per_plane > u16::MAX as usize {
                return Err(Error::config(format!("{prefix}.shells[{k}]"), "satellite count out of range"));
            }
            if !(s.radius > 2.0 * WGS84_A && s.radius.is_finite()) {
                return Err(Error::config(format!("{prefix}.shells[{k}].radius"), "must exceed two Earth radii"));
            }
            if self.shells[..k].iter().any(|o| o.constellation == s.constellation) {
                return Err(Error::config(format!("{prefix}.shells[{k}]"), "constellation listed twice"));
            }
        }
        let mut bands = self.bands.clone();
        bands.sort();
        bands.dedup();
        if bands.is_empty() || bands.len() != self.bands.len() {
            return Err(Error::config(field("bands"), "must be a non-empty list without repeats"));
        }
        if self.waypoints.is_empty() {
            return Err(Error::config(field("waypoints"), "needs at least one waypoint"));
        }
        for (k, w) in self.waypoints.iter().enumerate() {
            if !(w[0].abs() <= 89.0 && w[1].abs() <= 180.0 && w[2].abs() < 1e5) {
                return Err(Error::config(format!("{prefix}.waypoints[{k}]"), "latitude, longitude or height out of range"));
            }
        }
        Ok(())
    }
}

/// Ground truth of one simulated link at one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkTruth {
    pub key: LinkKey,
    /// True elevation (radians).
    pub elevation: f64,
    pub nlos: bool,
    /// Injected NLOS bias (m); 0 on LOS links.
    pub bias: f64,
    /// Gaussian error (m).
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTruth {
    pub time: f64,
    pub position: EcefPosition,
    /// ECEF velocity (m/s).
    pub velocity: [f64; 3],
    /// Magnitude of the second difference of the trajectory (m/s²).
    pub acceleration: f64,
    /// Constellation clock biases (s).
    pub clock_bias: BTreeMap<ConstellationId, f64>,
    /// Aligned with the epoch's measurements.
    pub links: Vec<LinkTruth>,
}

impl EpochTruth {
    pub fn fault_count(&self) -> usize {
        self.links.iter().filter(|l| l.nlos).count()
    }
}

/// Per-epoch truth aligned one to one with a session's epochs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionTruth {
    pub epochs: Vec<EpochTruth>,
}

struct Route {
    origin: GeodeticPosition,
    vertices: Vec<Vector3<f64>>,
    cumulative: Vec<f64>,
}

impl Route {
    fn new(waypoints: &[[f64; 3]]) -> Self {
        let origin = GeodeticPosition::from_degrees(waypoints[0][0], waypoints[0][1], waypoints[0][2]);
        let origin_ecef = geodetic_to_ecef(origin).to_vector();
        let vertices: Vec<Vector3<f64>> = waypoints
            .iter()
            .map(|w| {
                let p = geodetic_to_ecef(GeodeticPosition::from_degrees(w[0], w[1], w[2])).to_vector();
                let e = ecef_delta_to_enu(p - origin_ecef, origin);
                Vector3::new(e.east, e.north, e.up)
            })
            .collect();
        let mut cumulative = vec![0.0];
        for w in vertices.windows(2) {
            let last = cumulative[cumulative.len() - 1];
            cumulative.push(last + (w[1] - w[0]).norm());
        }
        Self {
            origin,
            vertices,
            cumulative,
        }
    }

    fn total(&self) -> f64 {
        self.cumulative[self.cumulative.len() - 1]
    }

    /// Local position after travelling `s` meters, driving the route back and forth.
    fn at(&self, s: f64) -> Vector3<f64> {
        let total = self.total();
        if total <= 0.0 {
            return self.vertices[0];
        }
        let mut u = s.rem_euclid(2.0 * total);
        if u > total {
            u = 2.0 * total - u;
        }
        let k = match self.cumulative.iter().position(|c| *c >= u) {
            Some(0) => 1,
            Some(k) => k,
            None => self.cumulative.len() - 1,
        };
        let len = self.cumulative[k] - self.cumulative[k - 1];
        let f = if len > 0.0 { (u - self.cumulative[k - 1]) / len } else { 0.0 };
        self.vertices[k - 1] + (self.vertices[k] - self.vertices[k - 1]) * f
    }
}

fn distance_travelled(cfg: &ScenarioConfig, t: f64) -> f64 {
    let w = TAU / cfg.speed_period;
    cfg.speed * t + cfg.speed_swing / w * (1.0 - (w * t).cos())
}

struct Orbit {
    constellation: ConstellationId,
    sv_id: u16,
    radius: f64,
    raan: f64,
    inclination: f64,
    phase: f64,
    motion: f64,
}

impl Orbit {
    fn position(&self, t: f64) -> EcefPosition {
        let u = self.phase + self.motion * t;
        let (su, cu) = u.sin_cos();
        let (so, co) = self.raan.sin_cos();
        let (si, ci) = self.inclination.sin_cos();
        EcefPosition::new(
            self.radius * (co * cu - so * su * ci),
            self.radius * (so * cu + co * su * ci),
            self.radius * su * si,
        )
    }
}

fn orbits(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<Orbit> {
    let mut out = Vec::new();
    for shell in &cfg.shells {
        let raan0 = rng.random_range(0.0..TAU);
        let phase0 = rng.random_range(0.0..TAU);
        let motion = (EARTH_GM / shell.radius.powi(3)).sqrt();
        for p in 0..shell.planes {
            for k in 0..shell.per_plane {
                let stagger = PI * p as f64 / (shell.planes * shell.per_plane) as f64;
                out.push(Orbit {
                    constellation: shell.constellation,
                    sv_id: (p * shell.per_plane + k + 1) as u16,
                    radius: shell.radius,
                    raan: raan0 + TAU * p as f64 / shell.planes as f64,
                    inclination: shell.inclination_deg.to_radians(),
                    phase: phase0 + TAU * k as f64 / shell.per_plane as f64 + stagger,
                    motion,
                });
            }
        }
    }
    out
}

#[derive(Clone, Copy, Default)]
struct LinkState {
    visible_at: Option<usize>,
    nlos: bool,
    bias: f64,
    lock: f64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Generates one session's epochs (with truth) and the matching truth record.
pub fn generate_session(cfg: &ScenarioConfig) -> Result<(Vec<Epoch>, SessionTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let orbits = orbits(cfg, &mut rng);
    let route = Route::new(&cfg.waypoints);
    let rotation_t = enu_rotation(route.origin).transpose();
    let dt = 1.0 / cfg.rate;
    let mask = cfg.elevation_mask_deg.to_radians();

    let constellations: Vec<ConstellationId> = {
        let mut c: Vec<ConstellationId> = cfg.shells.iter().map(|s| s.constellation).collect();
        c.sort();
        c
    };
    let mut isb = BTreeMap::new();
    for (k, c) in constellations.iter().enumerate() {
        isb.insert(*c, if k == 0 { 0.0 } else { cfg.intersystem_sigma * normal(&mut rng) });
    }
    let mut clock = rng.random_range(-1e-4..1e-4);
    let mut links: BTreeMap<(ConstellationId, u16), LinkState> = BTreeMap::new();

    let local = |t: f64| route.at(distance_travelled(cfg, t));
    let n_epochs = cfg.epoch_count();
    let mut epochs = Vec::with_capacity(n_epochs);
    let mut truth = SessionTruth {
        epochs: Vec::with_capacity(n_epochs),
    };

    for k in 0..n_epochs {
        let t = k as f64 * dt;
        if k > 0 {
            clock += cfg.clock_walk * dt.sqrt() * normal(&mut rng);
        }
        let here = local(t);
        let rx = enu_to_ecef(
            EnuVector {
                east: here.x,
                north: here.y,
                up: here.z,
            },
            route.origin,
        );
        let rx_geo = crate::geo::ecef_to_geodetic(rx)?;
        let second_diff = (local(t + dt) - 2.0 * here + local(t - dt)) / (dt * dt);
        let accel = second_diff.norm();
        let velocity = rotation_t * ((local(t + dt) - local(t - dt)) / (2.0 * dt));
        let clock_bias: BTreeMap<ConstellationId, f64> = isb.iter().map(|(c, b)| (*c, clock + b)).collect();

        let mut pairs: Vec<(PseudorangeMeasurement, LinkTruth)> = Vec::new();
        for orbit in &orbits {
            let sat = orbit.position(t);
            let (elevation, _) = elevation_azimuth(sat, rx_geo)?;
            let id = (orbit.constellation, orbit.sv_id);
            let state = links.entry(id).or_default();
            if elevation <= mask {
                state.visible_at = None;
                continue;
            }
            let p = cfg.nlos_probability(elevation);
            let continuing = state.visible_at == Some(k.wrapping_sub(1)) && k > 0;
            if continuing {
                state.lock += dt;
                let was_nlos = state.nlos;
                state.nlos = if was_nlos {
                    !rng.random_bool(cfg.nlos_switch_rate * (1.0 - p))
                } else {
                    rng.random_bool(cfg.nlos_switch_rate * p)
                };
                if state.nlos && !was_nlos {
                    state.bias = cfg.nlos_bias_mean * rng.sample::<f64, _>(Exp1);
                    if rng.random_bool(cfg.nlos_lock_reset_prob) {
                        state.lock = 0.0;
                    }
                }
            } else {
                state.lock = 0.0;
                state.nlos = rng.random_bool(p);
                if state.nlos {
                    state.bias = cfg.nlos_bias_mean * rng.sample::<f64, _>(Exp1);
                }
            }
            state.visible_at = Some(k);
            let bias = if state.nlos { state.bias } else { 0.0 };
            let range = rx.distance(sat) + SPEED_OF_LIGHT * clock_bias[&orbit.constellation];
            let sin_el = elevation.sin();
            for band in &cfg.bands {
                let cn0_sigma = if state.nlos {
                    (cfg.cn0_noise_sigma.powi(2) + cfg.multipath_cn0_var).sqrt()
                } else {
                    cfg.cn0_noise_sigma
                };
                let penalty = if state.nlos { cfg.cn0_nlos_penalty } else { 0.0 };
                let cn0 = (cfg.cn0_base - cfg.cn0_elevation_gain * (1.0 - sin_el) - penalty + cn0_sigma * normal(&mut rng))
                    .clamp(0.0, MAX_CN0);
                let var = (cfg.noise_sigma.powi(2) + cfg.noise_cn0_coeff / cn0_linear(cn0) + cfg.noise_accel_coeff * accel * accel)
                    / (sin_el * sin_el);
                let noise = var.sqrt() * normal(&mut rng);
                let m = PseudorangeMeasurement {
                    constellation: orbit.constellation,
                    sv_id: orbit.sv_id,
                    band: *band,
                    pseudorange: range + noise + bias,
                    sat_pos: sat,
                    cn0,
                    lock_time: state.lock,
                };
                let lt = LinkTruth {
                    key: m.key(),
                    elevation,
                    nlos: state.nlos,
                    bias,
                    noise,
                };
                pairs.push((m, lt));
            }
        }
        pairs.sort_by_key(|(m, _)| m.key());
        let (measurements, link_truth): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        if measurements.is_empty() {
            return Err(Error::config("scenario.shells", format!("no satellite visible at t = {t} s")));
        }
        epochs.push(Epoch::new(t, measurements, Some(rx))?);
        truth.epochs.push(EpochTruth {
            time: t,
            position: rx,
            velocity: [velocity.x, velocity.y, velocity.z],
            acceleration: accel,
            clock_bias,
            links: link_truth,
        });
    }
    Ok((epochs, truth))
}

/// Profile entry of a campaign, with optional overrides of the profile defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub profile: Profile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_cn0_coeff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_accel_coeff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nlos_curve: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nlos_bias_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cn0_nlos_penalty: Option<f64>,
}

impl ProfileSpec {
    pub fn new(profile: Profile) -> Self {
        Self {
            profile,
            noise_sigma: None,
            noise_cn0_coeff: None,
            noise_accel_coeff: None,
            nlos_curve: None,
            nlos_bias_mean: None,
            cn0_nlos_penalty: None,
        }
    }

    fn scenario(&self) -> ScenarioConfig {
        let mut s = ScenarioConfig::for_profile(self.profile);
        if let Some(v) = self.noise_sigma {
            s.noise_sigma = v;
        }
        if let Some(v) = self.noise_cn0_coeff {
            s.noise_cn0_coeff = v;
        }
        if let Some(v) = self.noise_accel_coeff {
            s.noise_accel_coeff = v;
        }
        if let Some(v) = &self.nlos_curve {
            s.nlos_curve = v.clone();
        }
        if let Some(v) = self.nlos_bias_mean {
            s.nlos_bias_mean = v;
        }
        if let Some(v) = self.cn0_nlos_penalty {
            s.cn0_nlos_penalty = v;
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub profiles: Vec<ProfileSpec>,
    pub sessions_per_profile: usize,
    /// Seconds per session.
    pub duration: f64,
    pub rate: f64,
    pub shells: Vec<ShellConfig>,
    pub bands: Vec<Band>,
    /// Train / validation / test session fractions.
    pub split: [f64; 3],
    /// Side of the square route driven in every session (m).
    pub route_size: f64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            profiles: vec![ProfileSpec::new(Profile::UrbanCanyon)],
            sessions_per_profile: 30,
            duration: 200.0,
            rate: 5.0,
            shells: vec![ShellConfig::gps(), ShellConfig::galileo()],
            bands: vec![Band::L1],
            split: [0.6, 0.2, 0.2],
            route_size: 400.0,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.profiles.is_empty() {
            return Err(Error::config("simulate.profiles", "needs at least one profile"));
        }
        if self.sessions_per_profile < 3 {
            return Err(Error::config("simulate.sessions_per_profile", "must be >= 3 so every split is populated"));
        }
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("simulate.split", "fractions must lie in [0, 1] and sum to 1"));
        }
        if !(self.route_size >= 0.0 && self.route_size < 1e5) {
            return Err(Error::config("simulate.route_size", "must lie in [0, 1e5) m"));
        }
        for (k, p) in self.profiles.iter().enumerate() {
            self.scenario(p, 0, [[0.0, 0.0, 0.0]].to_vec())
                .validate_as(&format!("simulate.profiles[{k}]"))?;
        }
        Ok(())
    }

    fn scenario(&self, spec: &ProfileSpec, seed: u64, waypoints: Vec<[f64; 3]>) -> ScenarioConfig {
        let mut s = spec.scenario();
        s.seed = seed;
        s.duration = self.duration;
        s.rate = self.rate;
        s.shells = self.shells.clone();
        s.bands = self.bands.clone();
        s.waypoints = waypoints;
        s
    }
}

/// Session counts `(train, validation, test)` for `n` sessions. Validation
/// and test each get at least one session when their fraction is nonzero.
pub fn split_counts(n: usize, split: [f64; 3]) -> [usize; 3] {
    let part = |f: f64| if f > 0.0 { ((f * n as f64).round() as usize).max(1) } else { 0 };
    let val = part(split[1]).min(n);
    let test = part(split[2]).min(n - val);
    [n - val - test, val, test]
}

fn random_route(rng: &mut ChaCha8Rng, size: f64) -> Vec<[f64; 3]> {
    let lat: f64 = rng.random_range(-55.0..55.0);
    let lon: f64 = rng.random_range(-180.0..180.0);
    let height: f64 = rng.random_range(0.0..300.0);
    let heading: f64 = rng.random_range(0.0..TAU);
    let origin = GeodeticPosition::from_degrees(lat, lon, height);
    let corners = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.0, 0.0)];
    corners
        .iter()
        .map(|(a, b)| {
            let (s, c) = heading.sin_cos();
            let east = size * (a * c - b * s);
            let north = size * (a * s + b * c);
            let p = enu_to_ecef(EnuVector { east, north, up: 0.0 }, origin);
            let g = crate::geo::ecef_to_geodetic(p).expect("route stays on the surface");
            [g.latitude.to_degrees(), g.longitude.to_degrees(), g.height]
        })
        .collect()
}

/// Generates every session of a campaign with a session-level split.
///
/// Sessions are numbered profile by profile; within each profile a seeded
/// shuffle assigns the split, so every profile contributes to every split.
pub fn generate_campaign(cfg: &CampaignConfig, seed: u64) -> Result<(Dataset, Vec<SessionTruth>)> {
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::new();
    let mut sessions = Vec::new();
    for spec in &cfg.profiles {
        let n = cfg.sessions_per_profile;
        let counts = split_counts(n, cfg.split);
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut master);
        let mut splits = vec![Split::Test; n];
        for (rank, idx) in order.iter().enumerate() {
            splits[*idx] = if rank < counts[0] {
                Split::Train
            } else if rank < counts[0] + counts[1] {
                Split::Validation
            } else {
                Split::Test
            };
        }
        for split in splits {
            let id = sessions.len() as u32;
            let session_seed: u64 = master.random();
            let route = random_route(&mut master, cfg.route_size);
            jobs.push(cfg.scenario(spec, session_seed, route));
            sessions.push(SessionInfo {
                id,
                profile: spec.profile,
                split,
            });
        }
    }
    let generated = jobs.par_iter().map(generate_session).collect::<Result<Vec<_>>>()?;
    let mut records = Vec::new();
    let mut truths = Vec::with_capacity(generated.len());
    for (info, (epochs, truth)) in sessions.iter().zip(generated) {
        records.extend(epochs.into_iter().map(|epoch| EpochRecord {
            session_id: info.id,
            epoch,
        }));
        truths.push(truth);
    }
    Ok((
        Dataset {
            header: DatasetHeader::new(seed, sessions),
            records,
        },
        truths,
    ))
}

/// Largest position dilution of precision `random_geometry_epoch` accepts.
pub const MAX_PDOP: f64 = 100.0;

fn pdop(e: &Epoch) -> Option<f64> {
    let state = NavState {
        position: e.truth?,
        clock_bias: e.constellations().into_iter().map(|c| (c, 0.0)).collect(),
    };
    let h = crate::solver::jacobian(&state, e).ok()?;
    let inv = (h.transpose() * &h).try_inverse()?;
    Some((inv[(0, 0)] + inv[(1, 1)] + inv[(2, 2)]).sqrt())
}

/// Random visible-sky epoch for Monte-Carlo tests: `n` GPS-like satellites
/// above `min_elevation_deg`, a receiver on the ellipsoid and a GPS clock bias.
/// Pseudoranges are noise-free. When `n` covers the unknowns, draws with
/// PDOP above [`MAX_PDOP`] are redrawn, up to 1000 times.
pub fn random_geometry_epoch(rng: &mut impl Rng, n: usize, constellations: &[ConstellationId], min_elevation_deg: f64) -> Epoch {
    let mut e = draw_geometry(rng, n, constellations, min_elevation_deg);
    for _ in 0..1000 {
        if n < 3 + e.constellations().len() || pdop(&e).is_some_and(|p| p <= MAX_PDOP) {
            break;
        }
        e = draw_geometry(rng, n, constellations, min_elevation_deg);
    }
    e
}

fn draw_geometry(rng: &mut impl Rng, n: usize, constellations: &[ConstellationId], min_elevation_deg: f64) -> Epoch {
    let rx_geo = GeodeticPosition::from_degrees(rng.random_range(-70.0..70.0), rng.random_range(-180.0..180.0), rng.random_range(-50.0..500.0));
    let rx = geodetic_to_ecef(rx_geo);
    let rot_t = enu_rotation(rx_geo).transpose();
    let biases: Vec<f64> = constellations.iter().map(|_| rng.random_range(-1e-3..1e-3)).collect();
    let mut state = NavState::new(rx);
    for (c, b) in constellations.iter().zip(&biases) {
        state = state.with_bias(*c, *b);
    }
    let mut measurements = Vec::with_capacity(n);
    for k in 0..n {
        let c = k % constellations.len();
        let el = rng.random_range(min_elevation_deg.to_radians()..PI / 2.0 - 1e-3);
        let az = rng.random_range(0.0..TAU);
        let los = Vector3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin());
        let dir = rot_t * los;
        let r0 = rx.to_vector();
        let radius = 26.56e6;
        let b = r0.dot(&dir);
        let range = -b + (b * b - r0.norm_squared() + radius * radius).sqrt();
        let sat = EcefPosition::from_vector(&(r0 + dir * range));
        let mut m = PseudorangeMeasurement {
            constellation: constellations[c],
            sv_id: (k + 1) as u16,
            band: Band::L1,
            pseudorange: range,
            sat_pos: sat,
            cn0: 45.0,
            lock_time: 10.0,
        };
        m.pseudorange = observation_function(&state, &m).expect("every constellation has a bias");
        measurements.push(m);
    }
    Epoch::new(0.0, measurements, Some(rx)).expect("constructed measurements are valid")
}
