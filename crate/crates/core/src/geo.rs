//! WGS-84 coordinate frames and line-of-sight geometry.
//!
//! Positions are carried in Earth-centered Earth-fixed (ECEF) meters; local
//! errors and satellite angles are expressed in the east-north-up (ENU)
//! tangent frame at a geodetic reference point.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// WGS-84 semi-major axis (m).
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// WGS-84 semi-minor axis (m).
pub const WGS84_B: f64 = WGS84_A * (1.0 - WGS84_F);
/// First eccentricity squared.
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

const MIN_GEOCENTRIC_NORM: f64 = 1e5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EcefPosition {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EcefPosition {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn norm(self) -> f64 {
        self.to_vector().norm()
    }

    pub fn distance(self, other: EcefPosition) -> f64 {
        (self.to_vector() - other.to_vector()).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Latitude and longitude in radians, height in meters above the ellipsoid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeodeticPosition {
    pub latitude: f64,
    pub longitude: f64,
    pub height: f64,
}

impl GeodeticPosition {
    pub const fn new(latitude: f64, longitude: f64, height: f64) -> Self {
        Self {
            latitude,
            longitude,
            height,
        }
    }

    pub fn from_degrees(lat_deg: f64, lon_deg: f64, height: f64) -> Self {
        Self::new(lat_deg.to_radians(), lon_deg.to_radians(), height)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnuVector {
    pub east: f64,
    pub north: f64,
    pub up: f64,
}

impl EnuVector {
    pub fn norm(self) -> f64 {
        (self.east * self.east + self.north * self.north + self.up * self.up).sqrt()
    }

    pub fn horizontal(self) -> f64 {
        self.east.hypot(self.north)
    }
}

pub fn geodetic_to_ecef(g: GeodeticPosition) -> EcefPosition {
    let (sin_lat, cos_lat) = g.latitude.sin_cos();
    let (sin_lon, cos_lon) = g.longitude.sin_cos();
    let n = prime_vertical_radius(sin_lat);
    EcefPosition::new(
        (n + g.height) * cos_lat * cos_lon,
        (n + g.height) * cos_lat * sin_lon,
        (n * (1.0 - WGS84_E2) + g.height) * sin_lat,
    )
}

/// Inverse of [`geodetic_to_ecef`].
///
/// Latitude is refined by fixed-point iteration on
/// `tan(lat) = z / (p (1 - e² N / (N + h)))`, with the height evaluated through
/// the pole-safe form `h = p cos(lat) + z sin(lat) - a sqrt(1 - e² sin²(lat))`.
pub fn ecef_to_geodetic(p: EcefPosition) -> Result<GeodeticPosition> {
    let norm = p.norm();
    if !(norm > MIN_GEOCENTRIC_NORM) {
        return Err(Error::NearGeocenter(norm));
    }
    let rho = p.x.hypot(p.y);
    let longitude = if rho == 0.0 { 0.0 } else { p.y.atan2(p.x) };
    let mut latitude = p.z.atan2(rho * (1.0 - WGS84_E2));
    for _ in 0..30 {
        let (sin_lat, cos_lat) = latitude.sin_cos();
        let n = prime_vertical_radius(sin_lat);
        let height = rho * cos_lat + p.z * sin_lat - WGS84_A * (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
        let next = p.z.atan2(rho * (1.0 - WGS84_E2 * n / (n + height)));
        let delta = (next - latitude).abs();
        latitude = next;
        if delta < 1e-15 {
            break;
        }
    }
    let (sin_lat, cos_lat) = latitude.sin_cos();
    let height = rho * cos_lat + p.z * sin_lat - WGS84_A * (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
    // atan2 yields (-π, π]; keep the documented half-open range.
    let longitude = if longitude <= -PI { longitude + TAU } else { longitude };
    Ok(GeodeticPosition::new(latitude, longitude, height))
}

fn prime_vertical_radius(sin_lat: f64) -> f64 {
    WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt()
}

/// Rotation taking ECEF difference vectors into the ENU frame at `reference`.
pub fn enu_rotation(reference: GeodeticPosition) -> Matrix3<f64> {
    let (sin_lat, cos_lat) = reference.latitude.sin_cos();
    let (sin_lon, cos_lon) = reference.longitude.sin_cos();
    Matrix3::new(
        -sin_lon,
        cos_lon,
        0.0,
        -sin_lat * cos_lon,
        -sin_lat * sin_lon,
        cos_lat,
        cos_lat * cos_lon,
        cos_lat * sin_lon,
        sin_lat,
    )
}

pub fn ecef_delta_to_enu(delta: Vector3<f64>, reference: GeodeticPosition) -> EnuVector {
    let v = enu_rotation(reference) * delta;
    EnuVector {
        east: v.x,
        north: v.y,
        up: v.z,
    }
}

pub fn ecef_to_enu(p: EcefPosition, reference: GeodeticPosition) -> EnuVector {
    let origin = geodetic_to_ecef(reference);
    ecef_delta_to_enu(p.to_vector() - origin.to_vector(), reference)
}

/// Inverse of [`ecef_to_enu`].
pub fn enu_to_ecef(v: EnuVector, reference: GeodeticPosition) -> EcefPosition {
    let origin = geodetic_to_ecef(reference).to_vector();
    let delta = enu_rotation(reference).transpose() * Vector3::new(v.east, v.north, v.up);
    EcefPosition::from_vector(&(origin + delta))
}

/// Elevation in `[-π/2, π/2]` and azimuth clockwise from north in `[0, 2π)`,
/// both in radians, of `sat` as seen from `rx`.
pub fn elevation_azimuth(sat: EcefPosition, rx: GeodeticPosition) -> Result<(f64, f64)> {
    let enu = ecef_to_enu(sat, rx);
    let range = enu.norm();
    if !(range > 0.0) {
        return Err(Error::ZeroRange);
    }
    let elevation = (enu.up / range).clamp(-1.0, 1.0).asin();
    let mut azimuth = enu.east.atan2(enu.north);
    if azimuth < 0.0 {
        azimuth += TAU;
    }
    if azimuth >= TAU {
        azimuth -= TAU;
    }
    Ok((elevation.clamp(-FRAC_PI_2, FRAC_PI_2), azimuth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equator_prime_meridian() {
        let p = geodetic_to_ecef(GeodeticPosition::new(0.0, 0.0, 0.0));
        assert_eq!(p, EcefPosition::new(6_378_137.0, 0.0, 0.0));
        let g = ecef_to_geodetic(p).unwrap();
        assert_eq!((g.latitude, g.longitude), (0.0, 0.0));
        assert!(g.height.abs() < 1e-9);
    }

    #[test]
    fn north_pole_is_semi_minor_axis() {
        let p = geodetic_to_ecef(GeodeticPosition::new(FRAC_PI_2, 0.0, 0.0));
        assert!(p.x.abs() < 1e-9 && p.y.abs() < 1e-9);
        assert!((p.z - 6_356_752.314_245).abs() < 1e-5);
        assert!((p.z - WGS84_B).abs() < 1e-9);
    }

    #[test]
    fn quarter_turn_longitude() {
        let g = ecef_to_geodetic(EcefPosition::new(0.0, 6_378_137.0, 0.0)).unwrap();
        assert!(g.latitude.abs() < 1e-15);
        assert!((g.longitude - FRAC_PI_2).abs() < 1e-15);
        assert!(g.height.abs() < 1e-9);
    }

    #[test]
    fn geocenter_is_rejected() {
        assert!(matches!(
            ecef_to_geodetic(EcefPosition::new(10.0, 0.0, 0.0)),
            Err(Error::NearGeocenter(_))
        ));
    }

    #[test]
    fn straight_up_is_up() {
        let r = GeodeticPosition::from_degrees(45.2, 5.7, 210.0);
        let above = geodetic_to_ecef(GeodeticPosition { height: 220.0, ..r });
        let enu = ecef_to_enu(above, r);
        assert!(enu.east.abs() < 1e-8 && enu.north.abs() < 1e-8);
        assert!((enu.up - 10.0).abs() < 1e-8);
        let origin = ecef_to_enu(geodetic_to_ecef(r), r);
        assert_eq!(origin.norm(), 0.0);
    }

    #[test]
    fn zenith_and_north_horizon() {
        let rx = GeodeticPosition::from_degrees(48.0, 2.0, 100.0);
        let zenith = enu_to_ecef(EnuVector { east: 0.0, north: 0.0, up: 2e7 }, rx);
        let (el, _) = elevation_azimuth(zenith, rx).unwrap();
        assert!((el - FRAC_PI_2).abs() < 1e-9);

        let north = enu_to_ecef(EnuVector { east: 0.0, north: 2e7, up: 0.0 }, rx);
        let (el, az) = elevation_azimuth(north, rx).unwrap();
        assert!(el.abs() < 1e-9);
        assert!(az.abs() < 1e-9 || (az - TAU).abs() < 1e-9);

        let rx_ecef = geodetic_to_ecef(rx);
        assert!(matches!(elevation_azimuth(rx_ecef, rx), Err(Error::ZeroRange)));
    }

    fn geodetic() -> impl Strategy<Value = GeodeticPosition> {
        (-FRAC_PI_2..=FRAC_PI_2, -PI + 1e-12..=PI, -100.0..20_200_000.0f64)
            .prop_map(|(la, lo, h)| GeodeticPosition::new(la, lo, h))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn roundtrip(g in geodetic()) {
            let back = ecef_to_geodetic(geodetic_to_ecef(g)).unwrap();
            let err = geodetic_to_ecef(back).distance(geodetic_to_ecef(g));
            prop_assert!(err < 1e-4, "err {err}");
            prop_assert!((back.height - g.height).abs() < 1e-4);
            if g.latitude.abs() < FRAC_PI_2 - 1e-9 {
                prop_assert!((back.latitude - g.latitude).abs() < 1e-9);
            }
        }

        #[test]
        fn enu_is_isometry(r in geodetic(), dx in -3e7..3e7f64, dy in -3e7..3e7f64, dz in -3e7..3e7f64) {
            let origin = geodetic_to_ecef(r);
            let p = EcefPosition::new(origin.x + dx, origin.y + dy, origin.z + dz);
            let d = p.distance(origin);
            let enu = ecef_to_enu(p, r);
            prop_assume!(d > 1.0);
            prop_assert!(((enu.norm() - d) / d).abs() < 1e-9);
        }

        #[test]
        fn angle_ranges(r in geodetic(), dx in -3e7..3e7f64, dy in -3e7..3e7f64, dz in -3e7..3e7f64) {
            let origin = geodetic_to_ecef(r);
            let sat = EcefPosition::new(origin.x + dx, origin.y + dy, origin.z + dz);
            let (el, az) = elevation_azimuth(sat, r).unwrap();
            prop_assert!((-FRAC_PI_2..=FRAC_PI_2).contains(&el));
            prop_assert!((0.0..TAU).contains(&az));
        }
    }
}
