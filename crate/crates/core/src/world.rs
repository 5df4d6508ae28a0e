//! Local coordinate frames and GPS / barometer measurement models.
//!
//! Everything in the simulator lives in an east-north-up frame anchored at a
//! mission origin. Geodetic coordinates only appear at the telemetry boundary.

use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean earth radius used by the equirectangular projection.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Projection is only valid for points this close to the origin.
pub const MAX_PROJECTION_RANGE_M: f64 = 10_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("point is {0:.0} m from origin, projection limited to 10 km")]
    OutOfRange(f64),
}

/// WGS-84 position. `alt` is meters above the mission origin, not the ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub alt: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64, alt: f64) -> Result<Self, WorldError> {
        let p = Self { lat, lon, alt };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if !(-90.0..=90.0).contains(&self.lat) || !self.lat.is_finite() {
            return Err(WorldError::Latitude(self.lat));
        }
        if !(-180.0..=180.0).contains(&self.lon) || !self.lon.is_finite() {
            return Err(WorldError::Longitude(self.lon));
        }
        Ok(())
    }

    /// Fixed-point 1e-7 degree latitude, as carried on the wire.
    pub fn lat_e7(&self) -> i32 {
        (self.lat * 1e7).round() as i32
    }

    pub fn lon_e7(&self) -> i32 {
        (self.lon * 1e7).round() as i32
    }

    pub fn alt_mm(&self) -> i32 {
        (self.alt * 1000.0).round() as i32
    }

    pub fn from_wire(lat_e7: i32, lon_e7: i32, alt_mm: i32) -> Self {
        Self {
            lat: lat_e7 as f64 * 1e-7,
            lon: lon_e7 as f64 * 1e-7,
            alt: alt_mm as f64 * 1e-3,
        }
    }
}

/// Plain 3-vector in the local ENU frame (x = east, y = north, z = up).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const UP: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };
    pub const DOWN: Vec3 = Vec3 { x: 0.0, y: 0.0, z: -1.0 };
    pub const EAST: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const NORTH: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn horizontal_norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Unit vector, or `None` for a (near) zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 1e-12).then(|| self * (1.0 / n))
    }

    /// Horizontal unit vector at heading `yaw` (radians, counter-clockwise from east).
    pub fn from_yaw(yaw: f64) -> Vec3 {
        Vec3::new(yaw.cos(), yaw.sin(), 0.0)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Position relative to the mission origin plus heading.
///
/// `yaw` is measured counter-clockwise from east, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnuPose {
    pub east: f64,
    pub north: f64,
    pub up: f64,
    #[serde(default)]
    pub yaw: f64,
}

impl EnuPose {
    pub const fn new(east: f64, north: f64, up: f64, yaw: f64) -> Self {
        Self { east, north, up, yaw }
    }

    pub fn at(east: f64, north: f64, up: f64) -> Self {
        Self::new(east, north, up, 0.0)
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.east, self.north, self.up)
    }

    pub fn with_position(self, p: Vec3) -> Self {
        Self { east: p.x, north: p.y, up: p.z, ..self }
    }

    pub fn horizontal_distance(&self, other: &EnuPose) -> f64 {
        (self.east - other.east).hypot(self.north - other.north)
    }

    pub fn distance(&self, other: &EnuPose) -> f64 {
        (self.position() - other.position()).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.position().is_finite() && self.yaw.is_finite()
    }
}

fn meters_per_degree() -> f64 {
    EARTH_RADIUS_M * std::f64::consts::PI / 180.0
}

/// Equirectangular projection of `p` into the ENU frame anchored at `origin`.
pub fn enu_from_geodetic(origin: GeoPoint, p: GeoPoint) -> Result<EnuPose, WorldError> {
    origin.validate()?;
    p.validate()?;
    let m = meters_per_degree();
    let mut dlon = p.lon - origin.lon;
    if dlon > 180.0 {
        dlon -= 360.0;
    } else if dlon < -180.0 {
        dlon += 360.0;
    }
    let east = dlon * origin.lat.to_radians().cos() * m;
    let north = (p.lat - origin.lat) * m;
    let range = east.hypot(north);
    if range >= MAX_PROJECTION_RANGE_M {
        return Err(WorldError::OutOfRange(range));
    }
    Ok(EnuPose::new(east, north, p.alt - origin.alt, 0.0))
}

/// Inverse of [`enu_from_geodetic`].
pub fn geodetic_from_enu(origin: GeoPoint, pose: &EnuPose) -> Result<GeoPoint, WorldError> {
    origin.validate()?;
    let range = pose.east.hypot(pose.north);
    if range >= MAX_PROJECTION_RANGE_M {
        return Err(WorldError::OutOfRange(range));
    }
    let m = meters_per_degree();
    let lat = origin.lat + pose.north / m;
    let mut lon = origin.lon + pose.east / (m * origin.lat.to_radians().cos());
    if lon > 180.0 {
        lon -= 360.0;
    } else if lon < -180.0 {
        lon += 360.0;
    }
    GeoPoint::new(lat, lon, origin.alt + pose.up)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpsModel {
    /// Per-axis std-dev of the constant bias drawn at mission start.
    pub bias_sigma_m: f64,
    /// Per-axis std-dev of white noise added to every fix.
    pub noise_sigma_m: f64,
}

impl Default for GpsModel {
    fn default() -> Self {
        Self { bias_sigma_m: 1.5, noise_sigma_m: 0.5 }
    }
}

impl GpsModel {
    pub fn ideal() -> Self {
        Self { bias_sigma_m: 0.0, noise_sigma_m: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaroModel {
    pub bias_sigma_m: f64,
    pub noise_sigma_m: f64,
}

impl Default for BaroModel {
    fn default() -> Self {
        Self { bias_sigma_m: 0.5, noise_sigma_m: 0.15 }
    }
}

impl BaroModel {
    pub fn ideal() -> Self {
        Self { bias_sigma_m: 0.0, noise_sigma_m: 0.0 }
    }
}

fn normal_sample<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("sigma is positive and finite").sample(rng)
}

/// A GPS receiver for one mission: the bias is fixed when the receiver is created.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsReceiver {
    pub model: GpsModel,
    pub bias_east: f64,
    pub bias_north: f64,
}

impl GpsReceiver {
    pub fn new<R: Rng + ?Sized>(model: GpsModel, rng: &mut R) -> Self {
        let bias_east = normal_sample(model.bias_sigma_m, rng);
        let bias_north = normal_sample(model.bias_sigma_m, rng);
        Self { model, bias_east, bias_north }
    }

    pub fn with_bias(model: GpsModel, bias_east: f64, bias_north: f64) -> Self {
        Self { model, bias_east, bias_north }
    }

    /// Noise-free position the autopilot believes it is at.
    pub fn biased(&self, true_pos: &EnuPose) -> EnuPose {
        EnuPose {
            east: true_pos.east + self.bias_east,
            north: true_pos.north + self.bias_north,
            ..*true_pos
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, true_pos: &EnuPose, rng: &mut R) -> EnuPose {
        let mut m = self.biased(true_pos);
        m.east += normal_sample(self.model.noise_sigma_m, rng);
        m.north += normal_sample(self.model.noise_sigma_m, rng);
        m
    }
}

/// One GPS fix with a mission-constant bias. Convenience wrapper for one-off use;
/// a mission should hold a [`GpsReceiver`] so the bias persists across fixes.
pub fn sample_gps<R: Rng + ?Sized>(true_pos: &EnuPose, receiver: &GpsReceiver, rng: &mut R) -> EnuPose {
    receiver.sample(true_pos, rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Barometer {
    pub model: BaroModel,
    pub bias_m: f64,
}

impl Barometer {
    pub fn new<R: Rng + ?Sized>(model: BaroModel, rng: &mut R) -> Self {
        Self { model, bias_m: normal_sample(model.bias_sigma_m, rng) }
    }

    pub fn with_bias(model: BaroModel, bias_m: f64) -> Self {
        Self { model, bias_m }
    }

    pub fn biased(&self, true_alt_m: f64) -> f64 {
        true_alt_m + self.bias_m
    }

    /// True altitude that corresponds to a believed (baro) altitude.
    pub fn true_from_believed(&self, believed_alt_m: f64) -> f64 {
        believed_alt_m - self.bias_m
    }

    pub fn sample<R: Rng + ?Sized>(&self, true_alt_m: f64, rng: &mut R) -> f64 {
        self.biased(true_alt_m) + normal_sample(self.model.noise_sigma_m, rng)
    }
}

pub fn sample_baro_alt<R: Rng + ?Sized>(true_alt_m: f64, baro: &Barometer, rng: &mut R) -> f64 {
    baro.sample(true_alt_m, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const ORIGIN: GeoPoint = GeoPoint { lat: 42.36, lon: -71.09, alt: 0.0 };

    #[test]
    fn origin_maps_to_zero() {
        let p = enu_from_geodetic(ORIGIN, ORIGIN).unwrap();
        assert_eq!(p, EnuPose::default());
    }

    #[test]
    fn one_millidegree_north_at_equator() {
        let o = GeoPoint { lat: 0.0, lon: 0.0, alt: 0.0 };
        let p = GeoPoint { lat: 0.001, lon: 0.0, alt: 0.0 };
        let e = enu_from_geodetic(o, p).unwrap();
        // 6371000 * pi / 180 * 0.001
        assert_abs_diff_eq!(e.north, 111.194_926_644_558_74, epsilon = 1e-6);
        assert_abs_diff_eq!(e.east, 0.0);
    }

    #[test]
    fn antisymmetric_north() {
        let p = GeoPoint { lat: 42.3612, lon: -71.0885, alt: 3.0 };
        let a = enu_from_geodetic(ORIGIN, p).unwrap();
        let b = enu_from_geodetic(p, ORIGIN).unwrap();
        assert_abs_diff_eq!(a.north, -b.north, epsilon = 1e-9);
        assert_abs_diff_eq!(a.up, -b.up, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_coordinates() {
        let bad = GeoPoint { lat: 91.0, lon: 0.0, alt: 0.0 };
        assert_eq!(enu_from_geodetic(ORIGIN, bad), Err(WorldError::Latitude(91.0)));
        let bad = GeoPoint { lat: 0.0, lon: 181.0, alt: 0.0 };
        assert!(matches!(enu_from_geodetic(ORIGIN, bad), Err(WorldError::Longitude(_))));
        let far = GeoPoint { lat: 42.5, lon: -71.09, alt: 0.0 };
        assert!(matches!(enu_from_geodetic(ORIGIN, far), Err(WorldError::OutOfRange(_))));
    }

    #[test]
    fn zero_sigma_gps_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rx = GpsReceiver::new(GpsModel::ideal(), &mut rng);
        let p = EnuPose::new(3.0, -4.0, 1.5, 0.3);
        assert_eq!(sample_gps(&p, &rx, &mut rng), p);
    }

    #[test]
    fn gps_keeps_altitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rx = GpsReceiver::new(GpsModel::default(), &mut rng);
        let p = EnuPose::new(0.0, 0.0, 2.25, 0.0);
        assert_eq!(rx.sample(&p, &mut rng).up, 2.25);
    }

    #[test]
    fn same_seed_same_fixes() {
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rx = GpsReceiver::new(GpsModel::default(), &mut rng);
            (0..50)
                .map(|_| rx.sample(&EnuPose::default(), &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn zero_sigma_baro_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let baro = Barometer::new(BaroModel::ideal(), &mut rng);
        assert_eq!(sample_baro_alt(1.5, &baro, &mut rng), 1.5);
    }

    #[test]
    fn over_reading_baro_puts_hover_half_a_meter_up() {
        // A barometer that reads 1 m high makes a 1.5 m hover sit at 0.5 m.
        let baro = Barometer::with_bias(BaroModel::ideal(), 1.0);
        assert_abs_diff_eq!(baro.true_from_believed(1.5), 0.5);
    }
}
