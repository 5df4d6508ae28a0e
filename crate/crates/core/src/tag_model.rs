//! Tags: identity, sensor transduction and the charge state of a battery-free RFIC.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::rf_link::AntennaPose;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TagError {
    #[error("EPC must be 24 hex digits (12 bytes), got {0:?}")]
    BadEpc(String),
    #[error("moisture {theta} outside [0, {theta_sat}]")]
    MoistureOutOfRange { theta: f64, theta_sat: f64 },
    #[error("calibration requires r_dry > r_sat > 0 and theta_sat > 0")]
    BadCalibration,
    #[error("tag {0} is ID-only and has no sensor")]
    NoSensor(Epc),
}

/// 12-byte Electronic Product Code.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Epc(pub [u8; 12]);

impl Epc {
    pub const LEN: usize = 12;

    /// Deterministic EPC with `n` in the low bytes; handy for presets and tests.
    pub fn from_index(prefix: u32, n: u64) -> Self {
        let mut b = [0u8; 12];
        b[..4].copy_from_slice(&prefix.to_be_bytes());
        b[4..].copy_from_slice(&n.to_be_bytes());
        Self(b)
    }

    pub fn as_bytes(&self) -> &[u8; 12] {
        &self.0
    }
}

impl fmt::Display for Epc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02X}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Epc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Epc({self})")
    }
}

impl FromStr for Epc {
    type Err = TagError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.len() != 24 || !s.is_ascii() {
            return Err(TagError::BadEpc(s.to_string()));
        }
        let mut out = [0u8; 12];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| TagError::BadEpc(s.to_string()))?;
        }
        Ok(Self(out))
    }
}

impl Serialize for Epc {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Epc {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagKind {
    IdOnly,
    HydroMoisture,
    Conductivity,
    Light,
    Temperature,
}

impl TagKind {
    pub fn has_sensor(self) -> bool {
        self != TagKind::IdOnly
    }

    /// Sensor tags sit on 0.4 m stakes; ID tags lie on the ground.
    pub fn default_mount_height_m(self) -> f64 {
        match self {
            TagKind::IdOnly => 0.0,
            _ => 0.4,
        }
    }

    pub fn primary_sensor(self) -> SensorKind {
        match self {
            TagKind::IdOnly => SensorKind::None,
            TagKind::HydroMoisture => SensorKind::Resistance,
            TagKind::Conductivity => SensorKind::Conductivity,
            TagKind::Light => SensorKind::Light,
            TagKind::Temperature => SensorKind::Temperature,
        }
    }
}

/// Quantity carried in a sensor report. The discriminant is the wire code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum SensorKind {
    None = 0,
    /// Probe resistance, milliohm on the wire.
    Resistance = 1,
    /// Water conductivity, milli-uS/cm.
    Conductivity = 2,
    /// Illuminance, milli-lux.
    Light = 3,
    /// Ambient temperature, milli-degC.
    Temperature = 4,
}

impl SensorKind {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Self::None,
            1 => Self::Resistance,
            2 => Self::Conductivity,
            3 => Self::Light,
            4 => Self::Temperature,
            _ => return None,
        })
    }

    pub fn unit(self) -> &'static str {
        match self {
            Self::None => "",
            Self::Resistance => "ohm",
            Self::Conductivity => "uS/cm",
            Self::Light => "lux",
            Self::Temperature => "degC",
        }
    }
}

/// A quantized sensor value in integer milli-units of `kind.unit()`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorValue {
    pub kind: SensorKind,
    pub milli: i32,
}

impl SensorValue {
    pub fn quantize(kind: SensorKind, value: f64) -> Self {
        let milli = (value * 1000.0).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32;
        Self { kind, milli }
    }

    pub fn value(&self) -> f64 {
        self.milli as f64 / 1000.0
    }

    pub fn unit(&self) -> &'static str {
        self.kind.unit()
    }
}

/// What one sensor transaction returns. Hydro tags also report temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorReading {
    pub primary: SensorValue,
    pub temperature: Option<SensorValue>,
}

impl SensorReading {
    pub fn values(&self) -> impl Iterator<Item = SensorValue> {
        std::iter::once(self.primary).chain(self.temperature)
    }
}

/// Resistance-moisture law `R = r_dry * (r_sat / r_dry)^(theta / theta_sat)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorCalibration {
    pub r_dry_ohm: f64,
    pub r_sat_ohm: f64,
    pub theta_sat: f64,
}

impl Default for SensorCalibration {
    fn default() -> Self {
        Self { r_dry_ohm: 50_000.0, r_sat_ohm: 500.0, theta_sat: 0.45 }
    }
}

impl SensorCalibration {
    pub fn validate(&self) -> Result<(), TagError> {
        let ok = self.r_sat_ohm > 0.0
            && self.r_dry_ohm > self.r_sat_ohm
            && self.theta_sat > 0.0
            && self.r_dry_ohm.is_finite()
            && self.theta_sat.is_finite();
        ok.then_some(()).ok_or(TagError::BadCalibration)
    }

    /// Decay constant `k` in `R = r_dry * exp(-k theta)`.
    pub fn decay_constant(&self) -> f64 {
        (self.r_dry_ohm / self.r_sat_ohm).ln() / self.theta_sat
    }

    fn check_theta(&self, theta: f64) -> Result<(), TagError> {
        if (0.0..=self.theta_sat).contains(&theta) {
            Ok(())
        } else {
            Err(TagError::MoistureOutOfRange { theta, theta_sat: self.theta_sat })
        }
    }
}

pub fn moisture_to_resistance(theta: f64, cal: &SensorCalibration) -> Result<f64, TagError> {
    cal.validate()?;
    cal.check_theta(theta)?;
    if theta == cal.theta_sat {
        return Ok(cal.r_sat_ohm);
    }
    Ok(cal.r_dry_ohm * (cal.r_sat_ohm / cal.r_dry_ohm).powf(theta / cal.theta_sat))
}

/// Inverse of [`moisture_to_resistance`]; resistances outside the calibrated span clamp.
pub fn resistance_to_moisture(r_ohm: f64, cal: &SensorCalibration) -> Result<f64, TagError> {
    cal.validate()?;
    let r = r_ohm.clamp(cal.r_sat_ohm, cal.r_dry_ohm);
    Ok((cal.r_dry_ohm / r).ln() / cal.decay_constant())
}

/// Volumetric soil moisture over the field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MoistureField {
    Uniform { theta: f64 },
    /// `theta0 + d_east * east + d_north * north`, clamped to the valid span.
    Gradient { theta0: f64, d_east: f64, d_north: f64 },
}

impl Default for MoistureField {
    fn default() -> Self {
        MoistureField::Uniform { theta: 0.2 }
    }
}

impl MoistureField {
    pub fn theta_at(&self, east: f64, north: f64, theta_sat: f64) -> f64 {
        let raw = match *self {
            MoistureField::Uniform { theta } => theta,
            MoistureField::Gradient { theta0, d_east, d_north } => theta0 + d_east * east + d_north * north,
        };
        raw.clamp(0.0, theta_sat)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Environment {
    pub soil_moisture: MoistureField,
    pub ambient_temp_c: f64,
    pub water_conductivity_us_cm: f64,
    pub light_lux: f64,
    pub calibration: SensorCalibration,
}

impl Default for Environment {
    fn default() -> Self {
        Self {
            soil_moisture: MoistureField::default(),
            ambient_temp_c: 21.0,
            water_conductivity_us_cm: 1500.0,
            light_lux: 80_000.0,
            calibration: SensorCalibration::default(),
        }
    }
}

/// Charge-up rule for battery-free sensor tags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargeModel {
    pub threshold_dbm: f64,
    pub required_s: f64,
}

impl ChargeModel {
    pub const DEFAULT_REQUIRED_S: f64 = 1.0;
}

// Accumulated 0.1 s ticks fall a hair short of round numbers.
const CHARGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tag {
    pub epc: Epc,
    pub kind: TagKind,
    pub pose: AntennaPose,
    pub mount_height_m: f64,
    /// Seconds of uninterrupted above-threshold power.
    pub charge_s: f64,
    pub whitelisted: bool,
}

impl Tag {
    pub fn new(epc: Epc, kind: TagKind, pose: AntennaPose) -> Self {
        Self {
            epc,
            kind,
            mount_height_m: pose.position.z,
            pose,
            charge_s: 0.0,
            whitelisted: true,
        }
    }

    pub fn is_sensor_ready(&self, charge: &ChargeModel) -> bool {
        self.kind.has_sensor() && self.charge_s >= charge.required_s - CHARGE_EPS
    }

    /// Accumulate or reset charge. No state survives a power gap.
    pub fn powered_state_update(&mut self, received_dbm: f64, dt_s: f64, charge: &ChargeModel) {
        debug_assert!(dt_s > 0.0);
        if received_dbm >= charge.threshold_dbm {
            let next = self.charge_s + dt_s;
            self.charge_s = if next >= charge.required_s - CHARGE_EPS { charge.required_s } else { next };
        } else {
            self.charge_s = 0.0;
        }
    }
}

/// Read the tag's sensor against the environment at its position.
pub fn sense(tag: &Tag, env: &Environment) -> Result<SensorReading, TagError> {
    let temperature = SensorValue::quantize(SensorKind::Temperature, env.ambient_temp_c);
    let reading = match tag.kind {
        TagKind::IdOnly => return Err(TagError::NoSensor(tag.epc)),
        TagKind::HydroMoisture => {
            let cal = &env.calibration;
            let theta = env.soil_moisture.theta_at(tag.pose.position.x, tag.pose.position.y, cal.theta_sat);
            let r = moisture_to_resistance(theta, cal)?;
            SensorReading {
                primary: SensorValue::quantize(SensorKind::Resistance, r),
                temperature: Some(temperature),
            }
        }
        TagKind::Conductivity => SensorReading {
            primary: SensorValue::quantize(SensorKind::Conductivity, env.water_conductivity_us_cm),
            temperature: None,
        },
        TagKind::Light => SensorReading {
            primary: SensorValue::quantize(SensorKind::Light, env.light_lux),
            temperature: None,
        },
        TagKind::Temperature => SensorReading { primary: temperature, temperature: None },
    };
    Ok(reading)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Vec3;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn tag(kind: TagKind) -> Tag {
        Tag::new(Epc::from_index(0xE280_1160, 1), kind, AntennaPose::dipole(Vec3::new(0.0, 0.0, 0.4), Vec3::EAST))
    }

    const CHARGE: ChargeModel = ChargeModel { threshold_dbm: -5.0, required_s: 1.0 };

    #[test]
    fn resistance_endpoints_and_midpoint() {
        let cal = SensorCalibration::default();
        assert_eq!(moisture_to_resistance(0.0, &cal).unwrap(), 50_000.0);
        assert_eq!(moisture_to_resistance(0.45, &cal).unwrap(), 500.0);
        assert_abs_diff_eq!(moisture_to_resistance(0.225, &cal).unwrap(), 5000.0, epsilon = 1e-9);
    }

    #[test]
    fn resistance_rejects_out_of_range_moisture() {
        let cal = SensorCalibration::default();
        assert!(matches!(moisture_to_resistance(-0.01, &cal), Err(TagError::MoistureOutOfRange { .. })));
        assert!(moisture_to_resistance(0.46, &cal).is_err());
        let bad = SensorCalibration { r_dry_ohm: 100.0, r_sat_ohm: 500.0, theta_sat: 0.45 };
        assert_eq!(moisture_to_resistance(0.1, &bad), Err(TagError::BadCalibration));
    }

    proptest! {
        #[test]
        fn moisture_round_trip(theta in 0.0f64..=0.45) {
            let cal = SensorCalibration::default();
            let r = moisture_to_resistance(theta, &cal).unwrap();
            prop_assert!((resistance_to_moisture(r, &cal).unwrap() - theta).abs() < 1e-9);
        }

        #[test]
        fn resistance_strictly_decreasing(a in 0.0f64..0.45, b in 0.0f64..0.45) {
            prop_assume!(a < b);
            let cal = SensorCalibration::default();
            prop_assert!(moisture_to_resistance(a, &cal).unwrap() > moisture_to_resistance(b, &cal).unwrap());
        }
    }

    #[test]
    fn sensing_per_kind() {
        let dry = Environment { soil_moisture: MoistureField::Uniform { theta: 0.0 }, ..Environment::default() };
        let hydro = sense(&tag(TagKind::HydroMoisture), &dry).unwrap();
        assert_eq!(hydro.primary, SensorValue { kind: SensorKind::Resistance, milli: 50_000_000 });
        assert_eq!(hydro.primary.value(), 50_000.0);
        assert_eq!(hydro.temperature.unwrap().value(), 21.0);

        let env = Environment { water_conductivity_us_cm: 1500.0, light_lux: 80_000.0, ..Environment::default() };
        assert_eq!(sense(&tag(TagKind::Conductivity), &env).unwrap().primary.value(), 1500.0);
        assert_eq!(sense(&tag(TagKind::Light), &env).unwrap().primary.value(), 80_000.0);
        let t = sense(&tag(TagKind::Temperature), &env).unwrap();
        assert_eq!(t.primary.kind, SensorKind::Temperature);
        assert_eq!(t.values().count(), 1);

        let id = tag(TagKind::IdOnly);
        assert_eq!(sense(&id, &env), Err(TagError::NoSensor(id.epc)));
    }

    #[test]
    fn gradient_field_clamps() {
        let f = MoistureField::Gradient { theta0: 0.1, d_east: 0.01, d_north: 0.0 };
        assert_abs_diff_eq!(f.theta_at(10.0, 0.0, 0.45), 0.2);
        assert_eq!(f.theta_at(100.0, 0.0, 0.45), 0.45);
        assert_eq!(f.theta_at(-100.0, 0.0, 0.45), 0.0);
    }

    #[test]
    fn below_threshold_never_charges() {
        let mut t = tag(TagKind::HydroMoisture);
        for dt in [0.1, 1.0, 30.0] {
            t.powered_state_update(-5.01, dt, &CHARGE);
            assert_eq!(t.charge_s, 0.0);
        }
    }

    #[test]
    fn one_second_at_threshold_makes_ready() {
        let mut t = tag(TagKind::HydroMoisture);
        for _ in 0..9 {
            t.powered_state_update(-5.0, 0.1, &CHARGE);
            assert!(!t.is_sensor_ready(&CHARGE));
        }
        t.powered_state_update(-5.0, 0.1, &CHARGE);
        assert!(t.is_sensor_ready(&CHARGE));
        t.powered_state_update(10.0, 0.1, &CHARGE);
        assert_eq!(t.charge_s, 1.0);
    }

    #[test]
    fn power_gap_resets_charge() {
        let mut t = tag(TagKind::HydroMoisture);
        t.powered_state_update(0.0, 0.5, &CHARGE);
        t.powered_state_update(-20.0, 0.1, &CHARGE);
        t.powered_state_update(0.0, 0.5, &CHARGE);
        assert!(!t.is_sensor_ready(&CHARGE));
    }

    #[test]
    fn id_tags_are_never_sensor_ready() {
        let mut t = tag(TagKind::IdOnly);
        t.powered_state_update(0.0, 5.0, &CHARGE);
        assert!(!t.is_sensor_ready(&CHARGE));
    }

    #[test]
    fn epc_text_round_trip() {
        let e = Epc::from_index(0xE200_3411, 0xB802_0116);
        let s = e.to_string();
        assert_eq!(s, "E200341100000000B8020116");
        assert_eq!(s.parse::<Epc>().unwrap(), e);
        assert!("E200".parse::<Epc>().is_err());
        assert!("ZZ0000000000000000000000".parse::<Epc>().is_err());
        let json = serde_json::to_string(&e).unwrap();
        assert_eq!(serde_json::from_str::<Epc>(&json).unwrap(), e);
    }
}
