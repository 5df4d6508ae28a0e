//! Reader-to-tag link budget.
//!
//! Power at the tag RFIC is transmit power plus both antenna gains (each
//! rolled off by its radiation pattern) minus free-space loss, polarization
//! mismatch and a single calibrated excess-loss term. The excess loss is
//! solved so that a boresight-aligned sensor tag sees exactly the sensor
//! threshold at the measured 1.5 m read range.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::Vec3;

pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

/// Distances below this are clamped; the far-field formula is meaningless there.
pub const NEAR_FIELD_CUTOFF_M: f64 = 0.05;

/// Linear floor applied to every radiation pattern (-30 dB).
pub const PATTERN_FLOOR: f64 = 1e-3;

/// Maximum polarization mismatch loss in angle-dependent mode.
pub const MAX_POLARIZATION_LOSS_DB: f64 = 20.0;

/// Measured boresight read range of a dipole sensor tag.
pub const SENSOR_READ_RANGE_M: f64 = 1.5;

/// Regulatory ceiling on conducted transmit power (1 W).
pub const MAX_TX_POWER_DBM: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("transmit power {0} dBm exceeds the 30 dBm limit")]
    TxPower(f64),
    #[error("sensor threshold {sensor} dBm must exceed ID threshold {id} dBm")]
    Thresholds { sensor: f64, id: f64 },
    #[error("non-finite link parameter `{0}`")]
    NonFinite(&'static str),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("calibration needs negative excess loss ({0:.2} dB): gains already fall short of the target range")]
    NegativeExcessLoss(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolarizationMode {
    /// Constant `polarization_loss_db` regardless of geometry.
    #[default]
    Fixed,
    /// `-20 log10 |cos phi|` between the two linear polarizations, capped at 20 dB.
    AngleDependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkConfig {
    pub tx_power_dbm: f64,
    pub frequency_hz: f64,
    /// Log-periodic reader antenna, boresight gain.
    pub reader_gain_dbi: f64,
    /// Gain of the lab patch antenna used for the power measurements. Reference only.
    pub patch_gain_db: f64,
    pub tag_dipole_gain_dbi: f64,
    pub polarization_mode: PolarizationMode,
    pub polarization_loss_db: f64,
    pub excess_loss_db: f64,
    pub sensor_threshold_dbm: f64,
    pub id_threshold_dbm: f64,
    pub logistic_slope_db: f64,
    /// Exponent of the reader's cos^n pattern.
    pub beam_exponent: f64,
    /// Log-normal shadowing std-dev. Zero disables it.
    pub shadowing_sigma_db: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        let mut cfg = Self::uncalibrated();
        cfg.excess_loss_db = calibrate_excess_loss(SENSOR_READ_RANGE_M, cfg.sensor_threshold_dbm, &cfg)
            .expect("default gains exceed the calibrated range");
        cfg
    }
}

impl LinkConfig {
    /// Defaults with `excess_loss_db = 0`.
    pub fn uncalibrated() -> Self {
        Self {
            tx_power_dbm: 30.0,
            frequency_hz: 915e6,
            reader_gain_dbi: 6.0,
            patch_gain_db: 5.5,
            tag_dipole_gain_dbi: 3.5,
            polarization_mode: PolarizationMode::Fixed,
            polarization_loss_db: 3.0,
            excess_loss_db: 0.0,
            sensor_threshold_dbm: -5.0,
            id_threshold_dbm: -12.0,
            logistic_slope_db: 1.0,
            beam_exponent: 2.0,
            shadowing_sigma_db: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        let fields = [
            ("tx_power_dbm", self.tx_power_dbm),
            ("frequency_hz", self.frequency_hz),
            ("reader_gain_dbi", self.reader_gain_dbi),
            ("patch_gain_db", self.patch_gain_db),
            ("tag_dipole_gain_dbi", self.tag_dipole_gain_dbi),
            ("polarization_loss_db", self.polarization_loss_db),
            ("excess_loss_db", self.excess_loss_db),
            ("sensor_threshold_dbm", self.sensor_threshold_dbm),
            ("id_threshold_dbm", self.id_threshold_dbm),
            ("logistic_slope_db", self.logistic_slope_db),
            ("beam_exponent", self.beam_exponent),
            ("shadowing_sigma_db", self.shadowing_sigma_db),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(LinkError::NonFinite(name));
            }
        }
        if self.tx_power_dbm > MAX_TX_POWER_DBM {
            return Err(LinkError::TxPower(self.tx_power_dbm));
        }
        if self.sensor_threshold_dbm <= self.id_threshold_dbm {
            return Err(LinkError::Thresholds { sensor: self.sensor_threshold_dbm, id: self.id_threshold_dbm });
        }
        if self.frequency_hz <= 0.0 {
            return Err(LinkError::NonPositive("frequency_hz"));
        }
        if self.logistic_slope_db <= 0.0 {
            return Err(LinkError::NonPositive("logistic_slope_db"));
        }
        if self.beam_exponent <= 0.0 {
            return Err(LinkError::NonPositive("beam_exponent"));
        }
        if self.shadowing_sigma_db < 0.0 {
            return Err(LinkError::NonPositive("shadowing_sigma_db"));
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT_M_S / self.frequency_hz
    }

    /// Polarization loss assumed for perfectly aligned antennas.
    fn aligned_polarization_loss_db(&self) -> f64 {
        match self.polarization_mode {
            PolarizationMode::Fixed => self.polarization_loss_db,
            PolarizationMode::AngleDependent => 0.0,
        }
    }

    /// Boresight, broadside link with no loss terms other than free space.
    fn boresight_eirp_plus_gain_db(&self) -> f64 {
        self.tx_power_dbm + self.reader_gain_dbi + self.tag_dipole_gain_dbi
    }

    /// Distance at which a boresight-aligned, broadside tag sees `threshold_dbm`.
    pub fn boresight_range_m(&self, threshold_dbm: f64) -> f64 {
        let allowed_fspl = self.boresight_eirp_plus_gain_db()
            - self.aligned_polarization_loss_db()
            - self.excess_loss_db
            - threshold_dbm;
        let d = self.wavelength_m() / (4.0 * std::f64::consts::PI) * 10f64.powf(allowed_fspl / 20.0);
        d.max(NEAR_FIELD_CUTOFF_M)
    }

    pub fn sensor_range_m(&self) -> f64 {
        self.boresight_range_m(self.sensor_threshold_dbm)
    }

    pub fn id_range_m(&self) -> f64 {
        self.boresight_range_m(self.id_threshold_dbm)
    }
}

/// Free-space path loss in dB. Distances under 5 cm are clamped to 5 cm.
pub fn fspl_db(distance_m: f64, frequency_hz: f64) -> f64 {
    let d = distance_m.max(NEAR_FIELD_CUTOFF_M);
    let lambda = SPEED_OF_LIGHT_M_S / frequency_hz;
    20.0 * (4.0 * std::f64::consts::PI * d / lambda).log10()
}

/// Where an antenna sits and which way it points.
///
/// For directional antennas `axis` is the boresight; for dipoles it is the
/// element axis (the pattern null).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntennaPose {
    pub position: Vec3,
    pub axis: Vec3,
    /// Linear polarization direction. Only used in angle-dependent mode.
    pub polarization: Vec3,
}

impl AntennaPose {
    pub fn new(position: Vec3, axis: Vec3, polarization: Vec3) -> Self {
        Self {
            position,
            axis: axis.normalized().unwrap_or(Vec3::UP),
            polarization: polarization.normalized().unwrap_or(Vec3::EAST),
        }
    }

    /// A dipole polarizes along its own element.
    pub fn dipole(position: Vec3, axis: Vec3) -> Self {
        Self::new(position, axis, axis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pattern {
    /// `cos^n` rolloff off boresight, floored; nothing radiates behind.
    Directional { exponent: f64 },
    /// `sin^2` of the angle from the element axis: a torus with nulls on axis.
    Dipole,
}

impl Pattern {
    /// Pattern gain in dB for radiation leaving along `direction` (unit).
    pub fn gain_db(&self, axis: Vec3, direction: Vec3) -> f64 {
        let c = axis.dot(direction).clamp(-1.0, 1.0);
        let linear = match *self {
            Pattern::Directional { exponent } => {
                if c > 0.0 {
                    c.powf(exponent)
                } else {
                    0.0
                }
            }
            Pattern::Dipole => 1.0 - c * c,
        };
        10.0 * linear.max(PATTERN_FLOOR).log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Antenna {
    pub pose: AntennaPose,
    pub peak_gain_dbi: f64,
    pub pattern: Pattern,
}

impl Antenna {
    pub fn reader(pose: AntennaPose, cfg: &LinkConfig) -> Self {
        Self {
            pose,
            peak_gain_dbi: cfg.reader_gain_dbi,
            pattern: Pattern::Directional { exponent: cfg.beam_exponent },
        }
    }

    pub fn tag(pose: AntennaPose, cfg: &LinkConfig) -> Self {
        Self { pose, peak_gain_dbi: cfg.tag_dipole_gain_dbi, pattern: Pattern::Dipole }
    }

    fn gain_toward(&self, direction: Vec3) -> f64 {
        self.peak_gain_dbi + self.pattern.gain_db(self.pose.axis, direction)
    }
}

fn polarization_loss_db(a: &AntennaPose, b: &AntennaPose, k: Vec3, cfg: &LinkConfig) -> f64 {
    match cfg.polarization_mode {
        PolarizationMode::Fixed => cfg.polarization_loss_db,
        PolarizationMode::AngleDependent => {
            let project = |p: Vec3| (p - k * p.dot(k)).normalized();
            match (project(a.polarization), project(b.polarization)) {
                (Some(pa), Some(pb)) => {
                    let c = pa.dot(pb).abs();
                    if c <= 0.0 {
                        MAX_POLARIZATION_LOSS_DB
                    } else {
                        (-20.0 * c.log10()).min(MAX_POLARIZATION_LOSS_DB)
                    }
                }
                _ => MAX_POLARIZATION_LOSS_DB,
            }
        }
    }
}

/// Loss-free-of-transmit-power link gain between two antennas, in dB.
/// Symmetric in its arguments.
pub fn link_gain_db(a: &Antenna, b: &Antenna, cfg: &LinkConfig) -> f64 {
    let delta = b.pose.position - a.pose.position;
    let d = delta.norm();
    // Coincident antennas: any direction is as good as another.
    let k = delta.normalized().unwrap_or(a.pose.axis);
    a.gain_toward(k) + b.gain_toward(-k)
        - fspl_db(d, cfg.frequency_hz)
        - polarization_loss_db(&a.pose, &b.pose, k, cfg)
        - cfg.excess_loss_db
}

/// Power delivered to the tag RFIC, in dBm.
pub fn received_power_dbm(reader: &AntennaPose, tag: &AntennaPose, cfg: &LinkConfig) -> f64 {
    cfg.tx_power_dbm + link_gain_db(&Antenna::reader(*reader, cfg), &Antenna::tag(*tag, cfg), cfg)
}

/// Excess loss that puts `threshold_dbm` exactly at `target_range_m` on boresight.
pub fn calibrate_excess_loss(target_range_m: f64, threshold_dbm: f64, cfg: &LinkConfig) -> Result<f64, LinkError> {
    if target_range_m <= 0.0 || !target_range_m.is_finite() {
        return Err(LinkError::NonPositive("target_range_m"));
    }
    let loss = cfg.boresight_eirp_plus_gain_db()
        - fspl_db(target_range_m, cfg.frequency_hz)
        - cfg.aligned_polarization_loss_db()
        - threshold_dbm;
    if loss < 0.0 {
        return Err(LinkError::NegativeExcessLoss(loss));
    }
    Ok(loss)
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-attempt success probability for a given power margin.
pub fn read_probability(received_dbm: f64, threshold_dbm: f64, slope_db: f64) -> f64 {
    logistic((received_dbm - threshold_dbm) / slope_db)
}
