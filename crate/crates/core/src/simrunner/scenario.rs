use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{point_in_polygon, BehaviorError, BehaviorParams};
use crate::inventory::InventoryConfig;
use crate::rf_link::{AntennaPose, LinkConfig, LinkError};
use crate::tag_model::{Environment, Epc, Tag, TagKind};
use crate::vehicle::{UavLimits, UgvLimits, VehicleType};
use crate::world::{BaroModel, GeoPoint, GpsModel, Vec3, WorldError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown preset {name:?}; available: {}", available.join(", "))]
    UnknownPreset { name: String, available: Vec<&'static str> },
    #[error("duplicate EPC {0}")]
    DuplicateEpc(Epc),
    #[error("tag {0} lies outside the field")]
    TagOutsideField(Epc),
    #[error("field polygon needs at least 3 vertices")]
    Field,
    #[error("{0} must be positive and finite")]
    NonPositive(&'static str),
    #[error("{0} must lie in [0, 1]")]
    Probability(&'static str),
    #[error("manual-script mode needs a non-empty script")]
    EmptyScript,
    #[error("a {0:?} cannot run this script step")]
    ScriptVehicle(VehicleType),
    #[error("explicit waypoint list is empty")]
    NoWaypoints,
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Mission(#[from] crate::mission_control::MissionError),
    #[error("scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("reading scenario: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Autonomous,
    ManualScript,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagSpec {
    pub epc: Epc,
    pub kind: TagKind,
    pub east: f64,
    pub north: f64,
    /// Height of the tag above ground; defaults by kind (stake or ground).
    #[serde(default)]
    pub mount_height_m: Option<f64>,
    /// Heading of a horizontal dipole, degrees counter-clockwise from east.
    #[serde(default)]
    pub yaw_deg: f64,
    /// Explicit dipole axis, for tags on walls or branches. Overrides `yaw_deg`.
    #[serde(default)]
    pub axis: Option<Vec3>,
    #[serde(default = "yes")]
    pub whitelisted: bool,
}

fn yes() -> bool {
    true
}

impl TagSpec {
    pub fn new(epc: Epc, kind: TagKind, east: f64, north: f64) -> Self {
        Self { epc, kind, east, north, mount_height_m: None, yaw_deg: 0.0, axis: None, whitelisted: true }
    }

    pub fn height(&self) -> f64 {
        self.mount_height_m.unwrap_or_else(|| self.kind.default_mount_height_m())
    }

    pub fn dipole_axis(&self) -> Vec3 {
        self.axis.unwrap_or_else(|| Vec3::from_yaw(self.yaw_deg.to_radians()))
    }

    pub fn build(&self) -> Tag {
        let pose = AntennaPose::dipole(Vec3::new(self.east, self.north, self.height()), self.dipole_axis());
        let mut tag = Tag::new(self.epc, self.kind, pose);
        tag.whitelisted = self.whitelisted;
        tag
    }
}

/// Where the mission's waypoints come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum WaypointSource {
    /// One waypoint per whitelisted tag, at its surveyed position, expecting its EPC.
    /// With no such tags, falls back to an area grid over the field.
    #[default]
    Tags,
    Area { spacing_m: f64 },
    Explicit { points: Vec<ExplicitWaypoint> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitWaypoint {
    pub east: f64,
    pub north: f64,
    #[serde(default)]
    pub expected_epc: Option<Epc>,
}

/// One operator action in manual-script mode. Coordinates are true positions:
/// under remote control the pilot flies by sight, not by GPS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "step")]
pub enum ScriptStep {
    /// Hover over (or, for a car, pull up facing) a point until `expect` is read.
    HoverOver {
        east: f64,
        north: f64,
        alt_m: f64,
        max_wait_s: f64,
        #[serde(default)]
        expect: Option<Epc>,
    },
    Goto { east: f64, north: f64, alt_m: f64 },
    /// Fly the boom to a point and leave the next carried tag there.
    PlaceTag { east: f64, north: f64, alt_m: f64 },
    Wait { seconds: f64 },
    Land,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub name: String,
    pub origin: GeoPoint,
    /// Field outline, (east, north) metres from the origin.
    pub field: Vec<(f64, f64)>,
    pub tags: Vec<TagSpec>,
    /// Tags carried on the boom for placement, in order.
    pub deployable_tags: Vec<TagSpec>,
    pub vehicle: VehicleType,
    /// Launch position, (east, north).
    pub start: (f64, f64),
    pub link: LinkConfig,
    pub gps: GpsModel,
    pub baro: BaroModel,
    pub behavior: BehaviorParams,
    pub uav: UavLimits,
    pub ugv: UgvLimits,
    pub inventory: InventoryConfig,
    pub charge_required_s: f64,
    pub environment: Environment,
    pub waypoints: WaypointSource,
    pub mode: RunMode,
    pub script: Vec<ScriptStep>,
    pub seed: u64,
    pub dt_s: f64,
    pub max_duration_s: f64,
    pub heartbeat_period_s: f64,
    pub gps_period_s: f64,
    pub uplink_drop_prob: f64,
    pub downlink_drop_prob: f64,
    /// Std-dev of horizontal hover wander under manual control.
    pub hover_jitter_sigma_m: f64,
    pub ugv_antenna_height_m: f64,
    /// How close the car pulls up to a point under manual control.
    pub ugv_standoff_m: f64,
    /// Altitude used between manual hover points.
    pub manual_transit_alt_m: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            origin: GeoPoint { lat: 42.3601, lon: -71.0942, alt: 0.0 },
            field: vec![(0.0, 0.0), (40.0, 0.0), (40.0, 40.0), (0.0, 40.0)],
            tags: Vec::new(),
            deployable_tags: Vec::new(),
            vehicle: VehicleType::Uav,
            start: (2.0, 2.0),
            link: LinkConfig::default(),
            gps: GpsModel::default(),
            baro: BaroModel::default(),
            behavior: BehaviorParams::default(),
            uav: UavLimits::default(),
            ugv: UgvLimits::default(),
            inventory: InventoryConfig::default(),
            charge_required_s: 1.0,
            environment: Environment::default(),
            waypoints: WaypointSource::Tags,
            mode: RunMode::Autonomous,
            script: Vec::new(),
            seed: 1,
            dt_s: 0.1,
            max_duration_s: 3600.0,
            heartbeat_period_s: 1.0,
            gps_period_s: 1.0,
            uplink_drop_prob: 0.0,
            downlink_drop_prob: 0.0,
            hover_jitter_sigma_m: 0.15,
            ugv_antenna_height_m: 0.4,
            ugv_standoff_m: 0.7,
            manual_transit_alt_m: 3.5,
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<(), ScenarioError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ScenarioError::NonPositive(name))
    }
}

fn probability(name: &'static str, v: f64) -> Result<(), ScenarioError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ScenarioError::Probability(name))
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn in_field(&self, east: f64, north: f64) -> bool {
        point_in_polygon((east, north), &self.field)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.field.len() < 3 {
            return Err(ScenarioError::Field);
        }
        self.origin.validate()?;
        self.link.validate()?;
        self.behavior.validate()?;
        let mut seen = HashSet::new();
        for t in self.tags.iter().chain(&self.deployable_tags) {
            if !seen.insert(t.epc) {
                return Err(ScenarioError::DuplicateEpc(t.epc));
            }
        }
        for t in &self.tags {
            if !self.in_field(t.east, t.north) {
                return Err(ScenarioError::TagOutsideField(t.epc));
            }
        }
        for (name, v) in [
            ("dt_s", self.dt_s),
            ("max_duration_s", self.max_duration_s),
            ("heartbeat_period_s", self.heartbeat_period_s),
            ("gps_period_s", self.gps_period_s),
            ("charge_required_s", self.charge_required_s),
            ("ugv_standoff_m", self.ugv_standoff_m),
            ("manual_transit_alt_m", self.manual_transit_alt_m),
            ("inventory.round_rate_hz", self.inventory.round_rate_hz),
            ("inventory.sensor_transaction_s", self.inventory.sensor_transaction_s),
            ("uav.cruise_speed", self.uav.cruise_speed),
            ("uav.descend_speed", self.uav.descend_speed),
            ("uav.ascend_speed", self.uav.ascend_speed),
            ("uav.circle_speed", self.uav.circle_speed),
            ("ugv.speed", self.ugv.speed),
            ("ugv.min_turn_radius_m", self.ugv.min_turn_radius_m),
        ] {
            positive(name, v)?;
        }
        for (name, v) in [
            ("gps.bias_sigma_m", self.gps.bias_sigma_m),
            ("gps.noise_sigma_m", self.gps.noise_sigma_m),
            ("baro.bias_sigma_m", self.baro.bias_sigma_m),
            ("baro.noise_sigma_m", self.baro.noise_sigma_m),
            ("hover_jitter_sigma_m", self.hover_jitter_sigma_m),
            ("ugv_antenna_height_m", self.ugv_antenna_height_m),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ScenarioError::NonPositive(name));
            }
        }
        probability("uplink_drop_prob", self.uplink_drop_prob)?;
        probability("downlink_drop_prob", self.downlink_drop_prob)?;
        if let WaypointSource::Area { spacing_m } = self.waypoints {
            positive("waypoints.spacing_m", spacing_m)?;
        }
        if let WaypointSource::Explicit { points } = &self.waypoints {
            if points.is_empty() {
                return Err(ScenarioError::NoWaypoints);
            }
        }
        if self.mode == RunMode::ManualScript {
            if self.script.is_empty() {
                return Err(ScenarioError::EmptyScript);
            }
            if self.vehicle == VehicleType::Ugv && self.script.iter().any(|s| matches!(s, ScriptStep::PlaceTag { .. })) {
                return Err(ScenarioError::ScriptVehicle(self.vehicle));
            }
        }
        Ok(())
    }

    pub fn whitelist(&self) -> Vec<Epc> {
        self.tags.iter().chain(&self.deployable_tags).filter(|t| t.whitelisted).map(|t| t.epc).collect()
    }
}
