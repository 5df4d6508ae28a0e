use crate::tag_model::{Epc, TagKind};
use crate::vehicle::VehicleType;
use crate::world::Vec3;

use super::scenario::{RunMode, ScenarioConfig, ScenarioError, ScriptStep, TagSpec};

pub const PRESETS: [&str; 8] = [
    "uav_id_field",
    "uav_sensor_field",
    "ugv_id_field",
    "ugv_sensor_field",
    "tag_deploy_wall",
    "water_quality",
    "infrastructure",
    "tree_canopy",
];

/// Seeds of `uav_id_field` with their tag counts: one clean sweep and one miss.
pub const UAV_ID_SEEDS_OF_RECORD: [(u64, usize); 2] = [(2, 5), (28, 4)];

/// Manual hover height above a sensor tag's antenna.
const HOVER_ABOVE_M: f64 = 0.5;
const MANUAL_WAIT_S: f64 = 30.0;

fn epc(n: u64) -> Epc {
    Epc::from_index(0xE200_3411, n)
}

fn tag(n: u64, kind: TagKind, east: f64, north: f64) -> TagSpec {
    TagSpec::new(epc(n), kind, east, north)
}

fn hover_over(t: &TagSpec, alt_m: f64) -> ScriptStep {
    ScriptStep::HoverOver { east: t.east, north: t.north, alt_m, max_wait_s: MANUAL_WAIT_S, expect: Some(t.epc) }
}

/// Hover script visiting each tag in turn, then landing.
pub fn hover_script(tags: &[TagSpec], alt_m: impl Fn(&TagSpec) -> f64) -> Vec<ScriptStep> {
    tags.iter().map(|t| hover_over(t, alt_m(t))).chain([ScriptStep::Land]).collect()
}

fn uav_id_field() -> ScenarioConfig {
    let positions = [(8.0, 8.0), (32.0, 8.0), (20.0, 20.0), (8.0, 32.0), (32.0, 32.0)];
    let tags = positions
        .iter()
        .enumerate()
        .map(|(i, &(e, n))| TagSpec { yaw_deg: 35.0 * i as f64, ..tag(i as u64 + 1, TagKind::IdOnly, e, n) })
        .collect();
    ScenarioConfig { name: "uav_id_field".into(), tags, ..ScenarioConfig::default() }
}

fn uav_sensor_field() -> ScenarioConfig {
    let tags: Vec<TagSpec> = [(10.0, 10.0), (30.0, 10.0), (20.0, 30.0)]
        .iter()
        .enumerate()
        .map(|(i, &(e, n))| TagSpec { yaw_deg: 60.0 * i as f64, ..tag(i as u64 + 11, TagKind::HydroMoisture, e, n) })
        .collect();
    ScenarioConfig {
        name: "uav_sensor_field".into(),
        script: hover_script(&tags, |_| 0.5),
        tags,
        mode: RunMode::ManualScript,
        ..ScenarioConfig::default()
    }
}

fn ugv_row(kind: TagKind, first: u64) -> Vec<TagSpec> {
    [(10.0, 10.0), (20.0, 10.0), (30.0, 10.0)]
        .iter()
        .enumerate()
        .map(|(i, &(e, n))| TagSpec { yaw_deg: 90.0, ..tag(first + i as u64, kind, e, n) })
        .collect()
}

fn ugv_id_field() -> ScenarioConfig {
    ScenarioConfig {
        name: "ugv_id_field".into(),
        vehicle: VehicleType::Ugv,
        tags: ugv_row(TagKind::IdOnly, 21),
        ..ScenarioConfig::default()
    }
}

/// Autonomous by default; switch `mode` to run the included drive-up script.
fn ugv_sensor_field() -> ScenarioConfig {
    let tags = ugv_row(TagKind::HydroMoisture, 31);
    ScenarioConfig {
        name: "ugv_sensor_field".into(),
        vehicle: VehicleType::Ugv,
        script: hover_script(&tags, |_| 0.0),
        tags,
        ..ScenarioConfig::default()
    }
}

fn single_tag_manual(name: &str, t: TagSpec) -> ScenarioConfig {
    let alt = t.height() + HOVER_ABOVE_M;
    ScenarioConfig {
        name: name.into(),
        script: vec![hover_over(&t, alt), ScriptStep::Land],
        tags: vec![t],
        mode: RunMode::ManualScript,
        ..ScenarioConfig::default()
    }
}

fn tag_deploy_wall() -> ScenarioConfig {
    // Wall face runs north-south at east = 20; the tag goes on it 3 m up.
    let (wall_e, wall_n, wall_h) = (20.0, 20.0, 3.0);
    let carried = TagSpec { axis: Some(Vec3::NORTH), ..tag(41, TagKind::HydroMoisture, wall_e, wall_n) };
    let second_pass = ScriptStep::HoverOver {
        east: wall_e - 0.3,
        north: wall_n,
        alt_m: wall_h + HOVER_ABOVE_M,
        max_wait_s: MANUAL_WAIT_S,
        expect: Some(carried.epc),
    };
    ScenarioConfig {
        name: "tag_deploy_wall".into(),
        deployable_tags: vec![carried],
        mode: RunMode::ManualScript,
        script: vec![
            ScriptStep::PlaceTag { east: wall_e, north: wall_n, alt_m: wall_h },
            ScriptStep::Goto { east: 30.0, north: 30.0, alt_m: 3.5 },
            second_pass,
            ScriptStep::Land,
        ],
        ..ScenarioConfig::default()
    }
}

fn water_quality() -> ScenarioConfig {
    let float = TagSpec { mount_height_m: Some(0.05), ..tag(51, TagKind::Conductivity, 15.0, 25.0) };
    single_tag_manual("water_quality", float)
}

fn infrastructure() -> ScenarioConfig {
    let beam = TagSpec { mount_height_m: Some(2.0), yaw_deg: 30.0, ..tag(61, TagKind::HydroMoisture, 25.0, 15.0) };
    single_tag_manual("infrastructure", beam)
}

fn tree_canopy() -> ScenarioConfig {
    let branch = TagSpec { mount_height_m: Some(4.0), yaw_deg: 120.0, ..tag(71, TagKind::Light, 12.0, 28.0) };
    single_tag_manual("tree_canopy", branch)
}

pub fn apply_preset(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    Ok(match name {
        "uav_id_field" => uav_id_field(),
        "uav_sensor_field" => uav_sensor_field(),
        "ugv_id_field" => ugv_id_field(),
        "ugv_sensor_field" => ugv_sensor_field(),
        "tag_deploy_wall" => tag_deploy_wall(),
        "water_quality" => water_quality(),
        "infrastructure" => infrastructure(),
        "tree_canopy" => tree_canopy(),
        _ => return Err(ScenarioError::UnknownPreset { name: name.into(), available: PRESETS.to_vec() }),
    })
}
