use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::mission_control::{
    plan_mission, CreateMission, Mission, MissionMode, MissionRecord, MissionStatus, Plan, Waypoint,
};
use crate::tag_model::Epc;
use crate::telemetry::{lossy_channel, CommandKind, Frame, Message};
use crate::world::{geodetic_from_enu, EnuPose, GeoPoint};

use super::operator::ScriptOperator;
use super::report::{tag_outcomes, RunReport};
use super::scenario::{RunMode, ScenarioConfig, ScenarioError, WaypointSource};
use super::vehicle_sim::{stream, stream_rng, VehicleSim};

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub mission: Mission,
    /// The mission record as it was when the run started; replay starts here.
    pub record_at_start: MissionRecord,
    pub vehicle: VehicleSim,
}

/// Grid spacing used to sweep a field that has no surveyed tags.
pub const AREA_FALLBACK_SPACING_M: f64 = 10.0;

fn geo(origin: GeoPoint, east: f64, north: f64) -> Result<GeoPoint, ScenarioError> {
    Ok(geodetic_from_enu(origin, &EnuPose::at(east, north, 0.0))?)
}

/// The ground-station mission a scenario flies.
pub fn mission_request(cfg: &ScenarioConfig) -> Result<CreateMission, ScenarioError> {
    let area = |spacing_m: f64| -> Result<Plan, ScenarioError> {
        let polygon = cfg.field.iter().map(|&(e, n)| geo(cfg.origin, e, n)).collect::<Result<_, _>>()?;
        Ok(Plan::Area { polygon, spacing_m })
    };
    let plan = match &cfg.waypoints {
        WaypointSource::Tags => {
            let wps = cfg
                .tags
                .iter()
                .filter(|t| t.whitelisted)
                .map(|t| Ok(Waypoint { point: geo(cfg.origin, t.east, t.north)?, expected_epc: Some(t.epc) }))
                .collect::<Result<Vec<_>, ScenarioError>>()?;
            if wps.is_empty() {
                area(AREA_FALLBACK_SPACING_M)?
            } else {
                Plan::Waypoints(wps)
            }
        }
        WaypointSource::Area { spacing_m } => area(*spacing_m)?,
        WaypointSource::Explicit { points } => Plan::Waypoints(
            points
                .iter()
                .map(|w| Ok(Waypoint { point: geo(cfg.origin, w.east, w.north)?, expected_epc: w.expected_epc }))
                .collect::<Result<_, ScenarioError>>()?,
        ),
    };
    Ok(CreateMission {
        vehicle_type: cfg.vehicle,
        plan,
        params: cfg.behavior,
        mode: match cfg.mode {
            RunMode::Autonomous => MissionMode::Autonomous,
            RunMode::ManualScript => MissionMode::Manual,
        },
        whitelist: cfg.whitelist(),
        origin: Some(cfg.origin),
    })
}

/// When each expected tag's waypoint was first commanded.
fn waypoint_commanded_at(mission: &Mission) -> BTreeMap<Epc, u64> {
    let mut at = BTreeMap::new();
    for c in &mission.state.commands {
        if let Message::Command { cmd: CommandKind::NavTo, lat_e7, lon_e7, .. } = c.msg {
            let wp = mission.state.record.waypoints.iter().find(|w| {
                w.point.lat_e7() == lat_e7 && w.point.lon_e7() == lon_e7
            });
            if let Some(epc) = wp.and_then(|w| w.expected_epc) {
                at.entry(epc).or_insert(c.time_ms);
            }
        }
    }
    at
}

pub fn run_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<RunOutput, ScenarioError> {
    run_scenario_with_log(cfg, seed, None)
}

/// Run to completion (or `max_duration_s`). With `log_path`, the raw event
/// log is written there.
pub fn run_scenario_with_log(
    cfg: &ScenarioConfig,
    seed: u64,
    log_path: Option<&Path>,
) -> Result<RunOutput, ScenarioError> {
    cfg.validate()?;
    let record = plan_mission(1, &mission_request(cfg)?)?;
    let mut mission = Mission::new(record);
    mission.start()?;
    let record_at_start = mission.state.record.clone();
    let mut vehicle = VehicleSim::new(cfg, seed);
    let mut operator = (cfg.mode == RunMode::ManualScript).then(|| ScriptOperator::new(cfg.script.clone(), cfg.origin));
    let mut rng_up = stream_rng(seed, stream::UPLINK);
    let mut rng_down = stream_rng(seed, stream::DOWNLINK);

    let max_ticks = (cfg.max_duration_s / cfg.dt_s).ceil() as u64;
    let mut uplink: Vec<Frame> = Vec::new();
    let mut end_ms = 0;
    for k in 0..=max_ticks {
        let time_ms = (k as f64 * cfg.dt_s * 1000.0).round() as u64;
        end_ms = time_ms;
        let arriving = lossy_channel(std::mem::take(&mut uplink), cfg.uplink_drop_prob, &mut rng_up);
        let down = vehicle.tick(k, &arriving);
        for f in lossy_channel(down, cfg.downlink_drop_prob, &mut rng_down) {
            for (seq, msg) in mission.receive(time_ms, &f) {
                uplink.push(Frame { seq, msg });
            }
            if let Some(op) = operator.as_mut() {
                op.observe(time_ms, &f);
            }
        }
        if mission.status() != MissionStatus::Running {
            break;
        }
        if let Some(op) = operator.as_mut() {
            if let Some(msg) = op.poll(time_ms) {
                let seq = mission.manual_command(time_ms, msg)?;
                op.sent(seq, msg, time_ms);
                uplink.push(Frame { seq, msg });
            }
        }
    }
    if mission.status() == MissionStatus::Running {
        mission.abort()?;
    }

    let event_log_path: Option<PathBuf> = match log_path {
        Some(p) => {
            std::fs::write(p, mission.log.to_bytes())?;
            Some(p.to_path_buf())
        }
        None => None,
    };
    let script = operator.map(|o| o.outcomes).unwrap_or_default();
    let specs: Vec<_> = cfg.tags.iter().chain(&cfg.deployable_tags).filter(|t| t.whitelisted).collect();
    let tags = tag_outcomes(&specs, &mission.log, &script, &waypoint_commanded_at(&mission));
    let report = RunReport {
        scenario: cfg.name.clone(),
        seed,
        status: mission.status(),
        duration_s: end_ms as f64 / 1000.0,
        detected: tags.iter().filter(|t| t.detected).count(),
        total: tags.len(),
        tags,
        script,
        commands_issued: mission.state.commands.len(),
        downlink_gaps: mission.state.downlink_gaps,
        audit_notes: mission.state.audit.len(),
        event_log_path,
    };
    Ok(RunOutput { report, mission, record_at_start, vehicle })
}
