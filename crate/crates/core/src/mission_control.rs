//! Ground-control side: missions, the command state machine that reacts to
//! telemetry, and an append-only log that the whole state can be rebuilt from.
//!
//! Every received frame is appended to the log before it is acted on. Commands
//! the state machine issues are derived data and are not logged; operator
//! commands are inputs and are.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{state_code, waypoints_from_area, BehaviorParams, PlanError};
use crate::tag_model::Epc;
use crate::telemetry::{decode_frame, encode_frame, CommandKind, DecodeError, Frame, Message};
use crate::vehicle::VehicleType;
use crate::world::{enu_from_geodetic, geodetic_from_enu, EnuPose, GeoPoint, WorldError};

/// An unacknowledged command is sent again after this long.
pub const RESEND_AFTER_MS: u64 = 2000;

pub type MissionId = u64;

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("mission {0} not found")]
    NotFound(MissionId),
    #[error("mission plan is empty")]
    EmptyPlan,
    #[error("invalid coordinates: {0}")]
    Geo(#[from] WorldError),
    #[error("area planning failed: {0}")]
    Plan(#[from] PlanError),
    #[error("invalid behavior parameters: {0}")]
    Params(#[from] crate::behavior::BehaviorError),
    #[error("mission {id} is {status:?}; cannot {action}")]
    BadStatus { id: MissionId, status: MissionStatus, action: &'static str },
    #[error("manual commands need a manual-mode mission")]
    NotManual,
    #[error("malformed event log at byte {offset}: {reason}")]
    BadLog { offset: usize, reason: String },
    #[error("storage: {0}")]
    Io(#[from] io::Error),
    #[error("storage: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionStatus {
    Planned,
    Running,
    Done,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MissionMode {
    #[default]
    Autonomous,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub point: GeoPoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_epc: Option<Epc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plan {
    Waypoints(Vec<Waypoint>),
    Area { polygon: Vec<GeoPoint>, spacing_m: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateMission {
    pub vehicle_type: VehicleType,
    pub plan: Plan,
    #[serde(default)]
    pub params: BehaviorParams,
    #[serde(default)]
    pub mode: MissionMode,
    /// Known tags. Empty means every EPC is accepted.
    #[serde(default)]
    pub whitelist: Vec<Epc>,
    /// Frame origin; defaults to the first plan point.
    #[serde(default)]
    pub origin: Option<GeoPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionRecord {
    pub id: MissionId,
    pub vehicle_type: VehicleType,
    pub mode: MissionMode,
    pub origin: GeoPoint,
    pub waypoints: Vec<Waypoint>,
    pub params: BehaviorParams,
    pub whitelist: Vec<Epc>,
    pub status: MissionStatus,
}

impl MissionRecord {
    /// Waypoints in the mission's local frame.
    pub fn local_waypoints(&self) -> Result<Vec<EnuPose>, WorldError> {
        self.waypoints.iter().map(|w| enu_from_geodetic(self.origin, w.point)).collect()
    }

    pub fn accepts(&self, epc: &Epc) -> bool {
        self.whitelist.is_empty() || self.whitelist.contains(epc)
    }
}

/// Expand a request into a planned mission record.
pub fn plan_mission(id: MissionId, req: &CreateMission) -> Result<MissionRecord, MissionError> {
    req.params.validate()?;
    let (origin, waypoints) = match &req.plan {
        Plan::Waypoints(wps) => {
            let first = wps.first().ok_or(MissionError::EmptyPlan)?;
            for w in wps {
                w.point.validate()?;
            }
            (req.origin.unwrap_or(first.point), wps.clone())
        }
        Plan::Area { polygon, spacing_m } => {
            let first = polygon.first().ok_or(MissionError::EmptyPlan)?;
            let origin = req.origin.unwrap_or(*first);
            let local = polygon
                .iter()
                .map(|p| enu_from_geodetic(origin, *p).map(|e| (e.east, e.north)))
                .collect::<Result<Vec<_>, _>>()?;
            let grid = waypoints_from_area(&local, *spacing_m)?;
            let wps = grid
                .into_iter()
                .map(|(east, north)| {
                    geodetic_from_enu(origin, &EnuPose::at(east, north, 0.0))
                        .map(|point| Waypoint { point, expected_epc: None })
                })
                .collect::<Result<Vec<_>, _>>()?;
            (origin, wps)
        }
    };
    origin.validate()?;
    if waypoints.is_empty() {
        return Err(MissionError::EmptyPlan);
    }
    Ok(MissionRecord {
        id,
        vehicle_type: req.vehicle_type,
        mode: req.mode,
        origin,
        waypoints,
        params: req.params,
        whitelist: req.whitelist.clone(),
        status: MissionStatus::Planned,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub time_ms: u64,
    pub frame: Vec<u8>,
}

/// Append-only log of received frames, each prefixed with a u64 LE timestamp.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventLog {
    pub entries: Vec<LogEntry>,
}

impl EventLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn encode_entry(entry: &LogEntry) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + entry.frame.len());
        out.extend_from_slice(&entry.time_ms.to_le_bytes());
        out.extend_from_slice(&entry.frame);
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.entries.iter().flat_map(Self::encode_entry).collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MissionError> {
        let mut entries = Vec::new();
        let mut off = 0;
        while off < bytes.len() {
            let ts: [u8; 8] = bytes
                .get(off..off + 8)
                .and_then(|s| s.try_into().ok())
                .ok_or_else(|| MissionError::BadLog { offset: off, reason: "truncated timestamp".into() })?;
            let (_, used) = decode_frame(&bytes[off + 8..])
                .map_err(|e| MissionError::BadLog { offset: off + 8, reason: e.to_string() })?;
            entries.push(LogEntry { time_ms: u64::from_le_bytes(ts), frame: bytes[off + 8..off + 8 + used].to_vec() });
            off += 8 + used;
        }
        Ok(Self { entries })
    }

    pub fn frames(&self) -> impl Iterator<Item = (u64, Frame)> + '_ {
        self.entries
            .iter()
            .map(|e| (e.time_ms, decode_frame(&e.frame).expect("log holds only valid frames").0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub point: GeoPoint,
    pub time_ms: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagObservation {
    pub mission_id: MissionId,
    pub epc: Epc,
    pub sensor_kind: u8,
    pub sensor_value_milli: i32,
    pub rssi_dbm: f64,
    pub vehicle_gps: Option<GeoPoint>,
    pub time_ms: u32,
    /// Index of the log entry that carried the read.
    pub log_index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssuedCommand {
    pub seq: u32,
    pub msg: Message,
    /// Log entry that caused this command.
    pub cause_index: u64,
    pub time_ms: u64,
    pub resend: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outstanding {
    pub seq: u32,
    pub msg: Message,
    pub sent_ms: u64,
    pub acked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GcsPhase {
    Idle,
    TakingOff,
    Navigating(usize),
    Landing,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub mission_id: MissionId,
    pub time_ms: u64,
    pub note: String,
}

/// Everything derived from the record plus the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionState {
    pub record: MissionRecord,
    pub phase: GcsPhase,
    pub path: Vec<PathPoint>,
    pub observations: Vec<TagObservation>,
    pub found: BTreeSet<Epc>,
    pub vehicle_state: Option<u8>,
    pub next_cmd_seq: u32,
    pub outstanding: Option<Outstanding>,
    pub commands: Vec<IssuedCommand>,
    pub audit: Vec<AuditEntry>,
    pub last_downlink_seq: Option<u32>,
    pub downlink_gaps: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mission {
    pub state: MissionState,
    pub log: EventLog,
}

fn command_to(kind: CommandKind, p: GeoPoint, param_cm: u16) -> Message {
    Message::Command { cmd: kind, lat_e7: p.lat_e7(), lon_e7: p.lon_e7(), alt_mm: p.alt_mm(), param_cm }
}

impl Mission {
    pub fn new(record: MissionRecord) -> Self {
        let state = MissionState {
            record,
            phase: GcsPhase::Idle,
            path: Vec::new(),
            observations: Vec::new(),
            found: BTreeSet::new(),
            vehicle_state: None,
            next_cmd_seq: 0,
            outstanding: None,
            commands: Vec::new(),
            audit: Vec::new(),
            last_downlink_seq: None,
            downlink_gaps: 0,
        };
        Self { state, log: EventLog::default() }
    }

    pub fn id(&self) -> MissionId {
        self.state.record.id
    }

    pub fn status(&self) -> MissionStatus {
        self.state.record.status
    }

    pub fn start(&mut self) -> Result<(), MissionError> {
        match self.status() {
            MissionStatus::Planned => {
                self.state.record.status = MissionStatus::Running;
                Ok(())
            }
            status => Err(MissionError::BadStatus { id: self.id(), status, action: "start" }),
        }
    }

    pub fn abort(&mut self) -> Result<(), MissionError> {
        match self.status() {
            MissionStatus::Planned | MissionStatus::Running => {
                self.state.record.status = MissionStatus::Aborted;
                Ok(())
            }
            status => Err(MissionError::BadStatus { id: self.id(), status, action: "abort" }),
        }
    }

    /// Rebuild a mission from the record it was started with and its log.
    pub fn replay(record_at_start: MissionRecord, log: &EventLog) -> Self {
        let mut m = Mission::new(record_at_start);
        for entry in &log.entries {
            let (frame, _) = decode_frame(&entry.frame).expect("log holds only valid frames");
            m.apply(entry.time_ms, frame, entry.frame.clone());
        }
        m
    }

    /// Log and act on one received frame. Returns commands to transmit as
    /// `(seq, message)` pairs.
    pub fn receive(&mut self, time_ms: u64, frame: &Frame) -> Vec<(u32, Message)> {
        let bytes = encode_frame(&frame.msg, frame.seq).expect("fixed-size messages always fit");
        self.apply(time_ms, *frame, bytes)
    }

    /// Decode raw bytes, then [`Mission::receive`]. Undecodable input is audited, not logged.
    pub fn receive_bytes(&mut self, time_ms: u64, bytes: &[u8]) -> Result<Vec<(u32, Message)>, DecodeError> {
        match decode_frame(bytes) {
            Ok((frame, used)) => Ok(self.apply(time_ms, frame, bytes[..used].to_vec())),
            Err(e) => {
                self.audit(time_ms, format!("undecodable frame: {e}"));
                Err(e)
            }
        }
    }

    /// Operator command for a manual-mode mission. Logged as an input; returns
    /// the frame sequence number it goes out with.
    pub fn manual_command(&mut self, time_ms: u64, msg: Message) -> Result<u32, MissionError> {
        if self.state.record.mode != MissionMode::Manual {
            return Err(MissionError::NotManual);
        }
        if !matches!(msg, Message::Command { .. }) {
            return Err(MissionError::NotManual);
        }
        if self.status() != MissionStatus::Running {
            return Err(MissionError::BadStatus { id: self.id(), status: self.status(), action: "command" });
        }
        let seq = self.state.next_cmd_seq;
        let frame = Frame { seq, msg };
        self.receive(time_ms, &frame);
        Ok(seq)
    }

    fn audit(&mut self, time_ms: u64, note: String) {
        let mission_id = self.id();
        self.state.audit.push(AuditEntry { mission_id, time_ms, note });
    }

    fn apply(&mut self, time_ms: u64, frame: Frame, bytes: Vec<u8>) -> Vec<(u32, Message)> {
        self.log.entries.push(LogEntry { time_ms, frame: bytes });
        let index = (self.log.len() - 1) as u64;
        let mut out = Vec::new();
        if let Message::Command { .. } = frame.msg {
            self.issue_with_seq(frame.seq, frame.msg, index, time_ms, false, &mut out);
            return out;
        }
        let s = &mut self.state;
        if let Some(prev) = s.last_downlink_seq {
            if frame.seq != prev.wrapping_add(1) {
                s.downlink_gaps += 1;
            }
        }
        s.last_downlink_seq = Some(frame.seq);
        match frame.msg {
            Message::Heartbeat { fsm_state, .. } => {
                s.vehicle_state = Some(fsm_state);
                self.on_heartbeat(fsm_state, index, time_ms, &mut out);
            }
            Message::GpsPosition { lat_e7, lon_e7, alt_mm, time_ms: t } => {
                s.path.push(PathPoint { point: GeoPoint::from_wire(lat_e7, lon_e7, alt_mm), time_ms: t });
            }
            Message::TagRead { epc, rssi_dbm_x10, sensor_kind, sensor_value_milli, time_ms: t } => {
                if !s.record.accepts(&epc) {
                    self.audit(time_ms, format!("dropped read of unknown tag {epc}"));
                } else {
                    let mission_id = s.record.id;
                    s.observations.push(TagObservation {
                        mission_id,
                        epc,
                        sensor_kind,
                        sensor_value_milli,
                        rssi_dbm: f64::from(rssi_dbm_x10) / 10.0,
                        vehicle_gps: s.path.last().map(|p| p.point),
                        time_ms: t,
                        log_index: index,
                    });
                    let new = s.found.insert(epc);
                    self.on_tag_read(epc, new, index, time_ms, &mut out);
                }
            }
            Message::Ack { seq_acked, result } => {
                let mut rejected = false;
                if let Some(o) = s.outstanding.as_mut() {
                    if o.seq == seq_acked {
                        o.acked = true;
                        rejected = result != 0;
                    }
                }
                if rejected {
                    self.audit(time_ms, format!("command {seq_acked} rejected with code {result}"));
                }
            }
            Message::Command { .. } => unreachable!("handled above"),
        }
        out
    }

    fn autonomous_running(&self) -> bool {
        self.state.record.mode == MissionMode::Autonomous && self.status() == MissionStatus::Running
    }

    fn on_heartbeat(&mut self, fsm_state: u8, index: u64, time_ms: u64, out: &mut Vec<(u32, Message)>) {
        if fsm_state == state_code::LANDED && self.status() == MissionStatus::Running {
            self.state.record.status = MissionStatus::Done;
            self.state.phase = GcsPhase::Finished;
            return;
        }
        if !self.autonomous_running() {
            return;
        }
        if let Some(o) = self.state.outstanding.clone() {
            if !o.acked {
                if time_ms.saturating_sub(o.sent_ms) >= RESEND_AFTER_MS {
                    self.issue_with_seq(o.seq, o.msg, index, time_ms, true, out);
                }
                return;
            }
        }
        let uav = self.state.record.vehicle_type == VehicleType::Uav;
        match (self.state.phase, fsm_state) {
            (GcsPhase::Idle, state_code::ON_GROUND) => {
                if uav {
                    self.state.phase = GcsPhase::TakingOff;
                    let home = self.state.record.origin;
                    self.issue(command_to(CommandKind::Takeoff, home, 0), index, time_ms, out);
                } else {
                    self.advance_from(0, index, time_ms, out);
                }
            }
            (GcsPhase::TakingOff, state_code::AWAITING_COMMAND) => self.advance_from(0, index, time_ms, out),
            (GcsPhase::Navigating(i), state_code::AWAITING_COMMAND) => self.advance_from(i + 1, index, time_ms, out),
            _ => {}
        }
    }

    fn on_tag_read(&mut self, epc: Epc, new: bool, index: u64, time_ms: u64, out: &mut Vec<(u32, Message)>) {
        if !self.autonomous_running() {
            return;
        }
        if let GcsPhase::Navigating(i) = self.state.phase {
            let hit = match self.state.record.waypoints[i].expected_epc {
                Some(expected) => expected == epc,
                None => new,
            };
            if hit {
                self.advance_from(i + 1, index, time_ms, out);
            }
        }
    }

    /// Go to the first waypoint at or after `i` whose tag is still unseen, or land.
    fn advance_from(&mut self, i: usize, index: u64, time_ms: u64, out: &mut Vec<(u32, Message)>) {
        let wps = &self.state.record.waypoints;
        let next = (i..wps.len()).find(|&k| wps[k].expected_epc.is_none_or(|e| !self.state.found.contains(&e)));
        match next {
            Some(k) => {
                self.state.phase = GcsPhase::Navigating(k);
                let mut target = wps[k].point;
                target.alt = self.state.record.origin.alt + self.state.record.params.cruise_alt_m;
                self.issue(command_to(CommandKind::NavTo, target, 0), index, time_ms, out);
            }
            None => {
                self.state.phase = GcsPhase::Landing;
                let here = self.state.path.last().map(|p| p.point).unwrap_or(self.state.record.origin);
                self.issue(command_to(CommandKind::Land, here, 0), index, time_ms, out);
            }
        }
    }

    fn issue(&mut self, msg: Message, index: u64, time_ms: u64, out: &mut Vec<(u32, Message)>) {
        let seq = self.state.next_cmd_seq;
        self.issue_with_seq(seq, msg, index, time_ms, false, out);
    }

    fn issue_with_seq(
        &mut self,
        seq: u32,
        msg: Message,
        index: u64,
        time_ms: u64,
        resend: bool,
        out: &mut Vec<(u32, Message)>,
    ) {
        let s = &mut self.state;
        s.next_cmd_seq = s.next_cmd_seq.max(seq.wrapping_add(1));
        s.outstanding = Some(Outstanding { seq, msg, sent_ms: time_ms, acked: false });
        s.commands.push(IssuedCommand { seq, msg, cause_index: index, time_ms, resend });
        out.push((seq, msg));
    }
}

/// Read-side projection of one mission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionView {
    pub record: MissionRecord,
    pub phase: GcsPhase,
    pub vehicle_state: Option<String>,
    pub path: Vec<PathPoint>,
    pub observations: Vec<TagObservation>,
    pub commands: Vec<IssuedCommand>,
    pub audit: Vec<AuditEntry>,
    pub event_count: usize,
}

impl From<&Mission> for MissionView {
    fn from(m: &Mission) -> Self {
        let s = &m.state;
        Self {
            record: s.record.clone(),
            phase: s.phase,
            vehicle_state: s.vehicle_state.map(|c| state_code::name(c).to_string()),
            path: s.path.clone(),
            observations: s.observations.clone(),
            commands: s.commands.clone(),
            audit: s.audit.clone(),
            event_count: m.log.len(),
        }
    }
}

/// One line of the event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub mission_id: MissionId,
    /// Position in the mission log; resume a stream from here.
    pub index: u64,
    pub time_ms: u64,
    pub frame_seq: u32,
    pub direction: Direction,
    pub message: Message,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Downlink,
    Uplink,
}

impl EventRecord {
    pub fn from_entry(mission_id: MissionId, index: u64, entry: &LogEntry) -> Self {
        let (frame, _) = decode_frame(&entry.frame).expect("log holds only valid frames");
        let direction =
            if matches!(frame.msg, Message::Command { .. }) { Direction::Uplink } else { Direction::Downlink };
        Self { mission_id, index, time_ms: entry.time_ms, frame_seq: frame.seq, direction, message: frame.msg }
    }

    pub fn to_ndjson_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("event records serialize");
        s.push('\n');
        s
    }
}

/// Store of missions with optional on-disk persistence.
#[derive(Debug, Default)]
pub struct MissionControl {
    missions: BTreeMap<MissionId, Mission>,
    started: BTreeMap<MissionId, MissionRecord>,
    next_id: MissionId,
    storage: Option<PathBuf>,
    logs: BTreeMap<MissionId, File>,
    pub audit: Vec<AuditEntry>,
}

impl MissionControl {
    pub fn new() -> Self {
        Self { next_id: 1, ..Self::default() }
    }

    /// Persist records as JSON and logs as raw bytes under `dir`.
    pub fn with_storage(dir: impl AsRef<Path>) -> Result<Self, MissionError> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(Self { next_id: 1, storage: Some(dir.as_ref().to_path_buf()), ..Self::default() })
    }

    fn record_path(&self, id: MissionId) -> Option<PathBuf> {
        self.storage.as_ref().map(|d| d.join(format!("mission-{id}.json")))
    }

    pub fn log_path(&self, id: MissionId) -> Option<PathBuf> {
        self.storage.as_ref().map(|d| d.join(format!("mission-{id}.log")))
    }

    fn save_record(&self, record: &MissionRecord) -> Result<(), MissionError> {
        if let Some(path) = self.record_path(record.id) {
            fs::write(path, serde_json::to_vec_pretty(record)?)?;
        }
        Ok(())
    }

    pub fn create_mission(&mut self, req: &CreateMission) -> Result<MissionRecord, MissionError> {
        let record = plan_mission(self.next_id, req)?;
        self.save_record(&record)?;
        self.next_id += 1;
        self.missions.insert(record.id, Mission::new(record.clone()));
        Ok(record)
    }

    pub fn get(&self, id: MissionId) -> Result<&Mission, MissionError> {
        self.missions.get(&id).ok_or(MissionError::NotFound(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = MissionId> + '_ {
        self.missions.keys().copied()
    }

    pub fn query_mission(&self, id: MissionId) -> Result<MissionView, MissionError> {
        self.get(id).map(MissionView::from)
    }

    pub fn start_mission(&mut self, id: MissionId) -> Result<MissionRecord, MissionError> {
        let m = self.missions.get_mut(&id).ok_or(MissionError::NotFound(id))?;
        m.start()?;
        let record = m.state.record.clone();
        self.started.insert(id, record.clone());
        self.save_record(&record)?;
        if let Some(path) = self.log_path(id) {
            let f = OpenOptions::new().create(true).append(true).open(path)?;
            self.logs.insert(id, f);
        }
        Ok(record)
    }

    pub fn abort_mission(&mut self, id: MissionId) -> Result<MissionRecord, MissionError> {
        let m = self.missions.get_mut(&id).ok_or(MissionError::NotFound(id))?;
        m.abort()?;
        let record = m.state.record.clone();
        self.save_record(&record)?;
        Ok(record)
    }

    /// Record at the moment the mission started; the replay base.
    pub fn record_at_start(&self, id: MissionId) -> Result<&MissionRecord, MissionError> {
        self.started.get(&id).ok_or(MissionError::NotFound(id))
    }

    fn persist_tail(&mut self, id: MissionId, from: usize) -> Result<(), MissionError> {
        if let (Some(f), Some(m)) = (self.logs.get_mut(&id), self.missions.get(&id)) {
            for e in &m.log.entries[from..] {
                f.write_all(&EventLog::encode_entry(e))?;
            }
            f.flush()?;
        }
        Ok(())
    }

    /// Feed one telemetry frame to a mission. Unknown ids are audited and ignored.
    pub fn record_telemetry(
        &mut self,
        id: MissionId,
        time_ms: u64,
        bytes: &[u8],
    ) -> Result<Vec<(u32, Message)>, MissionError> {
        let Some(m) = self.missions.get_mut(&id) else {
            self.audit.push(AuditEntry { mission_id: id, time_ms, note: "telemetry for unknown mission".into() });
            return Ok(Vec::new());
        };
        let before = m.log.len();
        let status_before = m.status();
        let out = m.receive_bytes(time_ms, bytes).unwrap_or_default();
        let status_after = m.status();
        self.persist_tail(id, before)?;
        if status_before != status_after {
            let record = self.missions[&id].state.record.clone();
            self.save_record(&record)?;
        }
        Ok(out)
    }

    pub fn manual_command(&mut self, id: MissionId, time_ms: u64, msg: Message) -> Result<u32, MissionError> {
        let m = self.missions.get_mut(&id).ok_or(MissionError::NotFound(id))?;
        let before = m.log.len();
        let seq = m.manual_command(time_ms, msg)?;
        self.persist_tail(id, before)?;
        Ok(seq)
    }

    pub fn events_from(&self, id: MissionId, from: u64) -> Result<Vec<EventRecord>, MissionError> {
        let m = self.get(id)?;
        Ok(m.log
            .entries
            .iter()
            .enumerate()
            .skip(from as usize)
            .map(|(i, e)| EventRecord::from_entry(id, i as u64, e))
            .collect())
    }

    /// Rebuild a mission's state from its start record and its log.
    pub fn replay(&self, id: MissionId) -> Result<Mission, MissionError> {
        let record = self.record_at_start(id)?.clone();
        Ok(Mission::replay(record, &self.get(id)?.log))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ORIGIN: GeoPoint = GeoPoint { lat: 42.0, lon: -71.0, alt: 0.0 };

    fn at(east: f64, north: f64) -> GeoPoint {
        geodetic_from_enu(ORIGIN, &EnuPose::at(east, north, 0.0)).unwrap()
    }

    fn epc(n: u64) -> Epc {
        Epc::from_index(0xE280_0000, n)
    }

    fn five_tag_request() -> CreateMission {
        let pts = [(8.0, 8.0), (32.0, 8.0), (20.0, 20.0), (8.0, 32.0), (32.0, 32.0)];
        CreateMission {
            vehicle_type: VehicleType::Uav,
            plan: Plan::Waypoints(
                pts.iter()
                    .enumerate()
                    .map(|(i, &(e, n))| Waypoint { point: at(e, n), expected_epc: Some(epc(i as u64)) })
                    .collect(),
            ),
            params: BehaviorParams::default(),
            mode: MissionMode::Autonomous,
            whitelist: (0..5).map(epc).collect(),
            origin: Some(ORIGIN),
        }
    }

    struct Downlink(u32);

    impl Downlink {
        fn frame(&mut self, msg: Message) -> Frame {
            self.0 += 1;
            Frame { seq: self.0 - 1, msg }
        }
        fn hb(&mut self, state: u8) -> Frame {
            self.frame(Message::Heartbeat { vehicle_type: 0, fsm_state: state })
        }
        fn ack(&mut self, seq: u32) -> Frame {
            self.frame(Message::Ack { seq_acked: seq, result: 0 })
        }
        fn read(&mut self, e: Epc) -> Frame {
            self.frame(Message::TagRead { epc: e, rssi_dbm_x10: -80, sensor_kind: 0, sensor_value_milli: 0, time_ms: 0 })
        }
    }

    fn kind(msg: &Message) -> CommandKind {
        match msg {
            Message::Command { cmd, .. } => *cmd,
            other => panic!("not a command: {other:?}"),
        }
    }

    #[test]
    fn create_from_waypoints_and_area() {
        let mut mc = MissionControl::new();
        let rec = mc.create_mission(&five_tag_request()).unwrap();
        assert_eq!(rec.waypoints.len(), 5);
        assert_eq!(rec.status, MissionStatus::Planned);

        let area = CreateMission {
            plan: Plan::Area { polygon: vec![at(0.0, 0.0), at(40.0, 0.0), at(40.0, 40.0), at(0.0, 40.0)], spacing_m: 10.0 },
            ..five_tag_request()
        };
        assert_eq!(mc.create_mission(&area).unwrap().waypoints.len(), 25);

        let empty = CreateMission { plan: Plan::Waypoints(vec![]), ..five_tag_request() };
        assert!(matches!(mc.create_mission(&empty), Err(MissionError::EmptyPlan)));
    }

    #[test]
    fn fsm_walks_waypoints_and_lands() {
        let mut m = Mission::new(plan_mission(1, &five_tag_request()).unwrap());
        m.start().unwrap();
        let mut d = Downlink(0);

        let out = m.receive(0, &d.hb(state_code::ON_GROUND));
        assert_eq!(out.len(), 1);
        assert_eq!(kind(&out[0].1), CommandKind::Takeoff);
        m.receive(100, &d.ack(out[0].0));

        // Heartbeat alone while busy: nothing to do.
        assert!(m.receive(200, &d.hb(state_code::TAKEOFF)).is_empty());

        let out = m.receive(1000, &d.hb(state_code::AWAITING_COMMAND));
        assert_eq!(kind(&out[0].1), CommandKind::NavTo);
        m.receive(1100, &d.ack(out[0].0));

        // Reading the target tag moves on at once.
        let out = m.receive(1200, &d.read(epc(0)));
        assert_eq!(kind(&out[0].1), CommandKind::NavTo);
        assert_eq!(m.state.phase, GcsPhase::Navigating(1));
        m.receive(1300, &d.ack(out[0].0));

        // A search that ends without a read also moves on.
        for i in 2..5 {
            let out = m.receive(2000 + i as u64, &d.hb(state_code::AWAITING_COMMAND));
            assert_eq!(m.state.phase, GcsPhase::Navigating(i));
            m.receive(2000 + i as u64, &d.ack(out[0].0));
        }
        let out = m.receive(9000, &d.hb(state_code::AWAITING_COMMAND));
        assert_eq!(kind(&out[0].1), CommandKind::Land);
        m.receive(9100, &d.ack(out[0].0));
        m.receive(9900, &d.hb(state_code::LANDED));
        assert_eq!(m.status(), MissionStatus::Done);
        assert_eq!(m.state.downlink_gaps, 0);
    }

    #[test]
    fn unacked_commands_are_resent() {
        let mut m = Mission::new(plan_mission(1, &five_tag_request()).unwrap());
        m.start().unwrap();
        let mut d = Downlink(0);
        let first = m.receive(0, &d.hb(state_code::ON_GROUND));
        assert!(m.receive(1000, &d.hb(state_code::ON_GROUND)).is_empty());
        let again = m.receive(2000, &d.hb(state_code::ON_GROUND));
        assert_eq!(again, first);
        assert!(m.state.commands[1].resend);
    }

    #[test]
    fn every_command_has_one_cause() {
        let mut m = Mission::new(plan_mission(1, &five_tag_request()).unwrap());
        m.start().unwrap();
        let mut d = Downlink(0);
        let out = m.receive(0, &d.hb(state_code::ON_GROUND));
        m.receive(10, &d.ack(out[0].0));
        let out = m.receive(20, &d.hb(state_code::AWAITING_COMMAND));
        m.receive(30, &d.ack(out[0].0));
        m.receive(40, &d.read(epc(0)));
        for c in &m.state.commands {
            assert!((c.cause_index as usize) < m.log.len());
            let (f, _) = decode_frame(&m.log.entries[c.cause_index as usize].frame).unwrap();
            assert!(!matches!(f.msg, Message::Ack { .. } | Message::GpsPosition { .. }));
        }
    }

    #[test]
    fn unknown_tags_and_missions_are_audited() {
        let mut mc = MissionControl::new();
        let id = mc.create_mission(&five_tag_request()).unwrap().id;
        mc.start_mission(id).unwrap();
        let stranger = encode_frame(
            &Message::TagRead { epc: epc(99), rssi_dbm_x10: 0, sensor_kind: 0, sensor_value_milli: 0, time_ms: 0 },
            0,
        )
        .unwrap();
        mc.record_telemetry(id, 0, &stranger).unwrap();
        let view = mc.query_mission(id).unwrap();
        assert!(view.observations.is_empty());
        assert_eq!(view.audit.len(), 1);

        assert!(mc.record_telemetry(777, 0, &stranger).unwrap().is_empty());
        assert_eq!(mc.audit.len(), 1);
        assert!(matches!(mc.query_mission(777), Err(MissionError::NotFound(777))));
    }

    #[test]
    fn replay_rebuilds_state_and_log_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut mc = MissionControl::with_storage(dir.path()).unwrap();
        let id = mc.create_mission(&five_tag_request()).unwrap().id;
        mc.start_mission(id).unwrap();
        let mut d = Downlink(0);
        let mut t = 0;
        let mut pending = vec![d.hb(state_code::ON_GROUND)];
        while let Some(f) = pending.pop() {
            t += 100;
            let bytes = encode_frame(&f.msg, f.seq).unwrap();
            for (seq, _) in mc.record_telemetry(id, t, &bytes).unwrap() {
                pending.push(d.ack(seq));
            }
            if pending.is_empty() && t < 5000 {
                pending.push(d.hb(state_code::AWAITING_COMMAND));
                pending.push(d.frame(Message::GpsPosition { lat_e7: 1, lon_e7: 2, alt_mm: 3, time_ms: t as u32 }));
            }
        }
        let live = mc.get(id).unwrap().clone();
        assert_eq!(mc.replay(id).unwrap(), live);

        let on_disk = fs::read(mc.log_path(id).unwrap()).unwrap();
        assert_eq!(on_disk, live.log.to_bytes());
        let parsed = EventLog::from_bytes(&on_disk).unwrap();
        assert_eq!(parsed, live.log);
        let saved: MissionRecord =
            serde_json::from_slice(&fs::read(dir.path().join(format!("mission-{id}.json"))).unwrap()).unwrap();
        assert_eq!(saved.status, live.state.record.status);
    }

    #[test]
    fn empty_mission_has_empty_path() {
        let mut mc = MissionControl::new();
        let id = mc.create_mission(&five_tag_request()).unwrap().id;
        let view = mc.query_mission(id).unwrap();
        assert!(view.path.is_empty());
        assert_eq!(mc.events_from(id, 0).unwrap(), vec![]);
    }

    #[test]
    fn manual_commands_are_logged_inputs() {
        let mut req = five_tag_request();
        req.mode = MissionMode::Manual;
        let mut mc = MissionControl::new();
        let id = mc.create_mission(&req).unwrap().id;
        let hover = command_to(CommandKind::HoverAt, at(8.0, 8.0), 50);
        assert!(matches!(mc.manual_command(id, 0, hover), Err(MissionError::BadStatus { .. })));
        mc.start_mission(id).unwrap();
        assert_eq!(mc.manual_command(id, 0, hover).unwrap(), 0);
        assert_eq!(mc.manual_command(id, 10, hover).unwrap(), 1);
        let events = mc.events_from(id, 1).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].direction, Direction::Uplink);
        assert_eq!(mc.replay(id).unwrap(), *mc.get(id).unwrap());
    }
}
