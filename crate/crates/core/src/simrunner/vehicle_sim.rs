//! The simulated robot: sensors, onboard behavior, kinematics and reader,
//! exchanging telemetry frames with a ground station one tick at a time.

use std::collections::{HashMap, HashSet, VecDeque};
use std::f64::consts::FRAC_PI_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::behavior::{CommandOutcome, FsmCommand, SearchInput, UavSearchFsm, UgvSearchFsm};
use crate::inventory::{ReadContext, Reader};
use crate::rf_link::{received_power_dbm, AntennaPose};
use crate::tag_model::{ChargeModel, Epc, SensorKind, Tag, TagKind};
use crate::telemetry::{CommandKind, Frame, Message};
use crate::vehicle::{step_uav, step_ugv, Setpoint, UavState, UgvState, VehicleType};
use crate::world::{enu_from_geodetic, geodetic_from_enu, Barometer, EnuPose, GeoPoint, GpsReceiver, Vec3};

use super::pilot::ManualPilot;
use super::scenario::{RunMode, ScenarioConfig, TagSpec};

/// Independent random streams, one per purpose, so that changing how often
/// one consumer draws never perturbs another.
pub mod stream {
    pub const GPS: u64 = 1;
    pub const BARO: u64 = 2;
    pub const INVENTORY: u64 = 3;
    pub const BEHAVIOR: u64 = 4;
    pub const UPLINK: u64 = 5;
    pub const DOWNLINK: u64 = 6;
    pub const JITTER: u64 = 7;
    pub const SHADOW: u64 = 8;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Whoever is flying: the onboard search behavior or a remote pilot.
#[derive(Debug, Clone, PartialEq)]
pub enum Onboard {
    Uav(UavSearchFsm),
    Ugv(UgvSearchFsm),
    Manual(ManualPilot),
}

impl Onboard {
    pub fn state_code(&self) -> u8 {
        match self {
            Onboard::Uav(f) => f.state_code(),
            Onboard::Ugv(f) => f.state_code(),
            Onboard::Manual(p) => p.state_code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Body {
    Uav(UavState),
    Ugv(UgvState),
}

/// A sensor transaction in progress.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Transaction {
    epc: Epc,
    done_tick: u64,
}

#[derive(Debug, Clone)]
pub struct VehicleSim {
    cfg: ScenarioConfig,
    pub kind: VehicleType,
    body: Body,
    pub onboard: Onboard,
    pub gps: GpsReceiver,
    pub baro: Barometer,
    pub tags: Vec<Tag>,
    carried: VecDeque<TagSpec>,
    reader: Reader,
    charge: ChargeModel,
    transaction: Option<Transaction>,
    seen: HashSet<Epc>,
    handled: HashMap<u32, u8>,
    tx_seq: u32,
    last_state: Option<u8>,
    ticks_per_round: u64,
    ticks_per_heartbeat: u64,
    ticks_per_gps: u64,
    rng_gps: ChaCha8Rng,
    rng_baro: ChaCha8Rng,
    rng_inventory: ChaCha8Rng,
    rng_behavior: ChaCha8Rng,
    rng_jitter: ChaCha8Rng,
    rng_shadow: ChaCha8Rng,
}

fn ticks(period_s: f64, dt: f64) -> u64 {
    ((period_s / dt).round() as u64).max(1)
}

impl VehicleSim {
    /// The scenario must already be validated.
    pub fn new(cfg: &ScenarioConfig, seed: u64) -> Self {
        let mut rng_gps = stream_rng(seed, stream::GPS);
        let mut rng_baro = stream_rng(seed, stream::BARO);
        let gps = GpsReceiver::new(cfg.gps, &mut rng_gps);
        let baro = Barometer::new(cfg.baro, &mut rng_baro);
        let start = EnuPose::at(cfg.start.0, cfg.start.1, 0.0);
        let (body, onboard) = match (cfg.vehicle, cfg.mode) {
            (VehicleType::Uav, mode) => {
                let fsm = UavSearchFsm::new(cfg.behavior);
                (Body::Uav(UavState::at(start)), (mode == RunMode::Autonomous).then_some(Onboard::Uav(fsm)))
            }
            (VehicleType::Ugv, mode) => {
                let fsm = UgvSearchFsm::new(cfg.behavior);
                (Body::Ugv(UgvState::at(start)), (mode == RunMode::Autonomous).then_some(Onboard::Ugv(fsm)))
            }
        };
        let onboard = onboard.unwrap_or_else(|| {
            Onboard::Manual(ManualPilot::new(
                cfg.vehicle,
                cfg.manual_transit_alt_m,
                cfg.hover_jitter_sigma_m,
                cfg.ugv_standoff_m,
            ))
        });
        Self {
            kind: cfg.vehicle,
            body,
            onboard,
            gps,
            baro,
            tags: cfg.tags.iter().map(TagSpec::build).collect(),
            carried: cfg.deployable_tags.iter().cloned().collect(),
            reader: Reader::new(&cfg.inventory),
            charge: ChargeModel { threshold_dbm: cfg.link.sensor_threshold_dbm, required_s: cfg.charge_required_s },
            transaction: None,
            seen: HashSet::new(),
            handled: HashMap::new(),
            tx_seq: 0,
            last_state: None,
            ticks_per_round: ticks(1.0 / cfg.inventory.round_rate_hz, cfg.dt_s),
            ticks_per_heartbeat: ticks(cfg.heartbeat_period_s, cfg.dt_s),
            ticks_per_gps: ticks(cfg.gps_period_s, cfg.dt_s),
            rng_gps,
            rng_baro,
            rng_inventory: stream_rng(seed, stream::INVENTORY),
            rng_behavior: stream_rng(seed, stream::BEHAVIOR),
            rng_jitter: stream_rng(seed, stream::JITTER),
            rng_shadow: stream_rng(seed, stream::SHADOW),
            cfg: cfg.clone(),
        }
    }

    pub fn pose(&self) -> EnuPose {
        match self.body {
            Body::Uav(s) => s.pose,
            Body::Ugv(s) => s.pose,
        }
    }

    fn settled(&self) -> bool {
        match self.body {
            Body::Uav(s) => s.settled,
            Body::Ugv(s) => s.settled,
        }
    }

    pub fn state_code(&self) -> u8 {
        self.onboard.state_code()
    }

    pub fn carried(&self) -> usize {
        self.carried.len()
    }

    /// Reader antenna in the world frame.
    pub fn reader_pose(&self) -> AntennaPose {
        let p = self.pose();
        match self.kind {
            VehicleType::Uav => AntennaPose::new(p.position(), Vec3::DOWN, Vec3::from_yaw(p.yaw)),
            VehicleType::Ugv => AntennaPose::new(
                Vec3::new(p.east, p.north, self.cfg.ugv_antenna_height_m),
                Vec3::from_yaw(p.yaw),
                Vec3::from_yaw(p.yaw + FRAC_PI_2),
            ),
        }
    }

    fn next_frame(&mut self, msg: Message) -> Frame {
        let f = Frame { seq: self.tx_seq, msg };
        self.tx_seq = self.tx_seq.wrapping_add(1);
        f
    }

    /// Advance one tick. `uplink` holds the command frames that arrived since
    /// the last tick; returns the frames transmitted during this tick.
    pub fn tick(&mut self, k: u64, uplink: &[Frame]) -> Vec<Frame> {
        let dt = self.cfg.dt_s;
        let time_ms = (k as f64 * dt * 1000.0).round() as u64;
        let mut out = Vec::new();

        for f in uplink {
            if let Message::Command { cmd, lat_e7, lon_e7, alt_mm, param_cm } = f.msg {
                let result = match self.handled.get(&f.seq) {
                    Some(&r) => r,
                    None => {
                        let r = self.execute(cmd, GeoPoint::from_wire(lat_e7, lon_e7, alt_mm), param_cm).code();
                        self.handled.insert(f.seq, r);
                        r
                    }
                };
                let ack = self.next_frame(Message::Ack { seq_acked: f.seq, result });
                out.push(ack);
            }
        }

        let true_pose = self.pose();
        let nav = self.nav_pose(&true_pose);
        let measured = self.measured_pose(&true_pose);

        let reads = self.run_reader(k, time_ms);
        let mut positive = false;
        for (epc, _) in &reads {
            positive |= self.seen.insert(*epc);
        }
        for (_, msg) in reads {
            let f = self.next_frame(msg);
            out.push(f);
        }

        let settled = self.settled();
        let input = SearchInput { nav, measured, settled, positive_read: positive, dt };
        let setpoint = match &mut self.onboard {
            Onboard::Uav(fsm) => Some(fsm.step(&input).setpoint),
            Onboard::Ugv(fsm) => Some(fsm.step(&input, &mut self.rng_behavior).setpoint),
            Onboard::Manual(_) => None,
        };
        let setpoint = match setpoint {
            Some(sp) => self.nav_to_true(sp),
            None => {
                let Onboard::Manual(pilot) = &mut self.onboard else { unreachable!() };
                let o = pilot.step(&true_pose, settled, &mut self.rng_jitter);
                if let Some(at) = o.placed {
                    self.place_tag(at);
                }
                o.setpoint
            }
        };
        self.body = match self.body {
            Body::Uav(s) => Body::Uav(step_uav(&s, &setpoint, &self.cfg.uav, dt)),
            Body::Ugv(s) => Body::Ugv(step_ugv(&s, &setpoint, &self.cfg.ugv, dt)),
        };

        let state = self.state_code();
        if self.last_state != Some(state) || k.is_multiple_of(self.ticks_per_heartbeat) {
            self.last_state = Some(state);
            let hb = self.next_frame(Message::Heartbeat { vehicle_type: self.kind.code(), fsm_state: state });
            out.push(hb);
        }
        if k.is_multiple_of(self.ticks_per_gps) {
            let fix = self.measured_pose(&self.pose());
            if let Ok(g) = geodetic_from_enu(self.cfg.origin, &fix) {
                let msg = Message::GpsPosition {
                    lat_e7: g.lat_e7(),
                    lon_e7: g.lon_e7(),
                    alt_mm: g.alt_mm(),
                    time_ms: time_ms as u32,
                };
                let f = self.next_frame(msg);
                out.push(f);
            }
        }
        out
    }

    fn nav_pose(&self, p: &EnuPose) -> EnuPose {
        let mut nav = self.gps.biased(p);
        if self.kind == VehicleType::Uav {
            nav.up = self.baro.biased(p.up);
        }
        nav
    }

    fn measured_pose(&mut self, p: &EnuPose) -> EnuPose {
        let mut m = self.gps.sample(p, &mut self.rng_gps);
        m.up = match self.kind {
            VehicleType::Uav => self.baro.sample(p.up, &mut self.rng_baro),
            VehicleType::Ugv => 0.0,
        };
        m
    }

    fn nav_to_true_pose(&self, p: EnuPose) -> EnuPose {
        let up = match self.kind {
            VehicleType::Uav => self.baro.true_from_believed(p.up).max(0.0),
            VehicleType::Ugv => 0.0,
        };
        EnuPose { east: p.east - self.gps.bias_east, north: p.north - self.gps.bias_north, up, yaw: p.yaw }
    }

    fn nav_to_true(&self, sp: Setpoint) -> Setpoint {
        match sp {
            Setpoint::Target(p) => Setpoint::Target(self.nav_to_true_pose(p)),
            Setpoint::Circle { center, radius_m, arc_deg } => {
                Setpoint::Circle { center: self.nav_to_true_pose(center), radius_m, arc_deg }
            }
            other => other,
        }
    }

    fn execute(&mut self, cmd: CommandKind, point: GeoPoint, param_cm: u16) -> CommandOutcome {
        let Ok(local) = enu_from_geodetic(self.cfg.origin, point) else {
            return CommandOutcome::Rejected;
        };
        let here = self.pose();
        match &mut self.onboard {
            Onboard::Manual(pilot) => {
                if cmd == CommandKind::PlaceTag && self.carried.is_empty() {
                    return CommandOutcome::Rejected;
                }
                pilot.command(cmd, local, param_cm, &here)
            }
            Onboard::Uav(fsm) => match fsm_command(cmd, &local) {
                Some(c) => fsm.command(c),
                None => CommandOutcome::Rejected,
            },
            Onboard::Ugv(fsm) => match fsm_command(cmd, &local) {
                Some(c) => fsm.command(c),
                None => CommandOutcome::Rejected,
            },
        }
    }

    fn place_tag(&mut self, at: EnuPose) {
        if let Some(spec) = self.carried.pop_front() {
            self.tags.push(TagSpec { east: at.east, north: at.north, mount_height_m: Some(at.up), ..spec }.build());
        }
    }

    /// Power tags, run inventory and sensor transactions. Returns new TAG_READ
    /// messages keyed by EPC.
    fn run_reader(&mut self, k: u64, time_ms: u64) -> Vec<(Epc, Message)> {
        let reader = self.reader_pose();
        let link = &self.cfg.link;
        let shadow = (link.shadowing_sigma_db > 0.0)
            .then(|| Normal::new(0.0, link.shadowing_sigma_db).expect("finite sigma"));
        let powers: Vec<f64> = self
            .tags
            .iter()
            .map(|t| {
                let p = received_power_dbm(&reader, &t.pose, link);
                p + shadow.map_or(0.0, |n| n.sample(&mut self.rng_shadow))
            })
            .collect();
        for (t, &p) in self.tags.iter_mut().zip(&powers) {
            t.powered_state_update(p, self.cfg.dt_s, &self.charge);
        }
        let stamp = time_ms as u32;
        let mut reads = Vec::new();

        if let Some(tx) = self.transaction {
            if k < tx.done_tick {
                return reads;
            }
            self.transaction = None;
            let ctx = ReadContext {
                link: &self.cfg.link,
                charge: &self.charge,
                env: &self.cfg.environment,
                timestamp_ms: time_ms,
            };
            if let Ok(rec) = self.reader.read_sensor(tx.epc, &self.tags, &reader, &ctx, &mut self.rng_inventory) {
                let rssi = rssi_x10(rec.rssi_dbm);
                if let Some(reading) = rec.sensor {
                    for v in reading.values() {
                        reads.push((rec.epc, tag_read(rec.epc, rssi, v.kind, v.milli, stamp)));
                    }
                }
            }
            return reads;
        }
        if !k.is_multiple_of(self.ticks_per_round) {
            return reads;
        }
        let round = self.reader.round(&self.tags, &powers, &self.cfg.link, &mut self.rng_inventory);
        for epc in round.reported {
            let Some(i) = self.tags.iter().position(|t| t.epc == epc) else { continue };
            let tag = &self.tags[i];
            if tag.kind == TagKind::IdOnly {
                reads.push((epc, tag_read(epc, rssi_x10(powers[i]), SensorKind::None, 0, stamp)));
            } else if self.transaction.is_none() && tag.is_sensor_ready(&self.charge) {
                let dur = ticks(self.cfg.inventory.sensor_transaction_s, self.cfg.dt_s);
                self.transaction = Some(Transaction { epc, done_tick: k + dur });
            }
        }
        reads
    }
}

fn fsm_command(cmd: CommandKind, local: &EnuPose) -> Option<FsmCommand> {
    match cmd {
        CommandKind::Takeoff => Some(FsmCommand::Takeoff),
        CommandKind::NavTo => Some(FsmCommand::NavTo { east: local.east, north: local.north }),
        CommandKind::Land => Some(FsmCommand::Land),
        _ => None,
    }
}

fn rssi_x10(dbm: f64) -> i16 {
    (dbm * 10.0).round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16
}

fn tag_read(epc: Epc, rssi_dbm_x10: i16, kind: SensorKind, milli: i32, time_ms: u32) -> Message {
    Message::TagRead { epc, rssi_dbm_x10, sensor_kind: kind.code(), sensor_value_milli: milli, time_ms }
}
