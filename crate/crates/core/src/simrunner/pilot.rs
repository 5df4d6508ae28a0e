use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::behavior::{state_code, CommandOutcome};
use crate::telemetry::CommandKind;
use crate::vehicle::{Setpoint, VehicleType};
use crate::world::EnuPose;

// Horizontal distance at which a transit switches to its final descent.
const OVER_TARGET_M: f64 = 0.3;
/// The boom leaves its tag once the vehicle is this close to the placement point.
pub const PLACE_TOLERANCE_M: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ManualPhase {
    Idle,
    Transit { target: EnuPose, place: bool },
    Circle { center: EnuPose, radius_m: f64 },
    Hover { at: EnuPose },
    Landing,
    Landed,
}

/// A remote-control pilot. Works in the true frame: the operator flies by sight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualPilot {
    pub vehicle: VehicleType,
    pub phase: ManualPhase,
    pub transit_alt_m: f64,
    pub jitter_sigma_m: f64,
    pub standoff_m: f64,
    commanded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotOutput {
    pub setpoint: Setpoint,
    /// Where a tag was left this tick.
    pub placed: Option<EnuPose>,
}

impl ManualPilot {
    pub fn new(vehicle: VehicleType, transit_alt_m: f64, jitter_sigma_m: f64, standoff_m: f64) -> Self {
        Self { vehicle, phase: ManualPhase::Idle, transit_alt_m, jitter_sigma_m, standoff_m, commanded: false }
    }

    pub fn state_code(&self) -> u8 {
        match self.phase {
            ManualPhase::Idle => state_code::ON_GROUND,
            ManualPhase::Transit { .. } | ManualPhase::Circle { .. } => state_code::MANUAL_TRANSIT,
            ManualPhase::Hover { .. } => state_code::MANUAL_HOVER,
            ManualPhase::Landing => state_code::LANDING,
            ManualPhase::Landed => state_code::LANDED,
        }
    }

    /// `target` is the command's position in the local frame; `here` is the vehicle.
    pub fn command(&mut self, cmd: CommandKind, target: EnuPose, param_cm: u16, here: &EnuPose) -> CommandOutcome {
        let ugv = self.vehicle == VehicleType::Ugv;
        if self.phase == ManualPhase::Landed && cmd != CommandKind::Takeoff {
            return CommandOutcome::Rejected;
        }
        let phase = match cmd {
            CommandKind::Takeoff if ugv => return CommandOutcome::Accepted,
            CommandKind::Takeoff => {
                ManualPhase::Transit { target: EnuPose { up: self.transit_alt_m, ..*here }, place: false }
            }
            CommandKind::NavTo | CommandKind::HoverAt => ManualPhase::Transit { target, place: false },
            CommandKind::PlaceTag if ugv => return CommandOutcome::Rejected,
            CommandKind::PlaceTag => ManualPhase::Transit { target, place: true },
            CommandKind::ChangeAlt if ugv => return CommandOutcome::Rejected,
            CommandKind::ChangeAlt => ManualPhase::Transit { target: EnuPose { up: target.up, ..*here }, place: false },
            CommandKind::Circle if ugv || param_cm == 0 => return CommandOutcome::Rejected,
            CommandKind::Circle => ManualPhase::Circle { center: target, radius_m: f64::from(param_cm) / 100.0 },
            CommandKind::Land => ManualPhase::Landing,
        };
        self.phase = phase;
        self.commanded = true;
        CommandOutcome::Accepted
    }

    pub fn step<R: Rng + ?Sized>(&mut self, pose: &EnuPose, settled: bool, rng: &mut R) -> PilotOutput {
        let fresh = std::mem::take(&mut self.commanded);
        let mut placed = None;
        let hold = Setpoint::Hold { duration_s: 0.0 };
        if self.vehicle == VehicleType::Ugv {
            let setpoint = match self.phase {
                ManualPhase::Transit { target, .. } => {
                    if pose.horizontal_distance(&target) <= self.standoff_m {
                        self.phase = ManualPhase::Hover { at: *pose };
                        hold
                    } else {
                        Setpoint::Target(target)
                    }
                }
                ManualPhase::Landing => {
                    self.phase = ManualPhase::Landed;
                    hold
                }
                _ => hold,
            };
            return PilotOutput { setpoint, placed };
        }
        let setpoint = match self.phase {
            ManualPhase::Idle | ManualPhase::Landed => hold,
            ManualPhase::Transit { target, place } => {
                if place && pose.distance(&target) <= PLACE_TOLERANCE_M {
                    placed = Some(target);
                    self.phase = ManualPhase::Hover { at: target };
                    Setpoint::Target(target)
                } else if pose.horizontal_distance(&target) > OVER_TARGET_M {
                    let alt = self.transit_alt_m.max(target.up);
                    Setpoint::Target(EnuPose { up: alt, ..target })
                } else if settled && !fresh {
                    self.phase = ManualPhase::Hover { at: target };
                    self.hover_setpoint(target, rng)
                } else {
                    Setpoint::Target(target)
                }
            }
            ManualPhase::Circle { center, radius_m } => {
                if settled && !fresh {
                    self.phase = ManualPhase::Hover { at: *pose };
                    Setpoint::Target(*pose)
                } else {
                    Setpoint::Circle { center, radius_m, arc_deg: 360.0 }
                }
            }
            ManualPhase::Hover { at } => self.hover_setpoint(at, rng),
            ManualPhase::Landing => {
                if settled && !fresh {
                    self.phase = ManualPhase::Landed;
                }
                Setpoint::Land
            }
        };
        PilotOutput { setpoint, placed }
    }

    fn hover_setpoint<R: Rng + ?Sized>(&self, at: EnuPose, rng: &mut R) -> Setpoint {
        if self.jitter_sigma_m <= 0.0 {
            return Setpoint::Target(at);
        }
        let n = Normal::new(0.0, self.jitter_sigma_m).expect("positive sigma");
        Setpoint::Target(EnuPose { east: at.east + n.sample(rng), north: at.north + n.sample(rng), ..at })
    }
}
