//! Onboard search behaviors as explicit state machines, and area planning.
//!
//! Both machines work in the autopilot's navigation frame: setpoints are where
//! the vehicle *believes* it should be. Arrival gates use noisy GPS fixes.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vehicle::Setpoint;
use crate::world::EnuPose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorParams {
    pub cruise_alt_m: f64,
    pub search_alt_m: f64,
    pub hover_s: f64,
    pub circle_radius_m: f64,
    pub circle_arc_deg: f64,
    pub arrival_tol_m: f64,
    pub ugv_dwell_s: f64,
    pub ugv_retry_budget_s: f64,
    pub ugv_backoff_m: f64,
}

impl Default for BehaviorParams {
    fn default() -> Self {
        Self {
            cruise_alt_m: 3.5,
            search_alt_m: 1.5,
            hover_s: 15.0,
            circle_radius_m: 2.0,
            circle_arc_deg: 270.0,
            arrival_tol_m: 1.0,
            ugv_dwell_s: 15.0,
            ugv_retry_budget_s: 60.0,
            ugv_backoff_m: 3.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BehaviorError {
    #[error("behavior parameter `{0}` must be positive and finite")]
    NonPositive(&'static str),
}

impl BehaviorParams {
    /// Lower, shorter hover: 1 m search altitude and a 10 s hover.
    pub fn short_hover() -> Self {
        Self { search_alt_m: 1.0, hover_s: 10.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), BehaviorError> {
        let fields = [
            ("cruise_alt_m", self.cruise_alt_m),
            ("search_alt_m", self.search_alt_m),
            ("hover_s", self.hover_s),
            ("circle_radius_m", self.circle_radius_m),
            ("circle_arc_deg", self.circle_arc_deg),
            ("arrival_tol_m", self.arrival_tol_m),
            ("ugv_dwell_s", self.ugv_dwell_s),
            ("ugv_retry_budget_s", self.ugv_retry_budget_s),
            ("ugv_backoff_m", self.ugv_backoff_m),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(BehaviorError::NonPositive(name));
            }
        }
        Ok(())
    }
}

/// High-level commands the onboard behaviors accept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FsmCommand {
    Takeoff,
    /// Horizontal target in the navigation frame; altitude comes from the params.
    NavTo { east: f64, north: f64 },
    Land,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommandOutcome {
    Accepted,
    Rejected,
}

impl CommandOutcome {
    pub fn code(self) -> u8 {
        match self {
            CommandOutcome::Accepted => 0,
            CommandOutcome::Rejected => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BehaviorEvent {
    TakeoffComplete,
    WaypointReached,
    TagFound,
    SearchAbandoned,
    Landed,
}

/// Heartbeat codes for every onboard state.
pub mod state_code {
    pub const ON_GROUND: u8 = 0;
    pub const TAKEOFF: u8 = 1;
    pub const AWAITING_COMMAND: u8 = 2;
    pub const CRUISE: u8 = 3;
    pub const DESCEND: u8 = 4;
    pub const HOVER: u8 = 5;
    pub const CIRCLE: u8 = 6;
    pub const ASCEND: u8 = 7;
    pub const LANDING: u8 = 8;
    pub const LANDED: u8 = 9;
    pub const DRIVE: u8 = 10;
    pub const DWELL: u8 = 11;
    pub const RETRY_OUT: u8 = 12;
    pub const RETRY_RETURN: u8 = 13;
    pub const MANUAL_HOVER: u8 = 20;
    pub const MANUAL_TRANSIT: u8 = 21;

    pub fn name(code: u8) -> &'static str {
        match code {
            ON_GROUND => "on_ground",
            TAKEOFF => "takeoff",
            AWAITING_COMMAND => "awaiting_command",
            CRUISE => "cruise",
            DESCEND => "descend",
            HOVER => "hover",
            CIRCLE => "circle",
            ASCEND => "ascend",
            LANDING => "landing",
            LANDED => "landed",
            DRIVE => "drive",
            DWELL => "dwell",
            RETRY_OUT => "retry_out",
            RETRY_RETURN => "retry_return",
            MANUAL_HOVER => "manual_hover",
            MANUAL_TRANSIT => "manual_transit",
            _ => "unknown",
        }
    }
}

/// What the behavior sees each tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchInput {
    /// Autopilot's noise-free estimate (biased GPS, biased baro).
    pub nav: EnuPose,
    /// Noisy GPS fix used for arrival gates.
    pub measured: EnuPose,
    /// The vehicle achieved the previous setpoint.
    pub settled: bool,
    /// A tag not seen before in this mission was read.
    pub positive_read: bool,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutput {
    pub setpoint: Setpoint,
    pub events: Vec<BehaviorEvent>,
}

fn horizontal_gap(p: &EnuPose, east: f64, north: f64) -> f64 {
    (p.east - east).hypot(p.north - north)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum UavPhase {
    OnGround,
    Takeoff { hold: Option<(f64, f64)> },
    AwaitingCommand { hold: Option<EnuPose> },
    Cruise { east: f64, north: f64 },
    Descend { east: f64, north: f64 },
    Hover { east: f64, north: f64, elapsed_s: f64 },
    Circle { east: f64, north: f64 },
    Ascend { hold: Option<(f64, f64)> },
    Landing,
    Landed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavSearchFsm {
    pub params: BehaviorParams,
    pub phase: UavPhase,
    /// Next waypoint to fly to once the current climb finishes.
    pub pending: Option<(f64, f64)>,
    /// Set when a command switched state; the vehicle has not seen the new setpoint yet.
    #[serde(default)]
    pub commanded: bool,
}

impl UavSearchFsm {
    pub fn new(params: BehaviorParams) -> Self {
        Self { params, phase: UavPhase::OnGround, pending: None, commanded: false }
    }

    pub fn state_code(&self) -> u8 {
        use state_code::*;
        match self.phase {
            UavPhase::OnGround => ON_GROUND,
            UavPhase::Takeoff { .. } => TAKEOFF,
            UavPhase::AwaitingCommand { .. } => AWAITING_COMMAND,
            UavPhase::Cruise { .. } => CRUISE,
            UavPhase::Descend { .. } => DESCEND,
            UavPhase::Hover { .. } => HOVER,
            UavPhase::Circle { .. } => CIRCLE,
            UavPhase::Ascend { .. } => ASCEND,
            UavPhase::Landing => LANDING,
            UavPhase::Landed => LANDED,
        }
    }

    pub fn is_searching(&self) -> bool {
        matches!(self.phase, UavPhase::Descend { .. } | UavPhase::Hover { .. } | UavPhase::Circle { .. })
    }

    pub fn command(&mut self, cmd: FsmCommand) -> CommandOutcome {
        use CommandOutcome::*;
        match (cmd, self.phase) {
            (FsmCommand::Takeoff, UavPhase::OnGround | UavPhase::Landed) => {
                self.phase = UavPhase::Takeoff { hold: None };
                Accepted
            }
            (FsmCommand::Takeoff, UavPhase::Landing) => Rejected,
            (FsmCommand::Takeoff, _) => Accepted,
            (FsmCommand::NavTo { .. }, UavPhase::OnGround | UavPhase::Landing | UavPhase::Landed) => Rejected,
            (FsmCommand::NavTo { east, north }, UavPhase::Takeoff { .. } | UavPhase::Ascend { .. }) => {
                self.pending = Some((east, north));
                Accepted
            }
            (FsmCommand::NavTo { east, north }, UavPhase::AwaitingCommand { .. } | UavPhase::Cruise { .. }) => {
                self.phase = UavPhase::Cruise { east, north };
                Accepted
            }
            (FsmCommand::NavTo { east, north }, _) => {
                self.pending = Some((east, north));
                self.phase = UavPhase::Ascend { hold: None };
                Accepted
            }
            (FsmCommand::Land, UavPhase::OnGround | UavPhase::Landed) => Accepted,
            (FsmCommand::Land, _) => {
                self.pending = None;
                self.phase = UavPhase::Landing;
                self.commanded = true;
                Accepted
            }
        }
    }

    /// Advance one tick. Transitions resolve within the tick so the returned
    /// setpoint always belongs to the state the machine ends in.
    pub fn step(&mut self, input: &SearchInput) -> SearchOutput {
        let p = self.params;
        let mut events = Vec::new();
        let mut fresh = std::mem::take(&mut self.commanded);
        loop {
            let next = match self.phase {
                UavPhase::OnGround | UavPhase::Landed => None,
                UavPhase::Takeoff { hold: None } => Some(UavPhase::Takeoff { hold: Some((input.nav.east, input.nav.north)) }),
                UavPhase::Takeoff { hold: Some(_) } if input.settled && !fresh => {
                    events.push(BehaviorEvent::TakeoffComplete);
                    Some(self.after_climb())
                }
                UavPhase::Takeoff { .. } => None,
                UavPhase::AwaitingCommand { hold: None } => {
                    Some(UavPhase::AwaitingCommand { hold: Some(EnuPose { up: p.cruise_alt_m, ..input.nav }) })
                }
                UavPhase::AwaitingCommand { .. } => None,
                UavPhase::Cruise { east, north } if horizontal_gap(&input.measured, east, north) <= p.arrival_tol_m => {
                    events.push(BehaviorEvent::WaypointReached);
                    Some(UavPhase::Descend { east, north })
                }
                UavPhase::Cruise { .. } => None,
                UavPhase::Descend { .. } | UavPhase::Hover { .. } | UavPhase::Circle { .. } if input.positive_read => {
                    events.push(BehaviorEvent::TagFound);
                    Some(UavPhase::Ascend { hold: None })
                }
                UavPhase::Descend { east, north } if input.settled && !fresh => {
                    Some(UavPhase::Hover { east, north, elapsed_s: 0.0 })
                }
                UavPhase::Descend { .. } => None,
                UavPhase::Hover { east, north, elapsed_s } if elapsed_s >= p.hover_s - 1e-9 => {
                    Some(UavPhase::Circle { east, north })
                }
                UavPhase::Hover { .. } => None,
                UavPhase::Circle { .. } if input.settled && !fresh => {
                    events.push(BehaviorEvent::SearchAbandoned);
                    Some(UavPhase::Ascend { hold: None })
                }
                UavPhase::Circle { .. } => None,
                UavPhase::Ascend { hold: None } => Some(UavPhase::Ascend { hold: Some((input.nav.east, input.nav.north)) }),
                UavPhase::Ascend { .. } if input.settled && !fresh => Some(self.after_climb()),
                UavPhase::Ascend { .. } => None,
                UavPhase::Landing if input.settled && !fresh => {
                    events.push(BehaviorEvent::Landed);
                    Some(UavPhase::Landed)
                }
                UavPhase::Landing => None,
            };
            match next {
                Some(phase) => {
                    fresh = true;
                    self.phase = phase;
                }
                None => break,
            }
        }
        let setpoint = match &mut self.phase {
            UavPhase::OnGround | UavPhase::Landed => Setpoint::Hold { duration_s: input.dt },
            UavPhase::Takeoff { hold } => {
                let (e, n) = hold.expect("captured above");
                Setpoint::Target(EnuPose::at(e, n, p.cruise_alt_m))
            }
            UavPhase::AwaitingCommand { hold } => Setpoint::Target(hold.expect("captured above")),
            UavPhase::Cruise { east, north } => Setpoint::Target(EnuPose::at(*east, *north, p.cruise_alt_m)),
            UavPhase::Descend { east, north } => Setpoint::Target(EnuPose::at(*east, *north, p.search_alt_m)),
            UavPhase::Hover { east, north, elapsed_s } => {
                *elapsed_s += input.dt;
                Setpoint::Target(EnuPose::at(*east, *north, p.search_alt_m))
            }
            UavPhase::Circle { east, north } => Setpoint::Circle {
                center: EnuPose::at(*east, *north, p.search_alt_m),
                radius_m: p.circle_radius_m,
                arc_deg: p.circle_arc_deg,
            },
            UavPhase::Ascend { hold } => {
                let (e, n) = hold.expect("captured above");
                Setpoint::Target(EnuPose::at(e, n, p.cruise_alt_m))
            }
            UavPhase::Landing => Setpoint::Land,
        };
        SearchOutput { setpoint, events }
    }

    fn after_climb(&mut self) -> UavPhase {
        match self.pending.take() {
            Some((east, north)) => UavPhase::Cruise { east, north },
            None => UavPhase::AwaitingCommand { hold: None },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum UgvPhase {
    Parked,
    AwaitingCommand,
    Drive { east: f64, north: f64 },
    Dwell { east: f64, north: f64, elapsed_s: f64 },
    RetryOut { east: f64, north: f64, out_east: f64, out_north: f64, retry_s: f64 },
    RetryReturn { east: f64, north: f64, retry_s: f64 },
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UgvSearchFsm {
    pub params: BehaviorParams,
    pub phase: UgvPhase,
}

impl UgvSearchFsm {
    pub fn new(params: BehaviorParams) -> Self {
        Self { params, phase: UgvPhase::Parked }
    }

    pub fn state_code(&self) -> u8 {
        use state_code::*;
        match self.phase {
            UgvPhase::Parked => ON_GROUND,
            UgvPhase::AwaitingCommand => AWAITING_COMMAND,
            UgvPhase::Drive { .. } => DRIVE,
            UgvPhase::Dwell { .. } => DWELL,
            UgvPhase::RetryOut { .. } => RETRY_OUT,
            UgvPhase::RetryReturn { .. } => RETRY_RETURN,
            UgvPhase::Stopped => LANDED,
        }
    }

    pub fn is_searching(&self) -> bool {
        matches!(self.phase, UgvPhase::Dwell { .. } | UgvPhase::RetryOut { .. } | UgvPhase::RetryReturn { .. })
    }

    /// A car has nothing to take off from; `Takeoff` is a no-op and `Land` stops it.
    pub fn command(&mut self, cmd: FsmCommand) -> CommandOutcome {
        match (cmd, self.phase) {
            (FsmCommand::Takeoff, _) => CommandOutcome::Accepted,
            (FsmCommand::NavTo { .. }, UgvPhase::Stopped) => CommandOutcome::Rejected,
            (FsmCommand::NavTo { east, north }, _) => {
                self.phase = UgvPhase::Drive { east, north };
                CommandOutcome::Accepted
            }
            (FsmCommand::Land, _) => {
                self.phase = UgvPhase::Stopped;
                CommandOutcome::Accepted
            }
        }
    }

    fn backoff<R: Rng + ?Sized>(&self, east: f64, north: f64, retry_s: f64, rng: &mut R) -> UgvPhase {
        let a = rng.random_range(0.0..TAU);
        UgvPhase::RetryOut {
            east,
            north,
            out_east: east + self.params.ugv_backoff_m * a.cos(),
            out_north: north + self.params.ugv_backoff_m * a.sin(),
            retry_s,
        }
    }

    pub fn step<R: Rng + ?Sized>(&mut self, input: &SearchInput, rng: &mut R) -> SearchOutput {
        let p = self.params;
        let mut events = Vec::new();
        let mut fresh = false;
        loop {
            let searching = matches!(
                self.phase,
                UgvPhase::Drive { .. } | UgvPhase::Dwell { .. } | UgvPhase::RetryOut { .. } | UgvPhase::RetryReturn { .. }
            );
            let next = match self.phase {
                _ if searching && input.positive_read => {
                    events.push(BehaviorEvent::TagFound);
                    Some(UgvPhase::AwaitingCommand)
                }
                UgvPhase::Drive { east, north } if horizontal_gap(&input.measured, east, north) <= p.arrival_tol_m => {
                    events.push(BehaviorEvent::WaypointReached);
                    Some(UgvPhase::Dwell { east, north, elapsed_s: 0.0 })
                }
                UgvPhase::Dwell { east, north, elapsed_s } if elapsed_s >= p.ugv_dwell_s - 1e-9 => {
                    Some(self.backoff(east, north, 0.0, rng))
                }
                UgvPhase::RetryOut { retry_s, .. } | UgvPhase::RetryReturn { retry_s, .. }
                    if retry_s >= p.ugv_retry_budget_s - 1e-9 =>
                {
                    events.push(BehaviorEvent::SearchAbandoned);
                    Some(UgvPhase::AwaitingCommand)
                }
                UgvPhase::RetryOut { east, north, retry_s, .. } if input.settled && !fresh => {
                    Some(UgvPhase::RetryReturn { east, north, retry_s })
                }
                UgvPhase::RetryReturn { east, north, retry_s }
                    if !fresh && horizontal_gap(&input.measured, east, north) <= p.arrival_tol_m =>
                {
                    Some(self.backoff(east, north, retry_s, rng))
                }
                _ => None,
            };
            match next {
                Some(phase) => {
                    fresh = true;
                    self.phase = phase;
                }
                None => break,
            }
        }
        let hold = Setpoint::Hold { duration_s: input.dt };
        let setpoint = match &mut self.phase {
            UgvPhase::Parked | UgvPhase::AwaitingCommand | UgvPhase::Stopped => hold,
            UgvPhase::Drive { east, north } => Setpoint::Target(EnuPose::at(*east, *north, 0.0)),
            UgvPhase::Dwell { elapsed_s, .. } => {
                *elapsed_s += input.dt;
                hold
            }
            UgvPhase::RetryOut { out_east, out_north, retry_s, .. } => {
                *retry_s += input.dt;
                Setpoint::Target(EnuPose::at(*out_east, *out_north, 0.0))
            }
            UgvPhase::RetryReturn { east, north, retry_s } => {
                *retry_s += input.dt;
                Setpoint::Target(EnuPose::at(*east, *north, 0.0))
            }
        };
        SearchOutput { setpoint, events }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon has zero area")]
    ZeroArea,
    #[error("spacing must be positive and finite, got {0}")]
    BadSpacing(f64),
    #[error("polygon has a non-finite vertex")]
    NonFinite,
    #[error("no grid point falls inside the polygon")]
    Empty,
}

fn signed_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (x0, y0) = poly[i];
            let (x1, y1) = poly[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum::<f64>()
        / 2.0
}

fn centroid(poly: &[(f64, f64)], area: f64) -> (f64, f64) {
    let n = poly.len();
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % n];
        let c = x0 * y1 - x1 * y0;
        cx += (x0 + x1) * c;
        cy += (y0 + y1) * c;
    }
    (cx / (6.0 * area), cy / (6.0 * area))
}

fn on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> bool {
    let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    let len = (b.0 - a.0).hypot(b.1 - a.1);
    cross.abs() <= 1e-9 * len.max(1.0)
        && p.0 >= a.0.min(b.0) - 1e-9
        && p.0 <= a.0.max(b.0) + 1e-9
        && p.1 >= a.1.min(b.1) - 1e-9
        && p.1 <= a.1.max(b.1) + 1e-9
}

/// Even-odd test that counts the boundary as inside.
pub fn point_in_polygon(p: (f64, f64), poly: &[(f64, f64)]) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if on_segment(p, a, b) {
            return true;
        }
        if (a.1 > p.1) != (b.1 > p.1) {
            let x = a.0 + (p.1 - a.1) * (b.0 - a.0) / (b.1 - a.1);
            if p.0 < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Serpentine grid over an (east, north) polygon.
///
/// Each axis gets `floor(extent / spacing) + 1` points centered in the bounding
/// box; points outside the polygon are dropped. Rows run south to north,
/// alternating west-to-east and east-to-west. When the grid collapses to one
/// point the polygon centroid is returned instead.
pub fn waypoints_from_area(polygon: &[(f64, f64)], spacing_m: f64) -> Result<Vec<(f64, f64)>, PlanError> {
    if polygon.len() < 3 {
        return Err(PlanError::TooFewVertices(polygon.len()));
    }
    if polygon.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(PlanError::NonFinite);
    }
    if !(spacing_m.is_finite() && spacing_m > 0.0) {
        return Err(PlanError::BadSpacing(spacing_m));
    }
    let area = signed_area(polygon);
    if area.abs() < 1e-9 {
        return Err(PlanError::ZeroArea);
    }
    let (min_e, max_e) = polygon.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let (min_n, max_n) = polygon.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    // Tiny slack so extents that are exact multiples of the spacing keep their last point.
    let count = |extent: f64| (extent / spacing_m + 1e-9).floor() as usize + 1;
    let (ne, nn) = (count(max_e - min_e), count(max_n - min_n));
    if ne == 1 && nn == 1 {
        return Ok(vec![centroid(polygon, area)]);
    }
    let axis = |lo: f64, hi: f64, n: usize| {
        let start = lo + ((hi - lo) - (n - 1) as f64 * spacing_m) / 2.0;
        (0..n).map(move |i| start + i as f64 * spacing_m)
    };
    let mut out = Vec::new();
    for (row, north) in axis(min_n, max_n, nn).enumerate() {
        let mut line: Vec<(f64, f64)> =
            axis(min_e, max_e, ne).map(|east| (east, north)).filter(|&p| point_in_polygon(p, polygon)).collect();
        if row % 2 == 1 {
            line.reverse();
        }
        out.extend(line);
    }
    if out.is_empty() {
        return Err(PlanError::Empty);
    }
    Ok(out)
}
