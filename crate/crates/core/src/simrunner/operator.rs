use crate::behavior::state_code;
use crate::tag_model::Epc;
use crate::telemetry::{CommandKind, Frame, Message};
use crate::world::{geodetic_from_enu, EnuPose, GeoPoint};

use super::report::ScriptOutcome;
use super::scenario::ScriptStep;

// Give up on a step whose vehicle never reports arriving.
const ARRIVAL_TIMEOUT_MS: u64 = 300_000;
const RESEND_MS: u64 = crate::mission_control::RESEND_AFTER_MS;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pending {
    seq: u32,
    msg: Message,
    sent_ms: u64,
    acked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct StepProgress {
    started: bool,
    issued_ms: u64,
    pending: Option<Pending>,
    arrived_ms: Option<u64>,
    read_ms: Option<u64>,
    wait_until: Option<u64>,
    failed: bool,
}

/// Plays an operator script against the ground station: sends one command at
/// a time, watches telemetry, and moves on when the step is satisfied.
#[derive(Debug, Clone)]
pub struct ScriptOperator {
    steps: Vec<ScriptStep>,
    origin: GeoPoint,
    index: usize,
    progress: StepProgress,
    landing: bool,
    landed: bool,
    pub outcomes: Vec<ScriptOutcome>,
}

impl ScriptOperator {
    pub fn new(steps: Vec<ScriptStep>, origin: GeoPoint) -> Self {
        Self {
            steps,
            origin,
            index: 0,
            progress: StepProgress::default(),
            landing: false,
            landed: false,
            outcomes: Vec::new(),
        }
    }

    pub fn finished(&self) -> bool {
        self.landed
    }

    fn command(&self, cmd: CommandKind, east: f64, north: f64, alt: f64) -> Message {
        let p = geodetic_from_enu(self.origin, &EnuPose::at(east, north, alt)).unwrap_or(self.origin);
        Message::Command { cmd, lat_e7: p.lat_e7(), lon_e7: p.lon_e7(), alt_mm: p.alt_mm(), param_cm: 0 }
    }

    fn land_command(&self) -> Message {
        self.command(CommandKind::Land, 0.0, 0.0, 0.0)
    }

    /// React to one frame the ground station received.
    pub fn observe(&mut self, time_ms: u64, frame: &Frame) {
        let p = &mut self.progress;
        match frame.msg {
            Message::Ack { seq_acked, result } => {
                if let Some(pending) = p.pending.as_mut() {
                    if pending.seq == seq_acked && !pending.acked {
                        pending.acked = true;
                        p.failed |= result != 0;
                    }
                }
            }
            Message::Heartbeat { fsm_state, .. } => {
                if fsm_state == state_code::LANDED && self.landing {
                    self.landed = true;
                }
                let acked = p.pending.is_some_and(|x| x.acked);
                if acked && p.arrived_ms.is_none() && fsm_state == state_code::MANUAL_HOVER {
                    p.arrived_ms = Some(time_ms);
                }
            }
            Message::TagRead { epc, .. } => {
                if let Some(ScriptStep::HoverOver { expect, .. }) = self.steps.get(self.index) {
                    if p.started && p.read_ms.is_none() && expect.is_none_or(|e: Epc| e == epc) {
                        p.read_ms = Some(time_ms);
                    }
                }
            }
            _ => {}
        }
    }

    /// Next command to send, if any. The caller reports the sequence number it
    /// went out with through [`ScriptOperator::sent`].
    pub fn poll(&mut self, time_ms: u64) -> Option<Message> {
        loop {
            if self.landing {
                return self.resend_due(time_ms);
            }
            let Some(step) = self.steps.get(self.index).cloned() else {
                self.landing = true;
                self.progress = StepProgress { started: true, issued_ms: time_ms, ..StepProgress::default() };
                return Some(self.land_command());
            };
            if !self.progress.started {
                self.progress = StepProgress { started: true, issued_ms: time_ms, ..StepProgress::default() };
                let msg = match step {
                    ScriptStep::HoverOver { east, north, alt_m, .. } => {
                        self.command(CommandKind::HoverAt, east, north, alt_m)
                    }
                    ScriptStep::Goto { east, north, alt_m } => self.command(CommandKind::NavTo, east, north, alt_m),
                    ScriptStep::PlaceTag { east, north, alt_m } => {
                        self.command(CommandKind::PlaceTag, east, north, alt_m)
                    }
                    ScriptStep::Wait { seconds } => {
                        self.progress.wait_until = Some(time_ms + (seconds * 1000.0).round() as u64);
                        continue;
                    }
                    ScriptStep::Land => {
                        self.landing = true;
                        self.land_command()
                    }
                };
                return Some(msg);
            }
            if !self.step_done(&step, time_ms) {
                return self.resend_due(time_ms);
            }
            self.index += 1;
            self.progress = StepProgress::default();
        }
    }

    pub fn sent(&mut self, seq: u32, msg: Message, time_ms: u64) {
        self.progress.pending = Some(Pending { seq, msg, sent_ms: time_ms, acked: false });
    }

    fn resend_due(&self, time_ms: u64) -> Option<Message> {
        let p = self.progress.pending?;
        (!p.acked && time_ms.saturating_sub(p.sent_ms) >= RESEND_MS).then_some(p.msg)
    }

    fn step_done(&mut self, step: &ScriptStep, time_ms: u64) -> bool {
        let p = self.progress;
        let timed_out = p.arrived_ms.is_none() && time_ms.saturating_sub(p.issued_ms) >= ARRIVAL_TIMEOUT_MS;
        match *step {
            ScriptStep::HoverOver { max_wait_s, expect, .. } => {
                let waited_out =
                    p.arrived_ms.is_some_and(|a| time_ms.saturating_sub(a) as f64 >= max_wait_s * 1000.0);
                let done = p.read_ms.is_some() || waited_out || timed_out || p.failed;
                if done {
                    self.outcomes.push(ScriptOutcome {
                        step: self.index,
                        expect,
                        issued_ms: p.issued_ms,
                        hover_start_ms: p.arrived_ms,
                        read_ms: p.read_ms,
                        success: p.read_ms.is_some(),
                    });
                }
                done
            }
            ScriptStep::Goto { .. } | ScriptStep::PlaceTag { .. } => p.arrived_ms.is_some() || timed_out || p.failed,
            ScriptStep::Wait { .. } => p.wait_until.is_some_and(|u| time_ms >= u),
            ScriptStep::Land => self.landed,
        }
    }
}
