use std::sync::{Arc, Mutex};
use std::time::Duration;

use fieldbot_core::mission_control::{MissionId, MissionStatus};
use fieldbot_core::simrunner::{stream, stream_rng, ScenarioConfig, VehicleSim};
use fieldbot_core::telemetry::{encode_frame, lossy_channel, Frame};

use crate::AppState;

/// Radio between the service and one simulated vehicle.
#[derive(Debug, Default)]
pub struct SimLink {
    /// Simulated clock of the vehicle.
    pub time_ms: u64,
    pub uplink: Vec<Frame>,
}

pub type SharedLink = Arc<Mutex<SimLink>>;

/// Ticks to run between yields when unthrottled.
const BATCH: u64 = 50;

/// Fly a mission with a simulated vehicle until it finishes or times out.
/// `speed` is simulated seconds per wall second; 0 runs flat out.
pub async fn drive(
    state: AppState,
    id: MissionId,
    cfg: ScenarioConfig,
    seed: u64,
    speed: f64,
    link: SharedLink,
) {
    let mut vehicle = VehicleSim::new(&cfg, seed);
    let mut rng_up = stream_rng(seed, stream::UPLINK);
    let mut rng_down = stream_rng(seed, stream::DOWNLINK);
    let max_ticks = (cfg.max_duration_s / cfg.dt_s).ceil() as u64;
    let mut pace = (speed > 0.0).then(|| {
        let mut iv = tokio::time::interval(Duration::from_secs_f64(cfg.dt_s / speed));
        iv.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        iv
    });

    for k in 0..=max_ticks {
        let time_ms = (k as f64 * cfg.dt_s * 1000.0).round() as u64;
        let sent = {
            let mut l = link.lock().unwrap();
            l.time_ms = time_ms;
            std::mem::take(&mut l.uplink)
        };
        let down = vehicle.tick(k, &lossy_channel(sent, cfg.uplink_drop_prob, &mut rng_up));
        let (replies, status) = {
            let mut control = state.control();
            let mut replies = Vec::new();
            for f in lossy_channel(down, cfg.downlink_drop_prob, &mut rng_down) {
                let bytes = encode_frame(&f.msg, f.seq).expect("vehicle frames encode");
                match control.record_telemetry(id, time_ms, &bytes) {
                    Ok(cmds) => {
                        replies.extend(cmds.into_iter().map(|(seq, msg)| Frame { seq, msg }))
                    }
                    Err(_) => break,
                }
            }
            (
                replies,
                control
                    .get(id)
                    .map(|m| m.status())
                    .unwrap_or(MissionStatus::Aborted),
            )
        };
        link.lock().unwrap().uplink.extend(replies);
        state.bump();
        if status != MissionStatus::Running {
            break;
        }
        if k == max_ticks {
            let _ = state.control().abort_mission(id);
            state.bump();
        }
        match pace.as_mut() {
            Some(iv) => {
                iv.tick().await;
            }
            None if k % BATCH == 0 => tokio::task::yield_now().await,
            None => {}
        }
    }
    state.detach(id);
}
