//! Ground-control HTTP service.
//!
//! | Method | Path | Body | Reply |
//! |---|---|---|---|
//! | POST | `/missions` | `CreateMission`, or `{"preset": ..}` / `{"scenario": ..}` | 201, `MissionRecord` |
//! | GET | `/missions/{id}` | | `MissionView` |
//! | POST | `/missions/{id}/start` | optional [`StartRequest`] | 202, `MissionRecord` |
//! | POST | `/missions/{id}/command` | [`CommandRequest`] | 202, `{"seq": n}` |
//! | GET | `/missions/{id}/events?from_seq=&follow=` | | NDJSON `EventRecord` lines |
//!
//! Starting a mission attaches a simulated vehicle flying the given scenario.

use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fieldbot_core::mission_control::{
    CreateMission, MissionControl, MissionId, MissionMode, MissionRecord, MissionStatus,
    MissionView,
};
use fieldbot_core::simrunner::{apply_preset, mission_request, RunMode, ScenarioConfig};
use fieldbot_core::telemetry::{CommandKind, Frame, Message};
use fieldbot_core::world::GeoPoint;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

pub mod driver;
pub mod error;

pub use driver::SimLink;
pub use error::ApiError;

use driver::SharedLink;

struct Shared {
    control: Mutex<MissionControl>,
    scenarios: Mutex<HashMap<MissionId, ScenarioConfig>>,
    links: Mutex<HashMap<MissionId, SharedLink>>,
    /// Bumped whenever any mission log grows.
    version: watch::Sender<u64>,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(control: MissionControl) -> Self {
        Self(Arc::new(Shared {
            control: Mutex::new(control),
            scenarios: Mutex::default(),
            links: Mutex::default(),
            version: watch::channel(0).0,
        }))
    }

    pub fn control(&self) -> MutexGuard<'_, MissionControl> {
        self.0.control.lock().unwrap()
    }

    fn bump(&self) {
        self.0.version.send_modify(|v| *v += 1);
    }

    fn link(&self, id: MissionId) -> Option<SharedLink> {
        self.0.links.lock().unwrap().get(&id).cloned()
    }

    fn detach(&self, id: MissionId) {
        self.0.links.lock().unwrap().remove(&id);
        self.bump();
    }

    /// True while a simulated vehicle is flying the mission.
    pub fn is_driving(&self, id: MissionId) -> bool {
        self.link(id).is_some()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/missions", post(create_mission))
        .route("/missions/{id}", get(get_mission))
        .route("/missions/{id}/start", post(start_mission))
        .route("/missions/{id}/command", post(command))
        .route("/missions/{id}/events", get(events))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FromScenario {
    preset: Option<String>,
    scenario: Option<ScenarioConfig>,
}

impl FromScenario {
    fn resolve(self) -> Result<Option<ScenarioConfig>, ApiError> {
        match (self.scenario, self.preset) {
            (Some(_), Some(_)) => Err(ApiError::invalid(
                "give either a preset or a scenario, not both",
            )),
            (Some(cfg), None) => {
                cfg.validate()?;
                Ok(Some(cfg))
            }
            (None, Some(name)) => Ok(Some(apply_preset(&name)?)),
            (None, None) => Ok(None),
        }
    }
}

fn parse<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("request body: {e}")))
}

async fn create_mission(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let value: serde_json::Value = parse(&body)?;
    let scenario_keys = value.get("preset").is_some() || value.get("scenario").is_some();
    let (req, scenario) = if scenario_keys {
        let cfg = parse::<FromScenario>(&body)?
            .resolve()?
            .expect("key present");
        (mission_request(&cfg)?, Some(cfg))
    } else {
        (parse::<CreateMission>(&body)?, None)
    };
    let record = state.control().create_mission(&req)?;
    if let Some(cfg) = scenario {
        state.0.scenarios.lock().unwrap().insert(record.id, cfg);
    }
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn get_mission(
    State(state): State<AppState>,
    Path(id): Path<MissionId>,
) -> Result<Json<MissionView>, ApiError> {
    Ok(Json(state.control().query_mission(id)?))
}

/// Body of `POST /missions/{id}/start`. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartRequest {
    pub preset: Option<String>,
    pub scenario: Option<ScenarioConfig>,
    pub seed: Option<u64>,
    /// Simulated seconds per wall second; 0 runs unthrottled. Default 1.
    pub speed: Option<f64>,
}

async fn start_mission(
    State(state): State<AppState>,
    Path(id): Path<MissionId>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: StartRequest = if body.iter().all(u8::is_ascii_whitespace) {
        StartRequest::default()
    } else {
        parse(&body)?
    };
    let speed = req.speed.unwrap_or(1.0);
    if !speed.is_finite() || speed < 0.0 {
        return Err(ApiError::invalid("speed must be finite and >= 0"));
    }
    let record = state.control().query_mission(id)?.record;
    let given = FromScenario {
        preset: req.preset,
        scenario: req.scenario,
    }
    .resolve()?;
    let mut cfg = match given.or_else(|| state.0.scenarios.lock().unwrap().get(&id).cloned()) {
        Some(cfg) => cfg,
        None => ScenarioConfig {
            vehicle: record.vehicle_type,
            origin: record.origin,
            ..ScenarioConfig::default()
        },
    };
    if cfg.vehicle != record.vehicle_type {
        return Err(ApiError::invalid(format!(
            "scenario vehicle {:?} does not match mission vehicle {:?}",
            cfg.vehicle, record.vehicle_type
        )));
    }
    cfg.origin = record.origin;
    cfg.mode = match record.mode {
        MissionMode::Autonomous => RunMode::Autonomous,
        MissionMode::Manual => RunMode::ManualScript,
    };
    let seed = req.seed.unwrap_or(cfg.seed);
    let record = start_with_link(&state, id)?;
    let link = state.link(id).expect("link just attached");
    tokio::spawn(driver::drive(state.clone(), id, cfg, seed, speed, link));
    Ok((StatusCode::ACCEPTED, Json(record)).into_response())
}

fn start_with_link(state: &AppState, id: MissionId) -> Result<MissionRecord, ApiError> {
    let record = state.control().start_mission(id)?;
    state
        .0
        .links
        .lock()
        .unwrap()
        .insert(id, SharedLink::default());
    state.bump();
    Ok(record)
}

/// Body of `POST /missions/{id}/command`.
#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CommandRequest {
    pub cmd: CommandKind,
    #[serde(default)]
    pub lat: f64,
    #[serde(default)]
    pub lon: f64,
    #[serde(default)]
    pub alt_m: f64,
    /// CIRCLE radius in centimetres.
    #[serde(default)]
    pub param_cm: u16,
}

impl CommandRequest {
    pub fn message(&self) -> Result<Message, ApiError> {
        let alt_mm = (self.alt_m * 1000.0).round();
        let point = GeoPoint {
            lat: self.lat,
            lon: self.lon,
            alt: 0.0,
        };
        if !point.lat.is_finite()
            || !point.lon.is_finite()
            || point.lat.abs() > 90.0
            || point.lon.abs() > 180.0
        {
            return Err(ApiError::invalid("lat/lon out of range"));
        }
        if !alt_mm.is_finite() || alt_mm.abs() > f64::from(i32::MAX) {
            return Err(ApiError::invalid("alt_m out of range"));
        }
        Ok(Message::Command {
            cmd: self.cmd,
            lat_e7: point.lat_e7(),
            lon_e7: point.lon_e7(),
            alt_mm: alt_mm as i32,
            param_cm: self.param_cm,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CommandAccepted {
    pub seq: u32,
}

async fn command(
    State(state): State<AppState>,
    Path(id): Path<MissionId>,
    Json(req): Json<CommandRequest>,
) -> Result<Response, ApiError> {
    let msg = req.message()?;
    let link = state.link(id);
    let time_ms = link.as_ref().map_or(0, |l| l.lock().unwrap().time_ms);
    let seq = state.control().manual_command(id, time_ms, msg)?;
    if let Some(l) = link {
        l.lock().unwrap().uplink.push(Frame { seq, msg });
    }
    state.bump();
    Ok((StatusCode::ACCEPTED, Json(CommandAccepted { seq })).into_response())
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    from_seq: u64,
    /// Keep the stream open until the mission ends. Default true.
    follow: Option<bool>,
}

struct Cursor {
    state: AppState,
    id: MissionId,
    next: u64,
    follow: bool,
    rx: watch::Receiver<u64>,
}

impl Cursor {
    /// New lines, and whether nothing more can arrive.
    fn poll(&mut self) -> Result<(String, bool), ApiError> {
        self.rx.borrow_and_update();
        let (events, status) = {
            let control = self.state.control();
            (
                control.events_from(self.id, self.next)?,
                control.get(self.id)?.status(),
            )
        };
        self.next += events.len() as u64;
        let over = matches!(status, MissionStatus::Done | MissionStatus::Aborted)
            && !self.state.is_driving(self.id);
        Ok((events.iter().map(|e| e.to_ndjson_line()).collect(), over))
    }
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<MissionId>,
    Query(q): Query<EventsQuery>,
) -> Result<Response, ApiError> {
    state.control().get(id)?;
    let rx = state.0.version.subscribe();
    let cursor = Cursor {
        state,
        id,
        next: q.from_seq,
        follow: q.follow.unwrap_or(true),
        rx,
    };
    let stream = futures::stream::unfold(Some(cursor), |cursor| async move {
        let mut c = cursor?;
        loop {
            let (lines, over) = c.poll().ok()?;
            if !lines.is_empty() {
                let done = over || !c.follow;
                return Some((Ok::<_, Infallible>(lines), (!done).then_some(c)));
            }
            if over || !c.follow || c.rx.changed().await.is_err() {
                return None;
            }
        }
    });
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        Body::from_stream(stream),
    )
        .into_response())
}
