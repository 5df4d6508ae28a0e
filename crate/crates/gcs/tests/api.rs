use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::response::Response;
use fieldbot_core::mission_control::{
    EventRecord, MissionControl, MissionRecord, MissionStatus, MissionView,
};
use fieldbot_core::simrunner::apply_preset;
use fieldbot_core::telemetry::Message;
use fieldbot_core::world::{geodetic_from_enu, EnuPose, GeoPoint};
use fieldbot_gcs::{router, AppState, CommandAccepted};
use futures::StreamExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn send(state: &AppState, method: &str, uri: &str, body: Option<Value>) -> Response {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    };
    router(state.clone()).oneshot(req.unwrap()).await.unwrap()
}

async fn json_of<T: serde::de::DeserializeOwned>(res: Response) -> T {
    serde_json::from_slice(&to_bytes(res.into_body(), usize::MAX).await.unwrap()).unwrap()
}

fn lines(bytes: &[u8]) -> Vec<EventRecord> {
    std::str::from_utf8(bytes)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn fresh() -> AppState {
    AppState::new(MissionControl::new())
}

fn explicit_plan() -> Value {
    json!({
        "vehicle_type": "uav",
        "plan": {"waypoints": [
            {"point": {"lat": 42.36, "lon": -71.09, "alt": 0.0}},
            {"point": {"lat": 42.3601, "lon": -71.09, "alt": 0.0}}
        ]}
    })
}

#[tokio::test]
async fn create_and_query() {
    let s = fresh();
    let res = send(&s, "POST", "/missions", Some(explicit_plan())).await;
    assert_eq!(res.status(), StatusCode::CREATED);
    let rec: MissionRecord = json_of(res).await;
    assert_eq!(rec.waypoints.len(), 2);

    let res = send(&s, "GET", &format!("/missions/{}", rec.id), None).await;
    assert_eq!(res.status(), StatusCode::OK);
    let view: MissionView = json_of(res).await;
    assert_eq!(view.record.status, MissionStatus::Planned);
    assert!(view.path.is_empty() && view.observations.is_empty());
}

#[tokio::test]
async fn area_request_expands_to_grid() {
    let corner = |e, n| {
        geodetic_from_enu(
            GeoPoint {
                lat: 42.0,
                lon: -71.0,
                alt: 0.0,
            },
            &EnuPose::at(e, n, 0.0),
        )
        .unwrap()
    };
    let polygon: Vec<_> = [(0.0, 0.0), (40.0, 0.0), (40.0, 40.0), (0.0, 40.0)]
        .map(|(e, n)| corner(e, n))
        .into();
    let body =
        json!({"vehicle_type": "ugv", "plan": {"area": {"polygon": polygon, "spacing_m": 10.0}}});
    let rec: MissionRecord = json_of(send(&fresh(), "POST", "/missions", Some(body)).await).await;
    assert_eq!(rec.waypoints.len(), 25);
}

#[tokio::test]
async fn bad_requests() {
    let s = fresh();
    let empty = json!({"vehicle_type": "uav", "plan": {"waypoints": []}});
    assert_eq!(
        send(&s, "POST", "/missions", Some(empty)).await.status(),
        StatusCode::UNPROCESSABLE_ENTITY
    );
    assert_eq!(
        send(&s, "POST", "/missions", Some(json!({"plan": 3})))
            .await
            .status(),
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let unknown = json!({"preset": "moon_base"});
    let res = send(&s, "POST", "/missions", Some(unknown)).await;
    assert_eq!(res.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let err: Value = json_of(res).await;
    assert!(err["error"].as_str().unwrap().contains("uav_id_field"));

    assert_eq!(
        send(&s, "GET", "/missions/42", None).await.status(),
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        send(&s, "GET", "/missions/42/events", None).await.status(),
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        send(&s, "POST", "/missions/42/start", None).await.status(),
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn autonomous_run_streams_every_frame() {
    let s = fresh();
    let rec: MissionRecord = json_of(
        send(
            &s,
            "POST",
            "/missions",
            Some(json!({"preset": "ugv_id_field"})),
        )
        .await,
    )
    .await;
    let res = send(
        &s,
        "POST",
        &format!("/missions/{}/start", rec.id),
        Some(json!({"seed": 3, "speed": 0})),
    )
    .await;
    assert_eq!(res.status(), StatusCode::ACCEPTED);
    let again = send(&s, "POST", &format!("/missions/{}/start", rec.id), None).await;
    assert_eq!(again.status(), StatusCode::CONFLICT);

    let res = send(&s, "GET", &format!("/missions/{}/events", rec.id), None).await;
    assert_eq!(res.headers()[header::CONTENT_TYPE], "application/x-ndjson");
    let body = tokio::time::timeout(
        Duration::from_secs(60),
        to_bytes(res.into_body(), usize::MAX),
    )
    .await
    .expect("stream closes when the mission ends")
    .unwrap();
    let events = lines(&body);
    assert!(events
        .iter()
        .enumerate()
        .all(|(i, e)| e.index == i as u64 && e.mission_id == rec.id));
    assert!(events.windows(2).all(|w| w[0].time_ms <= w[1].time_ms));
    let reads = events
        .iter()
        .filter(|e| matches!(e.message, Message::TagRead { .. }))
        .count();
    assert!(reads >= 3);

    let view: MissionView =
        json_of(send(&s, "GET", &format!("/missions/{}", rec.id), None).await).await;
    assert_eq!(view.record.status, MissionStatus::Done);
    let found: std::collections::BTreeSet<_> = view.observations.iter().map(|o| o.epc).collect();
    assert_eq!(found.len(), 3);
    assert_eq!(view.observations.len(), reads);
    assert_eq!(view.event_count, events.len());

    let tail = send(
        &s,
        "GET",
        &format!("/missions/{}/events?from_seq=5&follow=false", rec.id),
        None,
    )
    .await;
    let tail = lines(&to_bytes(tail.into_body(), usize::MAX).await.unwrap());
    assert_eq!(tail.len(), events.len() - 5);
    assert_eq!(tail[0], events[5]);

    let replayed = s.control().replay(rec.id).unwrap();
    assert_eq!(replayed.state, s.control().get(rec.id).unwrap().state);
}

#[tokio::test]
async fn commands_need_a_manual_mission() {
    let s = fresh();
    let rec: MissionRecord =
        json_of(send(&s, "POST", "/missions", Some(explicit_plan())).await).await;
    let land = json!({"cmd": "LAND"});
    let res = send(
        &s,
        "POST",
        &format!("/missions/{}/command", rec.id),
        Some(land.clone()),
    )
    .await;
    assert_eq!(res.status(), StatusCode::CONFLICT);
    let res = send(&s, "POST", "/missions/9/command", Some(land)).await;
    assert_eq!(res.status(), StatusCode::NOT_FOUND);
    let bad = json!({"cmd": "HOVER_AT", "lat": 123.0, "lon": 0.0});
    let res = send(
        &s,
        "POST",
        &format!("/missions/{}/command", rec.id),
        Some(bad),
    )
    .await;
    assert_eq!(res.status(), StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn scenario_vehicle_must_match_the_mission() {
    let s = fresh();
    let rec: MissionRecord =
        json_of(send(&s, "POST", "/missions", Some(explicit_plan())).await).await;
    let res = send(
        &s,
        "POST",
        &format!("/missions/{}/start", rec.id),
        Some(json!({"preset": "ugv_id_field"})),
    )
    .await;
    assert_eq!(res.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let res = send(
        &s,
        "POST",
        &format!("/missions/{}/start", rec.id),
        Some(json!({"speed": -1.0})),
    )
    .await;
    assert_eq!(res.status(), StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn manual_hover_reads_a_sensor_tag() {
    let s = fresh();
    let cfg = apply_preset("uav_sensor_field").unwrap();
    let tag = cfg.tags[0].clone();
    let rec: MissionRecord = json_of(
        send(
            &s,
            "POST",
            "/missions",
            Some(json!({"preset": "uav_sensor_field"})),
        )
        .await,
    )
    .await;
    let id = rec.id;
    let res = send(
        &s,
        "POST",
        &format!("/missions/{id}/start"),
        Some(json!({"speed": 200})),
    )
    .await;
    assert_eq!(res.status(), StatusCode::ACCEPTED);

    let over = geodetic_from_enu(cfg.origin, &EnuPose::at(tag.east, tag.north, 0.0)).unwrap();
    let hover = json!({"cmd": "HOVER_AT", "lat": over.lat, "lon": over.lon, "alt_m": 0.5});
    let res = send(&s, "POST", &format!("/missions/{id}/command"), Some(hover)).await;
    assert_eq!(res.status(), StatusCode::ACCEPTED);
    let first: CommandAccepted = json_of(res).await;

    let res = send(&s, "GET", &format!("/missions/{id}/events"), None).await;
    let mut body = res.into_body().into_data_stream();
    let mut buf = Vec::new();
    let mut sensor = None;
    let wait = async {
        while sensor.is_none() {
            buf.extend_from_slice(&body.next().await.expect("stream open").unwrap());
            let end = buf.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            sensor = lines(&buf[..end])
                .into_iter()
                .find_map(|e| match e.message {
                    Message::TagRead {
                        epc,
                        sensor_kind: 1,
                        sensor_value_milli,
                        ..
                    } if epc == tag.epc => Some(sensor_value_milli),
                    _ => None,
                });
        }
    };
    tokio::time::timeout(Duration::from_secs(60), wait)
        .await
        .expect("sensor read arrives");
    assert!(sensor.unwrap() > 0);

    let res = send(
        &s,
        "POST",
        &format!("/missions/{id}/command"),
        Some(json!({"cmd": "LAND"})),
    )
    .await;
    let second: CommandAccepted = json_of(res).await;
    assert!(second.seq > first.seq);
    let view: MissionView = json_of(send(&s, "GET", &format!("/missions/{id}"), None).await).await;
    assert!(view.observations.iter().any(|o| o.epc == tag.epc));
}
