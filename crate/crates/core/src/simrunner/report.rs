use std::collections::BTreeMap;
use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::mission_control::{EventLog, MissionStatus};
use crate::tag_model::{Epc, SensorKind, SensorValue, TagKind};
use crate::telemetry::Message;

use super::scenario::TagSpec;

/// Result of one hover (or pull-up) step of an operator script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptOutcome {
    pub step: usize,
    pub expect: Option<Epc>,
    pub issued_ms: u64,
    /// When the vehicle reported it had arrived.
    pub hover_start_ms: Option<u64>,
    pub read_ms: Option<u64>,
    pub success: bool,
}

impl ScriptOutcome {
    /// Seconds from arrival to the read; zero if the tag answered on the way in.
    pub fn time_to_read_s(&self) -> Option<f64> {
        let read = self.read_ms?;
        let start = self.hover_start_ms.unwrap_or(read).min(read);
        Some((read - start) as f64 / 1000.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagOutcome {
    pub epc: Epc,
    pub kind: TagKind,
    pub detected: bool,
    pub first_read_ms: Option<u64>,
    pub time_to_read_s: Option<f64>,
    /// Primary sensor value from the first successful transaction.
    pub sensor_value: Option<f64>,
    pub sensor_kind: Option<SensorKind>,
    /// Temperature reported alongside, for tags that carry one.
    pub temperature_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub status: MissionStatus,
    pub duration_s: f64,
    pub tags: Vec<TagOutcome>,
    pub detected: usize,
    pub total: usize,
    pub script: Vec<ScriptOutcome>,
    pub commands_issued: usize,
    pub downlink_gaps: u32,
    pub audit_notes: usize,
    pub event_log_path: Option<PathBuf>,
}

impl RunReport {
    pub fn detection_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.detected as f64 / self.total as f64
        }
    }

    pub fn tag(&self, epc: &Epc) -> Option<&TagOutcome> {
        self.tags.iter().find(|t| &t.epc == epc)
    }
}

/// Per-tag outcomes from the TAG_READ frames in a log. A sensor tag counts as
/// detected only once a value of its primary kind arrived.
///
/// Time to read runs from hover start for scripted reads, else from `since`
/// (when the tag's waypoint was commanded), else from mission start.
pub fn tag_outcomes(
    tags: &[&TagSpec],
    log: &EventLog,
    script: &[ScriptOutcome],
    since: &BTreeMap<Epc, u64>,
) -> Vec<TagOutcome> {
    tags.iter()
        .map(|spec| {
            let primary = spec.kind.primary_sensor();
            let mut first: Option<(u64, i32)> = None;
            let mut temperature = None;
            for (_, frame) in log.frames() {
                if let Message::TagRead { epc, sensor_kind, sensor_value_milli, time_ms, .. } = frame.msg {
                    if epc != spec.epc {
                        continue;
                    }
                    if sensor_kind == primary.code() && first.is_none() {
                        first = Some((u64::from(time_ms), sensor_value_milli));
                    }
                    if sensor_kind == SensorKind::Temperature.code()
                        && primary != SensorKind::Temperature
                        && temperature.is_none()
                    {
                        temperature = Some(SensorValue { kind: SensorKind::Temperature, milli: sensor_value_milli }.value());
                    }
                }
            }
            let scripted = script.iter().find(|s| s.success && s.expect == Some(spec.epc));
            let time_to_read_s = match scripted {
                Some(s) => s.time_to_read_s(),
                None => first.map(|(t, _)| {
                    let from = since.get(&spec.epc).copied().unwrap_or(0);
                    t.saturating_sub(from) as f64 / 1000.0
                }),
            };
            let has_sensor = spec.kind.has_sensor();
            TagOutcome {
                epc: spec.epc,
                kind: spec.kind,
                detected: first.is_some(),
                first_read_ms: first.map(|(t, _)| t),
                time_to_read_s,
                sensor_value: first.filter(|_| has_sensor).map(|(_, m)| SensorValue { kind: primary, milli: m }.value()),
                sensor_kind: has_sensor.then_some(primary),
                temperature_c: temperature,
            }
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    run_id: &'a str,
    tag_epc: String,
    detected: bool,
    time_to_read_s: Option<f64>,
    sensor_value: Option<f64>,
}

/// Write per-tag rows for any number of runs.
pub fn write_csv<'a, W: io::Write>(
    out: W,
    runs: impl IntoIterator<Item = (&'a str, &'a [TagOutcome])>,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for (run_id, tags) in runs {
        for t in tags {
            w.serialize(CsvRow {
                run_id,
                tag_epc: t.epc.to_string(),
                detected: t.detected,
                time_to_read_s: t.time_to_read_s,
                sensor_value: t.sensor_value,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
