//! Reader side of the air protocol: framed slotted ALOHA singulation with
//! Q adaptation, whitelist filtering and memory-proxied sensor transactions.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rf_link::{read_probability, received_power_dbm, AntennaPose, LinkConfig};
use crate::tag_model::{sense, ChargeModel, Environment, Epc, SensorReading, Tag, TagKind};

pub const MAX_Q: u8 = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InventoryConfig {
    pub initial_q: u8,
    pub round_rate_hz: f64,
    /// Time the reader spends on one sensor memory transaction.
    pub sensor_transaction_s: f64,
}

impl Default for InventoryConfig {
    fn default() -> Self {
        Self { initial_q: 2, round_rate_hz: 5.0, sensor_transaction_s: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotOutcome {
    Idle,
    Single(Epc),
    Collision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryRound {
    pub q: u8,
    pub slots: Vec<SlotOutcome>,
    /// Singulated EPCs that passed the whitelist, in slot order.
    pub reported: Vec<Epc>,
}

impl InventoryRound {
    pub fn idles(&self) -> usize {
        self.slots.iter().filter(|s| matches!(s, SlotOutcome::Idle)).count()
    }

    pub fn collisions(&self) -> usize {
        self.slots.iter().filter(|s| matches!(s, SlotOutcome::Collision)).count()
    }

    pub fn singulations(&self) -> usize {
        self.slots.iter().filter(|s| matches!(s, SlotOutcome::Single(_))).count()
    }
}

/// Power threshold that governs whether a tag of this kind answers.
pub fn kind_threshold_dbm(kind: TagKind, cfg: &LinkConfig) -> f64 {
    if kind.has_sensor() {
        cfg.sensor_threshold_dbm
    } else {
        cfg.id_threshold_dbm
    }
}

/// One framed-ALOHA round over participants that have already decided to reply.
/// Each participant is `(epc, whitelisted)`.
pub fn slotted_round<R: Rng + ?Sized>(participants: &[(Epc, bool)], q: u8, rng: &mut R) -> InventoryRound {
    let q = q.min(MAX_Q);
    let n_slots = 1usize << q;
    let mut occupancy: Vec<Option<(Epc, bool)>> = vec![None; n_slots];
    let mut collided = vec![false; n_slots];
    for &p in participants {
        let slot = rng.random_range(0..n_slots);
        if occupancy[slot].is_some() {
            collided[slot] = true;
        } else {
            occupancy[slot] = Some(p);
        }
    }
    let mut reported = Vec::new();
    let slots = occupancy
        .into_iter()
        .zip(collided)
        .map(|(occ, coll)| match (occ, coll) {
            (None, _) => SlotOutcome::Idle,
            (Some(_), true) => SlotOutcome::Collision,
            (Some((epc, whitelisted)), false) => {
                if whitelisted {
                    reported.push(epc);
                }
                SlotOutcome::Single(epc)
            }
        })
        .collect();
    InventoryRound { q, slots, reported }
}

/// Power every tag, let each decide to reply, then run one slotted round.
pub fn run_inventory_round<R: Rng + ?Sized>(
    tags: &[Tag],
    reader: &AntennaPose,
    cfg: &LinkConfig,
    q: u8,
    rng: &mut R,
) -> InventoryRound {
    let powers: Vec<f64> = tags.iter().map(|t| received_power_dbm(reader, &t.pose, cfg)).collect();
    run_inventory_round_with_power(tags, &powers, cfg, q, rng)
}

/// As [`run_inventory_round`] with precomputed (possibly shadowed) tag powers.
pub fn run_inventory_round_with_power<R: Rng + ?Sized>(
    tags: &[Tag],
    powers_dbm: &[f64],
    cfg: &LinkConfig,
    q: u8,
    rng: &mut R,
) -> InventoryRound {
    debug_assert_eq!(tags.len(), powers_dbm.len());
    let participants: Vec<(Epc, bool)> = tags
        .iter()
        .zip(powers_dbm)
        .filter(|(t, &p)| {
            let prob = read_probability(p, kind_threshold_dbm(t.kind, cfg), cfg.logistic_slope_db);
            rng.random_bool(prob.clamp(0.0, 1.0))
        })
        .map(|(t, _)| (t.epc, t.whitelisted))
        .collect();
    slotted_round(&participants, q, rng)
}

pub fn adjust_q(q: u8, n_collisions: usize, n_idles: usize) -> u8 {
    let q = q.min(MAX_Q);
    if n_collisions > n_idles {
        (q + 1).min(MAX_Q)
    } else if n_collisions < n_idles {
        q.saturating_sub(1)
    } else {
        q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagReadRecord {
    pub epc: Epc,
    /// Same path loss both ways, so this equals the power at the tag.
    pub rssi_dbm: f64,
    pub sensor: Option<SensorReading>,
    pub timestamp_ms: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReadError {
    #[error("tag {0} is not charged yet")]
    NotReady(Epc),
    #[error("tag {0} is out of range")]
    OutOfRange(Epc),
    #[error("tag {0} is not on the whitelist")]
    NotWhitelisted(Epc),
    #[error("no tag {0} in the scene")]
    UnknownTag(Epc),
    #[error("tag {0} was not singulated in the last two rounds")]
    NotSingulated(Epc),
}

/// Everything a sensor transaction needs besides the tag list.
#[derive(Debug, Clone, Copy)]
pub struct ReadContext<'a> {
    pub link: &'a LinkConfig,
    pub charge: &'a ChargeModel,
    pub env: &'a Environment,
    pub timestamp_ms: u64,
}

/// Execute a read transaction against a singulated tag.
///
/// ID-only tags report identity. Sensor tags must be charged and then win a
/// link-quality draw for the whole transaction.
pub fn read_sensor<R: Rng + ?Sized>(
    epc: Epc,
    tags: &[Tag],
    reader: &AntennaPose,
    ctx: &ReadContext<'_>,
    rng: &mut R,
) -> Result<TagReadRecord, ReadError> {
    let tag = tags.iter().find(|t| t.epc == epc).ok_or(ReadError::UnknownTag(epc))?;
    if !tag.whitelisted {
        return Err(ReadError::NotWhitelisted(epc));
    }
    let rssi_dbm = received_power_dbm(reader, &tag.pose, ctx.link);
    let threshold = kind_threshold_dbm(tag.kind, ctx.link);
    let record = |sensor| TagReadRecord { epc, rssi_dbm, sensor, timestamp_ms: ctx.timestamp_ms };
    if tag.kind == TagKind::IdOnly {
        return Ok(record(None));
    }
    if !tag.is_sensor_ready(ctx.charge) {
        return Err(if rssi_dbm < threshold { ReadError::OutOfRange(epc) } else { ReadError::NotReady(epc) });
    }
    if !rng.random_bool(read_probability(rssi_dbm, threshold, ctx.link.logistic_slope_db)) {
        return Err(ReadError::OutOfRange(epc));
    }
    let reading = sense(tag, ctx.env).expect("sensor tag");
    Ok(record(Some(reading)))
}

/// Stateful reader: keeps Q between rounds and remembers recent singulations.
#[derive(Debug, Clone, PartialEq)]
pub struct Reader {
    pub q: u8,
    current: HashSet<Epc>,
    previous: HashSet<Epc>,
}

impl Reader {
    pub fn new(cfg: &InventoryConfig) -> Self {
        Self { q: cfg.initial_q.min(MAX_Q), current: HashSet::new(), previous: HashSet::new() }
    }

    pub fn round<R: Rng + ?Sized>(
        &mut self,
        tags: &[Tag],
        powers_dbm: &[f64],
        link: &LinkConfig,
        rng: &mut R,
    ) -> InventoryRound {
        let round = run_inventory_round_with_power(tags, powers_dbm, link, self.q, rng);
        self.q = adjust_q(self.q, round.collisions(), round.idles());
        self.previous = std::mem::take(&mut self.current);
        self.current = round.reported.iter().copied().collect();
        round
    }

    pub fn recently_singulated(&self, epc: &Epc) -> bool {
        self.current.contains(epc) || self.previous.contains(epc)
    }

    pub fn read_sensor<R: Rng + ?Sized>(
        &self,
        epc: Epc,
        tags: &[Tag],
        reader: &AntennaPose,
        ctx: &ReadContext<'_>,
        rng: &mut R,
    ) -> Result<TagReadRecord, ReadError> {
        if !self.recently_singulated(&epc) {
            return Err(ReadError::NotSingulated(epc));
        }
        read_sensor(epc, tags, reader, ctx, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Vec3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn epc(n: u64) -> Epc {
        Epc::from_index(0xE280_0000, n)
    }

    fn reader_at(h: f64) -> AntennaPose {
        AntennaPose::new(Vec3::new(0.0, 0.0, h), Vec3::DOWN, Vec3::EAST)
    }

    fn ground_tag(n: u64, kind: TagKind) -> Tag {
        Tag::new(epc(n), kind, AntennaPose::dipole(Vec3::new(0.0, 0.0, 0.0), Vec3::EAST))
    }

    #[test]
    fn q_adjustment_rule() {
        assert_eq!(adjust_q(2, 5, 1), 3);
        assert_eq!(adjust_q(0, 0, 4), 0);
        assert_eq!(adjust_q(2, 3, 3), 2);
        assert_eq!(adjust_q(15, 9, 0), 15);
        assert_eq!(adjust_q(4, 0, 3), 3);
    }

    #[test]
    fn strong_single_tag_singulates() {
        let cfg = LinkConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // ~1 m straight down: margin well over 10 dB for an ID tag.
        let tags = [ground_tag(1, TagKind::IdOnly)];
        let reader = reader_at(1.0);
        let margin = received_power_dbm(&reader, &tags[0].pose, &cfg) - cfg.id_threshold_dbm;
        assert!(margin > 10.0);
        let hits = (0..2000)
            .filter(|_| run_inventory_round(&tags, &reader, &cfg, 0, &mut rng).reported == vec![tags[0].epc])
            .count();
        assert!(hits as f64 / 2000.0 >= 0.999);
    }

    #[test]
    fn two_tags_one_slot_always_collide() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let parts = [(epc(1), true), (epc(2), true)];
        for _ in 0..100 {
            let r = slotted_round(&parts, 0, &mut rng);
            assert_eq!(r.slots, vec![SlotOutcome::Collision]);
            assert!(r.reported.is_empty());
        }
    }

    #[test]
    fn whitelist_filters_reports_not_air_outcomes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = slotted_round(&[(epc(9), false)], 0, &mut rng);
        assert_eq!(r.slots, vec![SlotOutcome::Single(epc(9))]);
        assert!(r.reported.is_empty());
    }

    #[test]
    fn slot_count_follows_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(slotted_round(&[], 4, &mut rng).slots.len(), 16);
        assert_eq!(slotted_round(&[], 40, &mut rng).q, MAX_Q);
    }

    #[test]
    fn sensor_transactions() {
        let link = LinkConfig::default();
        let charge = ChargeModel { threshold_dbm: link.sensor_threshold_dbm, required_s: 1.0 };
        let env = Environment::default();
        let ctx = ReadContext { link: &link, charge: &charge, env: &env, timestamp_ms: 42 };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut hydro = Tag::new(epc(1), TagKind::HydroMoisture, AntennaPose::dipole(Vec3::new(0.0, 0.0, 0.4), Vec3::EAST));
        let reader = reader_at(0.9);

        let tags = vec![hydro.clone()];
        assert_eq!(read_sensor(hydro.epc, &tags, &reader, &ctx, &mut rng), Err(ReadError::NotReady(hydro.epc)));

        hydro.charge_s = 1.0;
        let tags = vec![hydro.clone()];
        let rec = read_sensor(hydro.epc, &tags, &reader, &ctx, &mut rng).unwrap();
        assert_eq!(rec.timestamp_ms, 42);
        assert!(rec.sensor.unwrap().primary.value() > 0.0);

        let far = reader_at(6.0);
        assert_eq!(read_sensor(hydro.epc, &tags, &far, &ctx, &mut rng), Err(ReadError::OutOfRange(hydro.epc)));

        let id = ground_tag(2, TagKind::IdOnly);
        let rec = read_sensor(id.epc, std::slice::from_ref(&id), &reader, &ctx, &mut rng).unwrap();
        assert!(rec.sensor.is_none());

        let mut stranger = ground_tag(3, TagKind::IdOnly);
        stranger.whitelisted = false;
        assert_eq!(
            read_sensor(stranger.epc, &[stranger.clone()], &reader, &ctx, &mut rng),
            Err(ReadError::NotWhitelisted(stranger.epc))
        );
        assert_eq!(read_sensor(epc(77), &tags, &reader, &ctx, &mut rng), Err(ReadError::UnknownTag(epc(77))));
    }

    #[test]
    fn reader_requires_recent_singulation() {
        let link = LinkConfig::default();
        let charge = ChargeModel { threshold_dbm: link.sensor_threshold_dbm, required_s: 1.0 };
        let env = Environment::default();
        let ctx = ReadContext { link: &link, charge: &charge, env: &env, timestamp_ms: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tags = vec![ground_tag(1, TagKind::IdOnly)];
        let pose = reader_at(1.0);
        let mut reader = Reader::new(&InventoryConfig { initial_q: 0, ..Default::default() });
        assert_eq!(
            reader.read_sensor(tags[0].epc, &tags, &pose, &ctx, &mut rng),
            Err(ReadError::NotSingulated(tags[0].epc))
        );
        let powers = [received_power_dbm(&pose, &tags[0].pose, &link)];
        while reader.round(&tags, &powers, &link, &mut rng).reported.is_empty() {}
        assert!(reader.read_sensor(tags[0].epc, &tags, &pose, &ctx, &mut rng).is_ok());
        // Still valid one round later, gone after two silent rounds.
        reader.round(&tags, &[-90.0], &link, &mut rng);
        assert!(reader.recently_singulated(&tags[0].epc));
        reader.round(&tags, &[-90.0], &link, &mut rng);
        assert!(!reader.recently_singulated(&tags[0].epc));
    }
}
