//! Scan-event stream processing.
//!
//! A [`RegionState`] consumes time-ordered [`ScanEvent`]s and tracks, per
//! beacon, when it was last heard and an exponentially smoothed RSSI.
//! Presence is derived from a per-kind TTL. `Exited` events are produced
//! lazily, either when the state is queried past expiry or when the next
//! broadcast from an expired beacon arrives, so the state machine never
//! needs a clock of its own.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::beacon::{BeaconId, BeaconKind};
use crate::Scalar;

pub const DEFAULT_ALPHA: f64 = 0.3;
pub const DEFAULT_PROXIMITY_TTL_MS: u64 = 15_000;
pub const DEFAULT_STICKER_TTL_MS: u64 = 450_000;
pub const DEFAULT_GATE_MIN_RSSI: f64 = -90.0;

#[derive(Debug, Error, PartialEq)]
pub enum ProximityError {
    #[error("event at t={got} ms precedes previous event at t={last} ms")]
    OutOfOrderEvent { last: u64, got: u64 },
    #[error("rssi {0} dBm outside [-127, 0]")]
    InvalidRssi(i16),
    #[error("beacon {0} was never observed")]
    UnknownBeacon(BeaconId),
    #[error("window end {end} ms must be after start {start} ms")]
    EmptyWindow { start: u64, end: u64 },
    #[error("scan log line {line}: {message}")]
    BadLogLine { line: usize, message: String },
    #[error("scan log i/o: {0}")]
    Io(String),
}

/// One received advertisement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanEvent {
    pub t_ms: u64,
    #[serde(flatten)]
    pub beacon: BeaconId,
    pub rssi: i16,
}

impl ScanEvent {
    pub fn new(t_ms: u64, beacon: BeaconId, rssi: i16) -> Self {
        Self { t_ms, beacon, rssi }
    }

    fn validate(&self) -> Result<(), ProximityError> {
        if (-127..=0).contains(&self.rssi) {
            Ok(())
        } else {
            Err(ProximityError::InvalidRssi(self.rssi))
        }
    }
}

/// A t_ms-sorted sequence of scan events.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanLog {
    events: Vec<ScanEvent>,
}

impl ScanLog {
    /// Fails if the events are not sorted by time or carry an invalid RSSI.
    pub fn new(events: Vec<ScanEvent>) -> Result<Self, ProximityError> {
        check_sorted(None, &events)?;
        Ok(Self { events })
    }

    pub fn events(&self) -> &[ScanEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<ScanEvent> {
        self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Reads the JSON-lines format. Blank lines are skipped.
    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, ProximityError> {
        let mut events = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| ProximityError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let ev: ScanEvent = serde_json::from_str(&line).map_err(|e| ProximityError::BadLogLine {
                line: i + 1,
                message: e.to_string(),
            })?;
            events.push(ev);
        }
        Self::new(events)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for ev in &self.events {
            serde_json::to_writer(&mut w, ev)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("write to Vec");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// Time of the last event, if any.
    pub fn end_ms(&self) -> Option<u64> {
        self.events.last().map(|e| e.t_ms)
    }
}

fn check_sorted(mut last: Option<u64>, events: &[ScanEvent]) -> Result<(), ProximityError> {
    for ev in events {
        ev.validate()?;
        if let Some(l) = last {
            if ev.t_ms < l {
                return Err(ProximityError::OutOfOrderEvent { last: l, got: ev.t_ms });
            }
        }
        last = Some(ev.t_ms);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "beacon", rename_all = "snake_case")]
pub enum RegionEvent {
    Entered(BeaconId),
    Exited(BeaconId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Presence {
    Present,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct KindEntry {
    #[serde(flatten)]
    beacon: BeaconId,
    kind: BeaconKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct ProximityConfig<T> {
    /// EMA weight of the newest sample.
    pub alpha: T,
    pub proximity_ttl_ms: u64,
    pub sticker_ttl_ms: u64,
    #[serde(with = "kind_map")]
    pub kinds: BTreeMap<BeaconId, BeaconKind>,
}

impl<T: Scalar> Default for ProximityConfig<T> {
    fn default() -> Self {
        Self {
            alpha: T::of(DEFAULT_ALPHA),
            proximity_ttl_ms: DEFAULT_PROXIMITY_TTL_MS,
            sticker_ttl_ms: DEFAULT_STICKER_TTL_MS,
            kinds: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> ProximityConfig<T> {
    pub fn with_kinds<I: IntoIterator<Item = (BeaconId, BeaconKind)>>(mut self, kinds: I) -> Self {
        self.kinds.extend(kinds);
        self
    }

    /// Beacons absent from the kind table are treated as proximity beacons.
    pub fn kind_of(&self, beacon: &BeaconId) -> BeaconKind {
        self.kinds.get(beacon).copied().unwrap_or_default()
    }

    pub fn ttl_ms(&self, beacon: &BeaconId) -> u64 {
        match self.kind_of(beacon) {
            BeaconKind::Proximity => self.proximity_ttl_ms,
            BeaconKind::Sticker => self.sticker_ttl_ms,
        }
    }
}

mod kind_map {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<BeaconId, BeaconKind>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter().map(|(b, k)| KindEntry { beacon: *b, kind: *k }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<BeaconId, BeaconKind>, D::Error> {
        let v = Vec::<KindEntry>::deserialize(d)?;
        Ok(v.into_iter().map(|e| (e.beacon, e.kind)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeaconRecord<T> {
    pub beacon: BeaconId,
    pub last_seen_ms: u64,
    pub smoothed_rssi: T,
    /// Presence as last announced through a [`RegionEvent`].
    announced_present: bool,
}

/// Presence state for one scan stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct RegionState<T> {
    config: ProximityConfig<T>,
    last_t_ms: Option<u64>,
    records: Vec<BeaconRecord<T>>,
}

impl<T: Scalar> Default for RegionState<T> {
    fn default() -> Self {
        Self::new(ProximityConfig::default())
    }
}

impl<T: Scalar> RegionState<T> {
    pub fn new(config: ProximityConfig<T>) -> Self {
        Self {
            config,
            last_t_ms: None,
            records: Vec::new(),
        }
    }

    pub fn config(&self) -> &ProximityConfig<T> {
        &self.config
    }

    pub fn last_t_ms(&self) -> Option<u64> {
        self.last_t_ms
    }

    pub fn records(&self) -> &[BeaconRecord<T>] {
        &self.records
    }

    pub fn record(&self, beacon: &BeaconId) -> Option<&BeaconRecord<T>> {
        self.position(beacon).ok().map(|i| &self.records[i])
    }

    fn position(&self, beacon: &BeaconId) -> Result<usize, usize> {
        self.records.binary_search_by(|r| r.beacon.cmp(beacon))
    }

    pub fn smoothed_rssi(&self, beacon: &BeaconId) -> Option<T> {
        self.record(beacon).map(|r| r.smoothed_rssi)
    }

    /// Feeds one event. Emits `Entered` on an absent-to-present transition,
    /// preceded by `Exited` if the previous presence expired unreported.
    pub fn ingest(&mut self, event: &ScanEvent) -> Result<Vec<RegionEvent>, ProximityError> {
        event.validate()?;
        if let Some(last) = self.last_t_ms {
            if event.t_ms < last {
                return Err(ProximityError::OutOfOrderEvent { last, got: event.t_ms });
            }
        }
        self.last_t_ms = Some(event.t_ms);

        let rssi = T::of(f64::from(event.rssi));
        let ttl = self.config.ttl_ms(&event.beacon);
        let alpha = self.config.alpha;
        let mut out = Vec::new();
        match self.position(&event.beacon) {
            Ok(i) => {
                let rec = &mut self.records[i];
                let expired = event.t_ms.saturating_sub(rec.last_seen_ms) > ttl;
                if rec.announced_present && expired {
                    out.push(RegionEvent::Exited(rec.beacon));
                    rec.announced_present = false;
                }
                if !rec.announced_present {
                    out.push(RegionEvent::Entered(rec.beacon));
                    rec.announced_present = true;
                }
                rec.smoothed_rssi = alpha * rssi + (T::one() - alpha) * rec.smoothed_rssi;
                rec.last_seen_ms = event.t_ms;
            }
            Err(i) => {
                self.records.insert(
                    i,
                    BeaconRecord {
                        beacon: event.beacon,
                        last_seen_ms: event.t_ms,
                        smoothed_rssi: rssi,
                        announced_present: true,
                    },
                );
                out.push(RegionEvent::Entered(event.beacon));
            }
        }
        Ok(out)
    }

    /// Ingests a batch atomically: on error the state is left untouched.
    pub fn ingest_batch(&mut self, events: &[ScanEvent]) -> Result<Vec<RegionEvent>, ProximityError> {
        check_sorted(self.last_t_ms, events)?;
        let mut out = Vec::new();
        for ev in events {
            out.extend(self.ingest(ev)?);
        }
        Ok(out)
    }

    /// Presence without side effects.
    pub fn is_present(&self, beacon: &BeaconId, now_ms: u64) -> bool {
        self.record(beacon)
            .is_some_and(|r| now_ms.saturating_sub(r.last_seen_ms) <= self.config.ttl_ms(beacon))
    }

    /// Presence query; the first query past expiry reports `Exited`.
    pub fn region_status(
        &mut self,
        beacon: &BeaconId,
        now_ms: u64,
    ) -> Result<(Presence, Option<RegionEvent>), ProximityError> {
        let present = self.is_present(beacon, now_ms);
        let i = self
            .position(beacon)
            .map_err(|_| ProximityError::UnknownBeacon(*beacon))?;
        let rec = &mut self.records[i];
        if present {
            return Ok((Presence::Present, None));
        }
        let event = if rec.announced_present {
            rec.announced_present = false;
            Some(RegionEvent::Exited(*beacon))
        } else {
            None
        };
        Ok((Presence::Absent, event))
    }

    /// Expires every beacon whose TTL has lapsed, returning the `Exited`
    /// events not yet reported.
    pub fn sweep(&mut self, now_ms: u64) -> Vec<RegionEvent> {
        let ids: Vec<BeaconId> = self.records.iter().map(|r| r.beacon).collect();
        ids.iter()
            .filter_map(|b| self.region_status(b, now_ms).ok().and_then(|(_, e)| e))
            .collect()
    }

    pub fn gate_unlocked(&self, beacon: &BeaconId, now_ms: u64, min_rssi: T) -> bool {
        self.is_present(beacon, now_ms)
            && self.smoothed_rssi(beacon).is_some_and(|s| s >= min_rssi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeaconRate<T> {
    #[serde(flatten)]
    pub beacon: BeaconId,
    pub broadcast_count: u64,
    pub duration_min: T,
    pub rate_per_min: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport<T> {
    pub window_start_ms: u64,
    pub window_end_ms: u64,
    pub total_events: u64,
    pub beacons: Vec<BeaconRate<T>>,
}

/// Counts broadcasts per beacon over `[start_ms, end_ms)`.
pub fn broadcast_stats<T: Scalar>(
    events: &[ScanEvent],
    start_ms: u64,
    end_ms: u64,
) -> Result<RateReport<T>, ProximityError> {
    if end_ms <= start_ms {
        return Err(ProximityError::EmptyWindow { start: start_ms, end: end_ms });
    }
    let mut counts: BTreeMap<BeaconId, u64> = BTreeMap::new();
    for ev in events.iter().filter(|e| (start_ms..end_ms).contains(&e.t_ms)) {
        *counts.entry(ev.beacon).or_default() += 1;
    }
    let duration_min = T::of((end_ms - start_ms) as f64 / 60_000.0);
    let beacons: Vec<BeaconRate<T>> = counts
        .into_iter()
        .map(|(beacon, n)| BeaconRate {
            beacon,
            broadcast_count: n,
            duration_min,
            rate_per_min: T::of(n as f64) / duration_min,
        })
        .collect();
    Ok(RateReport {
        window_start_ms: start_ms,
        window_end_ms: end_ms,
        total_events: beacons.iter().map(|b| b.broadcast_count).sum(),
        beacons,
    })
}
