//! Stability metrics over transition logs, packet ledgers and cluster
//! snapshots, plus the CSV forms they are written in.
//!
//! All windows are half-open, `[start, end)`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::baselines::SelectionPolicy;
use crate::channel::{ledger_snapshot, Category, LedgerSnapshot};
use crate::protocol::{Cause, MessageKind, StateTag, TransitionEvent};
use crate::VehicleId;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("window [{start}, {end}) is empty")]
    EmptyWindow { start: f64, end: f64 },
    #[error("grouped run needs {expected} group reports, got {got}")]
    MissingGroup { expected: usize, got: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad field `{field}` in row {row}: {value}")]
    Field {
        row: usize,
        field: &'static str,
        value: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Result<Self, MetricsError> {
        if end > start {
            Ok(Self { start, end })
        } else {
            Err(MetricsError::EmptyWindow { start, end })
        }
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

/// One stay in a state, `[start, end)`; `end` is `None` while still open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Episode {
    pub vehicle: VehicleId,
    pub start: f64,
    pub end: Option<f64>,
}

/// Orders one vehicle's events so each `from` matches the previous `to`,
/// whatever order equal-time events were logged in.
fn chain(mut events: Vec<&TransitionEvent>) -> Vec<&TransitionEvent> {
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut out = Vec::with_capacity(events.len());
    let mut state = StateTag::Tm;
    let mut i = 0;
    while i < events.len() {
        let mut j = i;
        while j < events.len() && events[j].time == events[i].time {
            j += 1;
        }
        let mut group: Vec<&TransitionEvent> = events[i..j].to_vec();
        while !group.is_empty() {
            let k = group.iter().position(|e| e.from == state).unwrap_or(0);
            let e = group.remove(k);
            state = e.to;
            out.push(e);
        }
        i = j;
    }
    out
}

/// Every episode spent in `state`, in (vehicle, start) order.
pub fn episodes(log: &[TransitionEvent], state: StateTag) -> Vec<Episode> {
    let mut per_vehicle: BTreeMap<VehicleId, Vec<&TransitionEvent>> = BTreeMap::new();
    for e in log {
        per_vehicle.entry(e.vehicle).or_default().push(e);
    }
    let mut out = Vec::new();
    for (vehicle, events) in per_vehicle {
        let mut open: Option<f64> = None;
        for e in chain(events) {
            if e.from == state && e.to != state {
                if let Some(start) = open.take() {
                    out.push(Episode {
                        vehicle,
                        start,
                        end: Some(e.time),
                    });
                }
            }
            if e.to == state && e.from != state {
                open = Some(e.time);
            }
        }
        if let Some(start) = open {
            out.push(Episode {
                vehicle,
                start,
                end: None,
            });
        }
    }
    out
}

/// Summary of episode lengths within a window.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DurationStats {
    /// Completed episodes plus episodes still open at the window end,
    /// measured up to the window end.
    pub censored_count: u64,
    pub censored_total: f64,
    /// Episodes that ended inside the window.
    pub completed_count: u64,
    pub completed_total: f64,
}

impl DurationStats {
    pub fn mean(&self) -> Option<f64> {
        (self.censored_count > 0).then(|| self.censored_total / self.censored_count as f64)
    }

    pub fn completed_mean(&self) -> Option<f64> {
        (self.completed_count > 0).then(|| self.completed_total / self.completed_count as f64)
    }
}

/// Episodes ending inside the window count with their full length; episodes
/// started before the window end and still open at it count up to the end.
pub fn duration_stats(log: &[TransitionEvent], state: StateTag, window: Window) -> DurationStats {
    let mut s = DurationStats::default();
    for ep in episodes(log, state) {
        match ep.end {
            Some(end) if window.contains(end) => {
                s.censored_count += 1;
                s.censored_total += end - ep.start;
                s.completed_count += 1;
                s.completed_total += end - ep.start;
            }
            Some(end) if end < window.start => {}
            _ if ep.start < window.end => {
                s.censored_count += 1;
                s.censored_total += window.end - ep.start;
            }
            _ => {}
        }
    }
    s
}

/// Whether the event ends a CH tenure. Leaving the road is not counted.
pub fn is_ch_change(e: &TransitionEvent) -> bool {
    e.from == StateTag::Ch && e.to != StateTag::Ch && e.to != StateTag::Out
}

pub fn ch_exit_count(log: &[TransitionEvent], window: Window) -> u64 {
    log.iter()
        .filter(|e| is_ch_change(e) && window.contains(e.time))
        .count() as u64
}

pub fn ch_change_rate(log: &[TransitionEvent], window: Window) -> f64 {
    ch_exit_count(log, window) as f64 / window.length()
}

pub fn avg_ch_duration(log: &[TransitionEvent], window: Window) -> Option<f64> {
    duration_stats(log, StateTag::Ch, window).mean()
}

pub fn avg_cm_duration(log: &[TransitionEvent], window: Window) -> Option<f64> {
    duration_stats(log, StateTag::Cm, window).mean()
}

pub fn clustering_overhead(
    entries: impl IntoIterator<Item = (f64, MessageKind)>,
    window: Window,
) -> Option<f64> {
    ledger_snapshot(entries, window.start, window.end).overhead()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub head: VehicleId,
    /// Members other than the head.
    pub members: u32,
    pub gateways: Vec<VehicleId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSnapshot {
    pub time: f64,
    pub clusters: Vec<ClusterRecord>,
}

/// Time-averaged cluster count over the window, treating each snapshot as
/// holding until the next one. Returns `(all clusters, without singletons)`.
pub fn avg_cluster_count(snapshots: &[ClusterSnapshot], window: Window) -> (f64, f64) {
    let mut sorted: Vec<&ClusterSnapshot> = snapshots.iter().collect();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let counts = |s: &ClusterSnapshot| {
        let all = s.clusters.len() as f64;
        let multi = s.clusters.iter().filter(|c| c.members > 0).count() as f64;
        (all, multi)
    };
    let mut level = (0.0, 0.0);
    let mut t = window.start;
    let mut area = (0.0, 0.0);
    for s in sorted {
        if s.time <= window.start {
            level = counts(s);
            continue;
        }
        if s.time >= window.end {
            break;
        }
        area.0 += level.0 * (s.time - t);
        area.1 += level.1 * (s.time - t);
        t = s.time;
        level = counts(s);
    }
    area.0 += level.0 * (window.end - t);
    area.1 += level.1 * (window.end - t);
    (area.0 / window.length(), area.1 / window.length())
}

/// Everything measured for one run over one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: SelectionPolicy,
    pub max_velocity: f64,
    pub seed: u64,
    pub window: Window,
    pub ch_change_rate: f64,
    pub ch_exits: u64,
    pub avg_ch_duration: Option<f64>,
    pub avg_cm_duration: Option<f64>,
    pub avg_ch_duration_completed: Option<f64>,
    pub avg_cm_duration_completed: Option<f64>,
    pub ch_durations: DurationStats,
    pub cm_durations: DurationStats,
    pub overhead: Option<f64>,
    pub packets: LedgerSnapshot,
    pub avg_clusters: f64,
    pub avg_clusters_non_singleton: f64,
}

/// Raw logs of one run, enough to compute a [`MetricsReport`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLogs {
    pub transitions: Vec<TransitionEvent>,
    pub packets: Vec<(f64, MessageKind)>,
    pub snapshots: Vec<ClusterSnapshot>,
}

impl RunLogs {
    pub fn report(
        &self,
        policy: SelectionPolicy,
        max_velocity: f64,
        seed: u64,
        window: Window,
    ) -> MetricsReport {
        let ch = duration_stats(&self.transitions, StateTag::Ch, window);
        let cm = duration_stats(&self.transitions, StateTag::Cm, window);
        let packets = ledger_snapshot(self.packets.iter().copied(), window.start, window.end);
        let (avg_clusters, avg_clusters_non_singleton) = avg_cluster_count(&self.snapshots, window);
        let ch_exits = ch_exit_count(&self.transitions, window);
        MetricsReport {
            policy,
            max_velocity,
            seed,
            window,
            ch_change_rate: ch_exits as f64 / window.length(),
            ch_exits,
            avg_ch_duration: ch.mean(),
            avg_cm_duration: cm.mean(),
            avg_ch_duration_completed: ch.completed_mean(),
            avg_cm_duration_completed: cm.completed_mean(),
            ch_durations: ch,
            cm_durations: cm,
            overhead: packets.overhead(),
            packets,
            avg_clusters,
            avg_clusters_non_singleton,
        }
    }
}

/// Combined result of the three turn-profile groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedReport {
    pub composite: MetricsReport,
    /// Durations scaled by 100 s over the group window length, the other
    /// reading of the per-100-second conversion.
    pub avg_ch_duration_halved: Option<f64>,
    pub avg_cm_duration_halved: Option<f64>,
    pub groups: Vec<MetricsReport>,
}

fn weighted_duration(
    reports: &[MetricsReport],
    pick: impl Fn(&MetricsReport) -> DurationStats,
) -> DurationStats {
    let mut s = DurationStats::default();
    for r in reports {
        let d = pick(r);
        s.censored_count += d.censored_count;
        s.censored_total += d.censored_total;
        s.completed_count += d.completed_count;
        s.completed_total += d.completed_total;
    }
    s
}

/// Rates are averaged by window length, durations by episode count and
/// overhead by packet count.
pub fn grouped_run_aggregate(groups: &[MetricsReport]) -> Result<GroupedReport, MetricsError> {
    if groups.len() != 3 {
        return Err(MetricsError::MissingGroup {
            expected: 3,
            got: groups.len(),
        });
    }
    let total_len: f64 = groups.iter().map(|r| r.window.length()).sum();
    let by_time = |f: &dyn Fn(&MetricsReport) -> f64| {
        groups.iter().map(|r| f(r) * r.window.length()).sum::<f64>() / total_len
    };
    let ch = weighted_duration(groups, |r| r.ch_durations);
    let cm = weighted_duration(groups, |r| r.cm_durations);
    let mut packets = LedgerSnapshot::default();
    for r in groups {
        packets.beacon += r.packets.beacon;
        packets.control += r.packets.control;
        packets.total += r.packets.total;
    }
    let first = &groups[0];
    let composite = MetricsReport {
        policy: first.policy,
        max_velocity: first.max_velocity,
        seed: first.seed,
        window: Window {
            start: groups
                .iter()
                .map(|r| r.window.start)
                .fold(f64::INFINITY, f64::min),
            end: groups
                .iter()
                .map(|r| r.window.end)
                .fold(f64::NEG_INFINITY, f64::max),
        },
        ch_change_rate: by_time(&|r| r.ch_change_rate),
        ch_exits: groups.iter().map(|r| r.ch_exits).sum(),
        avg_ch_duration: ch.mean(),
        avg_cm_duration: cm.mean(),
        avg_ch_duration_completed: ch.completed_mean(),
        avg_cm_duration_completed: cm.completed_mean(),
        ch_durations: ch,
        cm_durations: cm,
        overhead: packets.overhead(),
        packets,
        avg_clusters: by_time(&|r| r.avg_clusters),
        avg_clusters_non_singleton: by_time(&|r| r.avg_clusters_non_singleton),
    };
    let scale = 100.0 / (total_len / groups.len() as f64);
    Ok(GroupedReport {
        avg_ch_duration_halved: composite.avg_ch_duration.map(|d| d * scale),
        avg_cm_duration_halved: composite.avg_cm_duration.map(|d| d * scale),
        composite,
        groups: groups.to_vec(),
    })
}

// CSV forms. Floats are written in Rust's shortest round-trip format, so
// reading a log back gives bit-identical values.

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r)
}

fn field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    i: usize,
    row: usize,
    name: &'static str,
) -> Result<T, MetricsError> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| MetricsError::Field {
        row,
        field: name,
        value: raw.to_string(),
    })
}

fn ids(list: &str) -> Vec<VehicleId> {
    list.split(';')
        .filter(|s| !s.is_empty())
        .filter_map(|s| s.parse().ok())
        .collect()
}

fn join(list: &[VehicleId]) -> String {
    list.iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

pub fn write_transitions<W: Write>(w: W, log: &[TransitionEvent]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["time", "vehicle", "from", "to", "cause"])?;
    for e in log {
        w.write_record([
            e.time.to_string(),
            e.vehicle.to_string(),
            e.from.to_string(),
            e.to.to_string(),
            e.cause.name().to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_transitions<R: Read>(r: R) -> Result<Vec<TransitionEvent>, MetricsError> {
    let mut out = Vec::new();
    for (row, rec) in reader(r).records().enumerate() {
        let rec = rec?;
        out.push(TransitionEvent {
            time: field(&rec, 0, row, "time")?,
            vehicle: field(&rec, 1, row, "vehicle")?,
            from: field(&rec, 2, row, "from")?,
            to: field(&rec, 3, row, "to")?,
            cause: field::<Cause>(&rec, 4, row, "cause")?,
        });
    }
    Ok(out)
}

/// One transmission as written to the packet log.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketRow {
    pub tick: u64,
    pub time: f64,
    pub sender: VehicleId,
    pub kind: MessageKind,
    pub recipients: Vec<VehicleId>,
}

pub fn write_packets<W: Write>(w: W, rows: &[PacketRow]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["tick", "time", "sender", "kind", "category", "recipients"])?;
    for p in rows {
        w.write_record([
            p.tick.to_string(),
            p.time.to_string(),
            p.sender.to_string(),
            p.kind.name().to_string(),
            Category::of(p.kind).to_string(),
            join(&p.recipients),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_packets<R: Read>(r: R) -> Result<Vec<PacketRow>, MetricsError> {
    let mut out = Vec::new();
    for (row, rec) in reader(r).records().enumerate() {
        let rec = rec?;
        out.push(PacketRow {
            tick: field(&rec, 0, row, "tick")?,
            time: field(&rec, 1, row, "time")?,
            sender: field(&rec, 2, row, "sender")?,
            kind: field(&rec, 3, row, "kind")?,
            recipients: ids(rec.get(5).unwrap_or("")),
        });
    }
    Ok(out)
}

/// A snapshot with no clusters is written as one row with empty cluster
/// fields so its time survives the round trip.
pub fn write_snapshots<W: Write>(w: W, snapshots: &[ClusterSnapshot]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["time", "cluster_id", "ch_id", "member_count", "gateways"])?;
    for s in snapshots {
        let t = s.time.to_string();
        if s.clusters.is_empty() {
            w.write_record([t.as_str(), "", "", "", ""])?;
        }
        for c in &s.clusters {
            w.write_record([
                t.clone(),
                c.head.to_string(),
                c.head.to_string(),
                c.members.to_string(),
                join(&c.gateways),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_snapshots<R: Read>(r: R) -> Result<Vec<ClusterSnapshot>, MetricsError> {
    let mut out: Vec<ClusterSnapshot> = Vec::new();
    for (row, rec) in reader(r).records().enumerate() {
        let rec = rec?;
        let time: f64 = field(&rec, 0, row, "time")?;
        if out.last().is_none_or(|s| s.time != time) {
            out.push(ClusterSnapshot {
                time,
                clusters: Vec::new(),
            });
        }
        if rec.get(2).unwrap_or("").is_empty() {
            continue;
        }
        let rec_ = ClusterRecord {
            head: field(&rec, 2, row, "ch_id")?,
            members: field(&rec, 3, row, "member_count")?,
            gateways: ids(rec.get(4).unwrap_or("")),
        };
        out.last_mut().unwrap().clusters.push(rec_);
    }
    Ok(out)
}
