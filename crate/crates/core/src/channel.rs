//! Idealized radio: every vehicle within the transmission range hears a
//! broadcast, optionally after a fixed delay and with independent losses.
//! Every transmission is counted once in the [`PacketLedger`].

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::Point;
use crate::protocol::{Message, MessageKind, Target};
use crate::VehicleId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Transmission range, m. Receivers at exactly this distance are reached.
    pub tr: f64,
    /// Delivery delay in ticks; 0 delivers within the sending tick.
    pub delay_ticks: u32,
    pub loss_probability: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            tr: 200.0,
            delay_ticks: 0,
            loss_probability: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Beacon,
    ClusteringControl,
}

impl Category {
    pub fn of(kind: MessageKind) -> Self {
        if kind == MessageKind::VehAdv {
            Category::Beacon
        } else {
            Category::ClusteringControl
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Beacon => "beacon",
            Category::ClusteringControl => "clustering-control",
        })
    }
}

/// Packet counts within a time window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub beacon: u64,
    pub control: u64,
    pub total: u64,
}

impl LedgerSnapshot {
    /// Share of control packets, or `None` when nothing was sent.
    pub fn overhead(&self) -> Option<f64> {
        (self.total > 0).then(|| self.control as f64 / self.total as f64)
    }
}

/// Per-transmission packet accounting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PacketLedger {
    counters: BTreeMap<(Category, MessageKind), u64>,
    log: Vec<(f64, MessageKind)>,
}

impl PacketLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, time: f64, kind: MessageKind) {
        *self.counters.entry((Category::of(kind), kind)).or_default() += 1;
        self.log.push((time, kind));
    }

    pub fn counters(&self) -> &BTreeMap<(Category, MessageKind), u64> {
        &self.counters
    }

    pub fn total(&self) -> u64 {
        self.counters.values().sum()
    }

    /// Every transmission in send order.
    pub fn entries(&self) -> &[(f64, MessageKind)] {
        &self.log
    }

    /// Counts for transmissions with `start <= time < end`.
    pub fn snapshot(&self, start: f64, end: f64) -> LedgerSnapshot {
        ledger_snapshot(self.log.iter().copied(), start, end)
    }
}

pub fn ledger_snapshot(
    entries: impl IntoIterator<Item = (f64, MessageKind)>,
    start: f64,
    end: f64,
) -> LedgerSnapshot {
    let mut s = LedgerSnapshot::default();
    for (t, kind) in entries {
        if t >= start && t < end {
            match Category::of(kind) {
                Category::Beacon => s.beacon += 1,
                Category::ClusteringControl => s.control += 1,
            }
        }
    }
    s.total = s.beacon + s.control;
    s
}

/// Vehicles other than `sender` within `tr` of `origin`, in id order.
pub fn in_range(
    sender: VehicleId,
    origin: Point,
    positions: &BTreeMap<VehicleId, Point>,
    tr: f64,
) -> Vec<VehicleId> {
    positions
        .iter()
        .filter(|(&id, p)| id != sender && p.distance(origin) <= tr)
        .map(|(&id, _)| id)
        .collect()
}

/// One row of the optional packet log.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    pub tick: u64,
    pub sender: VehicleId,
    pub kind: MessageKind,
    pub recipients: Vec<VehicleId>,
}

/// Message queue plus accounting for one scenario.
#[derive(Debug, Clone)]
pub struct Channel {
    pub config: ChannelConfig,
    rng: ChaCha8Rng,
    queue: BTreeMap<u64, Vec<(VehicleId, Message)>>,
    pub ledger: PacketLedger,
    /// Unicasts addressed to vehicles that have left the road.
    pub dropped_stale: u64,
    packet_log: Option<Vec<PacketRecord>>,
}

impl Channel {
    pub fn new(config: ChannelConfig, rng: ChaCha8Rng) -> Self {
        Self {
            config,
            rng,
            queue: BTreeMap::new(),
            ledger: PacketLedger::new(),
            dropped_stale: 0,
            packet_log: None,
        }
    }

    pub fn enable_packet_log(&mut self) {
        self.packet_log.get_or_insert_with(Vec::new);
    }

    pub fn packet_log(&self) -> Option<&[PacketRecord]> {
        self.packet_log.as_deref()
    }

    fn lost(&mut self) -> bool {
        self.config.loss_probability > 0.0
            && self.rng.random::<f64>() < self.config.loss_probability
    }

    /// Counts the transmission and queues a copy for every receiver in range.
    /// Returns the receivers with their delivery tick.
    pub fn transmit(
        &mut self,
        tick: u64,
        time: f64,
        msg: Message,
        positions: &BTreeMap<VehicleId, Point>,
    ) -> Vec<(VehicleId, u64)> {
        self.ledger.record(time, msg.kind);
        let origin = msg.info.position;
        let candidates = match msg.target {
            Target::Broadcast => in_range(msg.sender, origin, positions, self.config.tr),
            Target::Vehicle(id) => match positions.get(&id) {
                None => {
                    self.dropped_stale += 1;
                    Vec::new()
                }
                Some(p) if p.distance(origin) <= self.config.tr => vec![id],
                Some(_) => Vec::new(),
            },
        };
        let due = tick + u64::from(self.config.delay_ticks);
        let mut delivered = Vec::with_capacity(candidates.len());
        for r in candidates {
            if self.lost() {
                continue;
            }
            delivered.push((r, due));
        }
        if let Some(log) = self.packet_log.as_mut() {
            log.push(PacketRecord {
                tick,
                sender: msg.sender,
                kind: msg.kind,
                recipients: delivered.iter().map(|(r, _)| *r).collect(),
            });
        }
        if !delivered.is_empty() {
            let slot = self.queue.entry(due).or_default();
            for &(r, _) in &delivered {
                slot.push((r, msg.clone()));
            }
        }
        delivered
    }

    /// Removes and returns every delivery due at or before `tick`.
    pub fn take_due(&mut self, tick: u64) -> Vec<(VehicleId, Message)> {
        let later = self.queue.split_off(&(tick + 1));
        let due = std::mem::replace(&mut self.queue, later);
        due.into_values().flatten().collect()
    }

    pub fn in_flight(&self) -> usize {
        self.queue.values().map(Vec::len).sum()
    }
}
