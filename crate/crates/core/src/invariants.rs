//! Runtime checks on the clustering state, run once per tick.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::geom::Point;
use crate::protocol::node::MergeCommit;
use crate::protocol::{transition_is_legal, Node, StateTag, Status, TransitionEvent};
use crate::VehicleId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvariantKind {
    StateExclusivity,
    ReferentialIntegrity,
    JoinCoverage,
    TransitionLegality,
    MergeSafety,
}

impl InvariantKind {
    pub const ALL: [InvariantKind; 5] = [
        InvariantKind::StateExclusivity,
        InvariantKind::ReferentialIntegrity,
        InvariantKind::JoinCoverage,
        InvariantKind::TransitionLegality,
        InvariantKind::MergeSafety,
    ];
}

impl fmt::Display for InvariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InvariantKind::StateExclusivity => "state-exclusivity",
            InvariantKind::ReferentialIntegrity => "referential-integrity",
            InvariantKind::JoinCoverage => "join-coverage",
            InvariantKind::TransitionLegality => "transition-legality",
            InvariantKind::MergeSafety => "merge-safety",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub time: f64,
    pub kind: InvariantKind,
    pub vehicle: VehicleId,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} {} vehicle {}: {}",
            self.time, self.kind, self.vehicle, self.detail
        )
    }
}

/// Everything the checker needs about one tick.
pub struct TickView<'a> {
    pub time: f64,
    pub nodes: &'a BTreeMap<VehicleId, Node>,
    pub positions: &'a BTreeMap<VehicleId, Point>,
    pub transitions: &'a [TransitionEvent],
    pub merges: &'a [MergeCommit],
}

#[derive(Debug, Clone)]
pub struct InvariantChecker {
    tr: f64,
    cm_timer: f64,
    /// State each vehicle was last logged in.
    logged: BTreeMap<VehicleId, StateTag>,
    /// Heads that left the road, with the time they left. Members out of
    /// range cannot hear the dissolve notice and fall back on their own
    /// timer, so they may name such a head for up to `cm_timer`.
    departed_heads: BTreeMap<VehicleId, f64>,
    /// How long a member may name a head that does not list it while the
    /// handoff or merge notices are still in flight. Zero without delay.
    settle: f64,
    /// (member, head) references that failed the check, with first sighting.
    dangling: BTreeMap<(VehicleId, VehicleId), f64>,
    violations: Vec<Violation>,
}

impl InvariantChecker {
    pub fn new(tr: f64, cm_timer: f64) -> Self {
        Self {
            tr,
            cm_timer,
            logged: BTreeMap::new(),
            departed_heads: BTreeMap::new(),
            settle: 0.0,
            dangling: BTreeMap::new(),
            violations: Vec::new(),
        }
    }

    /// Tolerate dangling member references for up to two channel hops.
    pub fn with_delay(mut self, delay_ticks: u32, dt: f64) -> Self {
        self.settle = 2.0 * f64::from(delay_ticks) * dt;
        self
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    fn flag(&mut self, time: f64, kind: InvariantKind, vehicle: VehicleId, detail: String) {
        self.violations.push(Violation {
            time,
            kind,
            vehicle,
            detail,
        });
    }

    pub fn check(&mut self, v: &TickView<'_>) {
        let now = v.time;
        for e in v.transitions {
            let prev = self.logged.get(&e.vehicle).copied().unwrap_or(StateTag::Tm);
            if prev != e.from {
                self.flag(
                    now,
                    InvariantKind::TransitionLegality,
                    e.vehicle,
                    format!("logged {} -> {} while in {}", e.from, e.to, prev),
                );
            }
            if !transition_is_legal(e.from, e.to, e.cause) {
                self.flag(
                    now,
                    InvariantKind::TransitionLegality,
                    e.vehicle,
                    format!("{} -> {} by {}", e.from, e.to, e.cause.name()),
                );
            }
            if e.to == StateTag::Out && e.from == StateTag::Ch {
                self.departed_heads.insert(e.vehicle, e.time);
            }
            self.logged.insert(e.vehicle, e.to);

            if e.from == StateTag::Tm && e.to == StateTag::Cm {
                let head = v.nodes.get(&e.vehicle).and_then(Node::head);
                let d = head.and_then(|h| {
                    Some(v.positions.get(&e.vehicle)?.distance(*v.positions.get(&h)?))
                });
                match d {
                    Some(d) if d <= self.tr => {}
                    _ => self.flag(
                        now,
                        InvariantKind::JoinCoverage,
                        e.vehicle,
                        format!("joined {head:?} at distance {d:?}"),
                    ),
                }
            }
        }
        let cm_timer = self.cm_timer;
        self.departed_heads
            .retain(|_, t| now - *t <= cm_timer + 1e-9);

        if v.nodes.len() != v.positions.len()
            || v.nodes.keys().any(|id| !v.positions.contains_key(id))
        {
            self.flag(
                now,
                InvariantKind::StateExclusivity,
                0,
                "node set differs from vehicles on the road".into(),
            );
        }
        let mut dangling = Vec::new();
        for (&id, node) in v.nodes {
            let status: StateTag = node.status().into();
            let logged = self.logged.get(&id).copied().unwrap_or(StateTag::Tm);
            if status != logged {
                self.flag(
                    now,
                    InvariantKind::StateExclusivity,
                    id,
                    format!("in {status} but last logged {logged}"),
                );
            }
            if let Some(h) = node.head() {
                let ok = v.nodes.get(&h).is_some_and(|hn| {
                    hn.status() == Status::Ch && hn.roster().is_some_and(|r| r.contains_key(&id))
                });
                if !ok && !(self.departed_heads.contains_key(&h) && !v.nodes.contains_key(&h)) {
                    dangling.push((id, h));
                }
            }
        }
        let mut seen = BTreeMap::new();
        for (id, h) in dangling {
            let first = self.dangling.get(&(id, h)).copied().unwrap_or(now);
            seen.insert((id, h), first);
            if now - first >= self.settle - 1e-9 {
                self.flag(
                    now,
                    InvariantKind::ReferentialIntegrity,
                    id,
                    format!("head {h} does not list it"),
                );
            }
        }
        self.dangling = seen;

        for m in v.merges {
            let Some(hp) = v.positions.get(&m.plan.new_head) else {
                continue;
            };
            for id in &m.plan.members {
                if let Some(p) = v.positions.get(id) {
                    let d = p.distance(*hp);
                    if d > self.tr {
                        self.flag(
                            now,
                            InvariantKind::MergeSafety,
                            *id,
                            format!("{d:.1} m from new head {}", m.plan.new_head),
                        );
                    }
                }
            }
        }
    }
}
