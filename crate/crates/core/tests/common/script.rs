//! A scripted world for protocol tests: vehicles on one northbound road at
//! scripted positions, a lossless channel that delivers to everyone within
//! range in the same tick, and the simulator's per-tick order (beacons,
//! delivery, then timers vehicle by vehicle).

use std::collections::{BTreeMap, BTreeSet};

use sdpc::geom::Point;
use sdpc::network::{Heading, NextDirection};
use sdpc::protocol::node::MergeCommit;
use sdpc::protocol::{
    Effects, Message, MessageKind, Node, ProtocolParams, SelfView, Status, Target, TransitionEvent,
};
use sdpc::VehicleId;

pub const DT: f64 = 0.1;
pub const SPEED: f64 = 20.0;

/// Position along the road as a function of time, and the speed reported.
type Track = (Box<dyn Fn(f64) -> f64>, f64);

pub struct Script {
    pub params: ProtocolParams,
    pub nodes: BTreeMap<VehicleId, Node>,
    tracks: BTreeMap<VehicleId, Track>,
    /// Vehicles whose transmissions are lost.
    pub muted: BTreeSet<VehicleId>,
    tick: u64,
    pub log: Vec<TransitionEvent>,
    /// (time, kind, sender) of every transmission.
    pub sent: Vec<(f64, MessageKind, VehicleId)>,
    pub merges: Vec<MergeCommit>,
}

fn view(y: f64, v: f64) -> SelfView {
    SelfView {
        position: Point::new(0.0, y),
        velocity: v,
        acceleration: 0.0,
        max_velocity: v,
        heading: Heading::N,
        next_direction: NextDirection::Heading(Heading::N),
    }
}

impl Script {
    pub fn new(params: ProtocolParams) -> Self {
        Self {
            params,
            nodes: BTreeMap::new(),
            tracks: BTreeMap::new(),
            muted: BTreeSet::new(),
            tick: 0,
            log: Vec::new(),
            sent: Vec::new(),
            merges: Vec::new(),
        }
    }

    /// Time of the next tick to be processed.
    pub fn now(&self) -> f64 {
        self.tick as f64 * DT
    }

    /// Adds a vehicle whose position along the road is `track(t)` and
    /// which reports speed `v`.
    pub fn add(&mut self, id: VehicleId, v: f64, track: impl Fn(f64) -> f64 + 'static) {
        let now = self.now();
        self.nodes
            .insert(id, Node::new(id, view(track(now), v), now));
        self.tracks.insert(id, (Box::new(track), v));
    }

    /// Adds a vehicle driving at `v` that was at `y0` at t = 0.
    pub fn drive(&mut self, id: VehicleId, y0: f64, v: f64) {
        self.add(id, v, move |t| y0 + v * t);
    }

    /// Adds a vehicle cruising at [`SPEED`] from `y0` at t = 0.
    pub fn cruise(&mut self, id: VehicleId, y0: f64) {
        self.drive(id, y0, SPEED);
    }

    fn y(&self, id: VehicleId) -> f64 {
        self.nodes[&id].me.position.y
    }

    fn in_range(&self, a: VehicleId, b: VehicleId) -> bool {
        (self.y(a) - self.y(b)).abs() <= self.params.tr()
    }

    fn absorb(&mut self, fx: Effects, queue: &mut Vec<Message>) {
        self.log.extend(fx.transitions);
        self.merges.extend(fx.merges);
        queue.extend(fx.messages);
    }

    fn deliver(&mut self, mut queue: Vec<Message>) {
        let now = self.now();
        for _ in 0..32 {
            if queue.is_empty() {
                return;
            }
            let mut next = Vec::new();
            for msg in std::mem::take(&mut queue) {
                if self.muted.contains(&msg.sender) || !self.nodes.contains_key(&msg.sender) {
                    continue;
                }
                self.sent.push((now, msg.kind, msg.sender));
                let to: Vec<VehicleId> = match msg.target {
                    Target::Broadcast => self
                        .nodes
                        .keys()
                        .copied()
                        .filter(|&r| r != msg.sender)
                        .collect(),
                    Target::Vehicle(r) => vec![r],
                };
                for r in to {
                    if !self.nodes.contains_key(&r) || !self.in_range(msg.sender, r) {
                        continue;
                    }
                    let mut fx = Effects::default();
                    let params = self.params.clone();
                    self.nodes
                        .get_mut(&r)
                        .unwrap()
                        .on_message(&msg, now, &params, &mut fx);
                    self.absorb(fx, &mut next);
                }
            }
            queue = next;
        }
        panic!("messages still in flight after 32 rounds");
    }

    fn process_tick(&mut self) {
        let now = self.now();
        let params = self.params.clone();
        for (id, node) in self.nodes.iter_mut() {
            let (track, v) = &self.tracks[id];
            node.update_self(view(track(now), *v));
        }
        let ids: Vec<VehicleId> = self.nodes.keys().copied().collect();
        let beacons: Vec<Message> = ids
            .iter()
            .filter_map(|id| self.nodes.get_mut(id).unwrap().beacon(now, &params))
            .collect();
        self.deliver(beacons);
        for id in ids {
            let Some(node) = self.nodes.get_mut(&id) else {
                continue;
            };
            let mut fx = Effects::default();
            node.on_tick(now, &params, &mut fx);
            let mut queue = Vec::new();
            self.absorb(fx, &mut queue);
            self.deliver(queue);
        }
        self.tick += 1;
    }

    /// Processes every tick up to and including time `t`.
    pub fn run_to(&mut self, t: f64) {
        while self.now() <= t + 1e-9 {
            self.process_tick();
        }
    }

    /// Asks a member to leave its cluster without leaving the road.
    pub fn leave(&mut self, id: VehicleId) {
        let now = self.now();
        let params = self.params.clone();
        let mut fx = Effects::default();
        self.nodes
            .get_mut(&id)
            .unwrap()
            .depart(now, &params, &mut fx);
        let mut queue = Vec::new();
        self.absorb(fx, &mut queue);
        self.deliver(queue);
    }

    /// Removes a vehicle from the road.
    pub fn depart(&mut self, id: VehicleId) {
        self.leave(id);
        let mut fx = Effects::default();
        self.nodes[&id].finish_departure(self.now(), &mut fx);
        self.log.extend(fx.transitions);
        self.nodes.remove(&id);
        self.tracks.remove(&id);
    }

    pub fn status(&self, id: VehicleId) -> Status {
        self.nodes[&id].status()
    }

    pub fn head_of(&self, id: VehicleId) -> Option<VehicleId> {
        self.nodes[&id].head()
    }

    pub fn roster(&self, id: VehicleId) -> Vec<VehicleId> {
        self.nodes[&id]
            .roster()
            .map(|r| r.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn sent_since(&self, t: f64) -> Vec<MessageKind> {
        self.sent
            .iter()
            .filter(|(at, k, _)| *at >= t - 1e-9 && *k != MessageKind::VehAdv)
            .map(|(_, k, _)| *k)
            .collect()
    }

    pub fn count(&self, kind: MessageKind) -> usize {
        self.sent.iter().filter(|(_, k, _)| *k == kind).count()
    }
}
