//! Vehicle kinematics: car following, overtaking, turning at intersections
//! and Poisson arrivals at the entry nodes.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::network::{
    EdgeId, NodeId, RoadNetwork, Route, RoutePosition, TurnProbabilities, TurnProfile,
};
use crate::VehicleId;

/// Minimum distance kept between vehicles sharing a lane after every tick.
pub const MIN_GAP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Controller {
    /// Proportional controller on the headway and speed errors.
    ConstantHeadway,
    /// Intelligent driver model.
    Idm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityConfig {
    pub controller: Controller,
    /// m/s²
    pub accel_limit: f64,
    /// m/s², positive
    pub decel_limit: f64,
    /// s
    pub headway: f64,
    /// m
    pub standstill_gap: f64,
    pub gap_gain: f64,
    pub speed_gain: f64,
    /// m/s a follower must be able to exceed its leader by before overtaking.
    pub overtake_hysteresis: f64,
    pub overtaking: bool,
    pub turn_speed_min: f64,
    pub turn_speed_max: f64,
    pub entry_speed_min: f64,
    pub entry_speed_max: f64,
    /// Share of the fleet whose top speed is jittered around the configured value.
    pub jitter_fraction: f64,
    /// Relative half-width of the top speed jitter.
    pub jitter: f64,
    pub max_velocity_floor: f64,
    pub max_velocity_ceiling: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            controller: Controller::ConstantHeadway,
            accel_limit: 10.0,
            decel_limit: 5.0,
            headway: 2.0,
            standstill_gap: 2.0,
            gap_gain: 0.5,
            speed_gain: 1.0,
            overtake_hysteresis: 2.0,
            overtaking: true,
            turn_speed_min: 3.0,
            turn_speed_max: 8.0,
            entry_speed_min: 10.0,
            entry_speed_max: 30.0,
            jitter_fraction: 0.5,
            jitter: 0.1,
            max_velocity_floor: 10.0,
            max_velocity_ceiling: 35.0,
        }
    }
}

impl MobilityConfig {
    /// Desired gap behind a leader at velocity `v`.
    pub fn target_gap(&self, v: f64) -> f64 {
        (self.headway * v).max(self.standstill_gap)
    }

    /// Commanded acceleration for a vehicle given an optional `(gap, leader velocity)`.
    pub fn acceleration(&self, kin: &Kinematics, leader: Option<(f64, f64)>, dt: f64) -> f64 {
        let v = kin.velocity;
        let a = match self.controller {
            Controller::ConstantHeadway => {
                let free = (kin.max_velocity - v) / dt;
                match leader {
                    Some((gap, vl)) => {
                        let follow =
                            self.gap_gain * (gap - self.target_gap(v)) + self.speed_gain * (vl - v);
                        free.min(follow)
                    }
                    None => free,
                }
            }
            Controller::Idm => {
                let v0 = kin.max_velocity.max(1e-9);
                let mut a = self.accel_limit * (1.0 - (v / v0).powi(4));
                if let Some((gap, vl)) = leader {
                    let s_star = self.standstill_gap
                        + v * self.headway
                        + v * (v - vl) / (2.0 * (self.accel_limit * self.decel_limit).sqrt());
                    let s = gap.max(1e-3);
                    a -= self.accel_limit * (s_star.max(0.0) / s).powi(2);
                }
                // Never command more than is needed to reach the top speed this tick.
                a.min((kin.max_velocity - v) / dt)
            }
        };
        a.clamp(-self.decel_limit, self.accel_limit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kinematics {
    pub velocity: f64,
    pub acceleration: f64,
    pub max_velocity: f64,
    pub entry_velocity: f64,
}

impl Kinematics {
    pub fn new(entry_velocity: f64, max_velocity: f64) -> Self {
        Self {
            velocity: entry_velocity,
            acceleration: 0.0,
            max_velocity,
            entry_velocity,
        }
    }
}

/// Advances one vehicle by `dt` and returns its new kinematics and the
/// distance travelled.
///
/// The displacement uses the mean of the old and new velocity, which is
/// `v·dt + a·dt²/2` whenever the velocity clamp is not hit.
pub fn step_vehicle(
    cfg: &MobilityConfig,
    kin: &Kinematics,
    leader: Option<(f64, f64)>,
    dt: f64,
) -> (Kinematics, f64) {
    let a = cfg.acceleration(kin, leader, dt);
    let v0 = kin.velocity;
    let v1 = (v0 + a * dt).clamp(0.0, kin.max_velocity);
    let next = Kinematics {
        velocity: v1,
        acceleration: a,
        ..*kin
    };
    (next, 0.5 * (v0 + v1) * dt)
}

/// Whether a follower should pull out to pass its leader.
pub fn overtake_decision(
    cfg: &MobilityConfig,
    follower: &Kinematics,
    leader: &Kinematics,
    gap: f64,
    adjacent_lane_clear: bool,
) -> bool {
    adjacent_lane_clear
        && follower.max_velocity > leader.velocity + cfg.overtake_hysteresis
        && gap < 1.5 * cfg.target_gap(follower.velocity)
}

/// Speed after clearing an intersection.
pub fn intersection_speed<R: Rng + ?Sized>(
    cfg: &MobilityConfig,
    velocity: f64,
    turning: bool,
    rng: &mut R,
) -> f64 {
    if turning {
        velocity.min(rng.random_range(cfg.turn_speed_min..=cfg.turn_speed_max))
    } else {
        velocity
    }
}

/// Poisson arrivals with a fixed total count.
#[derive(Debug, Clone)]
pub struct ArrivalProcess {
    exp: Exp<f64>,
    next_arrival: f64,
    remaining: u32,
}

impl ArrivalProcess {
    pub fn new<R: Rng + ?Sized>(rate: f64, total: u32, rng: &mut R) -> Self {
        assert!(rate > 0.0, "arrival rate must be positive");
        let exp = Exp::new(rate).expect("positive rate");
        let next_arrival = exp.sample(rng);
        Self {
            exp,
            next_arrival,
            remaining: total,
        }
    }

    pub fn remaining(&self) -> u32 {
        self.remaining
    }

    /// Arrival times falling at or before `now`.
    pub fn due<R: Rng + ?Sized>(&mut self, now: f64, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::new();
        while self.remaining > 0 && self.next_arrival <= now {
            out.push(self.next_arrival);
            self.remaining -= 1;
            self.next_arrival += self.exp.sample(rng);
        }
        out
    }
}

/// Static attributes drawn for a new vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct SpawnSpec {
    pub entry: NodeId,
    pub kinematics: Kinematics,
    pub route: Route,
    pub profile: TurnProfile,
    pub arrival: f64,
}

/// Draws a vehicle's top speed, entry speed and route.
#[allow(clippy::too_many_arguments)]
pub fn draw_spawn<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    cfg: &MobilityConfig,
    net: &RoadNetwork,
    max_velocity: f64,
    profile: TurnProfile,
    turn_probabilities: &TurnProbabilities,
    arrival: f64,
    attr_rng: &mut R1,
    route_rng: &mut R2,
) -> SpawnSpec {
    let entries = net.entries();
    let entry = entries[attr_rng.random_range(0..entries.len())];
    let mut vmax = max_velocity;
    if attr_rng.random::<f64>() < cfg.jitter_fraction {
        let f = attr_rng.random_range(-cfg.jitter..=cfg.jitter);
        vmax *= 1.0 + f;
    }
    let vmax = vmax.clamp(cfg.max_velocity_floor, cfg.max_velocity_ceiling);
    let hi = cfg
        .entry_speed_max
        .min(vmax)
        .min(max_velocity)
        .max(cfg.entry_speed_min);
    let entry_v = attr_rng.random_range(cfg.entry_speed_min..=hi).min(vmax);
    let route = net
        .sample_route(entry, profile.probability(turn_probabilities), route_rng)
        .expect("validated network yields routes from every entry");
    SpawnSpec {
        entry,
        kinematics: Kinematics::new(entry_v, vmax),
        route,
        profile,
        arrival,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: VehicleId,
    pub kin: Kinematics,
    pub route: Route,
    pub route_index: usize,
    pub pos: RoutePosition,
    pub profile: TurnProfile,
    pub arrival: f64,
    pub entered_at: f64,
    /// Vehicle being passed while in the second lane.
    pub overtaking: Option<VehicleId>,
}

impl Vehicle {
    pub fn next_edge(&self) -> Option<EdgeId> {
        self.route.edges.get(self.route_index + 1).copied()
    }

    pub fn on_final_edge(&self) -> bool {
        self.route_index + 1 == self.route.edges.len()
    }
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct StepOutcome {
    /// Vehicles that left the road this tick, positioned at their exit node.
    pub exited: Vec<Vehicle>,
}

/// All vehicles on the road plus the ones queued at an entry.
#[derive(Debug, Clone, Default)]
pub struct Traffic {
    pub vehicles: BTreeMap<VehicleId, Vehicle>,
    pending: BTreeMap<NodeId, VecDeque<(VehicleId, SpawnSpec)>>,
    last_entry: Option<f64>,
}

type LaneIndex = BTreeMap<(EdgeId, u8), Vec<(f64, VehicleId)>>;

impl Traffic {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pending_count(&self) -> usize {
        self.pending.values().map(VecDeque::len).sum()
    }

    /// Time the most recent vehicle was placed on the road.
    pub fn last_entry(&self) -> Option<f64> {
        self.last_entry
    }

    pub fn enqueue(&mut self, id: VehicleId, spec: SpawnSpec) {
        self.pending
            .entry(spec.entry)
            .or_default()
            .push_back((id, spec));
    }

    /// Places queued vehicles whose entry lane has room and returns their ids.
    pub fn admit(&mut self, cfg: &MobilityConfig, now: f64) -> Vec<VehicleId> {
        let mut admitted = Vec::new();
        let entries: Vec<NodeId> = self.pending.keys().copied().collect();
        for entry in entries {
            while let Some((_, spec)) = self.pending[&entry].front() {
                let edge = spec.route.edges[0];
                let rear = self.rearmost(edge, 0);
                let mut kin = spec.kinematics;
                if let Some((off, v)) = rear {
                    if off < cfg.standstill_gap {
                        break;
                    }
                    if off < cfg.target_gap(kin.velocity) {
                        kin.velocity = kin.velocity.min(v);
                    }
                }
                let (id, spec) = self.pending.get_mut(&entry).unwrap().pop_front().unwrap();
                self.vehicles.insert(
                    id,
                    Vehicle {
                        id,
                        kin,
                        route: spec.route,
                        route_index: 0,
                        pos: RoutePosition::new(edge, 0.0, 0),
                        profile: spec.profile,
                        arrival: spec.arrival,
                        entered_at: now,
                        overtaking: None,
                    },
                );
                self.last_entry = Some(now);
                admitted.push(id);
            }
        }
        self.pending.retain(|_, q| !q.is_empty());
        admitted
    }

    fn rearmost(&self, edge: EdgeId, lane: u8) -> Option<(f64, f64)> {
        self.vehicles
            .values()
            .filter(|v| v.pos.edge == edge && v.pos.lane == lane)
            .map(|v| (v.pos.offset, v.kin.velocity))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    fn lane_index(&self) -> LaneIndex {
        let mut idx: LaneIndex = BTreeMap::new();
        for v in self.vehicles.values() {
            idx.entry((v.pos.edge, v.pos.lane))
                .or_default()
                .push((v.pos.offset, v.id));
        }
        for list in idx.values_mut() {
            list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        idx
    }

    /// Nearest vehicle ahead in the same lane, looking onto the next route edge
    /// when the current edge is clear. Returns `(leader id, gap)`.
    fn leader_of(
        &self,
        idx: &LaneIndex,
        net: &RoadNetwork,
        v: &Vehicle,
    ) -> Option<(VehicleId, f64)> {
        if let Some(list) = idx.get(&(v.pos.edge, v.pos.lane)) {
            let ahead = list
                .iter()
                .filter(|(off, id)| {
                    *id != v.id && (*off > v.pos.offset || (*off == v.pos.offset && *id < v.id))
                })
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some(&(off, id)) = ahead {
                return Some((id, off - v.pos.offset));
            }
        }
        let next = v.next_edge()?;
        let len = net.edge(v.pos.edge).ok()?.length;
        let lanes = net.edge(next).ok()?.lanes;
        let lane = v.pos.lane.min(lanes - 1);
        let &(off, id) = idx.get(&(next, lane))?.first()?;
        Some((id, len - v.pos.offset + off))
    }

    fn lane_clear(&self, idx: &LaneIndex, edge: EdgeId, lane: u8, lo: f64, hi: f64) -> bool {
        idx.get(&(edge, lane))
            .is_none_or(|list| list.iter().all(|(off, _)| *off < lo || *off > hi))
    }

    fn move_in_index(
        idx: &mut LaneIndex,
        id: VehicleId,
        edge: EdgeId,
        from: u8,
        to: u8,
        offset: f64,
    ) {
        if let Some(list) = idx.get_mut(&(edge, from)) {
            list.retain(|(_, i)| *i != id);
        }
        let list = idx.entry((edge, to)).or_default();
        list.push((offset, id));
        list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }

    fn change_lanes(&mut self, cfg: &MobilityConfig, net: &RoadNetwork, idx: &mut LaneIndex) {
        let ids: Vec<VehicleId> = self.vehicles.keys().copied().collect();
        for id in ids {
            let v = &self.vehicles[&id];
            let Ok(edge) = net.edge(v.pos.edge) else {
                continue;
            };
            let safe = cfg.target_gap(v.kin.velocity);
            let off = v.pos.offset;
            if v.pos.lane == 0 && edge.lanes >= 2 {
                let Some((lid, gap)) = self.leader_of(idx, net, v) else {
                    continue;
                };
                let leader = &self.vehicles[&lid];
                if leader.pos.edge != v.pos.edge {
                    continue;
                }
                let clear =
                    self.lane_clear(idx, v.pos.edge, 1, off - safe, leader.pos.offset + safe);
                if overtake_decision(cfg, &v.kin, &leader.kin, gap, clear) {
                    Self::move_in_index(idx, id, v.pos.edge, 0, 1, off);
                    let v = self.vehicles.get_mut(&id).unwrap();
                    v.pos.lane = 1;
                    v.overtaking = Some(lid);
                }
            } else if v.pos.lane > 0 {
                let passed = match v.overtaking.and_then(|o| self.vehicles.get(&o)) {
                    Some(o) if o.pos.edge == v.pos.edge => {
                        off - o.pos.offset >= cfg.target_gap(o.kin.velocity)
                    }
                    _ => true,
                };
                let back = cfg.target_gap(cfg.max_velocity_ceiling).max(safe);
                if passed && self.lane_clear(idx, v.pos.edge, 0, off - back, off + safe) {
                    Self::move_in_index(idx, id, v.pos.edge, v.pos.lane, 0, off);
                    let v = self.vehicles.get_mut(&id).unwrap();
                    v.pos.lane = 0;
                    v.overtaking = None;
                }
            }
        }
    }

    /// Advances every vehicle by one tick.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        cfg: &MobilityConfig,
        net: &RoadNetwork,
        dt: f64,
        turn_rng: &mut R,
    ) -> StepOutcome {
        let mut idx = self.lane_index();
        if cfg.overtaking {
            self.change_lanes(cfg, net, &mut idx);
        }

        let mut updates = Vec::with_capacity(self.vehicles.len());
        for v in self.vehicles.values() {
            let leader = self
                .leader_of(&idx, net, v)
                .map(|(lid, gap)| (gap, self.vehicles[&lid].kin.velocity));
            let (kin, ds) = step_vehicle(cfg, &v.kin, leader, dt);
            updates.push((v.id, kin, ds));
        }
        for (id, kin, ds) in updates {
            let v = self.vehicles.get_mut(&id).unwrap();
            v.kin = kin;
            v.pos.offset += ds;
        }

        let mut crossing: Vec<(EdgeId, f64, VehicleId)> = Vec::new();
        for v in self.vehicles.values() {
            let len = net.edge(v.pos.edge).expect("vehicle on known edge").length;
            if v.pos.offset > len {
                crossing.push((v.pos.edge, v.pos.offset - len, v.id));
            }
        }
        crossing.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));

        let mut exiting = Vec::new();
        for (edge_id, overflow, id) in crossing {
            let edge = net.edge(edge_id).expect("known edge").clone();
            let v = &self.vehicles[&id];
            let Some(next_id) = v.next_edge() else {
                exiting.push(id);
                continue;
            };
            let next = net.edge(next_id).expect("route edges exist");
            let lane = v.pos.lane.min(next.lanes - 1);
            let mut offset = overflow.min(next.length);
            let rear = self.rearmost(next_id, lane);
            let mut cap = f64::INFINITY;
            if let Some((rear_off, rear_v)) = rear {
                if rear_off - offset < cfg.standstill_gap {
                    offset = rear_off - cfg.standstill_gap;
                    cap = rear_v;
                }
            }
            let v = self.vehicles.get_mut(&id).unwrap();
            if offset < 0.0 {
                // Blocked at the junction until the next edge frees up.
                v.pos.offset = edge.length;
                v.kin.velocity = 0.0;
                v.kin.acceleration = 0.0;
                continue;
            }
            let turning = next.heading != edge.heading;
            v.kin.velocity = intersection_speed(cfg, v.kin.velocity, turning, turn_rng).min(cap);
            v.pos = RoutePosition::new(next_id, offset, lane);
            v.route_index += 1;
            if turning {
                v.overtaking = None;
            }
        }

        self.separate(net);
        let mut outcome = StepOutcome::default();
        for id in exiting {
            let mut v = self.vehicles.remove(&id).unwrap();
            v.pos.offset = net
                .edge(v.pos.edge)
                .map(|e| e.length)
                .unwrap_or(v.pos.offset);
            outcome.exited.push(v);
        }
        outcome
    }

    /// Pushes back any vehicle that ended the tick closer than [`MIN_GAP`]
    /// to the vehicle ahead in its lane.
    fn separate(&mut self, net: &RoadNetwork) {
        let mut idx = self.lane_index();
        for ((edge, _), list) in idx.iter_mut() {
            let len = net.edge(*edge).map(|e| e.length).unwrap_or(f64::INFINITY);
            let mut ahead: Option<(f64, f64)> = None;
            for &(off, id) in list.iter().rev() {
                if off > len {
                    // Exiting this tick; not part of the lane anymore.
                    continue;
                }
                let v = self.vehicles.get_mut(&id).unwrap();
                if let Some((lead_off, lead_v)) = ahead {
                    if v.pos.offset > lead_off - MIN_GAP {
                        v.pos.offset = (lead_off - MIN_GAP).max(0.0);
                        v.kin.velocity = v.kin.velocity.min(lead_v);
                    }
                }
                ahead = Some((v.pos.offset, v.kin.velocity));
            }
        }
    }
}
