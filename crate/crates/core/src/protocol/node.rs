//! Per-vehicle protocol state and message handling.

use std::collections::BTreeMap;

use super::cluster::{periodic_reelection, select_gateways, try_merge, ClusterView, MergePlan};
use super::election::{form_clusters, Candidate};
use super::{
    elapsed, Cause, Message, MessageKind, Payload, ProtocolParams, RosterNotice, RosterReason,
    StateTag, Status, Target, TransitionEvent, VehInfo,
};
use crate::geom::Point;
use crate::mobility::Kinematics;
use crate::network::{Heading, NextDirection};
use crate::prediction::{expected_ch_lifetime, profile_from_kinematics, MotionSample};
use crate::VehicleId;

/// What the vehicle knows about itself this tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfView {
    pub position: Point,
    pub velocity: f64,
    pub acceleration: f64,
    pub max_velocity: f64,
    pub heading: Heading,
    pub next_direction: NextDirection,
}

/// A merge decided by an arbitrating head.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeCommit {
    pub time: f64,
    pub plan: MergePlan,
}

/// Side effects of handling one event.
#[derive(Debug, Default)]
pub struct Effects {
    pub messages: Vec<Message>,
    pub transitions: Vec<TransitionEvent>,
    pub merges: Vec<MergeCommit>,
    /// Requests dropped because the sender was not a known neighbor.
    pub stale: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub info: VehInfo,
    pub heard_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RosterEntry {
    /// The member has acknowledged joining.
    pub confirmed: bool,
    pub last_heard: f64,
    pub added_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalState {
    pub since: f64,
    pub pending_join: Option<(VehicleId, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadState {
    pub since: f64,
    pub roster: BTreeMap<VehicleId, RosterEntry>,
    pub last_reelection: f64,
    /// Other heads in range and when they were first seen.
    pub overlap: BTreeMap<VehicleId, f64>,
    pub pending_merge: Option<(VehicleId, f64)>,
    pub gateways: (Option<VehicleId>, Option<VehicleId>),
    gateways_dirty: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemberState {
    pub head: VehicleId,
    pub since: f64,
    pub last_heard_head: f64,
    pub gateway: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Role {
    Temporal(TemporalState),
    Head(HeadState),
    Member(MemberState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: VehicleId,
    pub role: Role,
    pub me: SelfView,
    neighbors: BTreeMap<VehicleId, Neighbor>,
    last_beacon: Option<f64>,
}

fn roster_entry(now: f64, confirmed: bool) -> RosterEntry {
    RosterEntry {
        confirmed,
        last_heard: now,
        added_at: now,
    }
}

impl Node {
    pub fn new(id: VehicleId, me: SelfView, now: f64) -> Self {
        Self {
            id,
            role: Role::Temporal(TemporalState {
                since: now,
                pending_join: None,
            }),
            me,
            neighbors: BTreeMap::new(),
            last_beacon: None,
        }
    }

    pub fn status(&self) -> Status {
        match self.role {
            Role::Temporal(_) => Status::Tm,
            Role::Head(_) => Status::Ch,
            Role::Member(_) => Status::Cm,
        }
    }

    /// Head this vehicle belongs to, set only for members.
    pub fn head(&self) -> Option<VehicleId> {
        match &self.role {
            Role::Member(m) => Some(m.head),
            _ => None,
        }
    }

    /// Identifier of the cluster this vehicle heads.
    pub fn cluster_id(&self) -> Option<VehicleId> {
        matches!(self.role, Role::Head(_)).then_some(self.id)
    }

    pub fn roster(&self) -> Option<&BTreeMap<VehicleId, RosterEntry>> {
        match &self.role {
            Role::Head(h) => Some(&h.roster),
            _ => None,
        }
    }

    pub fn head_state(&self) -> Option<&HeadState> {
        match &self.role {
            Role::Head(h) => Some(h),
            _ => None,
        }
    }

    pub fn neighbors(&self) -> &BTreeMap<VehicleId, Neighbor> {
        &self.neighbors
    }

    pub fn update_self(&mut self, me: SelfView) {
        self.me = me;
    }

    fn kinematics(&self) -> Kinematics {
        Kinematics {
            velocity: self.me.velocity,
            acceleration: self.me.acceleration,
            max_velocity: self.me.max_velocity,
            entry_velocity: self.me.velocity,
        }
    }

    fn self_candidate(&self, now: f64, horizon: f64) -> Candidate {
        Candidate {
            sample: MotionSample::new(
                self.id,
                self.me.position,
                self.me.velocity,
                self.me.heading,
                now,
            )
            .with_profile(profile_from_kinematics(&self.kinematics(), horizon)),
            next_direction: self.me.next_direction,
        }
    }

    fn neighbor_candidate(&self, id: VehicleId, now: f64, horizon: f64) -> Option<Candidate> {
        self.neighbors
            .get(&id)
            .map(|n| n.info.candidate_at(now, horizon))
    }

    /// Estimated current distance to a neighbor.
    fn distance_to(&self, id: VehicleId, now: f64) -> Option<f64> {
        self.neighbors.get(&id).map(|n| {
            n.info
                .sample_at(now, 0.0)
                .position
                .distance(self.me.position)
        })
    }

    pub fn info(&self, now: f64, params: &ProtocolParams) -> VehInfo {
        let horizon = params.election.horizon;
        let mut group = vec![self.self_candidate(now, horizon)];
        group.extend(
            self.neighbors
                .values()
                .map(|n| n.info.candidate_at(now, horizon)),
        );
        let rank = params.policy.score(self.id, &group, &params.election);
        let lifetime = matches!(self.role, Role::Temporal(_)).then(|| {
            let samples: Vec<MotionSample> = group.iter().map(|c| c.sample.clone()).collect();
            expected_ch_lifetime(self.id, &samples, params.tr(), params.election.lifetime_cap)
                .expect("own sample is in the group")
        });
        VehInfo {
            id: self.id,
            time: now,
            position: self.me.position,
            velocity: self.me.velocity,
            acceleration: self.me.acceleration,
            max_velocity: self.me.max_velocity,
            heading: self.me.heading,
            next_direction: self.me.next_direction,
            status: self.status(),
            cluster_head: self.head(),
            degree: self.neighbors.len() as u32,
            expected_ch_lifetime: lifetime,
            rank,
        }
    }

    fn send(
        &self,
        kind: MessageKind,
        target: Target,
        payload: Payload,
        now: f64,
        params: &ProtocolParams,
        fx: &mut Effects,
    ) {
        fx.messages.push(Message {
            kind,
            sender: self.id,
            target,
            info: self.info(now, params),
            payload,
        });
    }

    fn announce(
        &self,
        head: VehicleId,
        members: Vec<VehicleId>,
        reason: RosterReason,
        now: f64,
        params: &ProtocolParams,
        fx: &mut Effects,
    ) {
        self.send(
            MessageKind::ChResp,
            Target::Broadcast,
            Payload::Roster(RosterNotice {
                head,
                members,
                reason,
            }),
            now,
            params,
            fx,
        );
    }

    /// Periodic advertisement: the first call always beacons, later calls
    /// once per beacon period.
    pub fn beacon(&mut self, now: f64, params: &ProtocolParams) -> Option<Message> {
        if let Some(last) = self.last_beacon {
            if !elapsed(now, last, params.beacon_period) {
                return None;
            }
        }
        self.last_beacon = Some(now);
        Some(Message {
            kind: MessageKind::VehAdv,
            sender: self.id,
            target: Target::Broadcast,
            info: self.info(now, params),
            payload: Payload::None,
        })
    }

    fn log(&self, from: Status, now: f64, cause: Cause, fx: &mut Effects) {
        let to = self.status();
        if from != to {
            fx.transitions.push(TransitionEvent {
                time: now,
                vehicle: self.id,
                from: from.into(),
                to: to.into(),
                cause,
            });
        }
    }

    fn become_head(
        &mut self,
        roster: BTreeMap<VehicleId, RosterEntry>,
        now: f64,
        cause: Cause,
        fx: &mut Effects,
    ) {
        let from = self.status();
        self.role = Role::Head(HeadState {
            since: now,
            roster,
            last_reelection: now,
            overlap: BTreeMap::new(),
            pending_merge: None,
            gateways: (None, None),
            gateways_dirty: true,
        });
        self.log(from, now, cause, fx);
    }

    fn become_member(&mut self, head: VehicleId, now: f64, cause: Cause, fx: &mut Effects) {
        let from = self.status();
        self.role = Role::Member(MemberState {
            head,
            since: now,
            last_heard_head: now,
            gateway: false,
        });
        self.log(from, now, cause, fx);
    }

    fn become_temporal(&mut self, since: f64, now: f64, cause: Cause, fx: &mut Effects) {
        let from = self.status();
        self.role = Role::Temporal(TemporalState {
            since,
            pending_join: None,
        });
        self.log(from, now, cause, fx);
    }

    pub fn on_message(
        &mut self,
        msg: &Message,
        now: f64,
        params: &ProtocolParams,
        fx: &mut Effects,
    ) {
        if msg.sender == self.id {
            return;
        }
        let request = matches!(
            msg.kind,
            MessageKind::EnReq
                | MessageKind::JoinAck
                | MessageKind::LeaveReq
                | MessageKind::MergeReq
                | MessageKind::MergeAck
                | MessageKind::ChHandoff
        );
        if request && !self.neighbors.contains_key(&msg.sender) {
            fx.stale += 1;
            return;
        }
        self.neighbors.insert(
            msg.sender,
            Neighbor {
                info: msg.info.clone(),
                heard_at: now,
            },
        );
        if let Role::Head(h) = &mut self.role {
            if let Some(e) = h.roster.get_mut(&msg.sender) {
                e.last_heard = now;
            }
        }

        match msg.kind {
            MessageKind::VehAdv => self.on_beacon(msg, now, params, fx),
            MessageKind::EnReq => self.on_join_request(msg, now, params, fx),
            MessageKind::ChResp => self.on_roster(msg, now, params, fx),
            MessageKind::JoinAck => {
                if let Role::Head(h) = &mut self.role {
                    let e = h
                        .roster
                        .entry(msg.sender)
                        .or_insert_with(|| roster_entry(now, true));
                    e.confirmed = true;
                    h.gateways_dirty = true;
                }
            }
            MessageKind::LeaveReq => {
                if let Role::Head(h) = &mut self.role {
                    h.roster.remove(&msg.sender);
                    h.gateways_dirty = true;
                    self.send(
                        MessageKind::LeaveAck,
                        Target::Vehicle(msg.sender),
                        Payload::None,
                        now,
                        params,
                        fx,
                    );
                }
            }
            MessageKind::LeaveAck => {
                if self.head() == Some(msg.sender) {
                    self.become_temporal(now, now, Cause::LeaveExplicit, fx);
                }
            }
            MessageKind::MergeReq => self.on_merge_request(msg, now, params, fx),
            MessageKind::MergeAck => self.on_merge_ack(msg, now, params, fx),
            MessageKind::ChHandoff => self.on_handoff(msg, now, fx),
            MessageKind::GwAppoint => {
                let id = self.id;
                if let Role::Member(m) = &mut self.role {
                    if m.head == msg.sender {
                        if let Payload::Gateway { front, back } = msg.payload {
                            m.gateway = front == Some(id) || back == Some(id);
                        }
                    }
                }
            }
        }
    }

    fn on_beacon(&mut self, msg: &Message, now: f64, params: &ProtocolParams, fx: &mut Effects) {
        let id = self.id;
        let info = &msg.info;
        match &mut self.role {
            Role::Head(h) => {
                if info.status == Status::Cm && info.cluster_head == Some(id) {
                    let e = h.roster.entry(msg.sender).or_insert_with(|| {
                        h.gateways_dirty = true;
                        roster_entry(now, true)
                    });
                    if !e.confirmed {
                        e.confirmed = true;
                        h.gateways_dirty = true;
                    }
                } else if h.roster.get(&msg.sender).is_some_and(|e| e.confirmed) {
                    h.roster.remove(&msg.sender);
                    h.gateways_dirty = true;
                }
            }
            Role::Member(m) if m.head == msg.sender => {
                m.last_heard_head = now;
                if info.status != Status::Ch {
                    self.become_temporal(now - params.en_timer, now, Cause::ChLoss, fx);
                }
            }
            _ => {}
        }
    }

    fn on_join_request(
        &mut self,
        msg: &Message,
        now: f64,
        params: &ProtocolParams,
        fx: &mut Effects,
    ) {
        let Role::Head(h) = &mut self.role else {
            return;
        };
        h.roster
            .entry(msg.sender)
            .or_insert_with(|| roster_entry(now, false));
        h.gateways_dirty = true;
        let members: Vec<VehicleId> = h.roster.keys().copied().collect();
        self.send(
            MessageKind::ChResp,
            Target::Vehicle(msg.sender),
            Payload::Roster(RosterNotice {
                head: self.id,
                members,
                reason: RosterReason::Invite,
            }),
            now,
            params,
            fx,
        );
    }

    fn on_roster(&mut self, msg: &Message, now: f64, params: &ProtocolParams, fx: &mut Effects) {
        let Payload::Roster(notice) = &msg.payload else {
            return;
        };
        let id = self.id;
        let listed = notice.members.contains(&id);
        match &mut self.role {
            Role::Temporal(_) => {
                if notice.reason == RosterReason::Invite
                    && listed
                    && notice.head == msg.sender
                    && msg.info.status == Status::Ch
                    // A delayed invite may come from a head that has since
                    // driven out of range; the ack would never reach it.
                    && msg.info.sample_at(now, 0.0).position.distance(self.me.position)
                        <= params.election.tr
                {
                    let cause = match msg.target {
                        Target::Vehicle(_) => Cause::Join,
                        Target::Broadcast => Cause::Formation,
                    };
                    self.become_member(msg.sender, now, cause, fx);
                    self.send(
                        MessageKind::JoinAck,
                        Target::Vehicle(msg.sender),
                        Payload::None,
                        now,
                        params,
                        fx,
                    );
                }
            }
            Role::Member(m) => {
                let reason = notice.reason;
                let takeover = matches!(reason, RosterReason::Merge | RosterReason::Handoff)
                    && notice.head == id;
                if takeover {
                    let roster = notice
                        .members
                        .iter()
                        .filter(|&&v| v != id)
                        .map(|&v| (v, roster_entry(now, true)))
                        .collect();
                    let cause = if reason == RosterReason::Merge {
                        Cause::Merge
                    } else {
                        Cause::Handoff
                    };
                    self.become_head(roster, now, cause, fx);
                    return;
                }
                if m.head != msg.sender {
                    return;
                }
                match reason {
                    RosterReason::Invite => {}
                    RosterReason::Eviction => {
                        if !listed {
                            self.become_temporal(now, now, Cause::LeaveTimeout, fx);
                        }
                    }
                    RosterReason::Merge | RosterReason::Handoff => {
                        if listed {
                            m.head = notice.head;
                            m.last_heard_head = now;
                            m.gateway = false;
                        } else {
                            self.become_temporal(now - params.en_timer, now, Cause::ChLoss, fx);
                        }
                    }
                    RosterReason::Dissolve => {
                        self.become_temporal(now - params.en_timer, now, Cause::ChLoss, fx);
                    }
                }
            }
            Role::Head(h) => {
                if notice.reason == RosterReason::Merge && notice.head == id {
                    for &v in notice.members.iter().filter(|&&v| v != id) {
                        h.roster.entry(v).or_insert_with(|| roster_entry(now, true));
                    }
                    h.gateways_dirty = true;
                }
            }
        }
    }

    fn on_handoff(&mut self, msg: &Message, now: f64, fx: &mut Effects) {
        let Payload::Handoff { members, reason } = &msg.payload else {
            return;
        };
        let id = self.id;
        match &mut self.role {
            Role::Member(m) if m.head == msg.sender => {
                let roster = members
                    .iter()
                    .filter(|&&v| v != id)
                    .map(|&v| (v, roster_entry(now, true)))
                    .collect();
                let cause = if *reason == RosterReason::Merge {
                    Cause::Merge
                } else {
                    Cause::Handoff
                };
                self.become_head(roster, now, cause, fx);
            }
            Role::Head(h) => {
                for &v in members.iter().filter(|&&v| v != id) {
                    h.roster.entry(v).or_insert_with(|| roster_entry(now, true));
                }
                h.gateways_dirty = true;
            }
            _ => {}
        }
    }

    /// This head's cluster as seen from its neighbor table.
    fn own_view(&self, now: f64, params: &ProtocolParams) -> Option<ClusterView> {
        let Role::Head(h) = &self.role else {
            return None;
        };
        let horizon = params.election.horizon;
        let mut fresh = true;
        let mut members = Vec::with_capacity(h.roster.len());
        for (&id, e) in &h.roster {
            fresh &= e.confirmed && now - e.last_heard <= params.freshness + 1e-9;
            match self.neighbor_candidate(id, now, horizon) {
                Some(c) => members.push(c),
                None => fresh = false,
            }
        }
        Some(ClusterView {
            head: self.self_candidate(now, horizon),
            members,
            fresh,
        })
    }

    fn on_merge_request(
        &mut self,
        msg: &Message,
        now: f64,
        params: &ProtocolParams,
        fx: &mut Effects,
    ) {
        let Payload::MergeRequest {
            members,
            fresh,
            overlap,
        } = &msg.payload
        else {
            return;
        };
        let Role::Head(h) = &self.role else { return };
        let reply = |node: &Node, plan: Option<MergePlan>, fx: &mut Effects| {
            node.send(
                MessageKind::MergeAck,
                Target::Vehicle(msg.sender),
                Payload::MergeAck(plan),
                now,
                params,
                fx,
            );
        };
        if h.pending_merge.is_some() {
            reply(self, None, fx);
            return;
        }
        let horizon = params.election.horizon;
        let requester = ClusterView {
            head: msg.info.candidate_at(now, horizon),
            members: members
                .iter()
                .map(|i| i.candidate_at(now, horizon))
                .collect(),
            fresh: *fresh,
        };
        let mine = self.own_view(now, params).expect("head has a view");
        match try_merge(&requester, &mine, *overlap, params) {
            Some(plan) => {
                reply(self, Some(plan.clone()), fx);
                fx.merges.push(MergeCommit {
                    time: now,
                    plan: plan.clone(),
                });
                self.apply_plan(&plan, now, params, fx);
            }
            None => {
                if let Role::Head(h) = &mut self.role {
                    h.overlap.insert(msg.sender, now);
                }
                reply(self, None, fx);
            }
        }
    }

    fn on_merge_ack(&mut self, msg: &Message, now: f64, params: &ProtocolParams, fx: &mut Effects) {
        let Payload::MergeAck(plan) = &msg.payload else {
            return;
        };
        let Role::Head(h) = &mut self.role else {
            return;
        };
        if h.pending_merge.map(|p| p.0) != Some(msg.sender) {
            return;
        }
        h.pending_merge = None;
        match plan {
            Some(plan) => self.apply_plan(plan, now, params, fx),
            None => {
                h.overlap.insert(msg.sender, now);
            }
        }
    }

    fn apply_plan(
        &mut self,
        plan: &MergePlan,
        now: f64,
        params: &ProtocolParams,
        fx: &mut Effects,
    ) {
        let Role::Head(h) = &mut self.role else {
            return;
        };
        if plan.new_head == self.id {
            h.roster = plan
                .members
                .iter()
                .map(|&v| (v, roster_entry(now, true)))
                .collect();
            h.gateways_dirty = true;
            h.overlap.clear();
            self.announce(
                self.id,
                plan.members.clone(),
                RosterReason::Merge,
                now,
                params,
                fx,
            );
            return;
        }
        if h.roster.contains_key(&plan.new_head) {
            self.send(
                MessageKind::ChHandoff,
                Target::Vehicle(plan.new_head),
                Payload::Handoff {
                    members: plan.members.clone(),
                    reason: RosterReason::Merge,
                },
                now,
                params,
                fx,
            );
        }
        self.announce(
            plan.new_head,
            plan.members.clone(),
            RosterReason::Merge,
            now,
            params,
            fx,
        );
        self.become_member(plan.new_head, now, Cause::Merge, fx);
    }

    /// Timer-driven behavior, run once per tick after message delivery.
    pub fn on_tick(&mut self, now: f64, params: &ProtocolParams, fx: &mut Effects) {
        let expiry = params.neighbor_expiry();
        self.neighbors
            .retain(|_, n| now - n.heard_at <= expiry + 1e-9);
        match &self.role {
            Role::Temporal(_) => self.temporal_tick(now, params, fx),
            Role::Member(m) => {
                if elapsed(now, m.last_heard_head, params.cm_timer) {
                    self.become_temporal(now - params.en_timer, now, Cause::ChLoss, fx);
                    self.temporal_tick(now, params, fx);
                }
            }
            Role::Head(_) => self.head_tick(now, params, fx),
        }
    }

    fn temporal_tick(&mut self, now: f64, params: &ProtocolParams, fx: &mut Effects) {
        let tr = params.tr();
        let Role::Temporal(t) = &mut self.role else {
            return;
        };
        if let Some((_, at)) = t.pending_join {
            if !elapsed(now, at, params.handshake_timeout) {
                return;
            }
            t.pending_join = None;
        }
        let since = t.since;

        let nearest_head = self
            .neighbors
            .iter()
            .filter(|(_, n)| n.info.status == Status::Ch)
            .filter_map(|(&id, _)| self.distance_to(id, now).map(|d| (d, id)))
            .filter(|(d, _)| *d <= tr)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, head)) = nearest_head {
            if let Role::Temporal(t) = &mut self.role {
                t.pending_join = Some((head, now));
            }
            self.send(
                MessageKind::EnReq,
                Target::Vehicle(head),
                Payload::None,
                now,
                params,
                fx,
            );
            return;
        }
        if !elapsed(now, since, params.en_timer) {
            return;
        }

        let horizon = params.election.horizon;
        let mut group = vec![self.self_candidate(now, horizon)];
        group.extend(
            self.neighbors
                .values()
                .filter(|n| n.info.status == Status::Tm)
                .map(|n| n.info.candidate_at(now, horizon)),
        );
        if group.len() == 1 {
            self.become_head(BTreeMap::new(), now, Cause::Formation, fx);
            return;
        }
        let clusters = form_clusters(&group, &params.election, params.policy);
        let mine = clusters.iter().find(|c| c.head == self.id);
        if let Some(c) = mine {
            let roster = c
                .members
                .iter()
                .map(|&v| (v, roster_entry(now, false)))
                .collect();
            let members = c.members.clone();
            self.become_head(roster, now, Cause::Formation, fx);
            if !members.is_empty() {
                self.announce(self.id, members, RosterReason::Invite, now, params, fx);
            }
        } else if elapsed(now, since, 2.0 * params.en_timer) {
            self.become_head(BTreeMap::new(), now, Cause::Formation, fx);
        }
    }

    fn head_tick(&mut self, now: f64, params: &ProtocolParams, fx: &mut Effects) {
        let tr = params.tr();
        let evict_after = params.cm_timer + params.eviction_grace;

        // Roster upkeep.
        let Role::Head(h) = &mut self.role else {
            return;
        };
        let before = h.roster.len();
        let mut evicted = false;
        h.roster.retain(|_, e| {
            if e.confirmed {
                let keep = !elapsed(now, e.last_heard, evict_after);
                evicted |= !keep;
                keep
            } else {
                !elapsed(now, e.added_at, params.handshake_timeout)
            }
        });
        if h.roster.len() != before {
            h.gateways_dirty = true;
        }
        if evicted {
            let members: Vec<VehicleId> = h.roster.keys().copied().collect();
            self.announce(self.id, members, RosterReason::Eviction, now, params, fx);
        }

        // Overlap with other heads.
        let heads_in_range: Vec<VehicleId> = self
            .neighbors
            .iter()
            .filter(|(_, n)| n.info.status == Status::Ch)
            .filter(|(&id, _)| self.distance_to(id, now).is_some_and(|d| d <= tr))
            .map(|(&id, _)| id)
            .collect();
        let Role::Head(h) = &mut self.role else {
            return;
        };
        h.overlap.retain(|id, _| heads_in_range.contains(id));
        for &id in &heads_in_range {
            h.overlap.entry(id).or_insert(now);
        }
        if let Some((_, at)) = h.pending_merge {
            if elapsed(now, at, params.handshake_timeout) {
                h.pending_merge = None;
            }
        }
        if h.pending_merge.is_none() {
            let target = h
                .overlap
                .iter()
                .filter(|(&id, &start)| id > self.id && elapsed(now, start, params.merge_timer))
                .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(b.0)))
                .map(|(&id, &start)| (id, now - start));
            if let Some((other, overlap)) = target {
                let view = self.own_view(now, params).expect("head");
                let members: Vec<VehInfo> = view
                    .members
                    .iter()
                    .filter_map(|c| self.neighbors.get(&c.id()).map(|n| n.info.clone()))
                    .collect();
                if let Role::Head(h) = &mut self.role {
                    h.pending_merge = Some((other, now));
                }
                self.send(
                    MessageKind::MergeReq,
                    Target::Vehicle(other),
                    Payload::MergeRequest {
                        members,
                        fresh: view.fresh,
                        overlap,
                    },
                    now,
                    params,
                    fx,
                );
                return;
            }
        }

        // Re-election.
        let Role::Head(h) = &mut self.role else {
            return;
        };
        if h.pending_merge.is_none() && elapsed(now, h.last_reelection, params.ch_timer) {
            h.last_reelection = now;
            if params.reelection {
                let view = self.own_view(now, params).expect("head");
                if let Some(winner) =
                    periodic_reelection(&view.head, &view.members, view.fresh, params)
                {
                    let mut members: Vec<VehicleId> = view
                        .members
                        .iter()
                        .map(Candidate::id)
                        .filter(|&v| v != winner)
                        .collect();
                    members.push(self.id);
                    members.sort_unstable();
                    self.send(
                        MessageKind::ChHandoff,
                        Target::Vehicle(winner),
                        Payload::Handoff {
                            members: members.clone(),
                            reason: RosterReason::Handoff,
                        },
                        now,
                        params,
                        fx,
                    );
                    self.announce(winner, members, RosterReason::Handoff, now, params, fx);
                    self.become_member(winner, now, Cause::Handoff, fx);
                    return;
                }
            }
        }

        self.refresh_gateways(now, params, fx);
    }

    fn refresh_gateways(&mut self, now: f64, params: &ProtocolParams, fx: &mut Effects) {
        let Role::Head(h) = &self.role else { return };
        if !h.gateways_dirty {
            return;
        }
        let members: Vec<(VehicleId, Point)> = h
            .roster
            .iter()
            .filter(|(_, e)| e.confirmed)
            .filter_map(|(&id, _)| {
                self.neighbors
                    .get(&id)
                    .map(|n| (id, n.info.sample_at(now, 0.0).position))
            })
            .collect();
        let gw = select_gateways(self.me.position, self.me.heading, &members);
        let changed = gw != h.gateways;
        if let Role::Head(h) = &mut self.role {
            h.gateways = gw;
            h.gateways_dirty = false;
        }
        if changed {
            let payload = Payload::Gateway {
                front: gw.0,
                back: gw.1,
            };
            for g in [gw.0, gw.1].into_iter().flatten() {
                self.send(
                    MessageKind::GwAppoint,
                    Target::Vehicle(g),
                    payload.clone(),
                    now,
                    params,
                    fx,
                );
            }
        }
    }

    /// Announces that the vehicle is leaving the road: members ask their
    /// head to release them, heads dissolve their cluster.
    pub fn depart(&mut self, now: f64, params: &ProtocolParams, fx: &mut Effects) {
        match &self.role {
            Role::Member(m) => {
                let head = m.head;
                self.send(
                    MessageKind::LeaveReq,
                    Target::Vehicle(head),
                    Payload::None,
                    now,
                    params,
                    fx,
                );
            }
            Role::Head(h) => {
                let members: Vec<VehicleId> = h.roster.keys().copied().collect();
                self.announce(self.id, members, RosterReason::Dissolve, now, params, fx);
            }
            Role::Temporal(_) => {}
        }
    }

    /// Logs the final transition off the road.
    pub fn finish_departure(&self, now: f64, fx: &mut Effects) {
        fx.transitions.push(TransitionEvent {
            time: now,
            vehicle: self.id,
            from: self.status().into(),
            to: StateTag::Out,
            cause: Cause::Departure,
        });
    }
}
