//! The clustering state machine run by every vehicle.
//!
//! A vehicle is always in one of three states: temporal (`TM`, collecting
//! beacons before joining or forming a cluster), cluster head (`CH`) or
//! cluster member (`CM`). Vehicles only learn about each other through the
//! messages defined here.

pub mod cluster;
pub mod election;
pub mod node;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::baselines::{SelectionPolicy, SwitchMargins};
use crate::geom::Point;
use crate::mobility::Kinematics;
use crate::network::{Heading, NextDirection};
use crate::prediction::{profile_from_kinematics, MotionSample};
use crate::VehicleId;

pub use cluster::{select_gateways, try_merge, ClusterView, MergePlan};
pub use election::{Candidate, ElectionParams, FormedCluster};
pub use node::{Effects, Node, Role, SelfView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Status {
    #[serde(rename = "TM")]
    Tm,
    #[serde(rename = "CH")]
    Ch,
    #[serde(rename = "CM")]
    Cm,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Tm => "TM",
            Status::Ch => "CH",
            Status::Cm => "CM",
        })
    }
}

/// A state in the transition log; `Out` marks a vehicle leaving the road.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StateTag {
    #[serde(rename = "TM")]
    Tm,
    #[serde(rename = "CH")]
    Ch,
    #[serde(rename = "CM")]
    Cm,
    #[serde(rename = "OUT")]
    Out,
}

impl From<Status> for StateTag {
    fn from(s: Status) -> Self {
        match s {
            Status::Tm => StateTag::Tm,
            Status::Ch => StateTag::Ch,
            Status::Cm => StateTag::Cm,
        }
    }
}

impl fmt::Display for StateTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StateTag::Tm => "TM",
            StateTag::Ch => "CH",
            StateTag::Cm => "CM",
            StateTag::Out => "OUT",
        })
    }
}

impl std::str::FromStr for StateTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "TM" => Ok(StateTag::Tm),
            "CH" => Ok(StateTag::Ch),
            "CM" => Ok(StateTag::Cm),
            "OUT" => Ok(StateTag::Out),
            _ => Err(format!("unknown state `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cause {
    Formation,
    Join,
    Merge,
    Handoff,
    LeaveExplicit,
    LeaveTimeout,
    ChLoss,
    Departure,
}

impl Cause {
    pub const ALL: [Cause; 8] = [
        Cause::Formation,
        Cause::Join,
        Cause::Merge,
        Cause::Handoff,
        Cause::LeaveExplicit,
        Cause::LeaveTimeout,
        Cause::ChLoss,
        Cause::Departure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Cause::Formation => "formation",
            Cause::Join => "join",
            Cause::Merge => "merge",
            Cause::Handoff => "handoff",
            Cause::LeaveExplicit => "leave-explicit",
            Cause::LeaveTimeout => "leave-timeout",
            Cause::ChLoss => "ch-loss",
            Cause::Departure => "departure",
        }
    }
}

impl fmt::Display for Cause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Cause {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Cause::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown cause `{s}`"))
    }
}

/// One logged state change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub time: f64,
    pub vehicle: VehicleId,
    pub from: StateTag,
    pub to: StateTag,
    pub cause: Cause,
}

/// Whether `(from, to, cause)` is a legal edge of the state machine.
pub fn transition_is_legal(from: StateTag, to: StateTag, cause: Cause) -> bool {
    use Cause::*;
    use StateTag::*;
    match (from, to) {
        (Tm, Ch) => cause == Formation,
        (Tm, Cm) => matches!(cause, Join | Formation),
        (Ch, Cm) | (Cm, Ch) => matches!(cause, Merge | Handoff),
        (Cm, Tm) => matches!(cause, LeaveExplicit | LeaveTimeout | ChLoss),
        (Tm | Ch | Cm, Out) => cause == Departure,
        _ => false,
    }
}

/// Snapshot of a vehicle carried by every message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehInfo {
    pub id: VehicleId,
    pub time: f64,
    pub position: Point,
    pub velocity: f64,
    pub acceleration: f64,
    pub max_velocity: f64,
    pub heading: Heading,
    pub next_direction: NextDirection,
    pub status: Status,
    pub cluster_head: Option<VehicleId>,
    /// Size of the sender's neighbor table.
    pub degree: u32,
    /// Advertised only while forming clusters.
    pub expected_ch_lifetime: Option<f64>,
    /// The sender's own score over its neighborhood; lower ranks first.
    pub rank: f64,
}

impl VehInfo {
    fn kinematics(&self) -> Kinematics {
        Kinematics {
            velocity: self.velocity,
            acceleration: self.acceleration,
            max_velocity: self.max_velocity,
            entry_velocity: self.velocity,
        }
    }

    /// Motion snapshot extrapolated from `self.time` to `now`, with an
    /// acceleration profile covering `horizon` seconds after `now`.
    pub fn sample_at(&self, now: f64, horizon: f64) -> MotionSample {
        let dt = (now - self.time).max(0.0);
        let base = MotionSample::new(
            self.id,
            self.position,
            self.velocity,
            self.heading,
            self.time,
        )
        .with_profile(profile_from_kinematics(&self.kinematics(), dt));
        let travelled = self.velocity * dt + base.double_integral(dt);
        let velocity = (self.velocity + base.integral(dt)).clamp(0.0, self.max_velocity);
        let saturated = velocity <= 0.0 || velocity >= self.max_velocity;
        let kin = Kinematics {
            velocity,
            acceleration: if saturated { 0.0 } else { self.acceleration },
            max_velocity: self.max_velocity,
            entry_velocity: velocity,
        };
        MotionSample::new(
            self.id,
            self.position.offset(self.heading.unit(), travelled),
            velocity,
            self.heading,
            now,
        )
        .with_profile(profile_from_kinematics(&kin, horizon))
    }

    pub fn candidate_at(&self, now: f64, horizon: f64) -> Candidate {
        Candidate {
            sample: self.sample_at(now, horizon),
            next_direction: self.next_direction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    #[serde(rename = "VEH_ADV")]
    VehAdv,
    #[serde(rename = "EN_REQ")]
    EnReq,
    #[serde(rename = "CH_RESP")]
    ChResp,
    #[serde(rename = "JOIN_ACK")]
    JoinAck,
    #[serde(rename = "MERGE_REQ")]
    MergeReq,
    #[serde(rename = "MERGE_ACK")]
    MergeAck,
    #[serde(rename = "CH_HANDOFF")]
    ChHandoff,
    #[serde(rename = "LEAVE_REQ")]
    LeaveReq,
    #[serde(rename = "LEAVE_ACK")]
    LeaveAck,
    #[serde(rename = "GW_APPOINT")]
    GwAppoint,
}

impl MessageKind {
    pub const ALL: [MessageKind; 10] = [
        MessageKind::VehAdv,
        MessageKind::EnReq,
        MessageKind::ChResp,
        MessageKind::JoinAck,
        MessageKind::MergeReq,
        MessageKind::MergeAck,
        MessageKind::ChHandoff,
        MessageKind::LeaveReq,
        MessageKind::LeaveAck,
        MessageKind::GwAppoint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::VehAdv => "VEH_ADV",
            MessageKind::EnReq => "EN_REQ",
            MessageKind::ChResp => "CH_RESP",
            MessageKind::JoinAck => "JOIN_ACK",
            MessageKind::MergeReq => "MERGE_REQ",
            MessageKind::MergeAck => "MERGE_ACK",
            MessageKind::ChHandoff => "CH_HANDOFF",
            MessageKind::LeaveReq => "LEAVE_REQ",
            MessageKind::LeaveAck => "LEAVE_ACK",
            MessageKind::GwAppoint => "GW_APPOINT",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MessageKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MessageKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown message kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Broadcast,
    Vehicle(VehicleId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RosterReason {
    /// Invitation sent by a newly formed head, or a reply to a join request.
    Invite,
    Eviction,
    Merge,
    Handoff,
    /// The head is leaving the road.
    Dissolve,
}

/// Membership list announced by a head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterNotice {
    pub head: VehicleId,
    pub members: Vec<VehicleId>,
    pub reason: RosterReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    None,
    Roster(RosterNotice),
    MergeRequest {
        members: Vec<VehInfo>,
        /// All listed members were heard within the freshness window.
        fresh: bool,
        /// How long the requester has overlapped the receiver, s.
        overlap: f64,
    },
    MergeAck(Option<MergePlan>),
    Handoff {
        members: Vec<VehicleId>,
        reason: RosterReason,
    },
    Gateway {
        front: Option<VehicleId>,
        back: Option<VehicleId>,
    },
}

impl Payload {
    pub fn roster_len(&self) -> usize {
        match self {
            Payload::None | Payload::Gateway { .. } | Payload::MergeAck(None) => 0,
            Payload::Roster(r) => r.members.len(),
            Payload::MergeRequest { members, .. } => members.len(),
            Payload::MergeAck(Some(plan)) => plan.members.len(),
            Payload::Handoff { members, .. } => members.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub kind: MessageKind,
    pub sender: VehicleId,
    pub target: Target,
    pub info: VehInfo,
    pub payload: Payload,
}

impl Message {
    pub fn size_bytes(&self, params: &ProtocolParams) -> u32 {
        let base = params.beacon_size;
        if self.kind == MessageKind::VehAdv {
            base
        } else {
            base + params.roster_entry_size * self.payload.roster_len() as u32
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    pub policy: SelectionPolicy,
    /// s
    pub beacon_period: f64,
    /// bytes
    pub beacon_size: u32,
    /// bytes added per roster entry to control messages
    pub roster_entry_size: u32,
    /// s
    pub en_timer: f64,
    /// s
    pub cm_timer: f64,
    /// s
    pub ch_timer: f64,
    /// s
    pub merge_timer: f64,
    /// Neighbor entries are dropped after this many silent beacon periods.
    pub neighbor_expiry_periods: u32,
    /// Extra silence, beyond the member timer, before a head evicts a member.
    pub eviction_grace: f64,
    /// Pending joins and merges are abandoned after this long, s.
    pub handshake_timeout: f64,
    /// A merge or handoff needs every member within `tr - merge_margin` m.
    pub merge_margin: f64,
    /// Members heard within this many seconds count as fresh for merges and handoffs.
    pub freshness: f64,
    pub reelection: bool,
    pub margins: SwitchMargins,
    pub election: ElectionParams,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            policy: SelectionPolicy::Sdpc,
            beacon_period: 0.2,
            beacon_size: 64,
            roster_entry_size: 16,
            en_timer: 2.0,
            cm_timer: 2.0,
            ch_timer: 2.0,
            merge_timer: 2.0,
            neighbor_expiry_periods: 3,
            eviction_grace: 0.4,
            handshake_timeout: 0.5,
            merge_margin: 10.0,
            freshness: 0.3,
            reelection: true,
            margins: SwitchMargins::default(),
            election: ElectionParams::default(),
        }
    }
}

impl ProtocolParams {
    pub fn neighbor_expiry(&self) -> f64 {
        self.beacon_period * f64::from(self.neighbor_expiry_periods)
    }

    pub fn tr(&self) -> f64 {
        self.election.tr
    }

    pub fn switch_margin(&self) -> f64 {
        self.margins.for_policy(self.policy)
    }
}

/// Whether at least `duration` seconds separate `since` and `now`, with a
/// little slack for accumulated tick rounding.
pub fn elapsed(now: f64, since: f64, duration: f64) -> bool {
    now - since >= duration - 1e-9
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legal_transitions() {
        use Cause::*;
        use StateTag::*;
        assert!(transition_is_legal(Tm, Ch, Formation));
        assert!(transition_is_legal(Tm, Cm, Join));
        assert!(transition_is_legal(Cm, Ch, Handoff));
        assert!(transition_is_legal(Cm, Tm, ChLoss));
        assert!(transition_is_legal(Ch, Out, Departure));
        assert!(!transition_is_legal(Ch, Tm, ChLoss));
        assert!(!transition_is_legal(Tm, Ch, Join));
        assert!(!transition_is_legal(Tm, Tm, Formation));
        assert!(!transition_is_legal(Out, Tm, Departure));
    }

    #[test]
    fn message_sizes() {
        let p = ProtocolParams::default();
        let info = VehInfo {
            id: 1,
            time: 0.0,
            position: Point::new(0.0, 0.0),
            velocity: 10.0,
            acceleration: 0.0,
            max_velocity: 20.0,
            heading: Heading::N,
            next_direction: NextDirection::Terminal,
            status: Status::Ch,
            cluster_head: None,
            degree: 0,
            expected_ch_lifetime: None,
            rank: 0.0,
        };
        let beacon = Message {
            kind: MessageKind::VehAdv,
            sender: 1,
            target: Target::Broadcast,
            info: info.clone(),
            payload: Payload::None,
        };
        assert_eq!(beacon.size_bytes(&p), 64);
        let roster = Message {
            kind: MessageKind::ChResp,
            payload: Payload::Roster(RosterNotice {
                head: 1,
                members: vec![2, 3, 4],
                reason: RosterReason::Invite,
            }),
            ..beacon
        };
        assert_eq!(roster.size_bytes(&p), 64 + 48);
    }

    #[test]
    fn dead_reckoning_stops_at_top_speed() {
        let info = VehInfo {
            id: 1,
            time: 1.0,
            position: Point::new(0.0, 0.0),
            velocity: 18.0,
            acceleration: 4.0,
            max_velocity: 20.0,
            heading: Heading::N,
            next_direction: NextDirection::Terminal,
            status: Status::Tm,
            cluster_head: None,
            degree: 0,
            expected_ch_lifetime: None,
            rank: 0.0,
        };
        let s = info.sample_at(2.0, 5.0);
        // 0.5 s ramp covers 9.5 m, then 0.5 s at 20 m/s.
        assert!((s.position.y - 19.5).abs() < 1e-12);
        assert_eq!(s.velocity, 20.0);
        assert!(s.profile.iter().all(|seg| seg.acceleration == 0.0));
        assert_eq!(s.time, 2.0);
    }
}
