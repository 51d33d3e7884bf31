//! Cluster-level decisions: merging two clusters, periodic re-election and
//! gateway appointment. These are pure functions over candidate snapshots so
//! they can be tested without running the message exchange.

use serde::{Deserialize, Serialize};

use super::election::Candidate;
use super::{elapsed, ProtocolParams};
use crate::geom::Point;
use crate::network::Heading;
use crate::VehicleId;

/// A cluster as seen by the head arbitrating a merge.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterView {
    pub head: Candidate,
    pub members: Vec<Candidate>,
    /// Every member was heard recently enough to trust its position.
    pub fresh: bool,
}

impl ClusterView {
    fn all(&self) -> impl Iterator<Item = &Candidate> {
        std::iter::once(&self.head).chain(self.members.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergePlan {
    pub new_head: VehicleId,
    /// The two heads being merged.
    pub heads: (VehicleId, VehicleId),
    /// Everyone in the merged cluster except the new head, in id order.
    pub members: Vec<VehicleId>,
}

fn within(a: &Candidate, b: &Candidate, range: f64) -> bool {
    a.sample.position.distance(b.sample.position) <= range
}

/// Decides whether two overlapping clusters can merge. The new head is the
/// policy's choice over the union; the merge goes ahead only when everybody
/// in the union is comfortably within range of it and every member can
/// still hear its old head announce the change.
pub fn try_merge(
    a: &ClusterView,
    b: &ClusterView,
    overlap: f64,
    params: &ProtocolParams,
) -> Option<MergePlan> {
    if !elapsed(overlap, 0.0, params.merge_timer) || !a.fresh || !b.fresh {
        return None;
    }
    let tr = params.tr();
    if !within(&a.head, &b.head, tr) {
        return None;
    }
    let safe = tr - params.merge_margin;
    let union: Vec<Candidate> = a.all().chain(b.all()).cloned().collect();
    let new_head = params.policy.select(&union, &params.election).ok()?;
    let head = union.iter().find(|c| c.id() == new_head)?;
    if !union.iter().all(|c| within(c, head, safe)) {
        return None;
    }
    for view in [a, b] {
        if !view.members.iter().all(|m| within(m, &view.head, safe)) {
            return None;
        }
    }
    let mut members: Vec<VehicleId> = union
        .iter()
        .map(Candidate::id)
        .filter(|&i| i != new_head)
        .collect();
    members.sort_unstable();
    members.dedup();
    Some(MergePlan {
        new_head,
        heads: (a.head.id(), b.head.id()),
        members,
    })
}

/// Member the head should hand over to, if any. `head` is the current head
/// and `members` its roster; `fresh` says whether all of them were heard
/// recently.
pub fn periodic_reelection(
    head: &Candidate,
    members: &[Candidate],
    fresh: bool,
    params: &ProtocolParams,
) -> Option<VehicleId> {
    if members.is_empty() || !fresh {
        return None;
    }
    let mut group = Vec::with_capacity(members.len() + 1);
    group.push(head.clone());
    group.extend(members.iter().cloned());
    let winner = params.policy.select(&group, &params.election).ok()?;
    if winner == head.id() {
        return None;
    }
    let policy = params.policy;
    let gain = policy.score(head.id(), &group, &params.election)
        - policy.score(winner, &group, &params.election);
    if gain.is_nan() || gain <= params.switch_margin() {
        return None;
    }
    let safe = params.tr() - params.merge_margin;
    let w = group.iter().find(|c| c.id() == winner)?;
    let covered = group
        .iter()
        .all(|c| within(c, w, safe) && within(c, head, safe));
    covered.then_some(winner)
}

/// Front and back gateways: the members furthest ahead of and behind the
/// head along its heading. A lone member is the front gateway only.
pub fn select_gateways(
    head: Point,
    heading: Heading,
    members: &[(VehicleId, Point)],
) -> (Option<VehicleId>, Option<VehicleId>) {
    match members {
        [] => (None, None),
        [(only, _)] => (Some(*only), None),
        _ => {
            let dir = heading.unit();
            let proj = |p: &Point| (*p - head).dot(dir);
            let front = members
                .iter()
                .max_by(|a, b| proj(&a.1).total_cmp(&proj(&b.1)).then(b.0.cmp(&a.0)))
                .map(|m| m.0);
            let back = members
                .iter()
                .min_by(|a, b| proj(&a.1).total_cmp(&proj(&b.1)).then(a.0.cmp(&b.0)))
                .map(|m| m.0);
            (front, back)
        }
    }
}
