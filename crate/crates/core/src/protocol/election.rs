//! Cluster head election over a snapshot of a vehicle group.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::SelectionPolicy;
use crate::network::NextDirection;
use crate::prediction::{avg_predicted_relative_distance, expected_ch_lifetime, MotionSample};
use crate::VehicleId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ElectionError {
    #[error("cannot elect a head from an empty group")]
    EmptyGroup,
}

/// One vehicle as seen by an election: its motion snapshot plus the direction
/// it will take after the next intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub sample: MotionSample,
    pub next_direction: NextDirection,
}

impl Candidate {
    pub fn id(&self) -> VehicleId {
        self.sample.id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElectionParams {
    /// Transmission range, m.
    pub tr: f64,
    /// Prediction horizon for the average relative distance, s.
    pub horizon: f64,
    /// Average distances within this many meters of the best count as tied.
    pub tie_tolerance: f64,
    /// Upper bound on the expected head lifetime, s.
    pub lifetime_cap: f64,
}

impl Default for ElectionParams {
    fn default() -> Self {
        Self {
            tr: 200.0,
            horizon: 5.0,
            tie_tolerance: 0.5,
            lifetime_cap: 60.0,
        }
    }
}

fn samples(group: &[Candidate]) -> Vec<MotionSample> {
    group.iter().map(|c| c.sample.clone()).collect()
}

fn by_id(group: &[Candidate], id: VehicleId) -> &Candidate {
    group
        .iter()
        .find(|c| c.id() == id)
        .expect("id drawn from the group")
}

/// Geographic front of the group: the vehicle furthest along the mean
/// heading. Ties go to the lowest id.
pub fn front_vehicle(group: &[Candidate]) -> Option<VehicleId> {
    let (mut ax, mut ay) = (0.0, 0.0);
    for c in group {
        let (x, y) = c.sample.heading.unit();
        ax += x;
        ay += y;
    }
    let key = |c: &Candidate| {
        if ax.abs() < 1e-9 && ay.abs() < 1e-9 {
            (c.sample.position.x, c.sample.position.y)
        } else {
            (c.sample.position.dot((ax, ay)), 0.0)
        }
    };
    group
        .iter()
        .max_by(|a, b| {
            let (ka, kb) = (key(a), key(b));
            ka.0.total_cmp(&kb.0)
                .then(ka.1.total_cmp(&kb.1))
                .then(b.id().cmp(&a.id()))
        })
        .map(Candidate::id)
}

/// Splits the group by post-intersection direction. The largest partition
/// holds the head candidates; on equal sizes the partition containing the
/// front vehicle wins, then E before N before S.
pub fn direction_majority_filter(group: &[Candidate]) -> (Vec<VehicleId>, Vec<VehicleId>) {
    let mut parts: BTreeMap<u8, (NextDirection, Vec<VehicleId>)> = BTreeMap::new();
    for c in group {
        parts
            .entry(c.next_direction.tie_order())
            .or_insert_with(|| (c.next_direction, Vec::new()))
            .1
            .push(c.id());
    }
    let front_dir = front_vehicle(group).map(|f| by_id(group, f).next_direction);
    let winner = parts
        .iter()
        .max_by(|(oa, (da, a)), (ob, (db, b))| {
            a.len()
                .cmp(&b.len())
                .then((Some(*da) == front_dir).cmp(&(Some(*db) == front_dir)))
                .then(ob.cmp(oa))
        })
        .map(|(k, _)| *k);
    let mut candidates = Vec::new();
    let mut minority = Vec::new();
    for c in group {
        if Some(c.next_direction.tie_order()) == winner {
            candidates.push(c.id());
        } else {
            minority.push(c.id());
        }
    }
    (candidates, minority)
}

/// Number of group members within `tr` of `i`, or −1 when `i` does not
/// cover the front vehicle.
pub fn coverage_constrained_degree(
    i: VehicleId,
    group: &[Candidate],
    first: VehicleId,
    tr: f64,
) -> i64 {
    let me = by_id(group, i);
    let front = by_id(group, first);
    if me.sample.position.distance(front.sample.position) > tr {
        return -1;
    }
    plain_degree(i, group, tr) as i64
}

/// Number of other group members within `tr` of `i`.
pub fn plain_degree(i: VehicleId, group: &[Candidate], tr: f64) -> usize {
    let me = by_id(group, i);
    group
        .iter()
        .filter(|c| c.id() != i && c.sample.position.distance(me.sample.position) <= tr)
        .count()
}

/// Group members left outside `tr` if `i` were head.
pub fn strandedness(i: VehicleId, group: &[Candidate], tr: f64) -> usize {
    let me = by_id(group, i);
    group
        .iter()
        .filter(|c| c.sample.position.distance(me.sample.position) > tr)
        .count()
}

/// Predictive head selection: majority direction, then smallest average
/// predicted distance, then coverage-constrained degree, expected lifetime,
/// strandedness and finally the lowest id.
pub fn select_ch(group: &[Candidate], params: &ElectionParams) -> Result<VehicleId, ElectionError> {
    match group {
        [] => return Err(ElectionError::EmptyGroup),
        [only] => return Ok(only.id()),
        _ => {}
    }
    let first = front_vehicle(group).expect("non-empty");
    let (candidates, _) = direction_majority_filter(group);
    let all = samples(group);

    let sbar: Vec<(VehicleId, f64)> = candidates
        .iter()
        .map(|&c| {
            let s = avg_predicted_relative_distance(c, &all, params.horizon)
                .expect("group has two or more vehicles with a shared snapshot");
            (c, s)
        })
        .collect();
    let best = sbar.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
    let mut tied: Vec<VehicleId> = sbar
        .iter()
        .filter(|(_, s)| *s <= best + params.tie_tolerance)
        .map(|(c, _)| *c)
        .collect();

    keep_best(&mut tied, |c| {
        coverage_constrained_degree(c, group, first, params.tr) as f64
    });
    if tied.len() > 1 {
        keep_best(&mut tied, |c| {
            expected_ch_lifetime(c, &all, params.tr, params.lifetime_cap).expect("member of group")
        });
    }
    keep_best(&mut tied, |c| -(strandedness(c, group, params.tr) as f64));
    Ok(*tied.iter().min().expect("at least one candidate"))
}

/// Keeps only the entries with the largest key.
fn keep_best(ids: &mut Vec<VehicleId>, key: impl Fn(VehicleId) -> f64) {
    if ids.len() < 2 {
        return;
    }
    let keyed: Vec<(VehicleId, f64)> = ids.iter().map(|&i| (i, key(i))).collect();
    let top = keyed
        .iter()
        .map(|(_, k)| *k)
        .fold(f64::NEG_INFINITY, f64::max);
    *ids = keyed
        .into_iter()
        .filter(|(_, k)| *k == top)
        .map(|(i, _)| i)
        .collect();
}

/// A cluster produced by [`form_clusters`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormedCluster {
    pub head: VehicleId,
    pub members: Vec<VehicleId>,
}

/// Repeatedly anchors on the front-most unclustered vehicle, elects a head
/// from its connected neighborhood and clusters everything within range of
/// that head.
pub fn form_clusters(
    group: &[Candidate],
    params: &ElectionParams,
    policy: SelectionPolicy,
) -> Vec<FormedCluster> {
    let mut remaining: Vec<Candidate> = group.to_vec();
    remaining.sort_by_key(Candidate::id);
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let first = front_vehicle(&remaining).expect("non-empty");
        let component = connected_component(&remaining, first, params.tr);
        let sub: Vec<Candidate> = remaining
            .iter()
            .filter(|c| component.contains(&c.id()))
            .cloned()
            .collect();
        let head = policy
            .select(&sub, params)
            .expect("component contains the front vehicle");
        let head_pos = by_id(&remaining, head).sample.position;
        let members: Vec<VehicleId> = remaining
            .iter()
            .filter(|c| c.id() != head && c.sample.position.distance(head_pos) <= params.tr)
            .map(Candidate::id)
            .collect();
        remaining.retain(|c| c.id() != head && !members.contains(&c.id()));
        out.push(FormedCluster { head, members });
    }
    out
}

/// Vehicles reachable from `start` through hops of at most `tr`.
pub fn connected_component(group: &[Candidate], start: VehicleId, tr: f64) -> BTreeSet<VehicleId> {
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(cur) = queue.pop_front() {
        let p = by_id(group, cur).sample.position;
        for c in group {
            if !seen.contains(&c.id()) && c.sample.position.distance(p) <= tr {
                seen.insert(c.id());
                queue.push_back(c.id());
            }
        }
    }
    seen
}
