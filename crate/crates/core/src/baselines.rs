//! Head selection policies. Besides the predictive rule, three simple
//! comparison policies pick the head by relative velocity, by position or by
//! neighbor count. They are plain textbook stand-ins, not reproductions of
//! any published clustering scheme.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::prediction::{avg_predicted_relative_distance, avg_relative_velocity, MotionSample};
use crate::protocol::election::{
    plain_degree, select_ch, Candidate, ElectionError, ElectionParams,
};
use crate::VehicleId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionPolicy {
    Sdpc,
    #[serde(rename = "velocity")]
    LowestRelVelocity,
    #[serde(rename = "central")]
    MostCentral,
    #[serde(rename = "degree")]
    HighestDegree,
}

impl SelectionPolicy {
    pub const ALL: [SelectionPolicy; 4] = [
        SelectionPolicy::Sdpc,
        SelectionPolicy::LowestRelVelocity,
        SelectionPolicy::MostCentral,
        SelectionPolicy::HighestDegree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectionPolicy::Sdpc => "sdpc",
            SelectionPolicy::LowestRelVelocity => "velocity",
            SelectionPolicy::MostCentral => "central",
            SelectionPolicy::HighestDegree => "degree",
        }
    }

    /// Human-readable label used in reports and plot data.
    pub fn label(self) -> &'static str {
        match self {
            SelectionPolicy::Sdpc => "SDPC",
            SelectionPolicy::LowestRelVelocity => "lowest relative velocity (simplified baseline)",
            SelectionPolicy::MostCentral => "most central (simplified baseline)",
            SelectionPolicy::HighestDegree => "highest degree (simplified baseline)",
        }
    }

    pub fn select(
        self,
        group: &[Candidate],
        params: &ElectionParams,
    ) -> Result<VehicleId, ElectionError> {
        if group.is_empty() {
            return Err(ElectionError::EmptyGroup);
        }
        let samples: Vec<MotionSample> = group.iter().map(|c| c.sample.clone()).collect();
        Ok(match self {
            SelectionPolicy::Sdpc => select_ch(group, params)?,
            SelectionPolicy::LowestRelVelocity => select_ch_lowest_rel_velocity(&samples),
            SelectionPolicy::MostCentral => select_ch_most_central(&samples),
            SelectionPolicy::HighestDegree => select_ch_highest_degree(group, params.tr),
        })
    }

    /// Score of `id` within `group` under this policy; lower is better.
    pub fn score(self, id: VehicleId, group: &[Candidate], params: &ElectionParams) -> f64 {
        if group.len() < 2 {
            return 0.0;
        }
        let samples: Vec<MotionSample> = group.iter().map(|c| c.sample.clone()).collect();
        match self {
            SelectionPolicy::Sdpc => avg_predicted_relative_distance(id, &samples, params.horizon)
                .unwrap_or(f64::INFINITY),
            SelectionPolicy::LowestRelVelocity => {
                avg_relative_velocity(id, &samples).unwrap_or(f64::INFINITY)
            }
            SelectionPolicy::MostCentral => {
                avg_predicted_relative_distance(id, &samples, 0.0).unwrap_or(f64::INFINITY)
            }
            SelectionPolicy::HighestDegree => -(plain_degree(id, group, params.tr) as f64),
        }
    }
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SelectionPolicy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                format!("unknown policy `{s}` (expected sdpc, velocity, central or degree)")
            })
    }
}

/// How much better a member must score before a head hands over, in each
/// policy's own units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwitchMargins {
    /// m
    pub sdpc: f64,
    /// m/s
    pub velocity: f64,
    /// m
    pub central: f64,
    /// neighbors
    pub degree: f64,
}

impl Default for SwitchMargins {
    fn default() -> Self {
        Self {
            sdpc: 10.0,
            velocity: 1.0,
            central: 10.0,
            degree: 1.0,
        }
    }
}

impl SwitchMargins {
    pub fn for_policy(&self, p: SelectionPolicy) -> f64 {
        match p {
            SelectionPolicy::Sdpc => self.sdpc,
            SelectionPolicy::LowestRelVelocity => self.velocity,
            SelectionPolicy::MostCentral => self.central,
            SelectionPolicy::HighestDegree => self.degree,
        }
    }
}

fn argmin_by_id(items: impl Iterator<Item = (VehicleId, f64)>) -> VehicleId {
    items
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(id, _)| id)
        .expect("non-empty group")
}

/// Head = smallest mean absolute velocity difference; lowest id on ties.
pub fn select_ch_lowest_rel_velocity(group: &[MotionSample]) -> VehicleId {
    if group.len() == 1 {
        return group[0].id;
    }
    argmin_by_id(group.iter().map(|s| {
        (
            s.id,
            avg_relative_velocity(s.id, group).expect("group of two or more"),
        )
    }))
}

/// Head = smallest mean current distance to the others; lowest id on ties.
pub fn select_ch_most_central(group: &[MotionSample]) -> VehicleId {
    if group.len() == 1 {
        return group[0].id;
    }
    argmin_by_id(group.iter().map(|s| {
        (
            s.id,
            avg_predicted_relative_distance(s.id, group, 0.0).expect("group of two or more"),
        )
    }))
}

/// Head = most neighbors within `tr`; lowest id on ties.
pub fn select_ch_highest_degree(group: &[Candidate], tr: f64) -> VehicleId {
    argmin_by_id(
        group
            .iter()
            .map(|c| (c.id(), -(plain_degree(c.id(), group, tr) as f64))),
    )
}
