//! Kinematic forecasting used to rank cluster head candidates.
//!
//! All quantities are computed from a snapshot of every vehicle taken at the
//! same instant. Relative motion is one-dimensional along the road: the
//! initial separation is the planar distance, signed by which vehicle is
//! further ahead, and the velocity and acceleration differences are applied
//! along it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Point;
use crate::mobility::Kinematics;
use crate::network::Heading;
use crate::VehicleId;

/// Scan step used when searching for the expected head lifetime.
pub const LIFETIME_STEP: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum PredictionError {
    #[error("samples taken at different times ({0} s and {1} s)")]
    SnapshotMismatch(f64, f64),
    #[error("prediction time {0} s is negative")]
    NegativeTime(f64),
    #[error("group needs at least two vehicles, got {0}")]
    GroupTooSmall(usize),
    #[error("vehicle {0} is not in the group")]
    NotInGroup(VehicleId),
}

/// Constant acceleration held for `duration` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelSegment {
    pub duration: f64,
    pub acceleration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSample {
    pub id: VehicleId,
    pub position: Point,
    /// Speed along the heading.
    pub velocity: f64,
    /// Acceleration after the snapshot; zero once the segments run out.
    pub profile: Vec<AccelSegment>,
    pub heading: Heading,
    pub time: f64,
}

impl MotionSample {
    pub fn new(id: VehicleId, position: Point, velocity: f64, heading: Heading, time: f64) -> Self {
        Self {
            id,
            position,
            velocity,
            profile: Vec::new(),
            heading,
            time,
        }
    }

    pub fn with_profile(mut self, profile: Vec<AccelSegment>) -> Self {
        self.profile = profile;
        self
    }

    /// `∫₀ᵗ∫₀^τ a(σ) dσ dτ` for the piecewise-constant profile.
    pub fn double_integral(&self, t: f64) -> f64 {
        let mut start = 0.0;
        let mut total = 0.0;
        for seg in &self.profile {
            if start >= t {
                break;
            }
            let end = (start + seg.duration).min(t);
            total += seg.acceleration * ((t - start).powi(2) - (t - end).powi(2)) / 2.0;
            start += seg.duration;
        }
        total
    }

    /// Velocity gained by time `t`.
    pub fn integral(&self, t: f64) -> f64 {
        let mut start = 0.0;
        let mut total = 0.0;
        for seg in &self.profile {
            if start >= t {
                break;
            }
            total += seg.acceleration * ((start + seg.duration).min(t) - start);
            start += seg.duration;
        }
        total
    }
}

/// Acceleration profile assumed for a vehicle that keeps its current command
/// until it would reach its top speed (or a standstill), then cruises.
pub fn profile_from_kinematics(kin: &Kinematics, horizon: f64) -> Vec<AccelSegment> {
    let a = kin.acceleration;
    let limit = if a > 0.0 {
        (kin.max_velocity - kin.velocity).max(0.0) / a
    } else if a < 0.0 {
        kin.velocity.max(0.0) / -a
    } else {
        f64::INFINITY
    };
    let held = limit.min(horizon);
    let mut out = Vec::with_capacity(2);
    if held > 0.0 {
        out.push(AccelSegment {
            duration: held,
            acceleration: a,
        });
    }
    if horizon > held {
        out.push(AccelSegment {
            duration: horizon - held,
            acceleration: 0.0,
        });
    }
    out
}

/// Signed initial separation `s_ij(0)`: positive when `i` is ahead of `j`.
pub fn signed_separation(i: &MotionSample, j: &MotionSample) -> f64 {
    let d = i.position.distance(j.position);
    if d == 0.0 {
        return 0.0;
    }
    let (hx, hy) = i.heading.unit();
    let (gx, gy) = j.heading.unit();
    let axis = (hx + gx, hy + gy);
    let proj = (i.position - j.position).dot(axis);
    let ahead = if proj.abs() > 1e-9 {
        proj > 0.0
    } else {
        (i.position.x, i.position.y) > (j.position.x, j.position.y)
    };
    if ahead {
        d
    } else {
        -d
    }
}

/// `|s_ij(t)|`: predicted distance between `i` and `j` after `t` seconds.
pub fn relative_distance_at(
    i: &MotionSample,
    j: &MotionSample,
    t: f64,
) -> Result<f64, PredictionError> {
    if i.time != j.time {
        return Err(PredictionError::SnapshotMismatch(i.time, j.time));
    }
    if t < 0.0 {
        return Err(PredictionError::NegativeTime(t));
    }
    let s = signed_separation(i, j)
        + (i.velocity - j.velocity) * t
        + (i.double_integral(t) - j.double_integral(t));
    Ok(s.abs())
}

fn find(i: VehicleId, group: &[MotionSample]) -> Result<&MotionSample, PredictionError> {
    if group.len() < 2 {
        return Err(PredictionError::GroupTooSmall(group.len()));
    }
    group
        .iter()
        .find(|s| s.id == i)
        .ok_or(PredictionError::NotInGroup(i))
}

/// `ū_i`: mean absolute velocity difference to the rest of the group.
pub fn avg_relative_velocity(i: VehicleId, group: &[MotionSample]) -> Result<f64, PredictionError> {
    let me = find(i, group)?;
    let sum: f64 = group
        .iter()
        .filter(|s| s.id != i)
        .map(|s| (me.velocity - s.velocity).abs())
        .sum();
    Ok(sum / (group.len() - 1) as f64)
}

/// `s̄_i(horizon)`: mean predicted distance to the rest of the group.
pub fn avg_predicted_relative_distance(
    i: VehicleId,
    group: &[MotionSample],
    horizon: f64,
) -> Result<f64, PredictionError> {
    let me = find(i, group)?;
    let mut sum = 0.0;
    for other in group.iter().filter(|s| s.id != i) {
        sum += relative_distance_at(me, other, horizon)?;
    }
    Ok(sum / (group.len() - 1) as f64)
}

/// Earliest scan time at which more than half of the other vehicles are
/// predicted to be out of range, or `cap` if that never happens.
pub fn expected_ch_lifetime(
    i: VehicleId,
    group: &[MotionSample],
    tr: f64,
    cap: f64,
) -> Result<f64, PredictionError> {
    let me = group
        .iter()
        .find(|s| s.id == i)
        .ok_or(PredictionError::NotInGroup(i))?;
    let others: Vec<&MotionSample> = group.iter().filter(|s| s.id != i).collect();
    if others.is_empty() {
        return Ok(cap);
    }
    let steps = (cap / LIFETIME_STEP).round() as u64;
    for k in 0..=steps {
        let t = k as f64 * LIFETIME_STEP;
        if t > cap {
            break;
        }
        let mut out = 0;
        for o in &others {
            if relative_distance_at(me, o, t)? > tr {
                out += 1;
            }
        }
        if 2 * out > others.len() {
            return Ok(t);
        }
    }
    Ok(cap)
}
