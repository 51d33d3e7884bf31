//! Independent reference implementations and fixtures shared by the
//! integration tests and the acceptance harness.

#![allow(dead_code)]

pub mod script;
pub mod traces;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdpc::geom::Point;
use sdpc::network::{Heading, NextDirection};
use sdpc::prediction::{AccelSegment, MotionSample};
use sdpc::protocol::{Candidate, ElectionParams};
use sdpc::VehicleId;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Velocity gain by `t`, summing the exact area of each step of the profile.
fn velocity_gain(profile: &[AccelSegment], t: f64) -> f64 {
    let mut start = 0.0;
    let mut gain = 0.0;
    for s in profile {
        let end = (start + s.duration).min(t);
        if end > start {
            gain += s.acceleration * (end - start);
        }
        start += s.duration;
    }
    gain
}

/// Displacement after `t` by trapezoidal integration of the velocity curve
/// with step `dt`.
pub fn trapezoid_displacement(sample: &MotionSample, t: f64, dt: f64) -> f64 {
    let steps = (t / dt).floor() as u64;
    let v = |tau: f64| sample.velocity + velocity_gain(&sample.profile, tau);
    let mut x = 0.0;
    let mut prev_t = 0.0;
    let mut prev_v = v(0.0);
    for k in 1..=steps {
        let tk = k as f64 * dt;
        let vk = v(tk);
        x += (prev_v + vk) * 0.5 * dt;
        prev_t = tk;
        prev_v = vk;
    }
    if t > prev_t {
        x += (prev_v + v(t)) * 0.5 * (t - prev_t);
    }
    x
}

/// Along-road order of two vehicles, decided independently of the library:
/// +1 when `i` is ahead of `j`.
fn ahead_sign(i: &MotionSample, j: &MotionSample) -> f64 {
    let (a, b) = (i.heading.unit(), j.heading.unit());
    let axis = (a.0 + b.0, a.1 + b.1);
    let proj = (i.position.x - j.position.x) * axis.0 + (i.position.y - j.position.y) * axis.1;
    if proj.abs() > 1e-9 {
        proj.signum()
    } else if (i.position.x, i.position.y) > (j.position.x, j.position.y) {
        1.0
    } else {
        -1.0
    }
}

/// Reference `|s_ij(t)|` by numeric double integration.
pub fn trapezoid_relative_distance(i: &MotionSample, j: &MotionSample, t: f64, dt: f64) -> f64 {
    let s0 = i.position.distance(j.position) * ahead_sign(i, j);
    (s0 + trapezoid_displacement(i, t, dt) - trapezoid_displacement(j, t, dt)).abs()
}

/// Displacement after `t` by stepping through the profile segment by segment.
fn stepped_displacement(s: &MotionSample, t: f64) -> f64 {
    let mut x = 0.0;
    let mut v = s.velocity;
    let mut elapsed = 0.0;
    for seg in &s.profile {
        let d = seg.duration.min(t - elapsed);
        if d <= 0.0 {
            break;
        }
        x += v * d + 0.5 * seg.acceleration * d * d;
        v += seg.acceleration * d;
        elapsed += d;
    }
    if t > elapsed {
        x += v * (t - elapsed);
    }
    x
}

fn rel_dist(i: &MotionSample, j: &MotionSample, t: f64) -> f64 {
    if i.position == j.position {
        return (stepped_displacement(i, t) - stepped_displacement(j, t)).abs();
    }
    let s0 = i.position.distance(j.position) * ahead_sign(i, j);
    (s0 + stepped_displacement(i, t) - stepped_displacement(j, t)).abs()
}

fn sbar(i: &Candidate, group: &[Candidate], t: f64) -> f64 {
    let others: Vec<&Candidate> = group.iter().filter(|c| c.id() != i.id()).collect();
    others
        .iter()
        .map(|o| rel_dist(&i.sample, &o.sample, t))
        .sum::<f64>()
        / others.len() as f64
}

fn lifetime(i: &Candidate, group: &[Candidate], tr: f64, cap: f64) -> f64 {
    let others: Vec<&Candidate> = group.iter().filter(|c| c.id() != i.id()).collect();
    let mut k = 0u64;
    loop {
        let t = k as f64 * 0.1;
        if t > cap + 1e-12 {
            return cap;
        }
        let out = others
            .iter()
            .filter(|o| rel_dist(&i.sample, &o.sample, t) > tr)
            .count();
        if out * 2 > others.len() {
            return t;
        }
        k += 1;
    }
}

fn dir_rank(d: NextDirection) -> u8 {
    match d {
        NextDirection::Heading(Heading::E) => 0,
        NextDirection::Heading(Heading::N) => 1,
        NextDirection::Heading(Heading::S) => 2,
        NextDirection::Heading(Heading::W) => 3,
        NextDirection::Terminal => 4,
    }
}

/// Front vehicle by exhaustive comparison.
pub fn brute_front(group: &[Candidate]) -> VehicleId {
    let sum = group.iter().fold((0.0, 0.0), |acc, c| {
        let u = c.sample.heading.unit();
        (acc.0 + u.0, acc.1 + u.1)
    });
    let degenerate = sum.0.abs() < 1e-9 && sum.1.abs() < 1e-9;
    let mut best = &group[0];
    for c in &group[1..] {
        let (p, q) = (c.sample.position, best.sample.position);
        let better = if degenerate {
            (p.x, p.y) > (q.x, q.y) || ((p.x, p.y) == (q.x, q.y) && c.id() < best.id())
        } else {
            let (a, b) = (p.x * sum.0 + p.y * sum.1, q.x * sum.0 + q.y * sum.1);
            a > b || (a == b && c.id() < best.id())
        };
        if better {
            best = c;
        }
    }
    best.id()
}

/// Exhaustive evaluation of the full head-selection chain: every vehicle
/// gets its complete key and the lexicographic best wins.
pub fn brute_force_select_ch(group: &[Candidate], p: &ElectionParams) -> VehicleId {
    if group.len() == 1 {
        return group[0].id();
    }
    let front = brute_front(group);
    let front_c = group.iter().find(|c| c.id() == front).unwrap();

    // Majority direction.
    let mut dirs: Vec<NextDirection> = group.iter().map(|c| c.next_direction).collect();
    dirs.sort_by_key(|d| dir_rank(*d));
    dirs.dedup();
    let size = |d: NextDirection| group.iter().filter(|c| c.next_direction == d).count();
    let max = dirs.iter().map(|&d| size(d)).max().unwrap();
    let top: Vec<NextDirection> = dirs.iter().copied().filter(|&d| size(d) == max).collect();
    let chosen = if top.contains(&front_c.next_direction) {
        front_c.next_direction
    } else {
        *top.iter().min_by_key(|d| dir_rank(**d)).unwrap()
    };
    let candidates: Vec<&Candidate> = group
        .iter()
        .filter(|c| c.next_direction == chosen)
        .collect();

    let scores: Vec<f64> = candidates
        .iter()
        .map(|c| sbar(c, group, p.horizon))
        .collect();
    let best = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let tied: Vec<&Candidate> = candidates
        .iter()
        .zip(&scores)
        .filter(|(_, s)| **s <= best + p.tie_tolerance)
        .map(|(c, _)| *c)
        .collect();

    let in_range =
        |a: &Candidate, b: &Candidate| a.sample.position.distance(b.sample.position) <= p.tr;
    let key = |c: &Candidate| {
        let degree = group
            .iter()
            .filter(|o| o.id() != c.id() && in_range(c, o))
            .count() as i64;
        let cc = if in_range(c, front_c) { degree } else { -1 };
        let life = if tied.len() > 1 {
            lifetime(c, group, p.tr, p.lifetime_cap)
        } else {
            0.0
        };
        let stranded = group.iter().filter(|o| !in_range(c, o)).count();
        (cc, life, stranded, c.id())
    };
    let mut best_c = tied[0];
    let mut best_k = key(best_c);
    for c in &tied[1..] {
        let k = key(c);
        let better = k.0 > best_k.0
            || (k.0 == best_k.0 && k.1 > best_k.1)
            || (k.0 == best_k.0 && k.1 == best_k.1 && k.2 < best_k.2)
            || (k.0 == best_k.0 && k.1 == best_k.1 && k.2 == best_k.2 && k.3 < best_k.3);
        if better {
            best_c = c;
            best_k = k;
        }
    }
    best_c.id()
}

pub fn candidate(
    id: VehicleId,
    x: f64,
    y: f64,
    heading: Heading,
    next: NextDirection,
) -> Candidate {
    Candidate {
        sample: MotionSample::new(id, Point::new(x, y), 20.0, heading, 0.0),
        next_direction: next,
    }
}

pub fn north(id: VehicleId, x: f64, y: f64) -> Candidate {
    candidate(id, x, y, Heading::N, NextDirection::Heading(Heading::N))
}

pub fn random_profile(rng: &mut ChaCha8Rng) -> Vec<AccelSegment> {
    let n = rng.random_range(0..=4);
    (0..n)
        .map(|_| AccelSegment {
            duration: rng.random_range(0.05..6.0),
            acceleration: rng.random_range(-5.0..=10.0),
        })
        .collect()
}

/// Random group of up to `max` vehicles near one intersection. Positions
/// are sometimes snapped to a coarse grid to provoke ties.
pub fn random_group(rng: &mut ChaCha8Rng, max: usize) -> Vec<Candidate> {
    let n = rng.random_range(1..=max);
    let snap = rng.random_bool(0.3);
    let dirs = [
        NextDirection::Heading(Heading::N),
        NextDirection::Heading(Heading::E),
        NextDirection::Heading(Heading::S),
        NextDirection::Terminal,
    ];
    let ndirs = rng.random_range(1..=dirs.len());
    (0..n)
        .map(|k| {
            let heading = if rng.random_bool(0.75) {
                Heading::N
            } else {
                Heading::E
            };
            let mut along = rng.random_range(-250.0..250.0);
            if snap {
                along = (along / 50.0_f64).round() * 50.0;
            }
            let lane = 3.5 * rng.random_range(0..2) as f64;
            let pos = match heading {
                Heading::N => Point::new(lane, along),
                _ => Point::new(along, -lane),
            };
            let v = if snap {
                20.0
            } else {
                rng.random_range(5.0..35.0)
            };
            let mut s = MotionSample::new(k as VehicleId * 3 + 1, pos, v, heading, 0.0);
            if !snap {
                s = s.with_profile(random_profile(rng));
            }
            Candidate {
                sample: s,
                next_direction: dirs[rng.random_range(0..ndirs)],
            }
        })
        .collect()
}

/// Five northbound vehicles of the coverage example: V2 and V3 are equally
/// central but V3 cannot reach the front vehicle V1.
pub fn coverage_scene() -> (Vec<Candidate>, ElectionParams) {
    let g = vec![
        north(1, 0.0, 500.0),
        north(2, 0.0, 350.0),
        north(3, 119.0, 291.0),
        north(4, 54.0, 145.0),
        north(5, 11.0, 17.0),
    ];
    let p = ElectionParams {
        horizon: 0.0,
        ..ElectionParams::default()
    };
    (g, p)
}

/// Five eastbound vehicles before an intersection where only V2 turns
/// north: the head has to come from the vehicles continuing east.
pub fn intersection_scene() -> (Vec<Candidate>, ElectionParams) {
    let e = NextDirection::Heading(Heading::E);
    let g = vec![
        candidate(1, 180.0, 0.0, Heading::E, e),
        candidate(
            2,
            100.0,
            0.0,
            Heading::E,
            NextDirection::Heading(Heading::N),
        ),
        candidate(3, 140.0, 0.0, Heading::E, e),
        candidate(4, 50.0, 0.0, Heading::E, e),
        candidate(5, 20.0, 0.0, Heading::E, e),
    ];
    let p = ElectionParams {
        horizon: 0.0,
        ..ElectionParams::default()
    };
    (g, p)
}

/// Two vehicles on one straight road with random speeds and acceleration
/// profiles.
pub fn random_pair(rng: &mut ChaCha8Rng) -> (MotionSample, MotionSample) {
    let heading = if rng.random_bool(0.5) {
        Heading::N
    } else {
        Heading::E
    };
    let place = |along: f64| match heading {
        Heading::N => Point::new(0.0, along),
        _ => Point::new(along, 0.0),
    };
    let i = MotionSample::new(
        1,
        place(rng.random_range(-300.0..300.0)),
        rng.random_range(0.0..35.0),
        heading,
        0.0,
    )
    .with_profile(random_profile(rng));
    let j = MotionSample::new(
        2,
        place(rng.random_range(-300.0..300.0)),
        rng.random_range(0.0..35.0),
        heading,
        0.0,
    )
    .with_profile(random_profile(rng));
    (i, j)
}

/// A group whose head is decided at one specific tie-break level.
pub struct TieCase {
    pub name: &'static str,
    pub group: Vec<Candidate>,
    pub params: ElectionParams,
    pub expected: VehicleId,
}

fn on_road(id: VehicleId, y: f64, v: f64, next: Heading) -> Candidate {
    Candidate {
        sample: MotionSample::new(id, Point::new(0.0, y), v, Heading::N, 0.0),
        next_direction: NextDirection::Heading(next),
    }
}

pub fn tie_cases() -> Vec<TieCase> {
    use Heading::{E, N, S};
    let p = ElectionParams {
        horizon: 0.0,
        ..ElectionParams::default()
    };
    let case = |name, group, expected| TieCase {
        name,
        group,
        params: p,
        expected,
    };
    vec![
        // N partition {1, 2} holds the front vehicle; E partition {3, 4}
        // would give head 3.
        case(
            "partition size, front direction",
            vec![
                on_road(1, 300.0, 20.0, N),
                on_road(2, 200.0, 20.0, N),
                on_road(3, 100.0, 20.0, E),
                on_road(4, 0.0, 20.0, E),
            ],
            2,
        ),
        // Front vehicle turns S alone; N and E tie at two each, E ranks first.
        case(
            "partition size, direction order",
            vec![
                on_road(1, 400.0, 20.0, S),
                on_road(2, 300.0, 20.0, N),
                on_road(3, 200.0, 20.0, E),
                on_road(4, 100.0, 20.0, N),
                on_road(5, 0.0, 20.0, E),
            ],
            3,
        ),
        // 2 and 3 share s̄ = 400/3 and degree 3; 3 keeps its neighbors longer.
        case(
            "lifetime",
            vec![
                on_road(1, 300.0, 35.0, N),
                on_road(2, 200.0, 20.0, N),
                on_road(3, 100.0, 20.0, N),
                on_road(4, 0.0, 10.0, N),
            ],
            3,
        ),
        // Majority {2, 3}: both s̄ = 1000/3, neither reaches the front
        // vehicle, 2 strands three vehicles and 3 strands two.
        case(
            "stranded vehicles",
            vec![
                on_road(1, 1000.0, 20.0, S),
                on_road(2, 700.0, 20.0, N),
                on_road(3, 400.0, 20.0, N),
                on_road(4, 300.0, 20.0, E),
            ],
            3,
        ),
        case(
            "lowest id",
            vec![north(7, 0.0, 100.0), north(3, 0.0, 0.0)],
            3,
        ),
        case("single vehicle", vec![north(7, 0.0, 100.0)], 7),
        // s̄: 1 -> 0.6, 2 -> 0.4, 3 -> 0.6. With 0.5 m of slack all three tie
        // and everything after that is equal, so the lowest id wins.
        case(
            "within tolerance",
            vec![north(3, 0.0, 0.8), north(2, 0.0, 0.4), north(1, 0.0, 0.0)],
            1,
        ),
    ]
}
