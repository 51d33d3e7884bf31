mod common;

use proptest::prelude::*;
use rand::Rng;

use common::{random_pair, trapezoid_relative_distance};
use sdpc::geom::Point;
use sdpc::network::Heading;
use sdpc::prediction::{
    avg_predicted_relative_distance, expected_ch_lifetime, relative_distance_at, AccelSegment,
    MotionSample, PredictionError,
};

#[test]
fn closed_form_matches_trapezoid_integration() {
    let mut rng = common::rng(0x5eed);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (i, j) = random_pair(&mut rng);
        let t = rng.random_range(0.0..20.0);
        let exact = relative_distance_at(&i, &j, t).unwrap();
        let approx = trapezoid_relative_distance(&i, &j, t, 1e-3);
        // Relative to the distance, floored at 1 m for near-passing pairs.
        let err = (exact - approx).abs() / exact.max(1.0);
        worst = worst.max(err);
    }
    assert!(worst <= 1e-6, "worst relative error {worst:e}");
}

#[test]
fn hand_computed_distances() {
    // i: 100 m ahead at 10 m/s, +2 m/s² for 10 s. j: 20 m/s constant.
    let i = MotionSample::new(1, Point::new(0.0, 100.0), 10.0, Heading::N, 0.0).with_profile(vec![
        AccelSegment {
            duration: 10.0,
            acceleration: 2.0,
        },
    ]);
    let j = MotionSample::new(2, Point::new(0.0, 0.0), 20.0, Heading::N, 0.0);
    // s(t) = 100 - 10t + t² for t <= 10: minimum 75 at t = 5.
    assert_eq!(relative_distance_at(&i, &j, 5.0).unwrap(), 75.0);
    assert_eq!(relative_distance_at(&i, &j, 10.0).unwrap(), 100.0);
    // After the segment both move at 30 vs 20 m/s.
    assert_eq!(relative_distance_at(&i, &j, 12.0).unwrap(), 120.0);
    assert_eq!(relative_distance_at(&j, &i, 12.0).unwrap(), 120.0);
}

#[test]
fn group_average_and_lifetime() {
    let at = |id, y: f64, v| MotionSample::new(id, Point::new(0.0, y), v, Heading::N, 0.0);
    let g = vec![at(1, 0.0, 20.0), at(2, 100.0, 20.0), at(3, 250.0, 20.0)];
    assert_eq!(avg_predicted_relative_distance(1, &g, 5.0).unwrap(), 175.0);
    assert_eq!(avg_predicted_relative_distance(2, &g, 5.0).unwrap(), 125.0);
    // Nobody moves apart: lifetime hits the cap.
    assert_eq!(expected_ch_lifetime(2, &g, 200.0, 60.0).unwrap(), 60.0);
    // Vehicle 3 starts out of range of 1; 2 pulls away at 10 m/s and passes
    // 200 m just after t = 10.
    let g = vec![at(1, 0.0, 20.0), at(2, 100.0, 30.0), at(3, 250.0, 20.0)];
    let life = expected_ch_lifetime(1, &g, 200.0, 60.0).unwrap();
    assert!((life - 10.1).abs() < 1e-9, "{life}");
}

#[test]
fn rejects_bad_queries() {
    let a = MotionSample::new(1, Point::new(0.0, 0.0), 1.0, Heading::N, 0.0);
    let b = MotionSample::new(2, Point::new(0.0, 5.0), 1.0, Heading::N, 1.0);
    assert!(matches!(
        relative_distance_at(&a, &b, 1.0),
        Err(PredictionError::SnapshotMismatch(..))
    ));
    let c = MotionSample::new(3, Point::new(0.0, 5.0), 1.0, Heading::N, 0.0);
    assert!(matches!(
        relative_distance_at(&a, &c, -1.0),
        Err(PredictionError::NegativeTime(_))
    ));
    assert!(matches!(
        avg_predicted_relative_distance(1, std::slice::from_ref(&a), 1.0),
        Err(PredictionError::GroupTooSmall(1))
    ));
    assert!(matches!(
        avg_predicted_relative_distance(9, &[a, c], 1.0),
        Err(PredictionError::NotInGroup(9))
    ));
}

fn arb_profile() -> impl Strategy<Value = Vec<AccelSegment>> {
    prop::collection::vec((0.05f64..6.0, -5.0f64..10.0), 0..4).prop_map(|v| {
        v.into_iter()
            .map(|(duration, acceleration)| AccelSegment {
                duration,
                acceleration,
            })
            .collect()
    })
}

fn arb_sample(id: u32) -> impl Strategy<Value = MotionSample> {
    (-300.0f64..300.0, 0.0f64..35.0, arb_profile()).prop_map(move |(y, v, p)| {
        MotionSample::new(id, Point::new(0.0, y), v, Heading::N, 0.0).with_profile(p)
    })
}

proptest! {
    #[test]
    fn symmetric(i in arb_sample(1), j in arb_sample(2), t in 0.0f64..30.0) {
        let a = relative_distance_at(&i, &j, t).unwrap();
        let b = relative_distance_at(&j, &i, t).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn shared_velocity_offset_changes_nothing(i in arb_sample(1), j in arb_sample(2), t in 0.0f64..30.0, dv in -5.0f64..5.0) {
        let base = relative_distance_at(&i, &j, t).unwrap();
        let mut i2 = i.clone();
        let mut j2 = j.clone();
        i2.velocity += dv;
        j2.velocity += dv;
        let shifted = relative_distance_at(&i2, &j2, t).unwrap();
        prop_assert!((base - shifted).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn zero_horizon_is_mean_distance(ys in prop::collection::vec(-300.0f64..300.0, 2..8), v in 0.0f64..35.0) {
        let g: Vec<MotionSample> = ys.iter().enumerate()
            .map(|(k, &y)| MotionSample::new(k as u32, Point::new(0.0, y), v, Heading::N, 0.0))
            .collect();
        let s = avg_predicted_relative_distance(0, &g, 0.0).unwrap();
        let mean = ys[1..].iter().map(|y| (y - ys[0]).abs()).sum::<f64>() / (ys.len() - 1) as f64;
        prop_assert!((s - mean).abs() <= 1e-9 * mean.max(1.0));
    }
}
