//! Hand-built transition, packet and cluster logs with metric values worked
//! out by hand.

use sdpc::metrics::{ClusterRecord, ClusterSnapshot, RunLogs, Window};
use sdpc::protocol::{Cause, MessageKind, StateTag, TransitionEvent};
use sdpc::VehicleId;

pub struct Expected {
    pub ch_change_rate: f64,
    pub avg_ch_duration: Option<f64>,
    pub avg_cm_duration: Option<f64>,
    pub overhead: Option<f64>,
    pub avg_clusters: f64,
    pub avg_clusters_non_singleton: f64,
}

pub struct Trace {
    pub name: &'static str,
    pub logs: RunLogs,
    pub window: Window,
    pub expected: Expected,
}

fn ev(
    time: f64,
    vehicle: VehicleId,
    from: StateTag,
    to: StateTag,
    cause: Cause,
) -> TransitionEvent {
    TransitionEvent {
        time,
        vehicle,
        from,
        to,
        cause,
    }
}

fn snap(time: f64, clusters: &[(VehicleId, u32)]) -> ClusterSnapshot {
    ClusterSnapshot {
        time,
        clusters: clusters
            .iter()
            .map(|&(head, members)| ClusterRecord {
                head,
                members,
                gateways: Vec::new(),
            })
            .collect(),
    }
}

fn packets(spec: &[(f64, MessageKind, usize)]) -> Vec<(f64, MessageKind)> {
    spec.iter()
        .flat_map(|&(t, k, n)| std::iter::repeat_n((t, k), n))
        .collect()
}

use Cause::*;
use StateTag::{Ch, Cm, Out, Tm};

/// A handoff, a head that leaves the road and an open head tenure.
pub fn handoff_and_departure() -> Trace {
    let transitions = vec![
        ev(10.0, 1, Tm, Ch, Formation),
        ev(10.0, 2, Tm, Cm, Formation),
        ev(20.0, 3, Tm, Ch, Formation),
        ev(40.0, 1, Ch, Cm, Handoff),
        ev(40.0, 2, Cm, Ch, Handoff),
        ev(60.0, 3, Ch, Out, Departure),
        ev(70.0, 1, Cm, Tm, ChLoss),
        ev(90.0, 1, Tm, Out, Departure),
    ];
    let packets = packets(&[
        (1.0, MessageKind::VehAdv, 8),
        (12.0, MessageKind::VehAdv, 40),
        (10.0, MessageKind::ChResp, 4),
        (10.0, MessageKind::JoinAck, 3),
        (40.0, MessageKind::ChHandoff, 1),
        (40.0, MessageKind::ChResp, 2),
        (100.0, MessageKind::ChResp, 5),
    ]);
    let snapshots = vec![
        snap(0.0, &[]),
        snap(10.0, &[(1, 1)]),
        snap(20.0, &[(1, 1), (3, 0)]),
        snap(40.0, &[(2, 1), (3, 0)]),
        snap(60.0, &[(2, 1)]),
        snap(70.0, &[(2, 0)]),
    ];
    Trace {
        name: "handoff and departure",
        logs: RunLogs {
            transitions,
            packets,
            snapshots,
        },
        window: Window {
            start: 5.0,
            end: 100.0,
        },
        expected: Expected {
            // One change (vehicle 1 at 40); vehicle 3 leaving the road does not count.
            ch_change_rate: 1.0 / 95.0,
            // 1: [10, 40) = 30, 3: [20, 60) = 40, 2: [40, 100) censored = 60.
            avg_ch_duration: Some(130.0 / 3.0),
            // 2: [10, 40) = 30, 1: [40, 70) = 30.
            avg_cm_duration: Some(30.0),
            // 10 control out of 50 inside the window.
            overhead: Some(0.2),
            // 0·5 + 1·10 + 2·20 + 2·20 + 1·10 + 1·30 over 95 s.
            avg_clusters: 130.0 / 95.0,
            avg_clusters_non_singleton: 60.0 / 95.0,
        },
    }
}

/// Merges and handoffs straddling the window start, and a leave and rejoin
/// logged out of order at the same instant.
pub fn merges_across_window_start() -> Trace {
    let transitions = vec![
        ev(0.0, 1, Tm, Ch, Formation),
        ev(0.0, 2, Tm, Cm, Join),
        ev(10.0, 3, Tm, Ch, Formation),
        ev(30.0, 3, Ch, Cm, Merge),
        ev(40.0, 3, Cm, Out, Departure),
        ev(60.0, 1, Ch, Cm, Merge),
        ev(60.0, 2, Cm, Ch, Merge),
        ev(80.0, 2, Ch, Cm, Handoff),
        ev(80.0, 1, Cm, Ch, Handoff),
        ev(100.0, 2, Tm, Cm, Join),
        ev(100.0, 2, Cm, Tm, LeaveTimeout),
        ev(120.0, 1, Ch, Cm, Handoff),
        ev(120.0, 2, Cm, Ch, Handoff),
    ];
    let packets = packets(&[
        (10.0, MessageKind::ChResp, 4),
        (55.0, MessageKind::VehAdv, 30),
    ]);
    let snapshots = vec![
        snap(50.0, &[(1, 1)]),
        snap(60.0, &[(2, 1)]),
        snap(80.0, &[(1, 1)]),
        snap(100.0, &[(1, 0)]),
        snap(110.0, &[(1, 1)]),
        snap(120.0, &[(2, 1)]),
    ];
    Trace {
        name: "merges across the window start",
        logs: RunLogs {
            transitions,
            packets,
            snapshots,
        },
        window: Window {
            start: 50.0,
            end: 150.0,
        },
        expected: Expected {
            // 1 at 60, 2 at 80, 1 at 120; vehicle 3's merge at 30 is before the window.
            ch_change_rate: 0.03,
            // 1: [0, 60) = 60 and [80, 120) = 40, 2: [60, 80) = 20 and
            // [120, 150) censored = 30.
            avg_ch_duration: Some(37.5),
            // 2: [0, 60) = 60, [80, 100) = 20, [100, 120) = 20; 1: [60, 80) = 20,
            // [120, 150) censored = 30.
            avg_cm_duration: Some(30.0),
            overhead: Some(0.0),
            avg_clusters: 1.0,
            avg_clusters_non_singleton: 0.9,
        },
    }
}

/// No head changes and no traffic at all.
pub fn quiet_road() -> Trace {
    let transitions = vec![
        ev(1.0, 1, Tm, Ch, Formation),
        ev(1.0, 2, Tm, Cm, Formation),
        ev(5.0, 1, Ch, Out, Departure),
        ev(5.0, 2, Cm, Tm, ChLoss),
        ev(7.0, 2, Tm, Ch, Formation),
    ];
    let snapshots = vec![snap(1.0, &[(1, 1)]), snap(5.0, &[]), snap(7.0, &[(2, 0)])];
    Trace {
        name: "quiet road",
        logs: RunLogs {
            transitions,
            packets: Vec::new(),
            snapshots,
        },
        window: Window {
            start: 0.0,
            end: 10.0,
        },
        expected: Expected {
            ch_change_rate: 0.0,
            // 1: [1, 5) = 4, 2: [7, 10) censored = 3.
            avg_ch_duration: Some(3.5),
            avg_cm_duration: Some(4.0),
            overhead: None,
            // 0·1 + 1·4 + 0·2 + 1·3 over 10 s.
            avg_clusters: 0.7,
            avg_clusters_non_singleton: 0.4,
        },
    }
}

pub fn all() -> Vec<Trace> {
    vec![
        handoff_and_departure(),
        merges_across_window_start(),
        quiet_road(),
    ]
}

// Zero tolerance: the worked values are chosen to be exactly representable
// after the same divisions the metrics perform.
fn close(a: f64, b: f64) -> bool {
    a == b
}

fn close_opt(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => close(a, b),
        (None, None) => true,
        _ => false,
    }
}

/// Mismatches between the computed report and the worked values.
pub fn check(trace: &Trace) -> Vec<String> {
    use sdpc::baselines::SelectionPolicy;
    let r = trace
        .logs
        .report(SelectionPolicy::Sdpc, 20.0, 1, trace.window);
    let e = &trace.expected;
    let mut bad = Vec::new();
    if !close(r.ch_change_rate, e.ch_change_rate) {
        bad.push(format!(
            "ch_change_rate {} != {}",
            r.ch_change_rate, e.ch_change_rate
        ));
    }
    if !close_opt(r.avg_ch_duration, e.avg_ch_duration) {
        bad.push(format!(
            "avg_ch_duration {:?} != {:?}",
            r.avg_ch_duration, e.avg_ch_duration
        ));
    }
    if !close_opt(r.avg_cm_duration, e.avg_cm_duration) {
        bad.push(format!(
            "avg_cm_duration {:?} != {:?}",
            r.avg_cm_duration, e.avg_cm_duration
        ));
    }
    if !close_opt(r.overhead, e.overhead) {
        bad.push(format!("overhead {:?} != {:?}", r.overhead, e.overhead));
    }
    if !close(r.avg_clusters, e.avg_clusters) {
        bad.push(format!(
            "avg_clusters {} != {}",
            r.avg_clusters, e.avg_clusters
        ));
    }
    if !close(r.avg_clusters_non_singleton, e.avg_clusters_non_singleton) {
        bad.push(format!(
            "avg_clusters_non_singleton {} != {}",
            r.avg_clusters_non_singleton, e.avg_clusters_non_singleton
        ));
    }
    bad
}
