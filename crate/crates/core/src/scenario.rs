//! One simulated run: configuration, the tick loop and its outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{Channel, ChannelConfig};
use crate::geom::Point;
use crate::invariants::{InvariantChecker, TickView, Violation};
use crate::metrics::{
    grouped_run_aggregate, write_packets, write_snapshots, write_transitions, ClusterRecord,
    ClusterSnapshot, GroupedReport, MetricsError, MetricsReport, PacketRow, RunLogs, Window,
};
use crate::mobility::{draw_spawn, ArrivalProcess, MobilityConfig, Traffic, Vehicle};
use crate::network::{NetworkError, NetworkSpec, RoadNetwork, TurnProbabilities, TurnProfile};
use crate::protocol::node::MergeCommit;
use crate::protocol::{Effects, Message, Node, ProtocolParams, SelfView, TransitionEvent};
use crate::VehicleId;

/// Turn profile assignment for the fleet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupProfile {
    /// Vehicles cycle through straight-only, occasional and frequent by id.
    Mixed,
    StraightOnly,
    Occasional,
    Frequent,
}

impl GroupProfile {
    pub fn profile_for(self, id: VehicleId) -> TurnProfile {
        match self {
            GroupProfile::Mixed => [
                TurnProfile::StraightOnly,
                TurnProfile::Occasional,
                TurnProfile::Frequent,
            ][id as usize % 3],
            GroupProfile::StraightOnly => TurnProfile::StraightOnly,
            GroupProfile::Occasional => TurnProfile::Occasional,
            GroupProfile::Frequent => TurnProfile::Frequent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// s
    pub simulation_time: f64,
    /// Tick length, s.
    pub dt: f64,
    pub vehicle_count: u32,
    /// vehicles/s
    pub arrival_rate: f64,
    /// Transmission range, m. Overrides the channel and election ranges.
    pub tr: f64,
    /// Maximum velocity for `run`, m/s.
    pub max_velocity: f64,
    /// Velocities for `sweep`, m/s.
    pub velocities: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Road network file; the built-in grid when absent.
    pub network: Option<PathBuf>,
    pub group_profile: GroupProfile,
    pub turn_probabilities: TurnProbabilities,
    /// Measurement never starts before this time, s.
    pub warmup_min: f64,
    /// Measurement end, s; the end of the run when absent.
    pub measure_end: Option<f64>,
    /// s
    pub snapshot_interval: f64,
    pub mobility: MobilityConfig,
    pub protocol: ProtocolParams,
    pub channel: ChannelConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            simulation_time: 300.0,
            dt: 0.1,
            vehicle_count: 100,
            arrival_rate: 2.0,
            tr: 200.0,
            max_velocity: 20.0,
            velocities: vec![10.0, 15.0, 20.0, 25.0, 30.0, 35.0],
            seeds: vec![1, 2, 3, 4, 5],
            network: None,
            group_profile: GroupProfile::Mixed,
            turn_probabilities: TurnProbabilities::default(),
            warmup_min: 50.0,
            measure_end: None,
            snapshot_interval: 1.0,
            mobility: MobilityConfig::default(),
            protocol: ProtocolParams::default(),
            channel: ChannelConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid config: {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("network: {0}")]
    Network(#[from] NetworkError),
    #[error("no measurement window: vehicles finished entering at {start} s, run ends at {end} s")]
    NoWindow { start: f64, end: f64 },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn invalid(field: &str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let mut cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Reads a config file. A relative network path is taken relative to the
    /// config file.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(net) = &cfg.network {
            if net.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.network = Some(dir.join(net));
                }
            }
        }
        Ok(cfg)
    }

    /// Checks every field and copies the shared range into the sub-configs.
    pub fn resolve(&mut self) -> Result<(), ScenarioError> {
        let positive = [
            ("simulation_time", self.simulation_time),
            ("dt", self.dt),
            ("arrival_rate", self.arrival_rate),
            ("tr", self.tr),
            ("max_velocity", self.max_velocity),
            ("snapshot_interval", self.snapshot_interval),
            ("protocol.beacon_period", self.protocol.beacon_period),
            ("protocol.en_timer", self.protocol.en_timer),
            ("protocol.cm_timer", self.protocol.cm_timer),
            ("protocol.ch_timer", self.protocol.ch_timer),
            ("protocol.merge_timer", self.protocol.merge_timer),
            ("mobility.accel_limit", self.mobility.accel_limit),
            ("mobility.decel_limit", self.mobility.decel_limit),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(
                    field,
                    format!("must be a positive number, got {v}"),
                ));
            }
        }
        if self.vehicle_count == 0 {
            return Err(invalid("vehicle_count", "must be at least 1"));
        }
        let p = self.channel.loss_probability;
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid(
                "channel.loss_probability",
                format!("must lie in [0, 1], got {p}"),
            ));
        }
        if self.protocol.election.horizon < 0.0 {
            return Err(invalid("protocol.election.horizon", "must be non-negative"));
        }
        for (i, v) in self.velocities.iter().enumerate() {
            if !(v.is_finite() && *v > 0.0) {
                return Err(invalid(
                    &format!("velocities[{i}]"),
                    format!("must be positive, got {v}"),
                ));
            }
        }
        if let Some(end) = self.measure_end {
            if !(end > 0.0 && end <= self.simulation_time) {
                return Err(invalid(
                    "measure_end",
                    format!("must lie in (0, simulation_time], got {end}"),
                ));
            }
        }
        let ticks_per_beacon = self.protocol.beacon_period / self.dt;
        if (ticks_per_beacon - ticks_per_beacon.round()).abs() > 1e-9 {
            return Err(invalid(
                "protocol.beacon_period",
                "must be a whole number of ticks",
            ));
        }
        self.channel.tr = self.tr;
        self.protocol.election.tr = self.tr;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the resolved config.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn network(&self) -> Result<RoadNetwork, ScenarioError> {
        let spec = match &self.network {
            Some(path) => NetworkSpec::load(path)?,
            None => NetworkSpec::default_grid(),
        };
        Ok(RoadNetwork::build(&spec)?)
    }

    fn ticks(&self) -> u64 {
        (self.simulation_time / self.dt - 1e-9).ceil() as u64
    }

    fn tick_time(&self, tick: u64) -> f64 {
        tick as f64 * self.dt
    }
}

/// Independent random streams of one run.
#[repr(u64)]
enum Stream {
    Arrivals = 0,
    Attributes = 1,
    Routes = 2,
    TurnSpeeds = 3,
    ChannelLoss = 4,
}

fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

/// Everything produced by one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub logs: RunLogs,
    pub packet_rows: Vec<PacketRow>,
    pub report: MetricsReport,
    pub violations: Vec<Violation>,
    pub arrivals: Vec<f64>,
    /// Unicasts addressed to vehicles no longer on the road.
    pub dropped_stale: u64,
    /// Requests ignored because the sender was not a known neighbor.
    pub stale_requests: u64,
    pub merges: Vec<MergeCommit>,
}

struct World<'a> {
    cfg: &'a ScenarioConfig,
    net: RoadNetwork,
    traffic: Traffic,
    nodes: BTreeMap<VehicleId, Node>,
    positions: BTreeMap<VehicleId, Point>,
    channel: Channel,
    tick: u64,
    now: f64,
    transitions: Vec<TransitionEvent>,
    tick_transitions: usize,
    merges: Vec<MergeCommit>,
    tick_merges: usize,
    stale_requests: u64,
}

/// Delivery rounds per tick before the loop gives up on a message storm.
const MAX_ROUNDS: usize = 32;

impl World<'_> {
    fn self_view(&self, v: &Vehicle) -> SelfView {
        let edge = self.net.edge(v.pos.edge).expect("vehicle on known edge");
        SelfView {
            position: self.net.planar_position(&v.pos).expect("valid position"),
            velocity: v.kin.velocity,
            acceleration: v.kin.acceleration,
            max_velocity: v.kin.max_velocity,
            heading: edge.heading,
            next_direction: self
                .net
                .direction_after_next_intersection(&v.route, &v.pos)
                .expect("vehicle is on its route"),
        }
    }

    fn absorb(&mut self, fx: Effects) {
        self.transitions.extend(fx.transitions);
        self.merges.extend(fx.merges);
        self.stale_requests += fx.stale;
        for msg in fx.messages {
            self.send(msg);
        }
    }

    fn send(&mut self, msg: Message) {
        self.channel
            .transmit(self.tick, self.now, msg, &self.positions);
    }

    fn deliver(&mut self) {
        let params = &self.cfg.protocol;
        for _ in 0..MAX_ROUNDS {
            let due = self.channel.take_due(self.tick);
            if due.is_empty() {
                return;
            }
            for (to, msg) in due {
                let Some(node) = self.nodes.get_mut(&to) else {
                    continue;
                };
                let mut fx = Effects::default();
                node.on_message(&msg, self.now, params, &mut fx);
                self.absorb(fx);
            }
        }
    }

    fn step(&mut self, turn_rng: &mut ChaCha8Rng) {
        let params = &self.cfg.protocol;
        if self.tick > 0 {
            let out = self
                .traffic
                .step(&self.cfg.mobility, &self.net, self.cfg.dt, turn_rng);
            for v in out.exited {
                let me = self.self_view(&v);
                let Some(mut node) = self.nodes.remove(&v.id) else {
                    continue;
                };
                self.positions.remove(&v.id);
                node.update_self(me);
                let mut fx = Effects::default();
                node.depart(self.now, params, &mut fx);
                node.finish_departure(self.now, &mut fx);
                self.absorb(fx);
            }
        }
    }

    fn refresh(&mut self) {
        let views: Vec<(VehicleId, SelfView)> = self
            .traffic
            .vehicles
            .values()
            .map(|v| (v.id, self.self_view(v)))
            .collect();
        for (id, me) in views {
            self.positions.insert(id, me.position);
            match self.nodes.get_mut(&id) {
                Some(n) => n.update_self(me),
                None => {
                    self.nodes.insert(id, Node::new(id, me, self.now));
                }
            }
        }
    }

    fn protocol_tick(&mut self) {
        let params = &self.cfg.protocol;
        let ids: Vec<VehicleId> = self.nodes.keys().copied().collect();
        for &id in &ids {
            if let Some(msg) = self
                .nodes
                .get_mut(&id)
                .and_then(|n| n.beacon(self.now, params))
            {
                self.send(msg);
            }
        }
        self.deliver();
        for &id in &ids {
            let Some(node) = self.nodes.get_mut(&id) else {
                continue;
            };
            let mut fx = Effects::default();
            node.on_tick(self.now, params, &mut fx);
            self.absorb(fx);
            self.deliver();
        }
    }

    fn snapshot(&self) -> ClusterSnapshot {
        let mut members: BTreeMap<VehicleId, u32> = BTreeMap::new();
        for n in self.nodes.values() {
            if let Some(h) = n.head() {
                *members.entry(h).or_default() += 1;
            }
        }
        let clusters = self
            .nodes
            .values()
            .filter_map(|n| {
                let h = n.head_state()?;
                Some(ClusterRecord {
                    head: n.id,
                    members: members.get(&n.id).copied().unwrap_or(0),
                    gateways: [h.gateways.0, h.gateways.1].into_iter().flatten().collect(),
                })
            })
            .collect();
        ClusterSnapshot {
            time: self.now,
            clusters,
        }
    }
}

/// Runs one scenario and computes its metrics.
pub fn run_scenario(config: &ScenarioConfig, seed: u64) -> Result<RunOutput, ScenarioError> {
    let mut cfg = config.clone();
    cfg.resolve()?;
    let cfg = &cfg;
    let net = cfg.network()?;

    let mut arrival_rng = stream(seed, Stream::Arrivals);
    let mut attr_rng = stream(seed, Stream::Attributes);
    let mut route_rng = stream(seed, Stream::Routes);
    let mut turn_rng = stream(seed, Stream::TurnSpeeds);
    let mut channel = Channel::new(cfg.channel, stream(seed, Stream::ChannelLoss));
    channel.enable_packet_log();

    let mut arrivals_proc =
        ArrivalProcess::new(cfg.arrival_rate, cfg.vehicle_count, &mut arrival_rng);
    let mut world = World {
        cfg,
        net,
        traffic: Traffic::new(),
        nodes: BTreeMap::new(),
        positions: BTreeMap::new(),
        channel,
        tick: 0,
        now: 0.0,
        transitions: Vec::new(),
        tick_transitions: 0,
        merges: Vec::new(),
        tick_merges: 0,
        stale_requests: 0,
    };
    let mut checker = InvariantChecker::new(cfg.tr, cfg.protocol.cm_timer)
        .with_delay(cfg.channel.delay_ticks, cfg.dt);
    let mut snapshots = Vec::new();
    let mut arrivals = Vec::new();
    let mut next_id: VehicleId = 1;
    let snapshot_every = (cfg.snapshot_interval / cfg.dt).round().max(1.0) as u64;

    for tick in 0..cfg.ticks() {
        world.tick = tick;
        world.now = cfg.tick_time(tick);
        world.step(&mut turn_rng);

        for t in arrivals_proc.due(world.now, &mut arrival_rng) {
            let profile = cfg.group_profile.profile_for(next_id);
            let spec = draw_spawn(
                &cfg.mobility,
                &world.net,
                cfg.max_velocity,
                profile,
                &cfg.turn_probabilities,
                t,
                &mut attr_rng,
                &mut route_rng,
            );
            world.traffic.enqueue(next_id, spec);
            arrivals.push(t);
            next_id += 1;
        }
        world.traffic.admit(&cfg.mobility, world.now);
        world.refresh();
        world.protocol_tick();

        if tick % snapshot_every == 0 {
            snapshots.push(world.snapshot());
        }
        checker.check(&TickView {
            time: world.now,
            nodes: &world.nodes,
            positions: &world.positions,
            transitions: &world.transitions[world.tick_transitions..],
            merges: &world.merges[world.tick_merges..],
        });
        world.tick_transitions = world.transitions.len();
        world.tick_merges = world.merges.len();
    }

    let end = cfg.measure_end.unwrap_or(cfg.simulation_time);
    let all_entered = arrivals_proc.remaining() == 0 && world.traffic.pending_count() == 0;
    let start = match world.traffic.last_entry() {
        Some(t) if all_entered => cfg.warmup_min.max(t),
        _ => end,
    };
    let window = Window::new(start, end).map_err(|_| ScenarioError::NoWindow { start, end })?;

    let packet_rows: Vec<PacketRow> = world
        .channel
        .packet_log()
        .unwrap_or_default()
        .iter()
        .map(|r| PacketRow {
            tick: r.tick,
            time: cfg.tick_time(r.tick),
            sender: r.sender,
            kind: r.kind,
            recipients: r.recipients.clone(),
        })
        .collect();
    let logs = RunLogs {
        transitions: world.transitions,
        packets: world.channel.ledger.entries().to_vec(),
        snapshots,
    };
    let report = logs.report(cfg.protocol.policy, cfg.max_velocity, seed, window);
    Ok(RunOutput {
        config: cfg.clone(),
        seed,
        logs,
        packet_rows,
        report,
        violations: checker.violations().to_vec(),
        arrivals,
        dropped_stale: world.channel.dropped_stale,
        stale_requests: world.stale_requests,
        merges: world.merges,
    })
}

#[derive(Serialize)]
struct ReportDocument<'a, T: Serialize> {
    config_hash: String,
    seed: u64,
    invariant_violations: usize,
    dropped_stale: u64,
    stale_requests: u64,
    metrics: &'a T,
    config: &'a ScenarioConfig,
}

fn header(cfg: &ScenarioConfig, seed: u64) -> String {
    let mut h = format!("# config-hash: {}\n# seed: {seed}\n", cfg.hash());
    for line in cfg.to_toml().lines() {
        h.push_str("# ");
        h.push_str(line);
        h.push('\n');
    }
    h
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), ScenarioError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(contents).map_err(io_err(path))
}

fn write_csv(
    path: &Path,
    head: &str,
    body: impl FnOnce(&mut Vec<u8>) -> Result<(), MetricsError>,
) -> Result<(), ScenarioError> {
    let mut buf = head.as_bytes().to_vec();
    body(&mut buf)?;
    write_file(path, &buf)
}

/// Directory name for a run: config hash plus seed.
pub fn run_dir_name(cfg: &ScenarioConfig, seed: u64) -> String {
    format!("{}-seed{seed}", cfg.hash())
}

impl RunOutput {
    /// Writes the report and logs under `<out>/<hash>-seed<n>/` and returns
    /// that directory.
    pub fn write(&self, out: &Path) -> Result<PathBuf, ScenarioError> {
        let dir = out.join(run_dir_name(&self.config, self.seed));
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let head = header(&self.config, self.seed);
        let doc = ReportDocument {
            config_hash: self.config.hash(),
            seed: self.seed,
            invariant_violations: self.violations.len(),
            dropped_stale: self.dropped_stale,
            stale_requests: self.stale_requests,
            metrics: &self.report,
            config: &self.config,
        };
        let text = toml::to_string(&doc).expect("report serializes");
        write_file(&dir.join("report.toml"), text.as_bytes())?;
        write_csv(&dir.join("transitions.csv"), &head, |b| {
            write_transitions(b, &self.logs.transitions)
        })?;
        write_csv(&dir.join("clusters.csv"), &head, |b| {
            write_snapshots(b, &self.logs.snapshots)
        })?;
        write_csv(&dir.join("packets.csv"), &head, |b| {
            write_packets(b, &self.packet_rows)
        })?;
        let mut v = head.into_bytes();
        for violation in &self.violations {
            writeln!(v, "{violation}").expect("write to vec");
        }
        write_file(&dir.join("violations.txt"), &v)?;
        Ok(dir)
    }
}

/// Group sizes and profiles for the three-group procedure.
pub fn group_configs(cfg: &ScenarioConfig) -> [ScenarioConfig; 3] {
    let n = cfg.vehicle_count;
    let small = n / 3;
    let sizes = [n - 2 * small, small, small];
    let profiles = [
        GroupProfile::StraightOnly,
        GroupProfile::Occasional,
        GroupProfile::Frequent,
    ];
    std::array::from_fn(|i| {
        let mut c = cfg.clone();
        c.vehicle_count = sizes[i];
        c.group_profile = profiles[i];
        c.measure_end
            .get_or_insert(250.0_f64.min(c.simulation_time));
        c
    })
}

#[derive(Debug, Clone)]
pub struct GroupedOutput {
    pub groups: Vec<RunOutput>,
    pub report: GroupedReport,
}

/// Runs the straight-only, occasional and frequent groups separately and
/// combines their metrics.
pub fn grouped_run(cfg: &ScenarioConfig, seed: u64) -> Result<GroupedOutput, ScenarioError> {
    let groups = group_configs(cfg)
        .iter()
        .map(|c| run_scenario(c, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let reports: Vec<MetricsReport> = groups.iter().map(|g| g.report.clone()).collect();
    let report = grouped_run_aggregate(&reports)?;
    Ok(GroupedOutput { groups, report })
}

impl GroupedOutput {
    pub fn write(
        &self,
        out: &Path,
        cfg: &ScenarioConfig,
        seed: u64,
    ) -> Result<PathBuf, ScenarioError> {
        let dir = out.join(format!("{}-seed{seed}-grouped", cfg.hash()));
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for g in &self.groups {
            g.write(&dir)?;
        }
        let doc = ReportDocument {
            config_hash: cfg.hash(),
            seed,
            invariant_violations: self.groups.iter().map(|g| g.violations.len()).sum(),
            dropped_stale: self.groups.iter().map(|g| g.dropped_stale).sum(),
            stale_requests: self.groups.iter().map(|g| g.stale_requests).sum(),
            metrics: &self.report,
            config: cfg,
        };
        let text = toml::to_string(&doc).expect("report serializes");
        write_file(&dir.join("grouped_report.toml"), text.as_bytes())?;
        Ok(dir)
    }
}
