//! Discrete-time multi-agent simulator over the V2V channel model.
//!
//! Every agent broadcasts one packet per transmit period. Each directed link
//! samples the channel, delivered packets are delayed by propagation,
//! transmission and a fixed processing offset, and receivers reorder packets
//! in a [`DispatchBuffer`] before feeding the MJPF that tracks the sender.
//! The filter for step `k` runs at `t_k + playout_delay`; a step without a
//! packet becomes a predict-only step with an unmeasured abnormality.

use std::collections::{BTreeMap, BinaryHeap};
use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelConfig};
use crate::eval;
use crate::io::write_atomic;
use crate::mjpf::{self, Mjpf, MjpfConfig, StepOutput, Tracker};
use crate::statespace::{self, RawSeries};
use crate::vocabulary::AgentModel;
use crate::{derive_seed, Error, Result};

pub const PAYLOAD_BYTES: usize = 12;
pub const UDP_HEADER_BYTES: usize = 8;
pub const IP_HEADER_BYTES: usize = 20;
pub const MAC_HEADER_BYTES: usize = 28;
pub const LINK_TRAILER_BYTES: usize = 6;
pub const PACKET_BYTES: usize = PAYLOAD_BYTES + UDP_HEADER_BYTES + IP_HEADER_BYTES + MAC_HEADER_BYTES + LINK_TRAILER_BYTES;

/// Seconds added to every delivered packet.
pub const DEFAULT_PROCESSING_DELAY: f64 = 1e-3;

/// Distances are clamped to this many metres before the path-loss model.
pub const MIN_LINK_DISTANCE: f64 = 1.0;

const FILTER_STREAM: u64 = 1;
const LINK_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    /// Raw `[x, y, steering, power]` sample.
    Observation { values: [f64; 4] },
    /// The sender's own abnormality for the step.
    Abnormality { theta: Option<f64>, map_word: Option<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub src: String,
    /// Step index of the sample; increases with the timestamp.
    pub seq: u64,
    pub timestamp: f64,
    pub payload: Payload,
}

impl Packet {
    pub fn size(&self) -> usize {
        PACKET_BYTES
    }
}

/// Reorders one link's packets and releases them to the filter in
/// sequence order. Packets at or behind the filter head are dropped.
#[derive(Clone, Debug, Default)]
pub struct DispatchBuffer {
    head: Option<u64>,
    pending: BTreeMap<u64, Packet>,
    late_lost: u64,
}

impl DispatchBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Last step released to the filter.
    pub fn head(&self) -> Option<u64> {
        self.head
    }

    /// Moves the head without releasing anything.
    pub fn set_head(&mut self, seq: u64) {
        self.head = Some(self.head.map_or(seq, |h| h.max(seq)));
    }

    /// Buffers `packet`; returns false when it is stale and was dropped.
    pub fn push(&mut self, packet: Packet) -> bool {
        if self.head.is_some_and(|h| packet.seq <= h) {
            self.late_lost += 1;
            return false;
        }
        self.pending.insert(packet.seq, packet);
        true
    }

    /// Releases every buffered packet up to and including `seq`, in order.
    pub fn release_through(&mut self, seq: u64) -> Vec<Packet> {
        let rest = self.pending.split_off(&(seq + 1));
        let out = std::mem::replace(&mut self.pending, rest).into_values().collect();
        self.set_head(seq);
        out
    }

    pub fn late_lost(&self) -> u64 {
        self.late_lost
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadMode {
    #[default]
    Observations,
    Abnormality,
}

/// Files for one agent in a simulation config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSource {
    pub id: String,
    pub data: PathBuf,
    pub model: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub observer: String,
    pub observed: String,
    /// Label file for the observed agent's steps.
    pub labels: Option<PathBuf>,
    pub replicates: usize,
    pub k_list: Vec<f64>,
    pub rates: Vec<f64>,
    pub threshold: f64,
    pub unmeasured: UnmeasuredPolicy,
    /// Sample Rician fades by inverse transform so every condition loses a
    /// nested set of packets for the same replicate.
    pub coupled_fading: bool,
}

/// How the sweep scores steps whose packet never reached the observer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnmeasuredPolicy {
    /// The receiver had nothing to compare, so it raised no alarm: `theta = 0`.
    #[default]
    NoAlarm,
    /// Drop the step from the evaluation.
    Exclude,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            observer: "follower".into(),
            observed: "leader".into(),
            labels: None,
            replicates: 1,
            k_list: vec![3.0, 2.6, 1.8, 0.0],
            rates: vec![18.0, 27.0],
            threshold: eval::DEFAULT_THRESHOLD,
            unmeasured: UnmeasuredPolicy::NoAlarm,
            coupled_fading: true,
        }
    }
}

/// Simulation config; this is the JSON document read by the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Tick interval; taken from the trajectories when absent.
    pub dt: Option<f64>,
    /// Simulated seconds; the whole common span when absent.
    pub duration: Option<f64>,
    /// Broadcast period; every tick when absent.
    pub tx_period: Option<f64>,
    /// `None` is an ideal channel: lossless and delay-free.
    pub channel: Option<ChannelConfig>,
    pub payload: PayloadMode,
    pub processing_delay: f64,
    /// Time a receiver waits after a sample's timestamp before stepping its
    /// filter; one tick when absent.
    pub playout_delay: Option<f64>,
    /// Loss ratio above which the summary flags a switch to abnormality
    /// payloads. Reported only; the payload mode never changes at run time.
    pub mode_switch_loss_threshold: Option<f64>,
    pub mjpf: MjpfConfig,
    /// `(observer, observed)` filter pairs; every ordered pair when absent.
    pub pairs: Option<Vec<(String, String)>>,
    pub agents: Vec<AgentSource>,
    pub sweep: Option<SweepConfig>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: None,
            duration: None,
            tx_period: None,
            channel: Some(ChannelConfig::default()),
            payload: PayloadMode::Observations,
            processing_delay: DEFAULT_PROCESSING_DELAY,
            playout_delay: None,
            mode_switch_loss_threshold: None,
            mjpf: MjpfConfig::default(),
            pairs: None,
            agents: Vec::new(),
            sweep: None,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.dt.is_some_and(|d| !(d > 0.0)) || self.duration.is_some_and(|d| !(d > 0.0)) {
            return bad("dt and duration must be positive");
        }
        if let (Some(p), Some(dt)) = (self.tx_period, self.dt) {
            if p < dt * (1.0 - 1e-9) {
                return bad("tx_period must be at least dt");
            }
        }
        if !(self.processing_delay >= 0.0) || self.playout_delay.is_some_and(|p| !(p >= 0.0)) {
            return bad("delays must be non-negative");
        }
        if let Some(c) = &self.channel {
            c.validate()?;
        }
        if let Some(s) = &self.sweep {
            if s.k_list.is_empty() || s.rates.is_empty() {
                return bad("sweep needs at least one K factor and one data rate");
            }
            if s.replicates == 0 {
                return bad("sweep needs at least one replicate");
            }
            for &r in &s.rates {
                channel::modulation_for_rate(r)?;
            }
            if s.k_list.iter().any(|k| !(*k >= 0.0)) {
                return bad("K factors must be non-negative");
            }
        }
        Ok(())
    }

    /// Reads every agent's series and model, resolving paths against `base`.
    pub fn load_agents(&self, base: &Path) -> Result<(Vec<RawSeries>, BTreeMap<String, AgentModel>)> {
        let mut series = Vec::new();
        let mut models = BTreeMap::new();
        for a in &self.agents {
            let mut s = crate::scenario::load_csv(&base.join(&a.data))?;
            s.agent_id = a.id.clone();
            series.push(s);
            models.insert(a.id.clone(), AgentModel::load(&base.join(&a.model))?);
        }
        Ok((series, models))
    }
}

/// Seed of the filter tracking agent `agent_index`, shared by every
/// observer so a lossless remote filter reproduces the local one.
pub fn filter_seed(seed: u64, agent_index: usize) -> u64 {
    derive_seed(derive_seed(seed, FILTER_STREAM), agent_index as u64)
}

fn link_seed(seed: u64, channel_seed: u64, link_index: usize) -> u64 {
    derive_seed(derive_seed(seed ^ channel_seed, LINK_STREAM), link_index as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Delivered,
    ChannelLost,
    RangeLost,
    LateLost,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub src: String,
    pub dst: String,
    pub seq: u64,
    pub sent_t: f64,
    /// Arrival time; `None` when the channel dropped the packet.
    pub recv_t: Option<f64>,
    pub distance: f64,
    /// `None` on an ideal channel.
    pub pr_dbm: Option<f64>,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub src: String,
    pub dst: String,
    pub sent: u64,
    pub delivered: u64,
    pub channel_lost: u64,
    pub range_lost: u64,
    pub late_lost: u64,
    pub loss_ratio: f64,
    /// Over delivered packets; zero when none were delivered.
    pub mean_delay: f64,
    pub max_delay: f64,
}

impl LinkStats {
    fn new(src: &str, dst: &str) -> Self {
        LinkStats {
            src: src.into(),
            dst: dst.into(),
            sent: 0,
            delivered: 0,
            channel_lost: 0,
            range_lost: 0,
            late_lost: 0,
            loss_ratio: 0.0,
            mean_delay: 0.0,
            max_delay: 0.0,
        }
    }

    fn add(&mut self, r: &PacketRecord) {
        self.sent += 1;
        match r.outcome {
            Outcome::Delivered => {
                let d = r.recv_t.unwrap_or(r.sent_t) - r.sent_t;
                self.mean_delay += d;
                self.max_delay = self.max_delay.max(d);
                self.delivered += 1;
            }
            Outcome::ChannelLost => self.channel_lost += 1,
            Outcome::RangeLost => self.range_lost += 1,
            Outcome::LateLost => self.late_lost += 1,
        }
    }

    fn finish(&mut self) {
        if self.delivered > 0 {
            self.mean_delay /= self.delivered as f64;
        }
        if self.sent > 0 {
            self.loss_ratio = self.lost() as f64 / self.sent as f64;
        }
    }

    pub fn lost(&self) -> u64 {
        self.channel_lost + self.range_lost + self.late_lost
    }
}

/// Per-packet communication log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommLog {
    pub records: Vec<PacketRecord>,
}

impl CommLog {
    /// Statistics per directed link, sorted by `(src, dst)`.
    pub fn link_stats(&self) -> Vec<LinkStats> {
        let mut map: BTreeMap<(&str, &str), LinkStats> = BTreeMap::new();
        for r in &self.records {
            map.entry((&r.src, &r.dst)).or_insert_with(|| LinkStats::new(&r.src, &r.dst)).add(r);
        }
        map.into_values()
            .map(|mut s| {
                s.finish();
                s
            })
            .collect()
    }

    /// Statistics over every link, with `src = dst = "*"`.
    pub fn totals(&self) -> LinkStats {
        let mut s = LinkStats::new("*", "*");
        self.records.iter().for_each(|r| s.add(r));
        s.finish();
        s
    }

    /// Delivered packets as `(sent_t, delay)`.
    pub fn delay_series(&self) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .filter(|r| r.outcome == Outcome::Delivered)
            .filter_map(|r| r.recv_t.map(|t| (r.sent_t, t - r.sent_t)))
            .collect()
    }

    /// `(sent_t, distance)` for every packet.
    pub fn distance_series(&self) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.sent_t, r.distance)).collect()
    }

    pub fn csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["src", "dst", "seq", "sent_t", "recv_t", "delay", "distance", "pr_dbm", "outcome"])?;
        for r in &self.records {
            let outcome = match r.outcome {
                Outcome::Delivered => "delivered",
                Outcome::ChannelLost => "channel_lost",
                Outcome::RangeLost => "range_lost",
                Outcome::LateLost => "late_lost",
            };
            w.write_record([
                r.src.clone(),
                r.dst.clone(),
                r.seq.to_string(),
                r.sent_t.to_string(),
                r.recv_t.map_or_else(|| "LOST".to_string(), |t| t.to_string()),
                r.recv_t.map(|t| (t - r.sent_t).to_string()).unwrap_or_default(),
                r.distance.to_string(),
                r.pr_dbm.map(|p| p.to_string()).unwrap_or_default(),
                outcome.to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSwitch {
    pub threshold: f64,
    pub loss_ratio: f64,
    pub exceeded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub observer: String,
    pub observed: String,
    pub steps: usize,
    pub measured: usize,
    pub mean_theta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub packet_bytes: usize,
    pub ticks: usize,
    pub links: Vec<LinkStats>,
    pub total: LinkStats,
    pub pairs: Vec<PairSummary>,
    pub mode_switch: Option<ModeSwitch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSummary>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    pub timestamps: Vec<f64>,
    /// Traces keyed by `(observer, observed)`.
    pub traces: BTreeMap<(String, String), Vec<StepOutput>>,
    pub log: CommLog,
    pub summary: SimSummary,
}

/// Packet in flight, ordered by arrival time then by send order.
struct InFlight {
    arrival: f64,
    order: usize,
    link: usize,
    packet: Packet,
}

impl PartialEq for InFlight {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for InFlight {}

impl PartialOrd for InFlight {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for InFlight {
    // reversed so the max-heap pops the earliest arrival
    fn cmp(&self, other: &Self) -> Ordering {
        other.arrival.total_cmp(&self.arrival).then(other.order.cmp(&self.order))
    }
}

/// Brings all series onto one timeline.
fn align(series: &[RawSeries], dt: Option<f64>) -> Result<(Vec<RawSeries>, f64)> {
    let first = series.first().ok_or(Error::TooFewSamples { need: 1, got: 0 })?;
    let same = series.iter().all(|s| {
        s.len() == first.len() && s.timestamps.iter().zip(&first.timestamps).all(|(a, b)| (a - b).abs() < 1e-9)
    });
    let inferred = first.uniform_dt();
    match (same, dt, inferred) {
        (true, None, Some(d)) => Ok((series.to_vec(), d)),
        (true, Some(d), Some(u)) if (d - u).abs() < 1e-9 * u.max(1.0) => Ok((series.to_vec(), d)),
        (_, Some(d), _) => Ok((statespace::synchronize(series, d)?, d)),
        (_, None, _) => {
            let d = first.timestamps.last().copied().unwrap_or(0.0) - first.timestamps[0];
            let d = d / (first.len().max(2) - 1) as f64;
            Ok((statespace::synchronize(series, d)?, d))
        }
    }
}

fn position(s: &RawSeries, k: usize) -> (f64, f64) {
    (s.columns[0][k], s.columns[1][k])
}

/// Runs the simulation over `series` (one per agent, ids from the series).
/// `models` maps each tracked agent to the model every observer uses for it.
pub fn run_simulation(cfg: &SimConfig, series: &[RawSeries], models: &BTreeMap<String, AgentModel>) -> Result<SimOutput> {
    cfg.validate()?;
    let (series, dt) = align(series, cfg.dt)?;
    let ids: Vec<String> = series.iter().map(|s| s.agent_id.clone()).collect();
    let n_agents = ids.len();
    let index_of = |id: &str| {
        ids.iter()
            .position(|a| a == id)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown agent `{id}`")))
    };

    let mut n_ticks = series[0].len();
    if let Some(d) = cfg.duration {
        let t0 = series[0].timestamps[0];
        n_ticks = series[0].timestamps.iter().take_while(|&&t| t - t0 <= d + 1e-9).count();
    }
    let timestamps: Vec<f64> = series[0].timestamps[..n_ticks].to_vec();
    let period = match cfg.tx_period {
        Some(p) if p < dt * (1.0 - 1e-9) => return Err(Error::InvalidParameter("tx_period must be at least dt".into())),
        Some(p) => ((p / dt).round() as usize).max(1),
        None => 1,
    };
    let playout = cfg.playout_delay.unwrap_or(dt);

    let pairs: Vec<(usize, usize)> = match &cfg.pairs {
        Some(list) => list
            .iter()
            .map(|(o, d)| Ok((index_of(o)?, index_of(d)?)))
            .collect::<Result<_>>()?,
        None => (0..n_agents).flat_map(|o| (0..n_agents).map(move |d| (o, d))).collect(),
    };
    let model_for = |i: usize| models.get(&ids[i]).ok_or_else(|| Error::MissingModel(ids[i].clone()));
    let engine_for = |i: usize| -> Result<Mjpf> { Mjpf::new(model_for(i)?, cfg.mjpf.clone()) };

    // local filters: one per agent that is tracked by itself or whose
    // abnormality is broadcast
    let mut local: Vec<Option<Tracker>> = (0..n_agents).map(|_| None).collect();
    for i in 0..n_agents {
        if cfg.payload == PayloadMode::Abnormality || pairs.contains(&(i, i)) {
            local[i] = Some(Tracker::new(engine_for(i)?, filter_seed(cfg.seed, i)));
        }
    }
    let mut remote: BTreeMap<(usize, usize), Option<Tracker>> = BTreeMap::new();
    for &(o, d) in &pairs {
        if o != d {
            let t = match cfg.payload {
                PayloadMode::Observations => Some(Tracker::new(engine_for(d)?, filter_seed(cfg.seed, d))),
                PayloadMode::Abnormality => None,
            };
            remote.insert((o, d), t);
        }
    }
    let mut traces: BTreeMap<(usize, usize), Vec<StepOutput>> = pairs.iter().map(|&p| (p, Vec::with_capacity(n_ticks))).collect();

    // link index = src * n + dst
    let mut link_rngs: Vec<ChaCha8Rng> = (0..n_agents * n_agents)
        .map(|l| ChaCha8Rng::seed_from_u64(link_seed(cfg.seed, cfg.channel.as_ref().map_or(0, |c| c.seed), l)))
        .collect();
    let mut buffers: Vec<DispatchBuffer> = (0..n_agents * n_agents).map(|_| DispatchBuffer::new()).collect();
    let mut in_flight: BinaryHeap<InFlight> = BinaryHeap::new();
    let mut records: Vec<PacketRecord> = Vec::new();
    // record index per (link, seq) still awaiting an outcome
    let mut awaiting: BTreeMap<(usize, u64), usize> = BTreeMap::new();
    let tx_time = cfg.channel.as_ref().map(|c| c.transmission_time(PACKET_BYTES));

    for k in 0..n_ticks {
        let t = timestamps[k];
        let mut local_out: Vec<Option<StepOutput>> = vec![None; n_agents];
        for (i, tr) in local.iter_mut().enumerate() {
            if let Some(tr) = tr {
                let model = model_for(i)?;
                let obs = model.observation(&series[i].row(k));
                local_out[i] = Some(tr.step(Some(&obs), t)?);
            }
        }

        if k % period == 0 {
            for s in 0..n_agents {
                let payload = match cfg.payload {
                    PayloadMode::Observations => Payload::Observation { values: series[s].row(k) },
                    PayloadMode::Abnormality => {
                        let o = local_out[s].as_ref().expect("local filter exists in abnormality mode");
                        Payload::Abnormality {
                            theta: o.theta,
                            map_word: o.map_word,
                        }
                    }
                };
                for r in (0..n_agents).filter(|&r| r != s) {
                    let link = s * n_agents + r;
                    let (ps, pr) = (position(&series[s], k), position(&series[r], k));
                    let distance = (ps.0 - pr.0).hypot(ps.1 - pr.1);
                    let packet = Packet {
                        src: ids[s].clone(),
                        seq: k as u64,
                        timestamp: t,
                        payload: payload.clone(),
                    };
                    let (outcome, arrival, pr_dbm) = match (&cfg.channel, tx_time) {
                        (Some(c), Some(tx)) => {
                            let ls = channel::link_sample(distance.max(MIN_LINK_DISTANCE), c, &mut link_rngs[link])?;
                            let outcome = if distance > c.max_range {
                                Some(Outcome::RangeLost)
                            } else if !ls.delivered {
                                Some(Outcome::ChannelLost)
                            } else {
                                None
                            };
                            let delay = distance / channel::SPEED_OF_LIGHT + tx + cfg.processing_delay;
                            (outcome, t + delay, Some(ls.pr_dbm))
                        }
                        _ => (None, t, None),
                    };
                    let idx = records.len();
                    records.push(PacketRecord {
                        src: ids[s].clone(),
                        dst: ids[r].clone(),
                        seq: k as u64,
                        sent_t: t,
                        recv_t: outcome.is_none().then_some(arrival),
                        distance,
                        pr_dbm,
                        outcome: outcome.unwrap_or(Outcome::Delivered),
                    });
                    if outcome.is_none() {
                        awaiting.insert((link, k as u64), idx);
                        in_flight.push(InFlight {
                            arrival,
                            order: idx,
                            link,
                            packet,
                        });
                    }
                }
            }
        }

        // hand over everything that arrived before this step's deadline
        let deadline = t + playout;
        while in_flight.peek().is_some_and(|p| p.arrival <= deadline) {
            let p = in_flight.pop().expect("peeked");
            let key = (p.link, p.packet.seq);
            if !buffers[p.link].push(p.packet) {
                if let Some(idx) = awaiting.remove(&key) {
                    records[idx].outcome = Outcome::LateLost;
                }
            }
        }

        for (&(o, d), trace) in traces.iter_mut() {
            if o == d {
                trace.push(local_out[o].clone().expect("self filter exists"));
            }
        }
        for link in 0..n_agents * n_agents {
            let released = buffers[link].release_through(k as u64);
            let (s, r) = (link / n_agents, link % n_agents);
            let mut current = None;
            for p in released {
                awaiting.remove(&(link, p.seq));
                if p.seq == k as u64 {
                    current = Some(p);
                }
            }
            let Some(slot) = remote.get_mut(&(r, s)) else {
                continue;
            };
            let out = match (slot, current) {
                (Some(tr), Some(Packet { payload: Payload::Observation { values }, .. })) => {
                    let obs = model_for(s)?.observation(&values);
                    tr.step(Some(&obs), t)?
                }
                (Some(tr), _) => tr.step(None, t)?,
                (None, Some(Packet { payload: Payload::Abnormality { theta, map_word }, .. })) => StepOutput {
                    t,
                    state_estimate: Vec::new(),
                    map_word,
                    theta,
                    measured: true,
                    collapsed: false,
                },
                (None, _) => StepOutput {
                    t,
                    state_estimate: Vec::new(),
                    map_word: None,
                    theta: None,
                    measured: false,
                    collapsed: false,
                },
            };
            traces.get_mut(&(r, s)).expect("pair trace").push(out);
        }
    }
    // whatever is still in flight missed its deadline
    while let Some(p) = in_flight.pop() {
        let key = (p.link, p.packet.seq);
        if !buffers[p.link].push(p.packet) {
            if let Some(idx) = awaiting.remove(&key) {
                records[idx].outcome = Outcome::LateLost;
            }
        }
    }

    let log = CommLog { records };
    let total = log.totals();
    let named: BTreeMap<(String, String), Vec<StepOutput>> = traces
        .into_iter()
        .map(|((o, d), v)| ((ids[o].clone(), ids[d].clone()), v))
        .collect();
    let pair_summaries = named
        .iter()
        .map(|((o, d), v)| {
            let thetas: Vec<f64> = v.iter().filter_map(|s| s.theta).collect();
            PairSummary {
                observer: o.clone(),
                observed: d.clone(),
                steps: v.len(),
                measured: v.iter().filter(|s| s.measured).count(),
                mean_theta: (!thetas.is_empty()).then(|| thetas.iter().sum::<f64>() / thetas.len() as f64),
            }
        })
        .collect();
    let summary = SimSummary {
        packet_bytes: PACKET_BYTES,
        ticks: n_ticks,
        links: log.link_stats(),
        mode_switch: cfg.mode_switch_loss_threshold.map(|threshold| ModeSwitch {
            threshold,
            loss_ratio: total.loss_ratio,
            exceeded: total.loss_ratio > threshold,
        }),
        total,
        pairs: pair_summaries,
        sweep: None,
    };
    Ok(SimOutput {
        timestamps,
        traces: named,
        log,
        summary,
    })
}

/// Writes `comm_log.csv`, one `abnormality_<observer>_<observed>.csv` per
/// pair and `summary.json` into `dir`.
pub fn write_outputs(dir: &Path, out: &SimOutput, models: &BTreeMap<String, AgentModel>) -> Result<()> {
    write_atomic(&dir.join("comm_log.csv"), &out.log.csv_bytes()?)?;
    for ((o, d), trace) in &out.traces {
        let dim = models.get(d).map_or(0, |m| 2 * m.base_dim());
        mjpf::write_trace(&dir.join(format!("abnormality_{o}_{d}.csv")), o, d, trace, dim)?;
    }
    write_atomic(&dir.join("summary.json"), &serde_json::to_vec_pretty(&out.summary)?)
}

/// One sweep row: a channel condition pooled over all replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub condition: String,
    /// `None` for the lossless baseline.
    pub data_rate: Option<f64>,
    pub k_factor: Option<f64>,
    pub sent: u64,
    pub lost: u64,
    pub loss_ratio: f64,
    pub mean_delay: f64,
    pub auc: f64,
    pub acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepChecks {
    /// Per rate, loss strictly increases as K decreases.
    pub loss_increases_as_k_decreases: bool,
    /// Per K, loss strictly increases with the data rate.
    pub loss_increases_with_rate: bool,
    /// Per rate, AUC never increases as K decreases.
    pub auc_non_increasing_as_k_decreases: bool,
    pub baseline_maximal: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub observer: String,
    pub observed: String,
    pub replicates: usize,
    pub threshold: f64,
    pub unmeasured: UnmeasuredPolicy,
    pub rows: Vec<SweepRow>,
    pub checks: SweepChecks,
}

fn condition_name(rate: f64, k: f64) -> String {
    format!("{rate}Mbps_K{k}")
}

fn run_condition(
    cfg: &SimConfig,
    spec: &SweepConfig,
    channel: Option<ChannelConfig>,
    series: &[RawSeries],
    models: &BTreeMap<String, AgentModel>,
    labels: &[bool],
) -> Result<SweepRow> {
    let mut scores = Vec::new();
    let mut all_labels = Vec::new();
    let mut stats = LinkStats::new("*", "*");
    let (rate, k) = channel.as_ref().map_or((None, None), |c| (Some(c.data_rate), Some(c.k_factor)));
    for r in 0..spec.replicates {
        let run_cfg = SimConfig {
            channel: channel.clone(),
            pairs: Some(vec![(spec.observer.clone(), spec.observed.clone())]),
            sweep: None,
            // common random numbers: replicate r uses the same streams in
            // every condition
            seed: derive_seed(cfg.seed, r as u64),
            ..cfg.clone()
        };
        let out = run_simulation(&run_cfg, series, models)?;
        let trace = &out.traces[&(spec.observer.clone(), spec.observed.clone())];
        if trace.len() > labels.len() {
            return Err(Error::LengthMismatch {
                left: trace.len(),
                right: labels.len(),
            });
        }
        scores.extend(trace.iter().map(|s| match spec.unmeasured {
            UnmeasuredPolicy::NoAlarm => Some(s.theta.unwrap_or(0.0)),
            UnmeasuredPolicy::Exclude => s.theta,
        }));
        all_labels.extend_from_slice(&labels[..trace.len()]);
        out.log.records.iter().for_each(|rec| stats.add(rec));
    }
    stats.finish();
    let (report, _) = eval::evaluate(&scores, &all_labels, spec.threshold)?;
    Ok(SweepRow {
        condition: match (rate, k) {
            (Some(r), Some(k)) => condition_name(r, k),
            _ => "no_loss".into(),
        },
        data_rate: rate,
        k_factor: k,
        sent: stats.sent,
        lost: stats.lost(),
        loss_ratio: stats.loss_ratio,
        mean_delay: stats.mean_delay,
        auc: report.auc,
        acc: report.acc,
    })
}

fn sweep_checks(rows: &[SweepRow], spec: &SweepConfig) -> SweepChecks {
    let find = |rate: f64, k: f64| {
        rows.iter()
            .find(|r| r.data_rate == Some(rate) && r.k_factor == Some(k))
            .expect("every condition has a row")
    };
    let mut ks = spec.k_list.clone();
    ks.sort_by(|a, b| b.total_cmp(a));
    ks.dedup();
    let mut rates = spec.rates.clone();
    rates.sort_by(f64::total_cmp);
    rates.dedup();
    let loss_k = rates
        .iter()
        .all(|&rate| ks.windows(2).all(|w| find(rate, w[1]).loss_ratio > find(rate, w[0]).loss_ratio));
    let loss_rate = ks
        .iter()
        .all(|&k| rates.windows(2).all(|w| find(w[1], k).loss_ratio > find(w[0], k).loss_ratio));
    let auc_k = rates
        .iter()
        .all(|&rate| ks.windows(2).all(|w| find(rate, w[1]).auc <= find(rate, w[0]).auc));
    let reports: Vec<(String, eval::EvalReport)> = rows
        .iter()
        .map(|r| {
            (
                r.condition.clone(),
                eval::EvalReport {
                    auc: r.auc,
                    acc: r.acc,
                    threshold: spec.threshold,
                    confusion: eval::Confusion::default(),
                    positives: 0,
                    negatives: 0,
                    unmeasured: 0,
                },
            )
        })
        .collect();
    let table = eval::compare_conditions(&reports, Some("no_loss"));
    SweepChecks {
        loss_increases_as_k_decreases: loss_k,
        loss_increases_with_rate: loss_rate,
        auc_non_increasing_as_k_decreases: auc_k,
        baseline_maximal: table.baseline_maximal.unwrap_or(false),
    }
}

/// Runs the lossless baseline and every `(rate, K)` condition over
/// `spec.replicates` replicates and pools the observer's scores of the
/// observed agent against `labels` (one per tick).
pub fn sweep(
    cfg: &SimConfig,
    spec: &SweepConfig,
    series: &[RawSeries],
    models: &BTreeMap<String, AgentModel>,
    labels: &[bool],
) -> Result<SweepSummary> {
    let check = SimConfig {
        sweep: Some(spec.clone()),
        ..cfg.clone()
    };
    check.validate()?;
    if spec.observer == spec.observed {
        return Err(Error::InvalidParameter("sweep observer and observed agent must differ".into()));
    }
    let base = cfg.channel.clone().unwrap_or_default();
    let mut conditions: Vec<Option<ChannelConfig>> = vec![None];
    for &rate in &spec.rates {
        let entry = channel::modulation_for_rate(rate)?;
        for &k in &spec.k_list {
            conditions.push(Some(ChannelConfig {
                data_rate: rate,
                sensitivity: entry.sensitivity,
                k_factor: k,
                inverse_cdf: base.inverse_cdf || spec.coupled_fading,
                ..base.clone()
            }));
        }
    }
    let run = |c: &Option<ChannelConfig>| run_condition(cfg, spec, c.clone(), series, models, labels);
    #[cfg(feature = "parallel")]
    let rows: Vec<SweepRow> = {
        use rayon::prelude::*;
        conditions.par_iter().map(run).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<SweepRow> = conditions.iter().map(run).collect::<Result<_>>()?;
    for r in &rows {
        log::info!("{}: loss {:.4}, AUC {:.4}, ACC {:.4}", r.condition, r.loss_ratio, r.auc, r.acc);
    }
    let checks = sweep_checks(&rows, spec);
    Ok(SweepSummary {
        observer: spec.observer.clone(),
        observed: spec.observed.clone(),
        replicates: spec.replicates,
        threshold: spec.threshold,
        unmeasured: spec.unmeasured,
        rows,
        checks,
    })
}
