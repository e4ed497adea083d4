//! Discrete-event simulator of an MWMR crossbar under a laser power policy.
//!
//! Cores map to GIs by cluster. A packet to GI `d` travels on waveguide
//! `d mod n_waveguides`. Each GI sends from a FIFO. Its head packet first
//! applies its rule (Proteus only), then requests the waveguide token. After
//! the fixed arbitration delay it holds the waveguide for the frame plus
//! propagation time. The GI's modulators are free again once the frame has
//! been serialized.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::design::{self, SearchSpace, StaticDesign};
use crate::link::{self, LinkConfig, LinkError, LinkModels};
use crate::lossmap::{self, ChipLayout, Composition, IlMatrix, LossParams};
use crate::rules::{AdaptationLatency, PairIdMap, RuleError, RuleTable};
use crate::traffic::{FlitRequest, SystemDims};

/// Light travel in vacuum, cm per ns.
const C_CM_PER_NS: f64 = 29.979_245_8;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid system configuration: {0}")]
    Config(String),
    #[error("rule lookup failed for GI {src} -> GI {dst}")]
    Rule { src: usize, dst: usize, source: RuleError },
    #[error("no rule table for GI {0}")]
    MissingTable(usize),
    #[error("link model error: {0}")]
    Link(#[from] LinkError),
    #[error("request out of range: {0}")]
    Request(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Proteus,
    Opa,
    Abm,
    StaticBaseline,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [PolicyKind::Proteus, PolicyKind::Opa, PolicyKind::Abm, PolicyKind::StaticBaseline];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Proteus => "proteus",
            PolicyKind::Opa => "opa",
            PolicyKind::Abm => "abm",
            PolicyKind::StaticBaseline => "static_baseline",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown policy `{s}` (expected proteus, opa, abm or static_baseline)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub n_cores: u32,
    pub n_clusters: u32,
    pub cores_per_cluster: u32,
    pub n_gis: u32,
    pub n_waveguides: u32,
    pub n_lambda: u32,
    pub packet_size_bits: u32,
    pub network_clock_ghz: f64,
    pub group_index: f64,
    pub arbitration_cycles: u32,
    pub abm_laser_switch_latency_ns: f64,
    pub abm_epoch_cycles: u32,
    pub opa_overhead_w: f64,
    /// Q and bitrate of the OPA, ABM and static baselines.
    pub baseline_q: f64,
    pub baseline_br_gbps: f64,
    #[serde(default)]
    pub adaptation: AdaptationLatency,
    /// Loss composition used when checking the budget of each packet.
    #[serde(default = "default_composition")]
    pub budget_composition: Composition,
    /// Stop at this time instead of draining every packet.
    #[serde(default)]
    pub cutoff_ns: Option<f64>,
    #[serde(default = "default_sample_period")]
    pub power_sample_period_ns: f64,
    #[serde(default = "default_true")]
    pub keep_records: bool,
}

fn default_composition() -> Composition {
    Composition::PropagationOnly
}

fn default_sample_period() -> f64 {
    1000.0
}

fn default_true() -> bool {
    true
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            n_cores: 256,
            n_clusters: 32,
            cores_per_cluster: 8,
            n_gis: 32,
            n_waveguides: 32,
            n_lambda: 55,
            packet_size_bits: 512,
            network_clock_ghz: 5.0,
            group_index: 4.2,
            arbitration_cycles: 2,
            abm_laser_switch_latency_ns: 100.0,
            abm_epoch_cycles: 1000,
            opa_overhead_w: 0.5,
            baseline_q: 7000.0,
            baseline_br_gbps: 10.0,
            adaptation: AdaptationLatency::default(),
            budget_composition: default_composition(),
            cutoff_ns: None,
            power_sample_period_ns: default_sample_period(),
            keep_records: true,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.n_cores != self.n_clusters * self.cores_per_cluster {
            return bad(format!(
                "n_cores {} != n_clusters {} x cores_per_cluster {}",
                self.n_cores, self.n_clusters, self.cores_per_cluster
            ));
        }
        if self.n_gis == 0 || self.n_gis > self.n_clusters || !self.n_clusters.is_multiple_of(self.n_gis) {
            return bad("n_gis must divide n_clusters".into());
        }
        if self.n_waveguides == 0 || self.n_lambda == 0 || self.packet_size_bits == 0 {
            return bad("n_waveguides, n_lambda and packet_size_bits must be positive".into());
        }
        if !(self.network_clock_ghz > 0.0 && self.group_index > 0.0) {
            return bad("network_clock_ghz and group_index must be positive".into());
        }
        if !(self.abm_laser_switch_latency_ns >= 0.0 && self.abm_epoch_cycles > 0) {
            return bad("ABM switch latency must be non-negative and the epoch positive".into());
        }
        if !(self.opa_overhead_w >= 0.0) {
            return bad("opa_overhead_w must be non-negative".into());
        }
        if !(self.baseline_q > 0.0 && self.baseline_br_gbps > 0.0) {
            return bad("baseline Q and bitrate must be positive".into());
        }
        if !(self.power_sample_period_ns > 0.0) {
            return bad("power_sample_period_ns must be positive".into());
        }
        Ok(())
    }

    pub fn dims(&self) -> SystemDims {
        SystemDims { n_cores: self.n_cores, cores_per_cluster: self.cores_per_cluster, clock_ghz: self.network_clock_ghz }
    }

    pub fn gi_of_core(&self, core: u32) -> usize {
        ((core / self.cores_per_cluster) % self.n_gis) as usize
    }

    pub fn waveguide_of(&self, dst_gi: usize) -> usize {
        dst_gi % self.n_waveguides as usize
    }

    pub fn cycle_ns(&self) -> f64 {
        1.0 / self.network_clock_ghz
    }

    pub fn arbitration_ns(&self) -> f64 {
        f64::from(self.arbitration_cycles) * self.cycle_ns()
    }

    pub fn epoch_ns(&self) -> f64 {
        f64::from(self.abm_epoch_cycles) * self.cycle_ns()
    }

    pub fn propagation_ns(&self, length_cm: f64) -> f64 {
        length_cm * self.group_index / C_CM_PER_NS
    }
}

/// Physical view of the network: budget losses and path lengths per GI pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub il: IlMatrix,
    pub path_len_cm: Vec<Vec<f64>>,
}

impl Network {
    pub fn from_layout(layout: &ChipLayout, params: &LossParams, composition: Composition) -> Result<Self, SimError> {
        let il = lossmap::build_il_matrix(layout, params, composition).map_err(|e| SimError::Config(e.to_string()))?;
        let n = layout.n_gis;
        let mut path_len_cm = vec![vec![0.0; n]; n];
        for (s, row) in path_len_cm.iter_mut().enumerate() {
            for (d, cell) in row.iter_mut().enumerate() {
                if s != d {
                    *cell = lossmap::path_profile(layout, s, d).map_err(|e| SimError::Config(e.to_string()))?.length_cm;
                }
            }
        }
        Ok(Network { il, path_len_cm })
    }

    /// Without geometry, lengths are inferred from propagation loss.
    pub fn from_matrix(il: IlMatrix, params: &LossParams) -> Self {
        let path_len_cm = il
            .losses_db
            .iter()
            .map(|row| row.iter().map(|v| v / params.waveguide_db_per_cm).collect())
            .collect();
        Network { il, path_len_cm }
    }
}

/// Everything the Proteus policy consults at run time.
#[derive(Debug, Clone)]
pub struct ProteusRules {
    pub design: StaticDesign,
    pub tables: Vec<RuleTable>,
    pub pair_map: PairIdMap,
    pub space: SearchSpace,
}

impl ProteusRules {
    /// (Q, BR) for a pair, read from the sender's table.
    pub fn lookup(&self, src: usize, dst: usize) -> Result<(f64, f64), SimError> {
        let table = self.tables.get(src).ok_or(SimError::MissingTable(src))?;
        let pair_id = self.pair_map.pair_id(src, dst).ok_or(SimError::Rule {
            src,
            dst,
            source: RuleError::Miss(u8::MAX),
        })?;
        let entry = table.lookup(pair_id).map_err(|source| SimError::Rule { src, dst, source })?;
        let q = self.space.q_grid[usize::from(entry.q_code)];
        let br = self.space.br_set_gbps[entry.switch_vector.index().expect("decoded entries are one-hot")];
        Ok((q, br))
    }
}

pub enum Policy<'a> {
    Proteus(&'a ProteusRules),
    Opa,
    Abm,
    StaticBaseline,
}

impl Policy<'_> {
    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Proteus(_) => PolicyKind::Proteus,
            Policy::Opa => PolicyKind::Opa,
            Policy::Abm => PolicyKind::Abm,
            Policy::StaticBaseline => PolicyKind::StaticBaseline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub id: u64,
    pub src_core: u32,
    pub dst_core: u32,
    pub src_gi: u32,
    pub dst_gi: u32,
    pub inject_time_ns: f64,
    pub queue_delay_ns: f64,
    pub arbitration_delay_ns: f64,
    pub adaptation_delay_ns: f64,
    pub frame_delay_ns: f64,
    pub propagation_delay_ns: f64,
    pub eject_time_ns: f64,
    pub il_db: f64,
    pub p_laser_sample_dbm: f64,
    pub br_used: f64,
    pub q_used: f64,
}

impl PacketRecord {
    pub fn latency_ns(&self) -> f64 {
        self.eject_time_ns - self.inject_time_ns
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTotals {
    pub injected: u64,
    pub intra_cluster: u64,
    pub delivered: u64,
    pub in_flight: u64,
    pub delivered_bits: u64,
    pub duration_ns: f64,
    pub avg_latency_ns: Option<f64>,
    pub throughput_bits_per_ns: f64,
}

/// Time-integrated quantities the power models need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityTotals {
    /// Sum over waveguides of optical power times time, mW·ns.
    pub optical_energy_mw_ns: f64,
    /// Frame time spent at each bitrate, summed over packets (ns), keyed by
    /// the bitrate in Gb/s.
    pub serialization_ns_by_br: Vec<(f64, f64)>,
    /// Microring-nanoseconds spent holding a non-default Q.
    pub q_tuned_mr_ns: f64,
    pub n_waveguides: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: PolicyKind,
    pub traffic_fingerprint: String,
    pub totals: SimTotals,
    pub activity: ActivityTotals,
    pub opa_overhead_w: f64,
    /// Total optical power over all waveguides per sample period, mW.
    pub power_series_mw: Vec<f64>,
    pub power_sample_period_ns: f64,
    #[serde(skip)]
    pub records: Vec<PacketRecord>,
}

impl SimReport {
    pub fn records_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("id,src,dst,inject_ns,eject_ns,il_db,br,q,p_laser_dbm\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.id, r.src_core, r.dst_core, r.inject_time_ns, r.eject_time_ns, r.il_db, r.br_used, r.q_used, r.p_laser_sample_dbm
            );
        }
        out
    }

    pub fn power_series_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("t_start_ns,optical_mw\n");
        for (i, p) in self.power_series_mw.iter().enumerate() {
            let _ = writeln!(out, "{},{}", i as f64 * self.power_sample_period_ns, p);
        }
        out
    }

    /// Time-averaged total optical power, mW.
    pub fn avg_optical_mw(&self) -> f64 {
        if self.totals.duration_ns > 0.0 {
            self.activity.optical_energy_mw_ns / self.totals.duration_ns
        } else {
            0.0
        }
    }
}

/// Fingerprint of a request stream, used to refuse comparisons across
/// different workloads.
#[derive(Debug, Clone)]
pub struct StreamHasher(Sha256);

impl Default for StreamHasher {
    fn default() -> Self {
        StreamHasher(Sha256::new())
    }
}

impl StreamHasher {
    pub fn push(&mut self, r: &FlitRequest) {
        self.0.update(r.inject_time_ns.to_bits().to_le_bytes());
        self.0.update(r.src_core.to_le_bytes());
        self.0.update(r.dst_core.to_le_bytes());
        self.0.update(r.size_bits.to_le_bytes());
    }

    pub fn finish(self) -> String {
        self.0.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn fingerprint(requests: &[FlitRequest]) -> String {
    let mut h = StreamHasher::default();
    requests.iter().for_each(|r| h.push(r));
    h.finish()
}

/// Memoised worst-channel penalties keyed by (Q, BR).
pub struct PenaltyCache<'a> {
    template: LinkConfig,
    models: &'a LinkModels,
    cache: HashMap<(u64, u64), Result<f64, LinkError>>,
}

impl<'a> PenaltyCache<'a> {
    pub fn new(template: LinkConfig, models: &'a LinkModels) -> Self {
        PenaltyCache { template, models, cache: HashMap::new() }
    }

    pub fn penalty_db(&mut self, q: f64, br: f64) -> Result<f64, LinkError> {
        let (template, models) = (self.template, self.models);
        self.cache
            .entry((q.to_bits(), br.to_bits()))
            .or_insert_with(|| link::worst_channel_penalty(&template.with_q_br(q, br), models).map(|p| p.total_db))
            .clone()
    }

    /// Power that closes the budget exactly for this loss and configuration.
    pub fn required_dbm(&mut self, il_db: f64, q: f64, br: f64) -> Result<f64, LinkError> {
        let pp = self.penalty_db(q, br)?;
        Ok(il_db
            + pp
            + 10.0 * f64::from(self.template.n_lambda).log10()
            + link::sensitivity(br, &self.models.sensitivity))
    }

    pub fn margin_db(&mut self, p_laser_dbm: f64, il_db: f64, q: f64, br: f64) -> Result<f64, LinkError> {
        Ok(p_laser_dbm - self.required_dbm(il_db, q, br)?)
    }
}

/// Per-pair latency terms (adaptation, frame, propagation) in ns.
pub fn packet_latency_components(
    cfg: &SystemConfig,
    policy: &Policy<'_>,
    network: &Network,
    src_gi: usize,
    dst_gi: usize,
) -> Result<(f64, f64, f64), SimError> {
    let (adaptation, br) = match policy {
        Policy::Proteus(rules) => (cfg.adaptation.total_ns(), rules.lookup(src_gi, dst_gi)?.1),
        _ => (0.0, cfg.baseline_br_gbps),
    };
    let frame = design::frame_delay_ns(cfg.packet_size_bits, cfg.n_lambda, br);
    let propagation = cfg.propagation_ns(network.path_len_cm[src_gi][dst_gi]);
    Ok((adaptation, frame, propagation))
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Optical power per waveguide (dBm) a policy provisions while carrying a
/// packet with the given loss. For ABM this is the full-bandwidth level,
/// which the epoch model then scales.
pub fn laser_power_sample(
    policy: &Policy<'_>,
    cfg: &SystemConfig,
    il_db: f64,
    worst_il_db: f64,
    cache: &mut PenaltyCache<'_>,
) -> Result<f64, LinkError> {
    match policy {
        Policy::Proteus(rules) => Ok(rules.design.p_laser_dbm),
        Policy::Opa => cache.required_dbm(il_db, cfg.baseline_q, cfg.baseline_br_gbps),
        Policy::Abm => cache.required_dbm(worst_il_db, cfg.baseline_q, cfg.baseline_br_gbps),
        Policy::StaticBaseline => Ok(cache.models.p_max_dbm),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    /// GI finished serializing and may start its next packet.
    GiFree(usize),
    /// Token request reaches the arbiter after the fixed arbitration delay.
    Request { packet: usize },
    /// Waveguide channel released.
    Release(usize),
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on (time, seq).
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy)]
struct Packet {
    req: FlitRequest,
    src_gi: usize,
    dst_gi: usize,
    head_time: f64,
    request_time: f64,
    adaptation: f64,
    frame: f64,
    propagation: f64,
    il_db: f64,
    q: f64,
    br: f64,
    p_dbm: f64,
}

#[derive(Debug, Default, Clone)]
struct Waveguide {
    busy: bool,
    waiting: VecDeque<usize>,
    last_busy_end: Option<f64>,
    /// Epoch in which the ABM laser was last switched on.
    lit_epoch: Option<u64>,
    /// Bits waiting for or arriving on this waveguide during each ABM epoch.
    epoch_demand_bits: Vec<f64>,
}

/// Optical energy accumulated into fixed-width time bins.
struct PowerBins {
    period: f64,
    energy: Vec<f64>,
}

impl PowerBins {
    fn add(&mut self, t0: f64, t1: f64, mw: f64) {
        if !(t1 > t0) || mw == 0.0 {
            return;
        }
        spread(&mut self.energy, self.period, t0, t1, mw);
    }

    fn series(mut self, duration_ns: f64) -> Vec<f64> {
        let n = (duration_ns / self.period).ceil() as usize;
        self.energy.resize(n, 0.0);
        self.energy
            .iter()
            .enumerate()
            .map(|(b, e)| {
                let width = (duration_ns - b as f64 * self.period).min(self.period);
                if width > 0.0 {
                    e / width
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Adds `rate · overlap` of `[t0, t1)` to each bin of width `period`.
fn spread(bins: &mut Vec<f64>, period: f64, t0: f64, t1: f64, rate: f64) {
    let first = (t0 / period).floor() as usize;
    let last = ((t1 / period).ceil() as usize).max(first + 1);
    if bins.len() < last {
        bins.resize(last, 0.0);
    }
    for (b, slot) in bins.iter_mut().enumerate().take(last).skip(first) {
        let lo = t0.max(b as f64 * period);
        let hi = t1.min((b + 1) as f64 * period);
        if hi > lo {
            *slot += rate * (hi - lo);
        }
    }
}

struct Engine<'a> {
    cfg: &'a SystemConfig,
    kind: PolicyKind,
    arb_ns: f64,
    epoch_ns: f64,
    abm_full_mw: f64,
    packets: Vec<Packet>,
    events: BinaryHeap<Event>,
    seq: u64,
    gi_queue: Vec<VecDeque<usize>>,
    gi_busy: Vec<bool>,
    wgs: Vec<Waveguide>,
    bins: PowerBins,
    records: Vec<PacketRecord>,
    delivered: u64,
    delivered_bits: u64,
    latency_sum: f64,
    last_eject: f64,
    opa_energy: f64,
    abm_switch_energy: f64,
    ser_by_br: Vec<(f64, f64)>,
    q_tuned_mr_ns: f64,
}

impl Engine<'_> {
    fn push(&mut self, time: f64, kind: EventKind) {
        self.events.push(Event { time, seq: self.seq, kind });
        self.seq += 1;
    }

    /// The free GI takes its next packet: adaptation, then the token request.
    fn start_head(&mut self, gi: usize, now: f64) {
        if self.gi_busy[gi] {
            return;
        }
        let Some(&idx) = self.gi_queue[gi].front() else { return };
        self.gi_busy[gi] = true;
        let p = &mut self.packets[idx];
        p.head_time = now;
        p.request_time = now + p.adaptation;
        let at = p.request_time + self.arb_ns;
        self.push(at, EventKind::Request { packet: idx });
    }

    fn request(&mut self, idx: usize, now: f64) {
        let w = self.cfg.waveguide_of(self.packets[idx].dst_gi);
        if self.wgs[w].busy {
            self.wgs[w].waiting.push_back(idx);
        } else {
            self.grant(w, idx, now);
        }
    }

    fn release(&mut self, w: usize, now: f64) {
        let wg = &mut self.wgs[w];
        wg.busy = false;
        wg.last_busy_end = Some(now);
        if let Some(idx) = wg.waiting.pop_front() {
            self.grant(w, idx, now);
        }
    }

    fn grant(&mut self, w: usize, idx: usize, now: f64) {
        let p = self.packets[idx];
        let mut start = now;
        let wg = &mut self.wgs[w];
        wg.busy = true;
        if self.kind == PolicyKind::Abm {
            let epoch = (now / self.epoch_ns).floor() as u64;
            let epoch_start = epoch as f64 * self.epoch_ns;
            let recently_busy = wg.last_busy_end.is_some_and(|end| end > epoch_start - self.epoch_ns);
            if !recently_busy && wg.lit_epoch != Some(epoch) {
                let on = self.cfg.abm_laser_switch_latency_ns;
                self.bins.add(now, now + on, self.abm_full_mw);
                self.abm_switch_energy += self.abm_full_mw * on;
                start += on;
                wg.lit_epoch = Some((start / self.epoch_ns).floor() as u64);
            }
        }
        let end = start + p.frame + p.propagation;
        match self.kind {
            PolicyKind::Opa => {
                let mw = dbm_to_mw(p.p_dbm);
                self.bins.add(start, end, mw);
                self.opa_energy += mw * (end - start);
            }
            PolicyKind::Abm => {
                // The packet is demand in every epoch from its arrival until
                // it gets the channel.
                let first = (p.req.inject_time_ns / self.epoch_ns).floor() as usize;
                let last = (start / self.epoch_ns).floor() as usize;
                if wg.epoch_demand_bits.len() <= last {
                    wg.epoch_demand_bits.resize(last + 1, 0.0);
                }
                for d in &mut wg.epoch_demand_bits[first..=last] {
                    *d += f64::from(p.req.size_bits);
                }
            }
            _ => {}
        }
        self.push(end, EventKind::Release(w));
        let popped = self.gi_queue[p.src_gi].pop_front();
        debug_assert_eq!(popped, Some(idx));
        self.push(start + p.frame, EventKind::GiFree(p.src_gi));

        self.delivered += 1;
        self.delivered_bits += u64::from(p.req.size_bits);
        self.latency_sum += end - p.req.inject_time_ns;
        self.last_eject = self.last_eject.max(end);
        match self.ser_by_br.iter_mut().find(|(br, _)| *br == p.br) {
            Some(slot) => slot.1 += p.frame,
            None => self.ser_by_br.push((p.br, p.frame)),
        }
        if self.kind == PolicyKind::Proteus {
            // Sender modulators and receiver filters hold the rule's Q.
            self.q_tuned_mr_ns += 2.0 * f64::from(self.cfg.n_lambda) * p.frame;
        }
        if self.cfg.keep_records {
            self.records.push(PacketRecord {
                id: idx as u64,
                src_core: p.req.src_core,
                dst_core: p.req.dst_core,
                src_gi: p.src_gi as u32,
                dst_gi: p.dst_gi as u32,
                inject_time_ns: p.req.inject_time_ns,
                queue_delay_ns: p.head_time - p.req.inject_time_ns,
                arbitration_delay_ns: start - p.request_time,
                adaptation_delay_ns: p.adaptation,
                frame_delay_ns: p.frame,
                propagation_delay_ns: p.propagation,
                eject_time_ns: end,
                il_db: p.il_db,
                p_laser_sample_dbm: p.p_dbm,
                br_used: p.br,
                q_used: p.q,
            });
        }
    }
}

pub fn run<I>(
    cfg: &SystemConfig,
    policy: &Policy<'_>,
    network: &Network,
    models: &LinkModels,
    link_template: &LinkConfig,
    traffic: I,
) -> Result<SimReport, SimError>
where
    I: IntoIterator<Item = FlitRequest>,
{
    cfg.validate()?;
    if network.il.n_gis() < cfg.n_gis as usize {
        return Err(SimError::Config(format!("network has {} GIs, system needs {}", network.il.n_gis(), cfg.n_gis)));
    }
    if let Policy::Proteus(rules) = policy {
        if rules.tables.len() < cfg.n_gis as usize {
            return Err(SimError::MissingTable(rules.tables.len()));
        }
    }
    let template = link_template.with_n_lambda(cfg.n_lambda);
    let mut cache = PenaltyCache::new(template, models);
    let worst_il = network.il.max_entry();
    let kind = policy.kind();

    let mut hasher = StreamHasher::default();
    let mut injected = 0u64;
    let mut intra_cluster = 0u64;
    let mut packets: Vec<Packet> = Vec::new();
    let mut last_time = f64::NEG_INFINITY;
    for req in traffic {
        if req.src_core >= cfg.n_cores || req.dst_core >= cfg.n_cores {
            return Err(SimError::Request(format!("core out of range in {req:?}")));
        }
        if !(req.inject_time_ns >= last_time) {
            return Err(SimError::Request(format!("stream not sorted at t={}", req.inject_time_ns)));
        }
        last_time = req.inject_time_ns;
        hasher.push(&req);
        injected += 1;
        if req.src_core / cfg.cores_per_cluster == req.dst_core / cfg.cores_per_cluster {
            intra_cluster += 1;
            continue;
        }
        let src_gi = cfg.gi_of_core(req.src_core);
        let dst_gi = cfg.gi_of_core(req.dst_core);
        let (q, br, adaptation) = match policy {
            Policy::Proteus(rules) => {
                let (q, br) = rules.lookup(src_gi, dst_gi)?;
                (q, br, cfg.adaptation.total_ns())
            }
            _ => (cfg.baseline_q, cfg.baseline_br_gbps, 0.0),
        };
        let il_db = network.il.get(src_gi, dst_gi);
        let p_dbm = laser_power_sample(policy, cfg, il_db, worst_il, &mut cache)?;
        packets.push(Packet {
            req,
            src_gi,
            dst_gi,
            head_time: 0.0,
            request_time: 0.0,
            adaptation,
            frame: design::frame_delay_ns(req.size_bits, cfg.n_lambda, br),
            propagation: cfg.propagation_ns(network.path_len_cm[src_gi][dst_gi]),
            il_db,
            q,
            br,
            p_dbm,
        });
    }

    let abm_full_mw = if kind == PolicyKind::Abm {
        dbm_to_mw(cache.required_dbm(worst_il, cfg.baseline_q, cfg.baseline_br_gbps)?)
    } else {
        0.0
    };
    let n_packets = packets.len();
    let mut engine = Engine {
        cfg,
        kind,
        arb_ns: cfg.arbitration_ns(),
        epoch_ns: cfg.epoch_ns(),
        abm_full_mw,
        packets,
        events: BinaryHeap::new(),
        seq: 0,
        gi_queue: vec![VecDeque::new(); cfg.n_gis as usize],
        gi_busy: vec![false; cfg.n_gis as usize],
        wgs: vec![Waveguide::default(); cfg.n_waveguides as usize],
        bins: PowerBins { period: cfg.power_sample_period_ns, energy: Vec::new() },
        records: Vec::with_capacity(if cfg.keep_records { n_packets } else { 0 }),
        delivered: 0,
        delivered_bits: 0,
        latency_sum: 0.0,
        last_eject: 0.0,
        opa_energy: 0.0,
        abm_switch_energy: 0.0,
        ser_by_br: Vec::new(),
        q_tuned_mr_ns: 0.0,
    };
    // Injections are fed lazily in time order alongside the event heap.
    let cutoff = cfg.cutoff_ns.unwrap_or(f64::INFINITY);
    let mut next_inject = 0usize;
    loop {
        let inject_at = engine.packets.get(next_inject).map(|p| p.req.inject_time_ns);
        let event_at = engine.events.peek().map(|e| e.time);
        let now = match (inject_at, event_at) {
            (None, None) => break,
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
        };
        if now > cutoff {
            break;
        }
        // Injections at a given instant are handled before other events at
        // that instant.
        if inject_at == Some(now) {
            let gi = engine.packets[next_inject].src_gi;
            engine.gi_queue[gi].push_back(next_inject);
            next_inject += 1;
            engine.start_head(gi, now);
            continue;
        }
        let ev = engine.events.pop().expect("peeked");
        match ev.kind {
            EventKind::GiFree(gi) => {
                engine.gi_busy[gi] = false;
                engine.start_head(gi, ev.time);
            }
            EventKind::Request { packet } => engine.request(packet, ev.time),
            EventKind::Release(w) => engine.release(w, ev.time),
        }
    }

    let last_inject = engine.packets.last().map_or(0.0, |p| p.req.inject_time_ns);
    let duration_ns = if cfg.cutoff_ns.is_some() { cutoff } else { engine.last_eject.max(last_inject) };
    let n_wg = f64::from(cfg.n_waveguides);
    let optical_energy = match kind {
        PolicyKind::Proteus | PolicyKind::StaticBaseline => {
            let per_wg = match policy {
                Policy::Proteus(r) => r.design.p_laser_dbm,
                _ => models.p_max_dbm,
            };
            let mw = n_wg * dbm_to_mw(per_wg);
            engine.bins.add(0.0, duration_ns, mw);
            mw * duration_ns
        }
        PolicyKind::Opa => engine.opa_energy,
        PolicyKind::Abm => {
            // Each epoch lights the share of wavelengths its demand needs.
            let epoch_ns = engine.epoch_ns;
            let capacity_bits = f64::from(cfg.n_lambda) * cfg.baseline_br_gbps * epoch_ns;
            let full = engine.abm_full_mw;
            let mut total = engine.abm_switch_energy;
            let mut spans = Vec::new();
            for wg in &engine.wgs {
                for (e, demand) in wg.epoch_demand_bits.iter().enumerate() {
                    let t0 = e as f64 * epoch_ns;
                    let t1 = (t0 + epoch_ns).min(duration_ns);
                    let mw = full * (demand / capacity_bits).min(1.0);
                    if t1 > t0 && mw > 0.0 {
                        spans.push((t0, t1, mw));
                        total += mw * (t1 - t0);
                    }
                }
            }
            for (t0, t1, mw) in spans {
                engine.bins.add(t0, t1, mw);
            }
            total
        }
    };
    let mut ser_by_br = std::mem::take(&mut engine.ser_by_br);
    ser_by_br.sort_by(|a, b| a.0.total_cmp(&b.0));
    let delivered = engine.delivered;
    Ok(SimReport {
        policy: kind,
        traffic_fingerprint: hasher.finish(),
        totals: SimTotals {
            injected,
            intra_cluster,
            delivered,
            in_flight: n_packets as u64 - delivered,
            delivered_bits: engine.delivered_bits,
            duration_ns,
            avg_latency_ns: (delivered > 0).then(|| engine.latency_sum / delivered as f64),
            throughput_bits_per_ns: if duration_ns > 0.0 { engine.delivered_bits as f64 / duration_ns } else { 0.0 },
        },
        activity: ActivityTotals {
            optical_energy_mw_ns: optical_energy,
            serialization_ns_by_br: ser_by_br,
            q_tuned_mr_ns: engine.q_tuned_mr_ns,
            n_waveguides: cfg.n_waveguides,
        },
        opa_overhead_w: if kind == PolicyKind::Opa { cfg.opa_overhead_w } else { 0.0 },
        power_series_mw: engine.bins.series(duration_ns),
        power_sample_period_ns: cfg.power_sample_period_ns,
        records: engine.records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetViolation {
    pub packet_id: u64,
    pub margin_db: f64,
    pub p_laser_dbm: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetAudit {
    pub checked: u64,
    pub max_p_laser_dbm: f64,
    pub min_margin_db: f64,
    pub violations: Vec<BudgetViolation>,
}

/// Re-checks the laser budget of every packet record.
pub fn budget_audit(records: &[PacketRecord], models: &LinkModels, link_template: &LinkConfig) -> BudgetAudit {
    let mut cache = PenaltyCache::new(*link_template, models);
    let mut audit =
        BudgetAudit { checked: 0, max_p_laser_dbm: f64::NEG_INFINITY, min_margin_db: f64::INFINITY, violations: Vec::new() };
    // Rounding slack when the power was set to the exact requirement.
    const EPS: f64 = 1e-9;
    for r in records {
        audit.checked += 1;
        audit.max_p_laser_dbm = audit.max_p_laser_dbm.max(r.p_laser_sample_dbm);
        match cache.margin_db(r.p_laser_sample_dbm, r.il_db, r.q_used, r.br_used) {
            Ok(e) => {
                audit.min_margin_db = audit.min_margin_db.min(e);
                if e < -EPS {
                    audit.violations.push(BudgetViolation {
                        packet_id: r.id,
                        margin_db: e,
                        p_laser_dbm: r.p_laser_sample_dbm,
                        reason: "negative residual margin".into(),
                    });
                } else if r.p_laser_sample_dbm > models.p_max_dbm + EPS {
                    audit.violations.push(BudgetViolation {
                        packet_id: r.id,
                        margin_db: e,
                        p_laser_dbm: r.p_laser_sample_dbm,
                        reason: "laser power above P_max".into(),
                    });
                }
            }
            Err(err) => audit.violations.push(BudgetViolation {
                packet_id: r.id,
                margin_db: f64::NEG_INFINITY,
                p_laser_dbm: r.p_laser_sample_dbm,
                reason: err.to_string(),
            }),
        }
    }
    audit
}
