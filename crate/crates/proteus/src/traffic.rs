//! Packet injection streams: seeded synthetic patterns and CSV traces.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("invalid traffic spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: line {line}: {msg}")]
    Trace { path: String, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlitRequest {
    pub inject_time_ns: f64,
    pub src_core: u32,
    pub dst_core: u32,
    pub size_bits: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficKind {
    UniformRandom,
    Hotspot,
    Transpose,
    Trace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSpec {
    pub kind: TrafficKind,
    /// Packets per core per network cycle.
    pub injection_rate: f64,
    pub duration_cycles: u64,
    pub seed: u64,
    #[serde(default = "default_hotspot_fraction")]
    pub hotspot_fraction: f64,
    #[serde(default)]
    pub hotspot_cluster: u32,
    #[serde(default = "default_packet_size")]
    pub packet_size_bits: u32,
    #[serde(default)]
    pub trace_path: Option<PathBuf>,
}

fn default_hotspot_fraction() -> f64 {
    0.2
}

fn default_packet_size() -> u32 {
    512
}

impl Default for TrafficSpec {
    fn default() -> Self {
        TrafficSpec {
            kind: TrafficKind::UniformRandom,
            injection_rate: 0.05,
            duration_cycles: 2000,
            seed: 1,
            hotspot_fraction: default_hotspot_fraction(),
            hotspot_cluster: 0,
            packet_size_bits: default_packet_size(),
            trace_path: None,
        }
    }
}

/// Core and cluster counts plus the clock that turns cycles into time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemDims {
    pub n_cores: u32,
    pub cores_per_cluster: u32,
    pub clock_ghz: f64,
}

impl SystemDims {
    pub fn n_clusters(&self) -> u32 {
        self.n_cores / self.cores_per_cluster
    }

    pub fn cluster_of(&self, core: u32) -> u32 {
        core / self.cores_per_cluster
    }
}

impl TrafficSpec {
    pub fn validate(&self, dims: &SystemDims) -> Result<(), TrafficError> {
        let bad = |m: String| Err(TrafficError::InvalidSpec(m));
        if self.kind != TrafficKind::Trace && !(self.injection_rate > 0.0 && self.injection_rate <= 1.0) {
            return bad(format!("injection_rate must be in (0, 1], got {}", self.injection_rate));
        }
        if self.packet_size_bits == 0 {
            return bad("packet_size_bits must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.hotspot_fraction) {
            return bad(format!("hotspot_fraction must be in [0, 1], got {}", self.hotspot_fraction));
        }
        if dims.cores_per_cluster == 0 || dims.n_cores == 0 || !dims.n_cores.is_multiple_of(dims.cores_per_cluster) {
            return bad("core count must be a positive multiple of cores_per_cluster".into());
        }
        if self.kind == TrafficKind::UniformRandom && dims.n_clusters() < 2 {
            return bad("uniform_random traffic needs at least two clusters".into());
        }
        if self.kind == TrafficKind::Hotspot && self.hotspot_cluster >= dims.n_clusters() {
            return bad(format!("hotspot_cluster {} out of range", self.hotspot_cluster));
        }
        if self.kind == TrafficKind::Trace && self.trace_path.is_none() {
            return bad("trace traffic needs trace_path".into());
        }
        if !(dims.clock_ghz > 0.0) {
            return bad("clock_ghz must be positive".into());
        }
        Ok(())
    }
}

/// Lazily generated synthetic stream. Each cycle every core injects with
/// probability `injection_rate`; requests within a cycle are ordered by
/// source core.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: TrafficSpec,
    dims: SystemDims,
    rng: ChaCha8Rng,
    cycle: u64,
    core: u32,
}

impl Generator {
    fn pick_other_cluster(&mut self, src: u32) -> u32 {
        let cpc = self.dims.cores_per_cluster;
        let others = self.dims.n_cores - cpc;
        let k = self.rng.gen_range(0..others);
        let base = self.dims.cluster_of(src) * cpc;
        if k < base {
            k
        } else {
            k + cpc
        }
    }

    fn destination(&mut self, src: u32) -> u32 {
        match self.spec.kind {
            TrafficKind::UniformRandom => self.pick_other_cluster(src),
            TrafficKind::Transpose => (src + self.dims.n_cores / 2) % self.dims.n_cores,
            TrafficKind::Hotspot => {
                let hot = self.spec.hotspot_cluster;
                let to_hot = self.rng.gen::<f64>() < self.spec.hotspot_fraction;
                if to_hot && self.dims.cluster_of(src) != hot {
                    hot * self.dims.cores_per_cluster + self.rng.gen_range(0..self.dims.cores_per_cluster)
                } else if self.dims.n_clusters() > 1 {
                    self.pick_other_cluster(src)
                } else {
                    src
                }
            }
            TrafficKind::Trace => unreachable!("trace streams are read, not generated"),
        }
    }
}

impl Iterator for Generator {
    type Item = FlitRequest;

    fn next(&mut self) -> Option<FlitRequest> {
        while self.cycle < self.spec.duration_cycles {
            let src = self.core;
            let cycle = self.cycle;
            self.core += 1;
            if self.core == self.dims.n_cores {
                self.core = 0;
                self.cycle += 1;
            }
            if self.rng.gen::<f64>() < self.spec.injection_rate {
                let dst_core = self.destination(src);
                return Some(FlitRequest {
                    inject_time_ns: cycle as f64 / self.dims.clock_ghz,
                    src_core: src,
                    dst_core,
                    size_bits: self.spec.packet_size_bits,
                });
            }
        }
        None
    }
}

pub fn generate(spec: &TrafficSpec, dims: &SystemDims) -> Result<Generator, TrafficError> {
    spec.validate(dims)?;
    if spec.kind == TrafficKind::Trace {
        return Err(TrafficError::InvalidSpec("use read_trace for trace traffic".into()));
    }
    Ok(Generator { spec: spec.clone(), dims: *dims, rng: ChaCha8Rng::seed_from_u64(spec.seed), cycle: 0, core: 0 })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub requests: Vec<FlitRequest>,
    /// Rows whose endpoints share a cluster; they never reach the photonic network.
    pub skipped_intra_cluster: usize,
}

pub const TRACE_HEADER: &str = "time_ns,src_core,dst_core,size_bits";

pub fn read_trace(path: &Path, dims: &SystemDims) -> Result<Trace, TrafficError> {
    let text = fs::read_to_string(path)?;
    parse_trace(&text, &path.display().to_string(), dims)
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    time_ns: f64,
    src_core: u32,
    dst_core: u32,
    size_bits: u32,
}

pub fn parse_trace(text: &str, name: &str, dims: &SystemDims) -> Result<Trace, TrafficError> {
    let err = |line: usize, msg: String| TrafficError::Trace { path: name.to_string(), line, msg };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != TRACE_HEADER {
        return Err(err(1, format!("header must be `{TRACE_HEADER}`")));
    }
    let mut trace = Trace::default();
    let mut last = f64::NEG_INFINITY;
    for (i, row) in reader.deserialize::<TraceRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| err(line, e.to_string()))?;
        if !row.time_ns.is_finite() || row.time_ns < 0.0 {
            return Err(err(line, format!("bad timestamp {}", row.time_ns)));
        }
        if row.time_ns < last {
            return Err(err(line, format!("timestamp {} precedes {}", row.time_ns, last)));
        }
        last = row.time_ns;
        for core in [row.src_core, row.dst_core] {
            if core >= dims.n_cores {
                return Err(err(line, format!("core {core} out of range for {} cores", dims.n_cores)));
            }
        }
        if row.size_bits == 0 {
            return Err(err(line, "size_bits must be positive".into()));
        }
        if dims.cluster_of(row.src_core) == dims.cluster_of(row.dst_core) {
            trace.skipped_intra_cluster += 1;
            continue;
        }
        trace.requests.push(FlitRequest {
            inject_time_ns: row.time_ns,
            src_core: row.src_core,
            dst_core: row.dst_core,
            size_bits: row.size_bits,
        });
    }
    Ok(trace)
}

pub fn write_trace(requests: &[FlitRequest]) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for r in requests {
        let _ = writeln!(out, "{},{},{},{}", r.inject_time_ns, r.src_core, r.dst_core, r.size_bits);
    }
    out
}
