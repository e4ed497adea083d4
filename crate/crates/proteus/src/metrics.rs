//! Electrical power, energy-per-bit and multi-policy comparison tables
//! computed from simulation reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{PolicyKind, SimReport};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("wall-plug efficiency must be in (0, 1], got {0}")]
    Efficiency(f64),
    #[error("invalid overhead model: {0}")]
    Model(String),
    #[error("EPB undefined: {policy} delivered no bits")]
    ZeroThroughput { policy: &'static str },
    #[error("reports come from different traffic ({a} vs {b})")]
    FingerprintMismatch { a: String, b: String },
    #[error("nothing to compare")]
    Empty,
}

/// Conversion from optical power at the waveguides to wall-plug power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaserModel {
    pub wall_plug_efficiency: f64,
    /// Fiber-to-chip coupler loss the laser has to make up for.
    pub coupler_loss_db: f64,
    /// Loss per 1:2 stage of the splitter tree feeding the waveguides.
    #[serde(default)]
    pub splitter_stage_loss_db: f64,
}

impl Default for LaserModel {
    fn default() -> Self {
        LaserModel { wall_plug_efficiency: 0.10, coupler_loss_db: 2.0, splitter_stage_loss_db: 0.0 }
    }
}

impl LaserModel {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.wall_plug_efficiency > 0.0 && self.wall_plug_efficiency <= 1.0) {
            return Err(MetricsError::Efficiency(self.wall_plug_efficiency));
        }
        if !(self.coupler_loss_db >= 0.0 && self.splitter_stage_loss_db >= 0.0) {
            return Err(MetricsError::Model("upstream losses must be non-negative".into()));
        }
        Ok(())
    }

    /// Total upstream correction in dB for a chip with `n_waveguides`.
    pub fn upstream_loss_db(&self, n_waveguides: u32) -> f64 {
        let stages = if n_waveguides > 1 { f64::from(n_waveguides).log2().ceil() } else { 0.0 };
        self.coupler_loss_db + stages * self.splitter_stage_loss_db
    }

    /// Electrical watts needed to put `optical_mw` into the waveguides.
    pub fn electrical_w(&self, optical_mw: f64, n_waveguides: u32) -> f64 {
        optical_mw * 10f64.powf(self.upstream_loss_db(n_waveguides) / 10.0) / self.wall_plug_efficiency / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverheadModel {
    /// Serializer power in mW at each bitrate (Gb/s). The deserializer draws
    /// the same.
    pub serdes_mw_by_br: Vec<(f64, f64)>,
    pub clock_gen_mw_per_rate: f64,
    pub htree_mw_per_rate: f64,
    /// Number of provisioned upscaled rates, each with its own clock tree.
    pub n_rates: u32,
    pub q_tuning_uw_per_mr: f64,
    pub n_mrs: u32,
    pub thermal_uw_per_nm: f64,
    pub mean_tuning_distance_nm: f64,
}

impl Default for OverheadModel {
    fn default() -> Self {
        OverheadModel {
            serdes_mw_by_br: vec![(10.0, 1.4), (15.0, 2.4), (20.0, 3.3), (25.0, 4.2)],
            clock_gen_mw_per_rate: 0.5,
            htree_mw_per_rate: 0.504,
            n_rates: 4,
            q_tuning_uw_per_mr: 6.1,
            n_mrs: 6457,
            thermal_uw_per_nm: 800.0,
            mean_tuning_distance_nm: 0.5,
        }
    }
}

impl OverheadModel {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let scalars = [
            self.clock_gen_mw_per_rate,
            self.htree_mw_per_rate,
            self.q_tuning_uw_per_mr,
            self.thermal_uw_per_nm,
            self.mean_tuning_distance_nm,
        ];
        if scalars.iter().any(|v| !(*v >= 0.0)) || self.serdes_mw_by_br.iter().any(|(br, mw)| !(*br > 0.0 && *mw >= 0.0)) {
            return Err(MetricsError::Model("all overhead figures must be non-negative".into()));
        }
        Ok(())
    }

    /// Serializer power at a bitrate. Rates between table entries take the
    /// next higher entry.
    pub fn serdes_mw(&self, br_gbps: f64) -> Result<f64, MetricsError> {
        let mut table = self.serdes_mw_by_br.clone();
        table.sort_by(|a, b| a.0.total_cmp(&b.0));
        table
            .iter()
            .find(|(br, _)| *br >= br_gbps - 1e-9)
            .map(|(_, mw)| *mw)
            .ok_or_else(|| MetricsError::Model(format!("no serdes figure for {br_gbps} Gb/s")))
    }

    /// Power with every MR at its maximum Q-tuning draw, in mW.
    pub fn q_tuning_max_mw(&self) -> f64 {
        f64::from(self.n_mrs) * self.q_tuning_uw_per_mr / 1000.0
    }

    /// Clock generators and distribution trees, charged continuously.
    pub fn clocking_mw(&self) -> f64 {
        f64::from(self.n_rates) * (self.clock_gen_mw_per_rate + self.htree_mw_per_rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerBreakdown {
    pub electrical_laser_w: f64,
    pub thermal_tuning_w: f64,
    pub overhead_w: f64,
    pub total_w: f64,
}

impl PowerBreakdown {
    pub fn new(electrical_laser_w: f64, thermal_tuning_w: f64, overhead_w: f64) -> Self {
        PowerBreakdown {
            electrical_laser_w,
            thermal_tuning_w,
            overhead_w,
            total_w: electrical_laser_w + thermal_tuning_w + overhead_w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpbBreakdown {
    pub laser_epb_pj_per_bit: f64,
    pub thermal_epb_pj_per_bit: f64,
    pub overhead_epb_pj_per_bit: f64,
    pub aggregate_epb_pj_per_bit: f64,
}

/// Time-averaged wall-plug laser power of a run, W.
pub fn electrical_laser_power(report: &SimReport, laser: &LaserModel) -> Result<f64, MetricsError> {
    laser.validate()?;
    Ok(laser.electrical_w(report.avg_optical_mw(), report.activity.n_waveguides))
}

pub fn thermal_tuning_power(model: &OverheadModel) -> f64 {
    f64::from(model.n_mrs) * model.thermal_uw_per_nm * model.mean_tuning_distance_nm * 1e-6
}

/// Time-averaged adaptation overhead, W.
pub fn overhead_power(report: &SimReport, model: &OverheadModel) -> Result<f64, MetricsError> {
    model.validate()?;
    match report.policy {
        PolicyKind::Proteus => {
            let duration = report.totals.duration_ns;
            let mut energy_mw_ns = 0.0;
            for &(br, ns) in &report.activity.serialization_ns_by_br {
                energy_mw_ns += 2.0 * model.serdes_mw(br)? * ns;
            }
            energy_mw_ns += model.q_tuning_uw_per_mr / 1000.0 * report.activity.q_tuned_mr_ns;
            let avg_mw = if duration > 0.0 { energy_mw_ns / duration } else { 0.0 };
            Ok((avg_mw + model.clocking_mw()) / 1000.0)
        }
        PolicyKind::Opa => Ok(report.opa_overhead_w),
        PolicyKind::Abm | PolicyKind::StaticBaseline => Ok(0.0),
    }
}

pub fn power_breakdown(report: &SimReport, laser: &LaserModel, model: &OverheadModel) -> Result<PowerBreakdown, MetricsError> {
    Ok(PowerBreakdown::new(
        electrical_laser_power(report, laser)?,
        thermal_tuning_power(model),
        overhead_power(report, model)?,
    ))
}

pub fn epb(report: &SimReport, power: &PowerBreakdown) -> Result<EpbBreakdown, MetricsError> {
    let thr = report.totals.throughput_bits_per_ns;
    if !(thr > 0.0) {
        return Err(MetricsError::ZeroThroughput { policy: report.policy.name() });
    }
    // W / (bit/ns) = nJ/bit.
    let pj = |w: f64| w / thr * 1000.0;
    Ok(EpbBreakdown {
        laser_epb_pj_per_bit: pj(power.electrical_laser_w),
        thermal_epb_pj_per_bit: pj(power.thermal_tuning_w),
        overhead_epb_pj_per_bit: pj(power.overhead_w),
        aggregate_epb_pj_per_bit: pj(power.total_w),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: PolicyKind,
    pub total_w: f64,
    pub laser_w: f64,
    pub thermal_w: f64,
    pub overhead_w: f64,
    pub avg_latency_ns: Option<f64>,
    pub norm_latency: Option<f64>,
    pub aggregate_epb_pj: Option<f64>,
    pub norm_epb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub traffic_fingerprint: String,
    /// Policy the normalized columns are relative to.
    pub baseline: PolicyKind,
    pub rows: Vec<ComparisonRow>,
}

pub const COMPARISON_HEADER: &str =
    "policy,total_w,laser_w,thermal_w,overhead_w,avg_latency_ns,norm_latency,aggregate_epb_pj,norm_epb";

impl Comparison {
    pub fn row(&self, policy: PolicyKind) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = format!("{COMPARISON_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.policy.name(),
                r.total_w,
                r.laser_w,
                r.thermal_w,
                r.overhead_w,
                opt(r.avg_latency_ns),
                opt(r.norm_latency),
                opt(r.aggregate_epb_pj),
                opt(r.norm_epb)
            );
        }
        out
    }
}

/// Tabulates reports of one workload. Normalized columns are relative to
/// ABM when it is present, otherwise to the first report.
pub fn compare(reports: &[SimReport], laser: &LaserModel, model: &OverheadModel) -> Result<Comparison, MetricsError> {
    let first = reports.first().ok_or(MetricsError::Empty)?;
    for r in &reports[1..] {
        if r.traffic_fingerprint != first.traffic_fingerprint {
            return Err(MetricsError::FingerprintMismatch {
                a: first.traffic_fingerprint.clone(),
                b: r.traffic_fingerprint.clone(),
            });
        }
    }
    let mut rows = Vec::with_capacity(reports.len());
    for r in reports {
        let power = power_breakdown(r, laser, model)?;
        let epb = epb(r, &power).ok().map(|e| e.aggregate_epb_pj_per_bit);
        rows.push(ComparisonRow {
            policy: r.policy,
            total_w: power.total_w,
            laser_w: power.electrical_laser_w,
            thermal_w: power.thermal_tuning_w,
            overhead_w: power.overhead_w,
            avg_latency_ns: r.totals.avg_latency_ns,
            norm_latency: None,
            aggregate_epb_pj: epb,
            norm_epb: None,
        });
    }
    let base = rows.iter().position(|r| r.policy == PolicyKind::Abm).unwrap_or(0);
    let (base_lat, base_epb) = (rows[base].avg_latency_ns, rows[base].aggregate_epb_pj);
    let ratio = |v: Option<f64>, b: Option<f64>| match (v, b) {
        (Some(v), Some(b)) if b > 0.0 => Some(v / b),
        _ => None,
    };
    for row in &mut rows {
        row.norm_latency = ratio(row.avg_latency_ns, base_lat);
        row.norm_epb = ratio(row.aggregate_epb_pj, base_epb);
    }
    Ok(Comparison { traffic_fingerprint: first.traffic_fingerprint.clone(), baseline: rows[base].policy, rows })
}
