//! Offline search for the static laser power and the per-loss (Q, BR) rules.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::link::{self, LinkConfig, LinkError, LinkModels};
use crate::lossmap::{self, IlMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    #[error("no viable Q at {br} Gb/s")]
    NoViableQ { br: f64 },
    #[error("link infeasible at worst-case IL {il_db} dB: needs {required_dbm:.2} dBm, cap is {p_max_dbm} dBm")]
    Infeasible { il_db: f64, required_dbm: f64, p_max_dbm: f64 },
    #[error("no feasible (Q, BR) pair at IL {il_db} dB with {p_laser_dbm} dBm")]
    NoFeasibleDuplet { il_db: f64, p_laser_dbm: f64 },
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error(transparent)]
    Link(#[from] LinkError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub q_grid: Vec<f64>,
    pub br_set_gbps: Vec<f64>,
    #[serde(default = "default_packet_size")]
    pub packet_size_bits: u32,
}

fn default_packet_size() -> u32 {
    512
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            q_grid: (0..29).map(|k| 5000.0 + 250.0 * f64::from(k)).collect(),
            br_set_gbps: vec![10.0, 15.0, 20.0, 25.0],
            packet_size_bits: default_packet_size(),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), DesignError> {
        let bad = |m: &str| Err(DesignError::InvalidSpace(m.into()));
        if self.q_grid.is_empty() || self.br_set_gbps.is_empty() {
            return bad("q_grid and br_set_gbps must be non-empty");
        }
        if self.q_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("q_grid must be strictly ascending");
        }
        if self.q_grid.len() > 2 {
            let step = self.q_grid[1] - self.q_grid[0];
            if self.q_grid.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-9) {
                return bad("q_grid step must be uniform");
            }
        }
        if self.br_set_gbps.windows(2).any(|w| !(w[1] > w[0])) || !(self.br_set_gbps[0] > 0.0) {
            return bad("br_set_gbps must be positive and strictly ascending");
        }
        if self.packet_size_bits == 0 {
            return bad("packet_size_bits must be positive");
        }
        Ok(())
    }

    pub fn base_br(&self) -> f64 {
        self.br_set_gbps[0]
    }

    /// Index of `q` in the grid, if present.
    pub fn q_index(&self, q: f64) -> Option<usize> {
        self.q_grid.iter().position(|&g| g == q)
    }

    pub fn br_index(&self, br: f64) -> Option<usize> {
        self.br_set_gbps.iter().position(|&b| b == br)
    }
}

/// Bits each carrier serializes for one packet.
pub fn bits_per_signal(packet_size_bits: u32, n_lambda: u32) -> u32 {
    packet_size_bits.div_ceil(n_lambda)
}

pub fn frame_delay_ns(packet_size_bits: u32, n_lambda: u32, bitrate_gbps: f64) -> f64 {
    f64::from(bits_per_signal(packet_size_bits, n_lambda)) / bitrate_gbps
}

/// Rounds a power up to the next 0.1 dB step.
pub fn round_up_tenth(dbm: f64) -> f64 {
    ((dbm - 1e-9) * 10.0).ceil() / 10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub il_db: f64,
    pub q_factor: f64,
    pub bitrate_gbps: f64,
    pub p_laser_dbm: f64,
    pub margin_db: f64,
    pub frame_delay_ns: f64,
    pub aggregated_datarate_gbps: f64,
    pub power_efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticDesign {
    pub p_laser_dbm: f64,
    pub worst_il_db: f64,
    pub q_at_worst: f64,
    pub br_at_worst: f64,
    pub n_lambda: u32,
    pub per_il_points: Vec<DesignPoint>,
}

impl StaticDesign {
    /// Design point for a loss value, matched at 0.01 dB resolution (rounded up).
    pub fn point_for_il(&self, il_db: f64) -> Option<&DesignPoint> {
        let key = lossmap::quantize_il(il_db);
        self.per_il_points
            .binary_search_by_key(&key, |p| lossmap::quantize_il(p.il_db))
            .ok()
            .map(|i| &self.per_il_points[i])
    }

    pub fn to_sweep_csv(&self) -> String {
        let mut out =
            String::from("il_db,q,br_gbps,p_laser_dbm,margin_db,frame_delay_ns,agg_datarate_gbps,power_eff_mw_per_gbps\n");
        for p in &self.per_il_points {
            let _ = writeln!(
                out,
                "{:.2},{},{},{:.1},{:.6},{:.6},{},{:.6}",
                p.il_db,
                p.q_factor,
                p.bitrate_gbps,
                p.p_laser_dbm,
                p.margin_db,
                p.frame_delay_ns,
                p.aggregated_datarate_gbps,
                p.power_efficiency
            );
        }
        out
    }
}

/// Worst-channel penalty and sensitivity for every (Q, BR) of a search space,
/// so that the margin at any loss is a few additions.
#[derive(Debug, Clone)]
pub struct PenaltyGrid {
    space: SearchSpace,
    template: LinkConfig,
    /// `penalty_db[br_index][q_index]`, `None` when nonviable.
    penalty_db: Vec<Vec<Option<f64>>>,
    sensitivity_dbm: Vec<f64>,
    p_max_dbm: f64,
}

impl PenaltyGrid {
    pub fn new(space: &SearchSpace, template: &LinkConfig, models: &LinkModels) -> Result<Self, DesignError> {
        space.validate()?;
        models.validate()?;
        template.validate()?;
        let mut penalty_db = Vec::with_capacity(space.br_set_gbps.len());
        for &br in &space.br_set_gbps {
            let mut row = Vec::with_capacity(space.q_grid.len());
            for &q in &space.q_grid {
                let cfg = template.with_q_br(q, br);
                row.push(match link::worst_channel_penalty(&cfg, models) {
                    Ok(pp) => Some(pp.total_db),
                    Err(e) if e.is_infeasible() => None,
                    Err(e) => return Err(e.into()),
                });
            }
            penalty_db.push(row);
        }
        let sensitivity_dbm =
            space.br_set_gbps.iter().map(|&br| link::sensitivity(br, &models.sensitivity)).collect();
        Ok(PenaltyGrid { space: space.clone(), template: *template, penalty_db, sensitivity_dbm, p_max_dbm: models.p_max_dbm })
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn penalty(&self, br_index: usize, q_index: usize) -> Option<f64> {
        self.penalty_db[br_index][q_index]
    }

    pub fn margin(&self, p_laser_dbm: f64, il_db: f64, br_index: usize, q_index: usize) -> Option<f64> {
        let pp = self.penalty(br_index, q_index)?;
        Some(p_laser_dbm - il_db - pp - 10.0 * f64::from(self.template.n_lambda).log10() - self.sensitivity_dbm[br_index])
    }

    /// Grid Q with the lowest penalty at the given bitrate; ties go to the larger Q.
    pub fn optimal_q(&self, br_index: usize) -> Option<f64> {
        let mut best: Option<(f64, f64)> = None;
        for (qi, &q) in self.space.q_grid.iter().enumerate() {
            if let Some(pp) = self.penalty(br_index, qi) {
                if best.is_none_or(|(_, b)| pp <= b) {
                    best = Some((q, pp));
                }
            }
        }
        best.map(|b| b.0)
    }

    /// Highest bitrate with any non-negative margin, then the Q with the
    /// smallest such margin at that bitrate (ties go to the higher Q).
    pub fn optimal_duplet(&self, il_db: f64, p_laser_dbm: f64) -> Option<(f64, f64, f64)> {
        if p_laser_dbm > self.p_max_dbm {
            return None;
        }
        for (bi, &br) in self.space.br_set_gbps.iter().enumerate().rev() {
            let mut best: Option<(f64, f64)> = None;
            for (qi, &q) in self.space.q_grid.iter().enumerate() {
                let Some(e) = self.margin(p_laser_dbm, il_db, bi, qi) else { continue };
                if e >= 0.0 && best.is_none_or(|(_, b)| e <= b) {
                    best = Some((q, e));
                }
            }
            if let Some((q, e)) = best {
                return Some((q, br, e));
            }
        }
        None
    }

    pub fn design_point(&self, il_db: f64, p_laser_dbm: f64) -> Result<DesignPoint, DesignError> {
        let (q, br, e) =
            self.optimal_duplet(il_db, p_laser_dbm).ok_or(DesignError::NoFeasibleDuplet { il_db, p_laser_dbm })?;
        let n = self.template.n_lambda;
        let agg = f64::from(n) * br;
        Ok(DesignPoint {
            il_db,
            q_factor: q,
            bitrate_gbps: br,
            p_laser_dbm,
            margin_db: e,
            frame_delay_ns: frame_delay_ns(self.space.packet_size_bits, n, br),
            aggregated_datarate_gbps: agg,
            power_efficiency: 10f64.powf(p_laser_dbm / 10.0) / agg,
        })
    }
}

pub fn optimal_q_for_br(br: f64, space: &SearchSpace, template: &LinkConfig, models: &LinkModels) -> Result<f64, DesignError> {
    let single = SearchSpace { br_set_gbps: vec![br], ..space.clone() };
    PenaltyGrid::new(&single, template, models)?.optimal_q(0).ok_or(DesignError::NoViableQ { br })
}

fn static_from_grid(grid: &PenaltyGrid, worst_il_db: f64, models: &LinkModels) -> Result<f64, DesignError> {
    let q = grid.optimal_q(0).ok_or(DesignError::NoViableQ { br: grid.space.base_br() })?;
    let qi = grid.space.q_index(q).expect("grid value");
    let pp = grid.penalty(0, qi).expect("viable");
    let required = worst_il_db + pp + 10.0 * f64::from(grid.template.n_lambda).log10() + grid.sensitivity_dbm[0];
    let p = round_up_tenth(required);
    if p > models.p_max_dbm {
        return Err(DesignError::Infeasible { il_db: worst_il_db, required_dbm: required, p_max_dbm: models.p_max_dbm });
    }
    Ok(p)
}

/// Fixed provisioning that closes the budget at the worst-case loss with the
/// base bitrate and its best Q, rounded up to 0.1 dB.
pub fn static_p_laser(worst_il_db: f64, space: &SearchSpace, template: &LinkConfig, models: &LinkModels) -> Result<f64, DesignError> {
    let base = SearchSpace { br_set_gbps: vec![space.base_br()], ..space.clone() };
    let grid = PenaltyGrid::new(&base, template, models)?;
    static_from_grid(&grid, worst_il_db, models)
}

pub fn optimal_duplet_for_il(
    il_db: f64,
    p_laser_dbm: f64,
    space: &SearchSpace,
    template: &LinkConfig,
    models: &LinkModels,
) -> Result<(f64, f64, f64), DesignError> {
    PenaltyGrid::new(space, template, models)?
        .optimal_duplet(il_db, p_laser_dbm)
        .ok_or(DesignError::NoFeasibleDuplet { il_db, p_laser_dbm })
}

pub fn build_static_design(
    il_matrix: &IlMatrix,
    space: &SearchSpace,
    template: &LinkConfig,
    models: &LinkModels,
) -> Result<StaticDesign, DesignError> {
    let grid = PenaltyGrid::new(space, template, models)?;
    let worst_il_db = il_matrix.max_entry();
    let worst_key = lossmap::dequantize_il(lossmap::quantize_il(worst_il_db));
    let p_laser_dbm = static_from_grid(&grid, worst_key, models)?;
    let keys: BTreeSet<i64> = il_matrix.pairs().map(|p| lossmap::quantize_il(p.2)).collect();
    let per_il_points = keys
        .into_iter()
        .map(|k| grid.design_point(lossmap::dequantize_il(k), p_laser_dbm))
        .collect::<Result<Vec<_>, _>>()?;
    let worst = per_il_points.last().expect("matrix has off-diagonal entries");
    Ok(StaticDesign {
        p_laser_dbm,
        worst_il_db,
        q_at_worst: worst.q_factor,
        br_at_worst: worst.bitrate_gbps,
        n_lambda: template.n_lambda,
        per_il_points,
    })
}
