//! Photonic link physics: crosstalk, extinction-ratio penalty, detector
//! sensitivity and the laser power budget.
//!
//! Every function here is pure. Powers are in dBm, losses and penalties in dB.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("nonviable link: {0}")]
    Nonviable(String),
    #[error("invalid link configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate modulation: extinction ratio {0} dB must be positive")]
    DegenerateModulation(f64),
}

impl LinkError {
    /// Both variants mean the configuration cannot carry traffic and should be
    /// skipped by a search.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, LinkError::Nonviable(_) | LinkError::InvalidConfig(_))
    }
}

/// Signalling configuration of one DWDM waveguide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub n_lambda: u32,
    pub bitrate_gbps: f64,
    pub q_factor: f64,
    pub spacing_nm: f64,
    #[serde(default = "default_fsr")]
    pub fsr_nm: f64,
    #[serde(default = "default_wavelength")]
    pub center_wavelength_nm: f64,
}

fn default_fsr() -> f64 {
    20.0
}

fn default_wavelength() -> f64 {
    1550.0
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            n_lambda: 55,
            bitrate_gbps: 10.0,
            q_factor: 9750.0,
            spacing_nm: 0.37,
            fsr_nm: default_fsr(),
            center_wavelength_nm: default_wavelength(),
        }
    }
}

impl LinkConfig {
    pub fn with_q_br(mut self, q_factor: f64, bitrate_gbps: f64) -> Self {
        self.q_factor = q_factor;
        self.bitrate_gbps = bitrate_gbps;
        self
    }

    pub fn with_n_lambda(mut self, n_lambda: u32) -> Self {
        self.n_lambda = n_lambda;
        self
    }

    /// Spectral span occupied by the comb, first to last carrier.
    pub fn comb_span_nm(&self) -> f64 {
        f64::from(self.n_lambda.saturating_sub(1)) * self.spacing_nm
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        let bad = |msg: String| Err(LinkError::InvalidConfig(msg));
        if self.n_lambda < 1 {
            return bad("n_lambda must be at least 1".into());
        }
        if !(self.bitrate_gbps > 0.0 && self.bitrate_gbps.is_finite()) {
            return bad(format!("bitrate_gbps must be positive, got {}", self.bitrate_gbps));
        }
        if !(self.q_factor > 0.0 && self.q_factor.is_finite()) {
            return bad(format!("q_factor must be positive, got {}", self.q_factor));
        }
        if !(self.spacing_nm > 0.3) {
            return bad(format!("spacing_nm must exceed 0.3 nm, got {}", self.spacing_nm));
        }
        if !(self.center_wavelength_nm > 0.0) {
            return bad("center_wavelength_nm must be positive".into());
        }
        // 1e-9 slack so that an exact fit is not rejected by rounding.
        if self.comb_span_nm() > self.fsr_nm + 1e-9 {
            return bad(format!(
                "{} carriers at {} nm span {:.3} nm, beyond the {} nm FSR",
                self.n_lambda,
                self.spacing_nm,
                self.comb_span_nm(),
                self.fsr_nm
            ));
        }
        Ok(())
    }

    /// Carrier frequency in THz.
    pub fn center_frequency_thz(&self) -> f64 {
        SPEED_OF_LIGHT / self.center_wavelength_nm / 1e3
    }

    /// Frequency offset in GHz of a carrier `channels` slots away.
    pub fn detuning_ghz(&self, channels: u32) -> f64 {
        nm_to_ghz(f64::from(channels) * self.spacing_nm, self.center_wavelength_nm)
    }

    /// The channel with the most aggressors on both sides.
    pub fn worst_channel(&self) -> u32 {
        (self.n_lambda - 1) / 2
    }
}

/// Converts a wavelength offset to a frequency offset, f = c·Δλ/λ².
pub fn nm_to_ghz(delta_nm: f64, wavelength_nm: f64) -> f64 {
    SPEED_OF_LIGHT * delta_nm / (wavelength_nm * wavelength_nm)
}

/// Fraction of an aggressor's power leaking through a filter ring.
///
/// Inputs are the loaded Q, the aggressor bitrate in Gb/s, its detuning from
/// the ring resonance in GHz and the resonance frequency in THz. With
/// `v = f0 / (2 Q r_b)` and `β = 2 Q f_Δ / f0`:
///
/// `γ = 1/(1+β²) − Re[(1 − exp(−2πv(1−jβ))) / (1−jβ)²] / (2πv)`
pub fn crosstalk_ratio(q_factor: f64, bitrate_gbps: f64, detuning_ghz: f64, center_frequency_thz: f64) -> f64 {
    let f0 = center_frequency_thz * 1e12;
    let rb = bitrate_gbps * 1e9;
    let fd = detuning_ghz * 1e9;
    let v = f0 / (2.0 * q_factor * rb);
    let beta = 2.0 * q_factor * fd / f0;
    let lorentz = 1.0 / (1.0 + beta * beta);
    let x = 2.0 * PI * v;
    if !x.is_finite() || !beta.is_finite() {
        // v → ∞ leaves the Lorentzian; β → ∞ sends both terms to zero.
        return if beta.is_finite() { lorentz.clamp(0.0, 1.0) } else { 0.0 };
    }
    let z = Complex64::new(1.0, -beta);
    // exp(−x·z) has modulus e^{−x} ≤ 1, so it cannot overflow.
    let num = Complex64::new(1.0, 0.0) - (-x * z).exp();
    let ringing = (num / (z * z)).re / x;
    let gamma = lorentz - ringing;
    if gamma.is_nan() {
        return lorentz.clamp(0.0, 1.0);
    }
    gamma.clamp(0.0, 1.0)
}

/// How aggressor leakage fields combine at the photodetector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Worst-case in-phase field sum, Σ√γ_i.
    Coherent,
    /// Root of the summed powers, √Σγ_i.
    Rms,
}

/// Parameters of the filter-crosstalk penalty.
///
/// The eye opening left for the victim is
/// `(1 − κ·A) · γ_0 · (1 − Q/Q_int)²`, where `A` is the aggregated aggressor
/// field, `γ_0` the victim's own in-band transmission (the crosstalk ratio at
/// zero detuning) and the last factor the drop-port loss of a ring with
/// intrinsic quality factor `Q_int`. The penalty is `−10·log10` of that
/// opening.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterModel {
    pub aggregation: Aggregation,
    pub coupling: f64,
    pub victim_truncation: bool,
    pub intrinsic_q: Option<f64>,
}

impl Default for FilterModel {
    fn default() -> Self {
        FilterModel {
            aggregation: Aggregation::Rms,
            coupling: 1.36,
            victim_truncation: true,
            intrinsic_q: Some(31_000.0),
        }
    }
}

impl FilterModel {
    /// Closed eye from the coherent sum only: `1 − 2·Σ√γ_i`.
    pub fn textbook() -> Self {
        FilterModel {
            aggregation: Aggregation::Coherent,
            coupling: 2.0,
            victim_truncation: false,
            intrinsic_q: None,
        }
    }
}

/// Piecewise-linear extinction ratio as a function of Q.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErModel {
    pub anchor_points: Vec<(f64, f64)>,
}

impl Default for ErModel {
    fn default() -> Self {
        ErModel { anchor_points: vec![(6000.0, 17.5)] }
    }
}

impl ErModel {
    pub fn constant(er_db: f64) -> Self {
        ErModel { anchor_points: vec![(6000.0, er_db)] }
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        if self.anchor_points.is_empty() {
            return Err(LinkError::InvalidConfig("ER model needs at least one anchor".into()));
        }
        for w in self.anchor_points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(LinkError::InvalidConfig("ER anchors must be strictly increasing in Q".into()));
            }
        }
        if let Some(&(q, er)) = self.anchor_points.iter().find(|(_, er)| !(*er > 0.0)) {
            return Err(LinkError::InvalidConfig(format!("ER anchor at Q={q} is {er} dB, must be positive")));
        }
        Ok(())
    }

    /// Extinction ratio in dB at the given Q, clamped outside the anchor range.
    pub fn er_db(&self, q_factor: f64) -> f64 {
        let pts = &self.anchor_points;
        let first = pts[0];
        let last = pts[pts.len() - 1];
        if q_factor <= first.0 {
            return first.1;
        }
        if q_factor >= last.0 {
            return last.1;
        }
        let i = pts.partition_point(|p| p.0 <= q_factor);
        let (q0, e0) = pts[i - 1];
        let (q1, e1) = pts[i];
        e0 + (e1 - e0) * (q_factor - q0) / (q1 - q0)
    }
}

/// Photodetector sensitivity model, S = s_ref + 10·k·log10(BR / br_ref).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityModel {
    pub s_ref_dbm: f64,
    pub br_ref_gbps: f64,
    pub scaling_exponent: f64,
}

impl Default for SensitivityModel {
    fn default() -> Self {
        SensitivityModel { s_ref_dbm: -20.0, br_ref_gbps: 10.0, scaling_exponent: 1.0 }
    }
}

pub fn sensitivity(bitrate_gbps: f64, model: &SensitivityModel) -> f64 {
    model.s_ref_dbm + 10.0 * model.scaling_exponent * (bitrate_gbps / model.br_ref_gbps).log10()
}

/// Everything besides the link configuration that enters the budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkModels {
    #[serde(default)]
    pub filter: FilterModel,
    #[serde(default)]
    pub er: ErModel,
    #[serde(default)]
    pub sensitivity: SensitivityModel,
    #[serde(default = "default_mod_xtalk")]
    pub mod_xtalk_db: f64,
    /// When false every penalty term is zero.
    #[serde(default = "default_true")]
    pub penalties_enabled: bool,
    #[serde(default = "default_p_max")]
    pub p_max_dbm: f64,
}

fn default_mod_xtalk() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

fn default_p_max() -> f64 {
    20.0
}

impl Default for LinkModels {
    fn default() -> Self {
        LinkModels {
            filter: FilterModel::default(),
            er: ErModel::default(),
            sensitivity: SensitivityModel::default(),
            mod_xtalk_db: default_mod_xtalk(),
            penalties_enabled: true,
            p_max_dbm: default_p_max(),
        }
    }
}

impl LinkModels {
    pub fn penalties_off() -> Self {
        LinkModels { penalties_enabled: false, ..LinkModels::default() }
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        self.er.validate()?;
        if !(self.filter.coupling >= 0.0) {
            return Err(LinkError::InvalidConfig("filter coupling must be non-negative".into()));
        }
        if let Some(qi) = self.filter.intrinsic_q {
            if !(qi > 0.0) {
                return Err(LinkError::InvalidConfig("intrinsic_q must be positive".into()));
            }
        }
        if !(self.sensitivity.br_ref_gbps > 0.0) {
            return Err(LinkError::InvalidConfig("br_ref_gbps must be positive".into()));
        }
        if !(self.mod_xtalk_db >= 0.0) {
            return Err(LinkError::InvalidConfig("mod_xtalk_db must be non-negative".into()));
        }
        Ok(())
    }
}

/// Filter crosstalk penalty in dB seen by `channel_index`.
pub fn filter_crosstalk_penalty(cfg: &LinkConfig, filter: &FilterModel, channel_index: u32) -> Result<f64, LinkError> {
    cfg.validate()?;
    if channel_index >= cfg.n_lambda {
        return Err(LinkError::InvalidConfig(format!(
            "channel {channel_index} out of range for {} carriers",
            cfg.n_lambda
        )));
    }
    let f0 = cfg.center_frequency_thz();
    let mut sum = 0.0;
    for i in 0..cfg.n_lambda {
        if i == channel_index {
            continue;
        }
        let g = crosstalk_ratio(cfg.q_factor, cfg.bitrate_gbps, cfg.detuning_ghz(i.abs_diff(channel_index)), f0);
        sum += match filter.aggregation {
            Aggregation::Coherent => g.sqrt(),
            Aggregation::Rms => g,
        };
    }
    let field = match filter.aggregation {
        Aggregation::Coherent => sum,
        Aggregation::Rms => sum.sqrt(),
    };
    let mut opening = 1.0 - filter.coupling * field;
    if opening <= 0.0 {
        return Err(LinkError::Nonviable(format!(
            "aggressor crosstalk closes the eye (Q={}, BR={} Gb/s, {} carriers)",
            cfg.q_factor, cfg.bitrate_gbps, cfg.n_lambda
        )));
    }
    if filter.victim_truncation {
        opening *= crosstalk_ratio(cfg.q_factor, cfg.bitrate_gbps, 0.0, f0);
    }
    if let Some(qi) = filter.intrinsic_q {
        if cfg.q_factor >= qi {
            return Err(LinkError::Nonviable(format!(
                "loaded Q {} is not below the intrinsic Q {qi}",
                cfg.q_factor
            )));
        }
        let drop = 1.0 - cfg.q_factor / qi;
        opening *= drop * drop;
    }
    if !(opening > 0.0) {
        return Err(LinkError::Nonviable("zero transmitted signal".into()));
    }
    Ok(-10.0 * opening.log10())
}

/// Penalty from a finite extinction ratio, −10·log10((r−1)/(r+1)).
pub fn er_penalty(extinction_ratio_db: f64) -> Result<f64, LinkError> {
    if !(extinction_ratio_db > 0.0) {
        return Err(LinkError::DegenerateModulation(extinction_ratio_db));
    }
    let r = 10f64.powf(extinction_ratio_db / 10.0);
    Ok(-10.0 * ((r - 1.0) / (r + 1.0)).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyBreakdown {
    pub er_penalty_db: f64,
    pub mod_xtalk_db: f64,
    pub fil_xtalk_db: f64,
    pub total_db: f64,
}

impl PenaltyBreakdown {
    pub const ZERO: PenaltyBreakdown =
        PenaltyBreakdown { er_penalty_db: 0.0, mod_xtalk_db: 0.0, fil_xtalk_db: 0.0, total_db: 0.0 };
}

pub fn total_power_penalty(cfg: &LinkConfig, models: &LinkModels, channel_index: u32) -> Result<PenaltyBreakdown, LinkError> {
    if !models.penalties_enabled {
        cfg.validate()?;
        return Ok(PenaltyBreakdown::ZERO);
    }
    let er_penalty_db = er_penalty(models.er.er_db(cfg.q_factor))?;
    let fil_xtalk_db = filter_crosstalk_penalty(cfg, &models.filter, channel_index)?;
    let mod_xtalk_db = models.mod_xtalk_db;
    Ok(PenaltyBreakdown {
        er_penalty_db,
        mod_xtalk_db,
        fil_xtalk_db,
        total_db: er_penalty_db + mod_xtalk_db + fil_xtalk_db,
    })
}

/// Penalty of the worst (centre) channel.
pub fn worst_channel_penalty(cfg: &LinkConfig, models: &LinkModels) -> Result<PenaltyBreakdown, LinkError> {
    total_power_penalty(cfg, models, cfg.worst_channel())
}

/// A fully evaluated laser power budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerBudget {
    pub p_laser_dbm: f64,
    pub p_max_dbm: f64,
    pub il_db: f64,
    pub penalty: PenaltyBreakdown,
    pub sensitivity_dbm: f64,
    pub margin_db: f64,
}

impl PowerBudget {
    pub fn is_feasible(&self) -> bool {
        self.margin_db >= 0.0 && self.p_laser_dbm <= self.p_max_dbm
    }
}

/// Laser power needed for the worst channel to reach the detector, before
/// the P_max cap is applied.
pub fn required_p_laser(il_db: f64, cfg: &LinkConfig, models: &LinkModels) -> Result<f64, LinkError> {
    let pp = worst_channel_penalty(cfg, models)?;
    Ok(il_db + pp.total_db + 10.0 * f64::from(cfg.n_lambda).log10() + sensitivity(cfg.bitrate_gbps, &models.sensitivity))
}

pub fn power_budget(p_laser_dbm: f64, il_db: f64, cfg: &LinkConfig, models: &LinkModels) -> Result<PowerBudget, LinkError> {
    let penalty = worst_channel_penalty(cfg, models)?;
    let sensitivity_dbm = sensitivity(cfg.bitrate_gbps, &models.sensitivity);
    let margin_db = p_laser_dbm - il_db - penalty.total_db - 10.0 * f64::from(cfg.n_lambda).log10() - sensitivity_dbm;
    Ok(PowerBudget { p_laser_dbm, p_max_dbm: models.p_max_dbm, il_db, penalty, sensitivity_dbm, margin_db })
}

/// Residual margin e = P_laser − IL − PP − 10·log10(Nλ) − S for the worst channel.
pub fn residual_margin(p_laser_dbm: f64, il_db: f64, cfg: &LinkConfig, models: &LinkModels) -> Result<f64, LinkError> {
    power_budget(p_laser_dbm, il_db, cfg, models).map(|b| b.margin_db)
}

/// Result of scanning the carrier count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NlambdaScan {
    pub n_lambda: u32,
    pub infeasible_link: bool,
}

/// Largest Nλ whose budget closes, scanning upward from 1 and stopping at the
/// first infeasible count (penalty growth with aggressor count makes a binary
/// search unsafe).
pub fn max_supported_nlambda(p_laser_dbm: f64, il_db: f64, template: &LinkConfig, models: &LinkModels) -> NlambdaScan {
    let mut last = 0;
    if p_laser_dbm <= models.p_max_dbm {
        let mut n = 1u32;
        loop {
            let cfg = template.with_n_lambda(n);
            match residual_margin(p_laser_dbm, il_db, &cfg, models) {
                Ok(e) if e >= 0.0 => last = n,
                _ => break,
            }
            n += 1;
        }
    }
    NlambdaScan { n_lambda: last, infeasible_link: last == 0 }
}
